//! Boot measurement, device identity, remote attestation, and
//! attestation-bound key agreement.
//!
//! The controller measures its firmware and system software into a hash
//! chain at boot. A client attests it with a fresh nonce; the controller
//! answers with a quote — measurement digest, nonce, and its ephemeral
//! key-exchange public value, all signed under the device key — and both
//! sides derive the session key from the Diffie-Hellman shared secret and
//! the handshake transcript. Key confirmation MACs in both directions make
//! a failed agreement loud instead of silent.
//!
//! Primitives: SHA-256, Ed25519 (deterministic signatures), X25519, and
//! HKDF-SHA256. Per-device identities stand in for a group-signature
//! scheme; the signer is isolated behind [`DeviceIdentity`] so one could be
//! slotted in.

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as KexPublic, StaticSecret as KexSecret};

use crate::protocol::SealingKey;

type HmacSha256 = Hmac<Sha256>;

pub const NONCE_LEN: usize = 32;
pub const DIGEST_LEN: usize = 32;

/// Hash chain over the boot components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Measurement {
    pub digest: [u8; DIGEST_LEN],
    pub log: Vec<(String, [u8; DIGEST_LEN])>,
}

/// Folds the firmware and system-software hashes into the boot digest:
/// starting from 32 zero bytes, `d ← H(d ‖ component_hash)` per component.
pub fn measure_boot(firmware: &[u8], system_sw: &[u8]) -> Measurement {
    let entries = [
        ("firmware".to_string(), sha256(firmware)),
        ("system_software".to_string(), sha256(system_sw)),
    ];
    let mut digest = [0u8; DIGEST_LEN];
    for (_, component_hash) in &entries {
        let mut h = Sha256::new();
        h.update(digest);
        h.update(component_hash);
        digest = h.finalize().into();
    }
    Measurement {
        digest,
        log: entries.to_vec(),
    }
}

pub fn sha256(data: &[u8]) -> [u8; DIGEST_LEN] {
    Sha256::digest(data).into()
}

/// The controller's signing identity. The private half never leaves this
/// struct; in the modeled hardware it is burned into e-fuses.
pub struct DeviceIdentity {
    signing: SigningKey,
    pub device_id: u64,
}

impl DeviceIdentity {
    pub fn from_seed(seed: [u8; 32], device_id: u64) -> Self {
        Self {
            signing: SigningKey::from_bytes(&seed),
            device_id,
        }
    }

    pub fn generate(rng: &mut impl RngCore, device_id: u64) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed, device_id)
    }

    pub fn public_key(&self) -> VerifyingKey {
        self.signing.verifying_key()
    }

    fn sign(&self, message: &[u8]) -> Signature {
        self.signing.sign(message)
    }
}

impl std::fmt::Debug for DeviceIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceIdentity")
            .field("device_id", &self.device_id)
            .finish_non_exhaustive()
    }
}

/// Signed attestation statement: binds the boot measurement, the client's
/// freshness nonce, and the controller's key-exchange public value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quote {
    pub measurement_digest: [u8; DIGEST_LEN],
    pub nonce: [u8; NONCE_LEN],
    pub kex_public: [u8; 32],
    pub signature: [u8; 64],
}

fn quote_message(
    digest: &[u8; DIGEST_LEN],
    nonce: &[u8; NONCE_LEN],
    kex_public: &[u8; 32],
) -> [u8; 96] {
    let mut msg = [0u8; 96];
    msg[0..32].copy_from_slice(digest);
    msg[32..64].copy_from_slice(nonce);
    msg[64..96].copy_from_slice(kex_public);
    msg
}

pub fn generate_quote(
    identity: &DeviceIdentity,
    measurement: &Measurement,
    nonce: [u8; NONCE_LEN],
    kex_public: [u8; 32],
) -> Quote {
    let msg = quote_message(&measurement.digest, &nonce, &kex_public);
    Quote {
        measurement_digest: measurement.digest,
        nonce,
        kex_public,
        signature: identity.sign(&msg).to_bytes(),
    }
}

/// Why a quote was rejected. Rejection is a value, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    BadSignature,
    StaleNonce,
    UnexpectedMeasurement,
}

pub fn verify_quote(
    device_pubkey: &VerifyingKey,
    quote: &Quote,
    expected_nonce: &[u8; NONCE_LEN],
    expected_measurement: &[u8; DIGEST_LEN],
) -> Result<(), RejectReason> {
    let msg = quote_message(&quote.measurement_digest, &quote.nonce, &quote.kex_public);
    let signature = Signature::from_bytes(&quote.signature);
    if device_pubkey.verify(&msg, &signature).is_err() {
        return Err(RejectReason::BadSignature);
    }
    if &quote.nonce != expected_nonce {
        return Err(RejectReason::StaleNonce);
    }
    if &quote.measurement_digest != expected_measurement {
        return Err(RejectReason::UnexpectedMeasurement);
    }
    Ok(())
}

/// Session key plus the transcript hash both sides agree on.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey {
    pub key: SealingKey,
    pub transcript_hash: [u8; DIGEST_LEN],
}

impl std::fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionKey")
            .field("transcript_hash", &hex::encode(self.transcript_hash))
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum AttestError {
    #[error("attestation failed: {0:?}")]
    AttestationFailed(RejectReason),
    #[error("key confirmation failed")]
    ConfirmationFailed,
    #[error("handshake message malformed or out of order")]
    BadMessage,
}

// ---- Handshake messages -----------------------------------------------------

const MSG_HELLO: u8 = 0x01;
const MSG_QUOTE: u8 = 0x02;
const MSG_CLIENT_CONFIRM: u8 = 0x03;
const MSG_CONTROLLER_CONFIRM: u8 = 0x04;

/// The four handshake messages: hello, quote, and the two confirmation
/// MACs. Each has one canonical serialization; the transcript hashes are
/// computed over those bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandshakeMsg {
    /// Client → controller: freshness nonce and client key-exchange public.
    Hello {
        nonce: [u8; NONCE_LEN],
        kex_public: [u8; 32],
    },
    /// Controller → client: the quote, carrying the controller kex public.
    QuoteReply { quote: Quote },
    /// Client → controller: MAC proving the client derived the key.
    ClientConfirm { mac: [u8; 32] },
    /// Controller → client: MAC acknowledging the agreement.
    ControllerConfirm { mac: [u8; 32] },
}

impl HandshakeMsg {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            HandshakeMsg::Hello { nonce, kex_public } => {
                out.push(MSG_HELLO);
                out.extend_from_slice(nonce);
                out.extend_from_slice(kex_public);
            }
            HandshakeMsg::QuoteReply { quote } => {
                out.push(MSG_QUOTE);
                out.extend_from_slice(&quote.measurement_digest);
                out.extend_from_slice(&quote.nonce);
                out.extend_from_slice(&quote.kex_public);
                out.extend_from_slice(&quote.signature);
            }
            HandshakeMsg::ClientConfirm { mac } => {
                out.push(MSG_CLIENT_CONFIRM);
                out.extend_from_slice(mac);
            }
            HandshakeMsg::ControllerConfirm { mac } => {
                out.push(MSG_CONTROLLER_CONFIRM);
                out.extend_from_slice(mac);
            }
        }
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, AttestError> {
        let (&tag, rest) = bytes.split_first().ok_or(AttestError::BadMessage)?;
        let arr = |range: std::ops::Range<usize>| -> Result<[u8; 32], AttestError> {
            rest.get(range)
                .and_then(|s| s.try_into().ok())
                .ok_or(AttestError::BadMessage)
        };
        match tag {
            MSG_HELLO if rest.len() == 64 => Ok(HandshakeMsg::Hello {
                nonce: arr(0..32)?,
                kex_public: arr(32..64)?,
            }),
            MSG_QUOTE if rest.len() == 160 => Ok(HandshakeMsg::QuoteReply {
                quote: Quote {
                    measurement_digest: arr(0..32)?,
                    nonce: arr(32..64)?,
                    kex_public: arr(64..96)?,
                    signature: rest[96..160].try_into().expect("64 bytes"),
                },
            }),
            MSG_CLIENT_CONFIRM if rest.len() == 32 => Ok(HandshakeMsg::ClientConfirm {
                mac: arr(0..32)?,
            }),
            MSG_CONTROLLER_CONFIRM if rest.len() == 32 => Ok(HandshakeMsg::ControllerConfirm {
                mac: arr(0..32)?,
            }),
            _ => Err(AttestError::BadMessage),
        }
    }
}

// ---- Key schedule -----------------------------------------------------------

struct KeySchedule {
    session_key: [u8; 32],
    client_confirm_key: [u8; 32],
    controller_confirm_key: [u8; 32],
}

/// HKDF-SHA256 extract-then-expand over the DH shared secret, salted with
/// the hash of the first two messages.
fn derive_keys(shared_secret: &[u8; 32], transcript12: &[u8; 32]) -> KeySchedule {
    let hk = Hkdf::<Sha256>::new(Some(transcript12), shared_secret);
    let expand = |label: &[u8]| {
        let mut out = [0u8; 32];
        hk.expand(label, &mut out).expect("32-byte okm fits");
        out
    };
    KeySchedule {
        session_key: expand(b"hetee v1 session key"),
        client_confirm_key: expand(b"hetee v1 client confirm"),
        controller_confirm_key: expand(b"hetee v1 controller confirm"),
    }
}

fn confirm_mac(key: &[u8; 32], transcript12: &[u8; 32]) -> [u8; 32] {
    let mut mac = HmacSha256::new_from_slice(key).expect("any key length works");
    mac.update(transcript12);
    mac.finalize().into_bytes().into()
}

fn hash_messages(msgs: &[&HandshakeMsg]) -> [u8; 32] {
    let mut h = Sha256::new();
    for msg in msgs {
        h.update(msg.canonical_bytes());
    }
    h.finalize().into()
}

// ---- Client side ------------------------------------------------------------

/// Client handshake state machine. Create with the verifier policy (device
/// public key and expected measurement digest), send the hello, feed the
/// quote reply, send the confirm, feed the controller confirm.
pub struct ClientHandshake {
    device_pubkey: VerifyingKey,
    expected_measurement: [u8; DIGEST_LEN],
    nonce: [u8; NONCE_LEN],
    kex_secret: KexSecret,
    hello: HandshakeMsg,
}

impl ClientHandshake {
    pub fn start(
        rng: &mut impl RngCore,
        device_pubkey: VerifyingKey,
        expected_measurement: [u8; DIGEST_LEN],
    ) -> (Self, HandshakeMsg) {
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let mut kex_seed = [0u8; 32];
        rng.fill_bytes(&mut kex_seed);
        let kex_secret = KexSecret::from(kex_seed);
        let hello = HandshakeMsg::Hello {
            nonce,
            kex_public: KexPublic::from(&kex_secret).to_bytes(),
        };
        let state = Self {
            device_pubkey,
            expected_measurement,
            nonce,
            kex_secret,
            hello: hello.clone(),
        };
        (state, hello)
    }

    /// Verifies the quote, derives the key, and produces the client
    /// confirmation MAC.
    pub fn on_quote(self, reply: &HandshakeMsg) -> Result<(ClientPending, HandshakeMsg), AttestError> {
        let quote = match reply {
            HandshakeMsg::QuoteReply { quote } => quote,
            _ => return Err(AttestError::BadMessage),
        };
        verify_quote(
            &self.device_pubkey,
            quote,
            &self.nonce,
            &self.expected_measurement,
        )
        .map_err(AttestError::AttestationFailed)?;

        let their_public = KexPublic::from(quote.kex_public);
        let shared = self.kex_secret.diffie_hellman(&their_public);
        let transcript12 = hash_messages(&[&self.hello, reply]);
        let schedule = derive_keys(shared.as_bytes(), &transcript12);
        let confirm = HandshakeMsg::ClientConfirm {
            mac: confirm_mac(&schedule.client_confirm_key, &transcript12),
        };
        let pending = ClientPending {
            schedule,
            transcript12,
            transcript123: hash_messages(&[&self.hello, reply, &confirm]),
        };
        Ok((pending, confirm))
    }
}

/// Client state between sending its confirm and hearing the controller's.
pub struct ClientPending {
    schedule: KeySchedule,
    transcript12: [u8; 32],
    transcript123: [u8; 32],
}

impl ClientPending {
    pub fn on_controller_confirm(self, msg: &HandshakeMsg) -> Result<SessionKey, AttestError> {
        let mac = match msg {
            HandshakeMsg::ControllerConfirm { mac } => mac,
            _ => return Err(AttestError::BadMessage),
        };
        let expected = confirm_mac(&self.schedule.controller_confirm_key, &self.transcript12);
        if mac != &expected {
            return Err(AttestError::ConfirmationFailed);
        }
        Ok(SessionKey {
            key: SealingKey(self.schedule.session_key),
            transcript_hash: finalize_transcript(self.transcript123, msg),
        })
    }
}

// ---- Controller side --------------------------------------------------------

/// Controller handshake state machine: answers a hello with a quote, then
/// checks the client's confirmation before releasing the session key.
pub struct ControllerHandshake {
    schedule: KeySchedule,
    transcript12: [u8; 32],
}

impl ControllerHandshake {
    pub fn on_hello(
        identity: &DeviceIdentity,
        measurement: &Measurement,
        rng: &mut impl RngCore,
        hello: &HandshakeMsg,
    ) -> Result<(Self, HandshakeMsg), AttestError> {
        let (nonce, client_kex) = match hello {
            HandshakeMsg::Hello { nonce, kex_public } => (*nonce, *kex_public),
            _ => return Err(AttestError::BadMessage),
        };
        let mut kex_seed = [0u8; 32];
        rng.fill_bytes(&mut kex_seed);
        let kex_secret = KexSecret::from(kex_seed);
        let kex_public = KexPublic::from(&kex_secret).to_bytes();
        let quote = generate_quote(identity, measurement, nonce, kex_public);
        let reply = HandshakeMsg::QuoteReply { quote };

        let shared = kex_secret.diffie_hellman(&KexPublic::from(client_kex));
        let transcript12 = hash_messages(&[hello, &reply]);
        let schedule = derive_keys(shared.as_bytes(), &transcript12);
        Ok((
            Self {
                schedule,
                transcript12,
            },
            reply,
        ))
    }

    /// Checks the client MAC; on success returns the confirmation ack and
    /// the established session key. On mismatch the handshake aborts with
    /// no usable key.
    pub fn on_client_confirm(
        self,
        hello: &HandshakeMsg,
        reply: &HandshakeMsg,
        confirm: &HandshakeMsg,
    ) -> Result<(HandshakeMsg, SessionKey), AttestError> {
        let mac = match confirm {
            HandshakeMsg::ClientConfirm { mac } => mac,
            _ => return Err(AttestError::BadMessage),
        };
        let expected = confirm_mac(&self.schedule.client_confirm_key, &self.transcript12);
        if mac != &expected {
            return Err(AttestError::ConfirmationFailed);
        }
        let ack = HandshakeMsg::ControllerConfirm {
            mac: confirm_mac(&self.schedule.controller_confirm_key, &self.transcript12),
        };
        let transcript123 = hash_messages(&[hello, reply, confirm]);
        let session = SessionKey {
            key: SealingKey(self.schedule.session_key),
            transcript_hash: finalize_transcript(transcript123, &ack),
        };
        Ok((ack, session))
    }
}

/// The stored transcript hash covers all four canonical messages:
/// H(H(m1 ‖ m2 ‖ m3) ‖ m4).
fn finalize_transcript(transcript123: [u8; 32], ack: &HandshakeMsg) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(transcript123);
    h.update(ack.canonical_bytes());
    h.finalize().into()
}

/// Runs the whole four-message flow in memory. Returns the two ends' keys
/// (which the invariants require to be equal).
pub fn establish_session(
    client_rng: &mut impl RngCore,
    controller_rng: &mut impl RngCore,
    identity: &DeviceIdentity,
    measurement: &Measurement,
    expected_measurement: [u8; DIGEST_LEN],
) -> Result<(SessionKey, SessionKey), AttestError> {
    let (client, hello) =
        ClientHandshake::start(client_rng, identity.public_key(), expected_measurement);
    let (controller, reply) =
        ControllerHandshake::on_hello(identity, measurement, controller_rng, &hello)?;
    let (pending, confirm) = client.on_quote(&reply)?;
    let (ack, controller_key) = controller.on_client_confirm(&hello, &reply, &confirm)?;
    let client_key = pending.on_controller_confirm(&ack)?;
    Ok((client_key, controller_key))
}
