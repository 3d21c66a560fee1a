//! AEAD sealing of task bodies.
//!
//! AES-256-GCM with the header prefix (magic through seq) as associated
//! data. Nonces are counter-derived — one direction byte, three zero bytes,
//! then the sequence number — so a (key, nonce) pair can never repeat while
//! each side's counter only moves forward.

use aes_gcm::aead::{Aead, Payload};
use aes_gcm::{Aes256Gcm, Key, KeyInit, Nonce};
use sha2::{Digest, Sha256};

use super::envelope::{NONCE_LEN, TAG_LEN};
use super::{ProtocolError, TaskEnvelope, TaskType, MAX_BODY_LEN};

/// 256-bit AEAD key shared by the two ends of a session.
#[derive(Clone, PartialEq, Eq)]
pub struct SealingKey(pub [u8; 32]);

impl std::fmt::Debug for SealingKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SealingKey(..)")
    }
}

/// Which way an envelope travels; bound into the nonce so the two
/// directions of one session can never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    HostToController,
    ControllerToHost,
}

impl Direction {
    pub fn byte(self) -> u8 {
        match self {
            Direction::HostToController => 0,
            Direction::ControllerToHost => 1,
        }
    }

    pub fn flip(self) -> Direction {
        match self {
            Direction::HostToController => Direction::ControllerToHost,
            Direction::ControllerToHost => Direction::HostToController,
        }
    }
}

/// nonce = direction byte ‖ three zero bytes ‖ seq (little endian).
pub fn derive_nonce(direction: Direction, seq: u64) -> [u8; NONCE_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    nonce[0] = direction.byte();
    nonce[4..12].copy_from_slice(&seq.to_le_bytes());
    nonce
}

/// Seals a body under the session key at the sender's next sequence number.
pub fn seal_task(
    body: &[u8],
    key: &SealingKey,
    task_id: u64,
    seq: u64,
    task_type: TaskType,
    direction: Direction,
) -> Result<TaskEnvelope, ProtocolError> {
    if body.len() > MAX_BODY_LEN {
        return Err(ProtocolError::BodyTooLarge(body.len()));
    }
    let mut envelope = TaskEnvelope {
        task_type,
        task_id,
        seq,
        nonce: derive_nonce(direction, seq),
        ciphertext: Vec::new(),
        tag: [0u8; TAG_LEN],
    };
    let ad = envelope.associated_data();
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&key.0));
    let sealed = cipher
        .encrypt(
            Nonce::from_slice(&envelope.nonce),
            Payload {
                msg: body,
                aad: &ad,
            },
        )
        .expect("AES-GCM encryption is infallible for in-range lengths");
    // The aead crate appends the tag to the ciphertext; split it back out.
    let split = sealed.len() - TAG_LEN;
    envelope.tag.copy_from_slice(&sealed[split..]);
    envelope.ciphertext = sealed[..split].to_vec();
    Ok(envelope)
}

/// Verifies and opens a sealed envelope. The body is released only if the
/// tag verifies over the authenticated header, the stored nonce matches the
/// counter-derived one, and the sequence number is exactly the expected one.
pub fn open_task(
    envelope: &TaskEnvelope,
    key: &SealingKey,
    expected_seq: u64,
    direction: Direction,
) -> Result<Vec<u8>, ProtocolError> {
    if envelope.nonce != derive_nonce(direction, envelope.seq) {
        return Err(ProtocolError::AuthFailure);
    }
    let ad = envelope.associated_data();
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&key.0));
    let mut sealed = envelope.ciphertext.clone();
    sealed.extend_from_slice(&envelope.tag);
    let body = cipher
        .decrypt(
            Nonce::from_slice(&envelope.nonce),
            Payload {
                msg: &sealed,
                aad: &ad,
            },
        )
        .map_err(|_| ProtocolError::AuthFailure)?;
    // Authenticity before ordering: replays of genuine envelopes are
    // sequence violations, not forgeries.
    if envelope.seq != expected_seq {
        return Err(ProtocolError::SequenceViolation {
            expected: expected_seq,
            got: envelope.seq,
        });
    }
    Ok(body)
}

/// Frames a pre-key handshake message. There is no session key yet, so the
/// ciphertext field carries the clear handshake body and the tag is a plain
/// hash over the authenticated header and body.
pub fn frame_handshake(payload: &[u8], seq: u64, direction: Direction) -> TaskEnvelope {
    let mut envelope = TaskEnvelope {
        task_type: TaskType::Configuration,
        task_id: 0,
        seq,
        nonce: derive_nonce(direction, seq),
        ciphertext: payload.to_vec(),
        tag: [0u8; TAG_LEN],
    };
    envelope.tag = handshake_tag(&envelope);
    envelope
}

/// Validates and unwraps a pre-key handshake frame.
pub fn open_handshake(
    envelope: &TaskEnvelope,
    expected_seq: u64,
    direction: Direction,
) -> Result<Vec<u8>, ProtocolError> {
    if envelope.task_type != TaskType::Configuration || envelope.task_id != 0 {
        return Err(ProtocolError::MalformedBody);
    }
    if envelope.nonce != derive_nonce(direction, envelope.seq) {
        return Err(ProtocolError::AuthFailure);
    }
    if envelope.tag != handshake_tag(envelope) {
        return Err(ProtocolError::AuthFailure);
    }
    if envelope.seq != expected_seq {
        return Err(ProtocolError::SequenceViolation {
            expected: expected_seq,
            got: envelope.seq,
        });
    }
    Ok(envelope.ciphertext.clone())
}

fn handshake_tag(envelope: &TaskEnvelope) -> [u8; TAG_LEN] {
    let mut hasher = Sha256::new();
    hasher.update(b"hetee.handshake.frame.v1");
    hasher.update(envelope.associated_data());
    hasher.update(&envelope.ciphertext);
    let digest = hasher.finalize();
    digest[..TAG_LEN].try_into().expect("16 bytes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(byte: u8) -> SealingKey {
        SealingKey([byte; 32])
    }

    #[test]
    fn seal_open_roundtrip() {
        let k = key(0x42);
        let body = b"model weights".to_vec();
        let env = seal_task(&body, &k, 7, 0, TaskType::Data, Direction::HostToController).unwrap();
        let opened = open_task(&env, &k, 0, Direction::HostToController).unwrap();
        assert_eq!(opened, body);
    }

    #[test]
    fn adjacent_seqs_have_distinct_nonces_and_ciphertexts() {
        let k = key(0x42);
        let body = b"same body";
        let e0 = seal_task(body, &k, 1, 0, TaskType::Data, Direction::HostToController).unwrap();
        let e1 = seal_task(body, &k, 1, 1, TaskType::Data, Direction::HostToController).unwrap();
        assert_ne!(e0.nonce, e1.nonce);
        assert_ne!(e0.ciphertext, e1.ciphertext);
    }

    #[test]
    fn wrong_key_fails_auth() {
        let env = seal_task(b"x", &key(1), 1, 0, TaskType::Data, Direction::HostToController)
            .unwrap();
        assert_eq!(
            open_task(&env, &key(2), 0, Direction::HostToController),
            Err(ProtocolError::AuthFailure)
        );
    }

    #[test]
    fn replay_is_sequence_violation() {
        let k = key(3);
        let env = seal_task(b"x", &k, 1, 4, TaskType::Data, Direction::HostToController).unwrap();
        assert_eq!(
            open_task(&env, &k, 5, Direction::HostToController),
            Err(ProtocolError::SequenceViolation {
                expected: 5,
                got: 4
            })
        );
    }

    #[test]
    fn wrong_direction_fails() {
        let k = key(3);
        let env = seal_task(b"x", &k, 1, 0, TaskType::Data, Direction::HostToController).unwrap();
        assert_eq!(
            open_task(&env, &k, 0, Direction::ControllerToHost),
            Err(ProtocolError::AuthFailure)
        );
    }

    #[test]
    fn ciphertext_bit_flips_rejected() {
        let k = key(9);
        let body = b"sensitive payload";
        let env = seal_task(body, &k, 2, 0, TaskType::Data, Direction::HostToController).unwrap();
        for bit in 0..(env.ciphertext.len() * 8) {
            let mut tampered = env.clone();
            tampered.ciphertext[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(
                open_task(&tampered, &k, 0, Direction::HostToController),
                Err(ProtocolError::AuthFailure),
                "flip of ciphertext bit {bit} must fail"
            );
        }
    }

    #[test]
    fn header_field_tampering_rejected() {
        let k = key(9);
        let env = seal_task(b"p", &k, 2, 3, TaskType::Data, Direction::HostToController).unwrap();

        let mut wrong_task = env.clone();
        wrong_task.task_id = 5;
        assert!(open_task(&wrong_task, &k, 3, Direction::HostToController).is_err());

        let mut wrong_type = env.clone();
        wrong_type.task_type = TaskType::Command;
        assert!(open_task(&wrong_type, &k, 3, Direction::HostToController).is_err());

        let mut wrong_nonce = env.clone();
        wrong_nonce.nonce[1] ^= 1;
        assert!(open_task(&wrong_nonce, &k, 3, Direction::HostToController).is_err());

        let mut wrong_tag = env;
        wrong_tag.tag[0] ^= 1;
        assert!(open_task(&wrong_tag, &k, 3, Direction::HostToController).is_err());
    }

    #[test]
    fn handshake_frame_roundtrip_and_tamper() {
        let env = frame_handshake(b"hello", 0, Direction::HostToController);
        assert_eq!(
            open_handshake(&env, 0, Direction::HostToController).unwrap(),
            b"hello"
        );
        let mut tampered = env;
        tampered.ciphertext[0] ^= 1;
        assert_eq!(
            open_handshake(&tampered, 0, Direction::HostToController),
            Err(ProtocolError::AuthFailure)
        );
    }

    #[test]
    fn oversized_body_rejected() {
        let body = vec![0u8; MAX_BODY_LEN + 1];
        assert!(matches!(
            seal_task(&body, &key(1), 1, 0, TaskType::Data, Direction::HostToController),
            Err(ProtocolError::BodyTooLarge(_))
        ));
    }
}
