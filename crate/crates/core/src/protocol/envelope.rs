//! Envelope byte layout and codec.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "HTEE"
//!      4     1  version (1)
//!      5     1  task type (0=Configuration 1=Command 2=Data 3=Result)
//!      6     2  reserved (0)
//!      8     8  task id, little endian
//!     16     8  sequence number, little endian
//!     24    12  nonce
//!     36     4  ciphertext length, little endian
//!     40     n  ciphertext
//!   40+n    16  tag
//! ```

use serde::{Deserialize, Serialize};

use super::ProtocolError;

pub const MAGIC: [u8; 4] = *b"HTEE";
pub const VERSION: u8 = 1;
/// Bytes before the ciphertext.
pub const HEADER_LEN: usize = 40;
/// Header prefix (magic through seq) authenticated as associated data.
pub const SEALED_HEADER_LEN: usize = 24;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const ENVELOPE_OVERHEAD: usize = HEADER_LEN + TAG_LEN;
/// Bodies are chunked by the sender; one envelope never exceeds this.
pub const MAX_BODY_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TaskType {
    Configuration = 0,
    Command = 1,
    Data = 2,
    Result = 3,
}

impl TaskType {
    pub fn from_byte(b: u8) -> Result<Self, ProtocolError> {
        match b {
            0 => Ok(TaskType::Configuration),
            1 => Ok(TaskType::Command),
            2 => Ok(TaskType::Data),
            3 => Ok(TaskType::Result),
            other => Err(ProtocolError::BadTaskType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskEnvelope {
    pub task_type: TaskType,
    pub task_id: u64,
    pub seq: u64,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl TaskEnvelope {
    /// The authenticated header prefix: magic through seq.
    pub fn associated_data(&self) -> [u8; SEALED_HEADER_LEN] {
        let mut ad = [0u8; SEALED_HEADER_LEN];
        ad[0..4].copy_from_slice(&MAGIC);
        ad[4] = VERSION;
        ad[5] = self.task_type as u8;
        // 6..8 reserved, zero
        ad[8..16].copy_from_slice(&self.task_id.to_le_bytes());
        ad[16..24].copy_from_slice(&self.seq.to_le_bytes());
        ad
    }

    pub fn wire_len(&self) -> usize {
        ENVELOPE_OVERHEAD + self.ciphertext.len()
    }
}

/// Exact wire encoding; total length is `40 + ct_len + 16`.
pub fn serialize_envelope(envelope: &TaskEnvelope) -> Vec<u8> {
    let mut out = Vec::with_capacity(envelope.wire_len());
    out.extend_from_slice(&envelope.associated_data());
    out.extend_from_slice(&envelope.nonce);
    out.extend_from_slice(&(envelope.ciphertext.len() as u32).to_le_bytes());
    out.extend_from_slice(&envelope.ciphertext);
    out.extend_from_slice(&envelope.tag);
    out
}

/// Parses one envelope. Never reads past the declared length; trailing
/// bytes after the tag are a `LengthMismatch`.
pub fn parse_envelope(bytes: &[u8]) -> Result<TaskEnvelope, ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::Truncated {
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    if bytes[0..4] != MAGIC {
        return Err(ProtocolError::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(ProtocolError::BadVersion(bytes[4]));
    }
    let task_type = TaskType::from_byte(bytes[5])?;
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(ProtocolError::LengthMismatch);
    }
    let task_id = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let seq = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let nonce: [u8; NONCE_LEN] = bytes[24..36].try_into().expect("12 bytes");
    let ct_len = u32::from_le_bytes(bytes[36..40].try_into().expect("4 bytes")) as usize;
    if ct_len > MAX_BODY_LEN + TAG_LEN {
        return Err(ProtocolError::BodyTooLarge(ct_len));
    }
    let total = HEADER_LEN + ct_len + TAG_LEN;
    if bytes.len() < total {
        return Err(ProtocolError::Truncated {
            need: total,
            have: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(ProtocolError::LengthMismatch);
    }
    let ciphertext = bytes[HEADER_LEN..HEADER_LEN + ct_len].to_vec();
    let tag: [u8; TAG_LEN] = bytes[HEADER_LEN + ct_len..total].try_into().expect("16 bytes");
    Ok(TaskEnvelope {
        task_type,
        task_id,
        seq,
        nonce,
        ciphertext,
        tag,
    })
}
