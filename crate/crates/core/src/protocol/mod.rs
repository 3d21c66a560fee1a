//! Task-based wire protocol.
//!
//! Every host↔controller exchange is one [`TaskEnvelope`]: a fixed 40-byte
//! header, an AEAD-sealed body, and a 16-byte tag. Envelopes on a queue are
//! strictly sequenced; out-of-order or replayed deliveries are rejected, not
//! buffered. The full byte layout is documented in `docs/protocol.md` and is
//! identical for the in-process window transport and the socket transport.
//!
//! Codec and seal/open are pure functions; the sequencing state lives in
//! [`TaskQueue`] on the receive side and in the sender's counters.

mod body;
mod envelope;
mod queue;
mod seal;

pub use body::{
    decode_body, encode_body, CommandBody, ConfigBody, DataBody, HandshakeBody, Instruction,
    Priority, ResultBody, TaskBody, TaskProgram,
};
pub use envelope::{
    parse_envelope, serialize_envelope, TaskEnvelope, TaskType, ENVELOPE_OVERHEAD, HEADER_LEN,
    MAGIC, MAX_BODY_LEN, NONCE_LEN, SEALED_HEADER_LEN, TAG_LEN, VERSION,
};
pub use queue::TaskQueue;
pub use seal::{
    derive_nonce, frame_handshake, open_handshake, open_task, seal_task, Direction, SealingKey,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("declared and actual lengths disagree")]
    LengthMismatch,
    #[error("unknown task type {0}")]
    BadTaskType(u8),
    #[error("authentication failure")]
    AuthFailure,
    #[error("sequence violation: expected {expected}, got {got}")]
    SequenceViolation { expected: u64, got: u64 },
    #[error("malformed body")]
    MalformedBody,
    #[error("body too large: {0} bytes")]
    BodyTooLarge(usize),
}
