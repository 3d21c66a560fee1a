//! Task body encodings.
//!
//! Bodies travel inside the sealed part of an envelope. Each task type has
//! one canonical binary layout (documented in `docs/protocol.md`); the task
//! type byte in the envelope header selects the decoder.

use serde::{Deserialize, Serialize};

use super::{ProtocolError, TaskType};
use crate::accel::{KernelKind, RegionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Priority {
    High,
    Normal,
}

/// Queue-setup request: what kind of accelerators, how many, how urgent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigBody {
    pub accel_type: String,
    pub count: u32,
    pub priority: Priority,
}

/// One step of the declarative program a command task carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instruction {
    InitDevice,
    AllocDeviceBuffer { bytes: u64 },
    GetInput,
    CopyToDevice,
    LaunchKernel { kind: KernelKind, touched: RegionSet },
    CopyFromDevice,
    PutOutput,
    LoopUntilDrained,
}

/// The program shape the controller accepts: an init/alloc prologue, then a
/// get→copy→launch→copy→put loop driven until the input stream drains.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TaskProgram {
    pub instructions: Vec<Instruction>,
}

impl TaskProgram {
    /// Builds the canonical loop program for one kernel.
    pub fn for_kernel(kind: KernelKind, buffer_bytes: u64) -> Self {
        Self {
            instructions: vec![
                Instruction::InitDevice,
                Instruction::AllocDeviceBuffer {
                    bytes: buffer_bytes,
                },
                Instruction::GetInput,
                Instruction::CopyToDevice,
                Instruction::LaunchKernel {
                    kind,
                    touched: RegionSet::all(),
                },
                Instruction::CopyFromDevice,
                Instruction::PutOutput,
                Instruction::LoopUntilDrained,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandBody {
    pub program: TaskProgram,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataBody {
    pub payload: Vec<u8>,
    pub final_chunk: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultBody {
    pub payload: Vec<u8>,
    pub final_chunk: bool,
}

/// Pre-key handshake payload carried in configuration-typed envelopes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeBody {
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskBody {
    Config(ConfigBody),
    Command(CommandBody),
    Data(DataBody),
    Result(ResultBody),
}

impl TaskBody {
    pub fn task_type(&self) -> TaskType {
        match self {
            TaskBody::Config(_) => TaskType::Configuration,
            TaskBody::Command(_) => TaskType::Command,
            TaskBody::Data(_) => TaskType::Data,
            TaskBody::Result(_) => TaskType::Result,
        }
    }
}

const OP_INIT_DEVICE: u8 = 0x01;
const OP_ALLOC_BUFFER: u8 = 0x02;
const OP_GET_INPUT: u8 = 0x03;
const OP_COPY_TO_DEVICE: u8 = 0x04;
const OP_LAUNCH_KERNEL: u8 = 0x05;
const OP_COPY_FROM_DEVICE: u8 = 0x06;
const OP_PUT_OUTPUT: u8 = 0x07;
const OP_LOOP_UNTIL_DRAINED: u8 = 0x08;

const KERNEL_MATMUL: u8 = 0;
const KERNEL_SYNTHETIC: u8 = 1;

pub fn encode_body(body: &TaskBody) -> Vec<u8> {
    let mut out = Vec::new();
    match body {
        TaskBody::Config(cfg) => {
            let name = cfg.accel_type.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&cfg.count.to_le_bytes());
            out.push(match cfg.priority {
                Priority::Normal => 0,
                Priority::High => 1,
            });
        }
        TaskBody::Command(cmd) => {
            out.extend_from_slice(&(cmd.program.instructions.len() as u16).to_le_bytes());
            for instr in &cmd.program.instructions {
                encode_instruction(instr, &mut out);
            }
        }
        TaskBody::Data(data) => {
            out.push(data.final_chunk as u8);
            out.extend_from_slice(&data.payload);
        }
        TaskBody::Result(result) => {
            out.push(result.final_chunk as u8);
            out.extend_from_slice(&result.payload);
        }
    }
    out
}

fn encode_instruction(instr: &Instruction, out: &mut Vec<u8>) {
    match instr {
        Instruction::InitDevice => out.push(OP_INIT_DEVICE),
        Instruction::AllocDeviceBuffer { bytes } => {
            out.push(OP_ALLOC_BUFFER);
            out.extend_from_slice(&bytes.to_le_bytes());
        }
        Instruction::GetInput => out.push(OP_GET_INPUT),
        Instruction::CopyToDevice => out.push(OP_COPY_TO_DEVICE),
        Instruction::LaunchKernel { kind, touched } => {
            out.push(OP_LAUNCH_KERNEL);
            out.push(touched.to_mask());
            match *kind {
                KernelKind::MatMul { n, m, k } => {
                    out.push(KERNEL_MATMUL);
                    out.extend_from_slice(&n.to_le_bytes());
                    out.extend_from_slice(&m.to_le_bytes());
                    out.extend_from_slice(&k.to_le_bytes());
                }
                KernelKind::Synthetic {
                    flops,
                    in_bytes,
                    out_bytes,
                } => {
                    out.push(KERNEL_SYNTHETIC);
                    out.extend_from_slice(&flops.to_le_bytes());
                    out.extend_from_slice(&in_bytes.to_le_bytes());
                    out.extend_from_slice(&out_bytes.to_le_bytes());
                }
            }
        }
        Instruction::CopyFromDevice => out.push(OP_COPY_FROM_DEVICE),
        Instruction::PutOutput => out.push(OP_PUT_OUTPUT),
        Instruction::LoopUntilDrained => out.push(OP_LOOP_UNTIL_DRAINED),
    }
}

pub fn decode_body(task_type: TaskType, bytes: &[u8]) -> Result<TaskBody, ProtocolError> {
    match task_type {
        TaskType::Configuration => decode_config(bytes).map(TaskBody::Config),
        TaskType::Command => decode_command(bytes).map(TaskBody::Command),
        TaskType::Data => {
            let (payload, final_chunk) = decode_stream_chunk(bytes)?;
            Ok(TaskBody::Data(DataBody {
                payload,
                final_chunk,
            }))
        }
        TaskType::Result => {
            let (payload, final_chunk) = decode_stream_chunk(bytes)?;
            Ok(TaskBody::Result(ResultBody {
                payload,
                final_chunk,
            }))
        }
    }
}

fn decode_config(bytes: &[u8]) -> Result<ConfigBody, ProtocolError> {
    if bytes.len() < 2 {
        return Err(ProtocolError::MalformedBody);
    }
    let name_len = u16::from_le_bytes(bytes[0..2].try_into().expect("2 bytes")) as usize;
    let rest = &bytes[2..];
    if rest.len() != name_len + 5 {
        return Err(ProtocolError::MalformedBody);
    }
    let accel_type = String::from_utf8(rest[..name_len].to_vec())
        .map_err(|_| ProtocolError::MalformedBody)?;
    let count = u32::from_le_bytes(rest[name_len..name_len + 4].try_into().expect("4 bytes"));
    if count == 0 {
        return Err(ProtocolError::MalformedBody);
    }
    let priority = match rest[name_len + 4] {
        0 => Priority::Normal,
        1 => Priority::High,
        _ => return Err(ProtocolError::MalformedBody),
    };
    Ok(ConfigBody {
        accel_type,
        count,
        priority,
    })
}

fn decode_command(bytes: &[u8]) -> Result<CommandBody, ProtocolError> {
    if bytes.len() < 2 {
        return Err(ProtocolError::MalformedBody);
    }
    let count = u16::from_le_bytes(bytes[0..2].try_into().expect("2 bytes")) as usize;
    let mut cursor = 2usize;
    let mut instructions = Vec::with_capacity(count);
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8], ProtocolError> {
        if bytes.len() < *cursor + n {
            return Err(ProtocolError::MalformedBody);
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };
    for _ in 0..count {
        let op = take(&mut cursor, 1)?[0];
        let instr = match op {
            OP_INIT_DEVICE => Instruction::InitDevice,
            OP_ALLOC_BUFFER => {
                let bytes_le = take(&mut cursor, 8)?;
                Instruction::AllocDeviceBuffer {
                    bytes: u64::from_le_bytes(bytes_le.try_into().expect("8 bytes")),
                }
            }
            OP_GET_INPUT => Instruction::GetInput,
            OP_COPY_TO_DEVICE => Instruction::CopyToDevice,
            OP_LAUNCH_KERNEL => {
                let touched = RegionSet::from_mask(take(&mut cursor, 1)?[0]);
                let kind_tag = take(&mut cursor, 1)?[0];
                let kind = match kind_tag {
                    KERNEL_MATMUL => {
                        let dims = take(&mut cursor, 12)?;
                        KernelKind::MatMul {
                            n: u32::from_le_bytes(dims[0..4].try_into().expect("4 bytes")),
                            m: u32::from_le_bytes(dims[4..8].try_into().expect("4 bytes")),
                            k: u32::from_le_bytes(dims[8..12].try_into().expect("4 bytes")),
                        }
                    }
                    KERNEL_SYNTHETIC => {
                        let fields = take(&mut cursor, 16)?;
                        KernelKind::Synthetic {
                            flops: u64::from_le_bytes(fields[0..8].try_into().expect("8 bytes")),
                            in_bytes: u32::from_le_bytes(
                                fields[8..12].try_into().expect("4 bytes"),
                            ),
                            out_bytes: u32::from_le_bytes(
                                fields[12..16].try_into().expect("4 bytes"),
                            ),
                        }
                    }
                    _ => return Err(ProtocolError::MalformedBody),
                };
                Instruction::LaunchKernel { kind, touched }
            }
            OP_COPY_FROM_DEVICE => Instruction::CopyFromDevice,
            OP_PUT_OUTPUT => Instruction::PutOutput,
            OP_LOOP_UNTIL_DRAINED => Instruction::LoopUntilDrained,
            _ => return Err(ProtocolError::MalformedBody),
        };
        instructions.push(instr);
    }
    if cursor != bytes.len() {
        return Err(ProtocolError::MalformedBody);
    }
    Ok(CommandBody {
        program: TaskProgram { instructions },
    })
}

fn decode_stream_chunk(bytes: &[u8]) -> Result<(Vec<u8>, bool), ProtocolError> {
    if bytes.is_empty() {
        return Err(ProtocolError::MalformedBody);
    }
    let final_chunk = match bytes[0] {
        0 => false,
        1 => true,
        _ => return Err(ProtocolError::MalformedBody),
    };
    Ok((bytes[1..].to_vec(), final_chunk))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip() {
        let body = TaskBody::Config(ConfigBody {
            accel_type: "gpu".to_string(),
            count: 4,
            priority: Priority::High,
        });
        let encoded = encode_body(&body);
        assert_eq!(decode_body(TaskType::Configuration, &encoded).unwrap(), body);
    }

    #[test]
    fn zero_count_config_rejected() {
        let mut encoded = encode_body(&TaskBody::Config(ConfigBody {
            accel_type: "gpu".to_string(),
            count: 1,
            priority: Priority::Normal,
        }));
        let len = encoded.len();
        encoded[len - 5..len - 1].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(
            decode_body(TaskType::Configuration, &encoded),
            Err(ProtocolError::MalformedBody)
        );
    }

    #[test]
    fn command_roundtrip() {
        let program = TaskProgram::for_kernel(KernelKind::MatMul { n: 2, m: 3, k: 4 }, 4096);
        let body = TaskBody::Command(CommandBody { program });
        let encoded = encode_body(&body);
        assert_eq!(decode_body(TaskType::Command, &encoded).unwrap(), body);
    }

    #[test]
    fn data_roundtrip_and_bad_marker() {
        let body = TaskBody::Data(DataBody {
            payload: vec![1, 2, 3],
            final_chunk: true,
        });
        let mut encoded = encode_body(&body);
        assert_eq!(decode_body(TaskType::Data, &encoded).unwrap(), body);
        encoded[0] = 7;
        assert_eq!(
            decode_body(TaskType::Data, &encoded),
            Err(ProtocolError::MalformedBody)
        );
    }

    #[test]
    fn truncated_command_rejected() {
        let program = TaskProgram::for_kernel(
            KernelKind::Synthetic {
                flops: 10,
                in_bytes: 1,
                out_bytes: 1,
            },
            64,
        );
        let encoded = encode_body(&TaskBody::Command(CommandBody { program }));
        for cut in 1..encoded.len() {
            assert!(
                decode_body(TaskType::Command, &encoded[..cut]).is_err(),
                "prefix of {cut} bytes must not decode"
            );
        }
    }
}
