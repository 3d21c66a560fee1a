//! Controller-side enclave sandboxes.
//!
//! An enclave is one protected task: its queue, session key, allocated
//! devices, program state, and input/output buffers. Buffers are reachable
//! only through an access path keyed by task id; a caller presenting the
//! wrong id gets an access error, never another enclave's bytes.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::accel::{KernelKind, RegionSet};
use crate::fabric::EndpointId;
use crate::metrics::PhaseAccumulator;
use crate::protocol::{Instruction, Priority, TaskProgram};
use crate::time::TimeNs;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnclaveStatus {
    AwaitingCommand,
    Running,
    Draining,
    Closed,
}

/// Validated form of the canonical program shape: an init/alloc prologue
/// followed by one get→copy→launch→copy→put loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedProgram {
    pub buffer_bytes: u64,
    pub kernel: KernelKind,
    pub touched: RegionSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProgramError {
    Empty,
    MissingInit,
    AllocBeforeInit,
    MissingAlloc,
    MalformedLoop,
    MissingLoopMarker,
    TrailingInstructions,
    InvalidKernel,
}

/// Statically validates a task program against the accepted shape:
/// `InitDevice, AllocDeviceBuffer+, GetInput, CopyToDevice, LaunchKernel,
/// CopyFromDevice, PutOutput, LoopUntilDrained`.
pub fn validate_program(program: &TaskProgram) -> Result<ValidatedProgram, ProgramError> {
    let instrs = &program.instructions;
    if instrs.is_empty() {
        return Err(ProgramError::Empty);
    }
    if instrs[0] != Instruction::InitDevice {
        // Anything that references device buffers before init/alloc is out.
        return Err(match instrs[0] {
            Instruction::AllocDeviceBuffer { .. } => ProgramError::AllocBeforeInit,
            _ => ProgramError::MissingInit,
        });
    }
    let mut cursor = 1;
    let mut buffer_bytes = 0u64;
    while let Some(Instruction::AllocDeviceBuffer { bytes }) = instrs.get(cursor) {
        buffer_bytes = buffer_bytes.saturating_add(*bytes);
        cursor += 1;
    }
    if buffer_bytes == 0 {
        return Err(ProgramError::MissingAlloc);
    }

    let loop_shape = [
        Instruction::GetInput,
        Instruction::CopyToDevice,
        // LaunchKernel carries payload; matched structurally below.
        Instruction::CopyFromDevice,
        Instruction::PutOutput,
    ];
    let (kernel, touched) = match (
        instrs.get(cursor),
        instrs.get(cursor + 1),
        instrs.get(cursor + 2),
        instrs.get(cursor + 3),
        instrs.get(cursor + 4),
    ) {
        (
            Some(a),
            Some(b),
            Some(Instruction::LaunchKernel { kind, touched }),
            Some(c),
            Some(d),
        ) if *a == loop_shape[0] && *b == loop_shape[1] && *c == loop_shape[2] && *d == loop_shape[3] => {
            (*kind, *touched)
        }
        _ => return Err(ProgramError::MalformedLoop),
    };
    cursor += 5;
    if instrs.get(cursor) != Some(&Instruction::LoopUntilDrained) {
        return Err(ProgramError::MissingLoopMarker);
    }
    if cursor + 1 != instrs.len() {
        return Err(ProgramError::TrailingInstructions);
    }
    if !kernel.validate() {
        return Err(ProgramError::InvalidKernel);
    }
    Ok(ValidatedProgram {
        buffer_bytes,
        kernel,
        touched,
    })
}

/// One input chunk queued for dispatch.
#[derive(Debug, Clone)]
pub struct InputChunk {
    pub index: u64,
    pub data: Vec<u8>,
    /// When the plaintext became available controller-side.
    pub ready_ns: TimeNs,
}

/// One computed output waiting in the reorder buffer.
#[derive(Debug, Clone)]
pub struct OutputChunk {
    pub index: u64,
    pub data: Vec<u8>,
    pub ready_ns: TimeNs,
}

#[derive(Debug)]
pub struct Enclave {
    pub task_id: u64,
    pub queue_id: u64,
    pub session_id: u64,
    pub demand: u32,
    pub priority: Priority,
    pub status: EnclaveStatus,
    /// Devices currently allocated, ascending order.
    pub devices: BTreeSet<EndpointId>,
    pub program: Option<ValidatedProgram>,
    /// Chunks accepted but not yet dispatched to a device.
    pub input_buffer: VecDeque<InputChunk>,
    /// Completed outputs keyed by input index (the reorder buffer).
    pub pending_outputs: BTreeMap<u64, OutputChunk>,
    /// Sealed results ready for the host, in input order.
    pub output_buffer: VecDeque<OutputChunk>,
    pub next_input_index: u64,
    pub next_emit_index: u64,
    pub final_seen: bool,
    pub results_emitted: u64,
    /// Controller-side share of the latency breakdown for this task.
    pub phases: PhaseAccumulator,
    rr_cursor: usize,
}

impl Enclave {
    pub fn new(
        task_id: u64,
        queue_id: u64,
        session_id: u64,
        demand: u32,
        priority: Priority,
    ) -> Self {
        Self {
            task_id,
            queue_id,
            session_id,
            demand,
            priority,
            status: EnclaveStatus::AwaitingCommand,
            devices: BTreeSet::new(),
            program: None,
            input_buffer: VecDeque::new(),
            pending_outputs: BTreeMap::new(),
            output_buffer: VecDeque::new(),
            next_input_index: 0,
            next_emit_index: 0,
            final_seen: false,
            results_emitted: 0,
            phases: PhaseAccumulator::default(),
            rr_cursor: 0,
        }
    }

    /// Picks the device for the next chunk: round-robin over the allocated
    /// set in ascending order.
    pub fn next_device(&mut self) -> Option<EndpointId> {
        if self.devices.is_empty() {
            return None;
        }
        let devices: Vec<_> = self.devices.iter().copied().collect();
        let device = devices[self.rr_cursor % devices.len()];
        self.rr_cursor += 1;
        Some(device)
    }

    /// Moves in-order completed outputs from the reorder buffer into the
    /// emission queue; returns how many became ready.
    pub fn drain_reorder_buffer(&mut self) -> usize {
        let mut moved = 0;
        while let Some(chunk) = self.pending_outputs.remove(&self.next_emit_index) {
            self.output_buffer.push_back(chunk);
            self.next_emit_index += 1;
            moved += 1;
        }
        moved
    }

    /// All inputs dispatched, all outputs emitted, final marker seen.
    pub fn fully_drained(&self) -> bool {
        self.final_seen
            && self.input_buffer.is_empty()
            && self.pending_outputs.is_empty()
            && self.output_buffer.is_empty()
            && self.next_emit_index == self.next_input_index
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accel::KernelKind;

    fn canonical() -> TaskProgram {
        TaskProgram::for_kernel(KernelKind::MatMul { n: 2, m: 2, k: 2 }, 1024)
    }

    #[test]
    fn canonical_program_validates() {
        let v = validate_program(&canonical()).unwrap();
        assert_eq!(v.buffer_bytes, 1024);
        assert_eq!(v.kernel, KernelKind::MatMul { n: 2, m: 2, k: 2 });
    }

    #[test]
    fn copy_before_alloc_rejected() {
        let mut p = canonical();
        p.instructions.swap(1, 3); // CopyToDevice lands before AllocDeviceBuffer
        assert!(validate_program(&p).is_err());
    }

    #[test]
    fn missing_loop_marker_rejected() {
        let mut p = canonical();
        p.instructions.pop();
        assert_eq!(validate_program(&p), Err(ProgramError::MissingLoopMarker));
    }

    #[test]
    fn empty_program_rejected() {
        assert_eq!(
            validate_program(&TaskProgram::default()),
            Err(ProgramError::Empty)
        );
    }

    #[test]
    fn multiple_allocs_accumulate() {
        let mut p = canonical();
        p.instructions
            .insert(2, Instruction::AllocDeviceBuffer { bytes: 512 });
        let v = validate_program(&p).unwrap();
        assert_eq!(v.buffer_bytes, 1536);
    }

    #[test]
    fn zero_dim_kernel_rejected() {
        let p = TaskProgram::for_kernel(KernelKind::MatMul { n: 0, m: 2, k: 2 }, 64);
        assert_eq!(validate_program(&p), Err(ProgramError::InvalidKernel));
    }

    #[test]
    fn round_robin_cycles_ascending() {
        let mut enclave = Enclave::new(1, 1, 1, 2, Priority::Normal);
        enclave.devices.insert(EndpointId::device(3));
        enclave.devices.insert(EndpointId::device(1));
        let picks: Vec<_> = (0..4).map(|_| enclave.next_device().unwrap()).collect();
        assert_eq!(
            picks,
            vec![
                EndpointId::device(1),
                EndpointId::device(3),
                EndpointId::device(1),
                EndpointId::device(3)
            ]
        );
    }

    #[test]
    fn reorder_buffer_emits_in_input_order() {
        let mut enclave = Enclave::new(1, 1, 1, 1, Priority::Normal);
        for index in [2u64, 0, 1] {
            enclave.pending_outputs.insert(
                index,
                OutputChunk {
                    index,
                    data: vec![index as u8],
                    ready_ns: 100 - index, // completion order is scrambled
                },
            );
        }
        enclave.drain_reorder_buffer();
        let order: Vec<u64> = enclave.output_buffer.iter().map(|c| c.index).collect();
        assert_eq!(order, vec![0, 1, 2]);
    }
}
