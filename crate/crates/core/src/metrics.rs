//! Per-phase virtual-time accounting.
//!
//! Every nanosecond the protected path spends is attributed to exactly one
//! latency category; the benchmark's breakdown rows are read straight out
//! of these accumulators. The unprotected baseline only ever charges
//! preprocessing and accelerator compute.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Phase {
    DataPreprocessing,
    HostSendTask,
    TaskProcessing,
    InternalTaskCopy,
    AccelCompute,
    InternalResultCopy,
    HostReceiveResult,
}

pub const PHASES: [Phase; 7] = [
    Phase::DataPreprocessing,
    Phase::HostSendTask,
    Phase::TaskProcessing,
    Phase::InternalTaskCopy,
    Phase::AccelCompute,
    Phase::InternalResultCopy,
    Phase::HostReceiveResult,
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PhaseAccumulator {
    /// Accumulated duration per phase, indexed in `PHASES` order.
    pub ns: [u64; 7],
}

impl PhaseAccumulator {
    pub fn add(&mut self, phase: Phase, duration_ns: u64) {
        self.ns[phase as usize] += duration_ns;
    }

    pub fn get(&self, phase: Phase) -> u64 {
        self.ns[phase as usize]
    }

    pub fn merge(&mut self, other: &PhaseAccumulator) {
        for (mine, theirs) in self.ns.iter_mut().zip(other.ns.iter()) {
            *mine += theirs;
        }
    }

    pub fn total_ns(&self) -> u64 {
        self.ns.iter().sum()
    }
}
