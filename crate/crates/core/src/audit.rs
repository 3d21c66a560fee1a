//! Append-only audit log.
//!
//! Every security-relevant transition in the machine lands here: world
//! switches, task switches, context cleanups, queue lifecycle, and
//! preemptions. The log is the substrate for the isolation invariants —
//! in particular, that every world/task switch on a device is immediately
//! preceded by a cleanup of that device that left no residual taints.

use serde::Serialize;

use crate::accel::{CleanupMethod, Region};
use crate::fabric::{EndpointId, World};
use crate::time::TimeNs;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum AuditKind {
    WorldSwitch {
        device: EndpointId,
        from: World,
        to: World,
    },
    TaskSwitch {
        device: EndpointId,
        from_task: Option<u64>,
        to_task: u64,
    },
    Cleanup {
        device: EndpointId,
        method: CleanupMethod,
        residual: Vec<Region>,
    },
    QueueCreated {
        queue_id: u64,
        task_id: u64,
    },
    QueueDestroyed {
        queue_id: u64,
        task_id: u64,
    },
    Preemption {
        device: EndpointId,
        victim: PreemptionVictim,
        beneficiary_task: u64,
    },
}

/// What was running on a device when it was taken away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "victim")]
pub enum PreemptionVictim {
    InsecureWorld,
    SecureEnclave { task_id: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEvent {
    /// Virtual time of the transition, in nanoseconds.
    pub time_ns: TimeNs,
    /// Arrival order; ties on `time_ns` are ordered by this.
    pub seq: u64,
    #[serde(flatten)]
    pub kind: AuditKind,
}

impl AuditEvent {
    /// The device this event refers to, if any.
    pub fn device(&self) -> Option<EndpointId> {
        match self.kind {
            AuditKind::WorldSwitch { device, .. }
            | AuditKind::TaskSwitch { device, .. }
            | AuditKind::Cleanup { device, .. }
            | AuditKind::Preemption { device, .. } => Some(device),
            AuditKind::QueueCreated { .. } | AuditKind::QueueDestroyed { .. } => None,
        }
    }
}

/// Append-only, totally ordered event log.
#[derive(Debug, Default)]
pub struct AuditLog {
    events: Vec<AuditEvent>,
    next_seq: u64,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, time_ns: TimeNs, kind: AuditKind) -> &AuditEvent {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(AuditEvent { time_ns, seq, kind });
        self.events.last().expect("just pushed")
    }

    /// Events in append order.
    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    /// Events in the log's total order: time, then arrival.
    pub fn ordered(&self) -> Vec<&AuditEvent> {
        let mut out: Vec<&AuditEvent> = self.events.iter().collect();
        out.sort_by_key(|e| (e.time_ns, e.seq));
        out
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn for_device(&self, device: EndpointId) -> impl Iterator<Item = &AuditEvent> {
        self.events.iter().filter(move |e| e.device() == Some(device))
    }

    /// Serializes the log as line-delimited JSON records, in total order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for event in self.ordered() {
            out.push_str(&serde_json::to_string(event).expect("audit event serializes"));
            out.push('\n');
        }
        out
    }

    /// Checks that every `WorldSwitch` and `TaskSwitch` for a device is
    /// immediately preceded (among that device's events, in total order) by
    /// a `Cleanup` with empty residual. Returns the first offender.
    pub fn verify_cleanup_before_boundary(&self) -> Result<(), &AuditEvent> {
        let ordered = self.ordered();
        for (idx, event) in ordered.iter().enumerate() {
            let device = match event.kind {
                AuditKind::WorldSwitch { device, .. } | AuditKind::TaskSwitch { device, .. } => {
                    device
                }
                _ => continue,
            };
            let prior = ordered[..idx]
                .iter()
                .rev()
                .find(|e| e.device() == Some(device));
            match prior {
                Some(AuditEvent {
                    kind: AuditKind::Cleanup { residual, .. },
                    ..
                }) if residual.is_empty() => {}
                _ => return Err(event),
            }
        }
        Ok(())
    }
}
