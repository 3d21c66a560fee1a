//! Priority-preemptive allocation of the shared accelerator pool.
//!
//! The planner is a pure function from (pool view, pending requests) to a
//! list of grants, so its decisions can be checked exhaustively against an
//! independent interpreter of the policy. The policy:
//!
//! 1. Devices timing-share: at any instant a device serves at most one
//!    enclave or the insecure world.
//! 2. Requests are served in priority order (High, Normal, BestEffort) and
//!    FIFO within a priority.
//! 3. Free devices are handed out first, in ascending device order.
//! 4. A High secure request that is still short may preempt insecure-world
//!    devices immediately, then Normal secure allocations at their next
//!    chunk boundary (deferred while the victim is mid-chunk).
//! 5. Normal secure and best-effort host requests never preempt.
//! 6. Requests may be partially granted; the remainder stays pending.
//!
//! How a granted device must transition (world switch, task switch, halt)
//! is part of the grant, so every reassignment goes through the cleanup
//! path the grant names.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::fabric::{EndpointId, World};

/// Who is asking for devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReqOrigin {
    SecureEnclave { task_id: u64 },
    HostInsecure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ReqPriority {
    High,
    Normal,
    BestEffort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SchedulerRequest {
    /// Arrival order; FIFO tiebreaker within a priority class.
    pub id: u64,
    pub origin: ReqOrigin,
    pub priority: ReqPriority,
    pub demand: u32,
}

impl SchedulerRequest {
    /// Host requests are always best-effort; secure requests carry the
    /// priority of their configuration task.
    pub fn new(id: u64, origin: ReqOrigin, priority: ReqPriority, demand: u32) -> Self {
        let priority = match origin {
            ReqOrigin::HostInsecure => ReqPriority::BestEffort,
            ReqOrigin::SecureEnclave { .. } => priority,
        };
        Self {
            id,
            origin,
            priority,
            demand,
        }
    }
}

/// Scheduler-visible state of one device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DeviceState {
    /// Unassigned, parked in the given world.
    Free { world: World },
    /// Granted to the host for insecure-world work.
    InsecureActive { busy: bool },
    /// Granted to a secure enclave.
    SecureAssigned {
        task_id: u64,
        priority: ReqPriority,
        busy: bool,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PoolView {
    pub devices: BTreeMap<EndpointId, DeviceState>,
}

/// How a granted device is acquired, which fixes the transition (and
/// therefore the cleanup/audit trail) it must go through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Acquisition {
    /// Free device, parked in `world`.
    FromFree { world: World },
    /// Insecure-world work is halted immediately and the device crosses
    /// into the secure world.
    PreemptInsecure,
    /// Taken from a Normal-priority enclave. `deferred` when the victim is
    /// mid-chunk: the transition happens at the chunk boundary.
    PreemptSecure { victim_task: u64, deferred: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Grant {
    pub request_id: u64,
    pub device: EndpointId,
    pub acquisition: Acquisition,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Plan {
    pub grants: Vec<Grant>,
}

impl Plan {
    pub fn granted_to(&self, request_id: u64) -> u32 {
        self.grants.iter().filter(|g| g.request_id == request_id).count() as u32
    }
}

fn rank(priority: ReqPriority) -> u8 {
    match priority {
        ReqPriority::High => 0,
        ReqPriority::Normal => 1,
        ReqPriority::BestEffort => 2,
    }
}

/// Computes the grants for one scheduling round. Pure and deterministic:
/// identical inputs yield identical plans.
pub fn plan(pool: &PoolView, pending: &[SchedulerRequest]) -> Plan {
    let mut order: Vec<&SchedulerRequest> = pending.iter().collect();
    order.sort_by_key(|r| (rank(r.priority), r.id));

    let mut state = pool.devices.clone();
    let mut grants = Vec::new();

    for request in order {
        let mut outstanding = request.demand;
        if outstanding == 0 {
            continue;
        }

        // Free devices first, ascending id.
        let free: Vec<(EndpointId, World)> = state
            .iter()
            .filter_map(|(id, s)| match s {
                DeviceState::Free { world } => Some((*id, *world)),
                _ => None,
            })
            .collect();
        for (device, world) in free {
            if outstanding == 0 {
                break;
            }
            grants.push(Grant {
                request_id: request.id,
                device,
                acquisition: Acquisition::FromFree { world },
            });
            claim(&mut state, device, request);
            outstanding -= 1;
        }

        // Only High secure requests preempt.
        let is_high_secure = matches!(request.origin, ReqOrigin::SecureEnclave { .. })
            && request.priority == ReqPriority::High;
        if outstanding == 0 || !is_high_secure {
            continue;
        }

        // Insecure-world devices are halted immediately.
        let insecure: Vec<EndpointId> = state
            .iter()
            .filter_map(|(id, s)| match s {
                DeviceState::InsecureActive { .. } => Some(*id),
                _ => None,
            })
            .collect();
        for device in insecure {
            if outstanding == 0 {
                break;
            }
            grants.push(Grant {
                request_id: request.id,
                device,
                acquisition: Acquisition::PreemptInsecure,
            });
            claim(&mut state, device, request);
            outstanding -= 1;
        }
        if outstanding == 0 {
            continue;
        }

        // Then Normal secure allocations, at chunk boundaries.
        let requester_task = match request.origin {
            ReqOrigin::SecureEnclave { task_id } => task_id,
            ReqOrigin::HostInsecure => unreachable!("host requests never preempt"),
        };
        let victims: Vec<(EndpointId, u64, bool)> = state
            .iter()
            .filter_map(|(id, s)| match s {
                DeviceState::SecureAssigned {
                    task_id,
                    priority: ReqPriority::Normal,
                    busy,
                } if *task_id != requester_task => Some((*id, *task_id, *busy)),
                _ => None,
            })
            .collect();
        for (device, victim_task, busy) in victims {
            if outstanding == 0 {
                break;
            }
            grants.push(Grant {
                request_id: request.id,
                device,
                acquisition: Acquisition::PreemptSecure {
                    victim_task,
                    deferred: busy,
                },
            });
            claim(&mut state, device, request);
            outstanding -= 1;
        }
    }

    Plan { grants }
}

fn claim(state: &mut BTreeMap<EndpointId, DeviceState>, device: EndpointId, req: &SchedulerRequest) {
    let next = match req.origin {
        ReqOrigin::SecureEnclave { task_id } => DeviceState::SecureAssigned {
            task_id,
            priority: req.priority,
            busy: false,
        },
        ReqOrigin::HostInsecure => DeviceState::InsecureActive { busy: false },
    };
    state.insert(device, next);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(i: u32) -> EndpointId {
        EndpointId::device(i)
    }

    fn pool(states: &[DeviceState]) -> PoolView {
        PoolView {
            devices: states
                .iter()
                .enumerate()
                .map(|(i, s)| (dev(i as u32), *s))
                .collect(),
        }
    }

    fn secure_req(id: u64, task: u64, priority: ReqPriority, demand: u32) -> SchedulerRequest {
        SchedulerRequest::new(id, ReqOrigin::SecureEnclave { task_id: task }, priority, demand)
    }

    #[test]
    fn exact_fit_fifo_split() {
        let pool = pool(&[DeviceState::Free { world: World::Insecure }; 4]);
        let requests = [
            secure_req(1, 10, ReqPriority::Normal, 2),
            secure_req(2, 11, ReqPriority::Normal, 2),
        ];
        let plan = plan(&pool, &requests);
        assert_eq!(plan.granted_to(1), 2);
        assert_eq!(plan.granted_to(2), 2);
        // FIFO: request 1 gets the lowest device ids.
        assert_eq!(plan.grants[0].device, dev(0));
        assert_eq!(plan.grants[1].device, dev(1));
        assert_eq!(plan.grants[2].device, dev(2));
        assert_eq!(plan.grants[3].device, dev(3));
    }

    #[test]
    fn high_preempts_exactly_one_insecure_device() {
        let pool = pool(&[DeviceState::InsecureActive { busy: true }; 4]);
        let requests = [secure_req(1, 10, ReqPriority::High, 1)];
        let plan = plan(&pool, &requests);
        assert_eq!(plan.grants.len(), 1);
        assert_eq!(plan.grants[0].acquisition, Acquisition::PreemptInsecure);
        assert_eq!(plan.grants[0].device, dev(0));
    }

    #[test]
    fn normal_never_preempts() {
        let pool = pool(&[
            DeviceState::InsecureActive { busy: false },
            DeviceState::SecureAssigned {
                task_id: 9,
                priority: ReqPriority::Normal,
                busy: false,
            },
        ]);
        let requests = [secure_req(1, 10, ReqPriority::Normal, 2)];
        let plan = plan(&pool, &requests);
        assert!(plan.grants.is_empty());
    }

    #[test]
    fn high_prefers_free_then_insecure_then_normal_secure() {
        let pool = pool(&[
            DeviceState::SecureAssigned {
                task_id: 9,
                priority: ReqPriority::Normal,
                busy: true,
            },
            DeviceState::InsecureActive { busy: true },
            DeviceState::Free {
                world: World::Secure,
            },
        ]);
        let requests = [secure_req(1, 10, ReqPriority::High, 3)];
        let plan = plan(&pool, &requests);
        let by_device: BTreeMap<_, _> = plan
            .grants
            .iter()
            .map(|g| (g.device, g.acquisition))
            .collect();
        assert_eq!(
            by_device[&dev(2)],
            Acquisition::FromFree {
                world: World::Secure
            }
        );
        assert_eq!(by_device[&dev(1)], Acquisition::PreemptInsecure);
        assert_eq!(
            by_device[&dev(0)],
            Acquisition::PreemptSecure {
                victim_task: 9,
                deferred: true,
            }
        );
        // Grant order follows the acquisition ladder.
        assert_eq!(
            plan.grants.iter().map(|g| g.device).collect::<Vec<_>>(),
            vec![dev(2), dev(1), dev(0)]
        );
    }

    #[test]
    fn high_does_not_preempt_other_high() {
        let pool = pool(&[DeviceState::SecureAssigned {
            task_id: 9,
            priority: ReqPriority::High,
            busy: false,
        }]);
        let requests = [secure_req(1, 10, ReqPriority::High, 1)];
        assert!(plan(&pool, &requests).grants.is_empty());
    }

    #[test]
    fn host_requests_take_only_free_devices() {
        let pool = pool(&[
            DeviceState::Free {
                world: World::Secure,
            },
            DeviceState::SecureAssigned {
                task_id: 9,
                priority: ReqPriority::Normal,
                busy: false,
            },
        ]);
        let requests = [SchedulerRequest::new(
            1,
            ReqOrigin::HostInsecure,
            ReqPriority::BestEffort,
            2,
        )];
        let plan = plan(&pool, &requests);
        assert_eq!(plan.grants.len(), 1);
        assert_eq!(
            plan.grants[0].acquisition,
            Acquisition::FromFree {
                world: World::Secure
            }
        );
    }

    #[test]
    fn priority_order_beats_arrival_order() {
        let pool = pool(&[DeviceState::Free {
            world: World::Insecure,
        }]);
        let requests = [
            secure_req(1, 10, ReqPriority::Normal, 1),
            secure_req(2, 11, ReqPriority::High, 1),
        ];
        let plan = plan(&pool, &requests);
        assert_eq!(plan.grants.len(), 1);
        assert_eq!(plan.grants[0].request_id, 2);
    }

    #[test]
    fn host_origin_forces_best_effort() {
        let req = SchedulerRequest::new(1, ReqOrigin::HostInsecure, ReqPriority::High, 1);
        assert_eq!(req.priority, ReqPriority::BestEffort);
    }
}
