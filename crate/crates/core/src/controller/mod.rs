//! The security controller.
//!
//! The only trusted unit in the machine. It boots from vendor-signed
//! images, measures itself, holds the fabric's management capability, and
//! runs the task manager: session handshakes, queue allocation, program
//! dispatch onto the accelerator pool, result emission, the elastic
//! priority-preemptive scheduler, and the mode-switch service with its
//! mandatory cleanup on every boundary.
//!
//! The task manager is one logical event processor: all controller state
//! mutations flow through [`Controller::pump`] (or the in-process handler
//! methods it delegates to), serialized by construction. Device kernels
//! overlap in virtual time on their own timelines.

pub mod enclave;
pub mod scheduler;

use std::collections::BTreeMap;

use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::accel::{CleanupCostTable, Device, DeviceProfile, KernelSpec};
use crate::attest::{
    ControllerHandshake, DeviceIdentity, HandshakeMsg, Measurement, SessionKey,
};
use crate::audit::{AuditKind, PreemptionVictim};
use crate::config::CostModel;
use crate::fabric::{EndpointId, ManagementToken, World};
use crate::metrics::{Phase, PhaseAccumulator};
use crate::protocol::{
    decode_body, encode_body, frame_handshake, open_handshake, open_task, parse_envelope,
    seal_task, serialize_envelope, Direction, Priority, ResultBody, TaskBody,
    TaskType,
};
use crate::sim::Hardware;
use crate::time::TimeNs;

use enclave::{validate_program, Enclave, EnclaveStatus, InputChunk, OutputChunk, ProgramError};
use scheduler::{
    plan, Acquisition, DeviceState, PoolView, ReqOrigin, ReqPriority, SchedulerRequest,
};

/// Task id stamped on insecure-world (baseline) kernel runs.
pub const INSECURE_TASK_ID: u64 = 0;

/// A boot image plus the vendor signature over its bytes.
#[derive(Debug, Clone)]
pub struct SignedImage {
    pub bytes: Vec<u8>,
    pub signature: [u8; 64],
}

pub fn sign_image(vendor: &SigningKey, bytes: &[u8]) -> SignedImage {
    SignedImage {
        bytes: bytes.to_vec(),
        signature: vendor.sign(bytes).to_bytes(),
    }
}

/// Derives the vendor signing key from a config seed.
pub fn vendor_signing_key(seed: u64) -> SigningKey {
    let mut material = [0u8; 32];
    let digest = crate::attest::sha256(&[b"hetee.vendor.key".as_slice(), &seed.to_le_bytes()].concat());
    material.copy_from_slice(&digest);
    SigningKey::from_bytes(&material)
}

/// Derives the controller identity key seed from a config seed.
pub fn identity_seed(seed: u64) -> [u8; 32] {
    crate::attest::sha256(&[b"hetee.identity.key".as_slice(), &seed.to_le_bytes()].concat())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ControllerError {
    #[error("boot image signature invalid")]
    BootSignatureInvalid,
    #[error("device pool exhausted and waiting is disabled")]
    ResourceExhausted,
    #[error("program rejected: {0:?}")]
    ProgramInvalid(ProgramError),
    #[error("a command is already active on this queue")]
    CommandAlreadyActive,
    #[error("enclave is not running")]
    EnclaveNotRunning,
    #[error("unknown task {0}")]
    UnknownTask(u64),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("buffer access denied for task {caller}")]
    BufferAccessDenied { caller: u64 },
    #[error("fabric: {0}")]
    Fabric(#[from] crate::fabric::FabricError),
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ControllerStats {
    /// Malformed or unauthenticated envelopes silently dropped.
    pub dropped_envelopes: u64,
    pub handshake_failures: u64,
    pub commands_rejected: u64,
}

/// Why a device is being moved; lands in the audit trail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchReason {
    Allocation,
    Release,
    Preemption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Assignment {
    Free,
    Host,
    Enclave(u64),
}

#[derive(Debug, Clone, Copy)]
struct DeviceBook {
    assignment: Assignment,
    /// Most recent secure occupant, for task-switch audit records.
    last_task: Option<u64>,
}

struct PendingPreemption {
    beneficiary_task: u64,
    victim_task: u64,
}

enum SessionPhase {
    AwaitHello,
    AwaitConfirm {
        hello: HandshakeMsg,
        reply: HandshakeMsg,
        handshake: ControllerHandshake,
    },
    Established {
        key: SessionKey,
        recv_seq: u64,
        send_seq: u64,
        task_id: Option<u64>,
    },
    Failed,
}

struct Session {
    host: EndpointId,
    queue_id: u64,
    phase: SessionPhase,
    hs_recv: u64,
    hs_send: u64,
}

pub struct Controller {
    identity: DeviceIdentity,
    measurement: Measurement,
    token: ManagementToken,
    cost: CostModel,
    wait_for_devices: bool,
    rng: ChaCha12Rng,
    next_session_id: u64,
    next_task_id: u64,
    next_queue_id: u64,
    next_request_id: u64,
    sessions: BTreeMap<u64, Session>,
    enclaves: BTreeMap<u64, Enclave>,
    books: BTreeMap<EndpointId, DeviceBook>,
    pending_requests: Vec<SchedulerRequest>,
    pending_preemptions: BTreeMap<EndpointId, PendingPreemption>,
    /// Enclaves whose configuration ack waits for a first device.
    pending_acks: Vec<u64>,
    /// Test hook: flip one bit in the next emitted result's ciphertext.
    pub tamper_next_result: bool,
    stats: ControllerStats,
    ctrl_free_at: TimeNs,
}

impl Controller {
    /// Secure boot: verify the vendor signatures, measure the images, take
    /// the management capability, and hot-plug the device pool (all devices
    /// start in the insecure world, owned by the primary host).
    #[allow(clippy::too_many_arguments)]
    pub fn boot(
        hw: &mut Hardware,
        firmware: &SignedImage,
        system_sw: &SignedImage,
        vendor_pubkey: &VerifyingKey,
        identity: DeviceIdentity,
        device_count: u32,
        profile: DeviceProfile,
        cost_table: CleanupCostTable,
        cost: CostModel,
        wait_for_devices: bool,
        rng_seed: u64,
    ) -> Result<Self, ControllerError> {
        for image in [firmware, system_sw] {
            let signature = ed25519_dalek::Signature::from_bytes(&image.signature);
            vendor_pubkey
                .verify(&image.bytes, &signature)
                .map_err(|_| ControllerError::BootSignatureInvalid)?;
        }
        let measurement = crate::attest::measure_boot(&firmware.bytes, &system_sw.bytes);
        let token = hw
            .fabric
            .issue_management_token()
            .expect("fabric issues the token to the first booter");

        let mut controller = Self {
            identity,
            measurement,
            token,
            cost,
            wait_for_devices,
            rng: ChaCha12Rng::seed_from_u64(rng_seed),
            next_session_id: 1,
            next_task_id: 1,
            next_queue_id: 1,
            next_request_id: 1,
            sessions: BTreeMap::new(),
            enclaves: BTreeMap::new(),
            books: BTreeMap::new(),
            pending_requests: Vec::new(),
            pending_preemptions: BTreeMap::new(),
            pending_acks: Vec::new(),
            tamper_next_result: false,
            stats: ControllerStats::default(),
            ctrl_free_at: 0,
        };

        let host = hw.fabric.hosts()[0];
        let table = std::sync::Arc::new(cost_table);
        for _ in 0..device_count {
            let id = hw
                .fabric
                .add_device(&controller.token, host, World::Insecure)?;
            hw.devices
                .insert(id, Device::new(id, profile.clone(), table.clone()));
            controller.books.insert(
                id,
                DeviceBook {
                    assignment: Assignment::Free,
                    last_task: None,
                },
            );
        }
        Ok(controller)
    }

    pub fn measurement(&self) -> &Measurement {
        &self.measurement
    }

    pub fn identity_pubkey(&self) -> VerifyingKey {
        self.identity.public_key()
    }

    pub fn stats(&self) -> ControllerStats {
        self.stats
    }

    pub fn token(&self) -> &ManagementToken {
        &self.token
    }

    // ---- Sessions -----------------------------------------------------------

    /// Opens a connection: registers the session's queue and maps its
    /// window into the host's address space.
    pub fn begin_session(&mut self, hw: &mut Hardware, host: EndpointId) -> (u64, u64) {
        let session_id = self.next_session_id;
        self.next_session_id += 1;
        let queue_id = self.next_queue_id;
        self.next_queue_id += 1;
        hw.fabric.register_queue(queue_id);
        hw.fabric
            .map_queue_window(&self.token, queue_id, host)
            .expect("queue just registered");
        self.sessions.insert(
            session_id,
            Session {
                host,
                queue_id,
                phase: SessionPhase::AwaitHello,
                hs_recv: 0,
                hs_send: 0,
            },
        );
        (session_id, queue_id)
    }

    /// Session key once established (diagnostics and tests).
    pub fn session_key(&self, session_id: u64) -> Option<&SessionKey> {
        match &self.sessions.get(&session_id)?.phase {
            SessionPhase::Established { key, .. } => Some(key),
            _ => None,
        }
    }

    // ---- Event processing -----------------------------------------------------

    /// Drains every session's inbound queue and applies any preemptions
    /// whose victims reached a chunk boundary. The single entry point for
    /// all controller work in deterministic mode.
    ///
    /// Two passes keep the event-processor timeline causal: first every
    /// inbound envelope is opened and dispatched (cheap, early work), then
    /// completed outputs are sealed and emitted (late work that must not
    /// retroactively delay the opens).
    pub fn pump(&mut self, hw: &mut Hardware) {
        self.apply_ripe_preemptions(hw);
        let session_ids: Vec<u64> = self.sessions.keys().copied().collect();
        for session_id in session_ids {
            loop {
                let queue_id = self.sessions[&session_id].queue_id;
                let Ok(Some((frame, arrival_ns))) = hw.fabric.queue_pop(queue_id) else {
                    break;
                };
                self.process_frame(hw, session_id, &frame, arrival_ns);
            }
        }
        let task_ids: Vec<u64> = self.enclaves.keys().copied().collect();
        for task_id in task_ids {
            if let Some(enclave) = self.enclaves.get_mut(&task_id) {
                enclave.drain_reorder_buffer();
            }
            self.emit_results(hw, task_id);
        }
        self.apply_ripe_preemptions(hw);
        self.resolve_pending_acks(hw);
    }

    fn process_frame(&mut self, hw: &mut Hardware, session_id: u64, frame: &[u8], arrival_ns: TimeNs) {
        let envelope = match parse_envelope(frame) {
            Ok(env) => env,
            Err(_) => {
                self.stats.dropped_envelopes += 1;
                return;
            }
        };

        let session = self.sessions.get_mut(&session_id).expect("session exists");
        match &mut session.phase {
            SessionPhase::AwaitHello | SessionPhase::AwaitConfirm { .. } => {
                let expected = session.hs_recv;
                let payload = match open_handshake(&envelope, expected, Direction::HostToController)
                {
                    Ok(p) => p,
                    Err(_) => {
                        self.stats.dropped_envelopes += 1;
                        return;
                    }
                };
                session.hs_recv += 1;
                let msg = match HandshakeMsg::parse(&payload) {
                    Ok(m) => m,
                    Err(_) => {
                        self.stats.dropped_envelopes += 1;
                        return;
                    }
                };
                self.advance_handshake(hw, session_id, msg, arrival_ns);
            }
            SessionPhase::Established {
                key,
                recv_seq,
                task_id,
                ..
            } => {
                // Queue discipline: every envelope must carry the queue's
                // task id (zero until the configuration task assigns one).
                let expected_task = task_id.unwrap_or(0);
                if envelope.task_id != expected_task {
                    self.stats.dropped_envelopes += 1;
                    return;
                }
                let body =
                    match open_task(&envelope, &key.key, *recv_seq, Direction::HostToController) {
                        Ok(b) => b,
                        Err(_) => {
                            self.stats.dropped_envelopes += 1;
                            return;
                        }
                    };
                *recv_seq += 1;
                let decoded = match decode_body(envelope.task_type, &body) {
                    Ok(d) => d,
                    Err(_) => {
                        self.stats.dropped_envelopes += 1;
                        return;
                    }
                };
                // Charge the controller's open + dispatch work.
                let start = arrival_ns.max(self.ctrl_free_at);
                let work = self.cost.crypto_ns(envelope.ciphertext.len() as u64)
                    + self.cost.task_processing_ns;
                self.ctrl_free_at = start + work;
                let processed_at = self.ctrl_free_at;

                match decoded {
                    TaskBody::Config(body) => {
                        let _ = self.handle_configuration_task(hw, session_id, &body);
                    }
                    TaskBody::Command(body) => {
                        let task = self.sessions[&session_id].task_of();
                        let charged = Some((work, processed_at));
                        match task {
                            Some(task_id) => {
                                if self
                                    .handle_command_task_inner(hw, task_id, &body.program, charged)
                                    .is_err()
                                {
                                    self.stats.commands_rejected += 1;
                                }
                            }
                            None => self.stats.dropped_envelopes += 1,
                        }
                    }
                    TaskBody::Data(body) => {
                        let task = self.sessions[&session_id].task_of();
                        match task {
                            Some(task_id) => {
                                if self
                                    .handle_data_task_inner(hw, task_id, body, processed_at, work)
                                    .is_err()
                                {
                                    self.stats.dropped_envelopes += 1;
                                }
                            }
                            None => self.stats.dropped_envelopes += 1,
                        }
                    }
                    // Results never flow host → controller.
                    TaskBody::Result(_) => self.stats.dropped_envelopes += 1,
                }
            }
            SessionPhase::Failed => {
                self.stats.dropped_envelopes += 1;
            }
        }
    }

    fn advance_handshake(
        &mut self,
        hw: &mut Hardware,
        session_id: u64,
        msg: HandshakeMsg,
        ready_ns: TimeNs,
    ) {
        let session = self.sessions.get_mut(&session_id).expect("session exists");
        let phase = std::mem::replace(&mut session.phase, SessionPhase::Failed);
        match (phase, msg) {
            (SessionPhase::AwaitHello, hello @ HandshakeMsg::Hello { .. }) => {
                match ControllerHandshake::on_hello(
                    &self.identity,
                    &self.measurement,
                    &mut self.rng,
                    &hello,
                ) {
                    Ok((handshake, reply)) => {
                        let session = self.sessions.get_mut(&session_id).expect("session exists");
                        session.phase = SessionPhase::AwaitConfirm {
                            hello,
                            reply: reply.clone(),
                            handshake,
                        };
                        self.push_handshake_reply(hw, session_id, &reply, ready_ns);
                    }
                    Err(_) => {
                        self.stats.handshake_failures += 1;
                    }
                }
            }
            (
                SessionPhase::AwaitConfirm {
                    hello,
                    reply,
                    handshake,
                },
                confirm @ HandshakeMsg::ClientConfirm { .. },
            ) => match handshake.on_client_confirm(&hello, &reply, &confirm) {
                Ok((ack, key)) => {
                    let session = self.sessions.get_mut(&session_id).expect("session exists");
                    session.phase = SessionPhase::Established {
                        key,
                        recv_seq: 0,
                        send_seq: 0,
                        task_id: None,
                    };
                    self.push_handshake_reply(hw, session_id, &ack, ready_ns);
                }
                Err(_) => {
                    // Aborts without a usable key; nothing is sent back.
                    self.stats.handshake_failures += 1;
                }
            },
            _ => {
                self.stats.handshake_failures += 1;
            }
        }
    }

    fn push_handshake_reply(
        &mut self,
        hw: &mut Hardware,
        session_id: u64,
        msg: &HandshakeMsg,
        ready_ns: TimeNs,
    ) {
        let session = self.sessions.get_mut(&session_id).expect("session exists");
        let envelope = frame_handshake(
            &msg.canonical_bytes(),
            session.hs_send,
            Direction::ControllerToHost,
        );
        session.hs_send += 1;
        let queue_id = session.queue_id;
        let host = session.host;
        let _ = hw
            .fabric
            .queue_push_result(queue_id, host, serialize_envelope(&envelope), ready_ns);
    }

    // ---- Task handling --------------------------------------------------------

    /// Creates the task context for a configuration request: assigns the
    /// task id, brands the session queue with it, registers the scheduler
    /// demand, and (once at least one device is allocated) acks the
    /// requester with (task_id, queue_id).
    pub fn handle_configuration_task(
        &mut self,
        hw: &mut Hardware,
        session_id: u64,
        body: &crate::protocol::ConfigBody,
    ) -> Result<(u64, u64), ControllerError> {
        let session = self
            .sessions
            .get_mut(&session_id)
            .ok_or(ControllerError::UnknownSession(session_id))?;
        let queue_id = session.queue_id;
        let task_id = self.next_task_id;
        self.next_task_id += 1;
        match &mut session.phase {
            SessionPhase::Established { task_id: slot, .. } => *slot = Some(task_id),
            _ => return Err(ControllerError::UnknownSession(session_id)),
        }

        hw.audit
            .record(hw.clock.now_ns(), AuditKind::QueueCreated { queue_id, task_id });

        let enclave = Enclave::new(task_id, queue_id, session_id, body.count, body.priority);
        self.enclaves.insert(task_id, enclave);

        let priority = match body.priority {
            Priority::High => ReqPriority::High,
            Priority::Normal => ReqPriority::Normal,
        };
        let request = SchedulerRequest::new(
            self.next_request_id,
            ReqOrigin::SecureEnclave { task_id },
            priority,
            body.count,
        );
        self.next_request_id += 1;
        self.pending_requests.push(request);
        self.run_scheduler(hw);

        let allocated = self.enclaves[&task_id].devices.len() as u32;
        if allocated == body.count || (self.wait_for_devices && allocated > 0) {
            self.send_config_ack(hw, task_id, 0);
            Ok((task_id, queue_id))
        } else if self.wait_for_devices {
            self.pending_acks.push(task_id);
            Ok((task_id, queue_id))
        } else {
            // Waiting is disabled and the demand cannot be met now: give
            // back whatever this round granted and refuse.
            self.pending_requests.retain(|r| {
                !matches!(r.origin, ReqOrigin::SecureEnclave { task_id: t } if t == task_id)
            });
            let granted: Vec<EndpointId> =
                self.enclaves[&task_id].devices.iter().copied().collect();
            for device in granted {
                self.unassign_from_enclave(device, task_id);
                let book = self.books.get_mut(&device).expect("book exists");
                book.assignment = Assignment::Free;
            }
            self.enclaves.get_mut(&task_id).expect("just inserted").status =
                EnclaveStatus::Closed;
            self.send_config_ack(hw, task_id, 1);
            Err(ControllerError::ResourceExhausted)
        }
    }

    fn send_config_ack(&mut self, hw: &mut Hardware, task_id: u64, status: u8) {
        let enclave = &self.enclaves[&task_id];
        let queue_id = enclave.queue_id;
        let session_id = enclave.session_id;
        let mut payload = vec![status];
        payload.extend_from_slice(&task_id.to_le_bytes());
        payload.extend_from_slice(&queue_id.to_le_bytes());
        let body = encode_body(&TaskBody::Result(ResultBody {
            payload,
            final_chunk: false,
        }));
        let ready = self.ctrl_free_at.max(hw.clock.now_ns());
        self.push_sealed(hw, session_id, TaskType::Result, &body, ready);
    }

    /// Seals `body` under the session key with the controller's send
    /// counter and pushes it to the host side of the session queue.
    fn push_sealed(
        &mut self,
        hw: &mut Hardware,
        session_id: u64,
        task_type: TaskType,
        body: &[u8],
        ready_ns: TimeNs,
    ) -> Option<crate::fabric::DmaRecord> {
        let session = self.sessions.get_mut(&session_id)?;
        let (key, seq, task_id) = match &mut session.phase {
            SessionPhase::Established {
                key,
                send_seq,
                task_id,
                ..
            } => {
                let seq = *send_seq;
                *send_seq += 1;
                (key.key.clone(), seq, task_id.unwrap_or(0))
            }
            _ => return None,
        };
        let mut envelope = seal_task(
            body,
            &key,
            task_id,
            seq,
            task_type,
            Direction::ControllerToHost,
        )
        .expect("bodies are chunked below the size limit");
        if self.tamper_next_result && task_type == TaskType::Result {
            self.tamper_next_result = false;
            if !envelope.ciphertext.is_empty() {
                let last = envelope.ciphertext.len() - 1;
                envelope.ciphertext[last] ^= 0x01;
            }
        }
        let queue_id = session.queue_id;
        let host = session.host;
        hw.fabric
            .queue_push_result(queue_id, host, serialize_envelope(&envelope), ready_ns)
            .ok()
    }

    /// Accepts a command task: validates the program shape, initializes the
    /// enclave's device-side state, and starts the processing loop.
    pub fn handle_command_task(
        &mut self,
        hw: &mut Hardware,
        task_id: u64,
        program: &crate::protocol::TaskProgram,
    ) -> Result<(), ControllerError> {
        self.handle_command_task_inner(hw, task_id, program, None)
    }

    fn handle_command_task_inner(
        &mut self,
        _hw: &mut Hardware,
        task_id: u64,
        program: &crate::protocol::TaskProgram,
        charged: Option<(u64, TimeNs)>,
    ) -> Result<(), ControllerError> {
        let enclave = self
            .enclaves
            .get_mut(&task_id)
            .ok_or(ControllerError::UnknownTask(task_id))?;
        match enclave.status {
            EnclaveStatus::AwaitingCommand => {}
            EnclaveStatus::Running | EnclaveStatus::Draining => {
                return Err(ControllerError::CommandAlreadyActive)
            }
            EnclaveStatus::Closed => return Err(ControllerError::EnclaveNotRunning),
        }
        let validated = validate_program(program).map_err(ControllerError::ProgramInvalid)?;
        if let Some((work_ns, _)) = charged {
            enclave.phases.add(Phase::TaskProcessing, work_ns);
        }
        enclave.program = Some(validated);
        enclave.status = EnclaveStatus::Running;
        Ok(())
    }

    /// Accepts one data chunk into the enclave's input buffer, drives the
    /// program loop, and emits whatever completed.
    pub fn handle_data_task(
        &mut self,
        hw: &mut Hardware,
        task_id: u64,
        body: crate::protocol::DataBody,
    ) -> Result<(), ControllerError> {
        let now = hw.clock.now_ns().max(self.ctrl_free_at);
        self.handle_data_task_inner(hw, task_id, body, now, 0)?;
        if let Some(enclave) = self.enclaves.get_mut(&task_id) {
            enclave.drain_reorder_buffer();
        }
        self.emit_results(hw, task_id);
        Ok(())
    }

    fn handle_data_task_inner(
        &mut self,
        hw: &mut Hardware,
        task_id: u64,
        body: crate::protocol::DataBody,
        processed_at: TimeNs,
        open_work_ns: u64,
    ) -> Result<(), ControllerError> {
        let internal_copy = self.cost.internal_copy_ns(body.payload.len() as u64);
        let enclave = self
            .enclaves
            .get_mut(&task_id)
            .ok_or(ControllerError::UnknownTask(task_id))?;
        if enclave.status != EnclaveStatus::Running {
            return Err(ControllerError::EnclaveNotRunning);
        }
        enclave.phases.add(Phase::TaskProcessing, open_work_ns);
        enclave.phases.add(Phase::InternalTaskCopy, internal_copy);
        let index = enclave.next_input_index;
        enclave.next_input_index += 1;
        enclave.input_buffer.push_back(InputChunk {
            index,
            data: body.payload,
            ready_ns: processed_at + internal_copy,
        });
        if body.final_chunk {
            enclave.final_seen = true;
            enclave.status = EnclaveStatus::Draining;
        }
        self.dispatch_chunks(hw, task_id);
        Ok(())
    }

    /// Dispatches buffered chunks round-robin across the enclave's
    /// devices; outputs land in the reorder buffer.
    fn dispatch_chunks(&mut self, hw: &mut Hardware, task_id: u64) {
        loop {
            let enclave = match self.enclaves.get_mut(&task_id) {
                Some(e) => e,
                None => return,
            };
            if enclave.input_buffer.is_empty() {
                break;
            }
            // Chunk boundary: honor any pending preemption on the device
            // about to be used before handing it more work.
            let Some(device_id) = enclave.next_device() else {
                break; // paused: no devices until the scheduler grants again
            };
            if self.pending_preemptions.contains_key(&device_id) {
                self.apply_preemption(hw, device_id);
                continue;
            }

            let enclave = self.enclaves.get_mut(&task_id).expect("checked above");
            let program = enclave.program.clone().expect("running enclave has a program");
            let chunk = enclave.input_buffer.pop_front().expect("non-empty");
            if chunk.data.len() as u64 > program.buffer_bytes {
                // Oversized for the allocated device buffer; drop silently.
                self.stats.dropped_envelopes += 1;
                continue;
            }

            // Copy in, compute, copy out; all on the device's own timeline.
            let controller = EndpointId::controller();
            let copy_in = match hw.fabric.dma_transfer_at(
                controller,
                device_id,
                chunk.data.len() as u64,
                chunk.ready_ns,
            ) {
                Ok(rec) => rec,
                Err(_) => {
                    self.stats.dropped_envelopes += 1;
                    continue;
                }
            };
            let device = hw.devices.get_mut(&device_id).expect("device exists");
            let start = copy_in.end_ns.max(device.busy_until_ns());
            let spec = KernelSpec {
                kind: program.kernel,
                task_id,
                touched: program.touched,
            };
            let sentinel = self.rng.next_u64();
            let run = match device.execute_kernel(&spec, &chunk.data, start, sentinel) {
                Ok(run) => run,
                Err(_) => {
                    self.stats.dropped_envelopes += 1;
                    continue;
                }
            };
            let copy_out = hw
                .fabric
                .dma_transfer_at(device_id, controller, run.output.len() as u64, run.end_ns)
                .expect("secure device remains routed to the controller");
            hw.clock.advance_to(copy_out.end_ns);

            let enclave = self.enclaves.get_mut(&task_id).expect("still present");
            enclave.phases.add(
                Phase::AccelCompute,
                copy_in.latency_ns() + run.elapsed_ns() + copy_out.latency_ns(),
            );
            enclave.pending_outputs.insert(
                chunk.index,
                OutputChunk {
                    index: chunk.index,
                    data: run.output,
                    ready_ns: copy_out.end_ns,
                },
            );
        }
    }

    /// Seals and sends everything in the enclave's output buffer, in input
    /// order, under the controller-side sequence counter.
    pub fn emit_results(&mut self, hw: &mut Hardware, task_id: u64) {
        loop {
            let enclave = match self.enclaves.get_mut(&task_id) {
                Some(e) => e,
                None => return,
            };
            let Some(chunk) = enclave.output_buffer.pop_front() else {
                break;
            };
            let session_id = enclave.session_id;
            let final_chunk = enclave.final_seen && chunk.index + 1 == enclave.next_input_index;
            let copy_ns = self.cost.internal_copy_ns(chunk.data.len() as u64);
            let seal_ns = self.cost.crypto_ns(chunk.data.len() as u64);

            let start = (chunk.ready_ns + copy_ns).max(self.ctrl_free_at);
            self.ctrl_free_at = start + seal_ns;
            let ready = self.ctrl_free_at;

            let enclave = self.enclaves.get_mut(&task_id).expect("present");
            enclave.phases.add(Phase::InternalResultCopy, copy_ns);
            enclave.phases.add(Phase::TaskProcessing, seal_ns);
            enclave.results_emitted += 1;

            let body = encode_body(&TaskBody::Result(ResultBody {
                payload: chunk.data,
                final_chunk,
            }));
            if let Some(record) = self.push_sealed(hw, session_id, TaskType::Result, &body, ready) {
                let enclave = self.enclaves.get_mut(&task_id).expect("present");
                enclave
                    .phases
                    .add(Phase::HostReceiveResult, record.latency_ns());
            }
        }

        let enclave = match self.enclaves.get(&task_id) {
            Some(e) => e,
            None => return,
        };
        if enclave.status == EnclaveStatus::Draining && enclave.fully_drained() {
            self.release_enclave(hw, task_id);
        }
    }

    /// Tears down a drained enclave: devices go back to the free pool
    /// (parked in the secure world), the queue is retired, and waiting
    /// requests get a scheduling round.
    fn release_enclave(&mut self, hw: &mut Hardware, task_id: u64) {
        let enclave = self.enclaves.get_mut(&task_id).expect("release target exists");
        enclave.status = EnclaveStatus::Closed;
        let queue_id = enclave.queue_id;
        let devices: Vec<EndpointId> = enclave.devices.iter().copied().collect();
        enclave.devices.clear();
        for device in devices {
            let book = self.books.get_mut(&device).expect("book exists");
            book.assignment = Assignment::Free;
            book.last_task = Some(task_id);
        }
        hw.audit.record(
            hw.clock.now_ns(),
            AuditKind::QueueDestroyed { queue_id, task_id },
        );
        // Drop any unfilled demand left over from this task.
        self.pending_requests.retain(|r| {
            !matches!(r.origin, ReqOrigin::SecureEnclave { task_id: t } if t == task_id)
        });
        self.run_scheduler(hw);
        self.resolve_pending_acks(hw);
    }

    /// Out-of-band, unauthenticated host request to get devices for
    /// insecure-world use. Best effort by definition.
    pub fn host_release_request(&mut self, hw: &mut Hardware, count: u32) {
        let request = SchedulerRequest::new(
            self.next_request_id,
            ReqOrigin::HostInsecure,
            ReqPriority::BestEffort,
            count,
        );
        self.next_request_id += 1;
        self.pending_requests.push(request);
        self.run_scheduler(hw);
    }

    /// Devices currently granted to the host's insecure world.
    pub fn host_devices(&self) -> Vec<EndpointId> {
        self.books
            .iter()
            .filter(|(_, b)| b.assignment == Assignment::Host)
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn enclave_devices(&self, task_id: u64) -> Vec<EndpointId> {
        self.enclaves
            .get(&task_id)
            .map(|e| e.devices.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn enclave_status(&self, task_id: u64) -> Option<EnclaveStatus> {
        self.enclaves.get(&task_id).map(|e| e.status)
    }

    pub fn enclave_phases(&self, task_id: u64) -> Option<PhaseAccumulator> {
        self.enclaves.get(&task_id).map(|e| e.phases)
    }

    /// Keyed buffer access: the only path to an enclave's buffers. A
    /// non-matching caller gets an access error, never data.
    pub fn enclave_buffer_len(
        &self,
        caller_task_id: u64,
        target_task_id: u64,
    ) -> Result<(usize, usize), ControllerError> {
        if caller_task_id != target_task_id {
            return Err(ControllerError::BufferAccessDenied {
                caller: caller_task_id,
            });
        }
        let enclave = self
            .enclaves
            .get(&target_task_id)
            .ok_or(ControllerError::UnknownTask(target_task_id))?;
        Ok((enclave.input_buffer.len(), enclave.output_buffer.len()))
    }

    // ---- Scheduling and world switching ----------------------------------------

    fn pool_view(&self, hw: &Hardware) -> PoolView {
        let now = hw.clock.now_ns();
        let devices = self
            .books
            .iter()
            .map(|(id, book)| {
                let busy = hw
                    .devices
                    .get(id)
                    .map(|d| d.is_busy_at(now))
                    .unwrap_or(false);
                let state = match book.assignment {
                    Assignment::Free => DeviceState::Free {
                        world: hw.fabric.world_of(*id).expect("routed device"),
                    },
                    Assignment::Host => DeviceState::InsecureActive { busy },
                    Assignment::Enclave(task_id) => {
                        let priority = match self.enclaves[&task_id].priority {
                            Priority::High => ReqPriority::High,
                            Priority::Normal => ReqPriority::Normal,
                        };
                        DeviceState::SecureAssigned {
                            task_id,
                            priority,
                            busy,
                        }
                    }
                };
                (*id, state)
            })
            .collect();
        PoolView { devices }
    }

    /// One scheduling round: plan against the current pool view, then
    /// apply every grant through the mandated transition path.
    pub fn run_scheduler(&mut self, hw: &mut Hardware) {
        // Devices reserved for a deferred preemption are not up for grabs.
        let mut view = self.pool_view(hw);
        for device in self.pending_preemptions.keys() {
            view.devices.remove(device);
        }
        let decided = plan(&view, &self.pending_requests);

        for grant in &decided.grants {
            let request = *self
                .pending_requests
                .iter()
                .find(|r| r.id == grant.request_id)
                .expect("grant references a pending request");
            match (request.origin, grant.acquisition) {
                (ReqOrigin::SecureEnclave { task_id }, Acquisition::FromFree { world }) => {
                    match world {
                        World::Insecure => {
                            self.switch_world(hw, grant.device, World::Secure, SwitchReason::Allocation)
                                .expect("allocation switch succeeds");
                        }
                        World::Secure => {
                            self.task_switch(hw, grant.device, task_id);
                        }
                    }
                    self.assign_to_enclave(grant.device, task_id);
                }
                (ReqOrigin::SecureEnclave { task_id }, Acquisition::PreemptInsecure) => {
                    let now = hw.clock.now_ns();
                    if let Some(device) = hw.devices.get_mut(&grant.device) {
                        device.halt(now);
                    }
                    hw.audit.record(
                        now,
                        AuditKind::Preemption {
                            device: grant.device,
                            victim: PreemptionVictim::InsecureWorld,
                            beneficiary_task: task_id,
                        },
                    );
                    self.switch_world(hw, grant.device, World::Secure, SwitchReason::Preemption)
                        .expect("preemption switch succeeds");
                    self.assign_to_enclave(grant.device, task_id);
                }
                (
                    ReqOrigin::SecureEnclave { task_id },
                    Acquisition::PreemptSecure {
                        victim_task,
                        deferred,
                    },
                ) => {
                    if deferred {
                        self.pending_preemptions.insert(
                            grant.device,
                            PendingPreemption {
                                beneficiary_task: task_id,
                                victim_task,
                            },
                        );
                    } else {
                        hw.audit.record(
                            hw.clock.now_ns(),
                            AuditKind::Preemption {
                                device: grant.device,
                                victim: PreemptionVictim::SecureEnclave {
                                    task_id: victim_task,
                                },
                                beneficiary_task: task_id,
                            },
                        );
                        self.unassign_from_enclave(grant.device, victim_task);
                        self.task_switch(hw, grant.device, task_id);
                        self.assign_to_enclave(grant.device, task_id);
                    }
                }
                (ReqOrigin::HostInsecure, Acquisition::FromFree { world }) => {
                    if world == World::Secure {
                        self.switch_world(hw, grant.device, World::Insecure, SwitchReason::Release)
                            .expect("release switch succeeds");
                    }
                    let book = self.books.get_mut(&grant.device).expect("book exists");
                    book.assignment = Assignment::Host;
                }
                (ReqOrigin::HostInsecure, _) => {
                    unreachable!("host requests never preempt")
                }
            }
            // Account the grant against the request's outstanding demand.
            let request = self
                .pending_requests
                .iter_mut()
                .find(|r| r.id == grant.request_id)
                .expect("still pending");
            request.demand -= 1;
        }
        self.pending_requests.retain(|r| r.demand > 0);
    }

    fn assign_to_enclave(&mut self, device: EndpointId, task_id: u64) {
        let book = self.books.get_mut(&device).expect("book exists");
        book.assignment = Assignment::Enclave(task_id);
        book.last_task = Some(task_id);
        self.enclaves
            .get_mut(&task_id)
            .expect("enclave exists")
            .devices
            .insert(device);
    }

    fn unassign_from_enclave(&mut self, device: EndpointId, task_id: u64) {
        if let Some(enclave) = self.enclaves.get_mut(&task_id) {
            enclave.devices.remove(&device);
        }
    }

    /// Applies deferred preemptions whose victim device has reached a chunk
    /// boundary (idle at the current virtual time).
    fn apply_ripe_preemptions(&mut self, hw: &mut Hardware) {
        let now = hw.clock.now_ns();
        let ripe: Vec<EndpointId> = self
            .pending_preemptions
            .keys()
            .copied()
            .filter(|d| {
                hw.devices
                    .get(d)
                    .map(|dev| !dev.is_busy_at(now))
                    .unwrap_or(false)
            })
            .collect();
        for device in ripe {
            self.apply_preemption(hw, device);
        }
    }

    fn apply_preemption(&mut self, hw: &mut Hardware, device: EndpointId) {
        let Some(pending) = self.pending_preemptions.remove(&device) else {
            return;
        };
        hw.audit.record(
            hw.clock.now_ns().max(
                hw.devices
                    .get(&device)
                    .map(|d| d.busy_until_ns())
                    .unwrap_or(0),
            ),
            AuditKind::Preemption {
                device,
                victim: PreemptionVictim::SecureEnclave {
                    task_id: pending.victim_task,
                },
                beneficiary_task: pending.beneficiary_task,
            },
        );
        self.unassign_from_enclave(device, pending.victim_task);
        self.task_switch(hw, device, pending.beneficiary_task);
        self.assign_to_enclave(device, pending.beneficiary_task);
        self.resolve_pending_acks(hw);
    }

    fn resolve_pending_acks(&mut self, hw: &mut Hardware) {
        let ready: Vec<u64> = self
            .pending_acks
            .iter()
            .copied()
            .filter(|task| {
                self.enclaves
                    .get(task)
                    .map(|e| !e.devices.is_empty())
                    .unwrap_or(false)
            })
            .collect();
        self.pending_acks.retain(|t| !ready.contains(t));
        for task in ready {
            self.send_config_ack(hw, task, 0);
        }
    }

    /// Moves a device across the secure/insecure boundary. The device is
    /// restored to a trusted state *before* the routing change, in both
    /// directions, and the audit trail shows Cleanup then WorldSwitch.
    pub fn switch_world(
        &mut self,
        hw: &mut Hardware,
        device_id: EndpointId,
        target: World,
        reason: SwitchReason,
    ) -> Result<(), ControllerError> {
        let current = hw
            .fabric
            .world_of(device_id)
            .ok_or(crate::fabric::FabricError::UnknownDevice(device_id))?;
        if current == target {
            return Ok(());
        }
        if reason == SwitchReason::Preemption {
            if let Some(device) = hw.devices.get_mut(&device_id) {
                device.halt(hw.clock.now_ns());
            }
        }
        let device = hw
            .devices
            .get_mut(&device_id)
            .ok_or(crate::fabric::FabricError::UnknownDevice(device_id))?;
        let at = hw.clock.now_ns().max(device.busy_until_ns());
        let report = device.reset_to_trusted_state(at);
        let done = at + report.elapsed_ns;
        hw.clock.advance_to(done);
        hw.audit.record(
            done,
            AuditKind::Cleanup {
                device: device_id,
                method: report.method,
                residual: report.residual.iter().copied().collect(),
            },
        );
        let owner = match target {
            World::Secure => EndpointId::controller(),
            World::Insecure => hw.fabric.hosts()[0],
        };
        hw.fabric
            .configure_route(&mut hw.audit, &self.token, device_id, owner, target)?;
        Ok(())
    }

    /// Reassigns a device between secure-world occupants: trusted-state
    /// reset, then a TaskSwitch audit record. No routing change.
    fn task_switch(&mut self, hw: &mut Hardware, device_id: EndpointId, to_task: u64) {
        let from_task = self.books.get(&device_id).and_then(|b| b.last_task);
        let device = hw.devices.get_mut(&device_id).expect("device exists");
        let at = hw.clock.now_ns().max(device.busy_until_ns());
        let report = device.reset_to_trusted_state(at);
        let done = at + report.elapsed_ns;
        hw.clock.advance_to(done);
        hw.audit.record(
            done,
            AuditKind::Cleanup {
                device: device_id,
                method: report.method,
                residual: report.residual.iter().copied().collect(),
            },
        );
        hw.audit.record(
            done,
            AuditKind::TaskSwitch {
                device: device_id,
                from_task,
                to_task,
            },
        );
    }
}

impl Session {
    fn task_of(&self) -> Option<u64> {
        match &self.phase {
            SessionPhase::Established { task_id, .. } => *task_id,
            _ => None,
        }
    }
}
