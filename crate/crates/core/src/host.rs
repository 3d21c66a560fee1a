//! Host-side client library.
//!
//! Drives the producer loop against a simulation: attest the controller
//! and open a session, send the command task, stream sealed data chunks,
//! and collect sealed results in input order. Also provides the
//! unprotected direct path used as the measurement baseline — same
//! kernels, no sealing, no controller hop, no cleanup between chunks.

use thiserror::Error;

use crate::accel::{KernelKind, KernelSpec, RegionSet};
use crate::attest::{AttestError, ClientHandshake, HandshakeMsg, SessionKey};
use crate::controller::INSECURE_TASK_ID;
use crate::fabric::EndpointId;
use crate::metrics::{Phase, PhaseAccumulator};
use crate::protocol::{
    decode_body, encode_body, frame_handshake, open_handshake, open_task, parse_envelope,
    seal_task, serialize_envelope, CommandBody, ConfigBody, DataBody, Direction, Priority,
    ProtocolError, TaskBody, TaskProgram, TaskType, MAX_BODY_LEN,
};
use crate::sim::Simulation;
use crate::time::TimeNs;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HostError {
    #[error(transparent)]
    Attestation(#[from] AttestError),
    #[error("timed out waiting for the controller")]
    Timeout,
    #[error("controller rejected the configuration: device pool exhausted")]
    ResourceExhausted,
    #[error("result stream ended with gaps (missing or rejected results)")]
    ResultGap,
    #[error("insufficient insecure-world devices available")]
    DevicesUnavailable,
    #[error("protocol: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("fabric: {0}")]
    Fabric(#[from] crate::fabric::FabricError),
}

/// Established client session over one task queue.
#[derive(Debug)]
pub struct ClientSession {
    pub session_id: u64,
    pub queue_id: u64,
    pub task_id: u64,
    pub key: SessionKey,
    pub send_seq: u64,
    pub recv_seq: u64,
    host: EndpointId,
    /// Host CPU as a serial resource.
    host_free_at: TimeNs,
}

/// What to run and how: the program, its input chunks, device demand, and
/// queue priority.
#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub program: TaskProgram,
    pub chunks: Vec<Vec<u8>>,
    pub demand: u32,
    pub priority: Priority,
}

impl WorkloadSpec {
    pub fn kernel(&self) -> Option<KernelKind> {
        self.program.instructions.iter().find_map(|i| match i {
            crate::protocol::Instruction::LaunchKernel { kind, .. } => Some(*kind),
            _ => None,
        })
    }
}

/// Outcome of one workload run: plaintext outputs in input order, the
/// latency breakdown, and the virtual window it occupied.
#[derive(Debug)]
pub struct WorkloadOutcome {
    pub outputs: Vec<Vec<u8>>,
    pub phases: PhaseAccumulator,
    pub start_ns: TimeNs,
    pub end_ns: TimeNs,
    /// Results that failed authentication or arrived out of order.
    pub rejected: Vec<ProtocolError>,
}

impl WorkloadOutcome {
    pub fn elapsed_ns(&self) -> u64 {
        self.end_ns - self.start_ns
    }
}

/// Runs the attestation flow against the simulation's controller and opens
/// a session: four handshake messages, then a configuration task sized to
/// `demand` devices. Nothing of a failed handshake is retained.
pub fn attest_and_connect(
    sim: &mut Simulation,
    expected_measurement: [u8; 32],
    demand: u32,
    priority: Priority,
) -> Result<ClientSession, HostError> {
    let host = sim.host();
    let (session_id, queue_id) = sim.controller.begin_session(&mut sim.hw, host);

    // M1: hello.
    let (client, hello) = ClientHandshake::start(
        &mut sim.host_rng,
        sim.controller.identity_pubkey(),
        expected_measurement,
    );
    let mut hs_send = 0u64;
    let mut hs_recv = 0u64;
    push_handshake(sim, host, queue_id, &hello, &mut hs_send)?;
    sim.controller.pump(&mut sim.hw);

    // M2: quote.
    let reply = pull_handshake(sim, host, queue_id, &mut hs_recv)?;
    let (pending, confirm) = client.on_quote(&reply)?;

    // M3: client confirmation.
    push_handshake(sim, host, queue_id, &confirm, &mut hs_send)?;
    sim.controller.pump(&mut sim.hw);

    // M4: controller confirmation.
    let ack = pull_handshake(sim, host, queue_id, &mut hs_recv)?;
    let key = pending.on_controller_confirm(&ack)?;

    let mut session = ClientSession {
        session_id,
        queue_id,
        task_id: 0,
        key,
        send_seq: 0,
        recv_seq: 0,
        host,
        host_free_at: sim.hw.clock.now_ns(),
    };

    // Configuration task: request the queue and the device allocation.
    let body = encode_body(&TaskBody::Config(ConfigBody {
        accel_type: "accel".to_string(),
        count: demand,
        priority,
    }));
    send_sealed(sim, &mut session, TaskType::Configuration, &body, None)?;
    sim.controller.pump(&mut sim.hw);

    let (ack_body, _env, _arrival) = recv_sealed(sim, &mut session)?;
    let ack = match decode_body(TaskType::Result, &ack_body) {
        Ok(TaskBody::Result(r)) => r,
        _ => return Err(HostError::Protocol(ProtocolError::MalformedBody)),
    };
    let (status, task_id, acked_queue) = parse_config_ack(&ack.payload)?;
    if status != 0 {
        return Err(HostError::ResourceExhausted);
    }
    debug_assert_eq!(acked_queue, queue_id);
    session.task_id = task_id;
    Ok(session)
}

fn parse_config_ack(payload: &[u8]) -> Result<(u8, u64, u64), HostError> {
    if payload.len() != 17 {
        return Err(HostError::Protocol(ProtocolError::MalformedBody));
    }
    let status = payload[0];
    let task_id = u64::from_le_bytes(payload[1..9].try_into().expect("8 bytes"));
    let queue_id = u64::from_le_bytes(payload[9..17].try_into().expect("8 bytes"));
    Ok((status, task_id, queue_id))
}

fn push_handshake(
    sim: &mut Simulation,
    host: EndpointId,
    queue_id: u64,
    msg: &HandshakeMsg,
    hs_send: &mut u64,
) -> Result<(), HostError> {
    let envelope = frame_handshake(&msg.canonical_bytes(), *hs_send, Direction::HostToController);
    *hs_send += 1;
    sim.hw
        .fabric
        .window_push(host, queue_id, serialize_envelope(&envelope), sim.hw.clock.now_ns())?;
    Ok(())
}

fn pull_handshake(
    sim: &mut Simulation,
    host: EndpointId,
    queue_id: u64,
    hs_recv: &mut u64,
) -> Result<HandshakeMsg, HostError> {
    if sim.drop_next_handshake_reply {
        sim.drop_next_handshake_reply = false;
        let _ = sim.hw.fabric.window_pull(host, queue_id)?;
        return Err(HostError::Timeout);
    }
    let Some((frame, _arrival)) = sim.hw.fabric.window_pull(host, queue_id)? else {
        return Err(HostError::Timeout);
    };
    let envelope = parse_envelope(&frame)?;
    let payload = open_handshake(&envelope, *hs_recv, Direction::ControllerToHost)?;
    *hs_recv += 1;
    HandshakeMsg::parse(&payload).map_err(HostError::from)
}

/// Seals one body and pushes it through the session window, charging the
/// host's seal time and the transfer to the given phase.
fn send_sealed(
    sim: &mut Simulation,
    session: &mut ClientSession,
    task_type: TaskType,
    body: &[u8],
    phases: Option<&mut PhaseAccumulator>,
) -> Result<(), HostError> {
    let seal_ns = sim.config.cost.crypto_ns(body.len() as u64);
    let start = session.host_free_at.max(sim.hw.clock.now_ns());
    session.host_free_at = start + seal_ns;

    let envelope = seal_task(
        body,
        &session.key.key,
        session.task_id,
        session.send_seq,
        task_type,
        Direction::HostToController,
    )?;
    session.send_seq += 1;
    let record = sim.hw.fabric.window_push(
        session.host,
        session.queue_id,
        serialize_envelope(&envelope),
        session.host_free_at,
    )?;
    if let Some(phases) = phases {
        phases.add(Phase::HostSendTask, seal_ns + record.latency_ns());
    }
    Ok(())
}

/// Pulls and opens the next sealed envelope from the session window.
fn recv_sealed(
    sim: &mut Simulation,
    session: &mut ClientSession,
) -> Result<(Vec<u8>, crate::protocol::TaskEnvelope, TimeNs), HostError> {
    let Some((frame, arrival)) = sim.hw.fabric.window_pull(session.host, session.queue_id)? else {
        return Err(HostError::Timeout);
    };
    let envelope = parse_envelope(&frame)?;
    let body = open_task(
        &envelope,
        &session.key.key,
        session.recv_seq,
        Direction::ControllerToHost,
    )?;
    session.recv_seq += 1;
    Ok((body, envelope, arrival))
}

/// Sends the command, streams the data chunks, and collects results in
/// input order. Per-phase virtual timestamps land in the outcome.
pub fn submit_workload(
    sim: &mut Simulation,
    session: &mut ClientSession,
    spec: &WorkloadSpec,
) -> Result<WorkloadOutcome, HostError> {
    let start_ns = sim.hw.clock.now_ns();
    let mut phases = PhaseAccumulator::default();

    // Input preparation, paid once per batch.
    let prep = sim.config.cost.preprocessing_ns;
    phases.add(Phase::DataPreprocessing, prep);
    session.host_free_at = session.host_free_at.max(start_ns) + prep;

    // Command task.
    let body = encode_body(&TaskBody::Command(CommandBody {
        program: spec.program.clone(),
    }));
    send_sealed(sim, session, TaskType::Command, &body, Some(&mut phases))?;

    // Data tasks, chunked at the envelope body limit.
    let total = spec.chunks.len();
    for (i, chunk) in spec.chunks.iter().enumerate() {
        debug_assert!(chunk.len() + 1 <= MAX_BODY_LEN, "host library chunks below the limit");
        let body = encode_body(&TaskBody::Data(DataBody {
            payload: chunk.clone(),
            final_chunk: i + 1 == total,
        }));
        send_sealed(sim, session, TaskType::Data, &body, Some(&mut phases))?;
    }
    sim.controller.pump(&mut sim.hw);

    // Collect results until the final marker.
    let mut outputs = Vec::new();
    let mut rejected = Vec::new();
    let mut end_ns = sim.hw.clock.now_ns();
    let mut saw_final = total == 0;
    while !saw_final {
        let Some((frame, arrival)) =
            sim.hw.fabric.window_pull(session.host, session.queue_id)?
        else {
            break;
        };
        let envelope = match parse_envelope(&frame) {
            Ok(env) => env,
            Err(e) => {
                rejected.push(e);
                continue;
            }
        };
        match open_task(
            &envelope,
            &session.key.key,
            session.recv_seq,
            Direction::ControllerToHost,
        ) {
            Ok(body) => {
                session.recv_seq += 1;
                let open_ns = sim.config.cost.crypto_ns(envelope.ciphertext.len() as u64);
                phases.add(Phase::HostReceiveResult, open_ns);
                let done = arrival.max(session.host_free_at) + open_ns;
                session.host_free_at = done;
                end_ns = end_ns.max(done);
                match decode_body(TaskType::Result, &body) {
                    Ok(TaskBody::Result(result)) => {
                        outputs.push(result.payload);
                        if result.final_chunk {
                            saw_final = true;
                        }
                    }
                    _ => rejected.push(ProtocolError::MalformedBody),
                }
            }
            Err(e) => {
                // Tampered or out-of-order result: surfaced, excluded, and
                // the counter holds so a re-send could still be accepted.
                rejected.push(e);
            }
        }
    }
    sim.hw.clock.advance_to(end_ns);

    // Controller-side share of the breakdown.
    if let Some(controller_phases) = sim.controller.enclave_phases(session.task_id) {
        phases.merge(&controller_phases);
    }

    if !saw_final && total > 0 {
        return Err(HostError::ResultGap);
    }
    Ok(WorkloadOutcome {
        outputs,
        phases,
        start_ns,
        end_ns,
        rejected,
    })
}

/// The unprotected baseline: same kernels on host-owned insecure devices,
/// no sealing, no controller hop, no cleanup between chunks.
pub fn run_direct_insecure(
    sim: &mut Simulation,
    demand: u32,
    spec: &WorkloadSpec,
) -> Result<WorkloadOutcome, HostError> {
    let host = sim.host();
    let mut devices = sim.controller.host_devices();
    if (devices.len() as u32) < demand {
        // Ask the controller to release idle devices to the insecure world.
        sim.controller
            .host_release_request(&mut sim.hw, demand - devices.len() as u32);
        devices = sim.controller.host_devices();
    }
    if (devices.len() as u32) < demand {
        return Err(HostError::DevicesUnavailable);
    }
    devices.truncate(demand as usize);
    devices.sort();

    let kernel = spec
        .kernel()
        .ok_or(HostError::Protocol(ProtocolError::MalformedBody))?;
    let touched = RegionSet::all();

    let start_ns = sim.hw.clock.now_ns();
    let mut phases = PhaseAccumulator::default();
    let prep = sim.config.cost.preprocessing_ns;
    phases.add(Phase::DataPreprocessing, prep);
    let host_ready = start_ns + prep;

    let mut outputs = Vec::with_capacity(spec.chunks.len());
    let mut end_ns = host_ready;
    for (i, chunk) in spec.chunks.iter().enumerate() {
        let device_id = devices[i % devices.len()];
        let copy_in =
            sim.hw
                .fabric
                .dma_transfer_at(host, device_id, chunk.len() as u64, host_ready)?;
        let device = sim.hw.devices.get_mut(&device_id).expect("device exists");
        let at = copy_in.end_ns.max(device.busy_until_ns());
        let sentinel = rand::RngCore::next_u64(&mut sim.host_rng);
        let spec = KernelSpec {
            kind: kernel,
            task_id: INSECURE_TASK_ID,
            touched,
        };
        let run = device
            .execute_kernel(&spec, chunk, at, sentinel)
            .map_err(|_| HostError::Protocol(ProtocolError::MalformedBody))?;
        let copy_out =
            sim.hw
                .fabric
                .dma_transfer_at(device_id, host, run.output.len() as u64, run.end_ns)?;
        phases.add(
            Phase::AccelCompute,
            copy_in.latency_ns() + run.elapsed_ns() + copy_out.latency_ns(),
        );
        end_ns = end_ns.max(copy_out.end_ns);
        outputs.push(run.output);
    }
    sim.hw.clock.advance_to(end_ns);
    Ok(WorkloadOutcome {
        outputs,
        phases,
        start_ns,
        end_ns,
        rejected: Vec::new(),
    })
}
