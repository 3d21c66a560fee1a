//! Socket transport.
//!
//! Frames are the envelope bytes prefixed with a 4-byte big-endian total
//! length — the same envelope layout the in-process window transport
//! carries. The controller side is a single-writer service: one simulation
//! behind a mutex, one session per connection, and replies are flushed
//! after each inbound frame (the client protocol is strictly
//! send-then-read, so every read is preceded by the write that triggers
//! it).

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::RngCore;
use thiserror::Error;

use crate::attest::{AttestError, ClientHandshake, HandshakeMsg, SessionKey};
use crate::protocol::{
    decode_body, encode_body, frame_handshake, open_handshake, open_task, parse_envelope,
    seal_task, serialize_envelope, CommandBody, ConfigBody, DataBody, Direction, Priority,
    ProtocolError, TaskBody, TaskProgram, TaskType,
};
use crate::sim::Simulation;

const MAX_FRAME_LEN: usize = 17 * 1024 * 1024;

pub fn write_frame(stream: &mut impl Write, bytes: &[u8]) -> io::Result<()> {
    stream.write_all(&(bytes.len() as u32).to_be_bytes())?;
    stream.write_all(bytes)?;
    stream.flush()
}

pub fn read_frame(stream: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut buf = vec![0u8; len];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}

/// Serves one controller simulation on `listener` until the listener
/// errors. One thread and one session per connection.
pub fn serve(listener: TcpListener, sim: Arc<Mutex<Simulation>>) -> io::Result<()> {
    loop {
        let (stream, _addr) = listener.accept()?;
        let sim = Arc::clone(&sim);
        std::thread::spawn(move || {
            let _ = serve_connection(stream, sim);
        });
    }
}

fn serve_connection(mut stream: TcpStream, sim: Arc<Mutex<Simulation>>) -> io::Result<()> {
    let (queue_id, host) = {
        let mut sim = sim.lock().expect("simulation lock");
        let host = sim.host();
        let Simulation { hw, controller, .. } = &mut *sim;
        let (_session_id, queue_id) = controller.begin_session(hw, host);
        (queue_id, host)
    };
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(f) => f,
            Err(_) => return Ok(()), // client hung up
        };
        let replies = {
            let mut sim = sim.lock().expect("simulation lock");
            let now = sim.hw.clock.now_ns();
            let _ = sim.hw.fabric.window_push(host, queue_id, frame, now);
            let Simulation { hw, controller, .. } = &mut *sim;
            controller.pump(hw);
            let mut out = Vec::new();
            while let Ok(Some((reply, _t))) = sim.hw.fabric.window_pull(host, queue_id) {
                out.push(reply);
            }
            out
        };
        for reply in replies {
            write_frame(&mut stream, &reply)?;
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Attest(#[from] AttestError),
    #[error("controller rejected the configuration")]
    ConfigRejected,
    #[error("unexpected reply")]
    UnexpectedReply,
}

/// Minimal socket client: attests the remote controller, opens a queue,
/// and runs sealed workloads over TCP.
pub struct SocketClient {
    stream: TcpStream,
    hs_send: u64,
    hs_recv: u64,
    send_seq: u64,
    recv_seq: u64,
    task_id: u64,
    session: Option<SessionKey>,
}

impl SocketClient {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> io::Result<Self> {
        let addrs: Vec<_> = addr.to_socket_addrs()?.collect();
        let stream = TcpStream::connect(addrs.as_slice())?;
        stream.set_read_timeout(Some(timeout))?;
        Ok(Self {
            stream,
            hs_send: 0,
            hs_recv: 0,
            send_seq: 0,
            recv_seq: 0,
            task_id: 0,
            session: None,
        })
    }

    fn send_handshake(&mut self, msg: &HandshakeMsg) -> Result<(), ClientError> {
        let env = frame_handshake(&msg.canonical_bytes(), self.hs_send, Direction::HostToController);
        self.hs_send += 1;
        write_frame(&mut self.stream, &serialize_envelope(&env))?;
        Ok(())
    }

    fn recv_handshake(&mut self) -> Result<HandshakeMsg, ClientError> {
        let frame = read_frame(&mut self.stream)?;
        let env = parse_envelope(&frame)?;
        let payload = open_handshake(&env, self.hs_recv, Direction::ControllerToHost)?;
        self.hs_recv += 1;
        Ok(HandshakeMsg::parse(&payload)?)
    }

    /// Runs the four-message attestation flow against the remote
    /// controller. On success the session key is installed.
    pub fn attest(
        &mut self,
        rng: &mut impl RngCore,
        device_pubkey: ed25519_dalek::VerifyingKey,
        expected_measurement: [u8; 32],
    ) -> Result<(), ClientError> {
        let (client, hello) = ClientHandshake::start(rng, device_pubkey, expected_measurement);
        self.send_handshake(&hello)?;
        let quote = self.recv_handshake()?;
        let (pending, confirm) = client.on_quote(&quote)?;
        self.send_handshake(&confirm)?;
        let ack = self.recv_handshake()?;
        self.session = Some(pending.on_controller_confirm(&ack)?);
        Ok(())
    }

    fn send_sealed(&mut self, task_type: TaskType, body: &[u8]) -> Result<(), ClientError> {
        let key = self.session.as_ref().expect("session established").key.clone();
        let env = seal_task(
            body,
            &key,
            self.task_id,
            self.send_seq,
            task_type,
            Direction::HostToController,
        )?;
        self.send_seq += 1;
        write_frame(&mut self.stream, &serialize_envelope(&env))?;
        Ok(())
    }

    fn recv_sealed(&mut self) -> Result<TaskBody, ClientError> {
        let key = self.session.as_ref().expect("session established").key.clone();
        let frame = read_frame(&mut self.stream)?;
        let env = parse_envelope(&frame)?;
        let body = open_task(&env, &key, self.recv_seq, Direction::ControllerToHost)?;
        self.recv_seq += 1;
        Ok(decode_body(env.task_type, &body)?)
    }

    /// Requests a queue and `demand` devices; returns the assigned task id.
    pub fn configure(&mut self, demand: u32, priority: Priority) -> Result<u64, ClientError> {
        let body = encode_body(&TaskBody::Config(ConfigBody {
            accel_type: "accel".to_string(),
            count: demand,
            priority,
        }));
        self.send_sealed(TaskType::Configuration, &body)?;
        match self.recv_sealed()? {
            TaskBody::Result(result) if result.payload.len() == 17 => {
                if result.payload[0] != 0 {
                    return Err(ClientError::ConfigRejected);
                }
                let task_id =
                    u64::from_le_bytes(result.payload[1..9].try_into().expect("8 bytes"));
                self.task_id = task_id;
                Ok(task_id)
            }
            _ => Err(ClientError::UnexpectedReply),
        }
    }

    /// Sends the command and data stream, then collects results until the
    /// final marker. Outputs come back in input order.
    pub fn submit(
        &mut self,
        program: &TaskProgram,
        chunks: &[Vec<u8>],
    ) -> Result<Vec<Vec<u8>>, ClientError> {
        let body = encode_body(&TaskBody::Command(CommandBody {
            program: program.clone(),
        }));
        self.send_sealed(TaskType::Command, &body)?;
        let total = chunks.len();
        for (i, chunk) in chunks.iter().enumerate() {
            let body = encode_body(&TaskBody::Data(DataBody {
                payload: chunk.clone(),
                final_chunk: i + 1 == total,
            }));
            self.send_sealed(TaskType::Data, &body)?;
        }
        let mut outputs = Vec::new();
        loop {
            match self.recv_sealed()? {
                TaskBody::Result(result) => {
                    let done = result.final_chunk;
                    outputs.push(result.payload);
                    if done {
                        return Ok(outputs);
                    }
                }
                _ => return Err(ClientError::UnexpectedReply),
            }
        }
    }
}
