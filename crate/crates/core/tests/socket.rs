//! Socket-mode integration: a controller served over TCP, attested and
//! driven by the socket client with length-prefixed envelope frames.

use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use hetee_core::accel::KernelKind;
use hetee_core::config::RunConfig;
use hetee_core::protocol::{Priority, TaskProgram};
use hetee_core::sim::Simulation;
use hetee_core::transport::{serve, SocketClient};

fn spawn_server(config: RunConfig) -> (std::net::SocketAddr, Arc<Mutex<Simulation>>) {
    let sim = Arc::new(Mutex::new(Simulation::new(config).unwrap()));
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let served = Arc::clone(&sim);
    std::thread::spawn(move || {
        let _ = serve(listener, served);
    });
    (addr, sim)
}

fn matmul_chunks(count: usize) -> (TaskProgram, Vec<Vec<u8>>) {
    let n = 2u32;
    let bytes = ((n * n + n * n) * 4) as u64;
    let program = TaskProgram::for_kernel(KernelKind::MatMul { n, m: n, k: n }, bytes);
    let chunks = (0..count)
        .map(|c| {
            let mut chunk = Vec::new();
            for v in [1i32, 0, 0, 1, c as i32, -1, 5, 2] {
                chunk.extend_from_slice(&v.to_le_bytes());
            }
            chunk
        })
        .collect();
    (program, chunks)
}

#[test]
fn socket_attest_configure_and_run() {
    let config = RunConfig::default();
    let expected = {
        let sim = Simulation::new(config.clone()).unwrap();
        sim.expected_measurement().digest
    };
    let (addr, server_sim) = spawn_server(config);

    let mut client = SocketClient::connect(addr, Duration::from_secs(10)).unwrap();
    let pubkey = server_sim
        .lock()
        .unwrap()
        .controller
        .identity_pubkey();
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    client.attest(&mut rng, pubkey, expected).unwrap();

    let task_id = client.configure(2, Priority::Normal).unwrap();
    assert_eq!(task_id, 1);

    let (program, chunks) = matmul_chunks(3);
    let outputs = client.submit(&program, &chunks).unwrap();
    assert_eq!(outputs.len(), 3);
    for (c, output) in outputs.iter().enumerate() {
        let got: Vec<i64> = output
            .chunks_exact(8)
            .map(|b| i64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        assert_eq!(got, vec![c as i64, -1, 5, 2]);
    }
}

#[test]
fn socket_attest_rejects_wrong_measurement() {
    let (addr, server_sim) = spawn_server(RunConfig::default());
    let mut client = SocketClient::connect(addr, Duration::from_secs(10)).unwrap();
    let pubkey = server_sim.lock().unwrap().controller.identity_pubkey();
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let err = client.attest(&mut rng, pubkey, [0xEE; 32]).unwrap_err();
    assert!(matches!(
        err,
        hetee_core::transport::ClientError::Attest(
            hetee_core::attest::AttestError::AttestationFailed(
                hetee_core::attest::RejectReason::UnexpectedMeasurement
            )
        )
    ));
}

#[test]
fn two_clients_get_independent_sessions() {
    let config = RunConfig::default();
    let expected = {
        let sim = Simulation::new(config.clone()).unwrap();
        sim.expected_measurement().digest
    };
    let (addr, server_sim) = spawn_server(config);
    let pubkey = server_sim.lock().unwrap().controller.identity_pubkey();

    let mut a = SocketClient::connect(addr, Duration::from_secs(10)).unwrap();
    let mut b = SocketClient::connect(addr, Duration::from_secs(10)).unwrap();
    let mut rng_a = ChaCha12Rng::seed_from_u64(1);
    let mut rng_b = ChaCha12Rng::seed_from_u64(2);
    a.attest(&mut rng_a, pubkey, expected).unwrap();
    b.attest(&mut rng_b, pubkey, expected).unwrap();

    let task_a = a.configure(1, Priority::Normal).unwrap();
    let task_b = b.configure(1, Priority::Normal).unwrap();
    assert_ne!(task_a, task_b);

    let (program, chunks) = matmul_chunks(2);
    let out_a = a.submit(&program, &chunks).unwrap();
    let out_b = b.submit(&program, &chunks).unwrap();
    assert_eq!(out_a, out_b);
}
