//! Benchmark harness.
//!
//! Runs a grid of (profile × batch size × device count × mode) cells, each
//! in a fresh deterministic simulation, and reports per-cell latency
//! breakdowns plus a throughput table normalized to the one-device
//! baseline. Profiles are synthetic stand-ins for classic vision networks
//! — flops per sample scale with parameter count and depth — and make no
//! claims about real model performance.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accel::KernelKind;
use crate::config::{ProfileConfig, RunConfig};
use crate::host::{self, HostError, WorkloadSpec};
use crate::metrics::{Phase, PhaseAccumulator};
use crate::protocol::{Priority, TaskProgram};
use crate::sim::{SimError, Simulation};

/// Reference numbers measured on the physical prototype (Xeon host, FPGA
/// controller, Tesla M40 pool). Shown in report footers for side-by-side
/// display; hardware-dependent, never asserted by tests.
pub const REFERENCE_INFERENCE_OVERHEAD_PCT: f64 = 12.34;
pub const REFERENCE_TRAINING_OVERHEAD_PCT: f64 = 9.87;
pub const REFERENCE_LATENCY_INCREASE_PCT: f64 = 121.4;
pub const REFERENCE_INTERNAL_COPY_SHARE_PCT: f64 = 14.6;

/// One synthetic workload profile: parameter count, depth, input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub name: String,
    pub params_millions: u64,
    pub layers: u64,
    pub input_shape: [u32; 3],
}

impl WorkloadProfile {
    pub fn bytes_per_sample(&self) -> u64 {
        self.input_shape.iter().map(|d| *d as u64).product()
    }

    /// The six classic vision networks the harness ships with.
    pub fn builtin() -> Vec<WorkloadProfile> {
        let mk = |name: &str, params: u64, layers: u64, shape: [u32; 3]| WorkloadProfile {
            name: name.to_string(),
            params_millions: params,
            layers,
            input_shape: shape,
        };
        vec![
            mk("AlexNet", 60, 8, [227, 227, 3]),
            mk("VGG16", 138, 16, [224, 224, 3]),
            mk("GoogLeNet", 5, 22, [224, 224, 3]),
            mk("ResNet50", 25, 50, [224, 224, 3]),
            mk("ResNet101", 44, 101, [224, 224, 3]),
            mk("ResNet152", 60, 152, [224, 224, 3]),
        ]
    }

    pub fn from_config(cfg: &ProfileConfig) -> WorkloadProfile {
        WorkloadProfile {
            name: cfg.name.clone(),
            params_millions: cfg.params_millions,
            layers: cfg.layers,
            input_shape: cfg.input_shape,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Baseline,
    Hetee,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Baseline => f.write_str("baseline"),
            Mode::Hetee => f.write_str("hetee"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "hetee" => Ok(Mode::Hetee),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// Latency categories for one cell. `total_ns` is exactly the sum of the
/// components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub data_preprocessing_ns: u64,
    pub host_send_task_ns: u64,
    pub task_processing_ns: u64,
    pub internal_task_copy_ns: u64,
    pub accel_compute_ns: u64,
    pub internal_result_copy_ns: u64,
    pub host_receive_result_ns: u64,
    pub total_ns: u64,
}

impl From<PhaseAccumulator> for LatencyBreakdown {
    fn from(acc: PhaseAccumulator) -> Self {
        Self {
            data_preprocessing_ns: acc.get(Phase::DataPreprocessing),
            host_send_task_ns: acc.get(Phase::HostSendTask),
            task_processing_ns: acc.get(Phase::TaskProcessing),
            internal_task_copy_ns: acc.get(Phase::InternalTaskCopy),
            accel_compute_ns: acc.get(Phase::AccelCompute),
            internal_result_copy_ns: acc.get(Phase::InternalResultCopy),
            host_receive_result_ns: acc.get(Phase::HostReceiveResult),
            total_ns: acc.total_ns(),
        }
    }
}

impl LatencyBreakdown {
    pub fn components(&self) -> [u64; 7] {
        [
            self.data_preprocessing_ns,
            self.host_send_task_ns,
            self.task_processing_ns,
            self.internal_task_copy_ns,
            self.accel_compute_ns,
            self.internal_result_copy_ns,
            self.host_receive_result_ns,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub profile: String,
    pub batch: u32,
    pub devices: u32,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub samples: u64,
    /// End-to-end virtual makespan of the batch.
    pub elapsed_ns: u64,
    pub breakdown: LatencyBreakdown,
}

impl CellResult {
    /// Samples per virtual second.
    pub fn throughput(&self) -> f64 {
        if self.elapsed_ns == 0 {
            return f64::INFINITY;
        }
        self.samples as f64 * 1e9 / self.elapsed_ns as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub cells: Vec<CellResult>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("missing cell: {profile} batch={batch} devices={devices} mode={mode}")]
    MissingCell {
        profile: String,
        batch: u32,
        devices: u32,
        mode: Mode,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("report parse error: {0}")]
    Parse(String),
}

fn profiles_of(config: &RunConfig) -> Vec<WorkloadProfile> {
    if config.bench.profiles.is_empty() {
        WorkloadProfile::builtin()
    } else {
        config
            .bench
            .profiles
            .iter()
            .map(WorkloadProfile::from_config)
            .collect()
    }
}

fn cell_seed(base: u64, key: &CellKey) -> u64 {
    let tag = crate::attest::sha256(
        format!(
            "cell:{}:{}:{}:{}",
            key.profile, key.batch, key.devices, key.mode
        )
        .as_bytes(),
    );
    base ^ u64::from_le_bytes(tag[..8].try_into().expect("8 bytes"))
}

/// The batch splits into one sub-batch per allocated device — data
/// parallelism over the device set, one sealed data task per sub-batch.
fn spec_for_cell(
    config: &RunConfig,
    profile: &WorkloadProfile,
    key: &CellKey,
) -> Result<WorkloadSpec, BenchError> {
    let bench = &config.bench;
    if key.batch % key.devices != 0 {
        return Err(BenchError::ConfigInvalid(format!(
            "batch {} does not split evenly over {} devices",
            key.batch, key.devices
        )));
    }
    let samples_per_chunk = (key.batch / key.devices) as u64;
    let sample_bytes = (profile.bytes_per_sample() / bench.sample_bytes_divisor as u64).max(1);
    let in_bytes = sample_bytes * samples_per_chunk;
    if in_bytes as usize > crate::protocol::MAX_BODY_LEN - 64 {
        return Err(BenchError::ConfigInvalid(format!(
            "sub-batch of {in_bytes} bytes exceeds the envelope body limit"
        )));
    }
    let flops_per_sample =
        profile.params_millions * profile.layers * bench.flops_per_million_param_layer;
    let kernel = KernelKind::Synthetic {
        flops: (flops_per_sample * samples_per_chunk).max(1),
        in_bytes: in_bytes as u32,
        out_bytes: bench.output_bytes_per_sample * samples_per_chunk as u32,
    };
    let mut rng = ChaCha12Rng::seed_from_u64(cell_seed(config.seed, key));
    let chunks = (0..key.devices)
        .map(|_| {
            let mut buf = vec![0u8; in_bytes as usize];
            rng.fill_bytes(&mut buf);
            buf
        })
        .collect();
    Ok(WorkloadSpec {
        program: TaskProgram::for_kernel(kernel, in_bytes),
        chunks,
        demand: key.devices,
        priority: Priority::Normal,
    })
}

/// Runs one cell in a fresh simulation.
pub fn run_cell(config: &RunConfig, key: &CellKey) -> Result<CellResult, BenchError> {
    let profiles = profiles_of(config);
    let profile = profiles
        .iter()
        .find(|p| p.name == key.profile)
        .ok_or_else(|| BenchError::ConfigInvalid(format!("unknown profile {}", key.profile)))?;
    let spec = spec_for_cell(config, profile, key)?;

    let mut cell_config = config.clone();
    cell_config.seed = cell_seed(config.seed, key);
    let mut sim = Simulation::new(cell_config)?;

    let outcome = match key.mode {
        Mode::Hetee => {
            let expected = sim.expected_measurement().digest;
            let mut session =
                host::attest_and_connect(&mut sim, expected, key.devices, Priority::Normal)?;
            host::submit_workload(&mut sim, &mut session, &spec)?
        }
        Mode::Baseline => host::run_direct_insecure(&mut sim, key.devices, &spec)?,
    };
    Ok(CellResult {
        key: key.clone(),
        samples: key.batch as u64,
        elapsed_ns: outcome.elapsed_ns(),
        breakdown: LatencyBreakdown::from(outcome.phases),
    })
}

/// Runs the whole configured grid: every profile × batch × device count,
/// in both modes. Deterministic per (config, seed).
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentReport, BenchError> {
    run_experiment_modes(config, &[Mode::Baseline, Mode::Hetee])
}

pub fn run_experiment_modes(
    config: &RunConfig,
    modes: &[Mode],
) -> Result<ExperimentReport, BenchError> {
    config
        .validate()
        .map_err(|e| BenchError::ConfigInvalid(e.to_string()))?;
    let mut cells = Vec::new();
    for profile in profiles_of(config) {
        for &batch in &config.bench.batch_sizes {
            for &devices in &config.bench.device_counts {
                for &mode in modes {
                    let key = CellKey {
                        profile: profile.name.clone(),
                        batch,
                        devices,
                        mode,
                    };
                    cells.push(run_cell(config, &key)?);
                }
            }
        }
    }
    Ok(ExperimentReport {
        seed: config.seed,
        cells,
    })
}

impl ExperimentReport {
    pub fn cell(&self, profile: &str, batch: u32, devices: u32, mode: Mode) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.key.profile == profile
                && c.key.batch == batch
                && c.key.devices == devices
                && c.key.mode == mode
        })
    }

    /// Throughput normalized to the same profile/batch baseline on one
    /// device (which is 1.00 by construction).
    pub fn normalized(&self, cell: &CellResult) -> Option<f64> {
        let reference = self.cell(&cell.key.profile, cell.key.batch, 1, Mode::Baseline)?;
        Some(cell.throughput() / reference.throughput())
    }

    /// Protected-over-baseline latency ratio for one grid point; ≥ 1 under
    /// an additive cost model.
    pub fn overhead_ratio(&self, profile: &str, batch: u32, devices: u32) -> Result<f64, BenchError> {
        let missing = |mode: Mode| BenchError::MissingCell {
            profile: profile.to_string(),
            batch,
            devices,
            mode,
        };
        let hetee = self
            .cell(profile, batch, devices, Mode::Hetee)
            .ok_or_else(|| missing(Mode::Hetee))?;
        let baseline = self
            .cell(profile, batch, devices, Mode::Baseline)
            .ok_or_else(|| missing(Mode::Baseline))?;
        Ok(hetee.elapsed_ns as f64 / baseline.elapsed_ns as f64)
    }

    // ---- Emission ------------------------------------------------------------

    /// Full-fidelity per-cell table; `parse_cells_csv` restores the report.
    pub fn to_cells_csv(&self) -> String {
        let mut out = String::from(CELLS_CSV_HEADER);
        out.push('\n');
        for cell in &self.cells {
            let b = &cell.breakdown;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                cell.key.profile,
                cell.key.batch,
                cell.key.devices,
                cell.key.mode,
                cell.samples,
                cell.elapsed_ns,
                b.data_preprocessing_ns,
                b.host_send_task_ns,
                b.task_processing_ns,
                b.internal_task_copy_ns,
                b.accel_compute_ns,
                b.internal_result_copy_ns,
                b.host_receive_result_ns,
                b.total_ns,
            ));
        }
        out
    }

    /// The scalability grid: one row per (model, mode), one column per
    /// (batch, device count), normalized to the one-device baseline.
    pub fn to_throughput_csv(&self, config: &RunConfig) -> String {
        let mut out = String::new();
        out.push_str("model,mode");
        for &batch in &config.bench.batch_sizes {
            for &devices in &config.bench.device_counts {
                out.push_str(&format!(",b{batch}_g{devices}"));
            }
        }
        out.push('\n');
        for profile in profiles_of(config) {
            for mode in [Mode::Baseline, Mode::Hetee] {
                let mut row = format!("{},{}", profile.name, mode);
                for &batch in &config.bench.batch_sizes {
                    for &devices in &config.bench.device_counts {
                        let value = self
                            .cell(&profile.name, batch, devices, mode)
                            .and_then(|c| self.normalized(c));
                        match value {
                            Some(v) => row.push_str(&format!(",{v:.2}")),
                            None => row.push(','),
                        }
                    }
                }
                row.push('\n');
                out.push_str(&row);
            }
        }
        out.push_str(&reference_footer());
        out
    }

    /// Per-cell latency categories, microseconds.
    pub fn to_breakdown_csv(&self) -> String {
        let mut out = String::from(BREAKDOWN_CSV_HEADER);
        out.push('\n');
        for cell in &self.cells {
            let b = &cell.breakdown;
            let us = |ns: u64| ns as f64 / 1_000.0;
            out.push_str(&format!(
                "{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3}\n",
                cell.key.profile,
                cell.key.batch,
                cell.key.devices,
                cell.key.mode,
                us(b.data_preprocessing_ns),
                us(b.host_send_task_ns),
                us(b.task_processing_ns),
                us(b.internal_task_copy_ns),
                us(b.accel_compute_ns),
                us(b.internal_result_copy_ns),
                us(b.host_receive_result_ns),
                us(b.total_ns),
            ));
        }
        out.push_str(&reference_footer());
        out
    }

    /// Line-delimited structured records, one JSON object per cell.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for cell in &self.cells {
            out.push_str(&serde_json::to_string(cell).expect("cell serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes cells.csv, throughput.csv, breakdown.csv and report.jsonl
    /// under `dir`. Returns the paths written.
    pub fn emit(&self, config: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
        std::fs::create_dir_all(dir)?;
        let files = [
            ("cells.csv", self.to_cells_csv()),
            ("throughput.csv", self.to_throughput_csv(config)),
            ("breakdown.csv", self.to_breakdown_csv()),
            ("report.jsonl", self.to_jsonl()),
        ];
        let mut written = Vec::new();
        for (name, content) in files {
            let path = dir.join(name);
            let mut file = std::fs::File::create(&path)?;
            file.write_all(content.as_bytes())?;
            written.push(path);
        }
        Ok(written)
    }

    /// Restores a report from its full-fidelity cells table.
    pub fn parse_cells_csv(seed: u64, text: &str) -> Result<ExperimentReport, BenchError> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| BenchError::Parse("empty".into()))?;
        if header != CELLS_CSV_HEADER {
            return Err(BenchError::Parse(format!("unexpected header {header:?}")));
        }
        let mut cells = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 14 {
                return Err(BenchError::Parse(format!("bad row {line:?}")));
            }
            let num = |s: &str| -> Result<u64, BenchError> {
                s.parse().map_err(|_| BenchError::Parse(format!("bad number {s:?}")))
            };
            cells.push(CellResult {
                key: CellKey {
                    profile: f[0].to_string(),
                    batch: num(f[1])? as u32,
                    devices: num(f[2])? as u32,
                    mode: f[3].parse().map_err(BenchError::Parse)?,
                },
                samples: num(f[4])?,
                elapsed_ns: num(f[5])?,
                breakdown: LatencyBreakdown {
                    data_preprocessing_ns: num(f[6])?,
                    host_send_task_ns: num(f[7])?,
                    task_processing_ns: num(f[8])?,
                    internal_task_copy_ns: num(f[9])?,
                    accel_compute_ns: num(f[10])?,
                    internal_result_copy_ns: num(f[11])?,
                    host_receive_result_ns: num(f[12])?,
                    total_ns: num(f[13])?,
                },
            });
        }
        Ok(ExperimentReport { seed, cells })
    }
}

pub const CELLS_CSV_HEADER: &str = "model,batch,devices,mode,samples,elapsed_ns,data_preprocessing_ns,host_send_task_ns,task_processing_ns,internal_task_copy_ns,accel_compute_ns,internal_result_copy_ns,host_receive_result_ns,total_ns";

pub const BREAKDOWN_CSV_HEADER: &str = "model,batch,devices,mode,data_preprocessing_us,host_send_task_us,task_processing_us,internal_task_copy_us,accel_compute_us,internal_result_copy_us,host_receive_result_us,total_us";

fn reference_footer() -> String {
    format!(
        "# reference (paper-reported, hardware-measured): inference_overhead={REFERENCE_INFERENCE_OVERHEAD_PCT}% training_overhead={REFERENCE_TRAINING_OVERHEAD_PCT}% latency_increase={REFERENCE_LATENCY_INCREASE_PCT}% internal_copy_share={REFERENCE_INTERNAL_COPY_SHARE_PCT}%\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A small grid that runs quickly in debug builds: modest payloads,
    /// compute-dominated kernels.
    fn small_config() -> RunConfig {
        let mut config = RunConfig::default();
        config.bench.profiles = vec![
            ProfileConfig {
                name: "tiny".to_string(),
                params_millions: 40,
                layers: 25,
                input_shape: [64, 64, 3],
            },
            ProfileConfig {
                name: "wide".to_string(),
                params_millions: 150,
                layers: 120,
                input_shape: [64, 64, 3],
            },
        ];
        config.bench.batch_sizes = vec![4, 8];
        config.bench.device_counts = vec![1, 2, 4];
        config
    }

    #[test]
    fn breakdown_components_sum_to_total() {
        let config = small_config();
        let report = run_experiment(&config).unwrap();
        assert!(!report.cells.is_empty());
        for cell in &report.cells {
            let sum: u64 = cell.breakdown.components().iter().sum();
            assert_eq!(sum, cell.breakdown.total_ns, "cell {:?}", cell.key);
        }
    }

    #[test]
    fn zero_overhead_config_ratio_is_one() {
        let mut config = RunConfig::zero_overhead();
        config.bench = small_config().bench;
        let report = run_experiment(&config).unwrap();
        for profile in ["tiny", "wide"] {
            for &batch in &config.bench.batch_sizes {
                for &devices in &config.bench.device_counts {
                    let ratio = report.overhead_ratio(profile, batch, devices).unwrap();
                    assert!(
                        (ratio - 1.0).abs() < 1e-12,
                        "{profile} b{batch} g{devices}: ratio {ratio}"
                    );
                }
            }
        }
    }

    #[test]
    fn default_cost_ratio_at_least_one_and_amortized_by_compute() {
        let config = small_config();
        let report = run_experiment(&config).unwrap();
        let mut ratios = std::collections::BTreeMap::new();
        for profile in ["tiny", "wide"] {
            let r = report.overhead_ratio(profile, 8, 1).unwrap();
            assert!(r >= 1.0, "{profile} ratio {r}");
            ratios.insert(profile, r);
        }
        // The compute-heavier profile amortizes the fixed overheads better.
        assert!(
            ratios["wide"] <= ratios["tiny"],
            "heavy {} vs light {}",
            ratios["wide"],
            ratios["tiny"]
        );
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let config = small_config();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.to_cells_csv(), b.to_cells_csv());
        assert_eq!(a.to_throughput_csv(&config), b.to_throughput_csv(&config));
        assert_eq!(a.to_jsonl(), b.to_jsonl());
    }

    #[test]
    fn normalization_baseline_one_device_is_unity() {
        let config = small_config();
        let report = run_experiment(&config).unwrap();
        for cell in &report.cells {
            if cell.key.devices == 1 && cell.key.mode == Mode::Baseline {
                let n = report.normalized(cell).unwrap();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn throughput_non_decreasing_and_bounded_by_device_count() {
        let config = small_config();
        let report = run_experiment(&config).unwrap();
        for profile in ["tiny", "wide"] {
            for &batch in &config.bench.batch_sizes {
                for mode in [Mode::Baseline, Mode::Hetee] {
                    let mut last = 0.0f64;
                    for &devices in &config.bench.device_counts {
                        let cell = report.cell(profile, batch, devices, mode).unwrap();
                        let n = report.normalized(cell).unwrap();
                        assert!(
                            n + 1e-9 >= last,
                            "{profile} b{batch} {mode} g{devices}: {n} < {last}"
                        );
                        assert!(
                            n <= devices as f64 + 1e-9,
                            "{profile} b{batch} {mode} g{devices}: {n} > {devices}"
                        );
                        last = n;
                    }
                }
            }
        }
    }

    #[test]
    fn cells_csv_roundtrip() {
        let mut config = small_config();
        config.bench.batch_sizes = vec![4];
        config.bench.device_counts = vec![1, 2];
        let report = run_experiment(&config).unwrap();
        let parsed =
            ExperimentReport::parse_cells_csv(report.seed, &report.to_cells_csv()).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn empty_report_emits_headers_only() {
        let report = ExperimentReport {
            seed: 0,
            cells: Vec::new(),
        };
        let csv = report.to_cells_csv();
        assert_eq!(csv.trim_end(), CELLS_CSV_HEADER);
        let parsed = ExperimentReport::parse_cells_csv(0, &csv).unwrap();
        assert!(parsed.cells.is_empty());
    }

    #[test]
    fn default_grid_has_table_shape() {
        // Headers only; the full default grid is too slow for unit tests.
        let config = RunConfig::default();
        let report = ExperimentReport {
            seed: config.seed,
            cells: Vec::new(),
        };
        let csv = report.to_throughput_csv(&config);
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "model,mode,b16_g1,b16_g2,b16_g4,b32_g1,b32_g2,b32_g4,b64_g1,b64_g2,b64_g4"
        );
        // 6 models × 2 modes rows plus header and footer.
        assert_eq!(csv.lines().count(), 1 + 12 + 1);
        assert!(csv.lines().last().unwrap().starts_with('#'));
    }

    #[test]
    fn larger_batch_does_not_worsen_ratio_with_fixed_per_task_overheads() {
        // Per-byte costs zeroed: overheads are per-task only.
        let mut config = small_config();
        config.cost.crypto_bytes_per_sec = 0;
        config.cost.internal_copy_bytes_per_sec = 0;
        config.fabric.dma.bytes_per_sec = 0;
        config.bench.batch_sizes = vec![2, 4, 8];
        config.bench.device_counts = vec![1];
        let report = run_experiment(&config).unwrap();
        for profile in ["tiny", "wide"] {
            let mut last = f64::INFINITY;
            for &batch in &config.bench.batch_sizes {
                let r = report.overhead_ratio(profile, batch, 1).unwrap();
                assert!(
                    r <= last + 1e-9,
                    "{profile} batch {batch}: ratio {r} grew from {last}"
                );
                last = r;
            }
        }
    }
}
