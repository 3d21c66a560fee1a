//! Run configuration.
//!
//! Everything that parameterizes a simulation lives in one versioned TOML
//! document: fabric constants, device profiles, the cost model, controller
//! boot images, workload specs, and the benchmark grid. The schema is
//! documented in `docs/config.md`. Reports are a pure function of
//! (config, seed).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accel::{CleanupCostTable, DeviceProfile, KernelKind};
use crate::fabric::DmaLatencyModel;
use crate::protocol::Priority;
use crate::time::ms_to_ns;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Simulated cost of everything the protected path adds on top of raw
/// accelerator use: sealing/opening, task parsing and queue management, the
/// optional prototype-style internal copy, and per-batch preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Fixed cost of one seal or open operation.
    pub crypto_base_ns: u64,
    /// AEAD throughput; 0 means free.
    pub crypto_bytes_per_sec: u64,
    /// Per-envelope parse/dispatch/queue-management cost on the controller.
    pub task_processing_ns: u64,
    /// Per-batch input preparation cost on the host (paid in both modes).
    pub preprocessing_ns: u64,
    /// Model the measurement prototype's extra controller-internal copy of
    /// task and result payloads. The production design avoids this hop.
    pub prototype_copy: bool,
    pub internal_copy_base_ns: u64,
    pub internal_copy_bytes_per_sec: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            crypto_base_ns: 2_000,
            crypto_bytes_per_sec: 4_000_000_000,
            task_processing_ns: 5_000,
            preprocessing_ns: 100_000,
            prototype_copy: true,
            internal_copy_base_ns: 2_000,
            internal_copy_bytes_per_sec: 6_000_000_000,
        }
    }
}

impl CostModel {
    /// A model in which the protected path costs nothing extra.
    pub fn zero_overhead() -> Self {
        Self {
            crypto_base_ns: 0,
            crypto_bytes_per_sec: 0,
            task_processing_ns: 0,
            preprocessing_ns: 0,
            prototype_copy: false,
            internal_copy_base_ns: 0,
            internal_copy_bytes_per_sec: 0,
        }
    }

    fn rate_ns(bytes: u64, bytes_per_sec: u64) -> u64 {
        if bytes_per_sec == 0 {
            0
        } else {
            (bytes as u128 * 1_000_000_000u128 / bytes_per_sec as u128) as u64
        }
    }

    pub fn crypto_ns(&self, bytes: u64) -> u64 {
        self.crypto_base_ns + Self::rate_ns(bytes, self.crypto_bytes_per_sec)
    }

    pub fn internal_copy_ns(&self, bytes: u64) -> u64 {
        if !self.prototype_copy {
            return 0;
        }
        self.internal_copy_base_ns + Self::rate_ns(bytes, self.internal_copy_bytes_per_sec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FabricConfig {
    pub lane_budget: u32,
    /// Lanes reserved for the management port and host/controller uplinks.
    pub reserved_lanes: u32,
    pub dma: DmaLatencyModel,
}

impl Default for FabricConfig {
    fn default() -> Self {
        Self {
            lane_budget: crate::fabric::DEFAULT_LANE_BUDGET,
            reserved_lanes: crate::fabric::DEFAULT_RESERVED_LANES,
            dma: DmaLatencyModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DevicesConfig {
    pub count: u32,
    pub compute_rate_flops: u64,
    /// Region sizes override, in `Region::ALL` order; defaults to the
    /// shipped clear-size catalog.
    pub region_sizes: Option<[u64; 6]>,
    /// Cold-reboot cost override in milliseconds (the catalog default is
    /// minutes-scale).
    pub cold_reboot_ms: Option<u64>,
}

impl Default for DevicesConfig {
    fn default() -> Self {
        Self {
            count: 4,
            compute_rate_flops: DeviceProfile::default().compute_rate_flops,
            region_sizes: None,
            cold_reboot_ms: None,
        }
    }
}

impl DevicesConfig {
    pub fn profile(&self) -> DeviceProfile {
        let mut profile = DeviceProfile {
            compute_rate_flops: self.compute_rate_flops,
            ..DeviceProfile::default()
        };
        if let Some(sizes) = self.region_sizes {
            profile.region_sizes = sizes;
        }
        profile
    }

    pub fn cost_table(&self) -> CleanupCostTable {
        let mut table = CleanupCostTable::from_shipped_data();
        if let Some(ms) = self.cold_reboot_ms {
            table.cold_reboot_ns = ms_to_ns(ms);
        }
        table
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Boot images as UTF-8 blobs; the vendor key signs these.
    pub firmware: String,
    pub system_software: String,
    /// Seed for the vendor signing keypair.
    pub vendor_seed: u64,
    /// Seed for the controller's burned-in identity keypair.
    pub identity_seed: u64,
    /// If true, configuration tasks whose demand cannot be met wait for
    /// devices to free up instead of failing.
    pub wait_for_devices: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            firmware: "hetee-firmware-v1".to_string(),
            system_software: "hetee-system-sw-v1".to_string(),
            vendor_seed: 0x76656e646f72,
            identity_seed: 0x6964656e74,
            wait_for_devices: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelConfig {
    Matmul { n: u32, m: u32, k: u32 },
    Synthetic { flops: u64, in_bytes: u32, out_bytes: u32 },
}

impl KernelConfig {
    pub fn kind(&self) -> KernelKind {
        match *self {
            KernelConfig::Matmul { n, m, k } => KernelKind::MatMul { n, m, k },
            KernelConfig::Synthetic {
                flops,
                in_bytes,
                out_bytes,
            } => KernelKind::Synthetic {
                flops,
                in_bytes,
                out_bytes,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub name: String,
    pub kernel: KernelConfig,
    pub chunks: u32,
    #[serde(default = "default_demand")]
    pub demand: u32,
    #[serde(default)]
    pub priority: WorkloadPriority,
}

fn default_demand() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadPriority {
    High,
    #[default]
    Normal,
}

impl From<WorkloadPriority> for Priority {
    fn from(p: WorkloadPriority) -> Priority {
        match p {
            WorkloadPriority::High => Priority::High,
            WorkloadPriority::Normal => Priority::Normal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub name: String,
    pub params_millions: u64,
    pub layers: u64,
    pub input_shape: [u32; 3],
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            name: "profile".to_string(),
            params_millions: 1,
            layers: 1,
            input_shape: [1, 1, 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Empty means the built-in six-profile catalog.
    pub profiles: Vec<ProfileConfig>,
    pub batch_sizes: Vec<u32>,
    pub device_counts: Vec<u32>,
    /// Synthetic flops per sample = params_millions × layers × this factor.
    pub flops_per_million_param_layer: u64,
    /// Result payload bytes per sample.
    pub output_bytes_per_sample: u32,
    /// Divides bytes-per-sample for desk-scale runs (1 = full size).
    pub sample_bytes_divisor: u32,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            profiles: Vec::new(),
            batch_sizes: vec![16, 32, 64],
            device_counts: vec![1, 2, 4],
            flops_per_million_param_layer: 1_000_000,
            output_bytes_per_sample: 4_096,
            sample_bytes_divisor: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub fabric: FabricConfig,
    pub devices: DevicesConfig,
    pub cost: CostModel,
    pub controller: ControllerConfig,
    pub workloads: Vec<WorkloadConfig>,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 7,
            fabric: FabricConfig::default(),
            devices: DevicesConfig::default(),
            cost: CostModel::default(),
            controller: ControllerConfig::default(),
            workloads: vec![WorkloadConfig {
                name: "matmul-demo".to_string(),
                kernel: KernelConfig::Matmul { n: 8, m: 8, k: 8 },
                chunks: 4,
                demand: 2,
                priority: WorkloadPriority::Normal,
            }],
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Default config with every modeled overhead zeroed out.
    pub fn zero_overhead() -> Self {
        Self {
            cost: CostModel::zero_overhead(),
            fabric: FabricConfig {
                dma: DmaLatencyModel {
                    base_ns: 0,
                    bytes_per_sec: 0,
                },
                ..FabricConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(self.schema_version));
        }
        let invalid = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.devices.count == 0 {
            return invalid("device count must be positive");
        }
        if self.devices.compute_rate_flops == 0 {
            return invalid("compute rate must be positive");
        }
        if self.fabric.reserved_lanes > self.fabric.lane_budget {
            return invalid("reserved lanes exceed the lane budget");
        }
        let device_lanes = self.devices.count * crate::fabric::LANES_PER_DEVICE;
        if device_lanes + self.fabric.reserved_lanes > self.fabric.lane_budget {
            return invalid("device pool does not fit the lane budget");
        }
        if let Some(sizes) = self.devices.region_sizes {
            if sizes.iter().any(|s| *s == 0) {
                return invalid("region sizes must be positive");
            }
        }
        for w in &self.workloads {
            match w.kernel {
                KernelConfig::Matmul { n, m, k } => {
                    if n == 0 || m == 0 || k == 0 {
                        return invalid("matmul dimensions must be positive");
                    }
                }
                KernelConfig::Synthetic {
                    flops, out_bytes, ..
                } => {
                    if flops == 0 || out_bytes == 0 {
                        return invalid("synthetic kernel flops/out_bytes must be positive");
                    }
                }
            }
            if w.chunks == 0 {
                return invalid("workload must carry at least one chunk");
            }
            if w.demand == 0 {
                return invalid("workload demand must be at least one device");
            }
        }
        if self.bench.batch_sizes.is_empty() || self.bench.device_counts.is_empty() {
            return invalid("bench grid must have at least one batch size and device count");
        }
        if self.bench.device_counts.iter().any(|d| *d == 0 || *d > self.devices.count) {
            return invalid("bench device counts must be within the device pool");
        }
        if self.bench.sample_bytes_divisor == 0 {
            return invalid("sample_bytes_divisor must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_roundtrips() {
        let config = RunConfig::default();
        config.validate().unwrap();
        let text = config.to_toml();
        let parsed = RunConfig::from_toml(&text).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn bad_schema_version_rejected() {
        let mut config = RunConfig::default();
        config.schema_version = 99;
        let text = config.to_toml();
        assert!(matches!(
            RunConfig::from_toml(&text),
            Err(ConfigError::SchemaVersion(99))
        ));
    }

    #[test]
    fn lane_overflow_rejected() {
        let mut config = RunConfig::default();
        config.devices.count = 6;
        assert!(config.validate().is_err());
    }

    #[test]
    fn zero_overhead_model_costs_nothing() {
        let cost = CostModel::zero_overhead();
        assert_eq!(cost.crypto_ns(1_000_000), 0);
        assert_eq!(cost.internal_copy_ns(1_000_000), 0);
        let config = RunConfig::zero_overhead();
        assert_eq!(config.fabric.dma.latency_ns(1_000_000), 0);
    }

    #[test]
    fn cold_reboot_override_applies() {
        let devices = DevicesConfig {
            cold_reboot_ms: Some(1_000),
            ..DevicesConfig::default()
        };
        assert_eq!(devices.cost_table().cold_reboot_ns, 1_000_000_000);
    }
}
