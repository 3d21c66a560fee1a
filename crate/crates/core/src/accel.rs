//! Simulated accelerator devices.
//!
//! Each device executes deterministic compute kernels against a region-level
//! memory model. Kernel runs stamp taint sentinels into the regions they
//! touch; cleanup methods erase taints according to the shipped cost/residual
//! catalog (`data/cleanup_costs.toml`). Taints are the leakage oracle: a
//! region still carrying another task's sentinel after a cleanup models
//! recoverable residue.
//!
//! One device is one sequential executor — at most one kernel or cleanup in
//! flight at a time. Devices are independent and may overlap in virtual time.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fabric::EndpointId;
use crate::time::TimeNs;

/// Architectural and micro-architectural state holding task residue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    Registers,
    LocalMem,
    SharedMem,
    GlobalMem,
    L1Cache,
    L2Cache,
}

impl Region {
    pub const ALL: [Region; 6] = [
        Region::Registers,
        Region::LocalMem,
        Region::SharedMem,
        Region::GlobalMem,
        Region::L1Cache,
        Region::L2Cache,
    ];

    /// Regions a plain software path can reach (as opposed to the caches,
    /// which only a full power cycle reliably clears).
    pub const ARCHITECTURAL: [Region; 4] = [
        Region::Registers,
        Region::LocalMem,
        Region::SharedMem,
        Region::GlobalMem,
    ];

    pub const MICRO_ARCHITECTURAL: [Region; 2] = [Region::L1Cache, Region::L2Cache];

    fn bit(self) -> u8 {
        match self {
            Region::Registers => 1 << 0,
            Region::LocalMem => 1 << 1,
            Region::SharedMem => 1 << 2,
            Region::GlobalMem => 1 << 3,
            Region::L1Cache => 1 << 4,
            Region::L2Cache => 1 << 5,
        }
    }
}

/// Compact set of regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionSet(u8);

impl RegionSet {
    pub const EMPTY: RegionSet = RegionSet(0);

    pub fn all() -> Self {
        Region::ALL.iter().copied().collect()
    }

    pub fn contains(&self, region: Region) -> bool {
        self.0 & region.bit() != 0
    }

    pub fn insert(&mut self, region: Region) {
        self.0 |= region.bit();
    }

    pub fn iter(&self) -> impl Iterator<Item = Region> + '_ {
        Region::ALL.iter().copied().filter(|r| self.contains(*r))
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn to_mask(self) -> u8 {
        self.0
    }

    pub fn from_mask(mask: u8) -> Self {
        RegionSet(mask & 0x3f)
    }
}

impl FromIterator<Region> for RegionSet {
    fn from_iter<I: IntoIterator<Item = Region>>(iter: I) -> Self {
        let mut set = RegionSet::EMPTY;
        for r in iter {
            set.insert(r);
        }
        set
    }
}

impl Default for RegionSet {
    fn default() -> Self {
        RegionSet::all()
    }
}

/// How a device's context is torn down between occupancies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CleanupMethod {
    /// Vendor device-reset API: releases the current task's resources;
    /// everything another task left behind stays put.
    ApiDeviceReset,
    /// Vendor context-destroy API: same scope as the device reset.
    ApiCtxDestroy,
    /// Driver-level reboot: wipes the architectural regions wholesale, but
    /// cache contents survive.
    SoftwareReboot,
    /// Manually coded scrub of exactly the named regions.
    CodeClean(RegionSet),
    /// Power cycle: clears everything, at a minutes-scale cost.
    ColdReboot,
    /// `CodeClean` over every region followed by `ApiDeviceReset`; the
    /// composite the controller uses to restore a trusted state.
    TrustedComposite,
}

/// Per-method time costs and per-region clear sizes, loaded from the
/// versioned data file shipped with the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanupCostTable {
    pub version: u32,
    pub api_device_reset_ns: u64,
    pub api_ctx_destroy_ns: u64,
    pub software_reboot_ns: u64,
    pub cold_reboot_ns: u64,
    /// Indexed in `Region::ALL` order.
    pub code_clean_ns: [u64; 6],
    /// Indexed in `Region::ALL` order.
    pub clear_size_bytes: [u64; 6],
}

/// Raw table text as shipped; parsed once at startup.
pub const COST_TABLE_TOML: &str = include_str!("../data/cleanup_costs.toml");

#[derive(Debug, Deserialize)]
struct CostTableFile {
    version: u32,
    api: ApiCosts,
    software_reboot: SingleCost,
    cold_reboot: ColdCost,
    code_clean: CodeCleanCosts,
}

#[derive(Debug, Deserialize)]
struct ApiCosts {
    device_reset_ms: f64,
    ctx_destroy_ms: f64,
}

#[derive(Debug, Deserialize)]
struct SingleCost {
    cost_ms: f64,
}

#[derive(Debug, Deserialize)]
struct ColdCost {
    default_cost_ms: f64,
}

#[derive(Debug, Deserialize)]
struct CodeCleanCosts {
    registers: RegionCost,
    local_mem: RegionCost,
    shared_mem: RegionCost,
    global_mem: RegionCost,
    l1_cache: RegionCost,
    l2_cache: RegionCost,
}

#[derive(Debug, Deserialize)]
struct RegionCost {
    cost_ms: f64,
    clear_size_bytes: u64,
}

fn ms_f64_to_ns(ms: f64) -> u64 {
    // Table values are exact multiples of 1 µs; round to kill float error.
    (ms * 1_000_000.0).round() as u64
}

impl CleanupCostTable {
    /// Parses the shipped data file.
    pub fn from_shipped_data() -> Self {
        Self::from_toml(COST_TABLE_TOML).expect("shipped cost table parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        let file: CostTableFile = toml::from_str(text)?;
        let cc = &file.code_clean;
        let per_region = [
            &cc.registers,
            &cc.local_mem,
            &cc.shared_mem,
            &cc.global_mem,
            &cc.l1_cache,
            &cc.l2_cache,
        ];
        Ok(Self {
            version: file.version,
            api_device_reset_ns: ms_f64_to_ns(file.api.device_reset_ms),
            api_ctx_destroy_ns: ms_f64_to_ns(file.api.ctx_destroy_ms),
            software_reboot_ns: ms_f64_to_ns(file.software_reboot.cost_ms),
            cold_reboot_ns: ms_f64_to_ns(file.cold_reboot.default_cost_ms),
            code_clean_ns: per_region.map(|r| ms_f64_to_ns(r.cost_ms)),
            clear_size_bytes: per_region.map(|r| r.clear_size_bytes),
        })
    }

    pub fn code_clean_cost_ns(&self, regions: RegionSet) -> u64 {
        Region::ALL
            .iter()
            .enumerate()
            .filter(|(_, r)| regions.contains(**r))
            .map(|(i, _)| self.code_clean_ns[i])
            .sum()
    }

    pub fn cost_ns(&self, method: CleanupMethod) -> u64 {
        match method {
            CleanupMethod::ApiDeviceReset => self.api_device_reset_ns,
            CleanupMethod::ApiCtxDestroy => self.api_ctx_destroy_ns,
            CleanupMethod::SoftwareReboot => self.software_reboot_ns,
            CleanupMethod::CodeClean(regions) => self.code_clean_cost_ns(regions),
            CleanupMethod::ColdReboot => self.cold_reboot_ns,
            CleanupMethod::TrustedComposite => {
                self.code_clean_cost_ns(RegionSet::all()) + self.api_device_reset_ns
            }
        }
    }
}

/// Region sizes and synthetic compute rate for one device model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Indexed in `Region::ALL` order.
    pub region_sizes: [u64; 6],
    /// Synthetic FLOP/s used for kernel timing.
    pub compute_rate_flops: u64,
}

impl Default for DeviceProfile {
    fn default() -> Self {
        let table = CleanupCostTable::from_shipped_data();
        Self {
            region_sizes: table.clear_size_bytes,
            compute_rate_flops: 5_000_000_000_000, // 5 TFLOP/s
        }
    }
}

/// One kernel dispatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    /// Integer matrix product: A (n×m) · B (m×k), row-major i32 inputs,
    /// i64 accumulation and outputs.
    MatMul { n: u32, m: u32, k: u32 },
    /// Opaque compute: output is a keyed digest of the input, expanded to
    /// `out_bytes`, so results stay verifiable end to end.
    Synthetic {
        flops: u64,
        in_bytes: u32,
        out_bytes: u32,
    },
}

impl KernelKind {
    pub fn flops(&self) -> u64 {
        match *self {
            KernelKind::MatMul { n, m, k } => 2 * n as u64 * m as u64 * k as u64,
            KernelKind::Synthetic { flops, .. } => flops,
        }
    }

    pub fn expected_input_len(&self) -> usize {
        match *self {
            KernelKind::MatMul { n, m, k } => ((n * m + m * k) * 4) as usize,
            KernelKind::Synthetic { in_bytes, .. } => in_bytes as usize,
        }
    }

    pub fn validate(&self) -> bool {
        match *self {
            KernelKind::MatMul { n, m, k } => n > 0 && m > 0 && k > 0,
            KernelKind::Synthetic {
                flops,
                in_bytes: _,
                out_bytes,
            } => flops > 0 && out_bytes > 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Owning task; stamped into every touched region.
    pub task_id: u64,
    pub touched: RegionSet,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, task_id: u64) -> Self {
        Self {
            kind,
            task_id,
            touched: RegionSet::all(),
        }
    }
}

/// Outcome of one kernel run on the device timeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelRun {
    pub output: Vec<u8>,
    pub start_ns: TimeNs,
    pub end_ns: TimeNs,
}

impl KernelRun {
    pub fn elapsed_ns(&self) -> u64 {
        self.end_ns - self.start_ns
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanupReport {
    pub method: CleanupMethod,
    pub elapsed_ns: u64,
    /// Regions still carrying at least one taint after the cleanup.
    pub residual: BTreeSet<Region>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AccelError {
    #[error("device busy until t={busy_until_ns}ns, requested at t={at_ns}ns")]
    DeviceBusy { busy_until_ns: u64, at_ns: u64 },
    #[error("input length {got} does not match kernel shape (expected {expected})")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid kernel dimensions")]
    InvalidKernel,
}

/// A simulated accelerator.
#[derive(Debug, Clone)]
pub struct Device {
    pub id: EndpointId,
    pub profile: DeviceProfile,
    cost_table: Arc<CleanupCostTable>,
    /// Per-region sets of (task_id, sentinel).
    taints: [BTreeSet<(u64, u64)>; 6],
    /// Task of the most recent kernel; scope of the API cleanup methods.
    current_task: Option<u64>,
    busy_until_ns: TimeNs,
    trusted: bool,
}

impl Device {
    pub fn new(id: EndpointId, profile: DeviceProfile, cost_table: Arc<CleanupCostTable>) -> Self {
        Self {
            id,
            profile,
            cost_table,
            taints: Default::default(),
            current_task: None,
            busy_until_ns: 0,
            trusted: true,
        }
    }

    pub fn busy_until_ns(&self) -> TimeNs {
        self.busy_until_ns
    }

    pub fn is_busy_at(&self, t: TimeNs) -> bool {
        self.busy_until_ns > t
    }

    /// Trusted = restored via the composite cleanup and untouched since.
    pub fn is_trusted(&self) -> bool {
        self.trusted
    }

    pub fn cost_table(&self) -> &CleanupCostTable {
        &self.cost_table
    }

    pub fn current_task(&self) -> Option<u64> {
        self.current_task
    }

    /// Halts whatever is in flight (models the forced preemption path).
    pub fn halt(&mut self, at_ns: TimeNs) {
        if self.busy_until_ns > at_ns {
            self.busy_until_ns = at_ns;
        }
    }

    /// Runs a kernel starting at `at_ns`. The caller is responsible for
    /// dispatching only when the device is idle; a dispatch into a busy
    /// window is an error, not a queue.
    pub fn execute_kernel(
        &mut self,
        spec: &KernelSpec,
        input: &[u8],
        at_ns: TimeNs,
        sentinel: u64,
    ) -> Result<KernelRun, AccelError> {
        if !spec.kind.validate() {
            return Err(AccelError::InvalidKernel);
        }
        if self.is_busy_at(at_ns) {
            return Err(AccelError::DeviceBusy {
                busy_until_ns: self.busy_until_ns,
                at_ns,
            });
        }
        let expected = spec.kind.expected_input_len();
        if input.len() != expected {
            return Err(AccelError::ShapeMismatch {
                expected,
                got: input.len(),
            });
        }

        let output = match spec.kind {
            KernelKind::MatMul { n, m, k } => matmul_i32(input, n, m, k),
            KernelKind::Synthetic { out_bytes, .. } => {
                synthetic_digest(&spec.kind, spec.task_id, input, out_bytes as usize)
            }
        };

        let elapsed = flops_to_ns(spec.kind.flops(), self.profile.compute_rate_flops);
        let end = at_ns + elapsed;
        self.busy_until_ns = end;
        self.trusted = false;
        self.current_task = Some(spec.task_id);
        for region in spec.touched.iter() {
            self.taints[region_index(region)].insert((spec.task_id, sentinel));
        }
        Ok(KernelRun {
            output,
            start_ns: at_ns,
            end_ns: end,
        })
    }

    /// Applies a cleanup method at `at_ns`. Fails if a kernel is in flight.
    pub fn cleanup(
        &mut self,
        method: CleanupMethod,
        at_ns: TimeNs,
    ) -> Result<CleanupReport, AccelError> {
        if self.is_busy_at(at_ns) {
            return Err(AccelError::DeviceBusy {
                busy_until_ns: self.busy_until_ns,
                at_ns,
            });
        }
        Ok(self.apply_cleanup(method, at_ns))
    }

    /// Restores the device to a trusted state via the composite cleanup,
    /// preempting anything queued. Always leaves zero residual.
    pub fn reset_to_trusted_state(&mut self, at_ns: TimeNs) -> CleanupReport {
        self.halt(at_ns);
        let report = self.apply_cleanup(CleanupMethod::TrustedComposite, at_ns);
        self.trusted = true;
        report
    }

    fn apply_cleanup(&mut self, method: CleanupMethod, at_ns: TimeNs) -> CleanupReport {
        match method {
            // The API paths release the current task's resources; residue
            // from every other task stays where it is, in all regions.
            CleanupMethod::ApiDeviceReset | CleanupMethod::ApiCtxDestroy => {
                if let Some(current) = self.current_task {
                    for set in &mut self.taints {
                        set.retain(|(task, _)| *task != current);
                    }
                }
            }
            // The driver reboot wipes the architectural regions wholesale,
            // but cache contents survive it.
            CleanupMethod::SoftwareReboot => {
                for region in Region::ARCHITECTURAL {
                    self.taints[region_index(region)].clear();
                }
            }
            CleanupMethod::CodeClean(regions) => {
                for region in regions.iter() {
                    self.taints[region_index(region)].clear();
                }
            }
            CleanupMethod::ColdReboot => {
                for set in &mut self.taints {
                    set.clear();
                }
            }
            CleanupMethod::TrustedComposite => {
                for set in &mut self.taints {
                    set.clear();
                }
                // The trailing ApiDeviceReset has nothing left to remove.
            }
        }
        let elapsed = self.cost_table.cost_ns(method);
        self.busy_until_ns = at_ns + elapsed;
        if !matches!(method, CleanupMethod::TrustedComposite) {
            self.trusted = false;
        }
        CleanupReport {
            method,
            elapsed_ns: elapsed,
            residual: self.residual_regions(),
        }
    }

    fn residual_regions(&self) -> BTreeSet<Region> {
        Region::ALL
            .iter()
            .copied()
            .filter(|r| !self.taints[region_index(*r)].is_empty())
            .collect()
    }

    /// Exact current taint map: which tasks left residue in which regions.
    pub fn inspect_residual(&self) -> BTreeSet<(Region, u64)> {
        let mut out = BTreeSet::new();
        for region in Region::ALL {
            for (task, _) in &self.taints[region_index(region)] {
                out.insert((region, *task));
            }
        }
        out
    }
}

fn region_index(region: Region) -> usize {
    Region::ALL
        .iter()
        .position(|r| *r == region)
        .expect("region in ALL")
}

pub fn flops_to_ns(flops: u64, rate_flops_per_sec: u64) -> u64 {
    assert!(rate_flops_per_sec > 0, "compute rate must be positive");
    (flops as u128 * 1_000_000_000u128 / rate_flops_per_sec as u128) as u64
}

/// Row-major i32 matrix product with i64 accumulation.
fn matmul_i32(input: &[u8], n: u32, m: u32, k: u32) -> Vec<u8> {
    let (n, m, k) = (n as usize, m as usize, k as usize);
    let read_i32 = |words: &[u8], idx: usize| {
        i32::from_le_bytes(words[idx * 4..idx * 4 + 4].try_into().expect("in bounds"))
    };
    let (a, b) = input.split_at(n * m * 4);
    let mut out = Vec::with_capacity(n * k * 8);
    for row in 0..n {
        for col in 0..k {
            let mut acc: i64 = 0;
            for inner in 0..m {
                let x = read_i32(a, row * m + inner) as i64;
                let y = read_i32(b, inner * k + col) as i64;
                acc += x * y;
            }
            out.extend_from_slice(&acc.to_le_bytes());
        }
    }
    out
}

/// Counter-mode expansion of a SHA-256 digest keyed by the kernel identity.
pub fn synthetic_digest(kind: &KernelKind, task_id: u64, input: &[u8], out_len: usize) -> Vec<u8> {
    let (flops, in_bytes, out_bytes) = match *kind {
        KernelKind::Synthetic {
            flops,
            in_bytes,
            out_bytes,
        } => (flops, in_bytes, out_bytes),
        _ => unreachable!("synthetic digest only applies to synthetic kernels"),
    };
    let mut seed = Sha256::new();
    seed.update(b"hetee.synthetic.v1");
    seed.update(task_id.to_le_bytes());
    seed.update(flops.to_le_bytes());
    seed.update(in_bytes.to_le_bytes());
    seed.update(out_bytes.to_le_bytes());
    seed.update(input);
    let seed = seed.finalize();

    let mut out = Vec::with_capacity(out_len);
    let mut counter: u32 = 0;
    while out.len() < out_len {
        let mut h = Sha256::new();
        h.update(seed);
        h.update(counter.to_le_bytes());
        let block = h.finalize();
        let take = (out_len - out.len()).min(block.len());
        out.extend_from_slice(&block[..take]);
        counter += 1;
    }
    out
}
