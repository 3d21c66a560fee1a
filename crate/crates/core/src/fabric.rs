//! Software-defined PCIe fabric emulation.
//!
//! A single switch connects hosts, the security controller, and a pool of
//! accelerator devices. Routing is only mutable through the management
//! capability issued once at construction; hosts see exactly the insecure
//! devices routed to them, and the controller sees the secure pool. Task
//! queues living in controller space are exposed to a host only through an
//! explicitly mapped address window, and all host↔controller traffic moves
//! through the fabric's DMA engine under an affine latency model.
//!
//! All mutations are serialized through the owning arbiter (the simulation
//! in deterministic mode, a mutex-guarded service in socket mode).

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditKind, AuditLog};
use crate::time::{TimeNs, VirtualClock};

pub const DEFAULT_LANE_BUDGET: u32 = 97;
/// Lanes held back for the management port and host/controller uplinks.
pub const DEFAULT_RESERVED_LANES: u32 = 17;
pub const LANES_PER_DEVICE: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EndpointKind {
    Host,
    Controller,
    Device,
}

/// Identity of a fabric citizen. Ordering is (kind, index), which gives the
/// deterministic enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EndpointId {
    pub kind: EndpointKind,
    pub index: u32,
}

impl EndpointId {
    pub const fn new(kind: EndpointKind, index: u32) -> Self {
        Self { kind, index }
    }

    pub const fn host(index: u32) -> Self {
        Self::new(EndpointKind::Host, index)
    }

    pub const fn controller() -> Self {
        Self::new(EndpointKind::Controller, 0)
    }

    pub const fn device(index: u32) -> Self {
        Self::new(EndpointKind::Device, index)
    }
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EndpointKind::Host => write!(f, "host{}", self.index),
            EndpointKind::Controller => write!(f, "controller"),
            EndpointKind::Device => write!(f, "dev{}", self.index),
        }
    }
}

/// Which side of the security boundary a device is routed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum World {
    Insecure,
    Secure,
}

/// Capability required to reconfigure the fabric. Exactly one valid token
/// exists per fabric; whoever holds the matching secret holds the
/// management port.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManagementToken {
    secret: u64,
}

impl ManagementToken {
    /// Builds a token from a raw secret. Only a token carrying the secret
    /// drawn at fabric construction validates; anything else is forged.
    pub fn from_raw(secret: u64) -> Self {
        Self { secret }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RouteEntry {
    pub owner: EndpointId,
    pub world: World,
}

/// Device → (owner, world) map plus lane accounting.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RoutingTable {
    pub entries: BTreeMap<EndpointId, RouteEntry>,
    pub lane_budget: u32,
    pub reserved_lanes: u32,
    pub lanes_used: u32,
}

impl RoutingTable {
    /// Recomputes lane usage from scratch; must always agree with the
    /// incrementally maintained `lanes_used`.
    pub fn recount_lanes(&self) -> u32 {
        self.reserved_lanes + self.entries.len() as u32 * LANES_PER_DEVICE
    }
}

/// Ticket exposing one controller-side task queue to one host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AddressWindow {
    pub host: EndpointId,
    pub queue_id: u64,
    pub window_id: u64,
}

/// One completed DMA transfer under the virtual clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DmaRecord {
    pub src: EndpointId,
    pub dst: EndpointId,
    pub bytes: u64,
    pub start_ns: TimeNs,
    pub end_ns: TimeNs,
}

impl DmaRecord {
    pub fn latency_ns(&self) -> u64 {
        self.end_ns - self.start_ns
    }
}

/// Affine transfer-time model: `base + bytes / bandwidth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmaLatencyModel {
    pub base_ns: u64,
    /// Bytes per second; 0 means infinitely fast.
    pub bytes_per_sec: u64,
}

impl Default for DmaLatencyModel {
    fn default() -> Self {
        // 1 µs setup, 12 GB/s sustained.
        Self {
            base_ns: 1_000,
            bytes_per_sec: 12_000_000_000,
        }
    }
}

impl DmaLatencyModel {
    pub fn latency_ns(&self, bytes: u64) -> u64 {
        let transfer = if self.bytes_per_sec == 0 {
            0
        } else {
            (bytes as u128 * 1_000_000_000u128 / self.bytes_per_sec as u128) as u64
        };
        self.base_ns + transfer
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("caller lacks the management capability")]
    InvalidToken,
    #[error("unknown device {0}")]
    UnknownDevice(EndpointId),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(EndpointId),
    #[error("unknown queue {0}")]
    UnknownQueue(u64),
    #[error("lane budget exceeded: {requested} lanes requested, {available} available")]
    LaneBudgetExceeded { requested: u32, available: u32 },
    #[error("{src} has no route to {dst}")]
    NotRouted { src: EndpointId, dst: EndpointId },
    #[error("{host} has no window onto queue {queue_id}")]
    AccessDenied { host: EndpointId, queue_id: u64 },
    #[error("owner {owner} cannot own a device in world {world:?}")]
    InvalidOwner { owner: EndpointId, world: World },
}

/// Direction of a tapped transfer, as seen from the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TapDirection {
    HostToController,
    ControllerToHost,
}

/// Raw bytes observed crossing the host↔controller boundary. Only
/// populated while the tap is enabled.
#[derive(Debug, Clone)]
pub struct TapRecord {
    pub direction: TapDirection,
    pub queue_id: u64,
    pub bytes: Vec<u8>,
    pub time_ns: TimeNs,
}

#[derive(Debug, Default)]
struct QueuePipe {
    /// (frame bytes, virtual arrival time)
    to_controller: VecDeque<(Vec<u8>, TimeNs)>,
    to_host: VecDeque<(Vec<u8>, TimeNs)>,
}

pub struct Fabric {
    clock: VirtualClock,
    token_secret: u64,
    token_issued: bool,
    routes: RoutingTable,
    hosts: Vec<EndpointId>,
    dma_model: DmaLatencyModel,
    dma_log: Vec<DmaRecord>,
    queues: BTreeMap<u64, QueuePipe>,
    windows: BTreeMap<u64, AddressWindow>,
    next_window_id: u64,
    next_device_index: u32,
    tap_enabled: bool,
    tap: Vec<TapRecord>,
}

impl Fabric {
    /// Builds a fabric with one controller endpoint, `host_count` hosts and
    /// an empty device pool. The management token can be issued exactly
    /// once via [`Fabric::issue_management_token`].
    pub fn new(
        clock: VirtualClock,
        token_secret: u64,
        host_count: u32,
        lane_budget: u32,
        reserved_lanes: u32,
        dma_model: DmaLatencyModel,
    ) -> Self {
        Self {
            clock,
            token_secret,
            token_issued: false,
            routes: RoutingTable {
                entries: BTreeMap::new(),
                lane_budget,
                reserved_lanes,
                lanes_used: reserved_lanes,
            },
            hosts: (0..host_count).map(EndpointId::host).collect(),
            dma_model,
            dma_log: Vec::new(),
            queues: BTreeMap::new(),
            windows: BTreeMap::new(),
            next_window_id: 1,
            next_device_index: 0,
            tap_enabled: false,
            tap: Vec::new(),
        }
    }

    /// Hands out the management capability. Only the first caller gets it.
    pub fn issue_management_token(&mut self) -> Option<ManagementToken> {
        if self.token_issued {
            return None;
        }
        self.token_issued = true;
        Some(ManagementToken {
            secret: self.token_secret,
        })
    }

    fn check_token(&self, token: &ManagementToken) -> Result<(), FabricError> {
        if token.secret == self.token_secret {
            Ok(())
        } else {
            Err(FabricError::InvalidToken)
        }
    }

    pub fn hosts(&self) -> &[EndpointId] {
        &self.hosts
    }

    pub fn devices(&self) -> impl Iterator<Item = EndpointId> + '_ {
        self.routes.entries.keys().copied()
    }

    pub fn routes(&self) -> &RoutingTable {
        &self.routes
    }

    pub fn dma_model(&self) -> DmaLatencyModel {
        self.dma_model
    }

    pub fn dma_log(&self) -> &[DmaRecord] {
        &self.dma_log
    }

    pub fn world_of(&self, device: EndpointId) -> Option<World> {
        self.routes.entries.get(&device).map(|e| e.world)
    }

    fn endpoint_exists(&self, id: EndpointId) -> bool {
        match id.kind {
            EndpointKind::Controller => id.index == 0,
            EndpointKind::Host => self.hosts.contains(&id),
            EndpointKind::Device => self.routes.entries.contains_key(&id),
        }
    }

    /// Hot-plugs an x16 device, initially routed to `owner` in `world`.
    /// Lane accounting happens here: each device consumes 16 of the lanes
    /// left after the reserved uplinks.
    pub fn add_device(
        &mut self,
        token: &ManagementToken,
        owner: EndpointId,
        world: World,
    ) -> Result<EndpointId, FabricError> {
        self.check_token(token)?;
        validate_owner(owner, world)?;
        if !self.endpoint_exists(owner) {
            return Err(FabricError::UnknownEndpoint(owner));
        }
        if self.routes.lanes_used + LANES_PER_DEVICE > self.routes.lane_budget {
            return Err(FabricError::LaneBudgetExceeded {
                requested: LANES_PER_DEVICE,
                available: self.routes.lane_budget - self.routes.lanes_used,
            });
        }
        let id = EndpointId::device(self.next_device_index);
        self.next_device_index += 1;
        self.routes.entries.insert(id, RouteEntry { owner, world });
        self.routes.lanes_used += LANES_PER_DEVICE;
        debug_assert_eq!(self.routes.lanes_used, self.routes.recount_lanes());
        Ok(id)
    }

    /// Unplugs a device, releasing its lanes.
    pub fn remove_device(
        &mut self,
        token: &ManagementToken,
        device: EndpointId,
    ) -> Result<(), FabricError> {
        self.check_token(token)?;
        if self.routes.entries.remove(&device).is_none() {
            return Err(FabricError::UnknownDevice(device));
        }
        self.routes.lanes_used -= LANES_PER_DEVICE;
        debug_assert_eq!(self.routes.lanes_used, self.routes.recount_lanes());
        Ok(())
    }

    /// Atomically reroutes `device` to `owner`/`world`, recording a
    /// `WorldSwitch` audit event on every actual change. Reasserting the
    /// current route is a silent no-op.
    pub fn configure_route(
        &mut self,
        audit: &mut AuditLog,
        token: &ManagementToken,
        device: EndpointId,
        owner: EndpointId,
        world: World,
    ) -> Result<&RoutingTable, FabricError> {
        self.check_token(token)?;
        validate_owner(owner, world)?;
        if !self.endpoint_exists(owner) {
            return Err(FabricError::UnknownEndpoint(owner));
        }
        let entry = self
            .routes
            .entries
            .get_mut(&device)
            .ok_or(FabricError::UnknownDevice(device))?;
        let old = *entry;
        let new = RouteEntry { owner, world };
        if old == new {
            return Ok(&self.routes);
        }
        *entry = new;
        if old.world != world {
            audit.record(
                self.clock.now_ns(),
                AuditKind::WorldSwitch {
                    device,
                    from: old.world,
                    to: world,
                },
            );
        }
        debug_assert_eq!(self.routes.lanes_used, self.routes.recount_lanes());
        Ok(&self.routes)
    }

    /// What `viewer` can see on the bus. Hosts see only insecure devices
    /// routed to them; the controller sees the secure pool. Sorted by id.
    pub fn enumerate(&self, viewer: EndpointId) -> Result<Vec<EndpointId>, FabricError> {
        if !self.endpoint_exists(viewer) {
            return Err(FabricError::UnknownEndpoint(viewer));
        }
        let visible = self
            .routes
            .entries
            .iter()
            .filter(|(_, entry)| match viewer.kind {
                EndpointKind::Host => entry.world == World::Insecure && entry.owner == viewer,
                EndpointKind::Controller => entry.world == World::Secure,
                EndpointKind::Device => false,
            })
            .map(|(id, _)| *id)
            .collect();
        Ok(visible)
    }

    fn mutually_visible(&self, a: EndpointId, b: EndpointId) -> bool {
        use EndpointKind::*;
        let pair = |x: EndpointId, y: EndpointId| match (x.kind, y.kind) {
            // Hosts reach the controller through the managed queue windows.
            (Host, Controller) => true,
            (Controller, Device) => self.world_of(y) == Some(World::Secure),
            (Host, Device) => self
                .routes
                .entries
                .get(&y)
                .map(|e| e.world == World::Insecure && e.owner == x)
                .unwrap_or(false),
            _ => false,
        };
        pair(a, b) || pair(b, a)
    }

    /// Moves `bytes` from `src` to `dst` if the routing table allows them
    /// to see each other. Transfers are independent — each is charged the
    /// affine latency from the moment its payload is ready — and the
    /// virtual clock advances to the completion time.
    pub fn dma_transfer(
        &mut self,
        src: EndpointId,
        dst: EndpointId,
        bytes: u64,
    ) -> Result<DmaRecord, FabricError> {
        self.dma_transfer_at(src, dst, bytes, self.clock.now_ns())
    }

    /// As [`Fabric::dma_transfer`], but the payload is only ready at
    /// `ready_ns`.
    pub fn dma_transfer_at(
        &mut self,
        src: EndpointId,
        dst: EndpointId,
        bytes: u64,
        ready_ns: TimeNs,
    ) -> Result<DmaRecord, FabricError> {
        if !self.endpoint_exists(src) {
            return Err(FabricError::UnknownEndpoint(src));
        }
        if !self.endpoint_exists(dst) {
            return Err(FabricError::UnknownEndpoint(dst));
        }
        if !self.mutually_visible(src, dst) {
            return Err(FabricError::NotRouted { src, dst });
        }
        let start = ready_ns;
        let end = start + self.dma_model.latency_ns(bytes);
        self.clock.advance_to(end);
        let record = DmaRecord {
            src,
            dst,
            bytes,
            start_ns: start,
            end_ns: end,
        };
        self.dma_log.push(record);
        Ok(record)
    }

    // ---- Task-queue windows -------------------------------------------------

    /// Registers a task queue living in controller space. Controller-side
    /// bookkeeping only; hosts cannot touch it until a window is mapped.
    pub fn register_queue(&mut self, queue_id: u64) {
        self.queues.entry(queue_id).or_default();
    }

    pub fn unregister_queue(&mut self, queue_id: u64) {
        self.queues.remove(&queue_id);
        self.windows.retain(|_, w| w.queue_id != queue_id);
    }

    /// Maps `queue_id` into `host`'s address space. The window is the only
    /// host-visible surface of the controller.
    pub fn map_queue_window(
        &mut self,
        token: &ManagementToken,
        queue_id: u64,
        host: EndpointId,
    ) -> Result<AddressWindow, FabricError> {
        self.check_token(token)?;
        if !self.endpoint_exists(host) {
            return Err(FabricError::UnknownEndpoint(host));
        }
        if !self.queues.contains_key(&queue_id) {
            return Err(FabricError::UnknownQueue(queue_id));
        }
        let window = AddressWindow {
            host,
            queue_id,
            window_id: self.next_window_id,
        };
        self.next_window_id += 1;
        self.windows.insert(window.window_id, window);
        Ok(window)
    }

    fn window_for(&self, host: EndpointId, queue_id: u64) -> Result<AddressWindow, FabricError> {
        self.windows
            .values()
            .find(|w| w.host == host && w.queue_id == queue_id)
            .copied()
            .ok_or(FabricError::AccessDenied { host, queue_id })
    }

    /// Host-side write: pushes a frame through the window into the
    /// controller-side queue, paying one host→controller DMA.
    pub fn window_push(
        &mut self,
        host: EndpointId,
        queue_id: u64,
        frame: Vec<u8>,
        ready_ns: TimeNs,
    ) -> Result<DmaRecord, FabricError> {
        self.window_for(host, queue_id)?;
        let record =
            self.dma_transfer_at(host, EndpointId::controller(), frame.len() as u64, ready_ns)?;
        if self.tap_enabled {
            self.tap.push(TapRecord {
                direction: TapDirection::HostToController,
                queue_id,
                bytes: frame.clone(),
                time_ns: record.end_ns,
            });
        }
        let pipe = self
            .queues
            .get_mut(&queue_id)
            .ok_or(FabricError::UnknownQueue(queue_id))?;
        pipe.to_controller.push_back((frame, record.end_ns));
        Ok(record)
    }

    /// Host-side read: pulls the next result frame, if one has arrived.
    pub fn window_pull(
        &mut self,
        host: EndpointId,
        queue_id: u64,
    ) -> Result<Option<(Vec<u8>, TimeNs)>, FabricError> {
        self.window_for(host, queue_id)?;
        let pipe = self
            .queues
            .get_mut(&queue_id)
            .ok_or(FabricError::UnknownQueue(queue_id))?;
        Ok(pipe.to_host.pop_front())
    }

    /// Controller-side read of the next inbound frame.
    pub fn queue_pop(&mut self, queue_id: u64) -> Result<Option<(Vec<u8>, TimeNs)>, FabricError> {
        let pipe = self
            .queues
            .get_mut(&queue_id)
            .ok_or(FabricError::UnknownQueue(queue_id))?;
        Ok(pipe.to_controller.pop_front())
    }

    /// Controller-side write: sends a result frame back to the host side
    /// of the window, paying one controller→host DMA.
    pub fn queue_push_result(
        &mut self,
        queue_id: u64,
        host: EndpointId,
        frame: Vec<u8>,
        ready_ns: TimeNs,
    ) -> Result<DmaRecord, FabricError> {
        if !self.queues.contains_key(&queue_id) {
            return Err(FabricError::UnknownQueue(queue_id));
        }
        let record =
            self.dma_transfer_at(EndpointId::controller(), host, frame.len() as u64, ready_ns)?;
        if self.tap_enabled {
            self.tap.push(TapRecord {
                direction: TapDirection::ControllerToHost,
                queue_id,
                bytes: frame.clone(),
                time_ns: record.end_ns,
            });
        }
        let pipe = self.queues.get_mut(&queue_id).expect("checked above");
        pipe.to_host.push_back((frame, record.end_ns));
        Ok(record)
    }

    // ---- Transport tap ------------------------------------------------------

    pub fn set_tap(&mut self, enabled: bool) {
        self.tap_enabled = enabled;
    }

    pub fn tap_records(&self) -> &[TapRecord] {
        &self.tap
    }

    pub fn clear_tap(&mut self) {
        self.tap.clear();
    }
}

fn validate_owner(owner: EndpointId, world: World) -> Result<(), FabricError> {
    let ok = match world {
        World::Secure => owner.kind == EndpointKind::Controller,
        World::Insecure => owner.kind == EndpointKind::Host,
    };
    if ok {
        Ok(())
    } else {
        Err(FabricError::InvalidOwner { owner, world })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fabric() -> (Fabric, ManagementToken, AuditLog) {
        let clock = VirtualClock::new();
        let mut fabric = Fabric::new(
            clock,
            0xfeed_beef,
            1,
            DEFAULT_LANE_BUDGET,
            DEFAULT_RESERVED_LANES,
            DmaLatencyModel::default(),
        );
        let token = fabric.issue_management_token().expect("first issue");
        (fabric, token, AuditLog::new())
    }

    #[test]
    fn token_issued_once() {
        let (mut fabric, _token, _) = fabric();
        assert!(fabric.issue_management_token().is_none());
    }

    #[test]
    fn five_devices_fit_sixth_rejected() {
        let (mut fabric, token, _) = fabric();
        let host = EndpointId::host(0);
        for _ in 0..5 {
            fabric
                .add_device(&token, host, World::Insecure)
                .expect("within lane budget");
        }
        let err = fabric.add_device(&token, host, World::Insecure).unwrap_err();
        assert!(matches!(err, FabricError::LaneBudgetExceeded { .. }));
        assert_eq!(fabric.routes().lanes_used, fabric.routes().recount_lanes());
    }

    #[test]
    fn forged_token_rejected_table_unchanged() {
        let (mut fabric, token, mut audit) = fabric();
        let host = EndpointId::host(0);
        let dev = fabric.add_device(&token, host, World::Insecure).unwrap();
        let before = fabric.routes().entries.clone();
        let forged = ManagementToken::from_raw(0xdead_c0de);
        let err = fabric
            .configure_route(&mut audit, &forged, dev, EndpointId::controller(), World::Secure)
            .unwrap_err();
        assert_eq!(err, FabricError::InvalidToken);
        assert_eq!(fabric.routes().entries, before);
        assert!(audit.is_empty());
    }

    #[test]
    fn reroute_is_idempotent_without_audit() {
        let (mut fabric, token, mut audit) = fabric();
        let host = EndpointId::host(0);
        let dev = fabric.add_device(&token, host, World::Insecure).unwrap();
        fabric
            .configure_route(&mut audit, &token, dev, host, World::Insecure)
            .expect("no-op reassign succeeds");
        assert!(audit.is_empty());
        fabric
            .configure_route(&mut audit, &token, dev, EndpointId::controller(), World::Secure)
            .unwrap();
        assert_eq!(audit.len(), 1);
    }

    #[test]
    fn host_never_sees_secure_devices() {
        let (mut fabric, token, mut audit) = fabric();
        let host = EndpointId::host(0);
        let devs: Vec<_> = (0..4)
            .map(|_| fabric.add_device(&token, host, World::Insecure).unwrap())
            .collect();
        for d in &devs {
            fabric
                .configure_route(&mut audit, &token, *d, EndpointId::controller(), World::Secure)
                .unwrap();
        }
        assert!(fabric.enumerate(host).unwrap().is_empty());

        // Bring two back to the insecure world.
        for d in &devs[..2] {
            fabric
                .configure_route(&mut audit, &token, *d, host, World::Insecure)
                .unwrap();
        }
        assert_eq!(fabric.enumerate(host).unwrap(), devs[..2].to_vec());
        assert_eq!(fabric.enumerate(EndpointId::controller()).unwrap(), devs[2..].to_vec());
    }

    #[test]
    fn enumerate_unknown_endpoint() {
        let (fabric, _, _) = fabric();
        assert!(matches!(
            fabric.enumerate(EndpointId::host(9)),
            Err(FabricError::UnknownEndpoint(_))
        ));
    }

    #[test]
    fn dma_latency_model_examples() {
        let model = DmaLatencyModel::default();
        // Base case: zero bytes costs exactly the base latency.
        assert_eq!(model.latency_ns(0), 1_000);
        // 12 MB at 12 GB/s: 1 µs + 1000 µs.
        assert_eq!(model.latency_ns(12_000_000), 1_000 + 1_000_000);
    }

    #[test]
    fn dma_to_secure_device_not_routed() {
        let (mut fabric, token, mut audit) = fabric();
        let host = EndpointId::host(0);
        let dev = fabric.add_device(&token, host, World::Insecure).unwrap();
        fabric
            .configure_route(&mut audit, &token, dev, EndpointId::controller(), World::Secure)
            .unwrap();
        let err = fabric.dma_transfer(host, dev, 64).unwrap_err();
        assert!(matches!(err, FabricError::NotRouted { .. }));
        // Controller → secure device is fine.
        fabric
            .dma_transfer(EndpointId::controller(), dev, 64)
            .expect("controller reaches secure device");
    }

    #[test]
    fn dma_determinism() {
        let (mut f1, t1, mut a1) = fabric();
        let (mut f2, t2, mut a2) = fabric();
        for (f, t, a) in [(&mut f1, &t1, &mut a1), (&mut f2, &t2, &mut a2)] {
            let host = EndpointId::host(0);
            let dev = f.add_device(t, host, World::Insecure).unwrap();
            f.configure_route(a, t, dev, host, World::Insecure).ok();
            f.dma_transfer(host, dev, 4096).unwrap();
        }
        assert_eq!(f1.dma_log(), f2.dma_log());
    }

    #[test]
    fn window_isolation_between_hosts() {
        let clock = VirtualClock::new();
        let mut fabric = Fabric::new(clock, 1, 2, 97, 17, DmaLatencyModel::default());
        let token = fabric.issue_management_token().unwrap();
        let (h0, h1) = (EndpointId::host(0), EndpointId::host(1));
        fabric.register_queue(10);
        fabric.register_queue(11);
        fabric.map_queue_window(&token, 10, h0).unwrap();
        fabric.map_queue_window(&token, 11, h1).unwrap();

        // Each host can use its own queue…
        fabric.window_push(h0, 10, vec![0xAA], 0).unwrap();
        fabric.window_push(h1, 11, vec![0xBB], 0).unwrap();
        // …and is denied on the other's, in both directions.
        assert!(matches!(
            fabric.window_push(h0, 11, vec![0xCC], 0),
            Err(FabricError::AccessDenied { .. })
        ));
        assert!(matches!(
            fabric.window_pull(h1, 10),
            Err(FabricError::AccessDenied { .. })
        ));

        let (frame, _) = fabric.queue_pop(10).unwrap().expect("frame arrived");
        assert_eq!(frame, vec![0xAA]);
        let (frame, _) = fabric.queue_pop(11).unwrap().expect("frame arrived");
        assert_eq!(frame, vec![0xBB]);
    }

    #[test]
    fn pull_without_window_is_denied() {
        let (mut fabric, _token, _) = fabric();
        fabric.register_queue(5);
        let err = fabric.window_pull(EndpointId::host(0), 5).unwrap_err();
        assert!(matches!(err, FabricError::AccessDenied { .. }));
    }

    #[test]
    fn map_window_requires_known_queue() {
        let (mut fabric, token, _) = fabric();
        assert!(matches!(
            fabric.map_queue_window(&token, 99, EndpointId::host(0)),
            Err(FabricError::UnknownQueue(99))
        ));
    }
}
