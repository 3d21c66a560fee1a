//! Deterministic simulation of a heterogeneous TEE built around a security
//! controller on a software-defined PCIe fabric.
//!
//! The controller is the only trusted unit: it owns the fabric's management
//! capability, attests itself to clients, and mediates every use of the
//! shared accelerator pool through sealed task queues. Accelerators move
//! between the secure and insecure worlds on demand, with a mandatory
//! context cleanup on every boundary crossing.
//!
//! Modules map to the machine's subsystems:
//! - [`fabric`] — switch emulation: routing, enumeration visibility, queue
//!   address windows, host-to-host DMA with an affine latency model.
//! - [`accel`] — simulated devices: deterministic kernels, taint-tracked
//!   memory regions, the cleanup method catalog with costs and residuals.
//! - [`protocol`] — the sealed task-envelope wire format and strict
//!   per-queue sequencing.
//! - [`attest`] — boot measurement, quotes, attestation-bound key agreement.
//! - [`controller`] — task manager, enclaves, elastic allocation, the
//!   priority-preemptive scheduler, and the mode-switch service.
//! - [`host`] — client library: attest, submit sealed workloads, and the
//!   unprotected baseline path.
//! - [`bench`] — workload profiles, latency breakdowns, throughput reports.

pub mod accel;
pub mod attest;
pub mod audit;
pub mod bench;
pub mod config;
pub mod controller;
pub mod fabric;
pub mod golden;
pub mod host;
pub mod metrics;
pub mod protocol;
pub mod sim;
pub mod time;
pub mod transport;
