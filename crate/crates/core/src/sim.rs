//! Simulation assembly.
//!
//! [`Hardware`] bundles the shared machine state — virtual clock, fabric,
//! device pool, audit log — and [`Simulation`] wires a controller and a
//! host-side RNG on top of it, all derived deterministically from one
//! [`RunConfig`]. Every mutation flows through `&mut Simulation`, which is
//! the single arbiter the concurrency model requires; socket mode wraps
//! the whole thing in a mutex.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::accel::Device;
use crate::attest::{measure_boot, DeviceIdentity, Measurement};
use crate::audit::AuditLog;
use crate::config::{ConfigError, RunConfig};
use crate::controller::{
    identity_seed, sign_image, vendor_signing_key, Controller, ControllerError,
};
use crate::fabric::{EndpointId, Fabric};
use crate::time::VirtualClock;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// The machine: everything outside the controller's own logic.
pub struct Hardware {
    pub clock: VirtualClock,
    pub fabric: Fabric,
    pub devices: BTreeMap<EndpointId, Device>,
    pub audit: AuditLog,
}

pub struct Simulation {
    pub config: RunConfig,
    pub hw: Hardware,
    pub controller: Controller,
    /// Client-side randomness (nonces, key-exchange seeds, workload data).
    pub host_rng: ChaCha12Rng,
    /// Test hook: swallow the next controller→host handshake reply to
    /// model a network drop mid-handshake.
    pub drop_next_handshake_reply: bool,
}

impl Simulation {
    /// Builds and boots a simulation from a validated config. Images are
    /// signed by the config's vendor key, so an untampered config always
    /// boots; [`Simulation::boot_with_images`] exercises the failure path.
    pub fn new(config: RunConfig) -> Result<Self, SimError> {
        config.validate()?;
        let vendor = vendor_signing_key(config.controller.vendor_seed);
        let firmware = sign_image(&vendor, config.controller.firmware.as_bytes());
        let system_sw = sign_image(&vendor, config.controller.system_software.as_bytes());
        Self::boot_with_images(config, firmware, system_sw)
    }

    /// Builds a simulation booting from the given (possibly mis-signed)
    /// images. Fails with `BootSignatureInvalid` when a signature is bad.
    pub fn boot_with_images(
        config: RunConfig,
        firmware: crate::controller::SignedImage,
        system_sw: crate::controller::SignedImage,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let clock = VirtualClock::new();
        let mut token_rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0x746f6b656e);
        let token_secret = rand::RngCore::next_u64(&mut token_rng);
        let fabric = Fabric::new(
            clock.clone(),
            token_secret,
            1,
            config.fabric.lane_budget,
            config.fabric.reserved_lanes,
            config.fabric.dma,
        );
        let mut hw = Hardware {
            clock,
            fabric,
            devices: BTreeMap::new(),
            audit: AuditLog::new(),
        };

        let vendor = vendor_signing_key(config.controller.vendor_seed);
        let identity = DeviceIdentity::from_seed(
            identity_seed(config.controller.identity_seed),
            1,
        );
        let controller = Controller::boot(
            &mut hw,
            &firmware,
            &system_sw,
            &vendor.verifying_key(),
            identity,
            config.devices.count,
            config.devices.profile(),
            config.devices.cost_table(),
            config.cost,
            config.controller.wait_for_devices,
            config.seed ^ 0x63747274,
        )?;

        let host_rng = ChaCha12Rng::seed_from_u64(config.seed ^ 0x686f7374);
        Ok(Self {
            config,
            hw,
            controller,
            host_rng,
            drop_next_handshake_reply: false,
        })
    }

    pub fn host(&self) -> EndpointId {
        EndpointId::host(0)
    }

    /// The measurement a correctly configured verifier expects: the fold
    /// of the config's boot images.
    pub fn expected_measurement(&self) -> Measurement {
        measure_boot(
            self.config.controller.firmware.as_bytes(),
            self.config.controller.system_software.as_bytes(),
        )
    }

    /// What the host currently sees on the bus.
    pub fn enumerate_host(&self) -> Vec<EndpointId> {
        self.hw
            .fabric
            .enumerate(self.host())
            .expect("primary host exists")
    }

    pub fn audit_jsonl(&self) -> String {
        self.hw.audit.to_jsonl()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::SignedImage;

    #[test]
    fn default_config_boots() {
        let sim = Simulation::new(RunConfig::default()).unwrap();
        assert_eq!(sim.hw.devices.len(), 4);
        // All devices start insecure and host-visible.
        assert_eq!(sim.enumerate_host().len(), 4);
        assert!(sim
            .hw
            .fabric
            .enumerate(EndpointId::controller())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn tampered_image_refuses_to_boot() {
        let config = RunConfig::default();
        let vendor = vendor_signing_key(config.controller.vendor_seed);
        let firmware = sign_image(&vendor, config.controller.firmware.as_bytes());
        // Stale signature over different bytes.
        let mut system_sw = sign_image(&vendor, config.controller.system_software.as_bytes());
        system_sw.bytes = b"trojaned system software".to_vec();
        match Simulation::boot_with_images(config, firmware, system_sw) {
            Err(SimError::Controller(ControllerError::BootSignatureInvalid)) => {}
            Err(other) => panic!("unexpected error: {other}"),
            Ok(_) => panic!("tampered image must not boot"),
        }
    }

    #[test]
    fn reboot_yields_identical_measurement() {
        let a = Simulation::new(RunConfig::default()).unwrap();
        let b = Simulation::new(RunConfig::default()).unwrap();
        assert_eq!(
            a.controller.measurement().digest,
            b.controller.measurement().digest
        );
        assert_eq!(
            a.controller.measurement().digest,
            a.expected_measurement().digest
        );
    }

    #[test]
    fn boot_requires_vendor_key_not_just_any_signer() {
        let config = RunConfig::default();
        let wrong_vendor = vendor_signing_key(0xbad);
        let firmware = sign_image(&wrong_vendor, config.controller.firmware.as_bytes());
        let system_sw = sign_image(&wrong_vendor, config.controller.system_software.as_bytes());
        let _ = SignedImage {
            bytes: vec![],
            signature: [0; 64],
        };
        assert!(Simulation::boot_with_images(config, firmware, system_sw).is_err());
    }
}
