//! Versioned experiment configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correlator::CoincidenceConfig;
use crate::device::{DeviceParams, Mode, Topology};
use crate::error::{Error, Result};
use crate::eventgen::{simulate, DetectorParams, PairDistribution, SourceParams};
use crate::qubit::{PhaseSettings, TimeBinState};
use crate::timetag::TimeTagStream;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorPair {
    pub signal: DetectorParams,
    pub idler: DetectorParams,
}

/// Static analyzer and pump phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub signal_rad: f64,
    pub idler_rad: f64,
    pub pump_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub device: DeviceParams,
    pub source: SourceParams,
    pub detectors: DetectorPair,
    pub correlator: CoincidenceConfig,
    pub mode: Mode,
    pub topology: Topology,
    pub phases: PhaseConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Packaged device with a short, low-loss collection path; sized for
    /// quick runs on a workstation.
    pub fn desk() -> Self {
        let det = DetectorParams {
            channel_loss_db: 1.0,
            ..DetectorParams::snspd()
        };
        Self {
            schema_version: SCHEMA_VERSION,
            device: DeviceParams::packaged(),
            source: SourceParams {
                pair_mean: 0.02,
                ..SourceParams::default()
            },
            detectors: DetectorPair {
                signal: det.clone(),
                idler: det,
            },
            correlator: CoincidenceConfig {
                bin_ps: 10,
                ..CoincidenceConfig::default()
            },
            mode: Mode::Active,
            topology: Topology::Shared,
            phases: PhaseConfig::default(),
            seed: 1,
        }
    }

    /// Loss budget and detectors of the reference measurement.
    pub fn reference() -> Self {
        Self {
            source: SourceParams {
                pair_mean: 0.01,
                ..SourceParams::default()
            },
            detectors: DetectorPair {
                signal: DetectorParams::snspd(),
                idler: DetectorParams::snspd(),
            },
            ..Self::desk()
        }
    }

    /// Lossless device, ideal detectors and no background.
    pub fn ideal() -> Self {
        Self {
            device: DeviceParams::ideal(),
            source: SourceParams {
                pair_mean: 0.01,
                ..SourceParams::default()
            },
            detectors: DetectorPair {
                signal: DetectorParams::ideal(),
                idler: DetectorParams::ideal(),
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let wrap = |r: Result<()>| r.map_err(|e| Error::Config(e.to_string()));
        wrap(self.device.validate())?;
        wrap(self.source.validate())?;
        wrap(self.detectors.signal.validate())?;
        wrap(self.detectors.idler.validate())?;
        self.correlator.validate()?;
        let p = &self.phases;
        if ![p.signal_rad, p.idler_rad, p.pump_rad]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Config("phases must be finite".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn state(&self) -> TimeBinState {
        TimeBinState::maximally_entangled(self.phases.pump_rad)
    }

    pub fn phase_settings(&self) -> PhaseSettings {
        PhaseSettings::projective(
            self.phases.signal_rad,
            self.phases.idler_rad,
            self.phases.pump_rad,
        )
    }

    pub fn pump_period_ps(&self) -> f64 {
        self.source.period_ps()
    }

    pub fn pair_distribution(&self) -> Result<PairDistribution> {
        PairDistribution::for_device(
            &self.state(),
            &self.device,
            self.mode,
            &self.phase_settings(),
        )
    }

    /// Monte Carlo tag stream for `n_pulses` with the config digest in its header.
    pub fn generate(&self, n_pulses: u64) -> Result<TimeTagStream> {
        self.validate()?;
        let dist = self.pair_distribution()?;
        let mut stream = simulate(
            n_pulses,
            &self.source,
            &dist,
            &self.detectors.signal,
            &self.detectors.idler,
            self.seed,
        )?;
        stream.header.params_digest = self.digest();
        Ok(stream)
    }
}
