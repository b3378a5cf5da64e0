//! Simulation of on-chip time-bin entangled photon pair analysis.
//!
//! The crate covers the two-photon state and its projections, a photonic
//! model of the lithium-niobate analyzer, closed-form intensity and delay
//! distributions, a Monte Carlo detection-event generator, a coincidence
//! correlator, and the Bell-fringe analysis built on top of them.

pub mod analysis;
pub mod analytic;
pub mod config;
pub mod correlator;
pub mod device;
pub mod error;
pub mod eventgen;
pub mod export;
pub mod qubit;
pub mod timetag;

pub use analysis::{
    fit_fringe, run_bell_sweep, violation_sigmas, BellCurve, BellPoint, FitOptions, FringeFit,
    SweepConfig,
};
pub use config::ExperimentConfig;
pub use correlator::{
    coincide, estimate_accidentals, fold_jti, CoincidenceConfig, Jti2dCounts, StreamingCorrelator,
};
pub use device::{propagate, DeviceParams, LobeSet, Mode, Topology};
pub use error::{Error, Result};
pub use eventgen::{
    detect, expected_car, sample_pairs, DetectorParams, PairDistribution, SourceParams,
};
pub use qubit::{PhaseSettings, TimeBinState};
pub use timetag::{TimeTag, TimeTagStream};
