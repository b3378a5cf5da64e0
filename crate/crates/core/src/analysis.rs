//! Phase sweeps, fringe fits and Bell-violation significance.
//!
//! A sweep steps the fringe argument `Δ = φ_s + φ_i − φ_p` over one period.
//! With a shared device one actuator sets both analyzer phases to
//! `(Δ + φ_p) / 2`; with two devices only the signal phase moves and the
//! idler phase stays at its configured value.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::correlator::count_delay_range;
use crate::device::{tps_power, Mode, Topology};
use crate::error::{domain, Error, Result};
use crate::eventgen::{
    derive_seed, idler_channel, signal_channel, simulate, tune_noise_for_car, ExpectedDelay,
    PairDistribution,
};
use crate::qubit::{PhaseSettings, TimeBinState};

pub const MIN_FIT_POINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// Expected counts from the closed-form model.
    #[default]
    Analytic,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n_phases: usize,
    pub pulses_per_point: u64,
    pub backend: Backend,
    /// Monitored output ports (signal, idler).
    pub ports: (usize, usize),
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_phases: 16,
            pulses_per_point: 100_000_000,
            backend: Backend::Analytic,
            ports: (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellPoint {
    /// Phase applied by the swept actuator.
    pub actuator_phase_rad: f64,
    /// Heater power producing that phase.
    pub tps_power_mw: f64,
    pub fringe_argument_rad: f64,
    /// All coincidences across the three delay peaks.
    pub coincidences: f64,
    /// Shifted-window estimate for the same delay range.
    pub accidentals: f64,
    /// Coincidences within the central counting window only.
    pub central_coincidences: f64,
    pub central_accidentals: f64,
    pub integration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellCurve {
    pub mode: Mode,
    pub topology: Topology,
    pub backend: Backend,
    pub points: Vec<BellPoint>,
}

/// Analyzer phases for a fringe argument under the configured topology.
pub fn sweep_phases(cfg: &ExperimentConfig, delta: f64) -> (f64, PhaseSettings) {
    let pump = cfg.phases.pump_rad;
    match cfg.topology {
        Topology::Shared => {
            let theta = 0.5 * (delta + pump);
            (theta, PhaseSettings::projective(theta, theta, pump))
        }
        Topology::TwoDevice => {
            let phi_s = delta + pump - cfg.phases.idler_rad;
            (
                phi_s,
                PhaseSettings::projective(phi_s, cfg.phases.idler_rad, pump),
            )
        }
    }
}

/// Half-widths of the central window (kept clear of the side peaks) and of
/// the span covering all three peaks.
pub fn delay_spans(cfg: &ExperimentConfig) -> (i64, i64) {
    let w = cfg.correlator.window_ps as i64;
    let t = cfg.device.t_s_ps.round() as i64;
    (w.min(t / 2), t + w)
}

/// Sweep the fringe argument over `[0, 2π)`; points are returned in phase order.
pub fn run_bell_sweep(cfg: &ExperimentConfig, sweep: &SweepConfig) -> Result<BellCurve> {
    cfg.validate()?;
    if sweep.n_phases == 0 {
        return domain("a sweep needs at least one phase point");
    }
    let (central, full) = delay_spans(cfg);
    let seconds = sweep.pulses_per_point as f64 * cfg.pump_period_ps() * 1e-12;
    let state: TimeBinState = cfg.state();
    let (ps, pi) = sweep.ports;
    let points = (0..sweep.n_phases)
        .into_par_iter()
        .map(|k| {
            let delta = 2.0 * PI * k as f64 / sweep.n_phases as f64;
            let (actuator, phases) = sweep_phases(cfg, delta);
            let dist = PairDistribution::for_device(&state, &cfg.device, cfg.mode, &phases)?;
            let counts = match sweep.backend {
                Backend::Analytic => {
                    let model = ExpectedDelay::new(
                        &cfg.source,
                        &cfg.detectors.signal,
                        &cfg.detectors.idler,
                        &dist,
                        sweep.ports,
                    )?;
                    let (tf, af) = model.rates_between(-full, full);
                    let (tc, ac) = model.rates_between(-central, central);
                    [
                        (tf + af) * seconds,
                        af * seconds,
                        (tc + ac) * seconds,
                        ac * seconds,
                    ]
                }
                Backend::MonteCarlo => {
                    let seed = derive_seed(cfg.seed, k as u64);
                    let stream = simulate(
                        sweep.pulses_per_point,
                        &cfg.source,
                        &dist,
                        &cfg.detectors.signal,
                        &cfg.detectors.idler,
                        seed,
                    )?;
                    let a = stream.channel(signal_channel(ps));
                    let b = stream.channel(idler_channel(pi));
                    let shift = (cfg.correlator.accidental_offset as f64 * cfg.pump_period_ps())
                        .round() as i64;
                    let count = |lo: i64, hi: i64| count_delay_range(&a, &b, lo, hi) as f64;
                    [
                        count(-full, full),
                        count(shift - full, shift + full),
                        count(-central, central),
                        count(shift - central, shift + central),
                    ]
                }
            };
            Ok(BellPoint {
                actuator_phase_rad: actuator,
                tps_power_mw: tps_power(actuator.rem_euclid(2.0 * PI), cfg.device.p_pi_mw),
                fringe_argument_rad: delta,
                coincidences: counts[0],
                accidentals: counts[1],
                central_coincidences: counts[2],
                central_accidentals: counts[3],
                integration_s: seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BellCurve {
        mode: cfg.mode,
        topology: cfg.topology,
        backend: sweep.backend,
        points,
    })
}

/// Copy of `cfg` with the background singles rate chosen so that the CAR
/// in the counting window, at the fringe maximum of the monitored ports,
/// equals `target`.
pub fn tune_for_car(
    cfg: &ExperimentConfig,
    target: f64,
    ports: (usize, usize),
) -> Result<ExperimentConfig> {
    cfg.validate()?;
    let (_, phases) = sweep_phases(cfg, 0.0);
    let dist = PairDistribution::for_device(&cfg.state(), &cfg.device, cfg.mode, &phases)?;
    let noise = tune_noise_for_car(
        target,
        &cfg.source,
        &cfg.detectors.signal,
        &cfg.detectors.idler,
        &dist,
        ports,
        cfg.correlator.window_ps,
    )?;
    let mut out = cfg.clone();
    out.source.noise_singles_rate_hz = noise;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CountSelection {
    /// Every coincidence, no temporal post-selection.
    #[default]
    All,
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub subtract_accidentals: bool,
    pub selection: CountSelection,
    /// Re-weight with model variances until the visibility settles.
    pub reweight: bool,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            subtract_accidentals: false,
            selection: CountSelection::All,
            reweight: false,
            max_iterations: 50,
        }
    }
}

/// `N(Δ) = A [1 + V cos(Δ − φ0)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub offset: f64,
    pub visibility: f64,
    pub phase_origin: f64,
    pub offset_err: f64,
    pub visibility_err: f64,
    pub phase_origin_err: f64,
    /// Covariance of (offset, visibility, phase origin).
    pub covariance: [[f64; 3]; 3],
    pub chi2_per_dof: f64,
}

impl FringeFit {
    pub fn model(&self, delta: f64) -> f64 {
        self.offset * (1.0 + self.visibility * (delta - self.phase_origin).cos())
    }
}

struct Harmonic {
    beta: Vector3<f64>,
    cov: Matrix3<f64>,
    chi2: f64,
}

fn harmonic_fit(x: &[f64], y: &[f64], var: &[f64]) -> Result<Harmonic> {
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for ((&xi, &yi), &vi) in x.iter().zip(y).zip(var) {
        let row = Vector3::new(1.0, xi.cos(), xi.sin());
        let w = 1.0 / vi;
        normal += w * row * row.transpose();
        rhs += w * yi * row;
    }
    let cov = normal
        .try_inverse()
        .ok_or_else(|| Error::Domain("phase points do not determine a sinusoid".into()))?;
    let beta = cov * rhs;
    let chi2 = x
        .iter()
        .zip(y)
        .zip(var)
        .map(|((&xi, &yi), &vi)| {
            let r = yi - (beta[0] + beta[1] * xi.cos() + beta[2] * xi.sin());
            r * r / vi
        })
        .sum();
    Ok(Harmonic { beta, cov, chi2 })
}

fn curve_data(curve: &BellCurve, opts: &FitOptions) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (mut x, mut y, mut var) = (Vec::new(), Vec::new(), Vec::new());
    for p in &curve.points {
        let (c, a) = match opts.selection {
            CountSelection::All => (p.coincidences, p.accidentals),
            CountSelection::Central => (p.central_coincidences, p.central_accidentals),
        };
        x.push(p.fringe_argument_rad);
        if opts.subtract_accidentals {
            y.push(c - a);
            var.push((c + a).max(1.0));
        } else {
            y.push(c);
            var.push(c.max(1.0));
        }
    }
    (x, y, var)
}

/// Weighted harmonic regression with Poisson weights.
pub fn fit_fringe(curve: &BellCurve, opts: &FitOptions) -> Result<FringeFit> {
    let n = curve.points.len();
    if n < 3 {
        return domain(format!("{n} points cannot constrain three fit parameters"));
    }
    if n < MIN_FIT_POINTS {
        return domain(format!(
            "fringe fits need at least {MIN_FIT_POINTS} phase points, got {n}"
        ));
    }
    let (x, y, mut var) = curve_data(curve, opts);
    let mut fit = harmonic_fit(&x, &y, &var)?;
    if opts.reweight {
        let extra: Vec<f64> = if opts.subtract_accidentals {
            var.iter().zip(&y).map(|(v, yi)| v - yi).collect()
        } else {
            vec![0.0; n]
        };
        let mut last = visibility_of(&fit.beta);
        let mut converged = false;
        for _ in 0..opts.max_iterations {
            for (k, &xi) in x.iter().enumerate() {
                let m = fit.beta[0] + fit.beta[1] * xi.cos() + fit.beta[2] * xi.sin();
                var[k] = (m + extra[k]).max(1.0);
            }
            fit = harmonic_fit(&x, &y, &var)?;
            let v = visibility_of(&fit.beta);
            if (v - last).abs() <= 1e-12 * v.abs().max(1.0) {
                converged = true;
                break;
            }
            last = v;
        }
        if !converged {
            return Err(Error::NoConvergence {
                iterations: opts.max_iterations,
                last_visibility: last,
            });
        }
    }
    Ok(summarize(&fit, n))
}

fn visibility_of(beta: &Vector3<f64>) -> f64 {
    beta[1].hypot(beta[2]) / beta[0]
}

fn summarize(fit: &Harmonic, n: usize) -> FringeFit {
    let (a, b, c) = (fit.beta[0], fit.beta[1], fit.beta[2]);
    let r = b.hypot(c);
    let cov = &fit.cov;
    let visibility = (r / a).clamp(0.0, 1.0);
    let scale = r.max(a.abs()) * 1e-12;
    let (jac, visibility_err) = if r > scale {
        let j = Matrix3::new(
            1.0,
            0.0,
            0.0,
            -r / (a * a),
            b / (r * a),
            c / (r * a),
            0.0,
            -c / (r * r),
            b / (r * r),
        );
        let var_v = (j * cov * j.transpose())[(1, 1)];
        (j, var_v.max(0.0).sqrt())
    } else {
        // direction undefined; use the isotropic spread of (b, c)
        let j = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        (j, (0.5 * (cov[(1, 1)] + cov[(2, 2)])).sqrt() / a.abs())
    };
    let mut out = jac * cov * jac.transpose();
    out[(1, 1)] = visibility_err * visibility_err;
    let dof = n.saturating_sub(3).max(1) as f64;
    FringeFit {
        offset: a,
        visibility,
        phase_origin: c.atan2(b),
        offset_err: cov[(0, 0)].sqrt(),
        visibility_err,
        phase_origin_err: out[(2, 2)].max(0.0).sqrt(),
        covariance: std::array::from_fn(|i| std::array::from_fn(|j| out[(i, j)])),
        chi2_per_dof: fit.chi2 / dof,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Standard deviations above the local-realism bound `1/√2`.
    pub sigmas: f64,
    pub s: f64,
    pub s_err: f64,
}

pub fn violation_sigmas(visibility: f64, visibility_err: f64) -> Violation {
    Violation {
        sigmas: (visibility - FRAC_1_SQRT_2) / visibility_err,
        s: 2.0 * SQRT_2 * visibility,
        s_err: 2.0 * SQRT_2 * visibility_err,
    }
}

impl FringeFit {
    pub fn violation(&self) -> Violation {
        violation_sigmas(self.visibility, self.visibility_err)
    }
}
