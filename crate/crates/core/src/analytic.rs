//! Noise-free distributions derived from lobe sets.
//!
//! A joint intensity `|psi(ts, ti)|^2` built from Gaussian lobes of equal
//! width is itself a finite sum of separable Gaussians: one per lobe plus a
//! signed cross term per overlapping lobe pair. Projection onto the delay
//! axis and detector-jitter convolution keep that form, so every quantity in
//! this module is evaluated in closed form and binned with exact CDF
//! differences.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::device::{propagate, DeviceParams, LobeSet, Mode, FWHM_PER_SIGMA};
use crate::error::{domain, Error, Result};
use crate::qubit::{PhaseSettings, TimeBinState, C64};

/// Cross terms are kept while the lobe overlap exceeds this.
const OVERLAP_CUTOFF: f64 = 1e-16;
const COVERAGE_SIGMAS: f64 = 4.0;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn gaussian_cdf(x: f64, center: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        if x >= center {
            1.0
        } else {
            0.0
        }
    } else {
        std_normal_cdf((x - center) / sigma)
    }
}

fn gaussian_mass(lo: f64, hi: f64, center: f64, sigma: f64) -> f64 {
    gaussian_cdf(hi, center, sigma) - gaussian_cdf(lo, center, sigma)
}

fn gaussian_pdf(x: f64, center: f64, sigma: f64) -> f64 {
    let z = (x - center) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Uniform axis of `n` bins `[start + k step, start + (k+1) step)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub start_ps: f64,
    pub step_ps: f64,
    pub n: usize,
}

impl AxisSpec {
    pub fn new(start_ps: f64, step_ps: f64, n: usize) -> Result<Self> {
        if !(step_ps > 0.0) || n == 0 || !start_ps.is_finite() {
            return domain(format!(
                "invalid axis start={start_ps} step={step_ps} n={n}"
            ));
        }
        Ok(Self {
            start_ps,
            step_ps,
            n,
        })
    }

    /// Axis spanning `[lo, hi)` with bins of `step`.
    pub fn spanning(lo: f64, hi: f64, step: f64) -> Result<Self> {
        Self::new(lo, step, ((hi - lo) / step).ceil().max(1.0) as usize)
    }

    pub fn end_ps(&self) -> f64 {
        self.start_ps + self.step_ps * self.n as f64
    }

    pub fn edge(&self, k: usize) -> f64 {
        self.start_ps + self.step_ps * k as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        self.start_ps + self.step_ps * (k as f64 + 0.5)
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|k| self.center(k))
    }

    fn covers(&self, center: f64, sigma: f64) -> bool {
        center - COVERAGE_SIGMAS * sigma >= self.start_ps
            && center + COVERAGE_SIGMAS * sigma <= self.end_ps()
    }
}

/// Separable 2D Gaussian term of a joint intensity. `weight` is the
/// integrated mass and may be negative for interference cross terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointComponent {
    pub signal_center: f64,
    pub idler_center: f64,
    pub signal_sigma: f64,
    pub idler_sigma: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct JointIntensity {
    pub components: Vec<JointComponent>,
}

impl JointIntensity {
    pub fn from_lobes(set: &LobeSet) -> Self {
        let lobes = &set.lobes;
        let mut components = Vec::with_capacity(lobes.len());
        for (j, a) in lobes.iter().enumerate() {
            components.push(JointComponent {
                signal_center: a.t_signal_center,
                idler_center: a.t_idler_center,
                signal_sigma: a.width_sigma,
                idler_sigma: a.width_sigma,
                weight: a.intensity(),
            });
            for b in &lobes[j + 1..] {
                if (a.width_sigma - b.width_sigma).abs() > 1e-12 * a.width_sigma {
                    continue;
                }
                let sigma = a.width_sigma;
                let ds = a.t_signal_center - b.t_signal_center;
                let di = a.t_idler_center - b.t_idler_center;
                let overlap = (-(ds * ds + di * di) / (8.0 * sigma * sigma)).exp();
                if overlap <= OVERLAP_CUTOFF {
                    continue;
                }
                components.push(JointComponent {
                    signal_center: 0.5 * (a.t_signal_center + b.t_signal_center),
                    idler_center: 0.5 * (a.t_idler_center + b.t_idler_center),
                    signal_sigma: sigma,
                    idler_sigma: sigma,
                    weight: 2.0 * (a.amplitude * b.amplitude.conj()).re * overlap,
                });
            }
        }
        Self { components }
    }

    pub fn total(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn density(&self, ts: f64, ti: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                c.weight
                    * gaussian_pdf(ts, c.signal_center, c.signal_sigma)
                    * gaussian_pdf(ti, c.idler_center, c.idler_sigma)
            })
            .sum()
    }

    /// Exact probability mass in each grid cell.
    pub fn rasterize(&self, signal: AxisSpec, idler: AxisSpec) -> Result<Jti> {
        let truncated: Vec<String> = self
            .components
            .iter()
            .filter(|c| c.weight > 0.0)
            .filter(|c| {
                !signal.covers(c.signal_center, c.signal_sigma)
                    || !idler.covers(c.idler_center, c.idler_sigma)
            })
            .map(|c| format!("({:.3}, {:.3}) ps", c.signal_center, c.idler_center))
            .collect();
        if !truncated.is_empty() {
            return Err(Error::Coverage { truncated });
        }
        let mut values = vec![0.0; signal.n * idler.n];
        for c in &self.components {
            let ms: Vec<f64> = (0..signal.n)
                .map(|k| {
                    gaussian_mass(
                        signal.edge(k),
                        signal.edge(k + 1),
                        c.signal_center,
                        c.signal_sigma,
                    )
                })
                .collect();
            let mi: Vec<f64> = (0..idler.n)
                .map(|k| {
                    gaussian_mass(
                        idler.edge(k),
                        idler.edge(k + 1),
                        c.idler_center,
                        c.idler_sigma,
                    )
                })
                .collect();
            for (row, s) in values.chunks_mut(idler.n).zip(&ms) {
                if *s == 0.0 {
                    continue;
                }
                for (v, i) in row.iter_mut().zip(&mi) {
                    *v += c.weight * s * i;
                }
            }
        }
        for v in &mut values {
            *v = v.max(0.0);
        }
        Ok(Jti {
            signal_axis: signal,
            idler_axis: idler,
            values,
        })
    }

    pub fn project_delay(&self) -> DelayDistribution {
        DelayDistribution {
            components: self
                .components
                .iter()
                .map(|c| DelayComponent {
                    center: c.idler_center - c.signal_center,
                    sigma: c.signal_sigma.hypot(c.idler_sigma),
                    weight: c.weight,
                })
                .collect(),
        }
    }
}

/// Gaussian term of a delay (`t_i - t_s`) distribution; `sigma = 0` is a
/// point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayComponent {
    pub center: f64,
    pub sigma: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayDistribution {
    pub components: Vec<DelayComponent>,
}

impl DelayDistribution {
    pub fn point_mass(center: f64, weight: f64) -> Self {
        Self {
            components: vec![DelayComponent {
                center,
                sigma: 0.0,
                weight,
            }],
        }
    }

    pub fn total(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| DelayComponent {
                    weight: c.weight * factor,
                    ..*c
                })
                .collect(),
        }
    }

    pub fn extend(&mut self, other: &DelayDistribution) {
        self.components.extend_from_slice(&other.components);
    }

    /// Mass with delay in `[lo, hi)`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * gaussian_mass(lo, hi, c.center, c.sigma))
            .sum()
    }

    pub fn density(&self, d: f64) -> f64 {
        self.components
            .iter()
            .filter(|c| c.sigma > 0.0)
            .map(|c| c.weight * gaussian_pdf(d, c.center, c.sigma))
            .sum()
    }

    pub fn histogram(&self, axis: AxisSpec) -> DelayHistogram {
        let values = (0..axis.n)
            .map(|k| self.mass_between(axis.edge(k), axis.edge(k + 1)).max(0.0))
            .collect();
        DelayHistogram { axis, values }
    }

    /// Delays of the local density maxima found on a grid of `step` ps.
    pub fn local_maxima(&self, lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).ceil() as usize + 1;
        let d: Vec<f64> = (0..n).map(|k| self.density(lo + k as f64 * step)).collect();
        (1..n.saturating_sub(1))
            .filter(|&k| d[k] > d[k - 1] && d[k] >= d[k + 1])
            .map(|k| lo + k as f64 * step)
            .collect()
    }
}

/// Gaussian convolution modelling detector timing jitter.
pub trait Smear {
    /// Convolve with per-detector Gaussian jitter of intensity FWHM
    /// `jitter_fwhm_ps`.
    fn smear(&self, jitter_fwhm_ps: f64) -> Self;
}

impl JointIntensity {
    /// Convolve with different jitter on the signal and idler detectors.
    pub fn smear_each(&self, signal_fwhm_ps: f64, idler_fwhm_ps: f64) -> Self {
        let (ss, si) = (
            signal_fwhm_ps / FWHM_PER_SIGMA,
            idler_fwhm_ps / FWHM_PER_SIGMA,
        );
        Self {
            components: self
                .components
                .iter()
                .map(|c| JointComponent {
                    signal_sigma: c.signal_sigma.hypot(ss),
                    idler_sigma: c.idler_sigma.hypot(si),
                    ..*c
                })
                .collect(),
        }
    }
}

impl Smear for JointIntensity {
    fn smear(&self, jitter_fwhm_ps: f64) -> Self {
        self.smear_each(jitter_fwhm_ps, jitter_fwhm_ps)
    }
}

impl Smear for DelayDistribution {
    /// Two independent detectors broaden the delay by `sqrt(2)` times the
    /// single-detector jitter.
    fn smear(&self, jitter_fwhm_ps: f64) -> Self {
        let sj = SQRT_2 * jitter_fwhm_ps / FWHM_PER_SIGMA;
        Self {
            components: self
                .components
                .iter()
                .map(|c| DelayComponent {
                    sigma: c.sigma.hypot(sj),
                    ..*c
                })
                .collect(),
        }
    }
}

/// Rasterized joint temporal intensity; `values` holds the mass per cell,
/// row-major by signal bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jti {
    pub signal_axis: AxisSpec,
    pub idler_axis: AxisSpec,
    pub values: Vec<f64>,
}

impl Jti {
    pub fn get(&self, signal_bin: usize, idler_bin: usize) -> f64 {
        self.values[signal_bin * self.idler_axis.n + idler_bin]
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn bin_ps(&self) -> f64 {
        self.signal_axis.step_ps
    }

    /// Sum along lines of constant `t_i - t_s`.
    pub fn project_delay(&self) -> Result<DelayHistogram> {
        let (s, i) = (self.signal_axis, self.idler_axis);
        if (s.step_ps - i.step_ps).abs() > 1e-12 * s.step_ps {
            return domain("delay projection needs equal signal and idler bin widths");
        }
        let h = s.step_ps;
        let n = s.n + i.n - 1;
        let axis = AxisSpec::new(i.start_ps - s.start_ps - (s.n as f64 - 0.5) * h, h, n)?;
        let mut values = vec![0.0; n];
        for a in 0..s.n {
            for b in 0..i.n {
                values[b + s.n - 1 - a] += self.get(a, b);
            }
        }
        Ok(DelayHistogram { axis, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayHistogram {
    pub axis: AxisSpec,
    pub values: Vec<f64>,
}

impl DelayHistogram {
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sum of bins whose centers lie in `[lo, hi)`.
    pub fn sum_between(&self, lo: f64, hi: f64) -> f64 {
        self.axis
            .centers()
            .zip(&self.values)
            .filter(|(c, _)| *c >= lo && *c < hi)
            .map(|(_, v)| v)
            .sum()
    }
}

/// Intensity raster of a lobe set; fails if the grid clips any lobe.
pub fn rasterize_jti(lobes: &LobeSet, signal: AxisSpec, idler: AxisSpec) -> Result<Jti> {
    let truncated: Vec<String> = lobes
        .lobes
        .iter()
        .filter(|l| {
            !signal.covers(l.t_signal_center, l.width_sigma)
                || !idler.covers(l.t_idler_center, l.width_sigma)
        })
        .map(|l| format!("({:.3}, {:.3}) ps", l.t_signal_center, l.t_idler_center))
        .collect();
    if !truncated.is_empty() {
        return Err(Error::Coverage { truncated });
    }
    JointIntensity::from_lobes(lobes).rasterize(signal, idler)
}

/// Exact delay distribution of a lobe set.
pub fn project_delay(lobes: &LobeSet) -> DelayDistribution {
    JointIntensity::from_lobes(lobes).project_delay()
}

/// Count aggregate whose fringe is evaluated by [`fringe_visibility`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityMode {
    /// Passive device, all coincidences at one port pair.
    PassiveFull,
    /// Passive device, zero-delay peak only.
    PassiveCentral,
    /// Passive device, only the interfering `(t_s, t_s)` lobe.
    PassiveInterferingLobe,
    /// Actively switched device, all coincidences.
    Active,
}

/// Mean and first-harmonic amplitude of a fringe `f(delta)` that is exactly
/// `mean + amplitude cos(delta - phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fringe {
    pub mean: f64,
    pub amplitude: f64,
    pub phase: f64,
}

impl Fringe {
    pub fn from_samples(f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let f0 = f(0.0)?;
        let fq = f(0.5 * PI)?;
        let fp = f(PI)?;
        let mean = 0.5 * (f0 + fp);
        let b = 0.5 * (f0 - fp);
        let c = fq - mean;
        Ok(Self {
            mean,
            amplitude: b.hypot(c),
            phase: c.atan2(b),
        })
    }

    pub fn visibility(&self) -> f64 {
        if self.mean <= 0.0 {
            0.0
        } else {
            self.amplitude / self.mean
        }
    }

    pub fn max(&self) -> f64 {
        self.mean + self.amplitude
    }

    /// Visibility after adding a flat accidental floor set by the
    /// coincidence-to-accidental ratio at the fringe maximum.
    pub fn visibility_with_car(&self, car: f64) -> f64 {
        let floor = self.max() / car;
        self.amplitude / (self.mean + floor)
    }
}

/// Mass of the aggregate under `mode` at port pair (0, 0), as a function of
/// the fringe argument `delta`.
pub fn aggregate_mass(mode: VisibilityMode, params: &DeviceParams, delta: f64) -> Result<f64> {
    let device_mode = if mode == VisibilityMode::Active {
        Mode::Active
    } else {
        Mode::Passive
    };
    let state = TimeBinState::maximally_entangled(-delta);
    let prop = propagate(
        &state,
        params,
        device_mode,
        &PhaseSettings::projective(0.0, 0.0, -delta),
    )?;
    let set = prop.port_pair(0, 0);
    let t_s = params.t_s_ps;
    Ok(match mode {
        VisibilityMode::PassiveFull | VisibilityMode::Active => set.total_probability(),
        VisibilityMode::PassiveCentral => set
            .lobes
            .iter()
            .filter(|l| l.delay().abs() < 0.5 * t_s)
            .map(|l| l.intensity())
            .sum(),
        VisibilityMode::PassiveInterferingLobe => {
            set.lobe_at(t_s, t_s).map_or(0.0, |l| l.intensity())
        }
    })
}

/// Fringe visibility `(max - min) / (max + min)` of the selected aggregate,
/// optionally capped by a finite CAR.
pub fn fringe_visibility(
    mode: VisibilityMode,
    params: &DeviceParams,
    car: Option<f64>,
) -> Result<f64> {
    let fringe = Fringe::from_samples(|d| aggregate_mass(mode, params, d))?;
    match car {
        None => Ok(fringe.visibility()),
        Some(c) if c > 0.0 => Ok(fringe.visibility_with_car(c)),
        Some(c) => domain(format!("CAR must be positive, got {c}")),
    }
}

/// Visibility ceiling `CAR / (CAR + 2)` for a perfect fringe.
pub fn car_limited_visibility(car: f64) -> f64 {
    car / (car + 2.0)
}

/// Schmidt number `1 / sum(lambda^2)` of the joint amplitude sampled at
/// the bin centers of `signal` x `idler`.
pub fn schmidt_number(lobes: &LobeSet, signal: AxisSpec, idler: AxisSpec) -> Result<f64> {
    if lobes.is_empty() {
        return domain("Schmidt number of an empty lobe set");
    }
    let amp = |t: f64, c: f64, sigma: f64| (-(t - c).powi(2) / (4.0 * sigma * sigma)).exp();
    let ts: Vec<f64> = signal.centers().collect();
    let ti: Vec<f64> = idler.centers().collect();
    let m = DMatrix::<C64>::from_fn(ts.len(), ti.len(), |r, c| {
        lobes
            .lobes
            .iter()
            .map(|l| {
                l.amplitude
                    * amp(ts[r], l.t_signal_center, l.width_sigma)
                    * amp(ti[c], l.t_idler_center, l.width_sigma)
            })
            .sum()
    });
    let singular = m.singular_values();
    let total: f64 = singular.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return domain("joint amplitude vanishes on the grid");
    }
    let purity: f64 = singular.iter().map(|s| (s * s / total).powi(2)).sum();
    Ok(1.0 / purity)
}
