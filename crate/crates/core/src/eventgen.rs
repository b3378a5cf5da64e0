//! Monte Carlo pair emission and detection.
//!
//! Signal photons leaving device port `p` land on channel `2p`, idler
//! photons on channel `2p + 1`. Pulses are processed in fixed blocks with
//! one ChaCha stream per block and purpose, so output does not depend on
//! the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{AxisSpec, DelayComponent, DelayDistribution, DelayHistogram};
use crate::device::{
    propagate, DecomposedLobe, DeviceParams, Mode, Propagation, FWHM_PER_SIGMA, PORT_PAIRS,
};
use crate::error::{domain, Result};
use crate::qubit::{PhaseSettings, TimeBinState};
use crate::timetag::{PulseClock, RunHeader, TimeTag, TimeTagStream};

pub const BLOCK_PULSES: u64 = 1 << 20;
/// Time of the first pulse, leaving room for negative jitter.
pub const EMISSION_OFFSET_PS: u64 = 1000;
const NORMALIZATION_TOL: f64 = 1e-9;

const PAIR_DOMAIN: u64 = 0x5041_4952;
const DETECT_DOMAIN: u64 = 0x4445_5443;
const NOISE_DOMAIN: u64 = 0x4e4f_4953;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MultipairModel {
    #[default]
    Poisson,
    Thermal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceParams {
    pub rep_rate_mhz: f64,
    /// Mean number of pairs per pump pulse.
    pub pair_mean: f64,
    pub multipair_model: MultipairModel,
    /// Uncorrelated background on every channel.
    pub noise_singles_rate_hz: f64,
    pub pump_phase_jitter_rms_rad: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            rep_rate_mhz: 500.0,
            pair_mean: 0.01,
            multipair_model: MultipairModel::Poisson,
            noise_singles_rate_hz: 0.0,
            pump_phase_jitter_rms_rad: 0.0,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate_mhz > 0.0 && self.rep_rate_mhz.is_finite()) {
            return domain("rep_rate_mhz must be positive");
        }
        if !(self.pair_mean >= 0.0 && self.pair_mean.is_finite()) {
            return domain("pair_mean must be non-negative");
        }
        if !(self.noise_singles_rate_hz >= 0.0 && self.noise_singles_rate_hz.is_finite()) {
            return domain("noise_singles_rate_hz must be non-negative");
        }
        if !(self.pump_phase_jitter_rms_rad >= 0.0 && self.pump_phase_jitter_rms_rad.is_finite()) {
            return domain("pump_phase_jitter_rms_rad must be non-negative");
        }
        Ok(())
    }

    pub fn period_ps(&self) -> f64 {
        1e6 / self.rep_rate_mhz
    }

    /// `E[n(n-1)] / E[n]^2` for the pair-number distribution.
    fn multipair_factor(&self) -> f64 {
        match self.multipair_model {
            MultipairModel::Poisson => 1.0,
            MultipairModel::Thermal => 2.0,
        }
    }

    fn prob_nonempty(&self) -> f64 {
        let mu = self.pair_mean;
        match self.multipair_model {
            MultipairModel::Poisson => -(-mu).exp_m1(),
            MultipairModel::Thermal => mu / (1.0 + mu),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ns: f64,
    pub dark_rate_hz: f64,
    pub channel_loss_db: f64,
}

impl DetectorParams {
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            jitter_fwhm_ps: 0.0,
            dead_time_ns: 0.0,
            dark_rate_hz: 0.0,
            channel_loss_db: 0.0,
        }
    }

    /// Superconducting nanowire detector behind the lossy collection path
    /// of the reference setup.
    pub fn snspd() -> Self {
        Self {
            efficiency: 0.85,
            jitter_fwhm_ps: 50.0,
            dead_time_ns: 20.0,
            dark_rate_hz: 100.0,
            channel_loss_db: 18.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return domain("detector efficiency must lie in [0, 1]");
        }
        for (name, v) in [
            ("jitter_fwhm_ps", self.jitter_fwhm_ps),
            ("dead_time_ns", self.dead_time_ns),
            ("dark_rate_hz", self.dark_rate_hz),
            ("channel_loss_db", self.channel_loss_db),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return domain(format!("{name} must be non-negative"));
            }
        }
        Ok(())
    }

    /// Probability that a photon reaching the fiber is registered.
    pub fn survival(&self) -> f64 {
        self.efficiency * 10f64.powf(-self.channel_loss_db / 10.0)
    }

    pub fn jitter_sigma_ps(&self) -> f64 {
        self.jitter_fwhm_ps / FWHM_PER_SIGMA
    }
}

pub fn signal_channel(port: usize) -> u8 {
    2 * port as u8
}

pub fn idler_channel(port: usize) -> u8 {
    2 * port as u8 + 1
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    signal_port: u8,
    idler_port: u8,
    lobe: DecomposedLobe,
}

impl Outcome {
    fn weight(&self, delta: f64) -> f64 {
        self.lobe.at_pump_offset(delta).intensity()
    }

    /// Weight averaged over a Gaussian pump phase of the given rms.
    fn mean_weight(&self, jitter_rms: f64) -> f64 {
        let e = self.lobe.from_early;
        let l = self.lobe.from_late;
        e.norm_sqr()
            + l.norm_sqr()
            + 2.0 * (l * e.conj()).re * (-0.5 * jitter_rms * jitter_rms).exp()
    }
}

/// Joint output distribution of one pair: every (port pair, lobe) outcome,
/// conditioned on both photons leaving the chip.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDistribution {
    outcomes: Vec<Outcome>,
    /// Per-photon transmission of the device itself.
    pub device_transmission: f64,
    pub width_sigma_ps: f64,
}

impl PairDistribution {
    /// `device_transmission` is the per-photon intensity transmission that
    /// scaled the lobes. The rescaled outcomes sum to one for a lossless
    /// switch; a pulse-averaged switch leaves a deficit, which is the
    /// probability that the pair is lost in switching.
    pub fn from_propagation(prop: &Propagation, device_transmission: f64) -> Result<Self> {
        if !(device_transmission > 0.0 && device_transmission <= 1.0) {
            return domain("device transmission must lie in (0, 1]");
        }
        let scale = 1.0 / device_transmission;
        let mut outcomes = Vec::new();
        let mut width = 0.0;
        for (k, &(s, i)) in PORT_PAIRS.iter().enumerate() {
            for lobe in &prop.decomposed[k] {
                width = lobe.width_sigma;
                outcomes.push(Outcome {
                    signal_port: s as u8,
                    idler_port: i as u8,
                    lobe: DecomposedLobe {
                        from_early: lobe.from_early * scale,
                        from_late: lobe.from_late * scale,
                        ..*lobe
                    },
                });
            }
        }
        let total: f64 = outcomes.iter().map(|o| o.weight(0.0)).sum();
        if !(total > 0.0 && total <= 1.0 + NORMALIZATION_TOL) {
            return domain(format!(
                "pair distribution sums to {total}, expected a value in (0, 1]"
            ));
        }
        Ok(Self {
            outcomes,
            device_transmission,
            width_sigma_ps: width,
        })
    }

    pub fn for_device(
        state: &TimeBinState,
        params: &DeviceParams,
        mode: Mode,
        phases: &PhaseSettings,
    ) -> Result<Self> {
        let prop = propagate(state, params, mode, phases)?;
        Self::from_propagation(&prop, 10f64.powf(-params.insertion_loss_db / 10.0))
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Probability that the signal photon exits `port`, averaged over pump jitter.
    pub fn signal_marginal(&self, port: usize, jitter_rms: f64) -> f64 {
        self.outcomes
            .iter()
            .filter(|o| o.signal_port as usize == port)
            .map(|o| o.mean_weight(jitter_rms))
            .sum()
    }

    pub fn idler_marginal(&self, port: usize, jitter_rms: f64) -> f64 {
        self.outcomes
            .iter()
            .filter(|o| o.idler_port as usize == port)
            .map(|o| o.mean_weight(jitter_rms))
            .sum()
    }

    /// Delay (`t_i − t_s`) distribution of one pair at a port pair,
    /// including detector jitter.
    pub fn pair_delay(
        &self,
        ports: (usize, usize),
        jitter_rms: f64,
        extra_sigma_ps: f64,
    ) -> DelayDistribution {
        let components = self
            .outcomes
            .iter()
            .filter(|o| (o.signal_port as usize, o.idler_port as usize) == ports)
            .map(|o| DelayComponent {
                center: o.lobe.t_idler_center - o.lobe.t_signal_center,
                sigma: (2.0 * o.lobe.width_sigma.powi(2) + extra_sigma_ps.powi(2)).sqrt(),
                weight: o.mean_weight(jitter_rms),
            })
            .collect();
        DelayDistribution { components }
    }

    /// Delay distribution between a signal photon and an idler photon from
    /// two independent pairs of the same pulse.
    pub fn independent_delay(
        &self,
        ports: (usize, usize),
        jitter_rms: f64,
        extra_sigma_ps: f64,
    ) -> DelayDistribution {
        let mut components = Vec::new();
        for s in self
            .outcomes
            .iter()
            .filter(|o| o.signal_port as usize == ports.0)
        {
            for i in self
                .outcomes
                .iter()
                .filter(|o| o.idler_port as usize == ports.1)
            {
                components.push(DelayComponent {
                    center: i.lobe.t_idler_center - s.lobe.t_signal_center,
                    sigma: (s.lobe.width_sigma.powi(2)
                        + i.lobe.width_sigma.powi(2)
                        + extra_sigma_ps.powi(2))
                    .sqrt(),
                    weight: s.mean_weight(jitter_rms) * i.mean_weight(jitter_rms),
                });
            }
        }
        DelayDistribution { components }
    }

    fn cumulative(&self, delta: f64, buf: &mut Vec<f64>) {
        buf.clear();
        let mut acc = 0.0;
        for o in &self.outcomes {
            acc += o.weight(delta);
            buf.push(acc);
        }
    }
}

/// One emitted pair, times relative to its pulse's early-bin origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEvent {
    pub pulse: u64,
    pub signal_port: u8,
    pub idler_port: u8,
    pub t_signal_ps: f64,
    pub t_idler_ps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEvents {
    pub events: Vec<PairEvent>,
    pub n_pulses: u64,
    pub clock: PulseClock,
    pub device_transmission: f64,
    pub seed: u64,
}

impl PairEvents {
    pub fn duration_ps(&self) -> u64 {
        if self.n_pulses == 0 {
            0
        } else {
            self.clock.origin(self.n_pulses)
        }
    }

    fn n_blocks(&self) -> u64 {
        self.n_pulses.div_ceil(BLOCK_PULSES)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent sub-run of a seeded experiment.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5355_4252)))
}

/// Independent generator for a purpose and pulse block.
pub(crate) fn block_rng(seed: u64, purpose: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose)));
    rng.set_stream(block);
    rng
}

/// Draws `n ≥ 1` from the pair-number law conditioned on a non-empty pulse.
fn nonempty_count(rng: &mut ChaCha8Rng, source: &SourceParams) -> u64 {
    let mu = source.pair_mean;
    match source.multipair_model {
        MultipairModel::Thermal => 1 + Geometric::new(1.0 / (1.0 + mu)).unwrap().sample(rng),
        MultipairModel::Poisson => {
            let target = rng.random::<f64>() * -(-mu).exp_m1();
            let mut p = (-mu).exp() * mu;
            let mut cum = p;
            let mut k = 1u64;
            while cum < target && k < 10_000 {
                k += 1;
                p *= mu / k as f64;
                cum += p;
            }
            k
        }
    }
}

/// Emit pairs for `n_pulses` pump pulses.
pub fn sample_pairs(
    n_pulses: u64,
    source: &SourceParams,
    dist: &PairDistribution,
    seed: u64,
) -> Result<PairEvents> {
    source.validate()?;
    let clock = PulseClock::new(source.period_ps(), EMISSION_OFFSET_PS);
    let mut out = PairEvents {
        events: Vec::new(),
        n_pulses,
        clock,
        device_transmission: dist.device_transmission,
        seed,
    };
    let p_hit = source.prob_nonempty();
    if n_pulses == 0 || p_hit == 0.0 || dist.is_empty() {
        return Ok(out);
    }
    let gap = Geometric::new(p_hit).map_err(|e| crate::Error::Domain(e.to_string()))?;
    let unit = Normal::new(0.0, 1.0).unwrap();
    let jitter = source.pump_phase_jitter_rms_rad;
    let blocks: Vec<Vec<PairEvent>> = (0..out.n_blocks())
        .into_par_iter()
        .map(|b| {
            let mut rng = block_rng(seed, PAIR_DOMAIN, b);
            let start = b * BLOCK_PULSES;
            let end = (start + BLOCK_PULSES).min(n_pulses);
            let mut events = Vec::new();
            let mut cum = Vec::with_capacity(dist.len());
            if jitter == 0.0 {
                dist.cumulative(0.0, &mut cum);
            }
            let mut k = start;
            loop {
                k = k.saturating_add(gap.sample(&mut rng));
                if k >= end {
                    break;
                }
                let n = nonempty_count(&mut rng, source);
                if jitter > 0.0 {
                    let delta: f64 = jitter * unit.sample(&mut rng);
                    dist.cumulative(delta, &mut cum);
                }
                let total = *cum.last().unwrap();
                for _ in 0..n {
                    let u = rng.random::<f64>();
                    if u >= total {
                        continue;
                    }
                    let j = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
                    let o = &dist.outcomes[j];
                    let sigma = o.lobe.width_sigma;
                    events.push(PairEvent {
                        pulse: k,
                        signal_port: o.signal_port,
                        idler_port: o.idler_port,
                        t_signal_ps: o.lobe.t_signal_center + sigma * unit.sample(&mut rng),
                        t_idler_ps: o.lobe.t_idler_center + sigma * unit.sample(&mut rng),
                    });
                }
                k += 1;
            }
            events
        })
        .collect();
    out.events = blocks.into_iter().flatten().collect();
    Ok(out)
}

fn jittered(rng: &mut ChaCha8Rng, origin: u64, t_rel: f64, sigma: f64) -> u64 {
    let t = origin as f64
        + t_rel
        + if sigma > 0.0 {
            sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)
        } else {
            0.0
        };
    t.round().max(0.0) as u64
}

/// Turn emitted pairs into detector tags: photon survival, timing jitter,
/// dark and background singles, then per-channel dead time.
pub fn detect(
    pairs: &PairEvents,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    source: &SourceParams,
    seed: u64,
) -> Result<TimeTagStream> {
    det_s.validate()?;
    det_i.validate()?;
    source.validate()?;
    let keep_s = det_s.survival() * pairs.device_transmission;
    let keep_i = det_i.survival() * pairs.device_transmission;
    let (sig_s, sig_i) = (det_s.jitter_sigma_ps(), det_i.jitter_sigma_ps());
    let duration = pairs.duration_ps();
    let clock = pairs.clock;
    let n_blocks = pairs.n_blocks();
    let bounds: Vec<usize> = (0..=n_blocks)
        .map(|b| pairs.events.partition_point(|e| e.pulse < b * BLOCK_PULSES))
        .collect();
    let noise_rate = |ch: u8| {
        let det = if ch.is_multiple_of(2) { det_s } else { det_i };
        det.dark_rate_hz + source.noise_singles_rate_hz
    };

    let blocks: Vec<Vec<TimeTag>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut tags = Vec::new();
            let mut rng = block_rng(seed, DETECT_DOMAIN, b);
            for e in &pairs.events[bounds[b as usize]..bounds[b as usize + 1]] {
                let origin = clock.origin(e.pulse);
                if rng.random::<f64>() < keep_s {
                    tags.push(TimeTag {
                        channel: signal_channel(e.signal_port as usize),
                        time_ps: jittered(&mut rng, origin, e.t_signal_ps, sig_s),
                    });
                }
                if rng.random::<f64>() < keep_i {
                    tags.push(TimeTag {
                        channel: idler_channel(e.idler_port as usize),
                        time_ps: jittered(&mut rng, origin, e.t_idler_ps, sig_i),
                    });
                }
            }
            let lo = if b == 0 {
                0
            } else {
                clock.origin(b * BLOCK_PULSES)
            };
            let hi = if b + 1 == n_blocks {
                duration
            } else {
                clock.origin((b + 1) * BLOCK_PULSES)
            };
            let mut rng = block_rng(seed, NOISE_DOMAIN, b);
            for ch in 0..4u8 {
                let mean = noise_rate(ch) * (hi - lo) as f64 * 1e-12;
                if mean <= 0.0 || hi <= lo {
                    continue;
                }
                let n = Poisson::new(mean).unwrap().sample(&mut rng) as u64;
                for _ in 0..n {
                    tags.push(TimeTag {
                        channel: ch,
                        time_ps: rng.random_range(lo..hi),
                    });
                }
            }
            tags
        })
        .collect();

    let header = RunHeader {
        duration_ps: duration,
        rep_rate_mhz: source.rep_rate_mhz,
        n_pulses: pairs.n_pulses,
        emission_offset_ps: clock.offset_ps,
        seed: pairs.seed,
        params_digest: String::new(),
    };
    let mut stream = TimeTagStream::from_unsorted(header, blocks.into_iter().flatten().collect());
    apply_dead_time(
        &mut stream.tags,
        [det_s, det_i, det_s, det_i].map(|d| (d.dead_time_ns * 1000.0).round() as u64),
    );
    Ok(stream)
}

/// Non-paralyzable dead time per channel on time-sorted tags.
fn apply_dead_time(tags: &mut Vec<TimeTag>, dead_ps: [u64; 4]) {
    if dead_ps.iter().all(|&d| d == 0) {
        return;
    }
    let mut last = [None::<u64>; 256];
    tags.retain(|t| {
        let dead = dead_ps.get(t.channel as usize).copied().unwrap_or(0);
        let slot = &mut last[t.channel as usize];
        match *slot {
            Some(prev) if t.time_ps < prev + dead => false,
            _ => {
                *slot = Some(t.time_ps);
                true
            }
        }
    });
}

/// Sample and detect in one call.
pub fn simulate(
    n_pulses: u64,
    source: &SourceParams,
    dist: &PairDistribution,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    seed: u64,
) -> Result<TimeTagStream> {
    let pairs = sample_pairs(n_pulses, source, dist, seed)?;
    detect(&pairs, det_s, det_i, source, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Car {
    Finite(f64),
    Infinite,
}

impl Car {
    pub fn value(self) -> f64 {
        match self {
            Car::Finite(v) => v,
            Car::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Car::Infinite)
    }

    /// Visibility ceiling set by accidentals, CAR taken at the fringe maximum.
    pub fn visibility_limit(self) -> f64 {
        match self {
            Car::Finite(c) => crate::analytic::car_limited_visibility(c),
            Car::Infinite => 1.0,
        }
    }
}

/// Mean coincidence rates in a window around zero delay at one port pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarEstimate {
    pub true_rate_hz: f64,
    pub accidental_rate_hz: f64,
    pub car: Car,
}

/// Per-second rates feeding the coincidence model.
#[derive(Debug, Clone, Copy)]
struct RateModel {
    /// Pair photons registered per second on each channel.
    pair_singles: (f64, f64),
    /// Dark plus background singles per second.
    noise_singles: (f64, f64),
    /// Same-pulse signal/idler pairs from distinct pairs, per second.
    multipair_rate: f64,
    true_rate: f64,
}

fn rate_model(
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    dist: &PairDistribution,
    ports: (usize, usize),
) -> RateModel {
    let rate = source.rep_rate_mhz * 1e6;
    let jit = source.pump_phase_jitter_rms_rad;
    let ks = det_s.survival() * dist.device_transmission;
    let ki = det_i.survival() * dist.device_transmission;
    let mu = source.pair_mean;
    let ps = ks * dist.signal_marginal(ports.0, jit);
    let pi = ki * dist.idler_marginal(ports.1, jit);
    RateModel {
        pair_singles: (rate * mu * ps, rate * mu * pi),
        noise_singles: (
            det_s.dark_rate_hz + source.noise_singles_rate_hz,
            det_i.dark_rate_hz + source.noise_singles_rate_hz,
        ),
        multipair_rate: rate * source.multipair_factor() * mu * mu * ps * pi,
        true_rate: rate * mu * ks * ki,
    }
}

/// Expected coincidence-count model at a port pair: correlated peaks from
/// single pairs and independent same-pulse pairs, plus a flat floor from
/// uncorrelated singles.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedDelay {
    /// Counts per second as a mixture over delay.
    pub true_peaks: DelayDistribution,
    pub multipair_peaks: DelayDistribution,
    /// Flat accidentals per second per picosecond of delay.
    pub flat_per_ps: f64,
}

impl ExpectedDelay {
    pub fn new(
        source: &SourceParams,
        det_s: &DetectorParams,
        det_i: &DetectorParams,
        dist: &PairDistribution,
        ports: (usize, usize),
    ) -> Result<Self> {
        source.validate()?;
        det_s.validate()?;
        det_i.validate()?;
        let m = rate_model(source, det_s, det_i, dist, ports);
        let jit = source.pump_phase_jitter_rms_rad;
        let extra = det_s.jitter_sigma_ps().hypot(det_i.jitter_sigma_ps());
        let true_peaks = dist.pair_delay(ports, jit, extra).scaled(m.true_rate);
        let indep = dist.independent_delay(ports, jit, extra);
        let norm = indep.total();
        let multipair_peaks = if norm > 0.0 {
            indep.scaled(m.multipair_rate / norm)
        } else {
            DelayDistribution { components: vec![] }
        };
        let (ns, ni) = m.noise_singles;
        let (ps, pi) = m.pair_singles;
        let flat_per_ps = (ns * ni + ns * pi + ps * ni) * 1e-12;
        Ok(Self {
            true_peaks,
            multipair_peaks,
            flat_per_ps,
        })
    }

    /// Rates (per second) of true and accidental coincidences with integer
    /// delay in `[lo, hi]` picoseconds.
    pub fn rates_between(&self, lo: i64, hi: i64) -> (f64, f64) {
        let (a, b) = (lo as f64 - 0.5, hi as f64 + 0.5);
        let truth = self.true_peaks.mass_between(a, b);
        let acc = self.multipair_peaks.mass_between(a, b) + self.flat_per_ps * (b - a);
        (truth, acc)
    }

    /// Expected counts per histogram bin for a run of `seconds`.
    pub fn histogram(&self, axis: AxisSpec, seconds: f64) -> DelayHistogram {
        let mut h = self.true_peaks.histogram(axis);
        let m = self.multipair_peaks.histogram(axis);
        for (v, extra) in h.values.iter_mut().zip(&m.values) {
            *v = (*v + extra + self.flat_per_ps * axis.step_ps) * seconds;
        }
        h
    }
}

/// CAR in a `±window_ps` counting window at a port pair, defined as true
/// over accidental coincidence rate.
pub fn expected_car(
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    dist: &PairDistribution,
    ports: (usize, usize),
    window_ps: u64,
) -> Result<CarEstimate> {
    if window_ps == 0 {
        return domain("coincidence window must be positive");
    }
    let w = window_ps as i64;
    let (t, a) = ExpectedDelay::new(source, det_s, det_i, dist, ports)?.rates_between(-w, w);
    let car = if a > 0.0 {
        Car::Finite(t / a)
    } else {
        Car::Infinite
    };
    Ok(CarEstimate {
        true_rate_hz: t,
        accidental_rate_hz: a,
        car,
    })
}

/// Background singles rate that brings the CAR in `±window_ps` to `target`.
pub fn tune_noise_for_car(
    target: f64,
    source: &SourceParams,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    dist: &PairDistribution,
    ports: (usize, usize),
    window_ps: u64,
) -> Result<f64> {
    if !(target > 0.0 && target.is_finite()) {
        return domain("target CAR must be positive and finite");
    }
    let quiet = SourceParams {
        noise_singles_rate_hz: 0.0,
        ..source.clone()
    };
    let base = ExpectedDelay::new(&quiet, det_s, det_i, dist, ports)?;
    let w = window_ps.max(1) as i64;
    let (truth, acc0) = base.rates_between(-w, w);
    let width = (2 * w + 1) as f64 * 1e-12;
    let m = rate_model(&quiet, det_s, det_i, dist, ports);
    let (ps, pi) = m.pair_singles;
    let (ds, di) = (det_s.dark_rate_hz, det_i.dark_rate_hz);
    // width·(ds+n)(di+n) + width·((ds+n)·pi + ps·(di+n)) + multipair = truth/target
    let multipair = acc0 - width * (ds * di + ds * pi + ps * di);
    let a = width;
    let b = width * (ds + di + pi + ps);
    let c = width * (ds * di + ds * pi + ps * di) + multipair - truth / target;
    if c > 0.0 {
        return domain(format!(
            "target CAR {target} exceeds the limit of {:.3} set by multi-pair and dark counts",
            truth / acc0
        ));
    }
    Ok((-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a))
}
