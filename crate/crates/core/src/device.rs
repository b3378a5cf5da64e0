//! Receiver model: a push-pull Mach-Zehnder switch followed by an
//! unbalanced interferometer with delay `t_s`, closed by a 2x2 combiner.
//!
//! Each photon of a pair enters in the early bin (t = 0) or the late bin
//! (t = t_s). The switch routes it to the short arm (switch output 0) or the
//! long arm (switch output 1), so a photon leaves at 0, t_s or 2 t_s through
//! one of two combiner ports. Pair amplitudes over `(t_signal, t_idler)` are
//! collected as Gaussian lobes with complex weights.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::qubit::{TimeBinState, C64};

/// Intensity FWHM of a Gaussian over its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

const MERGE_TOL_PS: f64 = 1e-6;
const NEGLIGIBLE_WEIGHT: f64 = 1e-24;
const SYNC_TOL: f64 = 1e-9;
const AVERAGE_NODES: usize = 41;
const AVERAGE_HALF_SPAN_SIGMA: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// RF off, switch held at its bias point.
    Passive,
    /// Switch driven synchronously with the time-bin train.
    Active,
}

/// How the two photons' analyzer phases are set.
///
/// Both topologies use `phi_s` for the signal photon and `phi_i` for the
/// idler photon; they differ in how a sweep moves those phases (see
/// [`crate::analysis`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Both photons traverse one device; one actuator moves both phases.
    Shared,
    /// Independent analyzers; only the signal phase is swept.
    TwoDevice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    /// Interferometer path delay, equal to the time-bin separation.
    pub t_s_ps: f64,
    pub f_m_ghz: f64,
    pub v_pi_lf_v: f64,
    /// Half-wave voltage at the drive frequency.
    pub v_pi_rf_v: f64,
    /// Peak-to-peak RF amplitude.
    pub drive_vpp_v: f64,
    /// RF phase at the early time bin.
    pub drive_phase_rad: f64,
    pub bias_phase_rad: f64,
    /// Electrical power for a pi shift of the thermal phase shifter.
    pub p_pi_mw: f64,
    pub eo_bandwidth_3db_ghz: f64,
    /// Derive the RF half-wave voltage from `v_pi_lf_v` and a single-pole
    /// EO response instead of using `v_pi_rf_v`.
    pub eo_rolloff: bool,
    /// Switch extinction; `None` for an ideal switch.
    pub mzm_extinction_db: Option<f64>,
    pub insertion_loss_db: f64,
    /// Power splitting of the interferometer combiner.
    pub mmi_splitting: f64,
    /// Intensity FWHM of each time-bin wavepacket.
    pub pulse_fwhm_ps: f64,
    /// Average the switch transfer over the pulse envelope instead of
    /// evaluating it at the pulse center.
    pub switch_pulse_average: bool,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self::ideal()
    }
}

impl DeviceParams {
    /// 100 ps interferometer driven at 5 GHz with lossless, perfectly
    /// balanced components and an instantaneous switch.
    pub fn ideal() -> Self {
        Self {
            t_s_ps: 100.0,
            f_m_ghz: 5.0,
            v_pi_lf_v: 3.37,
            v_pi_rf_v: 4.35,
            drive_vpp_v: 4.35,
            drive_phase_rad: FRAC_PI_2,
            bias_phase_rad: FRAC_PI_2,
            p_pi_mw: 27.3,
            eo_bandwidth_3db_ghz: 21.4,
            eo_rolloff: false,
            mzm_extinction_db: None,
            insertion_loss_db: 0.0,
            mmi_splitting: 0.5,
            pulse_fwhm_ps: 9.0,
            switch_pulse_average: false,
        }
    }

    /// The packaged device at its measured operating point, with a finite
    /// switch extinction and the pulse-averaged switching penalty.
    pub fn packaged() -> Self {
        Self {
            mzm_extinction_db: Some(20.0),
            insertion_loss_db: 6.1,
            switch_pulse_average: true,
            ..Self::ideal()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_s_ps", self.t_s_ps),
            ("f_m_ghz", self.f_m_ghz),
            ("v_pi_lf_v", self.v_pi_lf_v),
            ("v_pi_rf_v", self.v_pi_rf_v),
            ("p_pi_mw", self.p_pi_mw),
            ("eo_bandwidth_3db_ghz", self.eo_bandwidth_3db_ghz),
            ("pulse_fwhm_ps", self.pulse_fwhm_ps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return domain(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.mmi_splitting > 0.0 && self.mmi_splitting < 1.0) {
            return domain(format!(
                "mmi_splitting must lie in (0, 1), got {}",
                self.mmi_splitting
            ));
        }
        if let Some(ext) = self.mzm_extinction_db {
            if !(ext > 10.0 * 2f64.log10()) {
                return domain(format!("mzm_extinction_db must exceed 3.01 dB, got {ext}"));
            }
        }
        if !(self.insertion_loss_db >= 0.0) || !(self.drive_vpp_v >= 0.0) {
            return domain("insertion loss and drive amplitude must be non-negative");
        }
        if !self.drive_phase_rad.is_finite() || !self.bias_phase_rad.is_finite() {
            return domain("drive and bias phases must be finite");
        }
        Ok(())
    }

    /// `f_m = 1 / (2 t_s)` to within 1e-9 relative.
    pub fn is_synchronous(&self) -> bool {
        let product = 2.0 * self.f_m_ghz * 1e-3 * self.t_s_ps;
        (product - 1.0).abs() <= SYNC_TOL
    }

    /// Half-wave voltage seen by the RF drive.
    pub fn effective_v_pi(&self) -> f64 {
        if self.eo_rolloff {
            self.v_pi_lf_v / eo_response(self.f_m_ghz, self.eo_bandwidth_3db_ghz)
        } else {
            self.v_pi_rf_v
        }
    }

    /// Intensity standard deviation of a wavepacket.
    pub fn lobe_sigma_ps(&self) -> f64 {
        self.pulse_fwhm_ps / FWHM_PER_SIGMA
    }

    /// Same device with the RF drive switched off.
    pub fn passive_view(&self) -> Self {
        Self {
            drive_vpp_v: 0.0,
            ..self.clone()
        }
    }
}

/// Single-pole EO amplitude response `1 / sqrt(1 + (f/f_3dB)^2)`.
pub fn eo_response(f_ghz: f64, f_3db_ghz: f64) -> f64 {
    1.0 / (1.0 + (f_ghz / f_3db_ghz).powi(2)).sqrt()
}

/// Thermal phase shift, linear in electrical power.
pub fn tps_phase(power_mw: f64, p_pi_mw: f64) -> Result<f64> {
    if !(power_mw >= 0.0) {
        return domain(format!("TPS power must be non-negative, got {power_mw}"));
    }
    if !(p_pi_mw > 0.0) {
        return domain(format!("P_pi must be positive, got {p_pi_mw}"));
    }
    Ok(PI * power_mw / p_pi_mw)
}

/// Power producing `phase` (wrapped to `[0, 2 pi)`).
pub fn tps_power(phase: f64, p_pi_mw: f64) -> f64 {
    phase.rem_euclid(2.0 * PI) / PI * p_pi_mw
}

/// Switch phase difference at time `t_ps` with the RF drive on.
pub fn mzm_drive_phase(t_ps: f64, params: &DeviceParams) -> f64 {
    let depth = PI * params.drive_vpp_v / (2.0 * params.effective_v_pi());
    let omega = 2.0 * PI * params.f_m_ghz * 1e-3;
    params.bias_phase_rad + depth * (omega * t_ps + params.drive_phase_rad).sin()
}

/// 2x2 transfer of the balanced switch, columns indexed by input port.
///
/// With finite extinction the input splitter is unbalanced so that the
/// power leaking into the dark port at full switching is
/// `10^(-extinction_db/10)`.
pub fn mzm_transfer(phi_e: f64, extinction_db: Option<f64>) -> Matrix2<C64> {
    let leakage = extinction_db
        .map_or(0.0, |db| 10f64.powf(-db / 10.0))
        .min(0.5);
    let kappa = 0.5 * (1.0 + 2.0 * (leakage * (1.0 - leakage)).sqrt());
    let i = C64::i();
    let (t, r) = (C64::from(kappa.sqrt()), C64::from((1.0 - kappa).sqrt()));
    let splitter = Matrix2::new(t, i * r, i * r, t);
    let h = C64::from(std::f64::consts::FRAC_1_SQRT_2);
    let combiner = Matrix2::new(h, -i * h, -i * h, h);
    let arms = Matrix2::new(
        C64::from_polar(1.0, 0.5 * phi_e),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::from_polar(1.0, -0.5 * phi_e),
    );
    combiner * arms * splitter
}

/// Switch transfer seen by a wavepacket centered at `t_center_ps`.
fn switch_for_bin(t_center_ps: f64, params: &DeviceParams, mode: Mode) -> Matrix2<C64> {
    let ext = params.mzm_extinction_db;
    let phase_at = |t: f64| match mode {
        Mode::Passive => params.bias_phase_rad,
        Mode::Active => mzm_drive_phase(t, params),
    };
    if !params.switch_pulse_average || mode == Mode::Passive {
        return mzm_transfer(phase_at(t_center_ps), ext);
    }
    let sigma = params.lobe_sigma_ps();
    let step = 2.0 * AVERAGE_HALF_SPAN_SIGMA * sigma / (AVERAGE_NODES - 1) as f64;
    let mut acc = Matrix2::zeros();
    let mut wsum = 0.0;
    for k in 0..AVERAGE_NODES {
        let tau = -AVERAGE_HALF_SPAN_SIGMA * sigma + k as f64 * step;
        let w = (-0.5 * (tau / sigma).powi(2)).exp();
        acc += mzm_transfer(phase_at(t_center_ps + tau), ext) * C64::from(w);
        wsum += w;
    }
    acc / C64::from(wsum)
}

/// One way a photon injected in a given bin can leave the device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonPath {
    pub port: usize,
    pub time_ps: f64,
    pub amplitude: C64,
}

/// The four output paths (two arms x two ports) of a photon entering at
/// `bin_time_ps` with analyzer phase `phase`.
///
/// The combiner's quadrature is absorbed into the long-arm phase so that
/// port 0 at `t_s` projects onto `(|E> + e^{i phase}|L>)/sqrt(2)`.
pub fn photon_paths(
    bin_time_ps: f64,
    phase: f64,
    params: &DeviceParams,
    mode: Mode,
) -> [PhotonPath; 4] {
    let m = switch_for_bin(bin_time_ps, params, mode);
    let loss = 10f64.powf(-params.insertion_loss_db / 20.0);
    let short = m[(0, 0)] * loss;
    let long = m[(1, 0)] * loss * C64::from_polar(1.0, phase - FRAC_PI_2);
    let k = params.mmi_splitting;
    let (t, r) = (C64::from(k.sqrt()), C64::i() * (1.0 - k).sqrt());
    let delayed = bin_time_ps + params.t_s_ps;
    [
        PhotonPath {
            port: 0,
            time_ps: bin_time_ps,
            amplitude: t * short,
        },
        PhotonPath {
            port: 0,
            time_ps: delayed,
            amplitude: r * long,
        },
        PhotonPath {
            port: 1,
            time_ps: bin_time_ps,
            amplitude: r * short,
        },
        PhotonPath {
            port: 1,
            time_ps: delayed,
            amplitude: t * long,
        },
    ]
}

/// Gaussian lobe of the joint temporal amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lobe {
    pub t_signal_center: f64,
    pub t_idler_center: f64,
    pub amplitude: C64,
    /// Intensity standard deviation per axis.
    pub width_sigma: f64,
}

impl Lobe {
    pub fn intensity(&self) -> f64 {
        self.amplitude.norm_sqr()
    }

    pub fn delay(&self) -> f64 {
        self.t_idler_center - self.t_signal_center
    }

    fn same_center(&self, ts: f64, ti: f64) -> bool {
        (self.t_signal_center - ts).abs() < MERGE_TOL_PS
            && (self.t_idler_center - ti).abs() < MERGE_TOL_PS
    }
}

/// A lobe with its amplitude split by the input term it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposedLobe {
    pub t_signal_center: f64,
    pub t_idler_center: f64,
    pub from_early: C64,
    pub from_late: C64,
    pub width_sigma: f64,
}

impl DecomposedLobe {
    /// Lobe with an extra pump phase `delta` on the late-late term.
    pub fn at_pump_offset(&self, delta: f64) -> Lobe {
        Lobe {
            t_signal_center: self.t_signal_center,
            t_idler_center: self.t_idler_center,
            amplitude: self.from_early + self.from_late * C64::from_polar(1.0, delta),
            width_sigma: self.width_sigma,
        }
    }

    pub fn combined(&self) -> Lobe {
        self.at_pump_offset(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortLabel {
    /// The pair before entering the device.
    Input,
    Output {
        signal: usize,
        idler: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobeSet {
    pub lobes: Vec<Lobe>,
    pub port_label: PortLabel,
}

impl LobeSet {
    pub fn empty(port_label: PortLabel) -> Self {
        Self {
            lobes: Vec::new(),
            port_label,
        }
    }

    /// Sum of lobe intensities.
    pub fn total_probability(&self) -> f64 {
        self.lobes.iter().map(Lobe::intensity).sum()
    }

    pub fn len(&self) -> usize {
        self.lobes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lobes.is_empty()
    }

    /// The lobe centered at `(ts, ti)`, if any.
    pub fn lobe_at(&self, ts: f64, ti: f64) -> Option<&Lobe> {
        self.lobes.iter().find(|l| l.same_center(ts, ti))
    }
}

/// The pair as it enters the device: lobes at `(0, 0)` and `(t_s, t_s)`.
pub fn input_lobes(state: &TimeBinState, params: &DeviceParams) -> LobeSet {
    let sigma = params.lobe_sigma_ps();
    let lobes = [(0.0, state.amp_ee), (params.t_s_ps, state.amp_ll)]
        .into_iter()
        .filter(|(_, a)| a.norm_sqr() > NEGLIGIBLE_WEIGHT)
        .map(|(t, amplitude)| Lobe {
            t_signal_center: t,
            t_idler_center: t,
            amplitude,
            width_sigma: sigma,
        })
        .collect();
    LobeSet {
        lobes,
        port_label: PortLabel::Input,
    }
}

/// Output port pairs in the order used by [`Propagation`].
pub const PORT_PAIRS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    /// One entry per element of [`PORT_PAIRS`].
    pub decomposed: [Vec<DecomposedLobe>; 4],
    pub warnings: Vec<String>,
}

impl Propagation {
    pub fn lobe_sets(&self) -> [LobeSet; 4] {
        std::array::from_fn(|k| {
            let (signal, idler) = PORT_PAIRS[k];
            LobeSet {
                lobes: self.decomposed[k]
                    .iter()
                    .map(DecomposedLobe::combined)
                    .collect(),
                port_label: PortLabel::Output { signal, idler },
            }
        })
    }

    pub fn port_pair(&self, signal: usize, idler: usize) -> LobeSet {
        let k = PORT_PAIRS
            .iter()
            .position(|&p| p == (signal, idler))
            .expect("port index is 0 or 1");
        self.lobe_sets()[k].clone()
    }

    /// Total detection probability over all four port pairs.
    pub fn total_probability(&self) -> f64 {
        self.lobe_sets()
            .iter()
            .map(LobeSet::total_probability)
            .sum()
    }
}

/// Propagate a pair through the device.
///
/// The signal photon sees analyzer phase `phases.phi_s`, the idler
/// `phases.phi_i`; the pump phase is taken from `state`. A non-synchronous
/// active drive is reported in `warnings` and yields residual side lobes.
pub fn propagate(
    state: &TimeBinState,
    params: &DeviceParams,
    mode: Mode,
    phases: &crate::qubit::PhaseSettings,
) -> Result<Propagation> {
    state.check_normalized()?;
    params.validate()?;
    phases.validate()?;
    let mut warnings = Vec::new();
    if mode == Mode::Active && !params.is_synchronous() {
        warnings.push(format!(
            "switch drive at {} GHz is not synchronous with t_s = {} ps",
            params.f_m_ghz, params.t_s_ps
        ));
    }
    let sigma = params.lobe_sigma_ps();
    let bins = [0.0, params.t_s_ps];
    let sig: Vec<_> = bins
        .iter()
        .map(|&t| photon_paths(t, phases.phi_s, params, mode))
        .collect();
    let idl: Vec<_> = bins
        .iter()
        .map(|&t| photon_paths(t, phases.phi_i, params, mode))
        .collect();

    let decomposed = std::array::from_fn(|k| {
        let (ps, pi) = PORT_PAIRS[k];
        let mut lobes: Vec<DecomposedLobe> = Vec::new();
        for (bin, weight) in [(0usize, state.amp_ee), (1usize, state.amp_ll)] {
            for s in sig[bin].iter().filter(|p| p.port == ps) {
                for i in idl[bin].iter().filter(|p| p.port == pi) {
                    let a = weight * s.amplitude * i.amplitude;
                    let slot = match lobes.iter_mut().find(|l| {
                        (l.t_signal_center - s.time_ps).abs() < MERGE_TOL_PS
                            && (l.t_idler_center - i.time_ps).abs() < MERGE_TOL_PS
                    }) {
                        Some(l) => l,
                        None => {
                            lobes.push(DecomposedLobe {
                                t_signal_center: s.time_ps,
                                t_idler_center: i.time_ps,
                                from_early: C64::new(0.0, 0.0),
                                from_late: C64::new(0.0, 0.0),
                                width_sigma: sigma,
                            });
                            lobes.last_mut().unwrap()
                        }
                    };
                    if bin == 0 {
                        slot.from_early += a;
                    } else {
                        slot.from_late += a;
                    }
                }
            }
        }
        lobes.retain(|l| l.from_early.norm_sqr() + l.from_late.norm_sqr() > NEGLIGIBLE_WEIGHT);
        lobes.sort_by(|a, b| {
            (a.t_signal_center, a.t_idler_center)
                .partial_cmp(&(b.t_signal_center, b.t_idler_center))
                .unwrap()
        });
        lobes
    });
    Ok(Propagation {
        decomposed,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubit::{OutputSign, PhaseSettings};
    use approx::assert_abs_diff_eq;

    fn phases(phi_s: f64, phi_i: f64) -> PhaseSettings {
        PhaseSettings::new(phi_s, phi_i, 0.0, PI, OutputSign::Plus).unwrap()
    }

    #[test]
    fn tps_is_linear() {
        assert_abs_diff_eq!(tps_phase(27.3, 27.3).unwrap(), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(tps_phase(0.0, 27.3).unwrap(), 0.0);
        assert_abs_diff_eq!(tps_phase(13.65, 27.3).unwrap(), FRAC_PI_2, epsilon = 1e-15);
        assert!(tps_phase(-1.0, 27.3).is_err());
        assert_abs_diff_eq!(tps_power(1.5 * PI, 27.3), 40.95, epsilon = 1e-12);
    }

    #[test]
    fn drive_reaches_bar_and_cross() {
        let p = DeviceParams::ideal();
        // crest at t = 0 with drive_phase = pi/2, trough half a period later
        assert_abs_diff_eq!(mzm_drive_phase(0.0, &p), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(mzm_drive_phase(p.t_s_ps, &p), 0.0, epsilon = 1e-12);
        let off = p.passive_view();
        for t in [0.0, 17.0, 100.0, 333.0] {
            assert_abs_diff_eq!(mzm_drive_phase(t, &off), off.bias_phase_rad);
        }
    }

    #[test]
    fn eo_rolloff_derates_low_frequency_v_pi() {
        let p = DeviceParams {
            eo_rolloff: true,
            ..DeviceParams::ideal()
        };
        assert_abs_diff_eq!(
            eo_response(21.4, 21.4),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
        let expected = 3.37 * (1.0 + (5.0f64 / 21.4).powi(2)).sqrt();
        assert_abs_diff_eq!(p.effective_v_pi(), expected, epsilon = 1e-12);
    }

    #[test]
    fn mzm_routing() {
        let m = mzm_transfer(PI, None);
        assert_abs_diff_eq!(m[(1, 0)].norm_sqr(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 0)].norm_sqr(), 0.0, epsilon = 1e-15);
        let m = mzm_transfer(FRAC_PI_2, None);
        assert_abs_diff_eq!(m[(0, 0)].norm_sqr(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 0)].norm_sqr(), 0.5, epsilon = 1e-15);
        let m = mzm_transfer(PI, Some(20.0));
        assert_abs_diff_eq!(m[(0, 0)].norm_sqr(), 0.01, epsilon = 1e-14);
        let m = mzm_transfer(0.0, Some(20.0));
        assert_abs_diff_eq!(m[(1, 0)].norm_sqr(), 0.01, epsilon = 1e-14);
    }

    #[test]
    fn mzm_is_unitary() {
        for phi in [0.0, 0.4, 1.9, PI, 5.0] {
            for ext in [None, Some(15.0), Some(30.0)] {
                let m = mzm_transfer(phi, ext);
                let id = m.adjoint() * m;
                assert_abs_diff_eq!((id - Matrix2::identity()).norm(), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn validation_rejects_bad_params() {
        let bad = [
            DeviceParams {
                t_s_ps: 0.0,
                ..DeviceParams::ideal()
            },
            DeviceParams {
                mmi_splitting: 1.0,
                ..DeviceParams::ideal()
            },
            DeviceParams {
                p_pi_mw: -1.0,
                ..DeviceParams::ideal()
            },
            DeviceParams {
                mzm_extinction_db: Some(1.0),
                ..DeviceParams::ideal()
            },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        assert!(DeviceParams::ideal().is_synchronous());
        assert!(!DeviceParams {
            f_m_ghz: 4.9,
            ..DeviceParams::ideal()
        }
        .is_synchronous());
    }

    #[test]
    fn passive_lobes() {
        let state = TimeBinState::maximally_entangled(0.0);
        let prop = propagate(
            &state,
            &DeviceParams::ideal(),
            Mode::Passive,
            &phases(0.0, 0.0),
        )
        .unwrap();
        let set = prop.port_pair(0, 0);
        assert_eq!(set.len(), 7);
        let t = 100.0;
        assert_abs_diff_eq!(
            set.lobe_at(t, t).unwrap().intensity(),
            2.0 / 16.0,
            epsilon = 1e-15
        );
        for (ts, ti) in [
            (0.0, 0.0),
            (2.0 * t, 2.0 * t),
            (0.0, t),
            (t, 0.0),
            (t, 2.0 * t),
            (2.0 * t, t),
        ] {
            assert_abs_diff_eq!(
                set.lobe_at(ts, ti).unwrap().intensity(),
                1.0 / 32.0,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn active_single_lobe() {
        for delta in [0.0, 1.0, PI] {
            let state = TimeBinState::maximally_entangled(-delta);
            let prop = propagate(
                &state,
                &DeviceParams::ideal(),
                Mode::Active,
                &phases(0.0, 0.0),
            )
            .unwrap();
            for set in prop.lobe_sets() {
                assert_eq!(set.len(), 1);
                assert!(set.lobe_at(100.0, 100.0).is_some());
            }
            let same = prop.port_pair(0, 0).total_probability();
            assert_abs_diff_eq!(same, 0.25 * (1.0 + delta.cos()), epsilon = 1e-14);
            let cross = prop.port_pair(0, 1).total_probability();
            assert_abs_diff_eq!(cross, 0.25 * (1.0 - delta.cos()), epsilon = 1e-14);
        }
    }

    #[test]
    fn finite_extinction_leaves_small_side_lobes() {
        let state = TimeBinState::maximally_entangled(0.0);
        let params = DeviceParams {
            mzm_extinction_db: Some(20.0),
            ..DeviceParams::ideal()
        };
        let prop = propagate(&state, &params, Mode::Active, &phases(0.0, 0.0)).unwrap();
        let total = prop.total_probability();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let central: f64 = prop
            .lobe_sets()
            .iter()
            .filter_map(|s| s.lobe_at(100.0, 100.0))
            .map(Lobe::intensity)
            .sum();
        let side = total - central;
        assert!(side > 0.0 && side <= 0.02 * total, "side fraction {side}");
    }

    #[test]
    fn non_synchronous_drive_warns() {
        let state = TimeBinState::maximally_entangled(0.0);
        let params = DeviceParams {
            f_m_ghz: 4.0,
            ..DeviceParams::ideal()
        };
        let prop = propagate(&state, &params, Mode::Active, &phases(0.0, 0.0)).unwrap();
        assert_eq!(prop.warnings.len(), 1);
        assert!(prop.port_pair(0, 0).len() > 1);
    }

    #[test]
    fn insertion_loss_scales_probability() {
        let state = TimeBinState::maximally_entangled(0.0);
        let params = DeviceParams {
            insertion_loss_db: 6.1,
            ..DeviceParams::ideal()
        };
        let prop = propagate(&state, &params, Mode::Passive, &phases(0.3, 0.3)).unwrap();
        assert_abs_diff_eq!(prop.total_probability(), 10f64.powf(-1.22), epsilon = 1e-14);
    }
}
