//! Time-bin qubit pairs and the closed-form measurement statistics of a
//! Franson-type analyzer.
//!
//! Each photon lives in the two-dimensional space spanned by the early and
//! late bins `{|E>, |L>}`. A photon pair is stored as its 2x2 coefficient
//! matrix `C[s][i]` (signal index first), so single-photon operators act by
//! left and right multiplication instead of through a 4x4 Kronecker product.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub type C64 = Complex64;

const NORM_TOL: f64 = 1e-12;

/// Entangled pair `amp_ee |E>s|E>i + amp_ll |L>s|L>i`.
///
/// The pump phase is carried by `amp_ll`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeBinState {
    pub amp_ee: C64,
    pub amp_ll: C64,
}

impl TimeBinState {
    pub fn new(amp_ee: C64, amp_ll: C64) -> Result<Self> {
        let state = Self { amp_ee, amp_ll };
        state.check_normalized()?;
        Ok(state)
    }

    /// `(|EE> + e^{i phi_p} |LL>) / sqrt(2)`.
    pub fn maximally_entangled(phi_p: f64) -> Self {
        Self {
            amp_ee: C64::new(FRAC_1_SQRT_2, 0.0),
            amp_ll: C64::from_polar(FRAC_1_SQRT_2, phi_p),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp_ee.norm_sqr() + self.amp_ll.norm_sqr()
    }

    pub fn check_normalized(&self) -> Result<()> {
        let n = self.norm_sqr();
        if !n.is_finite() || (n - 1.0).abs() > NORM_TOL {
            return domain(format!("time-bin state not normalized: |a|^2 = {n}"));
        }
        Ok(())
    }

    /// Same state with an extra phase on the late-late amplitude.
    pub fn with_pump_offset(&self, delta: f64) -> Self {
        Self {
            amp_ee: self.amp_ee,
            amp_ll: self.amp_ll * C64::from_polar(1.0, delta),
        }
    }

    /// Coefficient matrix in the `{E, L} x {E, L}` basis.
    pub fn coefficients(&self) -> PairAmplitudes {
        PairAmplitudes(Matrix2::new(
            self.amp_ee,
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            self.amp_ll,
        ))
    }
}

/// General two-photon time-bin state as a 2x2 coefficient matrix,
/// row = signal bin, column = idler bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairAmplitudes(pub Matrix2<C64>);

impl PairAmplitudes {
    /// From the vector `(c_EE, c_EL, c_LE, c_LL)`.
    pub fn from_vector(v: [C64; 4]) -> Self {
        Self(Matrix2::new(v[0], v[1], v[2], v[3]))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }

    /// `<psi| A (x) B |psi>` evaluated as `tr(C^dag A C B^T)`.
    pub fn expectation(&self, signal_op: &Matrix2<C64>, idler_op: &Matrix2<C64>) -> f64 {
        let c = &self.0;
        (c.adjoint() * signal_op * c * idler_op.transpose())
            .trace()
            .re
    }
}

/// Which branch of the `(|E> +/- e^{i phi}|L>)` analyzer a detector sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputSign {
    Plus,
    Minus,
}

impl OutputSign {
    pub fn value(self) -> f64 {
        match self {
            OutputSign::Plus => 1.0,
            OutputSign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            OutputSign::Plus => OutputSign::Minus,
            OutputSign::Minus => OutputSign::Plus,
        }
    }

    pub const BOTH: [OutputSign; 2] = [OutputSign::Plus, OutputSign::Minus];
}

/// Analyzer phases for one measurement setting.
///
/// `output_sign` selects the complementary output port pair: `Plus` for the
/// two photons leaving through the same port, `Minus` for opposite ports.
/// `phi_e` is the switch modulation depth entering the POVM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSettings {
    pub phi_s: f64,
    pub phi_i: f64,
    pub phi_p: f64,
    pub phi_e: f64,
    pub output_sign: OutputSign,
}

impl PhaseSettings {
    pub fn new(
        phi_s: f64,
        phi_i: f64,
        phi_p: f64,
        phi_e: f64,
        output_sign: OutputSign,
    ) -> Result<Self> {
        let s = Self {
            phi_s,
            phi_i,
            phi_p,
            phi_e,
            output_sign,
        };
        s.validate()?;
        Ok(s)
    }

    /// Full-switching settings (`phi_e = pi`), same-port detection.
    pub fn projective(phi_s: f64, phi_i: f64, phi_p: f64) -> Self {
        Self {
            phi_s,
            phi_i,
            phi_p,
            phi_e: PI,
            output_sign: OutputSign::Plus,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.phi_s, self.phi_i, self.phi_p, self.phi_e]
            .iter()
            .any(|p| !p.is_finite())
        {
            return domain("phase settings must be finite");
        }
        Ok(())
    }

    /// `phi_s + phi_i - phi_p`.
    pub fn fringe_argument(&self) -> f64 {
        self.phi_s + self.phi_i - self.phi_p
    }
}

/// Probability of a coincidence in the central peak for a fringe of
/// visibility `visibility`: `(1/4)[1 +/- V cos(phi_s + phi_i - phi_p)]`.
pub fn coincidence_probability(settings: &PhaseSettings, visibility: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&visibility) {
        return domain(format!("visibility {visibility} outside [0, 1]"));
    }
    settings.validate()?;
    Ok(0.25 * (1.0 + settings.output_sign.value() * visibility * settings.fringe_argument().cos()))
}

/// The four analyzer-branch probabilities `[signal sign][idler sign]`
/// (index 0 = `Plus`). They sum to one for every phase.
pub fn outcome_probabilities(settings: &PhaseSettings, visibility: f64) -> Result<[[f64; 2]; 2]> {
    let mut out = [[0.0; 2]; 2];
    for (si, s) in OutputSign::BOTH.iter().enumerate() {
        for (ii, i) in OutputSign::BOTH.iter().enumerate() {
            let joint = if s == i {
                OutputSign::Plus
            } else {
                OutputSign::Minus
            };
            out[si][ii] = coincidence_probability(
                &PhaseSettings {
                    output_sign: joint,
                    ..*settings
                },
                visibility,
            )?;
        }
    }
    Ok(out)
}

/// `|psi><psi|` with `|psi> = (|E> + sign e^{i phase}|L>)/sqrt(2)`.
pub fn projector(phase: f64, sign: OutputSign) -> Matrix2<C64> {
    let e = C64::new(FRAC_1_SQRT_2, 0.0);
    let l = C64::from_polar(sign.value() * FRAC_1_SQRT_2, phase);
    Matrix2::new(e * e.conj(), e * l.conj(), l * e.conj(), l * l.conj())
}

/// Single-photon POVM element of the switched analyzer:
/// `(1/2) cos^2(phi_e/2) 1 + sin^2(phi_e/2) P`.
pub fn povm_element(phase: f64, sign: OutputSign, phi_e: f64) -> Matrix2<C64> {
    let c2 = (0.5 * phi_e).cos().powi(2);
    let s2 = (0.5 * phi_e).sin().powi(2);
    Matrix2::identity() * C64::new(0.5 * c2, 0.0) + projector(phase, sign) * C64::new(s2, 0.0)
}

/// Coincidence probability `<Pi_s (x) Pi_i>` on an arbitrary normalized
/// pair state. The signal analyzer uses the `Plus` branch and the idler the
/// branch given by `output_sign`. The pump phase is read from the state,
/// not from `settings.phi_p`.
pub fn povm_probability(settings: &PhaseSettings, pair: &PairAmplitudes) -> Result<f64> {
    settings.validate()?;
    let n = pair.norm_sqr();
    if (n - 1.0).abs() > NORM_TOL {
        return domain(format!("pair state not normalized: {n}"));
    }
    let ps = povm_element(settings.phi_s, OutputSign::Plus, settings.phi_e);
    let pi = povm_element(settings.phi_i, settings.output_sign, settings.phi_e);
    Ok(pair.expectation(&ps, &pi))
}

/// [`povm_probability`] for an entangled [`TimeBinState`].
pub fn povm_coincidence_probability(settings: &PhaseSettings, state: &TimeBinState) -> Result<f64> {
    state.check_normalized()?;
    povm_probability(settings, &state.coefficients())
}

/// Projective joint probability for explicit signal and idler branches.
pub fn projector_probability(
    phi_s: f64,
    sign_s: OutputSign,
    phi_i: f64,
    sign_i: OutputSign,
    pair: &PairAmplitudes,
) -> f64 {
    pair.expectation(&projector(phi_s, sign_s), &projector(phi_i, sign_i))
}

/// Correlation `E(a, b) = sum_{s, i} s * i * P(s, i)` over the four
/// projector outcomes.
pub fn correlation(a: f64, b: f64, pair: &PairAmplitudes) -> f64 {
    let mut e = 0.0;
    for s in OutputSign::BOTH {
        for i in OutputSign::BOTH {
            e += s.value() * i.value() * projector_probability(a, s, b, i, pair);
        }
    }
    e
}

/// Analyzer phases of a CHSH test: signal settings `a`, `a'`, idler
/// settings `b`, `b'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshSettings {
    pub a: f64,
    pub a_prime: f64,
    pub b: f64,
    pub b_prime: f64,
}

impl ChshSettings {
    /// Settings reaching `2 sqrt(2)` for `E(a, b) = cos(a + b - phi_p)`.
    pub fn optimal(phi_p: f64) -> Self {
        Self {
            a: phi_p,
            a_prime: phi_p - 0.5 * PI,
            b: 0.25 * PI,
            b_prime: 0.75 * PI,
        }
    }

    /// The four setting pairs in the order `(a,b), (a,b'), (a',b), (a',b')`.
    pub fn pairs(&self) -> [(f64, f64); 4] {
        [
            (self.a, self.b),
            (self.a, self.b_prime),
            (self.a_prime, self.b),
            (self.a_prime, self.b_prime),
        ]
    }

    pub fn correlations(&self, pair: &PairAmplitudes) -> [f64; 4] {
        self.pairs().map(|(a, b)| correlation(a, b, pair))
    }
}

/// `S = E(a,b) - E(a,b') + E(a',b) + E(a',b')`.
pub fn chsh_s(correlations: [f64; 4]) -> Result<f64> {
    if let Some(e) = correlations.iter().find(|e| !(e.abs() <= 1.0)) {
        return domain(format!("correlation {e} outside [-1, 1]"));
    }
    let [ab, abp, apb, apbp] = correlations;
    Ok(ab - abp + apb + apbp)
}

/// Largest CHSH value reachable with fringe visibility `visibility`.
pub fn chsh_s_max(visibility: f64) -> f64 {
    2.0 * SQRT_2 * visibility
}

/// Local realism bound `S <= 2`.
pub fn violates_local_realism(s: f64) -> bool {
    s > 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn settings(phi_s: f64, phi_i: f64, phi_p: f64, phi_e: f64, sign: OutputSign) -> PhaseSettings {
        PhaseSettings::new(phi_s, phi_i, phi_p, phi_e, sign).unwrap()
    }

    #[test]
    fn eq2_extremes() {
        let s = settings(0.0, 0.0, 0.0, PI, OutputSign::Plus);
        assert_abs_diff_eq!(
            coincidence_probability(&s, 1.0).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        let s = settings(PI, 0.0, 0.0, PI, OutputSign::Plus);
        assert_abs_diff_eq!(
            coincidence_probability(&s, 1.0).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        for phase in [0.0, 0.3, 2.0, -5.0] {
            let s = settings(phase, 0.7, 0.1, PI, OutputSign::Minus);
            assert_abs_diff_eq!(
                coincidence_probability(&s, 0.0).unwrap(),
                0.25,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn visibility_out_of_range_is_rejected() {
        let s = settings(0.0, 0.0, 0.0, PI, OutputSign::Plus);
        assert!(coincidence_probability(&s, 1.5).is_err());
        assert!(coincidence_probability(&s, -0.1).is_err());
        assert!(PhaseSettings::new(f64::NAN, 0.0, 0.0, 0.0, OutputSign::Plus).is_err());
    }

    #[test]
    fn branch_probabilities_sum_to_one() {
        let s = settings(0.4, 1.1, -0.3, PI, OutputSign::Plus);
        let p = outcome_probabilities(&s, 0.8).unwrap();
        let total: f64 = p.iter().flatten().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn povm_limits() {
        let state = TimeBinState::maximally_entangled(0.0);
        let s = settings(0.0, 0.0, 0.0, PI, OutputSign::Plus);
        assert_abs_diff_eq!(
            povm_coincidence_probability(&s, &state).unwrap(),
            0.5,
            epsilon = 1e-14
        );
        for phase in [0.0, 1.0, 2.5] {
            let s = settings(phase, -phase * 0.3, 0.0, 0.0, OutputSign::Minus);
            assert_abs_diff_eq!(
                povm_coincidence_probability(&s, &state).unwrap(),
                0.25,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn unnormalized_state_is_rejected() {
        assert!(TimeBinState::new(C64::new(1.0, 0.0), C64::new(1.0, 0.0)).is_err());
        let pair = PairAmplitudes::from_vector([C64::new(0.5, 0.0); 4].map(|c| c * 1.1));
        let s = settings(0.0, 0.0, 0.0, PI, OutputSign::Plus);
        assert!(povm_probability(&s, &pair).is_err());
    }

    #[test]
    fn chsh_examples() {
        let h = FRAC_1_SQRT_2;
        assert_abs_diff_eq!(
            chsh_s([h, -h, h, h]).unwrap(),
            2.0 * SQRT_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(chsh_s([1.0, -1.0, 1.0, 1.0]).unwrap(), 4.0);
        assert_abs_diff_eq!(chsh_s([0.0; 4]).unwrap(), 0.0);
        assert!(chsh_s([1.01, 0.0, 0.0, 0.0]).is_err());
        assert!(chsh_s([f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn chsh_max_and_threshold() {
        assert_abs_diff_eq!(chsh_s_max(1.0), 2.8284271247461903, epsilon = 1e-15);
        assert_abs_diff_eq!(chsh_s_max(FRAC_1_SQRT_2), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(chsh_s_max(0.879), 2.486187, epsilon = 1e-6);
        assert!(!violates_local_realism(chsh_s_max(0.70)));
        assert!(violates_local_realism(chsh_s_max(0.71)));
    }

    #[test]
    fn optimal_settings_reach_tsirelson() {
        for phi_p in [0.0, 0.9, -2.0] {
            let state = TimeBinState::maximally_entangled(phi_p);
            let e = ChshSettings::optimal(phi_p).correlations(&state.coefficients());
            assert_abs_diff_eq!(chsh_s(e).unwrap(), 2.0 * SQRT_2, epsilon = 1e-12);
        }
    }

    #[test]
    fn correlation_is_cosine_of_fringe_argument() {
        let state = TimeBinState::maximally_entangled(0.4);
        for (a, b) in [(0.0, 0.0), (0.3, 1.2), (-1.0, 2.2)] {
            assert_abs_diff_eq!(
                correlation(a, b, &state.coefficients()),
                (a + b - 0.4_f64).cos(),
                epsilon = 1e-13
            );
        }
    }
}
