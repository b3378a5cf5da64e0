//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64 as C64;
use rand::Rng;
use timebin::correlator::CoincidenceConfig;
use timebin::qubit::TimeBinState;

pub fn random_state(rng: &mut impl Rng) -> TimeBinState {
    let a = C64::from_polar(rng.random::<f64>().sqrt(), rng.random_range(0.0..2.0 * PI));
    let b = C64::from_polar((1.0 - a.norm_sqr()).sqrt(), rng.random_range(0.0..2.0 * PI));
    TimeBinState::new(a, b).unwrap()
}

fn analyzer_vector(phase: f64, sign: f64) -> [C64; 2] {
    [
        C64::new(FRAC_1_SQRT_2, 0.0),
        C64::from_polar(sign * FRAC_1_SQRT_2, phase),
    ]
}

/// `(1/2)cos²(φe/2)·1 + sin²(φe/2)·|v><v|` built element by element.
pub fn dense_element(phase: f64, sign: f64, phi_e: f64) -> Matrix2<C64> {
    let v = analyzer_vector(phase, sign);
    let c2 = (phi_e / 2.0).cos().powi(2);
    let s2 = (phi_e / 2.0).sin().powi(2);
    Matrix2::from_fn(|r, c| {
        let id = if r == c { 0.5 * c2 } else { 0.0 };
        C64::new(id, 0.0) + v[r] * v[c].conj() * s2
    })
}

pub fn kron(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Matrix4<C64> {
    Matrix4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

pub fn dense_expectation(psi: &Vector4<C64>, op: &Matrix4<C64>) -> f64 {
    (psi.adjoint() * op * psi)[(0, 0)].re
}

pub fn state_vector(state: &TimeBinState) -> Vector4<C64> {
    Vector4::new(
        state.amp_ee,
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        state.amp_ll,
    )
}

/// Every (a, b) pair checked explicitly.
pub fn oracle_histogram(a: &[u64], b: &[u64], cfg: &CoincidenceConfig) -> Vec<u64> {
    let mut h = vec![0u64; cfg.n_bins()];
    let r = cfg.range_ps as i64;
    for &ta in a {
        for &tb in b {
            let d = tb as i64 - ta as i64;
            if d.abs() <= r {
                h[((d + r) as u64 / cfg.bin_ps) as usize] += 1;
            }
        }
    }
    h
}

pub fn random_sorted(rng: &mut impl Rng, n: usize, span: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..span)).collect();
    v.sort_unstable();
    v
}
