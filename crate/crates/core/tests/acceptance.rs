//! Acceptance checks. Each criterion prints one PASS or FAIL line; the
//! process exits non-zero if any fails.

mod common;

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{
    dense_element, dense_expectation, kron, oracle_histogram, random_sorted, random_state,
    state_vector,
};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use timebin::analysis::{
    fit_fringe, run_bell_sweep, tune_for_car, Backend, BellCurve, BellPoint, CountSelection,
    FitOptions, SweepConfig,
};
use timebin::analytic::{fringe_visibility, schmidt_number, AxisSpec, VisibilityMode};
use timebin::config::ExperimentConfig;
use timebin::correlator::{coincide, CoincidenceConfig, Pairing, StreamingCorrelator};
use timebin::device::{
    input_lobes, propagate, DeviceParams, Lobe, LobeSet, Mode, PortLabel, Topology,
};
use timebin::eventgen::{simulate, DetectorParams, ExpectedDelay, PairDistribution, SourceParams};
use timebin::qubit::{povm_coincidence_probability, OutputSign, PhaseSettings, TimeBinState};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(start: Instant, limit: Duration, detail: String) -> Outcome {
    let took = start.elapsed();
    ensure(
        took < limit,
        format!(
            "{detail}; {:.2} s (limit {} s)",
            took.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn visibility_bounds() -> Outcome {
    let start = Instant::now();
    let ideal = DeviceParams::ideal();
    let full =
        fringe_visibility(VisibilityMode::PassiveFull, &ideal, None).map_err(|e| e.to_string())?;
    let central = fringe_visibility(VisibilityMode::PassiveCentral, &ideal, None)
        .map_err(|e| e.to_string())?;
    let active =
        fringe_visibility(VisibilityMode::Active, &ideal, None).map_err(|e| e.to_string())?;
    let detail =
        format!("passive full {full:.12}, passive central {central:.12}, active {active:.12}");
    ensure(
        (full - 0.25).abs() < 1e-9 && (central - 0.5).abs() < 1e-9 && (active - 1.0).abs() < 1e-9,
        detail.clone(),
    )?;
    within_time(start, Duration::from_secs(1), detail)
}

fn global_postselected_relation() -> Outcome {
    let ideal = DeviceParams::ideal();
    let global =
        fringe_visibility(VisibilityMode::PassiveFull, &ideal, None).map_err(|e| e.to_string())?;
    let lobe = fringe_visibility(VisibilityMode::PassiveInterferingLobe, &ideal, None)
        .map_err(|e| e.to_string())?;
    ensure(
        (global - lobe / 4.0).abs() < 1e-9,
        format!("V_g = {global:.12}, V_ps / 4 = {:.12}", lobe / 4.0),
    )
}

fn lobe_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ideal = DeviceParams::ideal();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let pump = rng.random_range(-PI..PI);
        let state = TimeBinState::maximally_entangled(pump);
        let phases =
            PhaseSettings::projective(rng.random_range(-PI..PI), rng.random_range(-PI..PI), pump);
        for mode in [Mode::Passive, Mode::Active] {
            let prop = propagate(&state, &ideal, mode, &phases).map_err(|e| e.to_string())?;
            let expected = if mode == Mode::Passive { 7 } else { 1 };
            if let Some(k) = prop.decomposed.iter().position(|l| l.len() != expected) {
                return Err(format!(
                    "{mode:?}: {} lobes at port pair {k}",
                    prop.decomposed[k].len()
                ));
            }
            worst = worst.max((prop.total_probability() - 1.0).abs());
        }
    }
    ensure(
        worst < 1e-10,
        format!("7 passive / 1 active lobes for 100 settings; max |total - 1| = {worst:.2e}"),
    )
}

fn monte_carlo_matches_analytic() -> Outcome {
    let start = Instant::now();
    let source = SourceParams {
        pair_mean: 0.05,
        ..SourceParams::default()
    };
    let det = DetectorParams {
        jitter_fwhm_ps: 50.0,
        ..DetectorParams::ideal()
    };
    let state = TimeBinState::maximally_entangled(0.0);
    let dist = PairDistribution::for_device(
        &state,
        &DeviceParams::ideal(),
        Mode::Passive,
        &PhaseSettings::projective(0.0, 0.0, 0.0),
    )
    .map_err(|e| e.to_string())?;
    let n_pulses = 10_000_000u64;
    let stream = simulate(n_pulses, &source, &dist, &det, &det, 2024).map_err(|e| e.to_string())?;
    let cfg = CoincidenceConfig {
        bin_ps: 10,
        range_ps: 400,
        window_ps: 100,
        ..Default::default()
    };
    let measured = coincide(&stream.channel(0), &stream.channel(1), &cfg)
        .map_err(|e| e.to_string())?
        .histogram;
    let seconds = n_pulses as f64 * source.period_ps() * 1e-12;
    let model =
        ExpectedDelay::new(&source, &det, &det, &dist, (0, 0)).map_err(|e| e.to_string())?;
    let expected = model.histogram(measured.axis(), seconds);

    // the last bin holds only the single delay at +range
    let last = measured.counts.len() - 1;
    let (mut chi2, mut used) = (0.0, 0usize);
    for (&o, &e) in measured.counts.iter().zip(&expected.values).take(last) {
        if e >= 5.0 {
            chi2 += (o as f64 - e).powi(2) / e;
            used += 1;
        }
    }
    let dof = used.saturating_sub(1).max(1);
    let reduced = chi2 / dof as f64;

    let axis = measured.axis();
    let bin_of = |d: f64| ((d - axis.start_ps) / axis.step_ps).floor() as usize;
    let peak_in = |lo: f64, hi: f64| {
        (bin_of(lo)..=bin_of(hi))
            .max_by_key(|&k| measured.counts[k])
            .map(|k| axis.center(k))
            .unwrap()
    };
    let peaks: Vec<f64> = [-100.0, 0.0, 100.0]
        .iter()
        .map(|&c| peak_in(c - 40.0, c + 40.0))
        .collect();
    let peak_count = |d: f64| measured.counts[bin_of(d)];
    let valley = |lo: f64, hi: f64| {
        (bin_of(lo)..=bin_of(hi))
            .map(|k| measured.counts[k])
            .min()
            .unwrap()
    };
    let separated = peaks
        .iter()
        .zip([-100.0, 0.0, 100.0])
        .all(|(p, c)| (p - c).abs() <= 10.0)
        && valley(peaks[0], peaks[1]) < peak_count(peaks[0])
        && valley(peaks[1], peaks[2]) < peak_count(peaks[2]);
    let smeared_maxima = model.true_peaks.local_maxima(-200.0, 200.0, 1.0);
    let analytic_three = smeared_maxima.len() == 3
        && smeared_maxima
            .iter()
            .zip([-100.0, 0.0, 100.0])
            .all(|(m, c)| (m - c).abs() <= 5.0);

    let detail = format!(
        "chi2/dof = {reduced:.3} over {used} bins, {} coincidences; measured peaks {peaks:?}, analytic maxima {smeared_maxima:?}",
        measured.total()
    );
    ensure(reduced < 1.5 && separated && analytic_three, detail.clone())?;
    within_time(start, Duration::from_secs(60), detail)
}

fn monte_carlo_fit(cfg: &ExperimentConfig, pulses_per_point: u64) -> Result<BellCurve, String> {
    let sweep = SweepConfig {
        n_phases: 16,
        pulses_per_point,
        backend: Backend::MonteCarlo,
        ports: (0, 0),
    };
    run_bell_sweep(cfg, &sweep).map_err(|e| e.to_string())
}

fn car_limited_visibility() -> Outcome {
    let car = 60.0;
    let mut base = ExperimentConfig::desk();
    base.mode = Mode::Active;
    base.correlator.window_ps = 50;
    let cfg = tune_for_car(&base, car, (0, 0)).map_err(|e| e.to_string())?;
    let curve = monte_carlo_fit(&cfg, 20_000_000)?;
    let central = FitOptions {
        selection: CountSelection::Central,
        ..FitOptions::default()
    };
    let raw = fit_fringe(&curve, &central).map_err(|e| e.to_string())?;
    let sub = fit_fringe(
        &curve,
        &FitOptions {
            subtract_accidentals: true,
            ..central
        },
    )
    .map_err(|e| e.to_string())?;
    let bound = car / (car + 2.0);
    let detail = format!(
        "noise {:.3e} Hz; raw V = {:.4} ± {:.4} (bound {bound:.4} + 3σ), subtracted V = {:.4} ± {:.4}",
        cfg.source.noise_singles_rate_hz, raw.visibility, raw.visibility_err, sub.visibility, sub.visibility_err
    );
    ensure(
        raw.visibility <= bound + 3.0 * raw.visibility_err && sub.visibility > raw.visibility,
        detail,
    )
}

fn desk_bell_violation() -> Outcome {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::desk();
    cfg.mode = Mode::Active;
    let target = 1e5;
    let per_pulse = run_bell_sweep(
        &cfg,
        &SweepConfig {
            n_phases: 16,
            pulses_per_point: 1,
            backend: Backend::Analytic,
            ports: (0, 0),
        },
    )
    .map_err(|e| e.to_string())?
    .points
    .iter()
    .map(|p| p.coincidences)
    .sum::<f64>();
    let pulses = (target / per_pulse).ceil() as u64;
    let curve = monte_carlo_fit(&cfg, pulses)?;
    let total: f64 = curve.points.iter().map(|p| p.coincidences).sum();
    let fit = fit_fringe(&curve, &FitOptions::default()).map_err(|e| e.to_string())?;
    let v = fit.violation();
    let detail = format!(
        "{total:.0} coincidences from {pulses} pulses per point; V = {:.4} ± {:.4}, S = {:.3} ± {:.3}, {:.1} σ above 1/√2",
        fit.visibility, fit.visibility_err, v.s, v.s_err, v.sigmas
    );
    ensure(
        fit.visibility > FRAC_1_SQRT_2 && v.sigmas >= 10.0,
        detail.clone(),
    )?;
    within_time(start, Duration::from_secs(120), detail)
}

fn povm_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let state = random_state(&mut rng);
        let phi_e = rng.random_range(0.0..PI);
        let sign = if rng.random::<bool>() {
            OutputSign::Plus
        } else {
            OutputSign::Minus
        };
        let settings = PhaseSettings::new(
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
            0.0,
            phi_e,
            sign,
        )
        .map_err(|e| e.to_string())?;
        let op = kron(
            &dense_element(settings.phi_s, 1.0, phi_e),
            &dense_element(settings.phi_i, sign.value(), phi_e),
        );
        let fast = povm_coincidence_probability(&settings, &state).map_err(|e| e.to_string())?;
        worst = worst.max((fast - dense_expectation(&state_vector(&state), &op)).abs());
    }
    ensure(
        worst < 1e-12,
        format!("1000 tuples, max deviation {worst:.2e}"),
    )
}

fn correlator_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..50 {
        let span = rng.random_range(1_000_000..50_000_000u64);
        let a = random_sorted(&mut rng, 10_000, span);
        let b = random_sorted(&mut rng, 10_000, span);
        let bin = rng.random_range(1..20u64);
        let range = bin * rng.random_range(1..40u64);
        let cfg = CoincidenceConfig {
            bin_ps: bin,
            range_ps: range,
            window_ps: range,
            ..Default::default()
        };
        let fast = coincide(&a, &b, &cfg).map_err(|e| e.to_string())?;
        if fast.histogram.counts != oracle_histogram(&a, &b, &cfg) {
            return Err(format!(
                "histogram differs from the all-pairs oracle in case {case}"
            ));
        }
        for pairing in [Pairing::AllPairs, Pairing::FirstMatch] {
            let cfg = CoincidenceConfig {
                pairing,
                ..cfg.clone()
            };
            let batch = coincide(&a, &b, &cfg).map_err(|e| e.to_string())?;
            let mut s = StreamingCorrelator::new(cfg).map_err(|e| e.to_string())?;
            let chunk = rng.random_range(1..2000usize);
            for (ca, cb) in a.chunks(chunk).zip(b.chunks(chunk)) {
                s.feed_a(ca).map_err(|e| e.to_string())?;
                s.feed_b(cb).map_err(|e| e.to_string())?;
            }
            if s.finish() != batch {
                return Err(format!(
                    "streaming result depends on chunking in case {case} ({pairing:?})"
                ));
            }
        }
    }

    let n = 2_000_000;
    let a = random_sorted(&mut rng, n, n as u64 * 2000);
    let b = random_sorted(&mut rng, n, n as u64 * 2000);
    let cfg = CoincidenceConfig::default();
    let start = Instant::now();
    let c = coincide(&a, &b, &cfg).map_err(|e| e.to_string())?;
    let rate = 2.0 * n as f64 / start.elapsed().as_secs_f64();
    Ok(format!("50 instances of 10^4 tags match the oracle, chunking invariant; throughput {rate:.3e} tags/s ({} pairs)", c.histogram.total()))
}

fn schmidt_numbers() -> Outcome {
    let params = DeviceParams::ideal();
    let axis = AxisSpec::spanning(-40.0, 200.0, 1.0).map_err(|e| e.to_string())?;
    let entangled = schmidt_number(
        &input_lobes(&TimeBinState::maximally_entangled(0.0), &params),
        axis,
        axis,
    )
    .map_err(|e| e.to_string())?;
    let lobe = Lobe {
        t_signal_center: 50.0,
        t_idler_center: 50.0,
        amplitude: C64::new(1.0, 0.0),
        width_sigma: params.lobe_sigma_ps(),
    };
    let separable = schmidt_number(
        &LobeSet {
            lobes: vec![lobe],
            port_label: PortLabel::Input,
        },
        axis,
        axis,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        (entangled - 2.0).abs() < 1e-3 && (separable - 1.0).abs() < 1e-3,
        format!("K = {entangled:.6} entangled, {separable:.6} separable"),
    )
}

fn fringe_curve(n: usize, mut f: impl FnMut(f64) -> f64) -> BellCurve {
    let points = (0..n)
        .map(|k| {
            let d = 2.0 * PI * k as f64 / n as f64;
            let c = f(d);
            BellPoint {
                actuator_phase_rad: d,
                tps_power_mw: 0.0,
                fringe_argument_rad: d,
                coincidences: c,
                accidentals: 0.0,
                central_coincidences: c,
                central_accidentals: 0.0,
                integration_s: 1.0,
            }
        })
        .collect();
    BellCurve {
        mode: Mode::Active,
        topology: Topology::Shared,
        backend: Backend::MonteCarlo,
        points,
    }
}

fn fit_estimator() -> Outcome {
    let (a, v, phi0) = (1234.5, 0.879, 0.7);
    let exact = fit_fringe(
        &fringe_curve(16, |d| a * (1.0 + v * (d - phi0).cos())),
        &FitOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let noiseless = (exact.offset - a).abs() <= 1e-9 * a
        && (exact.visibility - v).abs() <= 1e-9
        && (exact.phase_origin - phi0).abs() <= 1e-9;

    // about 2500 counts per point puts the visibility error near 0.007
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mean = 2500.0;
    let noisy = fringe_curve(16, |d| {
        Poisson::new(mean * (1.0 + v * (d - phi0).cos()))
            .unwrap()
            .sample(&mut rng)
    });
    let fit = fit_fringe(
        &noisy,
        &FitOptions {
            reweight: true,
            ..FitOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let recovered = (fit.visibility - v).abs() <= 3.0 * fit.visibility_err
        && (0.0035..0.014).contains(&fit.visibility_err);
    ensure(
        noiseless && recovered,
        format!(
            "noiseless error {:.1e}; noisy V = {:.4} ± {:.4} (truth {v})",
            (exact.visibility - v).abs(),
            fit.visibility,
            fit.visibility_err
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("analytic visibility bounds", visibility_bounds),
        (
            "global vs post-selected visibility",
            global_postselected_relation,
        ),
        ("lobe structure and unitarity", lobe_structure),
        (
            "Monte Carlo vs analytic delay histogram",
            monte_carlo_matches_analytic,
        ),
        ("CAR-limited visibility", car_limited_visibility),
        ("Bell violation at desk scale", desk_bell_violation),
        ("POVM vs dense operator", povm_oracle),
        ("correlator vs all-pairs oracle", correlator_correctness),
        ("Schmidt number", schmidt_numbers),
        ("fringe fit estimator", fit_estimator),
    ];
    let silent = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", k + 1);
            }
        }
    }
    panic::set_hook(silent);
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
