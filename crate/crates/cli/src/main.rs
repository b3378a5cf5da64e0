use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use timebin::analysis::{
    fit_fringe, run_bell_sweep, tune_for_car, Backend, CountSelection, FitOptions, SweepConfig,
};
use timebin::analytic::{AxisSpec, JointIntensity};
use timebin::config::ExperimentConfig;
use timebin::correlator::{
    coincide, estimate_accidentals, fold_jti, CoincidenceHistogram, Jti2dCounts,
};
use timebin::device::{propagate, Mode};
use timebin::eventgen::{idler_channel, signal_channel};
use timebin::export::{
    write_bell_csv, write_delay_counts_csv, write_jti_counts_csv, write_jti_csv,
};
use timebin::timetag::{read_tags_csv, RunHeader, TimeTagStream};
use timebin::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DATA: u8 = 4;

/// Simulate and analyse actively switched time-bin entanglement receivers.
#[derive(Parser, Debug)]
#[command(name = "timebin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a validated configuration, from a preset or an existing file.
    Config(ConfigArgs),
    /// Joint temporal intensity at one port pair, analytic or simulated.
    Jti(JtiArgs),
    /// Generate a timetag file.
    Gen(GenArgs),
    /// Coincidence histogram, CAR and optional folded JTI from tag files.
    Correlate(CorrelateArgs),
    /// Phase sweep with a fringe fit and Bell-violation significance.
    Bell(BellArgs),
}

#[derive(Args, Debug)]
struct ConfigSource {
    /// Experiment configuration (JSON); the preset is used when absent.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Built-in configuration used without --config.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Preset {
    Desk,
    Reference,
    Ideal,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Passive,
    Active,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Passive => Mode::Passive,
            ModeArg::Active => Mode::Active,
        }
    }
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Output file; stdout when absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct JtiArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Override the configured switching mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Closed-form JTI (the default).
    #[arg(long, conflicts_with = "montecarlo")]
    analytic: bool,
    /// Fold simulated tags onto the pump frame.
    #[arg(long)]
    montecarlo: bool,
    /// Pump pulses for --montecarlo.
    #[arg(long, default_value_t = 10_000_000)]
    pulses: u64,
    /// Signal output port.
    #[arg(long, default_value_t = 0)]
    signal_port: usize,
    /// Idler output port.
    #[arg(long, default_value_t = 0)]
    idler_port: usize,
    /// Output directory for jti.csv and summary.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Pump pulses to simulate.
    #[arg(long)]
    pulses: u64,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Tag file; a .csv extension writes text instead of binary.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CorrelateArgs {
    /// Tag files (.ttag binary or .csv); their histograms are summed.
    #[arg(required = true, value_name = "TAGS")]
    tags: Vec<PathBuf>,
    /// Half-width of the counting window in ps.
    #[arg(long, default_value_t = 100)]
    window: u64,
    /// Histogram bin width in ps.
    #[arg(long, default_value_t = 10)]
    bin: u64,
    /// Histogram half-range in ps.
    #[arg(long, default_value_t = 400)]
    range: u64,
    /// Pump period in ps for files without a header.
    #[arg(long)]
    period_ps: Option<f64>,
    /// Also fold coincidences into a JTI.
    #[arg(long)]
    jti: bool,
    /// Signal output port.
    #[arg(long, default_value_t = 0)]
    signal_port: usize,
    /// Idler output port.
    #[arg(long, default_value_t = 0)]
    idler_port: usize,
    /// Output directory for delay.csv, jti.csv and summary.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BellArgs {
    #[command(flatten)]
    source: ConfigSource,
    /// Override the configured switching mode.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Phase points over one fringe period.
    #[arg(long, default_value_t = 16)]
    phases: usize,
    /// Pump pulses per phase point.
    #[arg(long, default_value_t = 100_000_000)]
    pulses_per_point: u64,
    /// Simulate tags instead of using expected counts.
    #[arg(long)]
    montecarlo: bool,
    /// Fit coincidences minus the shifted-window accidentals.
    #[arg(long)]
    subtract_accidentals: bool,
    /// Fit only the central delay peak.
    #[arg(long)]
    central: bool,
    /// Iterate the fit weights with model variances.
    #[arg(long)]
    reweight: bool,
    /// Tune background singles to this CAR at the fringe maximum.
    #[arg(long)]
    target_car: Option<f64>,
    /// Signal output port.
    #[arg(long, default_value_t = 0)]
    signal_port: usize,
    /// Idler output port.
    #[arg(long, default_value_t = 0)]
    idler_port: usize,
    /// Output directory for bell.csv and fit.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

type CliResult<T> = Result<T, Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Csv(_) => EXIT_IO,
            Error::Corrupt { .. } | Error::Unsorted { .. } => EXIT_DATA,
            _ => EXIT_CONFIG,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn load_config(src: &ConfigSource) -> CliResult<ExperimentConfig> {
    match &src.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            ExperimentConfig::from_json(&text).map_err(|e| Failure {
                code: EXIT_CONFIG,
                message: format!("{}: {e}", path.display()),
            })
        }
        None => Ok(match src.preset {
            Preset::Desk => ExperimentConfig::desk(),
            Preset::Reference => ExperimentConfig::reference(),
            Preset::Ideal => ExperimentConfig::ideal(),
        }),
    }
}

fn check_ports(signal: usize, idler: usize) -> CliResult<()> {
    if signal > 1 || idler > 1 {
        return Err(Failure {
            code: EXIT_CONFIG,
            message: "ports are 0 or 1".into(),
        });
    }
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_failure(path, e))
}

fn out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_failure(path, e))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| io_failure(path, e))
}

fn cmd_config(args: &ConfigArgs) -> CliResult<()> {
    let cfg = load_config(&args.source)?;
    cfg.validate()?;
    let text = cfg.to_json();
    match &args.out {
        Some(path) => fs::write(path, text + "\n").map_err(|e| io_failure(path, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn fold_axis(cfg: &ExperimentConfig) -> AxisSpec {
    let c = &cfg.correlator;
    AxisSpec {
        start_ps: c.fold_start_ps as f64 - 0.5,
        step_ps: c.bin_ps as f64,
        n: (c.fold_span_ps / c.bin_ps) as usize,
    }
}

fn cmd_jti(args: &JtiArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.source)?;
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    cfg.validate()?;
    check_ports(args.signal_port, args.idler_port)?;
    out_dir(&args.out)?;
    let csv = args.out.join("jti.csv");
    let axis = fold_axis(&cfg);
    let summary = if args.montecarlo {
        let stream = cfg.generate(args.pulses)?;
        let s = stream.channel(signal_channel(args.signal_port));
        let i = stream.channel(idler_channel(args.idler_port));
        let jti: Jti2dCounts = fold_jti(&s, &i, Some(stream.header.clock()), &cfg.correlator)?;
        write_jti_counts_csv(&jti, create(&csv)?)?;
        let peak = jti.counts.iter().copied().max().unwrap_or(0);
        json!({
            "backend": "montecarlo",
            "mode": cfg.mode,
            "ports": [args.signal_port, args.idler_port],
            "axis": { "start_ps": axis.start_ps, "bin_ps": axis.step_ps, "bins": axis.n },
            "pulses": args.pulses,
            "coincidences": jti.total(),
            "lobes": if peak == 0 { 0 } else { jti.clusters(peak / 50 + 1) },
            "params_digest": stream.header.params_digest,
        })
    } else {
        let prop = propagate(&cfg.state(), &cfg.device, cfg.mode, &cfg.phase_settings())?;
        let set = prop.port_pair(args.signal_port, args.idler_port);
        let (ds, di) = (&cfg.detectors.signal, &cfg.detectors.idler);
        let joint =
            JointIntensity::from_lobes(&set).smear_each(ds.jitter_fwhm_ps, di.jitter_fwhm_ps);
        let jti = joint.rasterize(axis, axis)?;
        write_jti_csv(&jti, create(&csv)?)?;
        let lobes = set.lobes.iter().filter(|l| l.intensity() > 1e-12).count();
        json!({
            "backend": "analytic",
            "mode": cfg.mode,
            "ports": [args.signal_port, args.idler_port],
            "axis": { "start_ps": axis.start_ps, "bin_ps": axis.step_ps, "bins": axis.n },
            "probability": jti.integral(),
            "lobes": lobes,
            "warnings": prop.warnings,
        })
    };
    write_json(&args.out.join("summary.json"), &summary)
}

fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.source)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let stream = cfg.generate(args.pulses)?;
    let w = create(&args.out)?;
    if args
        .out
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        stream.write_csv(w)?;
    } else {
        let mut w = w;
        stream.write_ttag(&mut w)?;
        w.flush().map_err(|e| io_failure(&args.out, e))?;
    }
    let counts: Vec<usize> = (0..4).map(|ch| stream.count(ch)).collect();
    let summary = json!({
        "tags": stream.tags.len(),
        "channel_counts": counts,
        "duration_ps": stream.header.duration_ps,
        "seed": stream.header.seed,
        "params_digest": stream.header.params_digest,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(())
}

fn read_stream(path: &Path, period_ps: Option<f64>) -> CliResult<TimeTagStream> {
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    let with_path = |e: Error| {
        let f = Failure::from(e);
        Failure {
            message: format!("{}: {}", path.display(), f.message),
            ..f
        }
    };
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        let tags = read_tags_csv(BufReader::new(file)).map_err(with_path)?;
        let duration_ps = tags.iter().map(|t| t.time_ps).max().unwrap_or(0);
        let header = RunHeader {
            duration_ps,
            rep_rate_mhz: period_ps.map_or(0.0, |p| 1e6 / p),
            n_pulses: 0,
            emission_offset_ps: 0,
            seed: 0,
            params_digest: String::new(),
        };
        let stream = TimeTagStream { header, tags };
        stream.validate().map_err(with_path)?;
        Ok(stream)
    } else {
        TimeTagStream::read_ttag(BufReader::new(file)).map_err(with_path)
    }
}

#[derive(Serialize)]
struct FileSummary {
    path: String,
    tags_signal: usize,
    tags_idler: usize,
    in_window: u64,
    true_window: Option<u64>,
    shifted_window: Option<u64>,
}

fn cmd_correlate(args: &CorrelateArgs) -> CliResult<()> {
    check_ports(args.signal_port, args.idler_port)?;
    let mut cc = ExperimentConfig::desk().correlator;
    cc.window_ps = args.window;
    cc.bin_ps = args.bin;
    cc.range_ps = args.range;
    cc.pump_period_ps = args.period_ps;
    cc.validate()?;
    let mut hist = CoincidenceHistogram::new(args.range, args.bin);
    let mut jti: Option<Jti2dCounts> = None;
    let (mut truth, mut shifted, mut estimated) = (0u64, 0u64, true);
    let mut files = Vec::new();
    for path in &args.tags {
        let stream = read_stream(path, args.period_ps)?;
        let a = stream.channel(signal_channel(args.signal_port));
        let b = stream.channel(idler_channel(args.idler_port));
        let c = coincide(&a, &b, &cc)?;
        for (h, x) in hist.counts.iter_mut().zip(&c.histogram.counts) {
            *h += x;
        }
        let period = match (args.period_ps, stream.header.rep_rate_mhz) {
            (Some(p), _) => Some(p),
            (None, r) if r > 0.0 => Some(1e6 / r),
            _ => None,
        };
        // an empty or very short run cannot hold the shifted window
        let est = match period {
            Some(p)
                if (cc.accidental_offset as f64 * p).abs() <= stream.header.duration_ps as f64 =>
            {
                Some(estimate_accidentals(
                    &a,
                    &b,
                    Some(p),
                    stream.header.duration_ps,
                    &cc,
                )?)
            }
            _ => None,
        };
        match est {
            Some(e) => {
                truth += e.true_window;
                shifted += e.shifted_window;
            }
            None => estimated = false,
        }
        if args.jti {
            let clock = period.map(|_| stream.header.clock());
            let folded = fold_jti(&a, &b, clock, &cc)?;
            match jti.as_mut() {
                Some(acc) => {
                    for (x, y) in acc.counts.iter_mut().zip(&folded.counts) {
                        *x += y;
                    }
                    acc.tags_signal += folded.tags_signal;
                    acc.tags_idler += folded.tags_idler;
                }
                None => jti = Some(folded),
            }
        }
        files.push(FileSummary {
            path: path.display().to_string(),
            tags_signal: a.len(),
            tags_idler: b.len(),
            in_window: c.in_window,
            true_window: est.map(|e| e.true_window),
            shifted_window: est.map(|e| e.shifted_window),
        });
    }
    out_dir(&args.out)?;
    write_delay_counts_csv(&hist, create(&args.out.join("delay.csv"))?)?;
    if let Some(j) = &jti {
        write_jti_counts_csv(j, create(&args.out.join("jti.csv"))?)?;
    }
    let (car_ratio, car_excess) = if !estimated || args.tags.is_empty() {
        (None, None)
    } else if shifted == 0 {
        (Some(json!("infinite")), Some(json!("infinite")))
    } else {
        let (t, s) = (truth as f64, shifted as f64);
        (Some(json!(t / s)), Some(json!((t - s) / s)))
    };
    let summary = json!({
        "window_ps": args.window,
        "bin_ps": args.bin,
        "range_ps": args.range,
        "ports": [args.signal_port, args.idler_port],
        "coincidences": hist.total(),
        "in_window": files.iter().map(|f| f.in_window).sum::<u64>(),
        "true_window": estimated.then_some(truth),
        "shifted_window": estimated.then_some(shifted),
        "car_ratio": car_ratio,
        "car_excess": car_excess,
        "files": files,
    });
    write_json(&args.out.join("summary.json"), &summary)
}

fn cmd_bell(args: &BellArgs) -> CliResult<()> {
    let mut cfg = load_config(&args.source)?;
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    check_ports(args.signal_port, args.idler_port)?;
    let ports = (args.signal_port, args.idler_port);
    if let Some(car) = args.target_car {
        cfg = tune_for_car(&cfg, car, ports)?;
    }
    let sweep = SweepConfig {
        n_phases: args.phases,
        pulses_per_point: args.pulses_per_point,
        backend: if args.montecarlo {
            Backend::MonteCarlo
        } else {
            Backend::Analytic
        },
        ports,
    };
    let curve = run_bell_sweep(&cfg, &sweep)?;
    out_dir(&args.out)?;
    write_bell_csv(&curve, create(&args.out.join("bell.csv"))?)?;
    let opts = FitOptions {
        subtract_accidentals: args.subtract_accidentals,
        selection: if args.central {
            CountSelection::Central
        } else {
            CountSelection::All
        },
        reweight: args.reweight,
        ..FitOptions::default()
    };
    let fit = fit_fringe(&curve, &opts)?;
    let v = fit.violation();
    let summary = json!({
        "mode": cfg.mode,
        "topology": cfg.topology,
        "backend": curve.backend,
        "fit_options": opts,
        "noise_singles_rate_hz": cfg.source.noise_singles_rate_hz,
        "visibility": fit.visibility,
        "visibility_err": fit.visibility_err,
        "offset": fit.offset,
        "offset_err": fit.offset_err,
        "phase_origin_rad": fit.phase_origin,
        "phase_origin_err_rad": fit.phase_origin_err,
        "chi2_per_dof": fit.chi2_per_dof,
        "chsh_s": v.s,
        "chsh_s_err": v.s_err,
        "violation_sigmas": v.sigmas,
        "coincidences": curve.points.iter().map(|p| p.coincidences).sum::<f64>(),
    });
    write_json(&args.out.join("fit.json"), &summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Config(a) => cmd_config(a),
        Command::Jti(a) => cmd_jti(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Correlate(a) => cmd_correlate(a),
        Command::Bell(a) => cmd_bell(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
