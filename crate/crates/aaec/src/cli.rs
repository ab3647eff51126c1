//! Command-line front end.
//!
//! Subcommands: `run` (one closed-loop run: per-frame CSV plus its summary),
//! `compare` (the scenario-by-controller benchmark grid: per-run CSVs, a
//! summary CSV, and an aligned table on stdout), `sweep` (exposure-metric
//! landscape samples), and `plot` (run CSVs to SVG figures). Flags override
//! settings-file values, which override built-in defaults. `--out` names a
//! directory; files inside it have deterministic names so repeated
//! invocations are byte-identical.
//!
//! Exit codes: 0 success, 2 usage or settings error, 3 runtime failure.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::camera::{MotionKind, ScenarioKind};
use crate::config::{parse_config, Config};
use crate::controller::ControllerKind;
use crate::error::{Error, Result};
use crate::eval::{summarize, RunSummary};
use crate::report;
use crate::sim::{self, RunResult, RunSpec};

/// 60 simulated seconds at the standard 20 Hz.
const DEFAULT_FRAMES: u32 = 1200;

#[derive(Parser)]
#[command(
    name = "aaec",
    version,
    about = "Adaptive exposure control benchmark: simulate, compare, sweep, plot"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one controller in one scenario; write the per-frame log and
    /// its summary row.
    Run(RunArgs),
    /// Run controllers across the scenario grid and summarize.
    Compare(CompareArgs),
    /// Sample the exposure-metric landscape over the exposure range.
    Sweep(SweepArgs),
    /// Render run CSVs into SVG figures.
    Plot(PlotArgs),
}

fn parse_onoff(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(format!("expected on or off, got '{other}'")),
    }
}

#[derive(Args)]
struct RunArgs {
    /// Lighting scenario: normal, lowlight, adversarial.
    #[arg(long)]
    scenario: Option<String>,
    /// Controller: aaec, aec, gec, default.
    #[arg(long)]
    controller: Option<String>,
    /// Marker motion: static, lateral, jitter.
    #[arg(long)]
    motion: Option<String>,
    /// Number of frames to simulate.
    #[arg(long)]
    frames: Option<u32>,
    /// Base seed for noise and motion streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Initial exposure, ms (default depends on scenario).
    #[arg(long)]
    dt0_ms: Option<f64>,
    /// Sensor noise: on or off.
    #[arg(long, value_parser = parse_onoff)]
    noise: Option<bool>,
    /// Frame rate, Hz.
    #[arg(long)]
    fps: Option<f64>,
    /// Differentiate through the true irradiance field instead of the
    /// inverse-response estimate (analysis mode).
    #[arg(long)]
    ground_truth_deriv: bool,
    /// Settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Directory to dump every captured frame into as PGM.
    #[arg(long)]
    dump_frames: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Controllers to compare (comma separated; at least two).
    #[arg(long, value_delimiter = ',', default_value = "aaec,aec,gec,default")]
    controllers: Vec<String>,
    /// Scenarios to cover (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "normal,lowlight,adversarial")]
    scenarios: Vec<String>,
    /// Frames per run.
    #[arg(long)]
    frames: Option<u32>,
    /// Runs per scenario/controller cell.
    #[arg(long, default_value_t = 3)]
    seeds: u32,
    /// First seed; run i of a cell uses seed-base + i.
    #[arg(long, default_value_t = 1)]
    seed_base: u64,
    /// Marker motion: static, lateral, jitter.
    #[arg(long)]
    motion: Option<String>,
    /// Sensor noise: on or off.
    #[arg(long, value_parser = parse_onoff)]
    noise: Option<bool>,
    /// Settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Restrict to one scenario (default: all three).
    #[arg(long)]
    scenario: Option<String>,
    /// Number of exposure samples, log-spaced over the exposure range
    /// (at least 8).
    #[arg(long, default_value_t = 40)]
    points: usize,
    /// Settings file (for metric shape).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Run CSV files to plot together.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Entry point; returns the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

/// Settings and argument problems exit 2; failures while doing the work
/// exit 3.
fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::ParamOutOfRange { .. }
        | Error::UnknownScenario(_)
        | Error::UnknownController(_)
        | Error::InvalidMarker(_)
        | Error::CsvFormat { .. }
        | Error::TimeOutOfRange { .. } => 2,
        _ => 3,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Plot(args) => cmd_plot(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::io(p.display().to_string(), e))?;
            parse_config(&text)
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn parse_motion(cli: &Option<String>, cfg: &Config) -> Result<MotionKind> {
    match cli {
        Some(s) => MotionKind::parse(s),
        None => Ok(cfg.run.motion.unwrap_or(MotionKind::Static)),
    }
}

fn run_csv_name(result: &RunResult) -> String {
    format!(
        "run_{}_{}_{}_seed{}.csv",
        result.scenario.name(),
        result.controller.name(),
        result.motion.name(),
        result.seed
    )
}

fn build_run_spec(args: &RunArgs, cfg: &Config) -> Result<RunSpec> {
    let scenario = match &args.scenario {
        Some(s) => ScenarioKind::parse(s)?,
        None => cfg.run.scenario.unwrap_or(ScenarioKind::Normal),
    };
    let controller = match &args.controller {
        Some(s) => ControllerKind::parse(s)?,
        None => cfg.run.controller.unwrap_or(ControllerKind::Aaec),
    };
    let frames = args.frames.or(cfg.run.frames).unwrap_or(DEFAULT_FRAMES);
    let seed = args.seed.or(cfg.run.seed).unwrap_or(1);
    let mut spec = RunSpec::new(scenario, controller, frames, seed);
    spec.motion = parse_motion(&args.motion, cfg)?;
    if let Some(dt0) = args.dt0_ms.or(cfg.run.dt0_ms) {
        spec.dt0_ms = dt0;
    }
    spec.noise = args.noise.or(cfg.run.noise).unwrap_or(true);
    spec.fps = args.fps.or(cfg.run.fps).unwrap_or(20.0);
    spec.params = cfg.controller;
    spec.scene = cfg.scene;
    spec.ground_truth_deriv = args.ground_truth_deriv;
    Ok(spec)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let spec = build_run_spec(&args, &cfg)?;
    ensure_dir(&args.out)?;

    let result = match &args.dump_frames {
        None => sim::run(&spec)?,
        Some(dir) => {
            ensure_dir(dir)?;
            let mut dump_err = None;
            let result = sim::run_observed(&spec, |i, frame| {
                if dump_err.is_some() {
                    return;
                }
                let path = dir.join(format!("frame_{i:05}.pgm"));
                if let Err(e) = std::fs::write(&path, frame.image.pgm_bytes()) {
                    dump_err = Some(Error::io(path.display().to_string(), e));
                }
            })?;
            if let Some(e) = dump_err {
                return Err(e);
            }
            result
        }
    };

    let run_path = args.out.join(run_csv_name(&result));
    report::write_run_csv(&run_path, &result)?;
    let summary = summarize(&result);
    let summary_path = args.out.join("summary.csv");
    report::write_summary_csv(&summary_path, std::slice::from_ref(&summary))?;
    println!(
        "{} / {} / motion {} / seed {}: {} frames, detection rate {:.3}, final dt {:.4} ms",
        result.scenario.name(),
        result.controller.name(),
        result.motion.name(),
        result.seed,
        result.records.len(),
        summary.detection_rate,
        summary.dt_final_ms
    );
    println!("wrote {}", run_path.display());
    println!("wrote {}", summary_path.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let motion = parse_motion(&args.motion, &cfg)?;
    let frames = args.frames.or(cfg.run.frames).unwrap_or(DEFAULT_FRAMES);
    if args.seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".to_string()));
    }
    let controllers: Vec<ControllerKind> = args
        .controllers
        .iter()
        .map(|s| ControllerKind::parse(s))
        .collect::<Result<_>>()?;
    if controllers.len() < 2 {
        return Err(Error::Config("compare needs at least two controllers".to_string()));
    }
    let scenarios: Vec<ScenarioKind> = args
        .scenarios
        .iter()
        .map(|s| ScenarioKind::parse(s))
        .collect::<Result<_>>()?;
    if scenarios.is_empty() {
        return Err(Error::Config("compare needs at least one scenario".to_string()));
    }
    ensure_dir(&args.out)?;

    let mut summaries = Vec::new();
    for &scenario in &scenarios {
        for &controller in &controllers {
            for s in 0..args.seeds {
                let mut spec =
                    RunSpec::new(scenario, controller, frames, args.seed_base + s as u64);
                spec.motion = motion;
                spec.params = cfg.controller;
                spec.scene = cfg.scene;
                if let Some(fps) = cfg.run.fps {
                    spec.fps = fps;
                }
                spec.noise = args.noise.or(cfg.run.noise).unwrap_or(true);
                let result = sim::run(&spec)?;
                report::write_run_csv(&args.out.join(run_csv_name(&result)), &result)?;
                summaries.push(summarize(&result));
            }
        }
    }

    let summary_path = args.out.join("summary.csv");
    report::write_summary_csv(&summary_path, &summaries)?;
    print_comparison_table(&summaries, &scenarios, &controllers, args.seeds);
    println!("wrote {}", summary_path.display());
    Ok(())
}

fn mean_opt(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = vals.flatten().filter(|v| v.is_finite()).collect();
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

fn fmt_cell(v: Option<f64>, precision: usize) -> String {
    match v {
        Some(x) => format!("{x:.precision$}"),
        None => "-".to_string(),
    }
}

/// Seed-averaged table, one row per scenario/controller cell.
fn print_comparison_table(
    summaries: &[RunSummary],
    scenarios: &[ScenarioKind],
    controllers: &[ControllerKind],
    seeds: u32,
) {
    println!(
        "{:<12} {:<10} {:>12} {:>9} {:>12} {:>12} {:>9}",
        "scenario", "controller", "cov_det", "det_rate", "traj_dist_m", "max_pair_m", "conv_s"
    );
    for &scenario in scenarios {
        for &controller in controllers {
            let cell: Vec<&RunSummary> = summaries
                .iter()
                .filter(|s| s.scenario == scenario.name() && s.controller == controller.name())
                .collect();
            if cell.is_empty() {
                continue;
            }
            let cov = mean_opt(cell.iter().map(|s| s.cov_det));
            let rate =
                cell.iter().map(|s| s.detection_rate).sum::<f64>() / cell.len() as f64;
            let traj = mean_opt(cell.iter().map(|s| s.traj_dist_m));
            let pair = cell.iter().map(|s| s.max_pairwise_dist_m).sum::<f64>()
                / cell.len() as f64;
            let conv = mean_opt(cell.iter().map(|s| s.conv_seconds));
            println!(
                "{:<12} {:<10} {:>12} {:>9.3} {:>12} {:>12.5} {:>9}",
                scenario.name(),
                controller.name(),
                cov.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".to_string()),
                rate,
                fmt_cell(traj, 5),
                pair,
                fmt_cell(conv, 2),
            );
        }
    }
    println!("(each row averages {seeds} seed(s))");
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    if args.points < 8 {
        return Err(Error::Config("--points must be at least 8".to_string()));
    }
    let scenarios: Vec<ScenarioKind> = match &args.scenario {
        Some(s) => vec![ScenarioKind::parse(s)?],
        None => ScenarioKind::all().to_vec(),
    };
    ensure_dir(&args.out)?;
    let mut sweeps = Vec::new();
    for kind in scenarios {
        let pts = sim::exposure_sweep_with(kind, args.points, &cfg.controller.metric, &cfg.scene)?;
        let best = pts
            .iter()
            .max_by(|a, b| a.m_roi.partial_cmp(&b.m_roi).unwrap())
            .map(|p| p.dt_ms);
        if let Some(dt) = best {
            println!("{}: metric peaks at dt = {:.4} ms", kind.name(), dt);
        }
        sweeps.push((kind.name().to_string(), pts));
    }
    let path = args.out.join("sweep.csv");
    report::write_sweep_csv(&path, &sweeps)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<()> {
    let mut runs = Vec::new();
    for path in &args.runs {
        runs.push(report::read_run_csv(path)?);
    }
    ensure_dir(&args.out)?;
    for path in report::write_plot_svgs(&args.out, &runs)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_run_flags() {
        let cli = Cli::try_parse_from([
            "aaec", "run", "--scenario", "lowlight", "--controller", "gec", "--frames", "12",
            "--seed", "7", "--dt0-ms", "2.5", "--noise", "off", "--out", "x",
        ])
        .unwrap();
        let Command::Run(args) = cli.cmd else { panic!("expected run") };
        let spec = build_run_spec(&args, &Config::default()).unwrap();
        assert_eq!(spec.scenario, ScenarioKind::Lowlight);
        assert_eq!(spec.controller, ControllerKind::Gec);
        assert_eq!(spec.frames, 12);
        assert_eq!(spec.seed, 7);
        assert_eq!(spec.dt0_ms, 2.5);
        assert!(!spec.noise);
    }

    #[test]
    fn run_defaults_follow_scenario() {
        let cli = Cli::try_parse_from(["aaec", "run", "--scenario", "lowlight"]).unwrap();
        let Command::Run(args) = cli.cmd else { panic!("expected run") };
        let spec = build_run_spec(&args, &Config::default()).unwrap();
        assert_eq!(spec.dt0_ms, sim::default_dt0_ms(ScenarioKind::Lowlight));
        assert!(spec.noise);
        assert_eq!(spec.fps, 20.0);
        assert_eq!(spec.frames, DEFAULT_FRAMES);
    }

    #[test]
    fn config_fills_unset_flags_but_flags_win() {
        let cfg = parse_config("[run]\nscenario = adversarial\nframes = 33\nseed = 4\n").unwrap();
        let cli = Cli::try_parse_from(["aaec", "run", "--frames", "11"]).unwrap();
        let Command::Run(args) = cli.cmd else { panic!("expected run") };
        let spec = build_run_spec(&args, &cfg).unwrap();
        assert_eq!(spec.scenario, ScenarioKind::Adversarial);
        assert_eq!(spec.frames, 11);
        assert_eq!(spec.seed, 4);
    }

    #[test]
    fn bad_labels_are_usage_errors() {
        let cli = Cli::try_parse_from(["aaec", "run", "--scenario", "noon"]).unwrap();
        let Command::Run(args) = cli.cmd else { panic!("expected run") };
        let err = build_run_spec(&args, &Config::default()).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        assert!(matches!(err, Error::UnknownScenario(_)));
    }

    #[test]
    fn io_failures_are_runtime_errors() {
        let err = Error::io("nope.csv", std::io::Error::other("x"));
        assert_eq!(exit_code(&err), 3);
    }

    #[test]
    fn unknown_flags_fail_to_parse() {
        assert!(Cli::try_parse_from(["aaec", "run", "--warp-speed", "9"]).is_err());
        assert!(Cli::try_parse_from(["aaec", "explode"]).is_err());
        assert!(Cli::try_parse_from(["aaec", "run", "--noise", "sometimes"]).is_err());
    }

    #[test]
    fn compare_rejects_thin_controller_lists() {
        let cli =
            Cli::try_parse_from(["aaec", "compare", "--controllers", "aaec"]).unwrap();
        let Command::Compare(args) = cli.cmd else { panic!("expected compare") };
        let err = cmd_compare(args).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }
}
