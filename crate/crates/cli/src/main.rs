//! `msrl`: train, roll out and inspect magnetic soft robot policies.
//!
//! Every command writes whole files into `--out` and prints a short summary.
//! Failures print one line, `error kind=<kind> message=<text>`, to stderr
//! and exit with status 1 (2 for bad arguments).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use msr_core::analysis::{analyze_gait, validate_static, StaticScenario};
use msr_core::io::{
    export_waveform, format_curve, write_atomic, write_run, ExperimentConfig, Trajectory, WaveformTable,
    WAVEFORM_RATE_HZ,
};
use msr_core::td3::{load_checkpoint, Mlp};
use msr_core::trainer::{accurate_env, rollout, seed_sweep, train, LearningCurve};
use msr_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "msrl", version, about = "Magnetic soft robot locomotion learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one seed through both phases.
    Train(Common),
    /// Train every seed listed in the config and report stability.
    Sweep(Common),
    /// Zero-field rollout of a trained policy at the true density.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Seconds; the configured episode length when omitted.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Roll out a policy and write the coil waveform CSV.
    ExportWaveform {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Relax a static scenario (TOML) and report its deflection.
    ValidateStatic(Common),
    /// Gait tables from a recorded trajectory.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Trajectory JSON written by `rollout`.
        #[arg(long)]
        log: PathBuf,
    },
}

fn load_experiment(path: Option<&Path>) -> Result<ExperimentConfig> {
    let exp = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    exp.validate()?;
    Ok(exp)
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn load_actor(path: &Path, exp: &ExperimentConfig) -> Result<Mlp> {
    let ckpt = load_checkpoint(path)?;
    let hash = exp.hash()?;
    if ckpt.config_hash != hash {
        return Err(Error::Config(format!(
            "checkpoint was trained under config {} but this config hashes to {hash}",
            ckpt.config_hash
        )));
    }
    Ok(ckpt.nets.actor)
}

fn control_steps(exp: &ExperimentConfig, duration: Option<f64>) -> Result<u64> {
    let seconds = duration.unwrap_or(exp.env.episode_seconds);
    if !(seconds >= 0.0 && seconds.is_finite()) {
        return Err(Error::Config(format!("duration must be >= 0, got {seconds}")));
    }
    Ok((seconds * exp.env.action_rate_hz).round() as u64)
}

fn record(exp: &ExperimentConfig, checkpoint: &Path, steps: u64) -> Result<Trajectory> {
    let actor = load_actor(checkpoint, exp)?;
    let mut env = accurate_env(exp)?;
    let mut traj = rollout(&actor, &mut env, steps)?;
    traj.config_hash = exp.hash()?;
    Ok(traj)
}

fn cmd_train(c: &Common) -> Result<()> {
    let exp = load_experiment(c.config.as_deref())?;
    let outcome = train(&exp, c.seed)?;
    let files = write_run(&c.out, &exp, &outcome)?;
    let last = outcome.curve.final_ema().unwrap_or(f64::NAN);
    println!("seed {} final_ema {last:.6} curve {}", c.seed, files.curve.display());
    Ok(())
}

fn cmd_sweep(c: &Common) -> Result<()> {
    let exp = load_experiment(c.config.as_deref())?;
    make_dir(&c.out)?;
    let report = seed_sweep(&exp.train.seeds, exp.train.stability_fraction, |seed| {
        let outcome = train(&exp, seed)?;
        write_run(&c.out.join(format!("seed_{seed}")), &exp, &outcome)?;
        Ok(outcome.curve)
    })?;
    let mut summary = String::from("seed status final_ema\n");
    for s in &report.seeds {
        match &s.outcome {
            Ok(curve) => {
                let status = if s.stable { "stable" } else { "unstable" };
                writeln!(summary, "{} {status} {:.6}", s.seed, curve.final_ema().unwrap_or(f64::NAN)).unwrap();
            }
            Err(e) => writeln!(summary, "{} failed {}", s.seed, e.replace('\n', " ")).unwrap(),
        }
    }
    write_atomic(&c.out.join("sweep.txt"), summary.as_bytes())?;
    let average = LearningCurve { points: report.average.clone() };
    write_atomic(&c.out.join("average_curve.txt"), format_curve(&average, &exp.hash()?).as_bytes())?;
    print!("{summary}");
    println!("stable {} of {}", report.stable_count(), report.seeds.len());
    Ok(())
}

fn cmd_rollout(c: &Common, checkpoint: &Path, duration: Option<f64>) -> Result<()> {
    let exp = load_experiment(c.config.as_deref())?;
    let traj = record(&exp, checkpoint, control_steps(&exp, duration)?)?;
    make_dir(&c.out)?;
    let path = c.out.join("trajectory.json");
    traj.save(&path)?;
    let mid = traj.middle_node;
    let dx = traj.samples.last().unwrap().positions[mid][0] - traj.samples[0].positions[mid][0];
    println!("samples {} displacement_m {dx:.6e} log {}", traj.samples.len(), path.display());
    Ok(())
}

fn cmd_export(c: &Common, checkpoint: &Path, duration: Option<f64>) -> Result<()> {
    let exp = load_experiment(c.config.as_deref())?;
    let seconds = duration.unwrap_or(exp.env.episode_seconds);
    let rows = (seconds * WAVEFORM_RATE_HZ).round() as usize;
    if rows == 0 {
        return Err(Error::Config(format!("duration {seconds} s gives no waveform rows")));
    }
    let traj = record(&exp, checkpoint, rows as u64 - 1)?;
    let table = WaveformTable::from_trajectory(&traj, rows)?;
    make_dir(&c.out)?;
    let path = c.out.join("waveform.csv");
    export_waveform(&path, &table, exp.env.max_field_mt, exp.env.action_limit_mt)?;
    write_atomic(&c.out.join("waveform.hash"), format!("{}\n", traj.config_hash).as_bytes())?;
    println!("rows {rows} waveform {}", path.display());
    Ok(())
}

fn cmd_static(c: &Common) -> Result<()> {
    let sc: StaticScenario = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            StaticScenario::from_toml(&text)?
        }
        None => StaticScenario::default(),
    };
    let report = validate_static(&sc)?;
    make_dir(&c.out)?;
    let mut table = String::from("node x0 y0 x y\n");
    for (i, (p, q)) in report.positions.iter().zip(&report.initial).enumerate() {
        writeln!(table, "{i} {:.9e} {:.9e} {:.9e} {:.9e}", q[0], q[1], p[0], p[1]).unwrap();
    }
    write_atomic(&c.out.join("static.txt"), table.as_bytes())?;
    println!(
        "converged {} time_s {:.4} max_deflection_m {:.6e} relative {:.6e}",
        report.converged,
        report.time,
        report.max_deflection,
        report.relative_deflection(sc.material.length)
    );
    Ok(())
}

fn cmd_analyze(c: &Common, log: &Path) -> Result<()> {
    let traj = Trajectory::load(log)?;
    let gait = analyze_gait(&traj)?;
    make_dir(&c.out)?;
    write_atomic(&c.out.join("gait.txt"), gait.gait_table().as_bytes())?;
    write_atomic(&c.out.join("nodes.txt"), gait.node_table(&traj).as_bytes())?;
    println!("rows {} tables {}", gait.rows.len(), c.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Sweep(c) => cmd_sweep(c),
        Command::Rollout { common, checkpoint, duration } => cmd_rollout(common, checkpoint, *duration),
        Command::ExportWaveform { common, checkpoint, duration } => cmd_export(common, checkpoint, *duration),
        Command::ValidateStatic(c) => cmd_static(c),
        Command::Analyze { common, log } => cmd_analyze(common, log),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error kind=usage message={}", one_line(first));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error kind={} message={}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(1)
        }
    }
}
