mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use dephasing_core::analysis::{blp_measure, fit_consecutive, FitResult, TraceDistanceTrajectory};
use dephasing_core::channel::PureTwoQubitState;
use dephasing_core::schedule::{trajectory, write_family_csv, PlateSchedule, ARM_MAX};
use dephasing_core::synthlab::synth_experiment;
use serde::Serialize;

use config::{ConfigError, Overrides, Run, RunConfig};

#[derive(Parser)]
#[command(name = "dephasing", version, about = "Nonlocal dephasing of photon polarization pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noiseless trace-distance trajectory of the ψ± pair along one schedule.
    Simulate(RunArgs),
    /// Two-stage fit of (A, B, K) to a consecutive-schedule trajectory CSV.
    Fit {
        input: PathBuf,
        /// Path difference where the second arm starts.
        #[arg(long, default_value_t = ARM_MAX)]
        split: f64,
        /// Where to write the fit JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One trajectory per plate offset, in long format, plus N per offset.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated offsets; overrides `offsets` in the config.
        #[arg(long, value_delimiter = ',')]
        offsets: Option<Vec<f64>>,
    },
    /// Photon-counting replica of a measurement followed by the two-stage fit.
    Synth(RunArgs),
    /// Non-Markovianity of an existing trajectory CSV.
    Nonmarkov { input: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    offset: Option<f64>,
}

impl RunArgs {
    fn resolve(&self) -> Result<Run, ConfigError> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => return Err(ConfigError("--config is required".into())),
        };
        let ov = Overrides { seed: self.seed, step: self.step, offset: self.offset, out: self.out.clone() };
        Run::resolve(cfg, ov)
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    offset: f64,
    points: usize,
    n: f64,
    final_d: f64,
}

fn bell_trajectory(run: &Run, sched: &PlateSchedule) -> Result<TraceDistanceTrajectory> {
    let (p, m) = (PureTwoQubitState::bell_plus(), PureTwoQubitState::bell_minus());
    Ok(trajectory(&run.env, sched, run.step, (&p, &m))?.scaled(run.a))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_trajectory(path: &Path) -> Result<TraceDistanceTrajectory> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TraceDistanceTrajectory::read_csv(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}")?;
            w.flush()?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn simulate(args: &RunArgs) -> Result<()> {
    let run = args.resolve()?;
    let out = run.output(&run.outputs.trajectory, "trajectory")?;
    let traj = bell_trajectory(&run, &run.schedule)?;
    traj.write_csv(create(&out)?)?;
    let summary = SimulateSummary {
        offset: run.schedule.offset(),
        points: traj.len(),
        n: blp_measure(&traj)?,
        final_d: traj.points().last().map_or(f64::NAN, |p| p.d),
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn describe_k(fit: &FitResult) -> String {
    match (fit.k, fit.k_stderr) {
        (Some(k), Some(se)) => format!("K = {k:.6} ± {se:.2e}"),
        (Some(k), None) => format!("K = {k:.6}"),
        (None, _) => "K undetermined (degenerate fit)".into(),
    }
}

fn fit(input: &Path, split: f64, out: Option<&Path>) -> Result<()> {
    let data = read_trajectory(input)?;
    let fit = fit_consecutive(&data, split)?;
    if fit.degenerate {
        anyhow::bail!("degenerate fit: {} shows no decay, K is not identifiable", input.display());
    }
    write_json(out, &fit.to_json())?;
    if out.is_some() {
        println!("{}", describe_k(&fit));
    } else {
        eprintln!("{}", describe_k(&fit));
    }
    Ok(())
}

fn sweep(args: &RunArgs, offsets: Option<&[f64]>) -> Result<()> {
    let mut run = args.resolve()?;
    if let Some(o) = offsets {
        if let Some(bad) = o.iter().find(|o| !(0.0..=ARM_MAX).contains(*o)) {
            return Err(ConfigError(format!("--offsets: {bad} outside [0, {ARM_MAX}]")).into());
        }
        run.offsets = o.to_vec();
    }
    let out = run.output(&run.outputs.family, "family")?;
    let family = run
        .offsets
        .iter()
        .map(|&o| Ok((o, bell_trajectory(&run, &PlateSchedule::new(o)?)?)))
        .collect::<Result<Vec<_>>>()?;
    write_family_csv(create(&out)?, &family)?;
    println!("offset\tN\tD_final");
    for (o, traj) in &family {
        println!("{o}\t{:.6}\t{:.6e}", blp_measure(traj)?, traj.points().last().map_or(f64::NAN, |p| p.d));
    }
    Ok(())
}

fn synth(args: &RunArgs) -> Result<()> {
    let run = args.resolve()?;
    let Some((plan, points)) = &run.counting else {
        return Err(ConfigError("synth needs a `counting` section".into()).into());
    };
    let out = run.output(&run.outputs.noisy, "noisy")?;
    if run.schedule.offset() != ARM_MAX {
        eprintln!("note: the fit assumes the consecutive schedule, but offset = {}", run.schedule.offset());
    }
    let data = synth_experiment(&run.env, &run.schedule, points, *plan, run.seed)?;
    data.write_csv(create(&out)?)?;
    let fit = fit_consecutive(&data, ARM_MAX)?;
    if let Some(p) = &run.outputs.fit {
        write_json(Some(p), &fit.to_json())?;
    }
    println!("{}", serde_json::to_string(&fit.to_json())?);
    eprintln!("{}", describe_k(&fit));
    Ok(())
}

fn nonmarkov(input: &Path) -> Result<()> {
    let traj = read_trajectory(input)?;
    println!("{}", serde_json::json!({ "points": traj.len(), "n": blp_measure(&traj)? }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit { input, split, out } => fit(input, *split, out.as_deref()),
        Command::Sweep { run, offsets } => sweep(run, offsets.as_deref()),
        Command::Synth(a) => synth(a),
        Command::Nonmarkov { input } => nonmarkov(input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ConfigError>() => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
