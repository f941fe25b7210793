#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};
use toml::Value;

use commands::{Failure, Run};

/// Egocentric point-based demonstration pipeline: synthetic data, object
/// point triangulation, policy training and closed-loop evaluation.
///
/// Any config value can also be set with a flag named after its dotted key,
/// for example `--policy.epochs 300` or `--corpus.episode.tracker.pixel_sigma=2`.
#[derive(Debug, Parser)]
#[command(name = "egopoints", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML config file with one section per subsystem.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Train without 3D augmentation.
    #[arg(long, global = true)]
    no_augment: bool,
    /// Tracker lag factor used for synthetic episodes.
    #[arg(long, global = true)]
    lag: Option<f64>,
    /// Depth penalty used by triangulation.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Replace the head arc by a near-zero baseline.
    #[arg(long, global = true)]
    degenerate_arc: bool,
    /// Input `.egd` corpus (train, triangulate-bench).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Input policy file (rollout).
    #[arg(long, global = true)]
    policy: Option<PathBuf>,
    /// Roll out the scripted oracle instead of a policy file.
    #[arg(long, global = true)]
    oracle: bool,
    /// Exit with status 3 when the configured thresholds are not met.
    #[arg(long, global = true)]
    gate: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate, process and save a synthetic demonstration corpus.
    GenData,
    /// Triangulate synthetic scenes against ground truth.
    TriangulateBench,
    /// Train a policy on a corpus.
    Train,
    /// Evaluate a policy in the point world.
    Rollout,
    /// Fit the affine depth correction on warped depth and report what remains.
    CalibDepth,
}

/// Splits `--a.b value` and `--a.b=value` pairs off the argument list.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, config::Overrides), String> {
    let (mut rest, mut overrides) = (Vec::new(), Vec::new());
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--").filter(|b| b.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        let (key, raw) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => (body.to_string(), it.next().ok_or_else(|| format!("--{body} needs a value"))?),
        };
        overrides.push((key, config::parse_value(&raw)));
    }
    Ok((rest, overrides))
}

fn shorthand(cli: &Cli) -> config::Overrides {
    let mut out = Vec::new();
    let mut both = |key: &str, v: Value| {
        for section in ["corpus.episode", "bench.episode"] {
            out.push((format!("{section}.{key}"), v.clone()));
        }
    };
    if let Some(a) = cli.lag {
        both("tracker.lag_alpha", Value::Float(a));
    }
    if let Some(l) = cli.lambda {
        both("triangulation.depth_lambda", Value::Float(l));
    }
    if cli.degenerate_arc {
        both("arc.degenerate", Value::Boolean(true));
    }
    let path = |p: &PathBuf| Value::String(p.display().to_string());
    if let Some(p) = &cli.corpus {
        out.push(("train.corpus".into(), path(p)));
        out.push(("bench.corpus".into(), path(p)));
    }
    if let Some(p) = &cli.policy {
        out.push(("rollout.policy".into(), path(p)));
    }
    if cli.oracle {
        out.push(("rollout.oracle".into(), Value::Boolean(true)));
    }
    if cli.no_augment {
        out.push(("policy.augment".into(), Value::Boolean(false)));
    }
    out
}

fn run(args: Vec<String>) -> Result<(), Failure> {
    let (args, dotted) = split_overrides(args).map_err(|m| Failure::Usage(anyhow!(m)))?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Help and version go to stdout and are not failures.
            return if e.use_stderr() { Err(Failure::Usage(anyhow!("invalid arguments"))) } else { Ok(()) };
        }
    };

    // Shorthand flags first so that explicit dotted keys win.
    let mut overrides = shorthand(&cli);
    overrides.extend(dotted);
    let mut cfg = config::resolve(cli.config.as_deref(), &overrides).map_err(Failure::Usage)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.policy.seed = s;
    }
    let run = Run { cfg, out: cli.out, gate: cli.gate };
    match cli.command {
        Command::GenData => commands::gen_data(&run),
        Command::TriangulateBench => commands::triangulate_bench(&run),
        Command::Train => commands::train(&run),
        Command::Rollout => commands::rollout(&run),
        Command::CalibDepth => commands::calib_depth(&run),
    }
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
