//! `lanekeep` command line: offline synthesis, closed-loop simulation,
//! invariance validation and batch metrics.
//!
//! Exit codes: 0 success, 1 infeasible or violated, 2 usage or I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lanekeep::config::Config;
use lanekeep::sim::{compute_metrics, write_csv_file, Metrics, Simulator};
use lanekeep::synthesis::{load_artifact, save_artifact, synthesize, validate_invariance, Artifact, SynthesisOptions};
use lanekeep::tube_mpc::DeltaMode;
use lanekeep::Error;

#[derive(Parser)]
#[command(name = "lanekeep", version, about = "Tube-based LPV MPC for lane keeping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suppress the summary on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Design the gains and invariant set and write the artifact.
    Synthesize {
        #[command(flatten)]
        config: ConfigArg,
        /// Artifact path to write.
        #[arg(long)]
        out: PathBuf,
        /// Monte-Carlo invariance samples checked before writing; 0 skips.
        #[arg(long, default_value_t = 1000)]
        check: usize,
    },
    /// Run the closed-loop scenario and write the CSV log.
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        artifact: PathBuf,
        /// CSV log path; omitted means metrics only.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Monte-Carlo check that the stored set is robustly invariant.
    Validate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        artifact: PathBuf,
        /// Number of sampled states.
        #[arg(short = 'n', long = "samples", default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run many seeds in parallel and summarize their metrics.
    Metrics {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        artifact: PathBuf,
        /// Number of consecutive seeds, starting at the configured one.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// JSON file with the per-seed metrics.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct ConfigArg {
    /// Scenario TOML; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    delta_mode: Option<DeltaModeArg>,
    /// Width of the scheduling tube.
    #[arg(long)]
    delta_unc: Option<f64>,
    #[arg(long, value_enum)]
    tighten_w: Option<Switch>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeltaModeArg {
    Relative,
    Additive,
    Speed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Failure with its exit code.
enum Failure {
    /// Exit 1.
    Rejected(String),
    /// Exit 2.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Csv(_) | Error::Config(_) | Error::Artifact(_) | Error::HashMismatch { .. } => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Rejected(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(arg: &ConfigArg) -> Result<Config, Failure> {
    match &arg.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Failure::Usage(format!("config file not found: {}", path.display())));
            }
            Ok(Config::load(path)?)
        }
        None => Ok(Config::default()),
    }
}

fn apply(cfg: &mut Config, o: &Overrides) -> Result<(), Failure> {
    if let Some(seed) = o.seed {
        cfg.scenario.seed = seed;
    }
    if let Some(steps) = o.steps {
        cfg.scenario.steps = steps;
    }
    if let Some(mode) = o.delta_mode {
        cfg.mpc.delta_mode = match mode {
            DeltaModeArg::Relative => DeltaMode::Relative,
            DeltaModeArg::Additive => DeltaMode::Additive,
            DeltaModeArg::Speed => DeltaMode::Speed,
        };
    }
    if let Some(d) = o.delta_unc {
        cfg.mpc.delta_unc = d;
    }
    if let Some(t) = o.tighten_w {
        cfg.mpc.tighten_w = matches!(t, Switch::On);
    }
    cfg.validate()?;
    Ok(())
}

/// Fails early if `path` could not be created.
fn check_writable(path: &Path) -> Result<(), Failure> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if parent.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("output directory does not exist: {}", parent.display())))
    }
}

fn load_matching(path: &Path, cfg: &Config) -> Result<Artifact, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!("artifact not found: {}", path.display())));
    }
    let hash = cfg.lateral_model()?.hash();
    Ok(load_artifact(path, Some(&hash))?)
}

fn clean(m: &Metrics) -> bool {
    m.infeasible_steps == 0 && m.violations() == 0
}

fn cmd_synthesize(cfg: &Config, out: &Path, check: usize, quiet: bool) -> Outcome {
    check_writable(out)?;
    let model = cfg.lateral_model()?;
    let (q, r) = cfg.synthesis_weights();
    let opts = SynthesisOptions {
        rpi_max_iter: cfg.mpc.rpi_max_iter,
        validation_samples: check,
        seed: cfg.scenario.seed,
    };
    let res = synthesize(&model, &q, &r, &opts)?;
    if let Some(rep) = res.validation.as_ref().filter(|r| !r.passed()) {
        return Err(Failure::Rejected(format!(
            "invariance check failed: {} of {} successors outside S (worst margin {:e}); artifact not written",
            rep.violations, rep.n_checks, rep.worst_margin
        )));
    }
    save_artifact(out, &res.artifact)?;
    if !quiet {
        let meta = &res.artifact.metadata;
        println!(
            "wrote {}: {} vertices, {} facets, LMI margin {:.3e}, set iterations {}",
            out.display(),
            meta.n_vertices,
            meta.n_facets,
            meta.lmi_feasibility_margin,
            res.artifact.rpi.iterations_used
        );
        if let Some(rep) = &res.validation {
            println!("invariance check: {} samples, worst margin {:.3e}", rep.n_samples, rep.worst_margin);
        }
    }
    Ok(())
}

fn cmd_simulate(cfg: &Config, artifact: &Path, out: Option<&Path>, quiet: bool) -> Outcome {
    if let Some(out) = out {
        check_writable(out)?;
    }
    let art = load_matching(artifact, cfg)?;
    let log = Simulator::new(cfg, &art)?.run(cfg.scenario.seed)?;
    if let Some(out) = out {
        write_csv_file(&log, out)?;
    }
    let m = compute_metrics(&log, cfg)?;
    if !quiet {
        println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
    }
    if clean(&m) {
        Ok(())
    } else {
        Err(Failure::Rejected(format!(
            "{} infeasible steps, {} constraint violations",
            m.infeasible_steps,
            m.violations()
        )))
    }
}

fn cmd_validate(cfg: &Config, artifact: &Path, n: usize, seed: u64, quiet: bool) -> Outcome {
    let art = load_matching(artifact, cfg)?;
    let model = cfg.lateral_model()?;
    let rep = validate_invariance(&art.rpi, &model, &art.gains, n, seed)?;
    if !quiet {
        println!(
            "{} samples, {} checks, {} violations, worst margin {:e}",
            rep.n_samples, rep.n_checks, rep.violations, rep.worst_margin
        );
    }
    if rep.passed() {
        Ok(())
    } else {
        let first = &rep.counterexamples[0];
        Err(Failure::Rejected(format!(
            "S is not invariant: x = {:?}, p = {}, margin {:e}",
            first.x.as_slice(),
            first.p,
            first.violation
        )))
    }
}

fn cmd_metrics(cfg: &Config, artifact: &Path, seeds: u64, out: Option<&Path>, quiet: bool) -> Outcome {
    if let Some(out) = out {
        check_writable(out)?;
    }
    let art = load_matching(artifact, cfg)?;
    let sim = Simulator::new(cfg, &art)?;
    let ids: Vec<u64> = (0..seeds).map(|i| cfg.scenario.seed + i).collect();
    let mut rows = Vec::with_capacity(ids.len());
    for (seed, log) in ids.iter().zip(sim.run_batch(&ids)) {
        rows.push((*seed, compute_metrics(&log?, cfg)?));
    }
    let bad: Vec<u64> = rows.iter().filter(|(_, m)| !clean(m)).map(|(s, _)| *s).collect();
    if let Some(out) = out {
        let json: Vec<_> = rows
            .iter()
            .map(|(seed, m)| serde_json::json!({ "seed": seed, "metrics": m }))
            .collect();
        let text = serde_json::to_string_pretty(&json).expect("metrics serialize");
        std::fs::write(out, text).map_err(|e| Failure::Usage(format!("{}: {e}", out.display())))?;
    }
    if !quiet {
        let worst_ey = rows.iter().map(|(_, m)| m.max_abs_e_y).fold(0.0, f64::max);
        let centering: Vec<f64> = rows.iter().filter_map(|(_, m)| m.centering_time).collect();
        println!(
            "{} seeds: {} with infeasible steps or violations, max |e_y| {:.3}, centered in {} runs (latest {:.1} s)",
            rows.len(),
            bad.len(),
            worst_ey,
            centering.len(),
            centering.iter().copied().fold(0.0, f64::max)
        );
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Failure::Rejected(format!("seeds with infeasible steps or violations: {bad:?}")))
    }
}

fn run(cli: Cli) -> Outcome {
    let quiet = cli.quiet;
    match cli.command {
        Command::Synthesize { config, out, check } => cmd_synthesize(&load_config(&config)?, &out, check, quiet),
        Command::Simulate {
            config,
            artifact,
            out,
            overrides,
        } => {
            let mut cfg = load_config(&config)?;
            apply(&mut cfg, &overrides)?;
            cmd_simulate(&cfg, &artifact, out.as_deref(), quiet)
        }
        Command::Validate {
            config,
            artifact,
            n,
            seed,
        } => cmd_validate(&load_config(&config)?, &artifact, n, seed, quiet),
        Command::Metrics {
            config,
            artifact,
            seeds,
            out,
            overrides,
        } => {
            let mut cfg = load_config(&config)?;
            apply(&mut cfg, &overrides)?;
            cmd_metrics(&cfg, &artifact, seeds, out.as_deref(), quiet)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors by itself.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Rejected(msg)) => {
            eprintln!("lanekeep: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("lanekeep: {msg}");
            ExitCode::from(2)
        }
    }
}
