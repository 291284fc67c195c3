use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use manifold_bayes::config::ExperimentConfig;
use manifold_bayes::experiment::{
    build_cloud, forward_check, prepare, rebuild_report, run_prepared, tune_bandwidth, write_outputs, RunMode,
    RunOutcome,
};
use manifold_bayes::pointcloud::{pairwise_sq_dists, write_pointcloud};
use manifold_bayes::{Error, RunReport};

/// Bayesian recovery of a diffusion coefficient on a point cloud.
#[derive(Parser)]
#[command(name = "mbayes", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the working point cloud and print it as CSV.
    Generate(Common),
    /// Print the kernel-sum table (epsilon,T,slope) as CSV.
    TuneEps(Common),
    /// Solve with the true coefficient and print u against the truth as CSV.
    Forward(Common),
    /// Sample the log-diffusion with fixed prior hyperparameters.
    Sample(Common),
    /// Sample the log-diffusion jointly with the prior length scale.
    Hierarchical(Common),
    /// Recompute summary.csv and report.json from a finished run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Dotted key override, e.g. `sampler.iters=1000`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Root seed for every random stage.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of independent chains.
    #[arg(long)]
    chains: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding report.json and the trace files.
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> manifold_bayes::Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(chains) = self.chains {
            overrides.push(format!("sampler.chains={chains}"));
        }
        if let Some(out) = &self.out {
            overrides.push(format!("output.dir={}", serde_json::Value::from(out.to_string_lossy())));
        }
        ExperimentConfig::load(&self.config, &overrides)
    }
}

enum Failure {
    Lib(Error),
    Io(io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
        Err(Failure::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(Failure::Io(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    match command {
        Command::Generate(args) => generate(&args.load()?, &mut out)?,
        Command::TuneEps(args) => tune_eps(&args.load()?, &mut out)?,
        Command::Forward(args) => forward(&args.load()?, &mut out)?,
        Command::Sample(args) => sample(&args.load()?, RunMode::Fixed, &mut out)?,
        Command::Hierarchical(args) => sample(&args.load()?, RunMode::Hierarchical, &mut out)?,
        Command::Report(args) => report(&args.out, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn generate(cfg: &ExperimentConfig, out: &mut impl Write) -> Result<(), Failure> {
    let stage = build_cloud(cfg).map_err(|e| e.at("cloud"))?;
    let pc = &stage.working;
    let (lo, hi) = pc.bounding_box();
    eprintln!("points: {} (ambient {}, intrinsic {})", pc.n(), pc.ambient_dim(), pc.intrinsic_dim());
    if let Some((full, _)) = &stage.full {
        eprintln!("subsampled from {} points", full.n());
    }
    eprintln!("bounding box: {lo:?} to {hi:?}");
    if let Some(r) = pc.embedding_residual() {
        eprintln!("embedding residual: {r:e}");
    }
    write_pointcloud(pc, out)?;
    Ok(())
}

fn tune_eps(cfg: &ExperimentConfig, out: &mut impl Write) -> Result<(), Failure> {
    let stage = build_cloud(cfg).map_err(|e| e.at("cloud"))?;
    let sq = pairwise_sq_dists(&stage.working);
    let diag = tune_bandwidth(&sq, cfg.operator.grid_points).map_err(|e| e.at("operator"))?;
    writeln!(out, "epsilon,T,slope")?;
    for s in &diag.samples {
        writeln!(out, "{:e},{:e},{:e}", s.epsilon, s.total, s.slope)?;
    }
    eprintln!("steepest slope at epsilon = {:e}", diag.suggested);
    eprintln!(
        "linear regime starts at epsilon = {:e} (used when operator.epsilon is unset)",
        diag.linear_onset(stage.working.intrinsic_dim())
    );
    Ok(())
}

fn forward(cfg: &ExperimentConfig, out: &mut impl Write) -> Result<(), Failure> {
    let setup = prepare(cfg)?;
    let check = forward_check(&setup)?;
    eprintln!("epsilon: {:e} ({:?})", setup.epsilon, setup.epsilon_source);
    eprintln!("relative error against the true solution: {:.4}%", check.error);
    eprintln!("residual: {:e}, discarded rhs: {:e}", check.residual, check.discarded);
    writeln!(out, "node,u_true,u")?;
    for (i, (t, u)) in setup.truth.u_true.iter().zip(&check.u).enumerate() {
        writeln!(out, "{i},{t:e},{u:e}")?;
    }
    Ok(())
}

fn sample(cfg: &ExperimentConfig, mode: RunMode, out: &mut impl Write) -> Result<(), Failure> {
    let start = Instant::now();
    let setup = prepare(cfg)?;
    eprintln!(
        "prepared n = {}, epsilon = {:e}, sigma = {:e} in {:.2?}",
        setup.n(),
        setup.epsilon,
        setup.sigma,
        start.elapsed()
    );
    let sampling = Instant::now();
    let outcome = run_prepared(&setup, mode)?;
    eprintln!("sampled {} chain(s) in {:.2?}", outcome.traces.len(), sampling.elapsed());
    let dir = Path::new(&cfg.output.dir);
    for path in write_outputs(dir, &setup, &outcome)? {
        eprintln!("wrote {}", path.display());
    }
    print_headline(&outcome.report, out)?;
    Ok(())
}

fn report(dir: &Path, out: &mut impl Write) -> Result<(), Failure> {
    let (setup, outcome) = rebuild_report(dir)?;
    // Traces are inputs here; only the report and summary are rewritten.
    let outcome = RunOutcome {
        traces: Vec::new(),
        ..outcome
    };
    for path in write_outputs(dir, &setup, &outcome)? {
        eprintln!("wrote {}", path.display());
    }
    print_headline(&outcome.report, out)?;
    Ok(())
}

fn print_headline(r: &RunReport, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "metric,value")?;
    writeln!(out, "kappa_error,{:e}", r.kappa_error)?;
    writeln!(out, "u_error,{:e}", r.u_error)?;
    writeln!(out, "relative_noise_level,{:e}", r.relative_noise_level)?;
    writeln!(out, "forward_error,{:e}", r.forward_error)?;
    writeln!(out, "theta_acceptance,{:e}", r.theta_acceptance)?;
    if let Some(a) = r.tau_acceptance {
        writeln!(out, "tau_acceptance,{a:e}")?;
    }
    if let Some(t) = &r.tau_posterior {
        writeln!(out, "tau_mean,{:e}", t.mean)?;
    }
    Ok(())
}
