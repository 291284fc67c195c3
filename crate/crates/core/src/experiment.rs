//! End-to-end runs: cloud, truth, operator, data, prior, sampler, summary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ChainStart, CloudConfig, ExperimentConfig, TruthConfig};
use crate::error::{Error, Result};
use crate::kernel::{bandwidth_diagnostic, default_eps_grid, BandwidthDiagnostic, KernelGeometry};
use crate::map::{map_estimate, MapSettings};
use crate::mcmc::{
    posterior_summary, read_trace_csv, run_gibbs, run_pcn, ChainTrace, GibbsInit, Likelihood, MoveStats,
    NoiseCovariance, PosteriorSummary, Sample, Transform,
};
use crate::pointcloud::{
    generate_ellipse, generate_lumpy_surface, generate_torus, load_pointcloud, pairwise_sq_dists, subsample,
    PointCloud,
};
use crate::prior::{GraphLaplacian, GraphPrior};
use crate::seed::{derive_seed, stage_rng};
use crate::solver::{ForwardModel, ObservationMap, SolverKind};
use crate::truth::{
    add_noise, ellipse_truth, exp_cos_truth, graph_prior_truth, relative_error, relative_noise_level,
    torus_truth, SyntheticTruth, TruthMeta,
};

/// Seeds handed to each stage, all derived from the root seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub root: u64,
    pub cloud: u64,
    pub subsample: u64,
    pub truth: u64,
    pub noise: u64,
    pub chains: Vec<u64>,
}

impl StageSeeds {
    pub fn new(root: u64, chains: usize) -> Self {
        Self {
            root,
            cloud: derive_seed(root, "cloud"),
            subsample: derive_seed(root, "subsample"),
            truth: derive_seed(root, "truth"),
            noise: derive_seed(root, "noise"),
            chains: (0..chains).map(|i| derive_seed(root, &format!("chain/{i}"))).collect(),
        }
    }
}

/// The working cloud, plus the full cloud it was drawn from when subsampled.
#[derive(Debug, Clone)]
pub struct CloudStage {
    pub working: PointCloud,
    pub full: Option<(PointCloud, Vec<usize>)>,
}

pub fn build_cloud(cfg: &ExperimentConfig) -> Result<CloudStage> {
    let split = |full: PointCloud, m: Option<usize>| -> Result<CloudStage> {
        match m {
            Some(m) if m < full.n() => {
                let (working, idx) = subsample(&full, m, &mut stage_rng(cfg.seed, "subsample"))?;
                Ok(CloudStage {
                    working,
                    full: Some((full, idx)),
                })
            }
            _ => Ok(CloudStage { working: full, full: None }),
        }
    };
    match &cfg.cloud {
        CloudConfig::Ellipse { n, a } => split(generate_ellipse(*n, *a)?, None),
        CloudConfig::Torus { n1, n2 } => split(generate_torus(*n1, *n2)?, None),
        CloudConfig::File {
            path,
            dim,
            intrinsic_dim,
            subsample,
        } => split(load_pointcloud(path, *dim, *intrinsic_dim)?, *subsample),
        CloudConfig::LumpySurface { n, subsample } => split(
            generate_lumpy_surface(*n, &mut stage_rng(cfg.seed, "cloud"))?,
            *subsample,
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonSource {
    Config,
    Tuned,
}

/// Bandwidth from the config, or the start of the linear regime of the
/// kernel-sum diagnostic on the working cloud.
pub fn choose_epsilon(
    cfg: &ExperimentConfig,
    cloud: &PointCloud,
    sq_dists: &faer::Mat<f64>,
) -> Result<(f64, EpsilonSource, Option<BandwidthDiagnostic>)> {
    match cfg.operator.epsilon {
        Some(eps) => Ok((eps, EpsilonSource::Config, None)),
        None => {
            let diag = tune_bandwidth(sq_dists, cfg.operator.grid_points)?;
            Ok((diag.linear_onset(cloud.intrinsic_dim()), EpsilonSource::Tuned, Some(diag)))
        }
    }
}

pub fn tune_bandwidth(sq_dists: &faer::Mat<f64>, grid_points: usize) -> Result<BandwidthDiagnostic> {
    bandwidth_diagnostic(sq_dists, &default_eps_grid(sq_dists, grid_points))
}

/// Everything up to, but not including, the sampler.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: ExperimentConfig,
    pub seeds: StageSeeds,
    pub cloud: CloudStage,
    pub truth: SyntheticTruth,
    pub epsilon: f64,
    pub epsilon_source: EpsilonSource,
    pub geometry: Arc<KernelGeometry>,
    pub observation: ObservationMap,
    pub sigma: f64,
    pub data: Vec<f64>,
    pub laplacian: Arc<GraphLaplacian>,
}

impl Setup {
    pub fn n(&self) -> usize {
        self.cloud.working.n()
    }

    pub fn forward_model(&self, solver: SolverKind) -> Result<ForwardModel> {
        ForwardModel::new(
            self.geometry.clone(),
            self.truth.f.clone(),
            self.observation.clone(),
            solver,
        )
    }

    pub fn likelihood(&self) -> Result<Likelihood<ForwardModel>> {
        Likelihood::new(
            self.data.clone(),
            NoiseCovariance::isotropic(self.sigma)?,
            self.forward_model(self.config.operator.chain_solver)?,
        )
    }
}

/// Builds cloud, truth, operator geometry, noisy data and the prior's graph.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Setup> {
    let cfg = cfg.clone();
    cfg.validate()?;
    let seeds = StageSeeds::new(cfg.seed, cfg.sampler.chains);
    let cloud = build_cloud(&cfg).map_err(|e| e.at("cloud"))?;
    let working = &cloud.working;
    let sq = pairwise_sq_dists(working);
    let (epsilon, epsilon_source, _) = choose_epsilon(&cfg, working, &sq).map_err(|e| e.at("operator"))?;
    let geometry =
        Arc::new(KernelGeometry::new(&sq, epsilon, working.intrinsic_dim()).map_err(|e| e.at("operator"))?);

    let truth = match &cfg.truth {
        TruthConfig::Ellipse => ellipse_truth(working),
        TruthConfig::Torus => torus_truth(working),
        TruthConfig::ExpCos {
            frequency,
            amplitude,
            refine,
        } => exp_cos_truth(working, *frequency, *amplitude, *refine),
        TruthConfig::GraphPrior { tau, s, k, u_scale } => {
            let (full, idx) = match &cloud.full {
                Some((full, idx)) => (full, idx.clone()),
                None => (working, (0..working.n()).collect()),
            };
            let laplacian = Arc::new(GraphLaplacian::self_tuning(full, *k)?);
            graph_prior_truth(
                full,
                laplacian,
                *tau,
                *s,
                *u_scale,
                epsilon,
                &geometry,
                &idx,
                &mut stage_rng(cfg.seed, "truth"),
            )
            .map(|t| t.working)
        }
    }
    .map_err(|e| e.at("truth"))?;

    let n = working.n();
    let observation = match cfg.observations.count {
        Some(j) => ObservationMap::strided(j, n),
        None => ObservationMap::strided(n, n),
    }
    .map_err(|e| e.at("data"))?;
    let sigma = match (cfg.observations.sigma, cfg.observations.noise_fraction) {
        (Some(s), _) => s,
        (None, Some(frac)) => frac * norm(&truth.u_true) / (n as f64).sqrt(),
        (None, None) => unreachable!("validated"),
    };
    let clean = observation
        .observe(&truth.u_true, geometry.density())
        .map_err(|e| e.at("data"))?;
    let data = add_noise(&clean, sigma, &mut stage_rng(cfg.seed, "noise")).map_err(|e| e.at("data"))?;

    let laplacian = Arc::new(GraphLaplacian::self_tuning(working, cfg.prior.k).map_err(|e| e.at("prior"))?);
    Ok(Setup {
        config: cfg,
        seeds,
        cloud,
        truth,
        epsilon,
        epsilon_source,
        geometry,
        observation,
        sigma,
        data,
        laplacian,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solve with the true coefficient and compare with the true solution.
#[derive(Debug, Clone, Serialize)]
pub struct ForwardCheck {
    pub u: Vec<f64>,
    /// Percent.
    pub error: f64,
    pub residual: f64,
    pub discarded: f64,
}

pub fn forward_check(setup: &Setup) -> Result<ForwardCheck> {
    let model = setup.forward_model(setup.config.operator.solver)?;
    let res = model.solve_kappa(&setup.truth.kappa_true).map_err(|e| e.at("forward"))?;
    Ok(ForwardCheck {
        error: relative_error(&res.u, &setup.truth.u_true)?,
        u: res.u,
        residual: res.residual,
        discarded: res.discarded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// pCN with fixed prior hyperparameters.
    Fixed,
    /// Metropolis-within-Gibbs over `(theta, tau)`.
    Hierarchical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub seed: u64,
    pub samples: usize,
    pub theta_acceptance: f64,
    pub theta_moves: MoveStats,
    pub tau_acceptance: Option<f64>,
    pub tau_moves: Option<MoveStats>,
    pub final_beta: f64,
    pub final_tau_step: Option<f64>,
}

impl ChainReport {
    fn from_trace(trace: &ChainTrace) -> Self {
        Self {
            seed: trace.seed,
            samples: trace.samples.len(),
            theta_acceptance: trace.theta_moves.rate(),
            theta_moves: trace.theta_moves,
            tau_acceptance: trace.tau_moves.map(|m| m.rate()),
            tau_moves: trace.tau_moves,
            final_beta: trace.beta,
            final_tau_step: trace.tau_step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Errors are percentages `100 ||a - b|| / ||b||`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub mode: RunMode,
    pub n: usize,
    pub observations: usize,
    pub epsilon: f64,
    pub epsilon_source: EpsilonSource,
    pub sigma: f64,
    pub relative_noise_level: f64,
    /// Posterior mean of `kappa` against the truth.
    pub kappa_error: f64,
    /// Posterior mean of `u` against the truth.
    pub u_error: f64,
    /// Solution at the posterior-mean `kappa` against the truth.
    pub u_at_mean_kappa_error: f64,
    /// Solution at the true `kappa` against the true `u`.
    pub forward_error: f64,
    pub rhs_discarded: f64,
    pub theta_acceptance: f64,
    pub tau_acceptance: Option<f64>,
    pub tau_posterior: Option<TauSummary>,
    pub chains: Vec<ChainReport>,
    pub seeds: StageSeeds,
    pub bounding_box: BoundingBox,
    pub truth: TruthMeta,
    /// Effective configuration, defaults included.
    pub config: Value,
}

/// Per-node posterior statistics.
#[derive(Debug, Clone)]
pub struct NodeSummary {
    pub kappa: PosteriorSummary,
    pub u: PosteriorSummary,
    pub u_at_mean_kappa: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub summary: NodeSummary,
    pub traces: Vec<ChainTrace>,
}

/// Runs every configured chain on a prepared setup.
pub fn run_chains(setup: &Setup, mode: RunMode) -> Result<Vec<ChainTrace>> {
    let cfg = &setup.config;
    let lik = setup.likelihood().map_err(|e| e.at("sampler"))?;
    let n = setup.n();
    let map_start = match cfg.sampler.start {
        ChainStart::Map => {
            let prior = GraphPrior::new(setup.laplacian.clone(), cfg.prior.tau, cfg.prior.s)?;
            let est = map_estimate(&prior, &lik, &vec![0.0; n], &MapSettings::default()).map_err(|e| e.at("map"))?;
            Some(est.theta)
        }
        _ => None,
    };
    let start = || match cfg.sampler.start {
        ChainStart::Prior => None,
        ChainStart::Zero => Some(vec![0.0; n]),
        ChainStart::Map => map_start.clone(),
    };
    let mut traces = Vec::with_capacity(setup.seeds.chains.len());
    for &seed in &setup.seeds.chains {
        let sampler = cfg.sampler.with_seed(seed);
        let trace = match mode {
            RunMode::Fixed => {
                let prior = GraphPrior::new(setup.laplacian.clone(), cfg.prior.tau, cfg.prior.s)?;
                run_pcn(&sampler, &prior, &lik, start())
            }
            RunMode::Hierarchical => {
                let hyper = cfg
                    .prior
                    .hyperprior
                    .ok_or_else(|| Error::Config("hierarchical runs need prior.hyperprior".into()))?;
                run_gibbs(
                    &sampler,
                    setup.laplacian.clone(),
                    cfg.prior.s,
                    &hyper,
                    &lik,
                    GibbsInit {
                        theta: start(),
                        tau: cfg.prior.tau,
                    },
                )
            }
        }
        .map_err(|e| e.at("sampler"))?;
        traces.push(trace);
    }
    Ok(traces)
}

/// Pools the stored samples of all chains into per-node summaries and a
/// report.
pub fn summarize(setup: &Setup, mode: RunMode, chains: Vec<ChainReport>, samples: &[Sample]) -> Result<(RunReport, NodeSummary)> {
    let cfg = &setup.config;
    let kappa = posterior_summary(samples, Transform::Exp).map_err(|e| e.at("summary"))?;
    let model = setup
        .forward_model(cfg.operator.chain_solver)
        .map_err(|e| e.at("summary"))?;
    let mut u_samples = Vec::with_capacity(samples.len());
    for s in samples {
        let u = model.solve_theta(&s.theta).map_err(|e| e.at("summary"))?.u;
        u_samples.push(Sample {
            iteration: s.iteration,
            loglik: s.loglik,
            tau: s.tau,
            theta: u,
        });
    }
    let u = posterior_summary(&u_samples, Transform::Identity).map_err(|e| e.at("summary"))?;
    let u_at_mean_kappa = setup
        .forward_model(cfg.operator.solver)?
        .solve_kappa(&kappa.mean)
        .map_err(|e| e.at("summary"))?
        .u;
    let check = forward_check(setup)?;
    let tau_posterior = (mode == RunMode::Hierarchical).then(|| {
        let mut taus: Vec<f64> = samples.iter().filter_map(|s| s.tau).collect();
        taus.sort_by(f64::total_cmp);
        let mean = taus.iter().sum::<f64>() / taus.len() as f64;
        TauSummary {
            mean,
            q025: crate::mcmc::quantile_sorted(&taus, 0.025),
            q975: crate::mcmc::quantile_sorted(&taus, 0.975),
            min: taus[0],
            max: taus[taus.len() - 1],
        }
    });
    let pooled = |f: fn(&ChainReport) -> Option<MoveStats>| -> Option<f64> {
        let stats: Vec<MoveStats> = chains.iter().filter_map(f).collect();
        if stats.is_empty() {
            return None;
        }
        let proposed: u64 = stats.iter().map(|m| m.proposed).sum();
        let accepted: u64 = stats.iter().map(|m| m.accepted).sum();
        Some(if proposed == 0 { 0.0 } else { accepted as f64 / proposed as f64 })
    };
    let (lo, hi) = setup.cloud.working.bounding_box();
    let report = RunReport {
        name: cfg.name.clone(),
        mode,
        n: setup.n(),
        observations: setup.observation.len(),
        epsilon: setup.epsilon,
        epsilon_source: setup.epsilon_source,
        sigma: setup.sigma,
        relative_noise_level: relative_noise_level(setup.sigma, &setup.truth.u_true),
        kappa_error: relative_error(&kappa.mean, &setup.truth.kappa_true)?,
        u_error: relative_error(&u.mean, &setup.truth.u_true)?,
        u_at_mean_kappa_error: relative_error(&u_at_mean_kappa, &setup.truth.u_true)?,
        forward_error: check.error,
        rhs_discarded: check.discarded,
        theta_acceptance: pooled(|c| Some(c.theta_moves)).unwrap_or(0.0),
        tau_acceptance: pooled(|c| c.tau_moves),
        tau_posterior,
        chains,
        seeds: setup.seeds.clone(),
        bounding_box: BoundingBox { min: lo, max: hi },
        truth: setup.truth.meta.clone(),
        config: cfg.to_value(),
    };
    Ok((
        report,
        NodeSummary {
            kappa,
            u,
            u_at_mean_kappa,
        },
    ))
}

/// Full pipeline without touching the file system.
pub fn run_experiment(cfg: &ExperimentConfig, mode: RunMode) -> Result<RunOutcome> {
    let setup = prepare(cfg)?;
    run_prepared(&setup, mode)
}

pub fn run_prepared(setup: &Setup, mode: RunMode) -> Result<RunOutcome> {
    let traces = run_chains(setup, mode)?;
    let chains: Vec<ChainReport> = traces.iter().map(ChainReport::from_trace).collect();
    let pooled: Vec<Sample> = traces.iter().flat_map(|t| t.samples.iter().cloned()).collect();
    let (report, summary) = summarize(setup, mode, chains, &pooled)?;
    Ok(RunOutcome {
        report,
        summary,
        traces,
    })
}

/// `trace.csv` for the first chain, `trace_<i>.csv` for the rest.
pub fn trace_file_name(chain: usize) -> String {
    if chain == 0 {
        "trace.csv".into()
    } else {
        format!("trace_{chain}.csv")
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `report.json`, `summary.csv` and, when enabled, the traces.
pub fn write_outputs(dir: &Path, setup: &Setup, outcome: &RunOutcome) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    let mut written = Vec::new();
    let report_path = dir.join("report.json");
    write_report(&report_path, &outcome.report)?;
    written.push(report_path);
    let summary_path = dir.join("summary.csv");
    let mut out = create(&summary_path)?;
    write_summary_csv(&mut out, setup, &outcome.summary).map_err(io_at(&summary_path))?;
    out.flush().map_err(io_at(&summary_path))?;
    written.push(summary_path);
    if setup.config.output.trace {
        for (i, trace) in outcome.traces.iter().enumerate() {
            let path = dir.join(trace_file_name(i));
            let mut out = create(&path)?;
            trace.write_csv(&mut out).map_err(io_at(&path))?;
            out.flush().map_err(io_at(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, report).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    writeln!(out).map_err(io_at(path))?;
    out.flush().map_err(io_at(path))
}

/// `node,<params>,kappa_true,kappa_mean,kappa_q025,kappa_q975,u_true,u_mean,u_q025,u_q975`.
pub fn write_summary_csv<W: Write>(out: &mut W, setup: &Setup, summary: &NodeSummary) -> std::io::Result<()> {
    let cloud = &setup.cloud.working;
    let n_params = cloud.params().map_or(0, |p| p.ncols());
    write!(out, "node")?;
    for k in 1..=n_params {
        write!(out, ",omega_{k}")?;
    }
    writeln!(out, ",kappa_true,kappa_mean,kappa_q025,kappa_q975,u_true,u_mean,u_q025,u_q975")?;
    let (k, u, t) = (&summary.kappa, &summary.u, &setup.truth);
    for i in 0..cloud.n() {
        write!(out, "{i}")?;
        if let Some(p) = cloud.param(i) {
            for v in p {
                write!(out, ",{v:e}")?;
            }
        }
        writeln!(
            out,
            ",{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            t.kappa_true[i], k.mean[i], k.q025[i], k.q975[i], t.u_true[i], u.mean[i], u.q025[i], u.q975[i]
        )?;
    }
    Ok(())
}

/// Rebuilds the summary and report of a finished run from its directory:
/// the effective config echoed in `report.json` and the trace files.
pub fn rebuild_report(dir: &Path) -> Result<(Setup, RunOutcome)> {
    let report_path = dir.join("report.json");
    let file = File::open(&report_path).map_err(io_at(&report_path))?;
    let old: RunReport = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::Config(format!("{}: {e}", report_path.display())))?;
    let cfg = ExperimentConfig::from_value(old.config.clone())?;
    let setup = prepare(&cfg)?;
    let mut samples = Vec::new();
    let mut traces = Vec::new();
    for i in 0..old.chains.len() {
        let path = dir.join(trace_file_name(i));
        let file = File::open(&path).map_err(io_at(&path))?;
        let chain_samples = read_trace_csv(BufReader::new(file)).map_err(|e| match e {
            Error::Parse { row, message, .. } => Error::Parse {
                path: path.clone(),
                row,
                message,
            },
            other => other,
        })?;
        samples.extend(chain_samples.iter().cloned());
        traces.push(chain_samples);
    }
    let (report, summary) = summarize(&setup, old.mode, old.chains.clone(), &samples)?;
    let traces = old
        .chains
        .iter()
        .zip(traces)
        .map(|(c, s)| ChainTrace {
            samples: s,
            theta_moves: c.theta_moves,
            tau_moves: c.tau_moves,
            burnin_theta_moves: MoveStats::default(),
            tuning: Vec::new(),
            beta: c.final_beta,
            tau_step: c.final_tau_step,
            seed: c.seed,
        })
        .collect();
    Ok((
        setup,
        RunOutcome {
            report,
            summary,
            traces,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn small_ellipse() -> ExperimentConfig {
        ExperimentConfig::from_value(json!({
            "seed": 3,
            "cloud": {"kind": "ellipse", "n": 40, "a": 3.0},
            "truth": {"kind": "ellipse"},
            "operator": {"epsilon": 0.02},
            "observations": {"sigma": 0.05, "count": 20},
            "prior": {"k": 2, "tau": 0.05, "s": 4.0},
            "sampler": {"iters": 600, "burnin": 200, "thin": 10}
        }))
        .unwrap()
    }

    #[test]
    fn stage_seeds_differ() {
        let s = StageSeeds::new(1, 2);
        let all = [s.cloud, s.subsample, s.truth, s.noise, s.chains[0], s.chains[1]];
        for i in 0..all.len() {
            for j in 0..i {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn prepare_builds_consistent_stages() {
        let setup = prepare(&small_ellipse()).unwrap();
        assert_eq!(setup.n(), 40);
        assert_eq!(setup.observation.len(), 20);
        assert_eq!(setup.data.len(), 20);
        assert_eq!(setup.epsilon_source, EpsilonSource::Config);
        let again = prepare(&small_ellipse()).unwrap();
        assert_eq!(setup.data, again.data);
    }

    #[test]
    fn run_is_deterministic_and_reports_are_finite() {
        let cfg = small_ellipse();
        let a = run_experiment(&cfg, RunMode::Fixed).unwrap();
        let b = run_experiment(&cfg, RunMode::Fixed).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.traces[0].samples, b.traces[0].samples);
        let r = &a.report;
        for v in [r.kappa_error, r.u_error, r.relative_noise_level, r.forward_error] {
            assert!(v.is_finite() && v >= 0.0);
        }
        assert_eq!(r.chains[0].samples, 40);
    }

    #[test]
    fn hierarchical_requires_hyperprior() {
        let err = run_experiment(&small_ellipse(), RunMode::Hierarchical).unwrap_err();
        assert!(err.is_validation(), "{err}");
    }

    #[test]
    fn outputs_round_trip_through_rebuild() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_ellipse();
        let setup = prepare(&cfg).unwrap();
        let outcome = run_prepared(&setup, RunMode::Fixed).unwrap();
        let files = write_outputs(dir.path(), &setup, &outcome).unwrap();
        assert_eq!(files.len(), 3);
        let (_, rebuilt) = rebuild_report(dir.path()).unwrap();
        assert!((rebuilt.report.kappa_error - outcome.report.kappa_error).abs() < 1e-12);
        assert!((rebuilt.report.u_error - outcome.report.u_error).abs() < 1e-12);
    }

    #[test]
    fn tuned_epsilon_is_recorded() {
        let mut cfg = small_ellipse();
        cfg.operator.epsilon = None;
        let setup = prepare(&cfg).unwrap();
        assert_eq!(setup.epsilon_source, EpsilonSource::Tuned);
        assert!(setup.epsilon > 0.0);
    }
}
