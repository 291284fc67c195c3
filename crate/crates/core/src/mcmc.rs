//! Posterior sampling: pCN for the log-diffusion field at fixed prior, and
//! Metropolis-within-Gibbs over `(theta, tau)` for the hierarchical prior.

use std::io::{BufRead, Write};
use std::sync::Arc;

use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{GraphLaplacian, GraphPrior};
use crate::solver::ForwardModel;

/// Parameter-to-observation map used by the likelihood.
pub trait ForwardMap {
    fn evaluate(&self, theta: &[f64]) -> Result<Vec<f64>>;
}

impl ForwardMap for ForwardModel {
    fn evaluate(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.forward(theta)
    }
}

impl<F> ForwardMap for F
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn evaluate(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self(theta)
    }
}

/// Observation noise covariance `Gamma`.
#[derive(Debug, Clone)]
pub enum NoiseCovariance {
    /// `sigma^2 I`.
    Isotropic { sigma: f64 },
    /// Lower Cholesky factor of a general SPD matrix.
    Dense { factor: Mat<f64> },
}

impl NoiseCovariance {
    pub fn isotropic(sigma: f64) -> Result<Self> {
        if sigma > 0.0 && sigma.is_finite() {
            Ok(Self::Isotropic { sigma })
        } else {
            Err(Error::invalid(format!("noise level must be positive, got {sigma}")))
        }
    }

    pub fn dense(gamma: &Mat<f64>) -> Result<Self> {
        let llt = gamma
            .llt(Side::Lower)
            .map_err(|_| Error::invalid("noise covariance is not symmetric positive definite"))?;
        Ok(Self::Dense {
            factor: llt.L().to_owned(),
        })
    }

    /// `Gamma^{-1/2} r`, with the Cholesky factor for a dense covariance.
    pub fn whiten(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Self::Isotropic { sigma } => r.iter().map(|v| v / sigma).collect(),
            Self::Dense { factor } => {
                // forward substitution L z = r
                let n = r.len();
                let mut z = vec![0.0; n];
                for i in 0..n {
                    let mut acc = r[i];
                    for (j, zj) in z.iter().enumerate().take(i) {
                        acc -= factor[(i, j)] * zj;
                    }
                    z[i] = acc / factor[(i, i)];
                }
                z
            }
        }
    }

    /// `r^T Gamma^{-1} r`.
    pub fn quadratic_form(&self, r: &[f64]) -> f64 {
        self.whiten(r).iter().map(|v| v * v).sum()
    }
}

/// Gaussian likelihood `exp(-1/2 |y - G(theta)|_Gamma^2)`.
pub struct Likelihood<F> {
    y: Vec<f64>,
    noise: NoiseCovariance,
    forward: F,
}

impl<F: ForwardMap> Likelihood<F> {
    pub fn new(y: Vec<f64>, noise: NoiseCovariance, forward: F) -> Result<Self> {
        if let NoiseCovariance::Dense { factor } = &noise {
            if factor.nrows() != y.len() {
                return Err(Error::invalid("noise covariance does not match data length"));
            }
        }
        Ok(Self { y, noise, forward })
    }

    pub fn data(&self) -> &[f64] {
        &self.y
    }

    pub fn noise(&self) -> &NoiseCovariance {
        &self.noise
    }

    pub fn forward_map(&self) -> &F {
        &self.forward
    }

    /// `-1/2 (y - g)^T Gamma^{-1} (y - g)`.
    pub fn log_likelihood(&self, g: &[f64]) -> f64 {
        let r: Vec<f64> = self.y.iter().zip(g).map(|(a, b)| a - b).collect();
        -0.5 * self.noise.quadratic_form(&r)
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<f64> {
        let g = self.forward.evaluate(theta)?;
        if g.len() != self.y.len() {
            return Err(Error::invalid(format!(
                "forward map returned {} values, data has {}",
                g.len(),
                self.y.len()
            )));
        }
        Ok(self.log_likelihood(&g))
    }
}

/// Hyperprior on the length-scale parameter: `N(mean, sd^2)` restricted to
/// `tau > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauHyperprior {
    pub mean: f64,
    pub sd: f64,
}

impl TauHyperprior {
    pub fn log_density(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = (tau - self.mean) / self.sd;
        -0.5 * z * z
    }

    fn validate(&self) -> Result<()> {
        if !(self.sd > 0.0) || !self.mean.is_finite() {
            return Err(Error::Config(format!("invalid tau hyperprior {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    /// pCN step size in (0, 1).
    pub beta: f64,
    /// Random-walk step for tau (hierarchical runs only).
    #[serde(default = "default_tau_step")]
    pub tau_step: f64,
    /// Tune step sizes during burn-in towards 20-35% acceptance.
    #[serde(default = "default_adapt")]
    pub adapt: bool,
    pub seed: u64,
}

fn default_tau_step() -> f64 {
    0.2
}

fn default_adapt() -> bool {
    true
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iters: 200_000,
            burnin: 50_000,
            thin: 10,
            beta: 0.02,
            tau_step: default_tau_step(),
            adapt: true,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters <= self.burnin {
            return Err(Error::Config(format!(
                "iters ({}) must exceed burnin ({})",
                self.iters, self.burnin
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.tau_step > 0.0) || !self.tau_step.is_finite() {
            return Err(Error::Config(format!("tau_step must be positive, got {}", self.tau_step)));
        }
        Ok(())
    }

    pub fn stored_samples(&self) -> usize {
        (self.iters - self.burnin) / self.thin
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub theta: Vec<f64>,
    pub tau: Option<f64>,
    pub loglik: f64,
    /// `<theta, phi_i>`, kept for hierarchical moves.
    pub prior_coeffs: Option<Vec<f64>>,
}

impl ChainState {
    pub fn new<F: ForwardMap>(theta: Vec<f64>, lik: &Likelihood<F>) -> Result<Self> {
        let loglik = lik.evaluate(&theta)?;
        Ok(Self {
            theta,
            tau: None,
            loglik,
            prior_coeffs: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// The forward map failed at the proposal; counted as a rejection.
    Failed,
}

impl StepOutcome {
    pub fn accepted(self) -> bool {
        self == StepOutcome::Accepted
    }
}

/// One pCN move `theta* = sqrt(1 - beta^2) theta + beta xi`, `xi ~ prior`.
/// Only the likelihood ratio enters the acceptance probability.
pub fn pcn_step<F: ForwardMap, R: Rng + ?Sized>(
    state: &mut ChainState,
    beta: f64,
    prior: &GraphPrior,
    lik: &Likelihood<F>,
    rng: &mut R,
) -> StepOutcome {
    let xi = prior.sample(rng);
    let rho = (1.0 - beta * beta).sqrt();
    let proposal: Vec<f64> = state
        .theta
        .iter()
        .zip(&xi)
        .map(|(t, x)| rho * t + beta * x)
        .collect();
    let Ok(loglik) = lik.evaluate(&proposal) else {
        return StepOutcome::Failed;
    };
    let log_u = rng.random::<f64>().ln();
    if log_u < loglik - state.loglik {
        state.theta = proposal;
        state.loglik = loglik;
        if state.prior_coeffs.is_some() {
            state.prior_coeffs = Some(prior.laplacian().project(&state.theta));
        }
        StepOutcome::Accepted
    } else {
        StepOutcome::Rejected
    }
}

/// One random-walk move on `tau` given `theta`. On acceptance `prior` is
/// replaced by the prior at the new `tau`.
pub fn tau_step<R: Rng + ?Sized>(
    state: &mut ChainState,
    step: f64,
    prior: &mut GraphPrior,
    hyper: &TauHyperprior,
    rng: &mut R,
) -> Result<StepOutcome> {
    let current = state.tau.unwrap_or(prior.tau());
    let z: f64 = rng.sample(StandardNormal);
    let proposal = current + step * z;
    if proposal <= 0.0 {
        return Ok(StepOutcome::Rejected);
    }
    let coeffs = match &state.prior_coeffs {
        Some(c) => c.clone(),
        None => {
            let c = prior.laplacian().project(&state.theta);
            state.prior_coeffs = Some(c.clone());
            c
        }
    };
    let candidate = prior.with_tau(proposal)?;
    let log_a = tau_log_acceptance(
        candidate.h_from_coeffs(&coeffs),
        prior.h_from_coeffs(&coeffs),
        hyper.log_density(proposal) - hyper.log_density(current),
    );
    let log_u = rng.random::<f64>().ln();
    if log_u < log_a {
        state.tau = Some(proposal);
        *prior = candidate;
        Ok(StepOutcome::Accepted)
    } else {
        Ok(StepOutcome::Rejected)
    }
}

/// `log a = -1/2 [H(tau*) - H(tau)] + log pi0(tau*) - log pi0(tau)`, with the
/// `H` difference clipped to `[-700, 700]`.
pub fn tau_log_acceptance(h_proposal: f64, h_current: f64, log_prior_ratio: f64) -> f64 {
    let dh = (h_proposal - h_current).clamp(-700.0, 700.0);
    (-0.5 * dh + log_prior_ratio).min(0.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
    pub failed: u64,
}

impl MoveStats {
    fn record(&mut self, outcome: StepOutcome) {
        self.proposed += 1;
        match outcome {
            StepOutcome::Accepted => self.accepted += 1,
            StepOutcome::Failed => self.failed += 1,
            StepOutcome::Rejected => {}
        }
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Step size after a burn-in adaptation window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneRecord {
    pub iteration: usize,
    pub parameter: TunedParameter,
    pub window_rate: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunedParameter {
    Beta,
    TauStep,
}

const ADAPT_WINDOW: usize = 100;
const TARGET_LO: f64 = 0.20;
const TARGET_HI: f64 = 0.35;

struct Adapter {
    param: TunedParameter,
    window: MoveStats,
}

impl Adapter {
    fn new(param: TunedParameter) -> Self {
        Self {
            param,
            window: MoveStats::default(),
        }
    }

    /// Updates `value` at the end of each window; returns a record when it fires.
    fn observe(&mut self, iteration: usize, outcome: StepOutcome, value: &mut f64) -> Option<TuneRecord> {
        self.window.record(outcome);
        if self.window.proposed < ADAPT_WINDOW as u64 {
            return None;
        }
        let rate = self.window.rate();
        self.window = MoveStats::default();
        let factor = if rate < TARGET_LO {
            0.7
        } else if rate > TARGET_HI {
            1.3
        } else {
            1.0
        };
        *value *= factor;
        if self.param == TunedParameter::Beta {
            *value = value.clamp(1e-6, 0.99);
        }
        Some(TuneRecord {
            iteration,
            parameter: self.param,
            window_rate: rate,
            value: *value,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub iteration: usize,
    pub loglik: f64,
    pub tau: Option<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainTrace {
    pub samples: Vec<Sample>,
    /// Post-burn-in statistics of the theta move.
    pub theta_moves: MoveStats,
    /// Post-burn-in statistics of the tau move, for hierarchical runs.
    pub tau_moves: Option<MoveStats>,
    pub burnin_theta_moves: MoveStats,
    pub tuning: Vec<TuneRecord>,
    pub beta: f64,
    pub tau_step: Option<f64>,
    pub seed: u64,
}

impl ChainTrace {
    fn new(config: &SamplerConfig, hierarchical: bool) -> Self {
        Self {
            samples: Vec::with_capacity(config.stored_samples()),
            theta_moves: MoveStats::default(),
            tau_moves: hierarchical.then(MoveStats::default),
            burnin_theta_moves: MoveStats::default(),
            tuning: Vec::new(),
            beta: config.beta,
            tau_step: hierarchical.then_some(config.tau_step),
            seed: config.seed,
        }
    }

    pub fn tau_samples(&self) -> Vec<f64> {
        self.samples.iter().filter_map(|s| s.tau).collect()
    }

    /// `iteration,loglik,tau,theta_1,...,theta_n`, one row per stored sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let n = self.samples.first().map_or(0, |s| s.theta.len());
        write!(out, "iteration,loglik,tau")?;
        for i in 1..=n {
            write!(out, ",theta_{i}")?;
        }
        writeln!(out)?;
        for s in &self.samples {
            write!(out, "{},{:e}", s.iteration, s.loglik)?;
            match s.tau {
                Some(t) => write!(out, ",{t:e}")?,
                None => write!(out, ",")?,
            }
            for v in &s.theta {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Reads the samples back from [`ChainTrace::write_csv`] output.
pub fn read_trace_csv<R: BufRead>(input: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    let bad = |row: usize, message: String| Error::Parse {
        path: "trace.csv".into(),
        row,
        message,
    };
    for (row, line) in input.lines().enumerate() {
        let line = line.map_err(|e| bad(row + 1, e.to_string()))?;
        if row == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(bad(row + 1, "too few fields".into()));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(row + 1, e.to_string()));
        let iteration = fields[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| bad(row + 1, e.to_string()))?;
        let loglik = num(fields[1])?;
        let tau = match fields[2].trim() {
            "" => None,
            t => Some(num(t)?),
        };
        let theta = fields[3..].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
        out.push(Sample {
            iteration,
            loglik,
            tau,
            theta,
        });
    }
    Ok(out)
}

fn should_store(it: usize, config: &SamplerConfig) -> bool {
    it >= config.burnin && (it - config.burnin + 1) % config.thin == 0
}

/// Runs pCN from `theta0` (or a prior draw when `None`).
pub fn run_pcn<F: ForwardMap>(
    config: &SamplerConfig,
    prior: &GraphPrior,
    lik: &Likelihood<F>,
    theta0: Option<Vec<f64>>,
) -> Result<ChainTrace> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let theta0 = theta0.unwrap_or_else(|| prior.sample(&mut rng));
    let mut state = ChainState::new(theta0, lik)?;
    let mut trace = ChainTrace::new(config, false);
    let mut beta = config.beta;
    let mut adapter = Adapter::new(TunedParameter::Beta);
    for it in 0..config.iters {
        let outcome = pcn_step(&mut state, beta, prior, lik, &mut rng);
        if it < config.burnin {
            trace.burnin_theta_moves.record(outcome);
            if config.adapt {
                trace.tuning.extend(adapter.observe(it, outcome, &mut beta));
            }
        } else {
            trace.theta_moves.record(outcome);
        }
        if should_store(it, config) {
            trace.samples.push(Sample {
                iteration: it,
                loglik: state.loglik,
                tau: None,
                theta: state.theta.clone(),
            });
        }
    }
    trace.beta = beta;
    Ok(trace)
}

/// Starting point of a hierarchical chain.
#[derive(Debug, Clone)]
pub struct GibbsInit {
    pub theta: Option<Vec<f64>>,
    pub tau: f64,
}

/// Alternates a pCN move on `theta | tau, y` and a random-walk move on
/// `tau | theta`.
pub fn run_gibbs<F: ForwardMap>(
    config: &SamplerConfig,
    laplacian: Arc<GraphLaplacian>,
    smoothness: f64,
    hyper: &TauHyperprior,
    lik: &Likelihood<F>,
    init: GibbsInit,
) -> Result<ChainTrace> {
    config.validate()?;
    hyper.validate()?;
    if !(init.tau > 0.0) {
        return Err(Error::Config(format!("initial tau must be positive, got {}", init.tau)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut prior = GraphPrior::new(laplacian, init.tau, smoothness)?;
    let theta0 = init.theta.unwrap_or_else(|| prior.sample(&mut rng));
    let mut state = ChainState::new(theta0, lik)?;
    state.tau = Some(init.tau);
    state.prior_coeffs = Some(prior.laplacian().project(&state.theta));

    let mut trace = ChainTrace::new(config, true);
    let mut tau_moves = MoveStats::default();
    let (mut beta, mut step) = (config.beta, config.tau_step);
    let mut beta_adapter = Adapter::new(TunedParameter::Beta);
    let mut tau_adapter = Adapter::new(TunedParameter::TauStep);
    for it in 0..config.iters {
        let theta_outcome = pcn_step(&mut state, beta, &prior, lik, &mut rng);
        let tau_outcome = tau_step(&mut state, step, &mut prior, hyper, &mut rng)?;
        if it < config.burnin {
            trace.burnin_theta_moves.record(theta_outcome);
            if config.adapt {
                trace.tuning.extend(beta_adapter.observe(it, theta_outcome, &mut beta));
                trace.tuning.extend(tau_adapter.observe(it, tau_outcome, &mut step));
            }
        } else {
            trace.theta_moves.record(theta_outcome);
            tau_moves.record(tau_outcome);
        }
        if should_store(it, config) {
            trace.samples.push(Sample {
                iteration: it,
                loglik: state.loglik,
                tau: state.tau,
                theta: state.theta.clone(),
            });
        }
    }
    trace.tau_moves = Some(tau_moves);
    trace.beta = beta;
    trace.tau_step = Some(step);
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Exp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    /// Population standard deviation over stored samples.
    pub std: Vec<f64>,
    pub q025: Vec<f64>,
    pub q975: Vec<f64>,
}

/// Quantile of sorted data by linear interpolation between order statistics
/// at position `(len - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise mean, std and 2.5%/97.5% quantiles of the transformed samples.
pub fn posterior_summary(samples: &[Sample], transform: Transform) -> Result<PosteriorSummary> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("cannot summarize an empty trace"))?;
    let n = first.theta.len();
    let m = samples.len() as f64;
    let apply = |v: f64| match transform {
        Transform::Identity => v,
        Transform::Exp => v.exp(),
    };
    let mut out = PosteriorSummary {
        mean: vec![0.0; n],
        std: vec![0.0; n],
        q025: vec![0.0; n],
        q975: vec![0.0; n],
    };
    let mut column = vec![0.0; samples.len()];
    for i in 0..n {
        for (c, s) in column.iter_mut().zip(samples) {
            *c = apply(s.theta[i]);
        }
        let mean = column.iter().sum::<f64>() / m;
        let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        column.sort_by(|a, b| a.total_cmp(b));
        out.mean[i] = mean;
        out.std[i] = var.sqrt();
        out.q025[i] = quantile_sorted(&column, 0.025);
        out.q975[i] = quantile_sorted(&column, 0.975);
    }
    Ok(out)
}
