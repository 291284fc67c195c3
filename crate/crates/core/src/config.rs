//! Experiment configuration: a JSON document with sections `cloud`,
//! `truth`, `operator`, `observations`, `prior`, `sampler` and `output`.
//! Unknown keys are rejected; omitted fields take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::mcmc::{SamplerConfig, TauHyperprior};
use crate::solver::SolverKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Root seed; every stage seed is derived from it.
    #[serde(default)]
    pub seed: u64,
    pub cloud: CloudConfig,
    pub truth: TruthConfig,
    #[serde(default)]
    pub operator: OperatorConfig,
    pub observations: ObservationConfig,
    pub prior: PriorConfig,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CloudConfig {
    /// Uniform parameter grid on the ellipse `(cos w, a sin w)`.
    Ellipse { n: usize, a: f64 },
    /// `n1 x n2` parameter grid on the torus with radii 2 and 1.
    Torus { n1: usize, n2: usize },
    /// Points read from a delimited text file.
    File {
        path: PathBuf,
        dim: usize,
        intrinsic_dim: usize,
        #[serde(default)]
        subsample: Option<usize>,
    },
    /// Random samples of a closed lumpy surface.
    LumpySurface {
        n: usize,
        #[serde(default)]
        subsample: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthConfig {
    /// `kappa = 2 + cos w`, `u = cos w`.
    Ellipse,
    /// `kappa = 2 + sin w1 sin w2`, `u = sin w1 sin w2`.
    Torus,
    /// `kappa = exp(cos(frequency w))` with forcing `amplitude sin w`.
    ExpCos {
        frequency: f64,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_refine")]
        refine: usize,
    },
    /// `log kappa` drawn from a graph prior on the full cloud and
    /// `u = u_scale (phi_2 - c)`.
    GraphPrior {
        tau: f64,
        s: f64,
        k: usize,
        #[serde(default = "default_u_scale")]
        u_scale: f64,
    },
}

fn default_amplitude() -> f64 {
    0.2
}

fn default_refine() -> usize {
    4
}

fn default_u_scale() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    /// Kernel bandwidth; tuned from the cloud when absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Solver for one-off forward solves.
    #[serde(default)]
    pub solver: SolverKind,
    /// Solver used inside the chain.
    #[serde(default = "default_chain_solver")]
    pub chain_solver: SolverKind,
}

fn default_grid_points() -> usize {
    40
}

fn default_chain_solver() -> SolverKind {
    SolverKind::Cholesky
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            grid_points: default_grid_points(),
            solver: SolverKind::default(),
            chain_solver: default_chain_solver(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    /// Number of evenly strided observation sites; all nodes when absent.
    #[serde(default)]
    pub count: Option<usize>,
    /// Noise standard deviation.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Alternative to `sigma`: `sigma = noise_fraction ||u|| / sqrt(n)`.
    #[serde(default)]
    pub noise_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Nearest-neighbour index for the self-tuning bandwidths.
    pub k: usize,
    /// Length-scale parameter; the starting value in hierarchical runs.
    pub tau: f64,
    pub s: f64,
    /// Hyperprior on `tau`, required for hierarchical runs.
    #[serde(default)]
    pub hyperprior: Option<TauHyperprior>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChainStart {
    /// A draw from the prior.
    Prior,
    /// The prior mean `theta = 0`, i.e. `kappa = 1`.
    Zero,
    /// The posterior mode, found once from `theta = 0` and shared by all
    /// chains.
    #[default]
    Map,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "defaults::iters")]
    pub iters: usize,
    #[serde(default = "defaults::burnin")]
    pub burnin: usize,
    #[serde(default = "defaults::thin")]
    pub thin: usize,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::tau_step")]
    pub tau_step: f64,
    #[serde(default = "defaults::adapt")]
    pub adapt: bool,
    #[serde(default)]
    pub start: ChainStart,
    #[serde(default = "defaults::chains")]
    pub chains: usize,
}

mod defaults {
    use crate::mcmc::SamplerConfig;

    pub fn iters() -> usize {
        SamplerConfig::default().iters
    }
    pub fn burnin() -> usize {
        SamplerConfig::default().burnin
    }
    pub fn thin() -> usize {
        SamplerConfig::default().thin
    }
    pub fn beta() -> f64 {
        SamplerConfig::default().beta
    }
    pub fn tau_step() -> f64 {
        SamplerConfig::default().tau_step
    }
    pub fn adapt() -> bool {
        SamplerConfig::default().adapt
    }
    pub fn chains() -> usize {
        1
    }
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        Self {
            iters: d.iters,
            burnin: d.burnin,
            thin: d.thin,
            beta: d.beta,
            tau_step: d.tau_step,
            adapt: d.adapt,
            start: ChainStart::Map,
            chains: 1,
        }
    }
}

impl SamplerSection {
    pub fn with_seed(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            iters: self.iters,
            burnin: self.burnin,
            thin: self.thin,
            beta: self.beta,
            tau_step: self.tau_step,
            adapt: self.adapt,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// Write per-chain trace files.
    #[serde(default = "default_true")]
    pub trace: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            trace: true,
        }
    }
}

/// An omitted burn-in is a quarter of the iterations.
fn fill_burnin(value: &mut Value) {
    let Some(doc) = value.as_object_mut() else {
        return;
    };
    let sampler = doc.entry("sampler").or_insert_with(|| Value::Object(Default::default()));
    if let Some(section) = sampler.as_object_mut() {
        if !section.contains_key("burnin") {
            let iters = section
                .get("iters")
                .and_then(Value::as_u64)
                .unwrap_or(defaults::iters() as u64);
            section.insert("burnin".into(), (iters / 4).into());
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config, applies `key=value` overrides, and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        apply_overrides(&mut value, overrides)?;
        Self::from_value(value).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_value(mut value: Value) -> Result<Self> {
        fill_burnin(&mut value);
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The effective configuration with every default filled in.
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match &self.cloud {
            CloudConfig::Ellipse { n, a } => {
                if *n < 2 || !(*a > 0.0) {
                    return bad(format!("ellipse needs n >= 2 and a > 0, got n={n}, a={a}"));
                }
            }
            CloudConfig::Torus { n1, n2 } => {
                if *n1 < 2 || *n2 < 2 {
                    return bad(format!("torus needs n1, n2 >= 2, got {n1}x{n2}"));
                }
            }
            CloudConfig::File { dim, intrinsic_dim, .. } => {
                if *intrinsic_dim == 0 || intrinsic_dim > dim {
                    return bad(format!("need 1 <= intrinsic_dim <= dim, got {intrinsic_dim} and {dim}"));
                }
            }
            CloudConfig::LumpySurface { n, subsample } => {
                if *n < 2 || subsample.is_some_and(|m| m < 2 || m > *n) {
                    return bad(format!("lumpy surface needs n >= 2 and 2 <= subsample <= n, got {n}, {subsample:?}"));
                }
            }
        }
        match (&self.truth, &self.cloud) {
            (TruthConfig::Ellipse | TruthConfig::ExpCos { .. }, CloudConfig::Ellipse { .. })
            | (TruthConfig::Torus, CloudConfig::Torus { .. })
            | (TruthConfig::GraphPrior { .. }, CloudConfig::File { .. } | CloudConfig::LumpySurface { .. }) => {}
            (truth, cloud) => {
                return bad(format!(
                    "truth '{}' is not available on cloud '{}'",
                    variant_name(truth),
                    variant_name(cloud)
                ))
            }
        }
        if let TruthConfig::ExpCos { refine, amplitude, .. } = &self.truth {
            if *refine == 0 || !amplitude.is_finite() {
                return bad("exp_cos truth needs refine >= 1 and a finite amplitude".into());
            }
        }
        if let TruthConfig::GraphPrior { tau, s, k, .. } = &self.truth {
            if !(*tau > 0.0) || !(*s > 0.0) || *k == 0 {
                return bad(format!("graph-prior truth needs tau, s > 0 and k >= 1, got {tau}, {s}, {k}"));
            }
        }
        if let Some(eps) = self.operator.epsilon {
            if !(eps > 0.0) || !eps.is_finite() {
                return bad(format!("operator.epsilon must be positive, got {eps}"));
            }
        }
        if self.operator.grid_points < 3 {
            return bad("operator.grid_points must be at least 3".into());
        }
        match (self.observations.sigma, self.observations.noise_fraction) {
            (Some(s), None) if s >= 0.0 && s.is_finite() => {}
            (None, Some(f)) if f >= 0.0 && f.is_finite() => {}
            (None, None) => return bad("observations need sigma or noise_fraction".into()),
            (Some(_), Some(_)) => return bad("give only one of observations.sigma and observations.noise_fraction".into()),
            _ => return bad("observation noise must be nonnegative".into()),
        }
        if self.observations.count == Some(0) {
            return bad("observations.count must be positive".into());
        }
        let p = &self.prior;
        if p.k == 0 || !(p.tau > 0.0) || !(p.s > 0.0) {
            return bad(format!("prior needs k >= 1 and tau, s > 0, got k={}, tau={}, s={}", p.k, p.tau, p.s));
        }
        if self.sampler.chains == 0 {
            return bad("sampler.chains must be at least 1".into());
        }
        self.sampler.with_seed(0).validate()
    }
}

fn variant_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.get("kind").and_then(Value::as_str).map(str::to_owned))
        .unwrap_or_else(|| "?".into())
}

/// Applies `dotted.path=value` assignments. Values are parsed as JSON when
/// possible and taken as strings otherwise. Missing intermediate objects
/// are created; whether the final key is allowed is decided when the
/// document is deserialized.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{item}' is not of the form key=value")))?;
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::Config(format!("override key '{path}' is malformed")));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
        let mut node = &mut *doc;
        for key in &keys[..keys.len() - 1] {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("override '{path}': '{key}' is not inside a section")))?;
            node = obj
                .entry(key.to_string())
                .or_insert_with(|| Value::Object(Default::default()));
            if node.is_null() {
                *node = Value::Object(Default::default());
            }
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override '{path}' does not name a field")))?;
        obj.insert(keys[keys.len() - 1].to_string(), value);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ellipse_doc() -> Value {
        json!({
            "cloud": {"kind": "ellipse", "n": 400, "a": 3.0},
            "truth": {"kind": "ellipse"},
            "observations": {"sigma": 0.01},
            "prior": {"k": 2, "tau": 0.05, "s": 4.0}
        })
    }

    #[test]
    fn defaults_are_filled() {
        let cfg = ExperimentConfig::from_value(ellipse_doc()).unwrap();
        assert_eq!(cfg.sampler.iters, 200_000);
        assert_eq!(cfg.sampler.burnin, 50_000);
        assert_eq!(cfg.sampler.start, ChainStart::Map);
        assert_eq!(cfg.operator.solver, SolverKind::Pinv);
        assert_eq!(cfg.operator.chain_solver, SolverKind::Cholesky);
        assert_eq!(cfg.output.dir, PathBuf::from("out"));
        let echo = cfg.to_value();
        assert_eq!(echo["sampler"]["thin"], json!(10));
        assert_eq!(ExperimentConfig::from_value(echo).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let mut doc = ellipse_doc();
        apply_overrides(
            &mut doc,
            &["sampler.iters=1000".into(), "sampler.burnin=100".into(), "name=run-a".into()],
        )
        .unwrap();
        let cfg = ExperimentConfig::from_value(doc).unwrap();
        assert_eq!(cfg.sampler.iters, 1000);
        assert_eq!(cfg.name, "run-a");
        assert_eq!(cfg.sampler.burnin, 100);

        let mut doc = ellipse_doc();
        apply_overrides(&mut doc, &["sampler.iters=1000".into()]).unwrap();
        assert_eq!(ExperimentConfig::from_value(doc).unwrap().sampler.burnin, 250);

        let mut doc = ellipse_doc();
        apply_overrides(&mut doc, &["sampler.itres=5".into()]).unwrap();
        let err = ExperimentConfig::from_value(doc).unwrap_err();
        assert!(err.to_string().contains("itres"), "{err}");

        let mut doc = ellipse_doc();
        apply_overrides(&mut doc, &["cloud.radius=5".into()]).unwrap();
        assert!(ExperimentConfig::from_value(doc).is_err());

        let mut doc = ellipse_doc();
        assert!(apply_overrides(&mut doc, &["noequals".into()]).is_err());
        assert!(apply_overrides(&mut doc, &["cloud.n.x=1".into()]).is_err());
    }

    #[test]
    fn nested_optional_sections_can_be_overridden() {
        let mut doc = ellipse_doc();
        apply_overrides(&mut doc, &["prior.hyperprior.mean=2".into(), "prior.hyperprior.sd=1".into()]).unwrap();
        let cfg = ExperimentConfig::from_value(doc).unwrap();
        assert_eq!(cfg.prior.hyperprior, Some(TauHyperprior { mean: 2.0, sd: 1.0 }));
    }

    #[test]
    fn invalid_combinations_rejected() {
        let mut doc = ellipse_doc();
        doc["truth"] = json!({"kind": "torus"});
        assert!(ExperimentConfig::from_value(doc).is_err());

        let mut doc = ellipse_doc();
        doc["observations"] = json!({"sigma": 0.1, "noise_fraction": 0.1});
        assert!(ExperimentConfig::from_value(doc).is_err());

        let mut doc = ellipse_doc();
        doc["prior"]["tau"] = json!(-1.0);
        assert!(ExperimentConfig::from_value(doc).is_err());

        let mut doc = ellipse_doc();
        doc["sampler"] = json!({"iters": 10, "burnin": 10});
        assert!(ExperimentConfig::from_value(doc).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = ExperimentConfig::load(Path::new("/nonexistent/cfg.json"), &[]).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("/nonexistent/cfg.json"));
    }
}
