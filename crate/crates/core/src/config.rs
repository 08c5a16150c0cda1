//! Run configuration: one JSON document, environment overrides, CLI flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{NoiseSpec, SigmoidModel};
use crate::params::{ParamOverrides, Regime};
use crate::rng;

pub const ENV_PREFIX: &str = "GRADCLUST_";

/// Where the ground-truth model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// A model JSON file.
    Path { path: PathBuf },
    /// Standard-basis parameter vectors `e₁ … e_k`.
    StandardBasis {
        d: usize,
        u: Vec<f64>,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        mixture: bool,
        #[serde(default = "default_noise")]
        noise: NoiseSpec,
    },
    /// Random unit vectors with `σ_min(W) ≥ min_kappa`.
    Random {
        d: usize,
        k: usize,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default)]
        mixture: bool,
        #[serde(default = "default_noise")]
        noise: NoiseSpec,
        #[serde(default = "default_min_kappa")]
        min_kappa: f64,
    },
    /// The model document itself.
    Inline { model: SigmoidModel },
}

fn default_beta() -> f64 {
    1.0
}
fn default_noise() -> NoiseSpec {
    NoiseSpec::NOISELESS
}
fn default_min_kappa() -> f64 {
    0.3
}

impl ModelSpec {
    /// Builds the model; random models draw from the `model` stream of `seed`.
    pub fn build(&self, seed: u64) -> Result<SigmoidModel> {
        match self {
            ModelSpec::Path { path } => SigmoidModel::load_json(path),
            ModelSpec::StandardBasis {
                d,
                u,
                beta,
                mixture,
                noise,
            } => SigmoidModel::standard_basis(*d, u.clone(), *beta, *mixture, *noise),
            ModelSpec::Random {
                d,
                k,
                beta,
                mixture,
                noise,
                min_kappa,
            } => SigmoidModel::random(
                *d,
                *k,
                *beta,
                *mixture,
                *noise,
                *min_kappa,
                rng::derive_seed(seed, "model"),
            ),
            ModelSpec::Inline { model } => Ok(model.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingModel {
    ValueOracle,
    GaussianCovariates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Oracle,
    Kernel,
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    /// Cluster only the `top` largest-norm retained candidates.
    #[serde(default)]
    pub top: Option<usize>,
    /// Identify `v` with `−v`. Defaults to on for signed weights, off for
    /// mixtures.
    #[serde(default)]
    pub antipodal: Option<bool>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-8
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            top: None,
            antipodal: None,
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

/// Selection and sizes for `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_checks")]
    pub checks: Vec<String>,
    /// Run each check's corrupted configuration instead.
    #[serde(default)]
    pub negative_controls: bool,
    #[serde(default = "default_stein_trials")]
    pub stein_trials: usize,
    #[serde(default = "default_stein_n0")]
    pub stein_n0: usize,
    #[serde(default = "default_tail_datasets")]
    pub tail_datasets: usize,
    #[serde(default = "default_tail_grid")]
    pub tail_n_grid: Vec<usize>,
    #[serde(default = "default_tail_delta")]
    pub tail_delta: f64,
    #[serde(default = "default_tail_bound_delta")]
    pub tail_bound_delta: Option<f64>,
    #[serde(default = "default_oracle_grid")]
    pub oracle_n0_grid: Vec<usize>,
    #[serde(default = "default_oracle_trials")]
    pub oracle_trials: usize,
    #[serde(default = "default_oracle_delta")]
    pub oracle_delta: f64,
    #[serde(default = "default_normality_trials")]
    pub normality_trials: usize,
    #[serde(default = "default_normality_ratio")]
    pub normality_ratio: f64,
    #[serde(default = "default_moment_datasets")]
    pub moment_datasets: usize,
    #[serde(default = "default_moment_n")]
    pub moment_n: usize,
    #[serde(default = "default_calibration_draws")]
    pub calibration_draws: usize,
    /// Probe for the Stein and tail checks; defaults to `0.3·(1, …, 1)`.
    #[serde(default)]
    pub probe: Option<Vec<f64>>,
    #[serde(default)]
    pub theorem1: Theorem1Settings,
}

/// Sizes for the end-to-end structure check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem1Settings {
    #[serde(default = "default_t1_n0")]
    pub n0: usize,
    #[serde(default = "default_t1_m0")]
    pub m0: usize,
    #[serde(default = "default_t1_delta")]
    pub delta: f64,
    #[serde(default = "default_t1_rho")]
    pub rho: f64,
    #[serde(default = "default_t1_w0")]
    pub w0: f64,
    #[serde(default = "default_t1_xi0")]
    pub xi0: f64,
}

fn default_t1_n0() -> usize {
    30_000
}
fn default_t1_m0() -> usize {
    4000
}
fn default_t1_delta() -> f64 {
    0.2
}
fn default_t1_rho() -> f64 {
    0.5
}
fn default_t1_w0() -> f64 {
    0.1
}
fn default_t1_xi0() -> f64 {
    20.0
}

impl Default for Theorem1Settings {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

pub const CHECK_NAMES: [&str; 8] = [
    "stein",
    "tail_scaling",
    "oracle_tail",
    "normality",
    "coeff_bounds",
    "kernel_moments",
    "oracle_calibration",
    "theorem1",
];

fn default_checks() -> Vec<String> {
    CHECK_NAMES[..7].iter().map(|s| s.to_string()).collect()
}
fn default_stein_trials() -> usize {
    200
}
fn default_stein_n0() -> usize {
    2000
}
fn default_tail_datasets() -> usize {
    500
}
fn default_tail_grid() -> Vec<usize> {
    vec![1000, 10_000, 100_000]
}
fn default_tail_delta() -> f64 {
    0.06
}
fn default_tail_bound_delta() -> Option<f64> {
    Some(0.3)
}
fn default_oracle_grid() -> Vec<usize> {
    vec![1000, 2000, 4000]
}
fn default_oracle_trials() -> usize {
    4000
}
fn default_oracle_delta() -> f64 {
    0.06
}
fn default_normality_trials() -> usize {
    100_000
}
fn default_normality_ratio() -> f64 {
    0.1
}
fn default_moment_datasets() -> usize {
    300
}
fn default_moment_n() -> usize {
    500
}
fn default_calibration_draws() -> usize {
    1_000_000
}

impl Default for VerifyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Ground truth; optional only for a Gaussian run on a given dataset.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    pub sampling: SamplingModel,
    pub estimator: EstimatorChoice,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default)]
    pub overrides: ParamOverrides,
    /// Number of units to recover when no model is given.
    #[serde(default)]
    pub k: Option<usize>,
    /// Gaussian dataset size.
    #[serde(default)]
    pub n: Option<usize>,
    /// Oracle queries per probe.
    #[serde(default)]
    pub n0: Option<usize>,
    /// Samples used for the span estimate when projecting.
    #[serde(default)]
    pub n1: Option<usize>,
    /// Samples used for projected candidates; defaults to the rest.
    #[serde(default)]
    pub n2: Option<usize>,
    /// Probes used for the span estimate.
    #[serde(default = "default_span_probes")]
    pub span_probes: usize,
    /// Probe scale for the span estimate; defaults to `1/√d`.
    #[serde(default)]
    pub span_xi0: Option<f64>,
    /// Existing dataset (JSON Lines) instead of sampling one.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_span_probes() -> usize {
    200
}

/// Command-line values that take precedence over file and environment.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub regime: Option<Regime>,
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        from_value_at(path, unwrap_manifest(value))
    }

    /// File, then `GRADCLUST_*` variables from `env`, then CLI flags.
    pub fn resolve(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        cli: &CliOverrides,
    ) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                unwrap_manifest(serde_json::from_str(&text).map_err(|e| Error::Parse {
                    path: p.into(),
                    message: e.to_string(),
                })?)
            }
            None => return Err(Error::Config("a configuration file is required (--config)".into())),
        };
        apply_env(&mut value, env)?;
        let mut cfg = from_value_at(path.unwrap(), value)?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &cli.out {
            cfg.out = Some(out.clone());
        }
        if let Some(t) = cli.threads {
            cfg.threads = Some(t);
        }
        if let Some(r) = cli.regime {
            cfg.regime = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Cross-field rules: one estimator compatible with the sampling model,
    /// the sizes it needs, and a consistent split when projecting.
    pub fn validate(&self) -> Result<()> {
        use EstimatorChoice::*;
        use SamplingModel::*;
        match (self.sampling, self.estimator) {
            (ValueOracle, Oracle) | (GaussianCovariates, Kernel) | (GaussianCovariates, Projected) => {}
            (s, e) => {
                return Err(Error::Config(format!(
                    "estimator '{}' is incompatible with sampling '{}' (oracle needs value_oracle; kernel and projected need gaussian_covariates)",
                    name(&e),
                    name(&s)
                )))
            }
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        match self.sampling {
            ValueOracle => {
                if self.model.is_none() {
                    return Err(Error::Config("value_oracle sampling needs a model".into()));
                }
                if self.n0.unwrap_or(0) == 0 {
                    return Err(Error::Config("value_oracle sampling needs n0 > 0".into()));
                }
                if self.dataset.is_some() {
                    return Err(Error::Config("dataset is only used with gaussian_covariates sampling".into()));
                }
            }
            GaussianCovariates => {
                if self.dataset.is_none() && self.n.unwrap_or(0) == 0 {
                    return Err(Error::Config("gaussian_covariates sampling needs n > 0 or a dataset".into()));
                }
                if self.dataset.is_none() && self.model.is_none() {
                    return Err(Error::Config("gaussian_covariates sampling needs a model or a dataset".into()));
                }
            }
        }
        if self.model.is_none() && self.k.unwrap_or(0) == 0 {
            return Err(Error::Config("without a model, k must be given".into()));
        }
        if self.estimator == Projected {
            let n1 = self.n1.unwrap_or(0);
            if n1 == 0 {
                return Err(Error::Config("projection needs n1 > 0".into()));
            }
            if let Some(n) = self.n {
                let n2 = self.n2.unwrap_or(n.saturating_sub(n1));
                if n2 == 0 || n1 + n2 > n {
                    return Err(Error::Config(format!(
                        "projection needs n2 > 0 and n1 + n2 <= n (n1 = {n1}, n2 = {n2}, n = {n})"
                    )));
                }
            }
            if self.span_probes == 0 {
                return Err(Error::Config("span_probes must be positive".into()));
            }
        }
        for check in &self.verify.checks {
            if !CHECK_NAMES.contains(&check.as_str()) {
                return Err(Error::Config(format!(
                    "unknown check '{check}' (known: {})",
                    CHECK_NAMES.join(", ")
                )));
            }
        }
        Ok(())
    }
}

fn name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn from_value_at(path: &Path, value: Value) -> Result<RunConfig> {
    serde_json::from_value(value).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })
}

/// A run manifest nests the resolved configuration under `config`.
fn unwrap_manifest(value: Value) -> Value {
    match value {
        Value::Object(mut map) if map.contains_key("manifest_version") => {
            map.remove("config").unwrap_or(Value::Null)
        }
        other => other,
    }
}

/// Applies `GRADCLUST_A__B=v` as `a.b = v`. All-uppercase path segments
/// are lowercased, mixed-case ones are used verbatim (`OVERRIDES__Delta`).
/// Values parse as JSON and fall back to a string.
pub fn apply_env(value: &mut Value, env: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut vars: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<&str> = key[ENV_PREFIX.len()..].split("__").collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed override variable {key}")));
        }
        let parsed = serde_json::from_str(&raw).unwrap_or(Value::String(raw.clone()));
        let mut node = &mut *value;
        for (i, segment) in path.iter().enumerate() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            }
            let map = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("{key}: cannot descend into a non-object field")))?;
            let field = if segment.chars().any(|c| c.is_ascii_lowercase()) {
                segment.to_string()
            } else {
                segment.to_lowercase()
            };
            if i + 1 == path.len() {
                map.insert(field, parsed.clone());
                break;
            }
            node = map.entry(field).or_insert(Value::Null);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> &'static str {
        r#"{
            "model": {"kind": "standard_basis", "d": 3, "u": [0.5, 0.5], "mixture": true},
            "sampling": "gaussian_covariates",
            "estimator": "kernel",
            "n": 1000
        }"#
    }

    #[test]
    fn parses_and_validates() {
        let cfg = RunConfig::from_json_str(base()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.regime, Regime::Practical);
        assert_eq!(cfg.verify.stein_trials, 200);
    }

    #[test]
    fn incompatible_pair_names_both_fields() {
        let mut cfg = RunConfig::from_json_str(base()).unwrap();
        cfg.estimator = EstimatorChoice::Oracle;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("oracle") && msg.contains("gaussian_covariates"), "{msg}");
    }

    #[test]
    fn projection_split_rules() {
        let mut cfg = RunConfig::from_json_str(base()).unwrap();
        cfg.estimator = EstimatorChoice::Projected;
        assert!(cfg.validate().is_err());
        cfg.n1 = Some(0);
        assert!(cfg.validate().is_err());
        cfg.n1 = Some(400);
        cfg.validate().unwrap();
        cfg.n2 = Some(700);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = base().replace("\"n\": 1000", "\"n\": 1000, \"bogus\": 1");
        assert!(RunConfig::from_json_str(&text).is_err());
    }

    #[test]
    fn env_overrides_nested_scalars() {
        let mut v: Value = serde_json::from_str(base()).unwrap();
        apply_env(
            &mut v,
            vec![
                ("GRADCLUST_SEED".to_string(), "9".to_string()),
                ("GRADCLUST_OVERRIDES__DELTA".to_string(), "0.3".to_string()),
                ("GRADCLUST_OVERRIDES__Delta".to_string(), "1.5".to_string()),
                ("GRADCLUST_ESTIMATOR".to_string(), "projected".to_string()),
                ("OTHER".to_string(), "1".to_string()),
            ],
        )
        .unwrap();
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.overrides.delta, Some(0.3));
        assert_eq!(cfg.overrides.band, Some(1.5));
        assert_eq!(cfg.estimator, EstimatorChoice::Projected);
    }

    #[test]
    fn precedence_file_env_cli() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, base().replace("\"n\": 1000", "\"n\": 1000, \"seed\": 1")).unwrap();
        let env = vec![("GRADCLUST_SEED".to_string(), "2".to_string())];
        let cfg = RunConfig::resolve(Some(&path), env.clone(), &CliOverrides::default()).unwrap();
        assert_eq!(cfg.seed, 2);
        let cli = CliOverrides {
            seed: Some(3),
            ..Default::default()
        };
        assert_eq!(RunConfig::resolve(Some(&path), env, &cli).unwrap().seed, 3);
    }

    #[test]
    fn unknown_check_is_rejected() {
        let mut cfg = RunConfig::from_json_str(base()).unwrap();
        cfg.verify.checks = vec!["nope".into()];
        assert!(cfg.validate().unwrap_err().to_string().contains("unknown check"));
    }
}
