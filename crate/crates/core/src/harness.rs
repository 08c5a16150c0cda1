//! Subcommand implementations: generate, recover, verify, bench.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::candidates::{
    generate_candidates, partition_candidates, CandidateSet, GradientSource, KernelSource, OracleSource,
    Partition,
};
use crate::cluster::{spherical_kmeans, ClusterResult, KMeansOptions};
use crate::config::{EstimatorChoice, ModelSpec, RunConfig, SamplingModel};
use crate::error::{Error, Result};
use crate::gradient::ProjectedDataset;
use crate::matching::{match_to_truth, MatchReport};
use crate::model::{sample_gaussian_dataset, write_json, Dataset, SigmoidModel};
use crate::params::{derive_params, practical_params, AlgoParams, ParamOverrides, Regime};
use crate::rng::derive_seed;
use crate::subspace::{estimate_span, largest_angle, SubspaceEstimate};
use crate::verify::{self, CheckReport, CheckStatus};

pub const MANIFEST_VERSION: u32 = 1;

/// Resolved configuration, parameters and output digests of one run.
/// Loading it as a configuration reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<AlgoParams>,
    /// SHA-256 of every file written, keyed by file name.
    pub outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, command: &str, config: RunConfig, params: Option<AlgoParams>, files: &[String]) -> Result<PathBuf> {
    let mut outputs = BTreeMap::new();
    for name in files {
        outputs.insert(name.clone(), sha256_file(&dir.join(name))?);
    }
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        command: command.to_string(),
        config,
        params,
        outputs,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Configuration as recorded in a manifest: inline model, every parameter
/// pinned, and no output directory or thread count.
fn pinned_config(cfg: &RunConfig, model: Option<&SigmoidModel>, params: Option<&AlgoParams>) -> RunConfig {
    let mut pinned = cfg.clone();
    pinned.out = None;
    pinned.threads = None;
    if let Some(m) = model {
        pinned.model = Some(ModelSpec::Inline { model: m.clone() });
    }
    if let Some(p) = params {
        pinned.overrides = ParamOverrides {
            delta: Some(p.delta),
            rho: Some(p.rho),
            band: Some(p.band),
            threshold: Some(p.threshold),
            xi0: Some(p.xi0),
            gamma: Some(p.gamma),
            m0: Some(p.m0),
        };
    }
    pinned
}

fn build_model(cfg: &RunConfig) -> Result<Option<SigmoidModel>> {
    let model = cfg.model.as_ref().map(|spec| spec.build(cfg.seed)).transpose()?;
    if let Some(m) = &model {
        m.ensure_valid()?;
    }
    Ok(model)
}

fn load_or_sample_dataset(cfg: &RunConfig, model: Option<&SigmoidModel>) -> Result<Dataset> {
    let data = match (&cfg.dataset, model) {
        (Some(path), _) => Dataset::read_jsonl(path)?,
        (None, Some(m)) => sample_gaussian_dataset(m, cfg.n.unwrap_or(0), derive_seed(cfg.seed, "dataset"))?,
        (None, None) => return Err(Error::Config("no dataset and no model to sample one from".into())),
    };
    if let Some(m) = model {
        if m.d() != data.d() {
            return Err(Error::Structure(format!("dataset has d = {} but model has d = {}", data.d(), m.d())));
        }
    }
    Ok(data)
}

#[derive(Debug, Clone)]
pub struct GenerateOutput {
    pub model: SigmoidModel,
    pub files: Vec<PathBuf>,
}

/// Writes `model.json` and, for Gaussian sampling, `dataset.jsonl` with its
/// `dataset.meta.json` sidecar.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateOutput> {
    cfg.validate()?;
    let model = build_model(cfg)?.ok_or_else(|| Error::Config("generate needs a model".into()))?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let mut names = vec!["model.json".to_string()];
    model.save_json(&dir.join("model.json"))?;
    if cfg.sampling == SamplingModel::GaussianCovariates && cfg.dataset.is_none() {
        let data = load_or_sample_dataset(cfg, Some(&model))?;
        data.write_jsonl(&dir.join("dataset.jsonl"))?;
        write_json(&dir.join("dataset.meta.json"), &data.meta())?;
        names.push("dataset.jsonl".into());
        names.push("dataset.meta.json".into());
    }
    let manifest = write_manifest(&dir, "generate", pinned_config(cfg, Some(&model), None), None, &names)?;
    let mut files: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    files.push(manifest);
    Ok(GenerateOutput { model, files })
}

/// Parameters for a run: theory formulas need a model; practical defaults
/// use the working dimension (`k` when projecting).
pub fn resolve_params(cfg: &RunConfig, model: Option<&SigmoidModel>, k: usize, d: usize) -> Result<AlgoParams> {
    let beta = model.map_or(1.0, |m| m.beta());
    let work_d = if cfg.estimator == EstimatorChoice::Projected { k } else { d };
    match cfg.regime {
        Regime::Theory => {
            let m = model.ok_or_else(|| Error::Config("the theory regime needs a model".into()))?;
            let mut p = derive_params(
                k,
                m.u0(),
                m.kappa(),
                beta,
                cfg.overrides.delta.unwrap_or(0.2),
                cfg.overrides.rho.unwrap_or(0.5),
            )?;
            cfg.overrides.apply(&mut p);
            Ok(p)
        }
        Regime::Practical => practical_params(work_d, k, beta, &cfg.overrides),
    }
}

#[derive(Debug, Clone)]
pub struct RecoverOutput {
    pub params: AlgoParams,
    pub candidates: CandidateSet,
    pub subspace: Option<SubspaceEstimate>,
    pub clusters: ClusterResult,
    pub matching: Option<MatchReport>,
    pub partition: Option<Partition>,
    pub files: Vec<PathBuf>,
}

/// Candidates, optional span estimate, clustering, and matching when the
/// ground truth is known.
pub fn cmd_recover(cfg: &RunConfig) -> Result<RecoverOutput> {
    cfg.validate()?;
    let model = build_model(cfg)?;
    let k = model.as_ref().map_or_else(|| cfg.k.unwrap_or(0), |m| m.k());
    if let (Some(m), Some(k_cfg)) = (&model, cfg.k) {
        if m.k() != k_cfg {
            return Err(Error::Config(format!("k = {k_cfg} disagrees with the model's k = {}", m.k())));
        }
    }
    let dataset = match cfg.sampling {
        SamplingModel::GaussianCovariates => Some(load_or_sample_dataset(cfg, model.as_ref())?),
        SamplingModel::ValueOracle => None,
    };
    let d = model.as_ref().map_or_else(|| dataset.as_ref().map_or(0, |ds| ds.d()), |m| m.d());
    if k == 0 || k > d {
        return Err(Error::Config(format!("need 1 <= k <= d, got k = {k}, d = {d}")));
    }
    let params = resolve_params(cfg, model.as_ref(), k, d)?;
    let candidate_seed = derive_seed(cfg.seed, "candidates");

    let (set, subspace) = match cfg.estimator {
        EstimatorChoice::Oracle => {
            let m = model.as_ref().expect("validated: oracle runs have a model");
            let source = OracleSource {
                model: m,
                n0: cfg.n0.unwrap_or(0),
            };
            (generate_candidates(&source, &params, candidate_seed)?, None)
        }
        EstimatorChoice::Kernel => {
            let source = KernelSource {
                dataset: dataset.as_ref().expect("validated: kernel runs have data"),
            };
            (generate_candidates(&source, &params, candidate_seed)?, None)
        }
        EstimatorChoice::Projected => {
            let data = dataset.as_ref().expect("validated: projected runs have data");
            let n1 = cfg.n1.unwrap_or(0);
            let n2 = cfg.n2.unwrap_or(data.len().saturating_sub(n1));
            if n1 + n2 > data.len() || n2 == 0 {
                return Err(Error::Config(format!(
                    "projection needs n1 + n2 <= n (n1 = {n1}, n2 = {n2}, n = {})",
                    data.len()
                )));
            }
            let (first, rest) = data.split(n1)?;
            let second = if n2 < rest.len() { rest.split(n2)?.0 } else { rest };
            let span_xi0 = cfg.span_xi0.unwrap_or(1.0 / (d as f64).sqrt());
            let span = estimate_span(
                &KernelSource { dataset: &first },
                k,
                cfg.span_probes,
                span_xi0,
                derive_seed(cfg.seed, "span"),
            )?;
            let source = ProjectedDataset::new(&second, &span)?;
            let set = generate_candidates(&source, &params, candidate_seed)?;
            (set, Some(span))
        }
    };

    let units: Vec<Vec<f64>> = match cfg.cluster.top {
        Some(top) => set
            .top_by_norm(top)
            .iter()
            .map(|c| c.w_unit.clone().expect("retained candidates are normalized"))
            .collect(),
        None => set.unit_vectors(),
    };
    let antipodal = cfg
        .cluster
        .antipodal
        .unwrap_or_else(|| model.as_ref().is_none_or(|m| !m.mixture()));
    let opts = KMeansOptions {
        max_iter: cfg.cluster.max_iter,
        tol: cfg.cluster.tol,
        antipodal,
    };
    let clusters = spherical_kmeans(&units, k, derive_seed(cfg.seed, "kmeans"), &opts)?;
    let matching = model
        .as_ref()
        .map(|m| match_to_truth(&clusters.centers, m, antipodal))
        .transpose()?;
    let partition = model.as_ref().map(|m| partition_candidates(&set, m, &params));

    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let mut names = Vec::new();
    let mut lines = String::new();
    for c in &set.candidates {
        lines.push_str(&serde_json::to_string(c)?);
        lines.push('\n');
    }
    write_text(&dir.join("candidates.jsonl"), &lines)?;
    names.push("candidates.jsonl".to_string());
    let mut csv = String::from("index,norm,retained\n");
    for c in &set.candidates {
        writeln!(csv, "{},{},{}", c.index, c.norm, c.retained).unwrap();
    }
    write_text(&dir.join("candidate_norms.csv"), &csv)?;
    names.push("candidate_norms.csv".into());
    write_json(&dir.join("params.json"), &params)?;
    names.push("params.json".into());
    write_json(&dir.join("clusters.json"), &clusters)?;
    names.push("clusters.json".into());
    if let Some(span) = &subspace {
        #[derive(Serialize)]
        struct SubspaceFile<'a> {
            #[serde(flatten)]
            basis: &'a SubspaceEstimate,
            largest_angle_to_truth: Option<f64>,
        }
        let angle = match &model {
            Some(m) => Some(largest_angle(span, &SubspaceEstimate::from_span(m.matrix())?)?),
            None => None,
        };
        write_json(
            &dir.join("subspace.json"),
            &SubspaceFile {
                basis: span,
                largest_angle_to_truth: angle,
            },
        )?;
        names.push("subspace.json".into());
    }
    if let Some(report) = &matching {
        write_json(&dir.join("match.json"), report)?;
        names.push("match.json".into());
        let mut csv = String::from("unit,center,sign,error\n");
        for (l, err) in report.per_vector_error.iter().enumerate() {
            writeln!(csv, "{},{},{},{}", l, report.permutation[l], report.signs[l], err).unwrap();
        }
        write_text(&dir.join("errors.csv"), &csv)?;
        names.push("errors.csv".into());
    }
    if let Some(p) = &partition {
        write_json(&dir.join("partition.json"), p)?;
        names.push("partition.json".into());
    }
    let manifest = write_manifest(
        &dir,
        "recover",
        pinned_config(cfg, model.as_ref(), Some(&params)),
        Some(params.clone()),
        &names,
    )?;
    let mut files: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    files.push(manifest);
    Ok(RecoverOutput {
        params,
        candidates: set,
        subspace,
        clusters,
        matching,
        partition,
        files,
    })
}

#[derive(Debug, Clone)]
pub struct VerifyOutput {
    pub reports: Vec<CheckReport>,
    pub files: Vec<PathBuf>,
}

impl VerifyOutput {
    /// True when no executed check failed.
    pub fn success(&self) -> bool {
        self.reports.iter().all(|r| r.status != CheckStatus::Fail)
    }
}

fn default_probe(d: usize) -> Vec<f64> {
    vec![0.3; d]
}

/// Runs one named check, or its negative control.
pub fn run_check(name: &str, cfg: &RunConfig, model: &SigmoidModel, control: bool) -> Result<CheckReport> {
    let v = &cfg.verify;
    let seed = derive_seed(cfg.seed, name);
    let xi = v.probe.clone().unwrap_or_else(|| default_probe(model.d()));
    if xi.len() != model.d() {
        return Err(Error::Config(format!("verify probe has {} entries, model d = {}", xi.len(), model.d())));
    }
    let mut report = match name {
        "stein" => verify::check_stein_scaled(model, &xi, v.stein_trials, v.stein_n0, seed, if control { 2.0 } else { 1.0 })?,
        "tail_scaling" => verify::check_tail_scaling(
            model,
            &xi,
            &verify::TailOptions {
                n_grid: v.tail_n_grid.clone(),
                datasets: v.tail_datasets,
                slope_delta: v.tail_delta,
                bound_delta: v.tail_bound_delta,
                bias: if control { v.tail_delta } else { 0.0 },
            },
            seed,
        )?,
        "oracle_tail" => verify::check_oracle_tail(
            model,
            &xi,
            &verify::OracleTailOptions {
                n0_grid: v.oracle_n0_grid.clone(),
                trials: v.oracle_trials,
                delta: v.oracle_delta,
                cauchy_scale: control.then_some(1.0),
            },
            seed,
        )?,
        "normality" => {
            let xi0 = 2.0 * (model.d() as f64).sqrt();
            verify::check_normality_probs(
                model,
                &verify::NormalityOptions {
                    xi0,
                    band: v.normality_ratio * xi0,
                    trials: v.normality_trials,
                    probe_scale: if control { 1.5 } else { 1.0 },
                },
                seed,
            )?
        }
        "coeff_bounds" => {
            let (betas, zs) = verify::standard_coeff_grid();
            verify::check_coeff_bounds(&betas, &zs, if control { 100.0 } else { 1.0 })?
        }
        "kernel_moments" => {
            let d = model.d();
            let xis = [0.0, 0.5, 1.0, 1.5]
                .iter()
                .map(|r| {
                    let mut p = vec![0.0; d];
                    p[0] = *r;
                    p
                })
                .collect();
            verify::check_kernel_moments(
                model,
                &verify::MomentOptions {
                    xis,
                    n: v.moment_n,
                    datasets: v.moment_datasets,
                    wrong_growth: control,
                },
                seed,
            )?
        }
        "oracle_calibration" => verify::check_oracle_calibration(v.calibration_draws, seed, control)?,
        "theorem1" => {
            let t = &v.theorem1;
            let outcome = verify::run_theorem1_experiment(
                &verify::Theorem1Config {
                    model: model.clone(),
                    n0: t.n0,
                    m0: t.m0,
                    delta: t.delta,
                    rho: t.rho,
                    w0: t.w0,
                    xi0: t.xi0,
                    noise_control: control,
                },
                seed,
            )?;
            outcome.report
        }
        other => {
            return Err(Error::Config(format!(
                "unknown check '{other}' (known: {})",
                crate::config::CHECK_NAMES.join(", ")
            )))
        }
    };
    if control {
        report.name = format!("{name} (negative control)");
    }
    Ok(report)
}

/// Runs the selected checks; writes `checks.json` and `tail_curves.csv`.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyOutput> {
    cfg.validate()?;
    let model = build_model(cfg)?.ok_or_else(|| Error::Config("verify needs a model".into()))?;
    let mut reports = Vec::new();
    for name in &cfg.verify.checks {
        reports.push(run_check(name, cfg, &model, cfg.verify.negative_controls)?);
    }
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    write_json(&dir.join("checks.json"), &reports)?;
    let mut csv = String::from("check,n,delta,frequency,lower,upper,bound\n");
    for r in &reports {
        for p in &r.curve {
            let bound = p.bound.map(|b| b.to_string()).unwrap_or_default();
            writeln!(csv, "{},{},{},{},{},{},{}", r.name, p.n, p.delta, p.frequency, p.lower, p.upper, bound).unwrap();
        }
    }
    write_text(&dir.join("tail_curves.csv"), &csv)?;
    let names = vec!["checks.json".to_string(), "tail_curves.csv".to_string()];
    let manifest = write_manifest(&dir, "verify", pinned_config(cfg, Some(&model), None), None, &names)?;
    let mut files: Vec<PathBuf> = names.iter().map(|n| dir.join(n)).collect();
    files.push(manifest);
    Ok(VerifyOutput { reports, files })
}

/// Fixed-width summary of check results.
pub fn summary_table(reports: &[CheckReport]) -> String {
    let mut out = format!("{:<36} {:>8} {:>10} {:>10}\n", "check", "status", "trials", "seconds");
    for r in reports {
        let status = match r.status {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Skipped => "SKIP",
        };
        writeln!(out, "{:<36} {:>8} {:>10} {:>10.2}", r.name, status, r.trials, r.runtime.as_secs_f64()).unwrap();
        for e in r.failed_entries() {
            writeln!(out, "    failed: {} (observed {:.6} {} {:.6})", e.label, e.observed, e.relation, e.target).unwrap();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub estimator: String,
    pub d: usize,
    pub probes: usize,
    pub samples: usize,
    pub threads: usize,
    pub setup_seconds: f64,
    pub candidate_seconds: f64,
    pub microseconds_per_probe: f64,
}

/// Times candidate generation for the configured estimator. Writes
/// `bench.json`; timings are not reproducible.
pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let setup = Instant::now();
    let model = build_model(cfg)?;
    let dataset = match cfg.sampling {
        SamplingModel::GaussianCovariates => Some(load_or_sample_dataset(cfg, model.as_ref())?),
        SamplingModel::ValueOracle => None,
    };
    let k = model.as_ref().map_or_else(|| cfg.k.unwrap_or(1), |m| m.k());
    let d = model.as_ref().map_or_else(|| dataset.as_ref().map_or(0, |ds| ds.d()), |m| m.d());
    let mut params = resolve_params(cfg, model.as_ref(), k, d)?;
    params.threshold = crate::params::Threshold::TopCount(1);
    let oracle;
    let kernel;
    let span;
    let projected;
    let source: &dyn GradientSource = match cfg.estimator {
        EstimatorChoice::Oracle => {
            oracle = OracleSource {
                model: model.as_ref().expect("validated"),
                n0: cfg.n0.unwrap_or(0),
            };
            &oracle
        }
        EstimatorChoice::Kernel => {
            kernel = KernelSource {
                dataset: dataset.as_ref().expect("validated"),
            };
            &kernel
        }
        EstimatorChoice::Projected => {
            let data = dataset.as_ref().expect("validated");
            span = estimate_span(
                &KernelSource { dataset: data },
                k,
                cfg.span_probes,
                cfg.span_xi0.unwrap_or(1.0 / (d as f64).sqrt()),
                derive_seed(cfg.seed, "span"),
            )?;
            projected = ProjectedDataset::new(data, &span)?;
            &projected
        }
    };
    let setup_seconds = setup.elapsed().as_secs_f64();
    let timer = Instant::now();
    let set = generate_candidates(source, &params, derive_seed(cfg.seed, "candidates"))?;
    let candidate_seconds = timer.elapsed().as_secs_f64();
    let report = BenchReport {
        estimator: source.kind().to_string(),
        d,
        probes: set.candidates.len(),
        samples: source.samples_used(),
        threads: rayon::current_num_threads(),
        setup_seconds,
        candidate_seconds,
        microseconds_per_probe: 1e6 * candidate_seconds / set.candidates.len() as f64,
    };
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    write_json(&dir.join("bench.json"), &report)?;
    Ok(report)
}
