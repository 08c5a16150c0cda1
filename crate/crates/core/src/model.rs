//! Ground-truth sigmoid-combination model and its two sampling models.
//!
//! The regression function is `r(x) = Σ_ℓ u_ℓ tanh(β ⟨w^ℓ, x⟩)` with unit
//! parameter vectors stored as the columns of `W`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, column, dot};
use crate::rng::{self, Rng};

/// Truncation point, in standard deviations, of the additive label noise.
pub const NOISE_TRUNCATION: f64 = 3.0;

const UNIT_NORM_TOL: f64 = 1e-12;
const MIXTURE_SUM_TOL: f64 = 1e-12;
/// σ_min below this is treated as rank deficiency.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// `y = r(x)`.
    Noiseless,
    /// Pick a unit `ℓ ~ u`, then `y = ±1` with `P(+1) = (1 + tanh(β⟨w^ℓ,x⟩)) / 2`.
    BinaryMixture,
    /// `y = r(x) + σ ε` with ε a standard normal truncated to ±3.
    TruncatedAdditive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub sigma: f64,
}

impl NoiseSpec {
    pub const NOISELESS: NoiseSpec = NoiseSpec {
        kind: NoiseKind::Noiseless,
        sigma: 0.0,
    };
    pub const BINARY: NoiseSpec = NoiseSpec {
        kind: NoiseKind::BinaryMixture,
        sigma: 0.0,
    };

    pub fn additive(sigma: f64) -> Self {
        NoiseSpec {
            kind: NoiseKind::TruncatedAdditive,
            sigma,
        }
    }
}

/// On-disk form of a model. `W` is stored column-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub d: usize,
    pub k: usize,
    pub beta: f64,
    pub mixture: bool,
    pub noise: NoiseSpec,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct SigmoidModel {
    d: usize,
    k: usize,
    w: DMatrix<f64>,
    u: Vec<f64>,
    beta: f64,
    mixture: bool,
    noise: NoiseSpec,
    label_bound: f64,
    seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub unit_norm: bool,
    pub max_norm_deviation: f64,
    pub sigma_min: f64,
    pub full_rank: bool,
    pub u0: f64,
    pub weights_in_range: bool,
    pub mixture_ok: bool,
    pub valid: bool,
}

impl SigmoidModel {
    /// Builds a model from a `d × k` matrix of parameter vectors.
    ///
    /// Only structural problems are rejected here; assumption violations
    /// (non-unit columns, collinearity, weight bounds) are reported by
    /// [`SigmoidModel::validate`].
    pub fn new(
        w: DMatrix<f64>,
        u: Vec<f64>,
        beta: f64,
        mixture: bool,
        noise: NoiseSpec,
    ) -> Result<Self> {
        let (d, k) = w.shape();
        if k == 0 || d == 0 {
            return Err(Error::Structure("W must have at least one row and column".into()));
        }
        if k > d {
            return Err(Error::Structure(format!("k = {k} exceeds d = {d}")));
        }
        if u.len() != k {
            return Err(Error::Structure(format!(
                "u has {} entries but W has {k} columns",
                u.len()
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Structure(format!("beta must be positive, got {beta}")));
        }
        if w.iter().chain(&u).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        if noise.kind == NoiseKind::BinaryMixture && !mixture {
            return Err(Error::Config(
                "binary-mixture noise requires a mixture model (nonnegative weights summing to one)"
                    .into(),
            ));
        }
        if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma must be >= 0, got {}", noise.sigma)));
        }
        let l1: f64 = u.iter().map(|v| v.abs()).sum();
        let label_bound = match noise.kind {
            NoiseKind::BinaryMixture => 1.0,
            NoiseKind::Noiseless => l1,
            NoiseKind::TruncatedAdditive => l1 + NOISE_TRUNCATION * noise.sigma,
        };
        Ok(Self {
            d,
            k,
            w,
            u,
            beta,
            mixture,
            noise,
            label_bound,
            seed: None,
        })
    }

    pub fn from_columns(
        columns: &[Vec<f64>],
        u: Vec<f64>,
        beta: f64,
        mixture: bool,
        noise: NoiseSpec,
    ) -> Result<Self> {
        let d = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != d) {
            return Err(Error::Structure("parameter vectors differ in length".into()));
        }
        let flat: Vec<f64> = columns.iter().flatten().copied().collect();
        Self::new(DMatrix::from_column_slice(d, columns.len(), &flat), u, beta, mixture, noise)
    }

    /// First `k` standard basis vectors of ℝ^d.
    pub fn standard_basis(
        d: usize,
        u: Vec<f64>,
        beta: f64,
        mixture: bool,
        noise: NoiseSpec,
    ) -> Result<Self> {
        let k = u.len();
        if k > d {
            return Err(Error::Structure(format!("k = {k} exceeds d = {d}")));
        }
        let mut w = DMatrix::zeros(d, k);
        for l in 0..k {
            w[(l, l)] = 1.0;
        }
        Self::new(w, u, beta, mixture, noise)
    }

    /// Random instance: Gaussian directions normalized to the sphere, redrawn
    /// until σ_min(W) ≥ `min_kappa`. Mixture weights are drawn uniformly in
    /// [1, 2] and normalized; general weights have random signs and
    /// magnitudes in [0.5, 1].
    pub fn random(
        d: usize,
        k: usize,
        beta: f64,
        mixture: bool,
        noise: NoiseSpec,
        min_kappa: f64,
        seed: u64,
    ) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::Structure(format!("need 1 <= k <= d, got k = {k}, d = {d}")));
        }
        let mut rng = rng::stream(seed, "model");
        for _ in 0..1000 {
            let mut w = DMatrix::zeros(d, k);
            for l in 0..k {
                let col: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let unit = linalg::normalized(&col).expect("gaussian draw is nonzero");
                w.column_mut(l).copy_from_slice(&unit);
            }
            if linalg::sigma_min(&w) < min_kappa {
                continue;
            }
            let u = if mixture {
                let raw: Vec<f64> = (0..k).map(|_| rng.random_range(1.0..2.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|v| v / total).collect()
            } else {
                (0..k)
                    .map(|_| {
                        let magnitude = rng.random_range(0.5..1.0);
                        if rng.random::<bool>() {
                            magnitude
                        } else {
                            -magnitude
                        }
                    })
                    .collect()
            };
            let mut model = Self::new(w, u, beta, mixture, noise)?;
            model.seed = Some(seed);
            return Ok(model);
        }
        Err(Error::Config(format!(
            "could not draw {k} directions in d = {d} with sigma_min >= {min_kappa}"
        )))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn mixture(&self) -> bool {
        self.mixture
    }
    pub fn noise(&self) -> NoiseSpec {
        self.noise
    }
    pub fn weights(&self) -> &[f64] {
        &self.u
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
    /// The matrix of parameter vectors, `d × k`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }
    /// Parameter vector `w^ℓ`.
    pub fn unit(&self, l: usize) -> &[f64] {
        column(&self.w, l)
    }
    /// Label bound `M` with `|y| ≤ M` for every draw.
    pub fn label_bound(&self) -> f64 {
        self.label_bound
    }
    /// Smallest |u_ℓ|.
    pub fn u0(&self) -> f64 {
        self.u.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }
    /// σ_min(W), computed from the instance.
    pub fn kappa(&self) -> f64 {
        linalg::sigma_min(&self.w)
    }

    pub fn validate(&self) -> ValidationReport {
        let max_norm_deviation = (0..self.k)
            .map(|l| (linalg::norm(self.unit(l)) - 1.0).abs())
            .fold(0.0, f64::max);
        let sigma_min = self.kappa();
        let u0 = self.u0();
        let weights_in_range = u0 > 0.0 && self.u.iter().all(|v| v.abs() <= 1.0);
        let mixture_ok = !self.mixture
            || (self.u.iter().all(|&v| v >= 0.0)
                && (self.u.iter().sum::<f64>() - 1.0).abs() <= MIXTURE_SUM_TOL);
        let unit_norm = max_norm_deviation <= UNIT_NORM_TOL;
        let full_rank = sigma_min > RANK_TOL;
        ValidationReport {
            unit_norm,
            max_norm_deviation,
            sigma_min,
            full_rank,
            u0,
            weights_in_range,
            mixture_ok,
            valid: unit_norm && full_rank && weights_in_range && mixture_ok,
        }
    }

    /// Returns an error describing the first violated assumption.
    pub fn ensure_valid(&self) -> Result<ValidationReport> {
        let report = self.validate();
        if report.valid {
            return Ok(report);
        }
        let reason = if !report.unit_norm {
            format!("columns of W are not unit norm (deviation {:.3e})", report.max_norm_deviation)
        } else if !report.full_rank {
            format!("W is rank deficient (sigma_min = {:.3e})", report.sigma_min)
        } else if !report.weights_in_range {
            "weights must satisfy 0 < |u_l| <= 1".to_string()
        } else {
            "mixture weights must be nonnegative and sum to one".to_string()
        };
        Err(Error::Domain(reason))
    }

    /// `z_ℓ = ⟨w^ℓ, x⟩` for every unit.
    pub fn inner_products(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k).map(|l| dot(self.unit(l), x)).collect()
    }

    /// `r(x)` without input checks.
    pub fn mean_response(&self, x: &[f64]) -> f64 {
        (0..self.k)
            .map(|l| self.u[l] * (self.beta * dot(self.unit(l), x)).tanh())
            .sum()
    }

    /// `r(x) = Σ u_ℓ tanh(β⟨w^ℓ,x⟩)`.
    pub fn regression_value(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.mean_response(x))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Structure(format!(
                "point has dimension {} but the model has d = {}",
                x.len(),
                self.d
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("query point".into()));
        }
        Ok(())
    }

    /// One value-oracle response at `x`. Successive calls are independent.
    pub fn sample_value_oracle(&self, x: &[f64], rng: &mut Rng) -> f64 {
        match self.noise.kind {
            NoiseKind::Noiseless => self.mean_response(x),
            NoiseKind::BinaryMixture => {
                let pick: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = self.k - 1;
                for (l, &weight) in self.u.iter().enumerate() {
                    acc += weight;
                    if pick < acc {
                        chosen = l;
                        break;
                    }
                }
                let p_plus = 0.5 * (1.0 + (self.beta * dot(self.unit(chosen), x)).tanh());
                if rng.random::<f64>() < p_plus {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseKind::TruncatedAdditive => {
                let eps = if self.noise.sigma > 0.0 {
                    loop {
                        let e: f64 = rng.sample(StandardNormal);
                        if e.abs() <= NOISE_TRUNCATION {
                            break e;
                        }
                    }
                } else {
                    0.0
                };
                (self.mean_response(x) + self.noise.sigma * eps)
                    .clamp(-self.label_bound, self.label_bound)
            }
        }
    }

    /// Short content hash used to tag datasets with their source model.
    pub fn model_id(&self) -> String {
        let json = serde_json::to_string(&ModelDocument::from(self.clone()))
            .expect("model document serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

impl From<SigmoidModel> for ModelDocument {
    fn from(m: SigmoidModel) -> Self {
        ModelDocument {
            d: m.d,
            k: m.k,
            beta: m.beta,
            mixture: m.mixture,
            noise: m.noise,
            w: m.w.as_slice().to_vec(),
            u: m.u,
            seed: m.seed,
        }
    }
}

impl TryFrom<ModelDocument> for SigmoidModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        if doc.w.len() != doc.d * doc.k {
            return Err(Error::Structure(format!(
                "W has {} entries, expected d * k = {}",
                doc.w.len(),
                doc.d * doc.k
            )));
        }
        let w = DMatrix::from_column_slice(doc.d, doc.k, &doc.w);
        Ok(Self::new(w, doc.u, doc.beta, doc.mixture, doc.noise)?.with_seed(doc.seed))
    }
}

/// Immutable `(x, y)` pairs drawn under the Gaussian covariates model.
/// Covariates are stored row-major, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    pub seed: u64,
    pub model_id: String,
    pub noise: Option<NoiseKind>,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    x: Vec<f64>,
    y: f64,
}

/// Sidecar metadata written next to a dataset's JSON Lines file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub model_id: String,
    pub noise: Option<NoiseKind>,
}

impl Dataset {
    pub fn from_parts(d: usize, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if d == 0 || xs.len() != d * ys.len() {
            return Err(Error::Structure(format!(
                "covariate buffer has {} entries, expected {} x {}",
                xs.len(),
                ys.len(),
                d
            )));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(Self {
            d,
            xs,
            ys,
            seed: 0,
            model_id: String::new(),
            noise: None,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn len(&self) -> usize {
        self.ys.len()
    }
    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }
    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.d..(i + 1) * self.d]
    }
    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }
    pub fn covariates(&self) -> &[f64] {
        &self.xs
    }
    pub fn labels(&self) -> &[f64] {
        &self.ys
    }

    /// Splits into the first `n1` samples and the rest.
    pub fn split(&self, n1: usize) -> Result<(Dataset, Dataset)> {
        if n1 == 0 || n1 >= self.len() {
            return Err(Error::Config(format!(
                "split point {n1} must lie strictly inside 1..{}",
                self.len()
            )));
        }
        let mut head = Dataset::from_parts(self.d, self.xs[..n1 * self.d].to_vec(), self.ys[..n1].to_vec())?;
        let mut tail = Dataset::from_parts(self.d, self.xs[n1 * self.d..].to_vec(), self.ys[n1..].to_vec())?;
        for part in [&mut head, &mut tail] {
            part.seed = self.seed;
            part.model_id = self.model_id.clone();
            part.noise = self.noise;
        }
        Ok((head, tail))
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            d: self.d,
            n: self.len(),
            seed: self.seed,
            model_id: self.model_id.clone(),
            noise: self.noise,
        }
    }

    /// Writes one `{"x": [...], "y": ...}` object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for i in 0..self.len() {
            let line = SampleLine {
                x: self.x(i).to_vec(),
                y: self.y(i),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut d = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let sample: SampleLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.into(),
                message: format!("line {}: {e}", lineno + 1),
            })?;
            match d {
                None => d = Some(sample.x.len()),
                Some(d) if d != sample.x.len() => {
                    return Err(Error::Parse {
                        path: path.into(),
                        message: format!("line {}: dimension {} != {d}", lineno + 1, sample.x.len()),
                    })
                }
                _ => {}
            }
            xs.extend_from_slice(&sample.x);
            ys.push(sample.y);
        }
        Dataset::from_parts(d.unwrap_or(0), xs, ys)
    }
}

/// Draws `n` pairs with `x ~ N(0, I_d)` and `y` from the value oracle.
pub fn sample_gaussian_dataset(model: &SigmoidModel, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng::stream(seed, "dataset");
    let d = model.d();
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n);
    let mut x = vec![0.0; d];
    for _ in 0..n {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        ys.push(model.sample_value_oracle(&x, &mut rng));
        xs.extend_from_slice(&x);
    }
    Ok(Dataset {
        d,
        xs,
        ys,
        seed,
        model_id: model.model_id(),
        noise: Some(model.noise().kind),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn two_unit(theta: f64) -> SigmoidModel {
        SigmoidModel::from_columns(
            &[vec![1.0, 0.0, 0.0], vec![theta.cos(), theta.sin(), 0.0]],
            vec![0.5, 0.5],
            1.0,
            true,
            NoiseSpec::NOISELESS,
        )
        .unwrap()
    }

    #[test]
    fn orthonormal_basis_is_valid() {
        let m = SigmoidModel::standard_basis(5, vec![1.0 / 3.0; 3], 1.0, true, NoiseSpec::NOISELESS)
            .unwrap();
        let report = m.validate();
        assert!(report.valid);
        assert_relative_eq!(report.sigma_min, 1.0, epsilon = 1e-12);
        assert_relative_eq!(report.u0, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn duplicate_columns_are_rank_deficient() {
        let m = two_unit(0.0);
        let report = m.validate();
        assert!(!report.valid);
        assert!(!report.full_rank);
        assert!(report.sigma_min < 1e-12);
        assert!(m.ensure_valid().is_err());
    }

    #[test]
    fn sigma_min_of_two_units_at_sixty_degrees() {
        // Gram eigenvalues are 1 ± cos θ.
        let m = two_unit(PI / 3.0);
        assert_relative_eq!(m.kappa(), (1.0 - (PI / 3.0).cos()).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(m.kappa(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn structural_errors() {
        let w = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            SigmoidModel::new(w.clone(), vec![1.0], 1.0, false, NoiseSpec::NOISELESS),
            Err(Error::Structure(_))
        ));
        let tall = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            SigmoidModel::new(tall, vec![0.3; 3], 1.0, false, NoiseSpec::NOISELESS),
            Err(Error::Structure(_))
        ));
        assert!(matches!(
            SigmoidModel::new(w, vec![0.5, -0.5], 1.0, false, NoiseSpec::BINARY),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn regression_closed_form() {
        let m = SigmoidModel::standard_basis(3, vec![0.5, 0.5], 1.0, true, NoiseSpec::NOISELESS)
            .unwrap();
        assert_eq!(m.regression_value(&[0.0; 3]).unwrap(), 0.0);
        assert_relative_eq!(
            m.regression_value(&[1.0, 1.0, 0.0]).unwrap(),
            0.761_594_155_955_764_9,
            epsilon = 1e-14
        );
        assert!(m.regression_value(&[f64::NAN, 0.0, 0.0]).is_err());
        assert!(m.regression_value(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn noiseless_and_zero_sigma_return_the_mean() {
        let x = [0.3, -1.2, 0.7];
        let mut rng = rng::stream(1, "t");
        let m = SigmoidModel::standard_basis(3, vec![0.5, -0.5], 2.0, false, NoiseSpec::NOISELESS)
            .unwrap();
        assert_eq!(m.sample_value_oracle(&x, &mut rng), m.mean_response(&x));
        let m = SigmoidModel::standard_basis(3, vec![0.5, -0.5], 2.0, false, NoiseSpec::additive(0.0))
            .unwrap();
        assert_eq!(m.sample_value_oracle(&x, &mut rng), m.mean_response(&x));
    }

    #[test]
    fn binary_mixture_mean_matches_regression() {
        let m = SigmoidModel::standard_basis(3, vec![0.3, 0.7], 1.0, true, NoiseSpec::BINARY)
            .unwrap();
        let x = [0.4, -0.9, 2.0];
        let mut rng = rng::stream(42, "binary");
        let draws = 100_000;
        let ys: Vec<f64> = (0..draws).map(|_| m.sample_value_oracle(&x, &mut rng)).collect();
        assert!(ys.iter().all(|y| *y == 1.0 || *y == -1.0));
        let (mean, se) = crate::stats::mean_and_stderr(&ys);
        let r = m.mean_response(&x);
        assert!((mean - r).abs() <= 3.0 * se, "mean {mean} vs r {r} (se {se})");
    }

    #[test]
    fn additive_noise_is_bounded_and_centred() {
        let m = SigmoidModel::standard_basis(2, vec![0.6, -0.4], 1.5, false, NoiseSpec::additive(0.5))
            .unwrap();
        assert_relative_eq!(m.label_bound(), 1.0 + 1.5, epsilon = 1e-15);
        let x = [0.2, -0.1];
        let mut rng = rng::stream(3, "additive");
        let ys: Vec<f64> = (0..100_000).map(|_| m.sample_value_oracle(&x, &mut rng)).collect();
        assert!(ys.iter().all(|y| y.abs() <= m.label_bound()));
        let (mean, se) = crate::stats::mean_and_stderr(&ys);
        assert!((mean - m.mean_response(&x)).abs() <= 3.0 * se);
    }

    #[test]
    fn gaussian_dataset_moments_and_determinism() {
        let m = SigmoidModel::standard_basis(5, vec![0.5, 0.5], 1.0, true, NoiseSpec::BINARY)
            .unwrap();
        let a = sample_gaussian_dataset(&m, 1000, 9).unwrap();
        let b = sample_gaussian_dataset(&m, 1000, 9).unwrap();
        assert_eq!(a, b);
        for j in 0..5 {
            let mean: f64 = (0..a.len()).map(|i| a.x(i)[j]).sum::<f64>() / 1000.0;
            assert!(mean.abs() <= 4.0 / 1000f64.sqrt());
        }
        assert!(matches!(sample_gaussian_dataset(&m, 0, 9), Err(Error::EmptyDataset)));
    }

    #[test]
    fn model_json_round_trip() {
        let m = SigmoidModel::random(6, 3, 1.3, false, NoiseSpec::additive(0.2), 0.3, 5).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: SigmoidModel = serde_json::from_str(&json).unwrap();
        assert_eq!(m, back);
        assert!(json.contains("\"W\""));
    }

    #[test]
    fn random_models_respect_assumptions() {
        for seed in 0..20 {
            let m = SigmoidModel::random(6, 3, 1.0, seed % 2 == 0, NoiseSpec::NOISELESS, 0.3, seed)
                .unwrap();
            let report = m.validate();
            assert!(report.valid, "seed {seed}: {report:?}");
            assert!(report.sigma_min >= 0.3);
        }
    }
}
