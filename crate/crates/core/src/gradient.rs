//! Exact, smoothed and estimated gradients of the regression function.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::model::{Dataset, SigmoidModel};
use crate::quadrature::strip_expectation;
use crate::rng::Rng;
use crate::special::normal_cdf;
use crate::subspace::SubspaceEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Population,
    Smoothed,
    Oracle,
    Kernel,
    Projected,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            EstimatorKind::Population => "population",
            EstimatorKind::Smoothed => "smoothed",
            EstimatorKind::Oracle => "oracle",
            EstimatorKind::Kernel => "kernel",
            EstimatorKind::Projected => "projected",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub xi: Vec<f64>,
    pub w: Vec<f64>,
    pub norm: f64,
    pub estimator: EstimatorKind,
    pub samples_used: usize,
}

impl GradientEstimate {
    pub fn new(xi: Vec<f64>, w: Vec<f64>, estimator: EstimatorKind, samples_used: usize) -> Self {
        let norm = norm(&w);
        Self {
            xi,
            w,
            norm,
            estimator,
            samples_used,
        }
    }

    /// `z_ℓ = ⟨w^ℓ, ξ⟩` for every unit of `model`.
    pub fn inner_products(&self, model: &SigmoidModel) -> Vec<f64> {
        model.inner_products(&self.xi)
    }
}

/// `f′(x) = β sech²(βx)`, evaluated as `4βe^{−2β|x|}/(1+e^{−2β|x|})²`.
pub fn fprime(beta: f64, x: f64) -> f64 {
    let e = (-2.0 * beta * x.abs()).exp();
    4.0 * beta * e / ((1.0 + e) * (1.0 + e))
}

/// Pointwise envelope `(βe^{−2β|x|}, 4βe^{−2β|x|})` of `f′`.
pub fn fprime_pointwise_bounds(beta: f64, x: f64) -> (f64, f64) {
    let e = (-2.0 * beta * x.abs()).exp();
    (beta * e, 4.0 * beta * e)
}

/// `c₁(β) = βΦ(−2β)e^{2β²}`.
pub fn c1(beta: f64) -> f64 {
    beta * normal_cdf(-2.0 * beta) * (2.0 * beta * beta).exp()
}

/// `c₂(β) = 8βe^{2β²}`.
pub fn c2(beta: f64) -> f64 {
    8.0 * beta * (2.0 * beta * beta).exp()
}

/// Lower and upper bounds on `E f′(z + Z)`, `Z ~ N(0, 1)`.
pub fn fprime_bounds(beta: f64, z: f64) -> (f64, f64) {
    let decay = (-2.0 * beta * z.abs()).exp();
    (c1(beta) * decay, c2(beta) * decay)
}

/// Distance from the real axis to the nearest pole of `tanh(βt)`.
pub fn analytic_strip(beta: f64) -> f64 {
    std::f64::consts::FRAC_PI_2 / beta
}

/// `E f′(z + Z)` with `Z ~ N(0, 1)`.
pub fn smoothed_coefficient(beta: f64, z: f64) -> f64 {
    strip_expectation(analytic_strip(beta), |t| fprime(beta, z + t))
}

/// `E tanh(β(z + Z))` with `Z ~ N(0, 1)`.
pub fn smoothed_tanh(beta: f64, z: f64) -> f64 {
    strip_expectation(analytic_strip(beta), |t| (beta * (z + t)).tanh())
}

fn combine(model: &SigmoidModel, coefficients: impl Fn(f64) -> f64, xi: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; model.d()];
    for (l, &u) in model.weights().iter().enumerate() {
        let z = dot(model.unit(l), xi);
        axpy(&mut w, u * coefficients(z), model.unit(l));
    }
    w
}

/// `∇r(ξ) = Σ u_ℓ f′(⟨w^ℓ,ξ⟩) w^ℓ`.
pub fn population_gradient(model: &SigmoidModel, xi: &[f64]) -> GradientEstimate {
    let beta = model.beta();
    let w = combine(model, |z| fprime(beta, z), xi);
    GradientEstimate::new(xi.to_vec(), w, EstimatorKind::Population, 0)
}

/// `w̄(ξ) = Σ u_ℓ E f′(⟨w^ℓ,ξ⟩ + Z) w^ℓ`, the mean of both estimators.
pub fn smoothed_gradient(model: &SigmoidModel, xi: &[f64]) -> GradientEstimate {
    let beta = model.beta();
    let w = combine(model, |z| smoothed_coefficient(beta, z), xi);
    GradientEstimate::new(xi.to_vec(), w, EstimatorKind::Smoothed, 0)
}

/// Oracle estimator `(1/n0) Σ (x − ξ) y` with `x ~ N(ξ, I)` and labels
/// from the model's value oracle.
pub fn estimate_gradient_oracle(
    model: &SigmoidModel,
    xi: &[f64],
    n0: usize,
    rng: &mut Rng,
) -> Result<GradientEstimate> {
    estimate_gradient_oracle_with(xi, n0, rng, |x, rng| model.sample_value_oracle(x, rng))
}

/// Oracle estimator with an arbitrary labeling function.
pub fn estimate_gradient_oracle_with(
    xi: &[f64],
    n0: usize,
    rng: &mut Rng,
    mut label: impl FnMut(&[f64], &mut Rng) -> f64,
) -> Result<GradientEstimate> {
    if n0 == 0 {
        return Err(Error::Config("n0 must be at least 1".into()));
    }
    let d = xi.len();
    let mut w = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let mut x = vec![0.0; d];
    for _ in 0..n0 {
        for j in 0..d {
            noise[j] = rng.sample(StandardNormal);
            x[j] = xi[j] + noise[j];
        }
        let y = label(&x, rng);
        axpy(&mut w, y, &noise);
    }
    let scale = 1.0 / n0 as f64;
    w.iter_mut().for_each(|v| *v *= scale);
    Ok(GradientEstimate::new(xi.to_vec(), w, EstimatorKind::Oracle, n0))
}

/// Kernel estimate from explicit log-weights `log K_i`.
///
/// `xs` is row-major with `ys.len()` rows of width `d`.
pub fn kernel_from_log_weights(d: usize, xs: &[f64], ys: &[f64], log_weights: &[f64]) -> Vec<f64> {
    let shift = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = log_weights.iter().map(|l| (l - shift).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut barycenter = vec![0.0; d];
    for (i, &k) in weights.iter().enumerate() {
        axpy(&mut barycenter, k, &xs[i * d..(i + 1) * d]);
    }
    barycenter.iter_mut().for_each(|v| *v /= total);
    let mut w = vec![0.0; d];
    for (i, &k) in weights.iter().enumerate() {
        let ky = k * ys[i];
        if ky == 0.0 {
            continue;
        }
        for j in 0..d {
            w[j] += ky * (xs[i * d + j] - barycenter[j]);
        }
    }
    w.iter_mut().for_each(|v| *v /= total);
    w
}

fn kernel_raw(d: usize, xs: &[f64], ys: &[f64], xi: &[f64]) -> Vec<f64> {
    let log_weights: Vec<f64> = xs.chunks_exact(d).map(|x| dot(xi, x)).collect();
    kernel_from_log_weights(d, xs, ys, &log_weights)
}

/// Kernel estimator with weights `exp⟨ξ, x⟩` over a Gaussian-covariates
/// dataset: `Σ K y (x − x̄(ξ)) / Σ K` with `x̄(ξ)` the weighted barycenter.
pub fn estimate_gradient_kernel(dataset: &Dataset, xi: &[f64]) -> Result<GradientEstimate> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(dataset.d(), xi)?;
    let w = kernel_raw(dataset.d(), dataset.covariates(), dataset.labels(), xi);
    Ok(GradientEstimate::new(
        xi.to_vec(),
        w,
        EstimatorKind::Kernel,
        dataset.len(),
    ))
}

fn check_dim(d: usize, xi: &[f64]) -> Result<()> {
    if xi.len() != d {
        return Err(Error::Structure(format!(
            "probe has dimension {} but data has d = {d}",
            xi.len()
        )));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("probe point".into()));
    }
    Ok(())
}

/// Dataset with covariates replaced by their coordinates in an estimated
/// subspace, computed once and shared across probes.
#[derive(Debug, Clone)]
pub struct ProjectedDataset<'a> {
    basis: &'a SubspaceEstimate,
    coords: Vec<f64>,
    ys: &'a [f64],
}

impl<'a> ProjectedDataset<'a> {
    pub fn new(dataset: &'a Dataset, basis: &'a SubspaceEstimate) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if basis.k() == 0 {
            return Err(Error::Structure("projection basis has no columns".into()));
        }
        if basis.d() != dataset.d() {
            return Err(Error::Structure(format!(
                "basis has d = {} but data has d = {}",
                basis.d(),
                dataset.d()
            )));
        }
        let mut coords = Vec::with_capacity(dataset.len() * basis.k());
        for i in 0..dataset.len() {
            coords.extend(basis.coordinates(dataset.x(i)));
        }
        Ok(Self {
            basis,
            coords,
            ys: dataset.labels(),
        })
    }

    pub fn basis(&self) -> &SubspaceEstimate {
        self.basis
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn estimate(&self, xi: &[f64]) -> Result<GradientEstimate> {
        check_dim(self.basis.d(), xi)?;
        let zeta = self.basis.coordinates(xi);
        let v = kernel_raw(self.basis.k(), &self.coords, self.ys, &zeta);
        Ok(GradientEstimate::new(
            xi.to_vec(),
            self.basis.lift(&v),
            EstimatorKind::Projected,
            self.len(),
        ))
    }
}

/// Kernel estimator applied to projections onto the span of `basis`.
/// The result lies in that span.
pub fn estimate_gradient_projected(
    dataset: &Dataset,
    basis: &SubspaceEstimate,
    xi: &[f64],
) -> Result<GradientEstimate> {
    ProjectedDataset::new(dataset, basis)?.estimate(xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseSpec;
    use crate::rng;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn unit_model(beta: f64) -> SigmoidModel {
        SigmoidModel::standard_basis(3, vec![1.0], beta, true, NoiseSpec::NOISELESS).unwrap()
    }

    #[test]
    fn fprime_closed_forms() {
        assert_eq!(fprime(1.0, 0.0), 1.0);
        assert_eq!(fprime(2.5, 0.0), 2.5);
        let sech = 1.0 / 3f64.cosh();
        assert_relative_eq!(fprime(1.0, 3.0), sech * sech, epsilon = 1e-15);
        let (lo, hi) = fprime_pointwise_bounds(1.0, 3.0);
        assert!(lo < fprime(1.0, 3.0) && fprime(1.0, 3.0) <= hi);
        assert_relative_eq!(lo, (-6f64).exp(), epsilon = 1e-17);
    }

    #[test]
    fn fprime_bounds_at_origin() {
        let (lo, hi) = fprime_bounds(1.0, 0.0);
        assert_relative_eq!(lo, 0.022_750_131_948_179_2 * 2f64.exp(), epsilon = 1e-12);
        assert_relative_eq!(lo, 0.168_102_001_223_170_6, max_relative = 1e-13);
        assert_relative_eq!(hi, 59.112_448_791_445_2, max_relative = 1e-13);
    }

    #[test]
    fn fprime_bounds_ratio_and_decay() {
        for beta in [0.5, 1.0, 2.0] {
            for z in [-3.0, 0.0, 1.7] {
                let (lo, hi) = fprime_bounds(beta, z);
                assert_relative_eq!(hi / lo, 8.0 / normal_cdf(-2.0 * beta), max_relative = 1e-12);
            }
        }
        let (lo0, hi0) = fprime_bounds(1.0, 0.0);
        let (lo5, hi5) = fprime_bounds(1.0, 5.0);
        assert_relative_eq!(lo5 / lo0, (-10f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(hi5 / hi0, (-10f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn population_gradient_examples() {
        let m = unit_model(1.0);
        let g = population_gradient(&m, &[0.0; 3]);
        assert_eq!(g.w, vec![1.0, 0.0, 0.0]);
        let g = population_gradient(&m, &[10.0, 0.3, -2.0]);
        assert!(g.w[0] <= 4.0 * (-20f64).exp());
        assert_eq!(&g.w[1..], &[0.0, 0.0]);
    }

    #[test]
    fn smoothed_gradient_at_origin_matches_independent_quadrature() {
        // Independent oracle: composite Simpson on the Gaussian density.
        let n = 20_000;
        let (a, b) = (-12.0, 12.0);
        let h = (b - a) / n as f64;
        let g = |t: f64| {
            let s = 1.0 / t.cosh();
            s * s * (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
        };
        let mut acc = g(a) + g(b);
        for i in 1..n {
            let t = a + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(t);
        }
        let oracle = acc * h / 3.0;
        let m = unit_model(1.0);
        let v = smoothed_gradient(&m, &[0.0; 3]).w[0];
        assert_relative_eq!(v, oracle, epsilon = 1e-12);
        // 30-digit adaptive quadrature reference.
        assert_relative_eq!(v, 0.605_705_509_602_158_8, epsilon = 1e-14);
        let (lo, hi) = fprime_bounds(1.0, 0.0);
        assert!(lo <= v && v <= hi);
    }

    #[test]
    fn smoothed_gradient_ignores_orthogonal_shifts() {
        let m = SigmoidModel::standard_basis(4, vec![0.5, -0.5], 1.0, false, NoiseSpec::NOISELESS)
            .unwrap();
        let a = smoothed_gradient(&m, &[0.3, -0.8, 0.0, 0.0]);
        let b = smoothed_gradient(&m, &[0.3, -0.8, 5.0, -7.0]);
        assert_eq!(a.w, b.w);
    }

    #[test]
    fn oracle_estimator_with_zero_labels_is_zero() {
        let mut rng = rng::stream(0, "zero");
        let g = estimate_gradient_oracle_with(&[1.0, 2.0], 50, &mut rng, |_, _| 0.0).unwrap();
        assert_eq!(g.w, vec![0.0, 0.0]);
        assert!(estimate_gradient_oracle_with(&[1.0], 0, &mut rng, |_, _| 0.0).is_err());
    }

    #[test]
    fn oracle_estimator_is_close_at_large_n0() {
        let m = unit_model(1.0);
        let mut rng = rng::stream(11, "oracle");
        let g = estimate_gradient_oracle(&m, &[0.0; 3], 100_000, &mut rng).unwrap();
        let target = smoothed_gradient(&m, &[0.0; 3]);
        for j in 0..3 {
            assert!((g.w[j] - target.w[j]).abs() < 0.05);
        }
    }

    #[test]
    fn oracle_estimator_error_scales_as_inverse_sqrt() {
        let m = unit_model(1.0);
        let xi = [0.2, 0.0, 0.0];
        let target = smoothed_gradient(&m, &xi).w;
        let rms = |batch: usize, label: &str| {
            let reps = 400;
            let mut total = 0.0;
            for r in 0..reps {
                let mut rng = rng::substream(5, label, r);
                let mut mean = vec![0.0; 3];
                for _ in 0..batch {
                    let g = estimate_gradient_oracle(&m, &xi, 20, &mut rng).unwrap();
                    axpy(&mut mean, 1.0 / batch as f64, &g.w);
                }
                total += crate::linalg::distance(&mean, &target).powi(2);
            }
            (total / reps as f64).sqrt()
        };
        let ratio = rms(100, "a") / rms(25, "b");
        assert!((ratio - 0.5).abs() <= 0.1, "ratio {ratio}");
    }

    #[test]
    fn kernel_single_sample_is_zero() {
        let ds = Dataset::from_parts(2, vec![0.4, -1.0], vec![1.0]).unwrap();
        let g = estimate_gradient_kernel(&ds, &[3.0, 1.0]).unwrap();
        assert_eq!(g.w, vec![0.0, 0.0]);
    }

    #[test]
    fn kernel_two_point_example() {
        let ds = Dataset::from_parts(2, vec![1.0, 0.0, -1.0, 0.0], vec![1.0, -1.0]).unwrap();
        let g = estimate_gradient_kernel(&ds, &[0.0, 0.0]).unwrap();
        assert_eq!(g.w, vec![1.0, 0.0]);
        assert_eq!(g.samples_used, 2);
    }

    #[test]
    fn kernel_is_invariant_to_log_weight_offsets() {
        let xs = vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5];
        let ys = vec![1.0, -0.5, 0.25];
        let base = vec![0.125, -2.5, 1.75];
        let shifted: Vec<f64> = base.iter().map(|l| l + 64.0).collect();
        assert_eq!(
            kernel_from_log_weights(2, &xs, &ys, &base),
            kernel_from_log_weights(2, &xs, &ys, &shifted)
        );
    }

    #[test]
    fn kernel_is_stable_for_large_probes() {
        let m = SigmoidModel::standard_basis(3, vec![0.5, 0.5], 1.0, true, NoiseSpec::BINARY)
            .unwrap();
        let mut ds = crate::model::sample_gaussian_dataset(&m, 500, 1).unwrap();
        let mut xs = ds.covariates().to_vec();
        xs[..3].copy_from_slice(&[10.0 * 3f64.sqrt(), 0.0, 0.0]);
        ds = Dataset::from_parts(3, xs, ds.labels().to_vec()).unwrap();
        let g = estimate_gradient_kernel(&ds, &[50.0, 0.0, 0.0]).unwrap();
        assert!(g.w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn projected_with_identity_basis_equals_kernel() {
        let m = SigmoidModel::standard_basis(3, vec![0.5, 0.5], 1.0, true, NoiseSpec::BINARY)
            .unwrap();
        let ds = crate::model::sample_gaussian_dataset(&m, 800, 3).unwrap();
        let basis = SubspaceEstimate::from_matrix(DMatrix::identity(3, 3), "identity", 0).unwrap();
        let xi = [0.7, -1.1, 0.4];
        let full = estimate_gradient_kernel(&ds, &xi).unwrap();
        let projected = estimate_gradient_projected(&ds, &basis, &xi).unwrap();
        assert_eq!(full.w, projected.w);
    }

    #[test]
    fn projected_output_lies_in_span_and_ignores_orthogonal_shift() {
        let m = SigmoidModel::standard_basis(4, vec![0.5, 0.5], 1.0, true, NoiseSpec::BINARY)
            .unwrap();
        let ds = crate::model::sample_gaussian_dataset(&m, 800, 4).unwrap();
        let s = 0.5f64.sqrt();
        let basis = SubspaceEstimate::from_matrix(
            DMatrix::from_column_slice(4, 2, &[s, s, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            "test",
            0,
        )
        .unwrap();
        let a = estimate_gradient_projected(&ds, &basis, &[0.3, 0.1, -0.2, 0.0]).unwrap();
        let b = estimate_gradient_projected(&ds, &basis, &[0.5, -0.1, -0.2, 3.0]).unwrap();
        for (x, y) in a.w.iter().zip(&b.w) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        let residual = crate::linalg::distance(&a.w, &basis.project(&a.w));
        assert!(residual <= 1e-10);
        assert!(ProjectedDataset::new(&ds, &basis).unwrap().len() == 800);
    }

    proptest! {
        #[test]
        fn population_gradient_lies_in_span(
            z in proptest::collection::vec(-4.0f64..4.0, 4),
            beta in 0.3f64..3.0,
        ) {
            let m = SigmoidModel::random(4, 2, beta, false, NoiseSpec::NOISELESS, 0.2, 17).unwrap();
            let g = population_gradient(&m, &z);
            let basis = SubspaceEstimate::from_span(m.matrix()).unwrap();
            let residual = crate::linalg::distance(&g.w, &basis.project(&g.w));
            prop_assert!(residual <= 1e-10);
            prop_assert!((g.norm - norm(&g.w)).abs() <= 1e-12);
        }

        #[test]
        fn coefficient_sandwich_holds(beta in 0.25f64..3.0, z in -6.0f64..6.0) {
            let v = smoothed_coefficient(beta, z);
            let (lo, hi) = fprime_bounds(beta, z);
            prop_assert!(lo < v && v < hi);
        }
    }
}
