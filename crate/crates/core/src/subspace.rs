//! Span estimation, projection and principal angles.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::GradientSource;
use crate::error::{Error, Result};
use crate::linalg::{axpy, column, dot, norm};
use crate::rng;

const ORTHONORMAL_TOL: f64 = 1e-10;
const RANK_REL_TOL: f64 = 1e-10;

/// A `d × k` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisDocument", into = "BasisDocument")]
pub struct SubspaceEstimate {
    basis: DMatrix<f64>,
    pub method: String,
    pub samples_used: usize,
    /// True when the estimate was rank deficient and completed at random.
    pub padded: bool,
}

#[derive(Serialize, Deserialize)]
struct BasisDocument {
    d: usize,
    k: usize,
    /// Column-major.
    basis: Vec<f64>,
    method: String,
    samples_used: usize,
    #[serde(default)]
    padded: bool,
}

impl From<SubspaceEstimate> for BasisDocument {
    fn from(s: SubspaceEstimate) -> Self {
        BasisDocument {
            d: s.basis.nrows(),
            k: s.basis.ncols(),
            basis: s.basis.as_slice().to_vec(),
            method: s.method,
            samples_used: s.samples_used,
            padded: s.padded,
        }
    }
}

impl TryFrom<BasisDocument> for SubspaceEstimate {
    type Error = Error;

    fn try_from(doc: BasisDocument) -> Result<Self> {
        if doc.basis.len() != doc.d * doc.k {
            return Err(Error::Structure("basis length does not match d * k".into()));
        }
        let mut s = SubspaceEstimate::from_matrix(
            DMatrix::from_column_slice(doc.d, doc.k, &doc.basis),
            &doc.method,
            doc.samples_used,
        )?;
        s.padded = doc.padded;
        Ok(s)
    }
}

impl SubspaceEstimate {
    /// Wraps a matrix that must already have orthonormal columns.
    pub fn from_matrix(basis: DMatrix<f64>, method: &str, samples_used: usize) -> Result<Self> {
        let k = basis.ncols();
        if k == 0 || basis.nrows() < k {
            return Err(Error::Structure(format!(
                "basis must be d x k with 1 <= k <= d, got {} x {k}",
                basis.nrows()
            )));
        }
        let gram = basis.transpose() * &basis;
        let deviation = (gram - DMatrix::<f64>::identity(k, k)).abs().max();
        if deviation > ORTHONORMAL_TOL {
            return Err(Error::Domain(format!(
                "basis columns are not orthonormal (deviation {deviation:.3e})"
            )));
        }
        Ok(Self {
            basis,
            method: method.to_string(),
            samples_used,
            padded: false,
        })
    }

    /// Orthonormal basis for the column span of a full-rank matrix.
    pub fn from_span(m: &DMatrix<f64>) -> Result<Self> {
        let k = m.ncols();
        let q = m.clone().qr().q();
        let basis = q.columns(0, k).into_owned();
        let s = Self::from_matrix(basis, "exact", 0)?;
        if crate::linalg::sigma_min(m) <= RANK_REL_TOL {
            return Err(Error::Domain("matrix is rank deficient".into()));
        }
        Ok(s)
    }

    pub fn d(&self) -> usize {
        self.basis.nrows()
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn column(&self, j: usize) -> &[f64] {
        column(&self.basis, j)
    }

    /// `P̂ᵀx`.
    pub fn coordinates(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k()).map(|j| dot(self.column(j), x)).collect()
    }

    /// `P̂v` for coordinates `v`.
    pub fn lift(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d()];
        for (j, &c) in v.iter().enumerate() {
            axpy(&mut out, c, self.column(j));
        }
        out
    }

    /// `P̂P̂ᵀx`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.lift(&self.coordinates(x))
    }
}

/// Projection of `x` onto the span of `basis` and its coordinates.
pub fn project(basis: &SubspaceEstimate, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let coords = basis.coordinates(x);
    (basis.lift(&coords), coords)
}

/// Principal angles between two subspaces of equal dimension, ascending.
///
/// Cosines come from the singular values of `AᵀB` and sines from those of
/// `B − A(AᵀB)`; each angle uses whichever is better conditioned.
pub fn principal_angles(a: &SubspaceEstimate, b: &SubspaceEstimate) -> Result<Vec<f64>> {
    if a.d() != b.d() || a.k() != b.k() {
        return Err(Error::Structure(format!(
            "subspace shapes differ: {} x {} vs {} x {}",
            a.d(),
            a.k(),
            b.d(),
            b.k()
        )));
    }
    let cross = a.matrix().transpose() * b.matrix();
    let residual = b.matrix() - a.matrix() * &cross;
    let mut cosines: Vec<f64> = cross
        .singular_values()
        .iter()
        .map(|c| c.clamp(0.0, 1.0))
        .collect();
    let mut sines: Vec<f64> = residual
        .singular_values()
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    cosines.sort_by(|x, y| y.total_cmp(x));
    sines.sort_by(f64::total_cmp);
    Ok(cosines
        .iter()
        .zip(&sines)
        .map(|(&c, &s)| {
            if c > std::f64::consts::FRAC_1_SQRT_2 {
                s.asin()
            } else {
                c.acos()
            }
        })
        .collect())
}

/// Largest principal angle, the subspace distance used for span estimates.
pub fn largest_angle(a: &SubspaceEstimate, b: &SubspaceEstimate) -> Result<f64> {
    Ok(principal_angles(a, b)?.last().copied().unwrap_or(0.0))
}

/// Top-`k` left singular directions of the stacked gradient vectors.
/// A rank-deficient stack is completed with random orthonormal directions
/// and flagged as padded.
pub fn span_from_gradients(
    gradients: &[Vec<f64>],
    d: usize,
    k: usize,
    seed: u64,
) -> Result<SubspaceEstimate> {
    if k == 0 || k > d {
        return Err(Error::Structure(format!("need 1 <= k <= d, got k = {k}, d = {d}")));
    }
    if gradients.iter().any(|g| g.len() != d) {
        return Err(Error::Structure("gradient dimensions differ".into()));
    }
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k);
    if !gradients.is_empty() {
        let flat: Vec<f64> = gradients.iter().flatten().copied().collect();
        let stack = DMatrix::from_column_slice(d, gradients.len(), &flat);
        let svd = stack.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| {
            svd.singular_values[j]
                .total_cmp(&svd.singular_values[i])
                .then(i.cmp(&j))
        });
        let top = order.first().map_or(0.0, |&i| svd.singular_values[i]);
        for &i in order.iter().take(k) {
            if svd.singular_values[i] > RANK_REL_TOL * top && top > 0.0 {
                columns.push(u.column(i).iter().copied().collect());
            }
        }
    }
    let padded = columns.len() < k;
    if padded {
        eprintln!(
            "warning: gradient stack has rank {} < k = {k}; completing the basis at random",
            columns.len()
        );
        let mut rng = rng::stream(seed, "span-padding");
        while columns.len() < k {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for _ in 0..2 {
                for c in &columns {
                    let p = dot(c, &v);
                    axpy(&mut v, -p, c);
                }
            }
            let n = norm(&v);
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                columns.push(v);
            }
        }
    }
    let flat: Vec<f64> = columns.iter().flatten().copied().collect();
    let mut estimate = SubspaceEstimate::from_matrix(
        DMatrix::from_column_slice(d, k, &flat),
        "gradient-svd",
        gradients.len(),
    )?;
    estimate.padded = padded;
    Ok(estimate)
}

/// Estimates the span of the parameter vectors from gradient estimates at
/// `probes` points drawn from `N(0, xi0² I)`.
pub fn estimate_span(
    source: &dyn GradientSource,
    k: usize,
    probes: usize,
    xi0: f64,
    seed: u64,
) -> Result<SubspaceEstimate> {
    let d = source.dim();
    let gradients: Result<Vec<Vec<f64>>> = (0..probes as u64)
        .into_par_iter()
        .map(|i| {
            let mut probe_rng = rng::substream(seed, "span-probe", i);
            let xi: Vec<f64> = (0..d)
                .map(|_| xi0 * probe_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut est_rng = rng::substream(seed, "span-estimate", i);
            Ok(source.estimate(&xi, &mut est_rng)?.w)
        })
        .collect();
    let mut estimate = span_from_gradients(&gradients?, d, k, seed)?;
    estimate.samples_used = source.samples_used();
    Ok(estimate)
}

/// Admissible principal-angle budget for the projected pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleBudget {
    pub theta: f64,
    pub theta_star: f64,
    pub feasible: bool,
    /// `κ′ = √(κ² − (4k sin(θ/2))²)`, absent when the radicand is negative.
    pub kappa_prime: Option<f64>,
}

pub fn angle_budget(theta: f64, k: usize, kappa: f64, u0: f64, delta: f64) -> Result<AngleBudget> {
    if !(theta >= 0.0 && kappa > 0.0 && u0 > 0.0 && delta > 0.0 && k > 0) {
        return Err(Error::Domain("angle budget inputs must be positive".into()));
    }
    let kf = k as f64;
    let arg1 = (3f64.sqrt() * kappa / (8.0 * kf)).min(1.0);
    let arg2 = (delta * delta / (4.0 * kf)).min(1.0);
    let theta_star = (2.0 * arg1.asin()).min(2.0 * arg2.asin()).min(u0 * kappa);
    let spread = 4.0 * kf * (theta / 2.0).sin();
    let radicand = kappa * kappa - spread * spread;
    let kappa_prime = (radicand >= 0.0).then(|| radicand.sqrt());
    Ok(AngleBudget {
        theta,
        theta_star,
        feasible: theta <= theta_star && kappa_prime.is_some(),
        kappa_prime,
    })
}

/// A random orthonormal basis at a small random rotation from `basis`:
/// each column is perturbed by Gaussian noise of scale `eps` and the result
/// is re-orthonormalized.
pub fn perturbed_basis(basis: &SubspaceEstimate, eps: f64, seed: u64) -> SubspaceEstimate {
    let mut rng = rng::stream(seed, "perturb");
    let noise = DMatrix::from_fn(basis.d(), basis.k(), |_, _| eps * rng.sample::<f64, _>(StandardNormal));
    let moved = basis.matrix() + noise;
    let mut s = SubspaceEstimate::from_span(&moved).expect("small perturbation keeps full rank");
    s.method = "perturbed".into();
    s
}
