//! Optimal matching of recovered centers to ground-truth vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::distance;
use crate::model::SigmoidModel;

/// Minimum-cost perfect assignment on a square cost matrix (Hungarian
/// method with potentials). Returns `assignment[row] = column`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays with a sentinel column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// `permutation[ℓ]` is the center matched to truth vector `ℓ`.
    pub permutation: Vec<usize>,
    pub signs: Vec<f64>,
    /// `‖ŵ^{π(ℓ)} − s_ℓ w^ℓ‖`.
    pub per_vector_error: Vec<f64>,
    pub max_error: f64,
    pub mean_error: f64,
    pub total_cost: f64,
}

/// Matches centers to arbitrary truth vectors.
pub fn match_vectors(centers: &[Vec<f64>], truth: &[Vec<f64>], sign_invariant: bool) -> Result<MatchReport> {
    let k = truth.len();
    if centers.len() != k || k == 0 {
        return Err(Error::Structure(format!(
            "expected {k} centers, got {}",
            centers.len()
        )));
    }
    let d = truth[0].len();
    if centers.iter().chain(truth).any(|v| v.len() != d) {
        return Err(Error::Structure("center and truth dimensions differ".into()));
    }
    let signed_cost = |l: usize, j: usize| -> (f64, f64) {
        let plus = distance(&centers[j], &truth[l]);
        if !sign_invariant {
            return (plus, 1.0);
        }
        let negated: Vec<f64> = truth[l].iter().map(|x| -x).collect();
        let minus = distance(&centers[j], &negated);
        if minus < plus {
            (minus, -1.0)
        } else {
            (plus, 1.0)
        }
    };
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|l| (0..k).map(|j| signed_cost(l, j).0).collect())
        .collect();
    let permutation = hungarian(&cost);
    let mut signs = Vec::with_capacity(k);
    let mut errors = Vec::with_capacity(k);
    for (l, &j) in permutation.iter().enumerate() {
        let (err, sign) = signed_cost(l, j);
        signs.push(sign);
        errors.push(err);
    }
    let total_cost: f64 = errors.iter().sum();
    Ok(MatchReport {
        permutation,
        signs,
        max_error: errors.iter().copied().fold(0.0, f64::max),
        mean_error: total_cost / k as f64,
        per_vector_error: errors,
        total_cost,
    })
}

/// Matches recovered centers to the model's parameter vectors.
pub fn match_to_truth(centers: &[Vec<f64>], model: &SigmoidModel, sign_invariant: bool) -> Result<MatchReport> {
    if centers.iter().any(|c| c.len() != model.d()) {
        return Err(Error::Structure(format!(
            "centers must have dimension d = {}",
            model.d()
        )));
    }
    let truth: Vec<Vec<f64>> = (0..model.k()).map(|l| model.unit(l).to_vec()).collect();
    match_vectors(centers, &truth, sign_invariant)
}
