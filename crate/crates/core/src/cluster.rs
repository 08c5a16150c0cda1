//! Spherical k-means on unit candidates.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, normalized};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Treat `v` and `−v` as the same point.
    pub antipodal: bool,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            antipodal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
    pub seed: u64,
    pub antipodal: bool,
}

fn dissimilarity(p: &[f64], c: &[f64], antipodal: bool) -> f64 {
    let cos = dot(p, c);
    if antipodal {
        1.0 - cos.abs()
    } else {
        1.0 - cos
    }
}

fn nearest(p: &[f64], centers: &[Vec<f64>], antipodal: bool) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let dist = dissimilarity(p, c, antipodal);
        if dist < best.1 {
            best = (j, dist);
        }
    }
    best
}

/// Greedy k-means++ seeding on the `1 − cos` dissimilarity: each new center
/// is the best of `2 + ⌊ln k⌋` draws proportional to the current distances.
fn seed_centers(points: &[Vec<f64>], k: usize, antipodal: bool, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(seed, "kmeans-seed");
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| dissimilarity(p, &centers[0], antipodal).max(0.0))
        .collect();
    let trials = 2 + (k as f64).ln().floor() as usize;
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total <= 0.0 {
            (0..n).find(|&i| !centers.iter().any(|c| c == &points[i])).unwrap_or(0)
        } else {
            let mut best: Option<(usize, f64)> = None;
            for _ in 0..trials {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut choice = n - 1;
                for (i, &v) in dist.iter().enumerate() {
                    acc += v;
                    if acc > target {
                        choice = i;
                        break;
                    }
                }
                let potential: f64 = points
                    .iter()
                    .zip(&dist)
                    .map(|(p, &v)| v.min(dissimilarity(p, &points[choice], antipodal).max(0.0)))
                    .sum();
                if best.is_none_or(|(_, b)| potential < b) {
                    best = Some((choice, potential));
                }
            }
            best.expect("at least one trial").0
        };
        centers.push(points[pick].clone());
        for (p, v) in points.iter().zip(dist.iter_mut()) {
            *v = v.min(dissimilarity(p, &points[pick], antipodal).max(0.0));
        }
    }
    centers
}

/// k-means on the unit sphere with cosine dissimilarity.
///
/// Centers are normalized means of their members (sign-aligned in
/// antipodal mode). An empty cluster is reseeded to the point farthest
/// from its assigned center, lowest index first.
pub fn spherical_kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ClusterResult> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::Config(format!(
            "spherical k-means needs at least k = {k} points, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Structure("candidate dimensions differ".into()));
    }
    let antipodal = opts.antipodal;
    let mut centers = seed_centers(points, k, antipodal, seed);
    let mut assignments = vec![0usize; points.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let nearest_all: Vec<(usize, f64)> = points
            .par_iter()
            .map(|p| nearest(p, &centers, antipodal))
            .collect();
        let mut dists: Vec<f64> = Vec::with_capacity(points.len());
        for (i, (j, dist)) in nearest_all.into_iter().enumerate() {
            assignments[i] = j;
            dists.push(dist);
        }
        let mut counts = vec![0usize; k];
        for &j in &assignments {
            counts[j] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let mut far = (usize::MAX, f64::NEG_INFINITY);
            for (i, &dist) in dists.iter().enumerate() {
                if counts[assignments[i]] > 1 && dist > far.1 {
                    far = (i, dist);
                }
            }
            if far.0 == usize::MAX {
                continue;
            }
            counts[assignments[far.0]] -= 1;
            counts[j] = 1;
            assignments[far.0] = j;
            centers[j] = points[far.0].clone();
            dists[far.0] = 0.0;
        }
        let inertia: f64 = dists.iter().sum();
        let previous = history.last().copied();
        history.push(inertia);

        let mut sums = vec![vec![0.0; d]; k];
        for (p, &j) in points.iter().zip(&assignments) {
            let sign = if antipodal && dot(p, &centers[j]) < 0.0 { -1.0 } else { 1.0 };
            axpy(&mut sums[j], sign, p);
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if let Some(unit) = normalized(s) {
                *c = unit;
            }
        }
        let converged = previous.is_some_and(|prev| prev - inertia <= opts.tol);
        if converged || iterations >= opts.max_iter {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(p, &j)| dissimilarity(p, &centers[j], antipodal))
        .sum();
    Ok(ClusterResult {
        centers,
        assignments,
        inertia,
        inertia_history: history,
        iterations,
        seed,
        antipodal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn noisy_cloud(centers: &[Vec<f64>], per: usize, noise: f64, seed: u64, flip: bool) -> Vec<Vec<f64>> {
        let mut rng = rng::stream(seed, "cloud");
        let mut out = Vec::new();
        for c in centers {
            for i in 0..per {
                let mut v: Vec<f64> = c
                    .iter()
                    .map(|x| x + noise * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if flip && i % 2 == 1 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                out.push(normalized(&v).unwrap());
            }
        }
        out
    }

    #[test]
    fn separated_point_masses() {
        let mut pts = vec![vec![1.0, 0.0, 0.0]; 30];
        pts.extend(vec![vec![0.0, 1.0, 0.0]; 30]);
        let r = spherical_kmeans(&pts, 2, 4, &KMeansOptions::default()).unwrap();
        let mut centers = r.centers.clone();
        centers.sort_by(|a, b| b[0].total_cmp(&a[0]));
        assert_eq!(centers, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn duplicated_points_give_same_centers() {
        let truth = vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        let pts = noisy_cloud(&truth, 40, 0.1, 1, false);
        let doubled: Vec<Vec<f64>> = pts.iter().flat_map(|p| [p.clone(), p.clone()]).collect();
        let a = spherical_kmeans(&pts, 2, 3, &KMeansOptions::default()).unwrap();
        let b = spherical_kmeans(&doubled, 2, 3, &KMeansOptions::default()).unwrap();
        let sort = |mut c: Vec<Vec<f64>>| {
            c.sort_by(|x, y| y[0].total_cmp(&x[0]));
            c
        };
        for (x, y) in sort(a.centers).iter().zip(&sort(b.centers)) {
            for (p, q) in x.iter().zip(y) {
                assert_relative_eq!(p, q, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_cluster_is_normalized_mean() {
        let pts = noisy_cloud(&[vec![0.6, 0.8, 0.0]], 25, 0.3, 2, false);
        let r = spherical_kmeans(&pts, 1, 0, &KMeansOptions::default()).unwrap();
        let mut mean = vec![0.0; 3];
        for p in &pts {
            axpy(&mut mean, 1.0, p);
        }
        let expected = normalized(&mean).unwrap();
        for (a, b) in r.centers[0].iter().zip(&expected) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn too_few_points() {
        let pts = vec![vec![1.0, 0.0]];
        assert!(spherical_kmeans(&pts, 2, 0, &KMeansOptions::default()).is_err());
    }

    #[test]
    fn antipodal_mode_merges_opposite_points() {
        let truth = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let pts = noisy_cloud(&truth, 40, 0.05, 7, true);
        let opts = KMeansOptions {
            antipodal: true,
            ..Default::default()
        };
        let r = spherical_kmeans(&pts, 2, 1, &opts).unwrap();
        for t in &truth {
            assert!(r.centers.iter().any(|c| dot(c, t).abs() > 0.99));
        }
    }

    proptest! {
        #[test]
        fn inertia_is_monotone(seed in 0u64..500, k in 1usize..5, antipodal in proptest::bool::ANY) {
            let truth = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
            let pts = noisy_cloud(&truth, 15, 0.6, seed, antipodal);
            let opts = KMeansOptions { antipodal, ..Default::default() };
            let r = spherical_kmeans(&pts, k, seed, &opts).unwrap();
            for w in r.inertia_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
            prop_assert!(r.assignments.iter().all(|&a| a < k));
            for c in &r.centers {
                prop_assert!((crate::linalg::norm(c) - 1.0).abs() <= 1e-12);
            }
        }
    }
}
