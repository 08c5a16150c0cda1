//! Candidate generation: gradient estimates at random probes, filtered by
//! norm, plus the region and partition diagnostics that need ground truth.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{
    estimate_gradient_kernel, estimate_gradient_oracle, smoothed_gradient, EstimatorKind,
    GradientEstimate, ProjectedDataset,
};
use crate::linalg::{distance, dot, normalized};
use crate::model::{Dataset, SigmoidModel};
use crate::params::AlgoParams;
use crate::rng::{self, Rng};

/// Anything that can produce a gradient estimate at a probe point.
pub trait GradientSource: Sync {
    fn dim(&self) -> usize;
    fn kind(&self) -> EstimatorKind;
    /// Samples consumed per estimate (oracle) or shared dataset size.
    fn samples_used(&self) -> usize;
    fn estimate(&self, xi: &[f64], rng: &mut Rng) -> Result<GradientEstimate>;
}

/// Value-oracle estimator with `n0` fresh queries per probe.
pub struct OracleSource<'a> {
    pub model: &'a SigmoidModel,
    pub n0: usize,
}

impl GradientSource for OracleSource<'_> {
    fn dim(&self) -> usize {
        self.model.d()
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Oracle
    }
    fn samples_used(&self) -> usize {
        self.n0
    }
    fn estimate(&self, xi: &[f64], rng: &mut Rng) -> Result<GradientEstimate> {
        estimate_gradient_oracle(self.model, xi, self.n0, rng)
    }
}

/// Kernel estimator over one shared dataset.
pub struct KernelSource<'a> {
    pub dataset: &'a Dataset,
}

impl GradientSource for KernelSource<'_> {
    fn dim(&self) -> usize {
        self.dataset.d()
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Kernel
    }
    fn samples_used(&self) -> usize {
        self.dataset.len()
    }
    fn estimate(&self, xi: &[f64], _rng: &mut Rng) -> Result<GradientEstimate> {
        estimate_gradient_kernel(self.dataset, xi)
    }
}

impl GradientSource for ProjectedDataset<'_> {
    fn dim(&self) -> usize {
        self.basis().d()
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Projected
    }
    fn samples_used(&self) -> usize {
        self.len()
    }
    fn estimate(&self, xi: &[f64], _rng: &mut Rng) -> Result<GradientEstimate> {
        ProjectedDataset::estimate(self, xi)
    }
}

/// Exact smoothed gradient, useful as a noise-free reference source.
pub struct SmoothedSource<'a> {
    pub model: &'a SigmoidModel,
}

impl GradientSource for SmoothedSource<'_> {
    fn dim(&self) -> usize {
        self.model.d()
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Smoothed
    }
    fn samples_used(&self) -> usize {
        0
    }
    fn estimate(&self, xi: &[f64], _rng: &mut Rng) -> Result<GradientEstimate> {
        Ok(smoothed_gradient(self.model, xi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub xi: Vec<f64>,
    pub w_raw: Vec<f64>,
    pub norm: f64,
    pub retained: bool,
    pub w_unit: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    /// Threshold actually applied.
    pub w0: f64,
    pub max_norm: f64,
    pub estimator: EstimatorKind,
    pub samples_used: usize,
}

impl CandidateSet {
    pub fn retained(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.retained)
    }

    pub fn retained_count(&self) -> usize {
        self.retained().count()
    }

    pub fn retained_indices(&self) -> Vec<usize> {
        self.retained().map(|c| c.index).collect()
    }

    /// Unit directions of retained candidates, in probe order.
    pub fn unit_vectors(&self) -> Vec<Vec<f64>> {
        self.retained()
            .map(|c| c.w_unit.clone().expect("retained candidates are normalized"))
            .collect()
    }

    /// The `count` largest-norm retained candidates, ties broken by index.
    pub fn top_by_norm(&self, count: usize) -> Vec<&Candidate> {
        let mut kept: Vec<&Candidate> = self.retained().collect();
        kept.sort_by(|a, b| b.norm.total_cmp(&a.norm).then(a.index.cmp(&b.index)));
        kept.truncate(count);
        kept
    }

    pub fn norms(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.norm).collect()
    }

    /// Reapplies an absolute threshold to the same estimates.
    pub fn rethreshold(&self, w0: f64) -> Result<CandidateSet> {
        let estimates: Vec<(Vec<f64>, Vec<f64>)> = self
            .candidates
            .iter()
            .map(|c| (c.xi.clone(), c.w_raw.clone()))
            .collect();
        assemble(estimates, w0, self.estimator, self.samples_used)
    }
}

fn assemble(
    estimates: Vec<(Vec<f64>, Vec<f64>)>,
    w0: f64,
    estimator: EstimatorKind,
    samples_used: usize,
) -> Result<CandidateSet> {
    let mut max_norm = 0.0f64;
    let candidates: Vec<Candidate> = estimates
        .into_iter()
        .enumerate()
        .map(|(index, (xi, w_raw))| {
            let norm = crate::linalg::norm(&w_raw);
            max_norm = max_norm.max(norm);
            let retained = norm >= w0 && norm > 0.0;
            let w_unit = if retained { normalized(&w_raw) } else { None };
            Candidate {
                index,
                xi,
                w_raw,
                norm,
                retained: w_unit.is_some(),
                w_unit,
            }
        })
        .collect();
    let set = CandidateSet {
        candidates,
        w0,
        max_norm,
        estimator,
        samples_used,
    };
    if set.retained_count() == 0 {
        return Err(Error::EmptyCandidates { w0, max_norm });
    }
    Ok(set)
}

/// Probe `i` under `seed`: `ξ ~ N(0, ξ₀² I)`.
pub fn probe_point(seed: u64, index: u64, d: usize, xi0: f64) -> Vec<f64> {
    let mut rng = rng::substream(seed, "probe", index);
    (0..d)
        .map(|_| xi0 * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draws `params.m0` probes, estimates a gradient at each, and keeps those
/// whose norm reaches the resolved threshold, normalized to unit length.
pub fn generate_candidates(
    source: &dyn GradientSource,
    params: &AlgoParams,
    seed: u64,
) -> Result<CandidateSet> {
    if params.m0 == 0 {
        return Err(Error::Config("m0 must be at least 1".into()));
    }
    let d = source.dim();
    let estimates: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..params.m0 as u64)
        .into_par_iter()
        .map(|i| {
            let xi = probe_point(seed, i, d, params.xi0);
            let mut rng = rng::substream(seed, "estimate", i);
            let g = source.estimate(&xi, &mut rng)?;
            if g.w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient estimate at probe {i}")));
            }
            Ok((g.xi, g.w))
        })
        .collect();
    let estimates = estimates?;
    let norms: Vec<f64> = estimates.iter().map(|(_, w)| crate::linalg::norm(w)).collect();
    let w0 = params.threshold.resolve(&norms);
    assemble(estimates, w0, source.kind(), source.samples_used())
}

/// Region of a probe relative to the band `|⟨w^ℓ, ξ⟩| < Δ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    /// No inner product below the band.
    Zero,
    /// Exactly unit `ℓ` (0-based) below the band.
    Single(usize),
    /// Two or more below the band.
    Multiple,
}

impl Serialize for Region {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Region::Zero => s.serialize_str("R0"),
            Region::Single(l) => s.serialize_str(&format!("R{}", l + 1)),
            Region::Multiple => s.serialize_str("R*"),
        }
    }
}

impl<'de> Deserialize<'de> for Region {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "R0" => Ok(Region::Zero),
            "R*" => Ok(Region::Multiple),
            other => other
                .strip_prefix('R')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(|n| Region::Single(n - 1))
                .ok_or_else(|| serde::de::Error::custom(format!("bad region label {other}"))),
        }
    }
}

pub fn classify_region(model: &SigmoidModel, xi: &[f64], band: f64) -> Region {
    let mut inside = (0..model.k()).filter(|&l| dot(model.unit(l), xi).abs() < band);
    match (inside.next(), inside.next()) {
        (None, _) => Region::Zero,
        (Some(l), None) => Region::Single(l),
        _ => Region::Multiple,
    }
}

pub fn classify_regions(model: &SigmoidModel, probes: &[Vec<f64>], band: f64) -> Vec<Region> {
    probes.iter().map(|xi| classify_region(model, xi, band)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Spurious candidates.
    pub c0: Vec<usize>,
    /// `clusters[ℓ]` holds the candidates attributed to unit `ℓ` (0-based).
    pub clusters: Vec<Vec<usize>>,
    /// Region of every probe, retained or not.
    pub region_labels: Vec<Region>,
    /// Largest `‖w̃ − sign(u_ℓ) w^ℓ‖` over each cluster.
    pub max_distance: Vec<Option<f64>>,
    pub band: f64,
    pub w0: f64,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    /// True iff the sets are pairwise disjoint and cover `retained` exactly.
    pub fn is_exact(&self, retained: &[usize]) -> bool {
        let mut all: Vec<usize> = self.c0.clone();
        for c in &self.clusters {
            all.extend(c);
        }
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        let mut expected = retained.to_vec();
        expected.sort_unstable();
        all.len() == total && all == expected
    }
}

/// Splits the retained candidates into `C₀, C₁, …, C_k`.
///
/// Candidate `i` joins `C_ℓ` when its probe lies in the single-unit region
/// of `ℓ` and its estimate is within `δ w₀` of the smoothed gradient;
/// every other retained candidate is spurious.
pub fn partition_candidates(
    set: &CandidateSet,
    model: &SigmoidModel,
    params: &AlgoParams,
) -> Partition {
    let k = model.k();
    let region_labels: Vec<Region> = set
        .candidates
        .iter()
        .map(|c| classify_region(model, &c.xi, params.band))
        .collect();
    let tolerance = params.delta * set.w0;
    let mut c0 = Vec::new();
    let mut clusters = vec![Vec::new(); k];
    let mut max_distance: Vec<Option<f64>> = vec![None; k];
    for c in set.retained() {
        let target = match region_labels[c.index] {
            Region::Single(l) => {
                let wbar = smoothed_gradient(model, &c.xi).w;
                (distance(&c.w_raw, &wbar) <= tolerance).then_some(l)
            }
            _ => None,
        };
        match target {
            Some(l) => {
                let sign = model.weights()[l].signum();
                let unit = c.w_unit.as_ref().expect("retained candidates are normalized");
                let truth: Vec<f64> = model.unit(l).iter().map(|v| sign * v).collect();
                let dist = distance(unit, &truth);
                max_distance[l] = Some(max_distance[l].map_or(dist, |m: f64| m.max(dist)));
                clusters[l].push(c.index);
            }
            None => c0.push(c.index),
        }
    }
    Partition {
        c0,
        clusters,
        region_labels,
        max_distance,
        band: params.band,
        w0: set.w0,
    }
}
