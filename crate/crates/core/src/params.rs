//! Algorithm parameters: the theory-derived constants and the practical
//! regime used for desk-scale runs.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{c1, c2, smoothed_coefficient};
use crate::model::SigmoidModel;

/// Probe-count constant used for the theory regime `m₀ = ⌈(C/γρ) ln(k/δ)⌉`.
pub const THEORY_M0_CONSTANT: f64 = 64.0;
pub const PRACTICAL_M0_FLOOR: usize = 2000;
pub const PRACTICAL_M0_CAP: usize = 5000;
pub const DEFAULT_TOP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Theory,
    #[default]
    Practical,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Regime::Theory),
            "practical" => Ok(Regime::Practical),
            other => Err(Error::Config(format!(
                "unknown regime '{other}' (expected theory or practical)"
            ))),
        }
    }
}

/// Norm threshold rule. Quantile rules are resolved against the observed
/// norms after estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Absolute(f64),
    TopFraction(f64),
    TopCount(usize),
}

impl Threshold {
    /// Concrete `w₀` for a set of norms. Quantile rules return the smallest
    /// norm among the kept top group, so ties at the boundary are retained.
    pub fn resolve(&self, norms: &[f64]) -> f64 {
        let keep = match *self {
            Threshold::Absolute(w0) => return w0,
            Threshold::TopFraction(q) => ((q * norms.len() as f64).ceil() as usize).max(1),
            Threshold::TopCount(c) => c.max(1),
        };
        if norms.is_empty() {
            return f64::INFINITY;
        }
        let mut sorted = norms.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        sorted[keep.min(sorted.len()) - 1]
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Threshold::Absolute(w0) if !(w0 >= 0.0 && w0.is_finite()) => {
                Err(Error::Domain(format!("w0 must be finite and >= 0, got {w0}")))
            }
            Threshold::TopFraction(q) if !(q > 0.0 && q <= 1.0) => {
                Err(Error::Domain(format!("top fraction must lie in (0, 1], got {q}")))
            }
            Threshold::TopCount(0) => Err(Error::Domain("top count must be positive".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoParams {
    pub regime: Regime,
    pub delta: f64,
    pub rho: f64,
    #[serde(rename = "Delta")]
    pub band: f64,
    pub threshold: Threshold,
    pub xi0: f64,
    pub gamma: f64,
    pub m0: usize,
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
}

impl AlgoParams {
    /// The absolute threshold, if one is set.
    pub fn w0(&self) -> Option<f64> {
        match self.threshold {
            Threshold::Absolute(w0) => Some(w0),
            _ => None,
        }
    }

    /// Relative residual of `(2k²/πκ)(Δ/ξ₀)² = ργ`.
    pub fn identity_residual(&self, k: usize, kappa: f64) -> f64 {
        let t = self.band / self.xi0;
        let lhs = 2.0 * (k * k) as f64 / (PI * kappa) * t * t;
        let rhs = self.rho * self.gamma;
        (lhs - rhs).abs() / rhs.abs()
    }
}

/// Optional replacements for any derived parameter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub delta: Option<f64>,
    pub rho: Option<f64>,
    #[serde(rename = "Delta")]
    pub band: Option<f64>,
    pub threshold: Option<Threshold>,
    pub xi0: Option<f64>,
    pub gamma: Option<f64>,
    pub m0: Option<usize>,
}

impl ParamOverrides {
    pub fn apply(&self, p: &mut AlgoParams) {
        if let Some(v) = self.delta {
            p.delta = v;
        }
        if let Some(v) = self.rho {
            p.rho = v;
        }
        if let Some(v) = self.band {
            p.band = v;
        }
        if let Some(v) = self.threshold {
            p.threshold = v;
        }
        if let Some(v) = self.xi0 {
            p.xi0 = v;
        }
        if let Some(v) = self.gamma {
            p.gamma = v;
        }
        if let Some(v) = self.m0 {
            p.m0 = v;
        }
    }
}

fn check_delta_rho(delta: f64, rho: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(Error::Domain(format!("delta must lie in (0, 0.5], got {delta}")));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Domain(format!("rho must lie in (0, 1), got {rho}")));
    }
    Ok(())
}

/// Theory-regime parameters.
///
/// `Δ = (1/β) ln((1+δ)c₂k/(c₁u₀δ))`, `w₀ = c₁²u₀²δ/((1+δ)²c₂k)`,
/// `ξ₀ = 2√(2e/π)(k/κ)(k/ρ+1)Δ` and `γ = κρ/(4e(k+ρ)²)`.
pub fn derive_params(
    k: usize,
    u0: f64,
    kappa: f64,
    beta: f64,
    delta: f64,
    rho: f64,
) -> Result<AlgoParams> {
    check_delta_rho(delta, rho)?;
    if !(u0 > 0.0 && u0 <= 1.0) {
        return Err(Error::Domain(format!("u0 must lie in (0, 1], got {u0}")));
    }
    if kappa.is_nan() || beta.is_nan() || kappa <= 0.0 || beta <= 0.0 || k == 0 {
        return Err(Error::Domain("kappa, beta and k must be positive".into()));
    }
    let kf = k as f64;
    let (c1, c2) = (c1(beta), c2(beta));
    let band = ((1.0 + delta) * c2 * kf / (c1 * u0 * delta)).ln() / beta;
    let w0 = c1 * c1 * u0 * u0 * delta / ((1.0 + delta).powi(2) * c2 * kf);
    let xi0 = 2.0 * (2.0 * E / PI).sqrt() * (kf / kappa) * (kf / rho + 1.0) * band;
    let gamma = kappa * rho / (4.0 * E * (kf + rho).powi(2));
    let m0 = (THEORY_M0_CONSTANT / (gamma * rho) * (kf / delta).ln()).ceil() as usize;
    let params = AlgoParams {
        regime: Regime::Theory,
        delta,
        rho,
        band,
        threshold: Threshold::Absolute(w0),
        xi0,
        gamma,
        m0: m0.max(1),
        beta,
        c1,
        c2,
    };
    let residual = params.identity_residual(k, kappa);
    if residual > 1e-9 {
        return Err(Error::Domain(format!(
            "parameter identity violated (relative residual {residual:.3e})"
        )));
    }
    Ok(params)
}

/// Practical-regime parameters: `ξ₀ = 2√d`, keep the top 1% of candidates
/// by norm, unit band, and `m₀ = max(2000, ⌈50k/(γρ)⌉)` capped at 5000 with
/// `γ = √(1/2eπ)·Δ/ξ₀`. Any field can be overridden.
pub fn practical_params(d: usize, k: usize, beta: f64, overrides: &ParamOverrides) -> Result<AlgoParams> {
    let mut p = AlgoParams {
        regime: Regime::Practical,
        delta: 0.2,
        rho: 0.5,
        band: 1.0,
        threshold: Threshold::TopFraction(DEFAULT_TOP_FRACTION),
        xi0: 2.0 * (d as f64).sqrt(),
        gamma: 0.0,
        m0: 0,
        beta,
        c1: c1(beta),
        c2: c2(beta),
    };
    overrides.apply(&mut p);
    if overrides.gamma.is_none() {
        p.gamma = (1.0 / (2.0 * E * PI)).sqrt() * p.band / p.xi0;
    }
    if overrides.m0.is_none() {
        let wanted = (50.0 * k as f64 / (p.gamma * p.rho)).ceil() as usize;
        p.m0 = wanted.clamp(PRACTICAL_M0_FLOOR, PRACTICAL_M0_CAP);
    }
    check_delta_rho(p.delta, p.rho)?;
    p.threshold.validate()?;
    if !(p.xi0 > 0.0 && p.band > 0.0 && p.gamma > 0.0 && p.m0 > 0) {
        return Err(Error::Domain("xi0, Delta, gamma and m0 must be positive".into()));
    }
    Ok(p)
}

/// Smallest band `Δ` with `k·max|u_ℓ|·E f′(Δ + Z) ≤ δ w₀`.
///
/// With this band a probe in a single-unit region has every other unit's
/// contribution to `w̄(ξ)` bounded by `δ w₀` in norm.
pub fn calibrate_band(model: &SigmoidModel, delta: f64, w0: f64) -> Result<f64> {
    if !(w0 > 0.0 && delta > 0.0) {
        return Err(Error::Domain("calibration needs positive delta and w0".into()));
    }
    let umax = model.weights().iter().map(|u| u.abs()).fold(0.0, f64::max);
    let scale = model.k() as f64 * umax;
    let target = delta * w0;
    let beta = model.beta();
    let excess = |z: f64| scale * smoothed_coefficient(beta, z) - target;
    if excess(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while excess(hi) > 0.0 {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::Domain("band calibration did not converge".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Natural log of the oracle-model per-probe sample size from the main
/// theorem with its unspecified constant set to one.
pub fn log_n0_shape(d: usize, m: f64, delta: f64, w0: f64, k: usize, gamma: f64, rho: f64) -> f64 {
    let base = d as f64 * m * m / (delta * delta * w0 * w0);
    base.ln() + (k as f64 / (gamma * rho * delta)).ln().ln()
}

/// Natural log of the Gaussian-covariates dataset size from the main
/// theorem with its unspecified constant set to one.
#[allow(clippy::too_many_arguments)]
pub fn log_n_shape(
    d: usize,
    m: f64,
    delta: f64,
    w0: f64,
    xi0: f64,
    k: usize,
    gamma: f64,
    rho: f64,
) -> f64 {
    let df = d as f64;
    let spread = 1.0 + 2.0 / df;
    let base = (m.powi(4) * df * df / (delta * delta * w0 * w0)).ln();
    let first = (1.0 + 7.0 * spread * xi0 * xi0) * (k as f64 / (gamma * rho * delta)).ln();
    let second = 4.0 * df * (1.0 / 7.0 + spread * xi0 * xi0);
    base + first.max(second)
}

/// Natural log of the theory-regime probe count `(1/γρ) ln(k/δ)` up to
/// its constant.
pub fn log_m0_shape(k: usize, delta: f64, gamma: f64, rho: f64) -> f64 {
    ((k as f64 / delta).ln() / (gamma * rho)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn theory_example() {
        let p = derive_params(2, 0.5, 1.0, 1.0, 0.2, 0.5).unwrap();
        // Independent evaluation from the raw definitions.
        let phi = 0.022_750_131_948_179_2_f64;
        let c1 = phi * 2f64.exp();
        let c2 = 8.0 * 2f64.exp();
        let band = (1.2 * c2 * 2.0 / (c1 * 0.5 * 0.2)).ln();
        assert_relative_eq!(p.band, band, max_relative = 1e-12);
        assert_relative_eq!(p.band, 9.0406, epsilon = 5e-4);
        assert_relative_eq!(p.w0().unwrap(), 8.30e-6, epsilon = 5e-9);
        assert_relative_eq!(p.xi0, 237.85, epsilon = 0.05);
        assert_relative_eq!(p.gamma, 0.5 / (4.0 * E * 6.25), max_relative = 1e-12);
        assert_relative_eq!(p.gamma, 0.007_357_6, epsilon = 1e-7);
        assert!(p.band < p.xi0);
    }

    #[test]
    fn gamma_matches_its_defining_expression() {
        let (k, kappa) = (3usize, 0.7);
        let p = derive_params(k, 0.3, kappa, 1.5, 0.1, 0.25).unwrap();
        let t = p.band / p.xi0;
        let defining = (1.0 / (2.0 * E * PI)).sqrt() * t - 2.0 * k as f64 / (kappa * PI) * t * t;
        assert_relative_eq!(p.gamma, defining, max_relative = 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(derive_params(2, 0.5, 1.0, 1.0, 0.0, 0.5).is_err());
        assert!(derive_params(2, 0.5, 1.0, 1.0, 0.6, 0.5).is_err());
        assert!(derive_params(2, 0.5, 1.0, 1.0, 0.2, 1.0).is_err());
    }

    #[test]
    fn practical_defaults() {
        let p = practical_params(3, 3, 1.0, &ParamOverrides::default()).unwrap();
        assert_relative_eq!(p.xi0, 2.0 * 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(p.xi0, 3.4641, epsilon = 1e-4);
        assert_eq!(p.threshold, Threshold::TopFraction(0.01));
        assert!(p.m0 >= PRACTICAL_M0_FLOOR && p.m0 <= PRACTICAL_M0_CAP);
        let o = ParamOverrides {
            m0: Some(5000),
            xi0: Some(1.25),
            threshold: Some(Threshold::TopCount(50)),
            ..Default::default()
        };
        let p = practical_params(3, 3, 1.0, &o).unwrap();
        assert_eq!(p.m0, 5000);
        assert_eq!(p.xi0, 1.25);
        assert_eq!(p.threshold, Threshold::TopCount(50));
    }

    #[test]
    fn threshold_resolution() {
        let norms = [0.5, 3.0, 1.0, 2.0];
        assert_eq!(Threshold::TopCount(2).resolve(&norms), 2.0);
        assert_eq!(Threshold::TopFraction(0.25).resolve(&norms), 3.0);
        assert_eq!(Threshold::Absolute(0.7).resolve(&norms), 0.7);
        assert_eq!(Threshold::TopCount(10).resolve(&norms), 0.5);
    }

    #[test]
    fn calibrated_band_meets_its_target() {
        let m = SigmoidModel::standard_basis(4, vec![0.5, -0.5], 1.0, false, NoiseSpec::NOISELESS)
            .unwrap();
        let band = calibrate_band(&m, 0.2, 0.05).unwrap();
        let at = 2.0 * 0.5 * smoothed_coefficient(1.0, band);
        assert!(at <= 0.2 * 0.05 * (1.0 + 1e-12));
        assert!(2.0 * 0.5 * smoothed_coefficient(1.0, band - 1e-6) > 0.2 * 0.05);
    }

    #[test]
    fn sample_size_shapes_are_finite() {
        let p = derive_params(2, 0.5, 1.0, 1.0, 0.2, 0.5).unwrap();
        let w0 = p.w0().unwrap();
        assert!(log_n0_shape(4, 1.0, 0.2, w0, 2, p.gamma, 0.5).is_finite());
        assert!(log_n_shape(4, 1.0, 0.2, w0, p.xi0, 2, p.gamma, 0.5) > 1e4);
        assert!(log_m0_shape(2, 0.2, p.gamma, 0.5).is_finite());
    }

    proptest! {
        #[test]
        fn identity_holds_for_valid_inputs(
            k in 1usize..8,
            u0 in 0.01f64..1.0,
            kappa in 0.01f64..1.0,
            beta in 0.2f64..3.0,
            delta in 0.01f64..0.5,
            rho in 0.01f64..0.99,
        ) {
            let p = derive_params(k, u0, kappa, beta, delta, rho).unwrap();
            prop_assert!(p.identity_residual(k, kappa) < 1e-9);
            prop_assert!(p.band < p.xi0);
            prop_assert!(p.band > 0.0 && p.w0().unwrap() > 0.0 && p.gamma > 0.0);
        }

        #[test]
        fn w0_decreases_in_k(k in 1usize..20, u0 in 0.05f64..1.0, beta in 0.3f64..2.0) {
            let a = derive_params(k, u0, 1.0, beta, 0.2, 0.5).unwrap().w0().unwrap();
            let b = derive_params(k + 1, u0, 1.0, beta, 0.2, 0.5).unwrap().w0().unwrap();
            prop_assert!(b < a);
        }
    }
}
