//! Valuation distributions on [1, h], hazard-rate analysis, and the derived
//! order-statistic laws: the maximum initial valuation among Poisson-many
//! arrivals, the product V*U, and the maximum linearly discounted valuation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate, Tolerance};

/// Valuation distribution with support contained in [1, h].
///
/// The point kind carries all mass at a single valuation (the identical
/// valuation setting); uniform and truncated normal are the experiment
/// distributions. Immutable after construction; sampling needs a caller
/// owned RNG.
#[derive(Debug, Clone)]
pub enum ValuationDistribution {
    Point { v: f64, h: f64 },
    Uniform { h: f64 },
    TruncatedNormal(TruncatedNormal),
}

/// Normal(mu, sigma^2) restricted to [1, h] and renormalized. Sampling is by
/// inverse CDF so that draw counts are independent of the seed path.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma: f64,
    pub h: f64,
    phi_lo: f64,
    phi_hi: f64,
}

impl TruncatedNormal {
    fn new(mu: f64, sigma2: f64, h: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
        }
        let sigma = sigma2.sqrt();
        let phi_lo = norm_cdf((1.0 - mu) / sigma);
        let phi_hi = norm_cdf((h - mu) / sigma);
        if phi_hi - phi_lo <= 0.0 {
            return Err(Error::InvalidParameter(
                "truncated normal has no mass on [1, h]".into(),
            ));
        }
        Ok(Self { mu, sigma, h, phi_lo, phi_hi })
    }

    fn mass(&self) -> f64 {
        self.phi_hi - self.phi_lo
    }
}

impl ValuationDistribution {
    /// All mass at `v` (the identical valuation setting).
    pub fn point(v: f64, h: f64) -> Result<Self> {
        check_h(h)?;
        if !(1.0..=h).contains(&v) {
            return Err(Error::InvalidParameter(format!("point valuation {v} outside [1, {h}]")));
        }
        Ok(Self::Point { v, h })
    }

    pub fn uniform(h: f64) -> Result<Self> {
        check_h(h)?;
        if h <= 1.0 {
            return Err(Error::InvalidParameter("uniform valuation needs h > 1".into()));
        }
        Ok(Self::Uniform { h })
    }

    pub fn truncated_normal(mu: f64, sigma2: f64, h: f64) -> Result<Self> {
        check_h(h)?;
        Ok(Self::TruncatedNormal(TruncatedNormal::new(mu, sigma2, h)?))
    }

    pub fn h(&self) -> f64 {
        match self {
            Self::Point { h, .. } | Self::Uniform { h } => *h,
            Self::TruncatedNormal(tn) => tn.h,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Point { .. } => "point",
            Self::Uniform { .. } => "uniform",
            Self::TruncatedNormal(_) => "truncated_normal",
        }
    }

    pub fn has_density(&self) -> bool {
        !matches!(self, Self::Point { .. })
    }

    /// F(x), extended by 0 below the support and 1 above it.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Point { v, .. } => {
                if x < *v {
                    0.0
                } else {
                    1.0
                }
            }
            Self::Uniform { h } => ((x - 1.0) / (h - 1.0)).clamp(0.0, 1.0),
            Self::TruncatedNormal(tn) => {
                if x <= 1.0 {
                    0.0
                } else if x >= tn.h {
                    1.0
                } else {
                    ((norm_cdf((x - tn.mu) / tn.sigma) - tn.phi_lo) / tn.mass()).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// Density, `None` for the point kind.
    pub fn pdf(&self, x: f64) -> Option<f64> {
        match self {
            Self::Point { .. } => None,
            Self::Uniform { h } => {
                Some(if (1.0..=*h).contains(&x) { 1.0 / (h - 1.0) } else { 0.0 })
            }
            Self::TruncatedNormal(tn) => Some(if (1.0..=tn.h).contains(&x) {
                norm_pdf((x - tn.mu) / tn.sigma) / (tn.sigma * tn.mass())
            } else {
                0.0
            }),
        }
    }

    /// One draw in [1, h].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Point { v, .. } => *v,
            Self::Uniform { h } => 1.0 + (h - 1.0) * rng.random::<f64>(),
            Self::TruncatedNormal(tn) => {
                let u: f64 = rng.random();
                let p = tn.phi_lo + u * tn.mass();
                (tn.mu + tn.sigma * norm_inv_cdf(p)).clamp(1.0, tn.h)
            }
        }
    }

    /// CDF of the maximum initial valuation among Poisson(lambda*tau)-many
    /// i.i.d. draws: exp(-lambda*tau*(1 - F(x))). The maximum of an empty
    /// arrival set counts as 0, which makes this form exact for all x >= 0.
    pub fn max_order_cdf(&self, lambda_tau: f64, x: f64) -> f64 {
        (-lambda_tau * (1.0 - self.cdf(x))).exp()
    }

    /// Hazard rate of the max-order law, lambda*tau * H(x) * (1-F(x)) /
    /// (e^{lambda*tau*(1-F(x))} - 1). `None` for the point kind.
    pub fn max_order_hazard(&self, lambda_tau: f64, x: f64) -> Option<f64> {
        let f = self.pdf(x)?;
        let tail = 1.0 - self.cdf(x);
        let expm1 = (lambda_tau * tail).exp_m1();
        if expm1 <= 0.0 {
            return Some(f64::INFINITY);
        }
        Some(lambda_tau * f / expm1)
    }

    /// E[X_{lambda*tau}] = int_0^h (1 - max_order_cdf) dx.
    pub fn expected_max(&self, lambda_tau: f64, tol: Tolerance) -> Result<f64> {
        if !(lambda_tau > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda*tau must be positive, got {lambda_tau}"
            )));
        }
        let h = self.h();
        // Below the support F = 0, so the integrand is the constant
        // 1 - e^{-lambda*tau}; integrate the rest piecewise to keep the
        // refinement away from CDF kinks.
        let base = -(-lambda_tau).exp_m1();
        let mut total = base;
        for (a, b) in self.support_segments() {
            total += integrate(|x| -(-lambda_tau * (1.0 - self.cdf(x))).exp_m1(), a, b, tol)?;
        }
        Ok(total.clamp(0.0, h))
    }

    /// E[Y_{lambda*T}] = int_0^h (1 - max_discounted_cdf) dx, the expected
    /// maximum linearly discounted valuation over the whole horizon.
    pub fn expected_max_discounted(&self, lambda_t: f64, tol: Tolerance) -> Result<f64> {
        if !(lambda_t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda*T must be positive, got {lambda_t}"
            )));
        }
        let h = self.h();
        let v = integrate(|x| 1.0 - self.max_discounted_cdf(lambda_t, x), 0.0, h, tol)?;
        Ok(v.clamp(0.0, h))
    }

    /// Checks E[X_{lt}]/E[X_{lt'}] >= ln(lt)/ln(lt') for 1 < lt <= lt'.
    /// The guarantee needs an MHR distribution; callers are expected to have
    /// checked that via `hazard_check`.
    pub fn ln_ratio_inequality_check(&self, lt: f64, lt_prime: f64) -> Result<LnRatioCheck> {
        if !(lt > 1.0) || !(lt_prime >= lt) {
            return Err(Error::InvalidParameter(format!(
                "need 1 < lambda*tau <= lambda*tau', got {lt}, {lt_prime}"
            )));
        }
        let tol = Tolerance::quadrature();
        let lhs = self.expected_max(lt, tol)? / self.expected_max(lt_prime, tol)?;
        let rhs = lt.ln() / lt_prime.ln();
        Ok(LnRatioCheck { lhs, rhs, holds: lhs >= rhs - 1e-9 })
    }

    /// F_Z(x), the CDF of Z = V*U with U ~ Uniform(0, 1):
    /// x * int_1^h f(v)/v dv on [0, 1) and F(x) + x * int_x^h f(v)/v dv on
    /// [1, h]. The point kind reduces to the CDF of v*U directly.
    pub fn product_cdf(&self, x: f64) -> Result<f64> {
        let h = self.h();
        let x = x.clamp(0.0, h);
        if let Self::Point { v, .. } = self {
            return Ok((x / v).min(1.0));
        }
        let tol = Tolerance::quadrature();
        let tail = |from: f64| -> Result<f64> {
            integrate(|v| self.pdf(v).unwrap_or(0.0) / v, from, h, tol)
        };
        if x < 1.0 {
            Ok((x * tail(1.0)?).clamp(0.0, 1.0))
        } else {
            Ok((self.cdf(x) + x * tail(x)?).clamp(0.0, 1.0))
        }
    }

    /// CDF of the maximum linearly discounted valuation over a horizon with
    /// expected arrivals lambda*T: exp(-lambda*T*(1 - F_Z(x))), including the
    /// no-arrival atom at 0. Valid for the linear discount.
    pub fn max_discounted_cdf(&self, lambda_t: f64, x: f64) -> f64 {
        let fz = self.product_cdf(x).unwrap_or_else(|_| if x >= self.h() { 1.0 } else { 0.0 });
        (-lambda_t * (1.0 - fz)).exp()
    }

    /// Hazard report on an equispaced interior grid. The grid keeps a margin
    /// of (h-1)/(10 n) at both ends because H blows up at the upper support
    /// edge for these families.
    pub fn hazard_check(&self, n_grid: usize) -> Result<HazardReport> {
        if !self.has_density() {
            return Err(Error::UnsupportedDistribution {
                op: "hazard_check",
                kind: self.kind_name(),
            });
        }
        if n_grid < 16 {
            return Err(Error::InvalidParameter(format!("n_grid must be >= 16, got {n_grid}")));
        }
        let h = self.h();
        let margin = (h - 1.0) / (10.0 * n_grid as f64);
        let (lo, hi) = (1.0 + margin, h - margin);
        let mut grid = Vec::with_capacity(n_grid);
        let mut hazard = Vec::with_capacity(n_grid);
        let mut first_violation = None;
        for i in 0..n_grid {
            let x = lo + (hi - lo) * i as f64 / (n_grid - 1) as f64;
            let f = self.pdf(x).unwrap();
            let tail = 1.0 - self.cdf(x);
            let hz = f / tail;
            if let Some(&prev) = hazard.last() {
                if hz < prev - 1e-9 && first_violation.is_none() {
                    first_violation = Some(x);
                }
            }
            grid.push(x);
            hazard.push(hz);
        }
        Ok(HazardReport {
            grid,
            hazard,
            is_monotone_nondecreasing: first_violation.is_none(),
            first_violation,
        })
    }

    /// Density segments split at points where the integrand loses smoothness.
    fn support_segments(&self) -> Vec<(f64, f64)> {
        let h = self.h();
        match self {
            Self::Point { v, .. } => {
                if *v > 1.0 && *v < h {
                    vec![(1.0, *v), (*v, h)]
                } else {
                    vec![(1.0, h)]
                }
            }
            _ => vec![(1.0, h)],
        }
    }
}

fn check_h(h: f64) -> Result<()> {
    if !(h >= 1.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("h must be >= 1, got {h}")));
    }
    Ok(())
}

/// Outcome of the expectation-ratio inequality check.
#[derive(Debug, Clone, Copy)]
pub struct LnRatioCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Sampled hazard H(x) = f(x)/(1 - F(x)) on an interior grid with a
/// monotone-non-decreasing flag (slack 1e-9).
#[derive(Debug, Clone)]
pub struct HazardReport {
    pub grid: Vec<f64>,
    pub hazard: Vec<f64>,
    pub is_monotone_nondecreasing: bool,
    pub first_violation: Option<f64>,
}

/// Standard normal CDF.
fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile: Acklam's rational approximation polished with
/// one Halley step against erfc, giving close to full double precision.
fn norm_inv_cdf(p: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }

    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // One Halley refinement.
    let e = norm_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Serializable valuation configuration, e.g.
/// `{"kind": "uniform", "h": 10.0}` or
/// `{"kind": "truncated_normal", "h": 10.0, "mu": 4.5, "sigma2": 2.0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValuationSpec {
    pub kind: ValuationKind,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationKind {
    Point,
    Uniform,
    TruncatedNormal,
}

impl ValuationSpec {
    pub fn build(&self) -> Result<ValuationDistribution> {
        match self.kind {
            ValuationKind::Point => {
                let v = self.v.ok_or_else(|| {
                    Error::InvalidParameter("point valuation requires field `v`".into())
                })?;
                ValuationDistribution::point(v, self.h)
            }
            ValuationKind::Uniform => ValuationDistribution::uniform(self.h),
            ValuationKind::TruncatedNormal => {
                let mu = self.mu.ok_or_else(|| {
                    Error::InvalidParameter("truncated_normal requires field `mu`".into())
                })?;
                let sigma2 = self.sigma2.ok_or_else(|| {
                    Error::InvalidParameter("truncated_normal requires field `sigma2`".into())
                })?;
                ValuationDistribution::truncated_normal(mu, sigma2, self.h)
            }
        }
    }
}
