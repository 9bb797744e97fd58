//! Discount functions xi: [0, T] -> [0, 1] and the reciprocal quantities
//! zeta = 1/xi, zeta' that drive the price differential equation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discounts below this are treated as vanished; `zeta` refuses to evaluate
/// there.
pub const XI_FLOOR: f64 = 1e-12;

const CUSTOM_GRID: usize = 1024;
const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscountKind {
    Linear,
    ConstantOne,
    Custom,
}

impl DiscountKind {
    pub fn name(self) -> &'static str {
        match self {
            DiscountKind::Linear => "linear",
            DiscountKind::ConstantOne => "constant_one",
            DiscountKind::Custom => "custom",
        }
    }
}

/// A continuous non-increasing discount with xi(0) = 1.
///
/// The model proper wants xi(T) = 0, but the undiscounted experiments need
/// xi identically 1, so xi(T) = 0 is a property of the linear kind rather
/// than an invariant of the type. Immutable after construction.
#[derive(Clone)]
pub struct DiscountFunction {
    kind: DiscountKind,
    horizon: f64,
    custom: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for DiscountFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscountFunction")
            .field("kind", &self.kind)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl DiscountFunction {
    /// xi(t) = 1 - t/T.
    pub fn linear(horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(Self { kind: DiscountKind::Linear, horizon, custom: None })
    }

    /// xi identically 1 (no discounting).
    pub fn constant_one(horizon: f64) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(Self { kind: DiscountKind::ConstantOne, horizon, custom: None })
    }

    /// Wraps an arbitrary xi after validating xi(0) = 1 (within 1e-9), range
    /// [0, 1], and monotone non-increase on a 1024-point grid. Violations
    /// name the offending grid point.
    pub fn custom<F>(horizon: f64, xi: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_horizon(horizon)?;
        let at_zero = xi(0.0);
        if (at_zero - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidDiscount {
                t: 0.0,
                reason: format!("xi(0) = {at_zero}, expected 1"),
            });
        }
        let mut prev = at_zero;
        for i in 0..=CUSTOM_GRID {
            let t = horizon * i as f64 / CUSTOM_GRID as f64;
            let v = xi(t);
            if !v.is_finite() || !(-MONOTONE_SLACK..=1.0 + MONOTONE_SLACK).contains(&v) {
                return Err(Error::InvalidDiscount {
                    t,
                    reason: format!("xi(t) = {v} outside [0, 1]"),
                });
            }
            if v > prev + MONOTONE_SLACK {
                return Err(Error::InvalidDiscount {
                    t,
                    reason: format!("xi increases: {prev} -> {v}"),
                });
            }
            prev = v;
        }
        Ok(Self { kind: DiscountKind::Custom, horizon, custom: Some(Arc::new(xi)) })
    }

    pub fn kind(&self) -> DiscountKind {
        self.kind
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// xi(t), evaluated with t clamped into [0, T].
    pub fn xi(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon);
        match self.kind {
            DiscountKind::Linear => 1.0 - t / self.horizon,
            DiscountKind::ConstantOne => 1.0,
            DiscountKind::Custom => (self.custom.as_ref().unwrap())(t).clamp(0.0, 1.0),
        }
    }

    /// zeta(t) = 1/xi(t). Fails where the discount has vanished.
    pub fn zeta(&self, t: f64) -> Result<f64> {
        match self.kind {
            DiscountKind::ConstantOne => Ok(1.0),
            DiscountKind::Linear => {
                let xi = self.xi(t);
                if xi <= XI_FLOOR {
                    return Err(Error::VanishingDiscount { t });
                }
                Ok(self.horizon / (self.horizon - t.clamp(0.0, self.horizon)))
            }
            DiscountKind::Custom => {
                let xi = self.xi(t);
                if xi <= XI_FLOOR {
                    return Err(Error::VanishingDiscount { t });
                }
                Ok(1.0 / xi)
            }
        }
    }

    /// d zeta / dt. Analytic for the linear and constant kinds, central
    /// finite difference with step max(1e-6 T, 1e-9) for custom ones.
    pub fn zeta_prime(&self, t: f64) -> Result<f64> {
        match self.kind {
            DiscountKind::ConstantOne => Ok(0.0),
            DiscountKind::Linear => {
                let xi = self.xi(t);
                if xi <= XI_FLOOR {
                    return Err(Error::VanishingDiscount { t });
                }
                let rem = self.horizon - t.clamp(0.0, self.horizon);
                Ok(self.horizon / (rem * rem))
            }
            DiscountKind::Custom => {
                let s = (1e-6 * self.horizon).max(1e-9);
                let hi = self.zeta(t + s)?;
                let lo = self.zeta(t - s)?;
                Ok((hi - lo) / (2.0 * s))
            }
        }
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidParameter(format!("horizon T must be positive, got {horizon}")));
    }
    Ok(())
}

/// Serializable discount configuration: `{"kind": "linear", "T": 12.0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscountSpec {
    Linear {
        #[serde(rename = "T")]
        horizon: f64,
    },
    ConstantOne {
        #[serde(rename = "T")]
        horizon: f64,
    },
}

impl DiscountSpec {
    pub fn build(self) -> Result<DiscountFunction> {
        match self {
            DiscountSpec::Linear { horizon } => DiscountFunction::linear(horizon),
            DiscountSpec::ConstantOne { horizon } => DiscountFunction::constant_one(horizon),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_values() {
        let d = DiscountFunction::linear(12.0).unwrap();
        assert_eq!(d.xi(0.0), 1.0);
        assert_eq!(d.xi(6.0), 0.5);
        assert_eq!(d.xi(12.0), 0.0);
        assert!((d.zeta(6.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((d.zeta_prime(6.0).unwrap() - 12.0 / 36.0).abs() < 1e-12);
    }

    #[test]
    fn constant_one_values() {
        let d = DiscountFunction::constant_one(12.0).unwrap();
        assert_eq!(d.xi(0.0), 1.0);
        assert_eq!(d.xi(12.0), 1.0);
        assert_eq!(d.zeta_prime(6.0).unwrap(), 0.0);
    }

    #[test]
    fn zeta_refuses_vanished_discount() {
        let d = DiscountFunction::linear(12.0).unwrap();
        assert!(matches!(d.zeta(12.0), Err(Error::VanishingDiscount { .. })));
    }

    #[test]
    fn custom_matches_linear_on_grid() {
        let t_end = 12.0;
        let custom = DiscountFunction::custom(t_end, move |t| 1.0 - t / t_end).unwrap();
        let linear = DiscountFunction::linear(t_end).unwrap();
        for i in 0..=200 {
            let t = t_end * i as f64 / 200.0;
            assert!((custom.xi(t) - linear.xi(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn custom_accepts_quadratic_decay() {
        let d = DiscountFunction::custom(10.0, |t| {
            let x = 1.0 - t / 10.0;
            x * x
        })
        .unwrap();
        assert_eq!(d.xi(10.0), 0.0);
        assert_eq!(d.kind(), DiscountKind::Custom);
    }

    #[test]
    fn custom_rejects_wrong_boundary() {
        let err = DiscountFunction::custom(10.0, |t| t / 10.0).unwrap_err();
        assert!(matches!(err, Error::InvalidDiscount { t, .. } if t == 0.0));
    }

    #[test]
    fn custom_rejects_increasing_segment() {
        let err = DiscountFunction::custom(10.0, |t| {
            if t < 5.0 {
                1.0 - 0.1 * t
            } else {
                0.5 + 0.01 * (t - 5.0)
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::InvalidDiscount { .. }));
    }

    #[test]
    fn xi_is_monotone_non_increasing_on_grid() {
        for d in [
            DiscountFunction::linear(7.0).unwrap(),
            DiscountFunction::constant_one(7.0).unwrap(),
            DiscountFunction::custom(7.0, |t| (1.0 - t / 7.0).powi(2)).unwrap(),
        ] {
            let mut prev = f64::INFINITY;
            for i in 0..=512 {
                let t = 7.0 * i as f64 / 512.0;
                let v = d.xi(t);
                assert!(v <= prev + 1e-9);
                prev = v;
            }
        }
    }

    #[test]
    fn linear_zeta_prime_matches_finite_difference() {
        let d = DiscountFunction::linear(12.0).unwrap();
        let s = 1e-6;
        for i in 1..99 {
            let t = 0.99 * 12.0 * i as f64 / 99.0;
            let fd = (d.zeta(t + s).unwrap() - d.zeta(t - s).unwrap()) / (2.0 * s);
            let analytic = d.zeta_prime(t).unwrap();
            assert!(
                ((fd - analytic) / analytic).abs() < 1e-5,
                "t = {t}: fd = {fd}, analytic = {analytic}"
            );
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = DiscountSpec::Linear { horizon: 12.0 };
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"linear","T":12.0}"#);
        let back: DiscountSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let parsed: DiscountSpec =
            serde_json::from_str(r#"{"kind":"constant_one","T":5.0}"#).unwrap();
        assert!(matches!(parsed, DiscountSpec::ConstantOne { horizon } if horizon == 5.0));
    }
}
