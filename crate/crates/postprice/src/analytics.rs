//! Closed-form expected revenues in the identical valuation setting, the
//! benchmark constant k*, and the normalized loss indices used by the
//! experiment sweeps.

use crate::discounting::{DiscountFunction, DiscountKind};
use crate::error::{Error, Result};
use crate::mechanisms::{MarketParams, PricingStrategy, StrategyKind};
use crate::numerics::{integrate, Tolerance};

/// k* = int_0^T xi(t) lambda e^{-lambda t} dt, the benchmark's expected
/// revenue per unit of valuation.
pub fn k_star(params: &MarketParams, discount: &DiscountFunction) -> Result<f64> {
    let lambda = params.lambda;
    let v = integrate(
        |t| discount.xi(t) * lambda * (-lambda * t).exp(),
        0.0,
        params.horizon,
        Tolerance::quadrature(),
    )?;
    Ok(v.clamp(0.0, 1.0))
}

/// Expected revenue of a time-indexed strategy when every agent holds the
/// initial valuation `v`.
///
/// Only the first crossing time t* = sup { t : p(t) > v xi(t) } matters: the
/// undiscounted price is non-increasing, so nobody buys before t* and the
/// first arrival after it does. The revenue is then
/// int_{t*}^{T} p(t) lambda e^{-lambda (t - t*)} dt. Strategies whose
/// undiscounted price increases somewhere (the piecewise-constant schedule
/// under a non-flat discount) are rejected; use Monte Carlo for those.
pub fn expected_revenue_iv_analytic(
    strategy: &PricingStrategy,
    params: &MarketParams,
    discount: &DiscountFunction,
    v: f64,
) -> Result<f64> {
    if !strategy.is_time_indexed() {
        return Err(Error::NotTimeIndexed {
            op: "expected_revenue_iv_analytic",
            kind: strategy.kind().name(),
        });
    }
    if !(1.0..=params.h).contains(&v) {
        return Err(Error::InvalidParameter(format!("valuation {v} outside [1, {}]", params.h)));
    }
    ensure_undiscounted_non_increasing(strategy, discount)?;

    let t_end = params.horizon;
    let gap = |t: f64| strategy.price_at(t) - v * discount.xi(t);

    let t_star = if gap(0.0) <= 0.0 {
        0.0
    } else {
        match first_crossing(&gap, t_end) {
            Some(t) => t,
            None => return Ok(0.0), // the price never meets the discounted valuation
        }
    };

    let lambda = params.lambda;
    let tol = Tolerance::quadrature();
    let mut revenue = 0.0;
    for (a, b) in integration_segments(strategy, t_star, t_end) {
        revenue += integrate(
            |t| strategy.price_at(t) * lambda * (-lambda * (t - t_star)).exp(),
            a,
            b,
            tol,
        )?;
    }
    Ok(revenue.max(0.0))
}

/// rho_v = E_v(R) / (v k*), the revenue ratio against the benchmark at a
/// point-mass valuation.
pub fn ratio_iv(
    strategy: &PricingStrategy,
    params: &MarketParams,
    discount: &DiscountFunction,
    v: f64,
) -> Result<f64> {
    let revenue = expected_revenue_iv_analytic(strategy, params, discount, v)?;
    let ks = k_star(params, discount)?;
    Ok((revenue / (v * ks)).clamp(0.0, 1.0))
}

/// Exact expected revenue of ESoES-SS at a shared valuation `v` in the
/// undiscounted setting.
///
/// The ladder price is non-increasing in the arrival index, so the first
/// index i* whose price is at most v buys, and the revenue is
/// q(i*) P(N_T >= i*). The Poisson tail is evaluated in log space, which is
/// the per-count summation with the sub-1e-300 terms dropped.
pub fn esoes_expected_revenue_iv(
    strategy: &PricingStrategy,
    params: &MarketParams,
    discount: &DiscountFunction,
    v: f64,
) -> Result<f64> {
    let meta = strategy.esoes_meta().ok_or_else(|| {
        Error::UnsupportedStrategy(format!(
            "exact arrival-count revenue needs an esoes_ss strategy, got {}",
            strategy.kind().name()
        ))
    })?;
    if discount.kind() != DiscountKind::ConstantOne {
        return Err(Error::UnsupportedStrategy(
            "exact arrival-count revenue is defined for the undiscounted setting".into(),
        ));
    }
    if !(1.0..=params.h).contains(&v) {
        return Err(Error::InvalidParameter(format!("valuation {v} outside [1, {}]", params.h)));
    }
    // The ladder ends at price 1 <= v, so the search terminates.
    let mut i_star = 1usize;
    while meta.price_for_index(i_star) > v {
        i_star += 1;
    }
    let price = meta.price_for_index(i_star);
    Ok(price * poisson_tail(params.lambda * params.horizon, i_star))
}

/// P(N >= k) for N ~ Poisson(mean).
fn poisson_tail(mean: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    // Sum of pmf(j) for j < k via log terms; underflowed terms contribute
    // nothing to the complement.
    let ln_mean = mean.ln();
    let mut below = 0.0;
    for j in 0..k {
        let ln_p = j as f64 * ln_mean - mean - libm::lgamma(j as f64 + 1.0);
        below += ln_p.exp();
    }
    (1.0 - below).clamp(0.0, 1.0)
}

/// Per-valuation expected revenues and benchmark ratios over a grid.
#[derive(Debug, Clone)]
pub struct RevenueCurve {
    pub v_grid: Vec<f64>,
    pub revenue: Vec<f64>,
    pub ratio: Vec<f64>,
}

impl RevenueCurve {
    pub fn from_fn<F: FnMut(f64) -> Result<f64>>(
        v_grid: Vec<f64>,
        k_star: f64,
        mut revenue_at: F,
    ) -> Result<Self> {
        let mut revenue = Vec::with_capacity(v_grid.len());
        let mut ratio = Vec::with_capacity(v_grid.len());
        for &v in &v_grid {
            let r = revenue_at(v)?;
            revenue.push(r);
            ratio.push(r / (v * k_star));
        }
        Ok(Self { v_grid, revenue, ratio })
    }

    /// CSV rows `(v, revenue, ratio)`.
    pub fn csv_rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.v_grid
            .iter()
            .zip(&self.revenue)
            .zip(&self.ratio)
            .map(|((&v, &r), &q)| (v, r, q))
    }
}

/// Maximum normalized pointwise losses between two revenue curves on the
/// same valuation grid, in both directions. Negative pointwise differences
/// clamp to zero before the maximum is taken.
#[derive(Debug, Clone, Copy)]
pub struct LossIndices {
    /// max_v (A(v) - B(v)) / h: how much B loses against A.
    pub max_loss_b_vs_a: f64,
    /// max_v (B(v) - A(v)) / h.
    pub max_loss_a_vs_b: f64,
    /// Valuation attaining `max_loss_b_vs_a`.
    pub argmax_v_b_vs_a: f64,
    /// Valuation attaining `max_loss_a_vs_b`.
    pub argmax_v_a_vs_b: f64,
}

pub fn loss_indices(curve_a: &RevenueCurve, curve_b: &RevenueCurve, h: f64) -> Result<LossIndices> {
    if curve_a.v_grid.len() != curve_b.v_grid.len() {
        return Err(Error::GridMismatch {
            index: curve_a.v_grid.len().min(curve_b.v_grid.len()),
            left: curve_a.v_grid.len() as f64,
            right: curve_b.v_grid.len() as f64,
        });
    }
    for (i, (&va, &vb)) in curve_a.v_grid.iter().zip(&curve_b.v_grid).enumerate() {
        if (va - vb).abs() > 1e-12 {
            return Err(Error::GridMismatch { index: i, left: va, right: vb });
        }
    }
    let mut out = LossIndices {
        max_loss_b_vs_a: 0.0,
        max_loss_a_vs_b: 0.0,
        argmax_v_b_vs_a: curve_a.v_grid[0],
        argmax_v_a_vs_b: curve_a.v_grid[0],
    };
    for ((&v, &ra), &rb) in curve_a.v_grid.iter().zip(&curve_a.revenue).zip(&curve_b.revenue) {
        let b_vs_a = ((ra - rb) / h).max(0.0);
        let a_vs_b = ((rb - ra) / h).max(0.0);
        if b_vs_a > out.max_loss_b_vs_a {
            out.max_loss_b_vs_a = b_vs_a;
            out.argmax_v_b_vs_a = v;
        }
        if a_vs_b > out.max_loss_a_vs_b {
            out.max_loss_a_vs_b = a_vs_b;
            out.argmax_v_a_vs_b = v;
        }
    }
    Ok(out)
}

/// Verifies the first-crossing precondition on a sampling grid.
fn ensure_undiscounted_non_increasing(
    strategy: &PricingStrategy,
    discount: &DiscountFunction,
) -> Result<()> {
    // The continuous kinds are non-increasing by construction; only the
    // schedule kinds can violate the requirement (a constant price over an
    // interval divided by a strictly decreasing xi increases).
    if strategy.kind() != StrategyKind::Mpc {
        return Ok(());
    }
    let t_end = strategy.horizon();
    let n = 512;
    let mut prev = f64::INFINITY;
    for i in 0..n {
        let t = t_end * i as f64 / n as f64;
        let xi = discount.xi(t);
        if xi <= 1e-9 {
            break;
        }
        let u = strategy.price_at(t) / xi;
        if u > prev + 1e-9 {
            return Err(Error::UnsupportedStrategy(format!(
                "undiscounted price increases near t = {t:.6}; the first-crossing formula does \
                 not apply (use Monte Carlo)"
            )));
        }
        prev = u;
    }
    Ok(())
}

/// Locates the first time the (non-increasing) undiscounted price meets the
/// valuation: a coarse scan for the first sign flip of `gap`, then bisection
/// inside that cell. Works for both smooth and step-shaped prices.
fn first_crossing<F: Fn(f64) -> f64>(gap: &F, t_end: f64) -> Option<f64> {
    let n = 8192;
    let mut prev_t = 0.0;
    for i in 1..=n {
        let t = t_end * i as f64 / n as f64;
        if gap(t) <= 0.0 {
            let (mut a, mut b) = (prev_t, t);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if gap(m) <= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        prev_t = t;
    }
    None
}

/// Quadrature pieces of [t_star, T] split at the strategy's kinks so the
/// adaptive rule never straddles a jump.
fn integration_segments(
    strategy: &PricingStrategy,
    t_star: f64,
    t_end: f64,
) -> Vec<(f64, f64)> {
    let mut cuts = vec![t_star];
    match strategy {
        PricingStrategy::Mc { meta, .. } | PricingStrategy::McLin { meta, .. } => {
            if meta.t0 > t_star && meta.t0 < t_end {
                cuts.push(meta.t0);
            }
        }
        PricingStrategy::Mpc { meta, .. } => {
            let mut boundary = meta.tau;
            while boundary < t_end {
                if boundary > t_star {
                    cuts.push(boundary);
                }
                boundary += meta.tau;
            }
        }
        _ => {}
    }
    cuts.push(t_end);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.windows(2).filter(|w| w[1] > w[0] + 1e-15).map(|w| (w[0], w[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{
        build_benchmark_iv, build_esoes_ss, build_mc_general, build_mc_lin, build_mpc,
    };

    fn rental() -> MarketParams {
        MarketParams::new(10.0, 12.0, 2.8).unwrap()
    }

    #[test]
    fn k_star_constant_discount() {
        for (lambda, horizon) in [(1.0, 10.0), (5.0, 2.0), (0.3, 7.0)] {
            let p = MarketParams::new(lambda, horizon, 4.0).unwrap();
            let one = DiscountFunction::constant_one(horizon).unwrap();
            let ks = k_star(&p, &one).unwrap();
            let expected = 1.0 - (-lambda * horizon).exp();
            assert!((ks - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn k_star_linear_values() {
        let p = MarketParams::new(1.0, 1.0, 4.0).unwrap();
        let lin = DiscountFunction::linear(1.0).unwrap();
        let ks = k_star(&p, &lin).unwrap();
        assert!((ks - (-1.0f64).exp()).abs() < 1e-10);
        // Matches the closed form 1 - (1/(lambda T))(1 - e^{-lambda T}).
        for (lambda, horizon) in [(2.0, 30.0), (10.0, 12.0), (20.0, 100.0)] {
            let p = MarketParams::new(lambda, horizon, 4.0).unwrap();
            let lin = DiscountFunction::linear(horizon).unwrap();
            let ks = k_star(&p, &lin).unwrap();
            let lt = lambda * horizon;
            let closed = 1.0 - (1.0 - (-lt).exp()) / lt;
            assert!((ks - closed).abs() < 1e-10, "lambda={lambda} T={horizon}");
        }
    }

    #[test]
    fn k_star_decreases_under_smaller_discount() {
        let p = MarketParams::new(2.0, 10.0, 4.0).unwrap();
        let one = DiscountFunction::constant_one(10.0).unwrap();
        let lin = DiscountFunction::linear(10.0).unwrap();
        assert!(k_star(&p, &lin).unwrap() < k_star(&p, &one).unwrap());
    }

    #[test]
    fn benchmark_revenue_is_v_k_star() {
        let p = rental();
        let lin = DiscountFunction::linear(12.0).unwrap();
        let ks = k_star(&p, &lin).unwrap();
        for v in [1.0, 1.7, 2.8] {
            let s = build_benchmark_iv(&p, &lin, v).unwrap();
            let r = expected_revenue_iv_analytic(&s, &p, &lin, v).unwrap();
            assert!((r - v * ks).abs() < 1e-9, "v = {v}: {r} vs {}", v * ks);
            assert!((ratio_iv(&s, &p, &lin, v).unwrap() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn overpriced_strategy_never_sells() {
        let p = rental();
        let lin = DiscountFunction::linear(12.0).unwrap();
        let top = build_benchmark_iv(&p, &lin, p.h).unwrap();
        let r = expected_revenue_iv_analytic(&top, &p, &lin, 1.7).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(ratio_iv(&top, &p, &lin, 1.7).unwrap(), 0.0);
    }

    #[test]
    fn constant_ratio_law_for_mclin() {
        let p = rental();
        let lin = DiscountFunction::linear(12.0).unwrap();
        let s = build_mc_lin(&p).unwrap();
        let k = s.mc_meta().unwrap().k;
        let r = expected_revenue_iv_analytic(&s, &p, &lin, 1.7).unwrap();
        assert!((r / 1.7 - k).abs() < 1e-6 * k, "R/v = {} vs k = {k}", r / 1.7);
    }

    #[test]
    fn mpc_under_linear_discount_is_rejected() {
        let p = MarketParams::new(10.0, 12.0, 16.0).unwrap();
        let lin = DiscountFunction::linear(12.0).unwrap();
        let s = build_mpc(&p, &lin, 2.0, 4.0).unwrap();
        let err = expected_revenue_iv_analytic(&s, &p, &lin, 3.0).unwrap_err();
        assert!(matches!(err, Error::UnsupportedStrategy(_)));
    }

    #[test]
    fn mpc_under_flat_discount_is_exact() {
        // With xi = 1 the first eligible ladder step sells to the first
        // arrival at or after its interval start.
        let p = MarketParams::new(2.0, 10.0, 8.0).unwrap();
        let one = DiscountFunction::constant_one(10.0).unwrap();
        let s = build_mpc(&p, &one, 2.0, 3.0).unwrap();
        let meta = s.mpc_meta().unwrap();
        let v = 2.5;
        // First interval with price <= 2.5: prices are 4, 2, 1, 1, ...
        let idx = meta.schedule.iter().position(|&q| q <= v).unwrap();
        let t_star = idx as f64 * meta.tau;
        let r = expected_revenue_iv_analytic(&s, &p, &one, v).unwrap();
        // Oracle: sum over intervals of price * P(first arrival after t* in it).
        let lambda = p.lambda;
        let mut oracle = 0.0;
        for (j, &q) in meta.schedule.iter().enumerate().skip(idx) {
            let a = (j as f64 * meta.tau).max(t_star);
            let b = ((j + 1) as f64 * meta.tau).min(p.horizon);
            if b <= a || q > v {
                continue;
            }
            oracle += q * ((-lambda * (a - t_star)).exp() - (-lambda * (b - t_star)).exp());
        }
        assert!((r - oracle).abs() < 1e-8, "r = {r}, oracle = {oracle}");
    }

    #[test]
    fn esoes_exact_revenue() {
        // lambda T = 8, h = 16, delta = 2: prices 8, 4, 2, 1 over blocks of 2.
        let p = MarketParams::new(0.8, 10.0, 16.0).unwrap();
        let one = DiscountFunction::constant_one(10.0).unwrap();
        let s = build_esoes_ss(&p, 2.0).unwrap();
        // v = 5 buys at the second block price 4, i.e. index 3.
        let r = esoes_expected_revenue_iv(&s, &p, &one, 5.0).unwrap();
        let tail = poisson_tail(8.0, 3);
        assert!((r - 4.0 * tail).abs() < 1e-12);
        // v = 16 buys at the first arrival.
        let r = esoes_expected_revenue_iv(&s, &p, &one, 16.0).unwrap();
        assert!((r - 8.0 * (1.0 - (-8.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn esoes_exact_revenue_rejects_discounted_setting() {
        let p = MarketParams::new(0.8, 10.0, 16.0).unwrap();
        let lin = DiscountFunction::linear(10.0).unwrap();
        let s = build_esoes_ss(&p, 2.0).unwrap();
        assert!(esoes_expected_revenue_iv(&s, &p, &lin, 5.0).is_err());
    }

    #[test]
    fn poisson_tail_values() {
        assert_eq!(poisson_tail(3.0, 0), 1.0);
        assert!((poisson_tail(3.0, 1) - (1.0 - (-3.0f64).exp())).abs() < 1e-12);
        // Large mean stays finite and sane in log space.
        let t = poisson_tail(2000.0, 1500);
        assert!(t > 0.999999);
        let t = poisson_tail(2000.0, 2500);
        assert!(t < 1e-6);
    }

    #[test]
    fn revenue_curve_rows() {
        let p = rental();
        let lin = DiscountFunction::linear(12.0).unwrap();
        let s = build_mc_lin(&p).unwrap();
        let ks = k_star(&p, &lin).unwrap();
        let curve = RevenueCurve::from_fn(vec![1.0, 1.9, 2.8], ks, |v| {
            expected_revenue_iv_analytic(&s, &p, &lin, v)
        })
        .unwrap();
        let rows: Vec<(f64, f64, f64)> = curve.csv_rows().collect();
        assert_eq!(rows.len(), 3);
        for (v, revenue, ratio) in rows {
            assert!(revenue > 0.0 && revenue <= v);
            assert!((ratio - revenue / (v * ks)).abs() < 1e-12);
        }
        // Revenue is non-decreasing in the valuation for this family.
        assert!(curve.revenue.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn loss_indices_trivial_cases() {
        let grid = vec![1.0, 2.0, 3.0];
        let a = RevenueCurve {
            v_grid: grid.clone(),
            revenue: vec![1.0, 2.0, 3.0],
            ratio: vec![1.0; 3],
        };
        let same = loss_indices(&a, &a, 10.0).unwrap();
        assert_eq!(same.max_loss_b_vs_a, 0.0);
        assert_eq!(same.max_loss_a_vs_b, 0.0);

        let b = RevenueCurve {
            v_grid: grid.clone(),
            revenue: vec![0.5, 1.5, 2.5],
            ratio: vec![1.0; 3],
        };
        let li = loss_indices(&a, &b, 10.0).unwrap();
        assert!((li.max_loss_b_vs_a - 0.05).abs() < 1e-12);
        assert_eq!(li.max_loss_a_vs_b, 0.0);

        let c = RevenueCurve { v_grid: vec![1.0, 2.0, 3.5], revenue: vec![0.0; 3], ratio: vec![0.0; 3] };
        assert!(matches!(loss_indices(&a, &c, 10.0), Err(Error::GridMismatch { index: 2, .. })));
    }

    #[test]
    fn ratio_matches_closed_form_everywhere() {
        let p = rental();
        let lin = DiscountFunction::linear(12.0).unwrap();
        let s = build_mc_lin(&p).unwrap();
        let meta = s.mc_meta().unwrap();
        let rho = crate::mechanisms::competitive_ratio_mc(meta, &p).unwrap();
        for v in [1.0, 1.9, 2.8] {
            let r = ratio_iv(&s, &p, &lin, v).unwrap();
            assert!((r - rho).abs() < 1e-6, "v = {v}: ratio {r} vs rho {rho}");
        }
    }

    #[test]
    fn general_mc_revenue_agrees_with_closed_form() {
        let p = rental();
        let lin = DiscountFunction::linear(12.0).unwrap();
        let general = build_mc_general(&p, &lin).unwrap();
        let closed = build_mc_lin(&p).unwrap();
        for v in [1.0, 2.0, 2.8] {
            let rg = expected_revenue_iv_analytic(&general, &p, &lin, v).unwrap();
            let rc = expected_revenue_iv_analytic(&closed, &p, &lin, v).unwrap();
            assert!((rg - rc).abs() < 1e-6, "v = {v}: {rg} vs {rc}");
        }
    }
}
