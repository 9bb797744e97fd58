//! Runnable invariant suite: a fast, deterministic pass over the structural
//! properties each module guarantees. The CLI `check` subcommand prints one
//! PASS/FAIL line per entry and exits nonzero if anything fails.

use crate::analytics::{expected_revenue_iv_analytic, k_star, ratio_iv};
use crate::discounting::DiscountFunction;
use crate::error::Result;
use crate::mechanisms::{
    build_benchmark_iv, build_esoes_ss, build_mc_general, build_mc_lin, build_mpc,
    competitive_ratio_mc, kappa_tau, t0_upper_bound, MarketParams,
};
use crate::numerics::Tolerance;
use crate::simulator::{monte_carlo, monte_carlo_report};
use crate::valuations::ValuationDistribution;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Index of the first entry that breaks monotone non-increase (with slack),
/// or `None` if the sequence is non-increasing throughout.
pub fn nonincreasing_violation(values: &[f64], slack: f64) -> Option<usize> {
    values.windows(2).position(|w| w[1] > w[0] + slack).map(|i| i + 1)
}

/// Same for non-decreasing sequences.
pub fn nondecreasing_violation(values: &[f64], slack: f64) -> Option<usize> {
    values.windows(2).position(|w| w[1] < w[0] - slack).map(|i| i + 1)
}

fn check(name: &'static str, body: impl FnOnce() -> Result<()>) -> CheckOutcome {
    match body() {
        Ok(()) => CheckOutcome { name, passed: true, detail: String::new() },
        Err(e) => CheckOutcome { name, passed: false, detail: e.to_string() },
    }
}

fn fail(msg: String) -> crate::Error {
    crate::Error::Inconsistency(msg)
}

fn rental() -> MarketParams {
    MarketParams::new(10.0, 12.0, 2.8).unwrap()
}

/// Runs the whole suite. Designed to finish in a few seconds.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        check("discount-xi-non-increasing", || {
            for d in [
                DiscountFunction::linear(12.0)?,
                DiscountFunction::constant_one(12.0)?,
                DiscountFunction::custom(12.0, |t| (1.0 - t / 12.0).powi(2))?,
            ] {
                let xs: Vec<f64> =
                    (0..=1024).map(|i| d.xi(12.0 * i as f64 / 1024.0)).collect();
                if let Some(i) = nonincreasing_violation(&xs, 1e-9) {
                    return Err(fail(format!("{:?} increases at grid index {i}", d.kind())));
                }
            }
            Ok(())
        }),
        check("discount-zeta-prime-finite-difference", || {
            let d = DiscountFunction::linear(12.0)?;
            for i in 1..99 {
                let t = 0.99 * 12.0 * i as f64 / 99.0;
                let s = 1e-6;
                let fd = (d.zeta(t + s)? - d.zeta(t - s)?) / (2.0 * s);
                let an = d.zeta_prime(t)?;
                if ((fd - an) / an).abs() > 1e-5 {
                    return Err(fail(format!("zeta' mismatch at t = {t}: {fd} vs {an}")));
                }
            }
            Ok(())
        }),
        check("valuation-cdfs-monotone", || {
            for dist in [
                ValuationDistribution::point(2.0, 4.0)?,
                ValuationDistribution::uniform(10.0)?,
                ValuationDistribution::truncated_normal(4.5, 2.0, 10.0)?,
            ] {
                let h = dist.h();
                let grid: Vec<f64> = (0..=256).map(|i| h * i as f64 / 256.0).collect();
                let cdf: Vec<f64> = grid.iter().map(|&x| dist.cdf(x)).collect();
                let fx: Vec<f64> = grid.iter().map(|&x| dist.max_order_cdf(2.0, x)).collect();
                let fz: Result<Vec<f64>> = grid.iter().map(|&x| dist.product_cdf(x)).collect();
                let fy: Vec<f64> = grid.iter().map(|&x| dist.max_discounted_cdf(2.0, x)).collect();
                for (label, values) in
                    [("F", cdf), ("F_X", fx), ("F_Z", fz?), ("F_Y", fy)]
                {
                    if let Some(i) = nondecreasing_violation(&values, 1e-9) {
                        return Err(fail(format!(
                            "{label} of {} decreases at index {i}",
                            dist.kind_name()
                        )));
                    }
                }
            }
            Ok(())
        }),
        check("mhr-preserved-by-max-order-law", || {
            let d = ValuationDistribution::uniform(10.0)?;
            for lt in [0.5, 2.0, 8.0] {
                let hz: Vec<f64> = (0..256)
                    .map(|i| {
                        let x = 1.0 + 8.99 * i as f64 / 255.0;
                        d.max_order_hazard(lt, x).unwrap()
                    })
                    .collect();
                if let Some(i) = nondecreasing_violation(&hz, 1e-9) {
                    return Err(fail(format!("max-order hazard decreases at index {i}, lt = {lt}")));
                }
            }
            Ok(())
        }),
        check("expected-max-monotone-and-bounded", || {
            let d = ValuationDistribution::uniform(10.0)?;
            let tol = Tolerance::quadrature();
            let es: Result<Vec<f64>> =
                [0.2, 1.0, 3.0, 9.0, 27.0].iter().map(|&lt| d.expected_max(lt, tol)).collect();
            let es = es?;
            if let Some(i) = nondecreasing_violation(&es, 1e-12) {
                return Err(fail(format!("E[X] decreases at index {i}")));
            }
            if es.iter().any(|&e| e > 10.0) {
                return Err(fail("E[X] exceeds h".into()));
            }
            Ok(())
        }),
        check("discounted-max-below-undiscounted-max", || {
            let d = ValuationDistribution::uniform(10.0)?;
            let tol = Tolerance::quadrature();
            for lt in [1.0, 5.0, 25.0] {
                let ey = d.expected_max_discounted(lt, tol)?;
                let ex = d.expected_max(lt, tol)?;
                if ey > ex + 1e-9 {
                    return Err(fail(format!("E[Y] = {ey} > E[X] = {ex} at lambda*T = {lt}")));
                }
            }
            Ok(())
        }),
        check("undiscounted-price-non-increasing", || {
            let p = rental();
            let lin = DiscountFunction::linear(p.horizon)?;
            for s in [build_mc_lin(&p)?, build_mc_general(&p, &lin)?] {
                let us: Vec<f64> = (0..2048)
                    .map(|i| {
                        let t = p.horizon * i as f64 / 2048.0 * 0.999999;
                        s.price_at(t) / lin.xi(t)
                    })
                    .collect();
                if let Some(i) = nonincreasing_violation(&us, 1e-9) {
                    return Err(fail(format!(
                        "{} undiscounted price rises at grid index {i}",
                        s.kind().name()
                    )));
                }
            }
            Ok(())
        }),
        check("bottom-price-tail", || {
            let p = rental();
            let lin = DiscountFunction::linear(p.horizon)?;
            for s in [build_mc_lin(&p)?, build_mc_general(&p, &lin)?] {
                let t0 = s.mc_meta().unwrap().t0;
                for i in 0..=200 {
                    let t = t0 + (p.horizon - t0) * i as f64 / 200.0;
                    if (s.price_at(t) - lin.xi(t)).abs() > 1e-9 {
                        return Err(fail(format!(
                            "{} posts {} instead of xi(t) = {} at t = {t}",
                            s.kind().name(),
                            s.price_at(t),
                            lin.xi(t)
                        )));
                    }
                }
            }
            Ok(())
        }),
        check("general-construction-matches-closed-form", || {
            let p = rental();
            let lin = DiscountFunction::linear(p.horizon)?;
            let general = build_mc_general(&p, &lin)?;
            let closed = build_mc_lin(&p)?;
            let sup = (0..=2000)
                .map(|i| {
                    let t = p.horizon * i as f64 / 2000.0;
                    (general.price_at(t) - closed.price_at(t)).abs()
                })
                .fold(0.0f64, f64::max);
            if sup >= 1e-6 {
                return Err(fail(format!("sup-norm gap {sup:e}")));
            }
            Ok(())
        }),
        check("ratio-equals-k-over-k-star", || {
            let p = rental();
            let s = build_mc_lin(&p)?;
            let meta = s.mc_meta().unwrap();
            let rho = competitive_ratio_mc(meta, &p)?;
            let ks = k_star(&p, &meta.discount)?;
            if (rho - meta.k / ks).abs() > 1e-9 {
                return Err(fail(format!("rho = {rho} vs k/k* = {}", meta.k / ks)));
            }
            Ok(())
        }),
        check("constant-ratio-across-valuations", || {
            let p = rental();
            let lin = DiscountFunction::linear(p.horizon)?;
            let s = build_mc_lin(&p)?;
            let k = s.mc_meta().unwrap().k;
            for i in 0..9 {
                let v = 1.0 + (p.h - 1.0) * i as f64 / 8.0;
                let slope = expected_revenue_iv_analytic(&s, &p, &lin, v)? / v;
                if ((slope - k) / k).abs() > 1e-6 {
                    return Err(fail(format!("E_v(R)/v = {slope} differs from k = {k} at v = {v}")));
                }
            }
            Ok(())
        }),
        check("switch-time-upper-bound", || {
            for (lambda, horizon, h) in [(10.0, 12.0, 2.8), (1.0, 100.0, 10.0), (4.0, 50.0, 20.0)] {
                let p = MarketParams::new(lambda, horizon, h)?;
                let t0 = build_mc_lin(&p)?.mc_meta().unwrap().t0;
                let bound = t0_upper_bound(&p);
                if t0 > bound {
                    return Err(fail(format!("t0 = {t0} exceeds bound {bound} at ({lambda}, {horizon}, {h})")));
                }
            }
            Ok(())
        }),
        check("ratio-monotone-in-rate", || {
            let rhos: Result<Vec<f64>> = [1.0, 4.0, 16.0]
                .iter()
                .map(|&l| {
                    let p = MarketParams::new(l, 12.0, 2.8)?;
                    let s = build_mc_lin(&p)?;
                    competitive_ratio_mc(s.mc_meta().unwrap(), &p)
                })
                .collect();
            if let Some(i) = nondecreasing_violation(&rhos?, 1e-12) {
                return Err(fail(format!("rho not increasing in lambda at index {i}")));
            }
            Ok(())
        }),
        check("mpc-schedule-non-increasing-within-range", || {
            let p = MarketParams::new(10.0, 12.0, 16.0)?;
            let one = DiscountFunction::constant_one(12.0)?;
            let s = build_mpc(&p, &one, 2.0, 4.0)?;
            let meta = s.mpc_meta().unwrap();
            if let Some(i) = nonincreasing_violation(&meta.schedule, 1e-12) {
                return Err(fail(format!("schedule rises at interval {i}")));
            }
            if meta.schedule.iter().any(|&q| q > p.h || q < 0.0) {
                return Err(fail("schedule leaves [0, h]".into()));
            }
            Ok(())
        }),
        check("esoes-tail-price-one", || {
            let p = MarketParams::new(0.8, 10.0, 16.0)?;
            let s = build_esoes_ss(&p, 2.0)?;
            let meta = s.esoes_meta().unwrap();
            for i in [9usize, 50, 10_000] {
                if meta.price_for_index(i) != 1.0 {
                    return Err(fail(format!("price for arrival {i} is not 1")));
                }
            }
            Ok(())
        }),
        check("kappa-at-least-one", || {
            let p = rental();
            let s = build_mc_lin(&p)?;
            for tau in [0.25, 1.0, 6.0] {
                if kappa_tau(&s, tau, 1024)? < 1.0 {
                    return Err(fail(format!("kappa below 1 at tau = {tau}")));
                }
            }
            Ok(())
        }),
        check("benchmark-ratio-is-one", || {
            let p = rental();
            let lin = DiscountFunction::linear(p.horizon)?;
            let s = build_benchmark_iv(&p, &lin, 1.7)?;
            let r = ratio_iv(&s, &p, &lin, 1.7)?;
            if (r - 1.0).abs() > 1e-8 {
                return Err(fail(format!("benchmark ratio {r}")));
            }
            Ok(())
        }),
        check("simulated-revenue-bounded-by-h", || {
            let p = MarketParams::new(5.0, 10.0, 10.0)?;
            let one = DiscountFunction::constant_one(10.0)?;
            let d = ValuationDistribution::uniform(10.0)?;
            let s = build_mc_general(&p, &one)?;
            let report = monte_carlo_report(&s, &p, &d, &one, 2000, 77, true)?;
            if report.per_run_revenues.unwrap().iter().any(|&r| r > p.h + 1e-12) {
                return Err(fail("a run earned more than h".into()));
            }
            Ok(())
        }),
        check("simulation-bit-determinism", || {
            let p = MarketParams::new(5.0, 10.0, 10.0)?;
            let one = DiscountFunction::constant_one(10.0)?;
            let d = ValuationDistribution::uniform(10.0)?;
            let s = build_benchmark_iv(&p, &one, 2.0)?;
            let a = monte_carlo(&s, &p, &d, &one, 1000, 123)?;
            let b = monte_carlo(&s, &p, &d, &one, 1000, 123)?;
            if a.mean_revenue.to_bits() != b.mean_revenue.to_bits() {
                return Err(fail("same seed produced different means".into()));
            }
            Ok(())
        }),
    ]
}
