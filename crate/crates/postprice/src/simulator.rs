//! Seeded Poisson-arrival market simulation.
//!
//! Runs are driven by counter-derived ChaCha streams: run r of a simulation
//! with master seed s always consumes stream (s, r), so results are
//! bit-identical whether the runs execute on one worker or many, in any
//! order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::discounting::DiscountFunction;
use crate::error::{Error, Result};
use crate::mechanisms::{MarketParams, PricingStrategy};
use crate::valuations::ValuationDistribution;

/// One market realization: strictly increasing arrival times in [0, T] with
/// i.i.d. valuations.
#[derive(Debug, Clone, Default)]
pub struct ArrivalTrace {
    pub times: Vec<f64>,
    pub valuations: Vec<f64>,
}

impl ArrivalTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Outcome of running a strategy on one trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunOutcome {
    pub sold: bool,
    pub sale_time: Option<f64>,
    pub sale_price: Option<f64>,
    pub buyer_index: Option<usize>,
}

impl RunOutcome {
    pub fn revenue(&self) -> f64 {
        self.sale_price.unwrap_or(0.0)
    }

    fn no_sale() -> Self {
        Self { sold: false, sale_time: None, sale_price: None, buyer_index: None }
    }
}

/// Aggregated Monte Carlo statistics.
#[derive(Debug, Clone, Serialize)]
pub struct McReport {
    pub n_runs: usize,
    pub mean_revenue: f64,
    /// Sample standard deviation over sqrt(n_runs).
    pub std_error: f64,
    pub sell_rate: f64,
    /// mean_revenue / h.
    pub normalized_mean: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_run_revenues: Option<Vec<f64>>,
}

/// The RNG stream for run `run_index` of a simulation seeded with `seed`.
pub fn run_stream(seed: u64, run_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    rng
}

/// Draws one arrival trace: exponential inter-arrival gaps truncated at the
/// horizon, valuations i.i.d. from `dist`.
pub fn sample_arrivals<R: Rng + ?Sized>(
    rng: &mut R,
    params: &MarketParams,
    dist: &ValuationDistribution,
) -> ArrivalTrace {
    let mut trace = ArrivalTrace::default();
    let mut t = 0.0;
    loop {
        // -ln(1 - U)/lambda with U in [0, 1); 1 - U stays strictly positive.
        t += -(1.0 - rng.random::<f64>()).ln() / params.lambda;
        if t > params.horizon {
            break;
        }
        trace.times.push(t);
        trace.valuations.push(dist.sample(rng));
    }
    trace
}

/// Scans the arrivals in order; agent i buys iff its discounted valuation
/// meets the posted price (ties buy), and the first buyer ends the run. The
/// revenue is the posted price at the purchase.
pub fn run_once(
    strategy: &PricingStrategy,
    trace: &ArrivalTrace,
    discount: &DiscountFunction,
) -> RunOutcome {
    for (idx, (&w, &v)) in trace.times.iter().zip(&trace.valuations).enumerate() {
        let price = strategy.price_for_arrival(idx + 1, w);
        if v * discount.xi(w) >= price {
            return RunOutcome {
                sold: true,
                sale_time: Some(w),
                sale_price: Some(price),
                buyer_index: Some(idx + 1),
            };
        }
    }
    RunOutcome::no_sale()
}

/// Runs `n_runs` independent simulations and aggregates. Runs execute in
/// parallel; per-run streams and an order-insensitive (pairwise) reduction
/// keep the report identical for any worker count.
pub fn monte_carlo(
    strategy: &PricingStrategy,
    params: &MarketParams,
    dist: &ValuationDistribution,
    discount: &DiscountFunction,
    n_runs: usize,
    seed: u64,
) -> Result<McReport> {
    monte_carlo_report(strategy, params, dist, discount, n_runs, seed, false)
}

/// As `monte_carlo`, optionally retaining the per-run revenue vector.
pub fn monte_carlo_report(
    strategy: &PricingStrategy,
    params: &MarketParams,
    dist: &ValuationDistribution,
    discount: &DiscountFunction,
    n_runs: usize,
    seed: u64,
    keep_revenues: bool,
) -> Result<McReport> {
    if n_runs == 0 {
        return Err(Error::InvalidParameter("n_runs must be >= 1".into()));
    }
    let outcomes: Vec<(f64, bool)> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = run_stream(seed, r as u64);
            let trace = sample_arrivals(&mut rng, params, dist);
            let outcome = run_once(strategy, &trace, discount);
            (outcome.revenue(), outcome.sold)
        })
        .collect();

    let revenues: Vec<f64> = outcomes.iter().map(|&(r, _)| r).collect();
    let sold = outcomes.iter().filter(|&&(_, s)| s).count();
    let n = n_runs as f64;
    let mean = pairwise_sum(&revenues) / n;
    let sq_devs: Vec<f64> = revenues.iter().map(|&r| (r - mean) * (r - mean)).collect();
    let variance = if n_runs > 1 { pairwise_sum(&sq_devs) / (n - 1.0) } else { 0.0 };
    Ok(McReport {
        n_runs,
        mean_revenue: mean,
        std_error: (variance / n).sqrt(),
        sell_rate: sold as f64 / n,
        normalized_mean: mean / params.h,
        seed,
        per_run_revenues: keep_revenues.then_some(revenues),
    })
}

/// Per-run outcomes (for CSV dumps of individual runs).
pub fn monte_carlo_outcomes(
    strategy: &PricingStrategy,
    params: &MarketParams,
    dist: &ValuationDistribution,
    discount: &DiscountFunction,
    n_runs: usize,
    seed: u64,
) -> Vec<RunOutcome> {
    (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = run_stream(seed, r as u64);
            let trace = sample_arrivals(&mut rng, params, dist);
            run_once(strategy, &trace, discount)
        })
        .collect()
}

/// Summation with a fixed pairwise tree: the result depends only on the
/// element order, never on the execution schedule.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
