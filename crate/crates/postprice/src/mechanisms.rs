//! Construction of the pricing strategies: the benchmark, the optimal
//! continuous-price mechanism for general and linear discounts, the
//! piecewise-constant mechanism, and the arrival-indexed ESoES-SS baseline,
//! together with their competitive-ratio formulas and lower bounds.

use serde::{Deserialize, Serialize};

use crate::discounting::{DiscountFunction, DiscountKind, XI_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{find_root, integrate, integrate_ode, Tolerance};

/// Default number of RK4 steps for the shooting construction. At this
/// resolution the backward pass beats 1e-6 against the linear closed form
/// across the whole experiment grid.
pub const ODE_STEPS: usize = 4096;

/// Relative width trimmed off both ends of the root bracket (0, T).
const BRACKET_MARGIN: f64 = 1e-9;

/// Switch-time roots get a tighter bracket than the generic default: at
/// large lambda*T the boundary error amplifies the t0 error by the shoot
/// slope (~lambda^2 t0 e^{-lambda (T - t0)}), and the boundary invariant
/// |p(0) - h| < 1e-6 must hold across the full experiment grid.
fn switch_time_tolerance() -> Tolerance {
    Tolerance { abs_tol: 1e-13, rel_tol: 1e-13, max_iter: 400 }
}

/// Poisson market: arrival rate, horizon, and the valuation range ratio
/// h = v_max / v_min after normalization to [1, h].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub lambda: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub h: f64,
}

impl MarketParams {
    pub fn new(lambda: f64, horizon: f64, h: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidParameter(format!("T must be positive, got {horizon}")));
        }
        if !(h >= 1.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("h must be >= 1, got {h}")));
        }
        Ok(Self { lambda, horizon, h })
    }
}

/// Construction constants of the continuous-price mechanism: the switch time
/// t0 after which the bottom price is posted, the revenue slope k with
/// E_v(R) = k v, and the undiscounted front coefficient a = p(0).
#[derive(Debug, Clone)]
pub struct McMeta {
    pub t0: f64,
    pub k: f64,
    pub a: f64,
    pub discount: DiscountFunction,
}

/// Piecewise-constant schedule metadata. `schedule[i - 1]` is the price on
/// I_i = [(i-1) tau, min(i tau, T)].
#[derive(Debug, Clone)]
pub struct MpcMeta {
    pub delta: f64,
    pub tau: f64,
    pub n_sub: usize,
    pub t0: f64,
    pub schedule: Vec<f64>,
}

/// ESoES-SS ladder: the expected lambda*T agents are split into
/// ceil(log_delta h) equal blocks; block j is offered h / delta^j floored at
/// 1, and any arrival beyond lambda*T is offered 1.
#[derive(Debug, Clone, Copy)]
pub struct EsoesSsMeta {
    pub n_expected: f64,
    pub delta: f64,
    pub n_blocks: usize,
    pub block_size: f64,
    pub h: f64,
}

impl EsoesSsMeta {
    pub fn price_for_index(&self, index: usize) -> f64 {
        let i = index as f64;
        if i > self.n_expected {
            return 1.0;
        }
        // Real-valued block boundaries; the epsilon guards against a ratio
        // that lands a hair above an integer.
        let j = ((i / self.block_size) - 1e-9).ceil().max(1.0) as usize;
        let j = j.min(self.n_blocks);
        (self.h / self.delta.powi(j as i32)).max(1.0)
    }
}

/// Sampled solution of the price ODE on [0, t0], evaluated by cubic Hermite
/// interpolation (slopes are exact from the ODE right-hand side).
#[derive(Debug, Clone)]
pub struct PricePath {
    times: Vec<f64>,
    prices: Vec<f64>,
    slopes: Vec<f64>,
}

impl PricePath {
    fn empty() -> Self {
        Self { times: Vec::new(), prices: Vec::new(), slopes: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.prices.iter().copied())
    }

    fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(self.times[0], *self.times.last().unwrap());
        let idx = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.prices[i],
            Err(i) => i.saturating_sub(1).min(self.times.len() - 2),
        };
        let (t0, t1) = (self.times[idx], self.times[idx + 1]);
        let dt = t1 - t0;
        let s = (t - t0) / dt;
        let (p0, p1) = (self.prices[idx], self.prices[idx + 1]);
        let (m0, m1) = (self.slopes[idx] * dt, self.slopes[idx + 1] * dt);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * m1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Benchmark,
    Mc,
    McLin,
    Mpc,
    EsoesSs,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Benchmark => "benchmark",
            StrategyKind::Mc => "mc",
            StrategyKind::McLin => "mc_lin",
            StrategyKind::Mpc => "mpc",
            StrategyKind::EsoesSs => "esoes_ss",
        }
    }
}

/// A posted-price strategy. All kinds except ESoES-SS are indexed by time;
/// ESoES-SS prices by arrival order.
#[derive(Debug, Clone)]
pub enum PricingStrategy {
    Benchmark { v: f64, discount: DiscountFunction },
    Mc { params: MarketParams, meta: McMeta, path: PricePath },
    McLin { params: MarketParams, meta: McMeta },
    Mpc { params: MarketParams, meta: MpcMeta, discount: DiscountFunction },
    EsoesSs { params: MarketParams, meta: EsoesSsMeta },
}

impl PricingStrategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Self::Benchmark { .. } => StrategyKind::Benchmark,
            Self::Mc { .. } => StrategyKind::Mc,
            Self::McLin { .. } => StrategyKind::McLin,
            Self::Mpc { .. } => StrategyKind::Mpc,
            Self::EsoesSs { .. } => StrategyKind::EsoesSs,
        }
    }

    pub fn is_time_indexed(&self) -> bool {
        !matches!(self, Self::EsoesSs { .. })
    }

    pub fn horizon(&self) -> f64 {
        match self {
            Self::Benchmark { discount, .. } => discount.horizon(),
            Self::Mc { params, .. }
            | Self::McLin { params, .. }
            | Self::Mpc { params, .. }
            | Self::EsoesSs { params, .. } => params.horizon,
        }
    }

    pub fn discount(&self) -> Option<&DiscountFunction> {
        match self {
            Self::Benchmark { discount, .. } => Some(discount),
            Self::Mc { meta, .. } | Self::McLin { meta, .. } => Some(&meta.discount),
            Self::Mpc { discount, .. } => Some(discount),
            Self::EsoesSs { .. } => None,
        }
    }

    /// Posted price at time `t`. Panics for the arrival-indexed kind; public
    /// operations guard on `is_time_indexed` first.
    pub fn price_at(&self, t: f64) -> f64 {
        match self {
            Self::Benchmark { v, discount } => v * discount.xi(t),
            Self::Mc { meta, path, .. } => {
                if t < meta.t0 && !path.is_empty() {
                    path.eval(t)
                } else {
                    meta.discount.xi(t)
                }
            }
            Self::McLin { params, meta } => mclin_price(params, meta, t),
            Self::Mpc { meta, .. } => {
                let idx = ((t.max(0.0) / meta.tau).floor() as usize).min(meta.schedule.len() - 1);
                meta.schedule[idx]
            }
            Self::EsoesSs { .. } => {
                panic!("price_at called on an arrival-indexed strategy (esoes_ss)")
            }
        }
    }

    /// Price seen by the `index`-th arrival (1-based) at time `t`. The
    /// time-indexed kinds ignore the index; ESoES-SS ignores the time.
    pub fn price_for_arrival(&self, index: usize, t: f64) -> f64 {
        match self {
            Self::EsoesSs { meta, .. } => meta.price_for_index(index),
            _ => self.price_at(t),
        }
    }

    pub fn mc_meta(&self) -> Option<&McMeta> {
        match self {
            Self::Mc { meta, .. } | Self::McLin { meta, .. } => Some(meta),
            _ => None,
        }
    }

    pub fn mpc_meta(&self) -> Option<&MpcMeta> {
        match self {
            Self::Mpc { meta, .. } => Some(meta),
            _ => None,
        }
    }

    pub fn esoes_meta(&self) -> Option<&EsoesSsMeta> {
        match self {
            Self::EsoesSs { meta, .. } => Some(meta),
            _ => None,
        }
    }

    /// Strategy-specific construction constants for serialization.
    pub fn metadata(&self) -> StrategyMetadata {
        let mut meta = StrategyMetadata {
            kind: self.kind().name().to_string(),
            t0: None,
            k: None,
            a: None,
            delta: None,
            tau: None,
            n_sub: None,
            rho: None,
            v: None,
        };
        match self {
            Self::Benchmark { v, .. } => meta.v = Some(*v),
            Self::Mc { params, meta: m, .. } | Self::McLin { params, meta: m } => {
                meta.t0 = Some(m.t0);
                meta.k = Some(m.k);
                meta.a = Some(m.a);
                meta.rho = competitive_ratio_mc(m, params).ok();
            }
            Self::Mpc { meta: m, .. } => {
                meta.t0 = Some(m.t0);
                meta.delta = Some(m.delta);
                meta.tau = Some(m.tau);
                meta.n_sub = Some(m.n_sub);
            }
            Self::EsoesSs { meta: m, .. } => {
                meta.delta = Some(m.delta);
                meta.n_sub = Some(m.n_blocks);
            }
        }
        meta
    }
}

/// JSON metadata block emitted next to price tables.
#[derive(Debug, Clone, Serialize)]
pub struct StrategyMetadata {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_sub: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
}

/// The benchmark that knows the shared valuation: p(t) = v xi(t).
pub fn build_benchmark_iv(
    params: &MarketParams,
    discount: &DiscountFunction,
    v: f64,
) -> Result<PricingStrategy> {
    check_horizons(params, discount)?;
    if !(1.0..=params.h).contains(&v) {
        return Err(Error::InvalidParameter(format!("benchmark valuation {v} outside [1, {}]", params.h)));
    }
    Ok(PricingStrategy::Benchmark { v, discount: discount.clone() })
}

fn mclin_price(params: &MarketParams, meta: &McMeta, t: f64) -> f64 {
    let t_end = params.horizon;
    if t >= t_end {
        return 0.0;
    }
    let t = t.max(0.0);
    let xi = 1.0 - t / t_end;
    if t < meta.t0 {
        let lambda = params.lambda;
        let k = meta.k;
        params.h * xi * (lambda * (1.0 - 1.0 / k) * t + lambda / (2.0 * k * t_end) * t * t).exp()
    } else {
        xi
    }
}

/// k(t0) = 1 - (1/(lambda T)) (1 + lambda t0 - e^{-lambda (T - t0)}), the
/// revenue slope implied by selling at the bottom price from t0 on (linear
/// discount).
pub fn mclin_k_from_tail(params: &MarketParams, t0: f64) -> f64 {
    let (lambda, t_end) = (params.lambda, params.horizon);
    1.0 - (1.0 + lambda * t0 - (-lambda * (t_end - t0)).exp()) / (lambda * t_end)
}

/// k(t0) = lambda t0 (2T - t0) / (2T (lambda t0 + ln h)), the revenue slope
/// implied by the boundary conditions p(0) = h, p(t0) = xi(t0).
pub fn mclin_k_from_boundary(params: &MarketParams, t0: f64) -> f64 {
    let (lambda, t_end) = (params.lambda, params.horizon);
    lambda * t0 * (2.0 * t_end - t0) / (2.0 * t_end * (lambda * t0 + params.h.ln()))
}

/// Residual of the switch-time equation whose unique positive root defines
/// t0 for the linear discount.
pub fn eq_t0_residual(params: &MarketParams, t0: f64) -> f64 {
    mclin_k_from_boundary(params, t0) - mclin_k_from_tail(params, t0)
}

fn k_star_linear(params: &MarketParams) -> f64 {
    let lt = params.lambda * params.horizon;
    1.0 - (1.0 - (-lt).exp()) / lt
}

/// Closed-form optimal mechanism for the linear discount. For h = 1 the
/// boundary formula degenerates (ln h = 0) and the only sensible mechanism
/// always posts the bottom price: t0 = 0, k = k*.
pub fn build_mc_lin(params: &MarketParams) -> Result<PricingStrategy> {
    let discount = DiscountFunction::linear(params.horizon)?;
    if params.h <= 1.0 {
        let meta = McMeta { t0: 0.0, k: k_star_linear(params), a: 1.0, discount };
        return Ok(PricingStrategy::McLin { params: *params, meta });
    }
    let margin = BRACKET_MARGIN * params.horizon;
    let (lo, hi) = (margin, params.horizon - margin);
    let t0 = find_root(|t| eq_t0_residual(params, t), lo, hi, switch_time_tolerance()).map_err(
        |e| match e {
            Error::NoSignChange { lo, hi, f_lo, f_hi } => Error::Construction(format!(
                "switch-time residual has no sign change on ({lo:.3e}, {hi:.3e}): q(lo) = {f_lo:.3e}, q(hi) = {f_hi:.3e}"
            )),
            other => other,
        },
    )?;
    let k = mclin_k_from_boundary(params, t0);
    let meta = McMeta { t0, k, a: params.h, discount };
    Ok(PricingStrategy::McLin { params: *params, meta })
}

/// b(t) = lambda - lambda/(k zeta(t)) - zeta'(t)/zeta(t), the log-price
/// slope of the optimal mechanism.
fn price_log_slope(discount: &DiscountFunction, lambda: f64, k: f64, t: f64) -> f64 {
    match (discount.zeta(t), discount.zeta_prime(t)) {
        (Ok(z), Ok(zp)) => lambda - lambda / (k * z) - zp / z,
        // Propagates to an explicit non-finite-state failure in the ODE.
        _ => f64::NAN,
    }
}

/// k(t0) per the tail-revenue constraint for an arbitrary discount:
/// the expected revenue at the bottom valuation,
/// e^{lambda t0} int_{t0}^{T} xi(t) lambda e^{-lambda t} dt
///   = int_0^{T-t0} xi(t0 + t) lambda e^{-lambda t} dt.
///
/// The second form is the one integrated here (the prefactor cancels
/// against the substituted exponential, which keeps the integrand O(1)).
/// Under the linear discount it reduces to the closed form
/// 1 - (1/(lambda T))(1 + lambda t0 - e^{-lambda (T - t0)}).
pub fn mc_k_from_tail(
    params: &MarketParams,
    discount: &DiscountFunction,
    t0: f64,
) -> Result<f64> {
    let lambda = params.lambda;
    integrate(
        |t| discount.xi(t0 + t) * lambda * (-lambda * t).exp(),
        0.0,
        params.horizon - t0,
        Tolerance::quadrature(),
    )
}

/// Shooting construction of the optimal mechanism for a general discount.
///
/// For a candidate t0 the tail constraint fixes k; the price ODE is then
/// integrated backward from (t0, xi(t0)) to t = 0 and the candidate is
/// accepted when p(0) = h. The integration runs on ln p (the ODE is linear
/// in the price, so the log form is the same equation and keeps the far end
/// of the bracket finite).
pub fn build_mc_general(
    params: &MarketParams,
    discount: &DiscountFunction,
) -> Result<PricingStrategy> {
    check_horizons(params, discount)?;
    let (lambda, t_end, h) = (params.lambda, params.horizon, params.h);
    if h <= 1.0 {
        let k = mc_k_from_tail(params, discount, 0.0)?;
        let meta = McMeta { t0: 0.0, k, a: 1.0, discount: discount.clone() };
        return Ok(PricingStrategy::Mc { params: *params, meta, path: PricePath::empty() });
    }

    let margin = BRACKET_MARGIN * t_end;
    let lo = margin;
    // Back the bracket top off any region where the discount has already
    // vanished; zeta is not queryable there.
    let mut hi = t_end - margin;
    if discount.xi(hi) <= 1e-9 {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if discount.xi(m) > 1e-9 {
                a = m;
            } else {
                b = m;
            }
        }
        hi = a;
    }

    let shoot = |t0: f64| -> Result<f64> {
        let k = mc_k_from_tail(params, discount, t0)?;
        let path = integrate_ode(
            |t, _| price_log_slope(discount, lambda, k, t),
            t0,
            0.0,
            discount.xi(t0).ln(),
            ODE_STEPS,
        )?;
        Ok(path.endpoint().1 - h.ln())
    };

    let failure = std::cell::RefCell::new(None);
    let shoot_value = |t0: f64| match shoot(t0) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let t0 = match find_root(shoot_value, lo, hi, switch_time_tolerance()) {
        Ok(t0) => t0,
        Err(e) => {
            if let Some(inner) = failure.borrow_mut().take() {
                return Err(inner);
            }
            return Err(match e {
                Error::NoSignChange { lo, hi, f_lo, f_hi } => Error::Construction(format!(
                    "price shooting has no sign change: shoot({lo:.6}) = {f_lo:.3e}, shoot({hi:.6}) = {f_hi:.3e}"
                )),
                other => other,
            });
        }
    };

    let k = mc_k_from_tail(params, discount, t0)?;
    let log_path = integrate_ode(
        |t, _| price_log_slope(discount, lambda, k, t),
        t0,
        0.0,
        discount.xi(t0).ln(),
        ODE_STEPS,
    )?;

    // Reverse into an ascending path over [0, t0] and attach exact slopes.
    let n = log_path.len();
    let mut times = Vec::with_capacity(n);
    let mut prices = Vec::with_capacity(n);
    let mut slopes = Vec::with_capacity(n);
    for j in (0..n).rev() {
        let t = log_path.times[j];
        let p = log_path.values[j].exp();
        times.push(t);
        prices.push(p);
        slopes.push(price_log_slope(discount, lambda, k, t) * p);
    }
    times[0] = 0.0;

    let p0 = prices[0];
    if (p0 - h).abs() > 1e-6 {
        return Err(Error::Inconsistency(format!(
            "shooting boundary violated: p(0) = {p0}, expected h = {h}"
        )));
    }
    let meta = McMeta { t0, k, a: p0, discount: discount.clone() };
    Ok(PricingStrategy::Mc { params: *params, meta, path: PricePath { times, prices, slopes } })
}

/// rho = k / k*, evaluated from the tail/total revenue integrals. Under the
/// linear discount the closed-form ratio expression is also evaluated and
/// must agree to 1e-9.
pub fn competitive_ratio_mc(meta: &McMeta, params: &MarketParams) -> Result<f64> {
    let lambda = params.lambda;
    let tol = Tolerance::quadrature();
    let numerator = mc_k_from_tail(params, &meta.discount, meta.t0)?;
    let denominator = integrate(
        |t| meta.discount.xi(t) * lambda * (-lambda * t).exp(),
        0.0,
        params.horizon,
        tol,
    )?;
    let rho = numerator / denominator;
    if meta.discount.kind() == DiscountKind::Linear {
        let closed = mclin_k_from_tail(params, meta.t0) / k_star_linear(params);
        if (rho - closed).abs() > 1e-9 {
            return Err(Error::Inconsistency(format!(
                "ratio mismatch: quadrature gives {rho}, closed form gives {closed}"
            )));
        }
    }
    Ok(rho.clamp(0.0, 1.0))
}

/// ceil(log_delta h) with a guard against representation noise when the log
/// is an exact integer.
fn ceil_log(h: f64, delta: f64) -> usize {
    let lg = h.ln() / delta.ln();
    let rounded = lg.round();
    if (lg - rounded).abs() < 1e-9 {
        (rounded as usize).max(1)
    } else {
        (lg.ceil() as usize).max(1)
    }
}

fn floor_log(h: f64, delta: f64) -> usize {
    let lg = h.ln() / delta.ln();
    let rounded = lg.round();
    if (lg - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        lg.floor() as usize
    }
}

/// Piecewise-constant mechanism: [0, t0] is evenly split into
/// ceil(log_delta h) sub-intervals of length tau and the remaining time into
/// further tau-intervals. Prices follow the geometric ladder, then the
/// discounted bottom price, and the trailing short interval reuses the
/// preceding level.
pub fn build_mpc(
    params: &MarketParams,
    discount: &DiscountFunction,
    delta: f64,
    t0: f64,
) -> Result<PricingStrategy> {
    check_horizons(params, discount)?;
    let (h, t_end) = (params.h, params.horizon);
    if !(delta > 1.0 && delta <= h) {
        return Err(Error::InvalidParameter(format!("delta must lie in (1, h], got {delta} with h = {h}")));
    }
    if !(t0 > 0.0 && t0 < t_end) {
        return Err(Error::InvalidParameter(format!("t0 must lie in (0, T), got {t0} with T = {t_end}")));
    }
    let n_sub = ceil_log(h, delta);
    let tau = t0 / n_sub as f64;
    let n_intervals = {
        let raw = t_end / tau;
        let rounded = raw.round();
        if (raw - rounded).abs() < 1e-9 { rounded as usize } else { raw.ceil() as usize }
    };
    let ladder_top = floor_log(h, delta);
    let mut schedule = Vec::with_capacity(n_intervals);
    for i in 1..=n_intervals {
        let price = if i <= ladder_top {
            h / delta.powi(i as i32) * discount.xi(i as f64 * tau)
        } else if i < n_intervals {
            discount.xi(i as f64 * tau)
        } else {
            discount.xi((i - 1) as f64 * tau)
        };
        schedule.push(price);
    }
    let meta = MpcMeta { delta, tau, n_sub, t0, schedule };
    Ok(PricingStrategy::Mpc { params: *params, meta, discount: discount.clone() })
}

/// M_PC parameterized by the number of sub-intervals: delta = h^(1/n_sub)
/// makes ceil(log_delta h) equal n_sub exactly.
pub fn mpc_from_nsub(
    params: &MarketParams,
    discount: &DiscountFunction,
    n_sub: usize,
    t0: f64,
) -> Result<PricingStrategy> {
    if n_sub == 0 {
        return Err(Error::InvalidParameter("n_sub must be >= 1".into()));
    }
    if params.h <= 1.0 {
        return Err(Error::InvalidParameter("mpc needs h > 1".into()));
    }
    let delta = params.h.powf(1.0 / n_sub as f64);
    let strategy = build_mpc(params, discount, delta, t0)?;
    debug_assert_eq!(strategy.mpc_meta().unwrap().n_sub, n_sub);
    Ok(strategy)
}

/// ESoES-SS: the ESoES ladder computed for the expected lambda*T agents,
/// proposed by arrival index, price 1 beyond the expected count.
pub fn build_esoes_ss(params: &MarketParams, delta: f64) -> Result<PricingStrategy> {
    let h = params.h;
    if !(delta > 1.0 && delta <= h) {
        return Err(Error::InvalidParameter(format!("delta must lie in (1, h], got {delta} with h = {h}")));
    }
    let n_expected = params.lambda * params.horizon;
    let n_blocks = ceil_log(h, delta);
    let block_size = n_expected / n_blocks as f64;
    let meta = EsoesSsMeta { n_expected, delta, n_blocks, block_size, h };
    Ok(PricingStrategy::EsoesSs { params: *params, meta })
}

/// Maximum price ratio over a lag of tau: max_s p(s)/p(s + tau) over a grid
/// of n_grid s values. The scan covers exactly the range where the lagged
/// price is still above the vanishing floor; the range endpoint is located
/// by bisection so the value is stable under grid refinement. Always >= 1.
pub fn kappa_tau(strategy: &PricingStrategy, tau: f64, n_grid: usize) -> Result<f64> {
    if !strategy.is_time_indexed() {
        return Err(Error::NotTimeIndexed { op: "kappa_tau", kind: strategy.kind().name() });
    }
    let t_end = strategy.horizon();
    if !(tau > 0.0 && tau <= t_end) {
        return Err(Error::InvalidParameter(format!("tau must lie in (0, T], got {tau}")));
    }
    if n_grid == 0 {
        return Err(Error::InvalidParameter("n_grid must be >= 1".into()));
    }
    let mut s_hi = t_end - tau;
    if strategy.price_at(s_hi + tau) < XI_FLOOR {
        if strategy.price_at(tau) < XI_FLOOR {
            return Ok(1.0);
        }
        // Last s whose lagged price stays above the floor (prices are
        // non-increasing for every mechanism built here).
        let (mut a, mut b) = (0.0f64, s_hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if strategy.price_at(m + tau) >= XI_FLOOR {
                a = m;
            } else {
                b = m;
            }
        }
        s_hi = a;
    }
    let mut kappa = 1.0f64;
    for i in 0..=n_grid {
        let s = s_hi * i as f64 / n_grid as f64;
        let lagged = strategy.price_at(s + tau);
        if lagged < XI_FLOOR {
            continue;
        }
        kappa = kappa.max(strategy.price_at(s) / lagged);
    }
    Ok(kappa)
}

/// Admissibility threshold for the competitive-ratio lower bounds:
/// lambda*tau = (lambda T)^(1-eps) must be at least 1 - ln(e - 1).
pub fn admissibility_threshold() -> f64 {
    1.0 - (std::f64::consts::E - 1.0).ln()
}

/// A competitive-ratio lower bound together with the interval length it
/// was evaluated at.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LowerBound {
    pub value: f64,
    pub tau: f64,
}

fn admissible_tau(params: &MarketParams, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let lambda_tau = (params.lambda * params.horizon).powf(1.0 - epsilon);
    let threshold = admissibility_threshold();
    if lambda_tau < threshold {
        return Err(Error::InvalidParameter(format!(
            "lambda*tau = {lambda_tau:.6} is below the admissibility threshold {threshold:.6}"
        )));
    }
    Ok(params.horizon.powf(1.0 - epsilon) * params.lambda.powf(-epsilon))
}

/// Lower bound on the competitive ratio of the continuous mechanism in the
/// random valuation setting: xi(t0 + tau) (1 - eps) / (kappa e).
pub fn lower_bound_mc(
    meta: &McMeta,
    params: &MarketParams,
    epsilon: f64,
    kappa: f64,
) -> Result<LowerBound> {
    if !(kappa >= 1.0) {
        return Err(Error::InvalidParameter(format!("kappa must be >= 1, got {kappa}")));
    }
    let tau = admissible_tau(params, epsilon)?;
    let value = meta.discount.xi(meta.t0 + tau) * (1.0 - epsilon) / (kappa * std::f64::consts::E);
    Ok(LowerBound { value, tau })
}

/// Lower bound for the piecewise-constant mechanism:
/// xi((n_sub + 1) tau) (1 - eps) / (delta e).
pub fn lower_bound_mpc(
    meta: &MpcMeta,
    params: &MarketParams,
    discount: &DiscountFunction,
    epsilon: f64,
) -> Result<LowerBound> {
    let tau = admissible_tau(params, epsilon)?;
    let value = discount.xi((meta.n_sub as f64 + 1.0) * tau) * (1.0 - epsilon)
        / (meta.delta * std::f64::consts::E);
    Ok(LowerBound { value, tau })
}

/// Closed-form upper bound on the switch time for the linear discount:
/// (-ln h + sqrt(2 lambda T ln h + ln^2 h)) / lambda.
pub fn t0_upper_bound(params: &MarketParams) -> f64 {
    let ln_h = params.h.ln();
    if ln_h <= 0.0 {
        return 0.0;
    }
    (-ln_h + (2.0 * params.lambda * params.horizon * ln_h + ln_h * ln_h).sqrt()) / params.lambda
}

fn check_horizons(params: &MarketParams, discount: &DiscountFunction) -> Result<()> {
    let scale = params.horizon.abs().max(1.0);
    if (discount.horizon() - params.horizon).abs() > 1e-9 * scale {
        return Err(Error::InvalidParameter(format!(
            "discount horizon {} does not match market horizon {}",
            discount.horizon(),
            params.horizon
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lambda: f64, horizon: f64, h: f64) -> MarketParams {
        MarketParams::new(lambda, horizon, h).unwrap()
    }

    fn rental() -> MarketParams {
        // The long-term rental scenario used throughout: one-year horizon in
        // months, ten expected arrivals per month.
        params(10.0, 12.0, 2.8)
    }

    #[test]
    fn benchmark_prices() {
        let lin = DiscountFunction::linear(12.0).unwrap();
        let s = build_benchmark_iv(&rental(), &lin, 1.0).unwrap();
        assert_eq!(s.price_at(0.0), 1.0);
        let s = build_benchmark_iv(&rental(), &lin, 2.8).unwrap();
        assert!((s.price_at(6.0) - 1.4).abs() < 1e-12);
        let one = DiscountFunction::constant_one(12.0).unwrap();
        let s = build_benchmark_iv(&rental(), &one, 1.0).unwrap();
        for t in [0.0, 3.0, 12.0] {
            assert_eq!(s.price_at(t), 1.0);
        }
        assert!(build_benchmark_iv(&rental(), &lin, 3.0).is_err());
    }

    /// Independent oracle for the switch-time root: a one-million-point scan
    /// of the residual must find exactly one sign change, and the root must
    /// fall inside that cell.
    #[test]
    fn mclin_root_is_unique_by_scan() {
        let p = rental();
        let s = build_mc_lin(&p).unwrap();
        let t0 = s.mc_meta().unwrap().t0;
        let n = 1_000_000;
        let (lo, hi) = (1e-9 * p.horizon, p.horizon * (1.0 - 1e-9));
        let mut crossings = Vec::new();
        let mut prev_t = lo;
        let mut prev_q = eq_t0_residual(&p, lo);
        for i in 1..=n {
            let t = lo + (hi - lo) * i as f64 / n as f64;
            let q = eq_t0_residual(&p, t);
            if prev_q * q <= 0.0 {
                crossings.push((prev_t, t));
            }
            prev_t = t;
            prev_q = q;
        }
        assert_eq!(crossings.len(), 1, "expected a unique sign change");
        let (a, b) = crossings[0];
        assert!(t0 >= a && t0 <= b, "t0 = {t0} outside scan cell [{a}, {b}]");
        assert!(eq_t0_residual(&p, t0).abs() < 1e-10);
    }

    #[test]
    fn mclin_boundaries_and_monotonicity() {
        let p = rental();
        let s = build_mc_lin(&p).unwrap();
        let meta = s.mc_meta().unwrap();
        assert!((s.price_at(0.0) - 2.8).abs() < 1e-9);
        let xi_t0 = 1.0 - meta.t0 / p.horizon;
        assert!((s.price_at(meta.t0 - 1e-12) - xi_t0).abs() < 1e-6);
        assert_eq!(s.price_at(p.horizon), 0.0);
        // Undiscounted price non-increasing over 1000 samples.
        let d = s.discount().unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..1000 {
            let t = p.horizon * i as f64 / 1000.0 * 0.999999;
            let u = s.price_at(t) / d.xi(t);
            assert!(u <= prev + 1e-9, "undiscounted price rises at t = {t}");
            prev = u;
        }
    }

    #[test]
    fn mclin_frozen_reference_values() {
        // Values frozen from an independent scan-plus-bisection run.
        let s = build_mc_lin(&rental()).unwrap();
        let meta = s.mc_meta().unwrap();
        assert!((meta.t0 - 1.375546139565).abs() < 1e-8, "t0 = {}", meta.t0);
        assert!((meta.k - 0.877037821703).abs() < 1e-8, "k = {}", meta.k);
    }

    #[test]
    fn mclin_degenerate_h() {
        let p = params(10.0, 12.0, 1.0);
        let s = build_mc_lin(&p).unwrap();
        let meta = s.mc_meta().unwrap();
        assert_eq!(meta.t0, 0.0);
        assert!((meta.k - k_star_linear(&p)).abs() < 1e-12);
        for t in [0.0, 3.0, 11.0] {
            assert!((s.price_at(t) - (1.0 - t / 12.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn mc_general_matches_closed_form_under_linear_discount() {
        let p = rental();
        let lin = DiscountFunction::linear(p.horizon).unwrap();
        let general = build_mc_general(&p, &lin).unwrap();
        let closed = build_mc_lin(&p).unwrap();
        let sup = (0..=4000)
            .map(|i| {
                let t = p.horizon * i as f64 / 4000.0;
                (general.price_at(t) - closed.price_at(t)).abs()
            })
            .fold(0.0f64, f64::max);
        assert!(sup < 1e-6, "sup norm = {sup:e}");
        let (g, c) = (general.mc_meta().unwrap(), closed.mc_meta().unwrap());
        assert!((g.t0 - c.t0).abs() < 1e-7);
        assert!((g.k - c.k).abs() < 1e-8);
    }

    /// The price ODE in plain price space, integrated backward from
    /// (t0, xi(t0)) with the closed-form k, must land on p(0) = h: the
    /// closed form is the oracle for the backward integration.
    #[test]
    fn backward_price_ode_recovers_h() {
        let p = rental();
        let lin = DiscountFunction::linear(p.horizon).unwrap();
        let meta_owned = build_mc_lin(&p).unwrap();
        let meta = meta_owned.mc_meta().unwrap();
        let (t0, k) = (meta.t0, meta.k);
        let rhs = |t: f64, y: f64| {
            let z = lin.zeta(t).unwrap();
            let zp = lin.zeta_prime(t).unwrap();
            (p.lambda - p.lambda / (k * z) - zp / z) * y
        };
        let path =
            crate::numerics::integrate_ode(rhs, t0, 0.0, 1.0 - t0 / p.horizon, ODE_STEPS).unwrap();
        let (_, p0) = path.endpoint();
        assert!((p0 - p.h).abs() < 1e-6, "p(0) = {p0}");
    }

    #[test]
    fn mc_general_constant_discount_closed_form() {
        // With xi = 1 the ODE collapses to p' = lambda (1 - 1/k) p, so the
        // price is exp(lambda (1 - 1/k)(t - t0)) and p(0) = h pins t0.
        let p = params(1.0, 10.0, 4.0);
        let one = DiscountFunction::constant_one(10.0).unwrap();
        let s = build_mc_general(&p, &one).unwrap();
        let meta = s.mc_meta().unwrap();
        assert!((s.price_at(0.0) - 4.0).abs() < 1e-7);
        assert!((s.price_at(meta.t0) - 1.0).abs() < 1e-7);
        let rate = p.lambda * (1.0 - 1.0 / meta.k);
        for frac in [0.25, 0.5, 0.75] {
            let t = meta.t0 * frac;
            let expected = (rate * (t - meta.t0)).exp();
            assert!(
                (s.price_at(t) - expected).abs() < 1e-6,
                "t = {t}: {} vs {expected}",
                s.price_at(t)
            );
        }
        // Tail constraint imposed by construction.
        let k_check = mc_k_from_tail(&p, &one, meta.t0).unwrap();
        assert!((k_check - meta.k).abs() < 1e-8);
    }

    #[test]
    fn mc_general_custom_quadratic_discount() {
        // Quadratic decay vanishes at T with zero slope, exercising the
        // finite-difference zeta' and the bracket backoff away from the
        // vanished tail.
        let p = params(3.0, 10.0, 4.0);
        let quad = DiscountFunction::custom(10.0, |t| (1.0 - t / 10.0).powi(2)).unwrap();
        let s = build_mc_general(&p, &quad).unwrap();
        let meta = s.mc_meta().unwrap();
        assert!((s.price_at(0.0) - 4.0).abs() < 1e-6);
        assert!((s.price_at(meta.t0) - quad.xi(meta.t0)).abs() < 1e-9);
        let k_tail = mc_k_from_tail(&p, &quad, meta.t0).unwrap();
        assert!((k_tail - meta.k).abs() < 1e-8);
        let mut prev = f64::INFINITY;
        for i in 0..2000 {
            let t = meta.t0 * i as f64 / 2000.0;
            let u = s.price_at(t) / quad.xi(t);
            assert!(u <= prev + 1e-7, "undiscounted price rises at t = {t}");
            prev = u;
        }
        let rho = competitive_ratio_mc(meta, &p).unwrap();
        assert!(rho > 0.0 && rho < 1.0);
    }

    #[test]
    fn competitive_ratio_identities() {
        let p = rental();
        let s = build_mc_lin(&p).unwrap();
        let meta = s.mc_meta().unwrap();
        let rho = competitive_ratio_mc(meta, &p).unwrap();
        assert!(rho > 0.0 && rho <= 1.0);
        assert!((rho - meta.k / k_star_linear(&p)).abs() < 1e-9);
        // t0 -> 0 makes the ratio 1.
        let degenerate = McMeta {
            t0: 0.0,
            k: k_star_linear(&p),
            a: 1.0,
            discount: DiscountFunction::linear(p.horizon).unwrap(),
        };
        let rho1 = competitive_ratio_mc(&degenerate, &p).unwrap();
        assert!((rho1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mpc_schedule_examples() {
        // h = 16, delta = 2, t0 = 4, linear T = 12: tau = 1.
        let p = params(10.0, 12.0, 16.0);
        let lin = DiscountFunction::linear(12.0).unwrap();
        let s = build_mpc(&p, &lin, 2.0, 4.0).unwrap();
        let meta = s.mpc_meta().unwrap();
        assert_eq!(meta.n_sub, 4);
        assert!((meta.tau - 1.0).abs() < 1e-12);
        assert!((meta.schedule[0] - 8.0 * (1.0 - 1.0 / 12.0)).abs() < 1e-9);
        assert!((meta.schedule[3] - (1.0 - 4.0 / 12.0)).abs() < 1e-9);
        // Last interval reuses the preceding price level.
        let n = meta.schedule.len();
        assert_eq!(n, 12);
        assert!((meta.schedule[n - 1] - lin.xi((n - 1) as f64 * meta.tau)).abs() < 1e-12);
        // Lookup hits the right interval.
        assert!((s.price_at(0.5) - meta.schedule[0]).abs() < 1e-12);
        assert!((s.price_at(3.5) - meta.schedule[3]).abs() < 1e-12);
        assert!((s.price_at(12.0) - meta.schedule[n - 1]).abs() < 1e-12);
    }

    #[test]
    fn mpc_prices_are_non_increasing_and_bounded() {
        let p = params(10.0, 12.0, 16.0);
        for d in [
            DiscountFunction::linear(12.0).unwrap(),
            DiscountFunction::constant_one(12.0).unwrap(),
        ] {
            let s = build_mpc(&p, &d, 2.0, 4.0).unwrap();
            let meta = s.mpc_meta().unwrap();
            let mut prev = f64::INFINITY;
            for &price in &meta.schedule {
                assert!(price <= prev + 1e-12);
                assert!(price <= p.h);
                prev = price;
            }
        }
    }

    #[test]
    fn mpc_rejects_bad_delta() {
        let p = params(10.0, 12.0, 16.0);
        let lin = DiscountFunction::linear(12.0).unwrap();
        assert!(build_mpc(&p, &lin, 1.0, 4.0).is_err());
        assert!(build_mpc(&p, &lin, 17.0, 4.0).is_err());
    }

    #[test]
    fn mpc_from_nsub_delta_values() {
        let p = params(10.0, 12.0, 10.0);
        let lin = DiscountFunction::linear(12.0).unwrap();
        for (n_sub, expected) in [(1usize, 10.0), (2, 10f64.sqrt()), (232, 10f64.powf(1.0 / 232.0))]
        {
            let s = mpc_from_nsub(&p, &lin, n_sub, 4.0).unwrap();
            let meta = s.mpc_meta().unwrap();
            assert_eq!(meta.n_sub, n_sub);
            assert!((meta.delta - expected).abs() < 1e-12, "n_sub = {n_sub}");
        }
    }

    #[test]
    fn esoes_ladder() {
        // h = 16, delta = 2, lambda T = 8: four blocks of two agents.
        let p = params(0.8, 10.0, 16.0);
        let s = build_esoes_ss(&p, 2.0).unwrap();
        let meta = s.esoes_meta().unwrap();
        assert_eq!(meta.n_blocks, 4);
        assert!((meta.block_size - 2.0).abs() < 1e-12);
        assert_eq!(meta.price_for_index(1), 8.0);
        assert_eq!(meta.price_for_index(2), 8.0);
        assert_eq!(meta.price_for_index(3), 4.0);
        assert_eq!(meta.price_for_index(8), 1.0);
        // Beyond the expected count the price is 1.
        assert_eq!(meta.price_for_index(9), 1.0);
        assert_eq!(meta.price_for_index(1000), 1.0);
        // Non-increasing in the arrival index.
        let mut prev = f64::INFINITY;
        for i in 1..=20 {
            let q = s.price_for_arrival(i, 0.3);
            assert!(q <= prev);
            prev = q;
        }
    }

    #[test]
    fn kappa_flat_prices() {
        let p = params(1.0, 10.0, 4.0);
        let one = DiscountFunction::constant_one(10.0).unwrap();
        let flat = build_benchmark_iv(&p, &one, 2.0).unwrap();
        assert_eq!(kappa_tau(&flat, 1.0, 512).unwrap(), 1.0);
        assert_eq!(kappa_tau(&flat, 10.0, 512).unwrap(), 1.0);
    }

    #[test]
    fn kappa_grid_refinement_is_stable() {
        let s = build_mc_lin(&rental()).unwrap();
        let coarse = kappa_tau(&s, 1.0, 4096).unwrap();
        let fine = kappa_tau(&s, 1.0, 40960).unwrap();
        assert!(coarse >= 1.0);
        assert!((fine - coarse).abs() / coarse < 0.01, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn kappa_rejects_arrival_indexed() {
        let p = params(1.0, 10.0, 4.0);
        let s = build_esoes_ss(&p, 2.0).unwrap();
        assert!(matches!(kappa_tau(&s, 1.0, 64), Err(Error::NotTimeIndexed { .. })));
    }

    #[test]
    fn lower_bound_mc_values() {
        let p = params(1.0, 10.0, 4.0);
        let one = DiscountFunction::constant_one(10.0).unwrap();
        let meta = McMeta { t0: 3.0, k: 0.5, a: 4.0, discount: one };
        let b = lower_bound_mc(&meta, &p, 0.5, 1.0).unwrap();
        assert!((b.value - 0.5 / std::f64::consts::E).abs() < 1e-12);
        assert!((b.tau - 10f64.powf(0.5)).abs() < 1e-12);
        // The bound vanishes as epsilon approaches 1.
        let near_one = lower_bound_mc(&meta, &p, 0.999, 1.0).unwrap();
        assert!(near_one.value < 1e-3);
        // Inadmissible lambda*tau names the threshold.
        let small = params(0.2, 1.0, 4.0);
        let err = lower_bound_mc(&meta, &small, 0.5, 1.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("threshold"), "{msg}");
    }

    #[test]
    fn lower_bound_mpc_values() {
        let p = params(1.0, 10.0, 4.0);
        let one = DiscountFunction::constant_one(10.0).unwrap();
        let s = build_mpc(&p, &one, 2.0, 3.0).unwrap();
        let meta = s.mpc_meta().unwrap();
        let b = lower_bound_mpc(meta, &p, &one, 0.5).unwrap();
        assert!((b.value - 0.5 / (2.0 * std::f64::consts::E)).abs() < 1e-12);
        assert!(lower_bound_mpc(meta, &p, &one, 0.999).unwrap().value < 1e-3);
        // Non-increasing in delta under the flat discount.
        let mut prev = f64::INFINITY;
        for delta in [1.5, 2.0, 3.0, 4.0] {
            let s = build_mpc(&p, &one, delta, 3.0).unwrap();
            let b = lower_bound_mpc(s.mpc_meta().unwrap(), &p, &one, 0.5).unwrap();
            assert!(b.value <= prev + 1e-12);
            prev = b.value;
        }
    }

    #[test]
    fn t0_upper_bound_values() {
        let p = params(1.0, 2.0, std::f64::consts::E);
        let expected = -1.0 + 5f64.sqrt();
        assert!((t0_upper_bound(&p) - expected).abs() < 1e-9);
        assert_eq!(t0_upper_bound(&params(1.0, 2.0, 1.0)), 0.0);
        // The closed-form bound dominates the constructed switch time.
        let p = rental();
        let t0 = build_mc_lin(&p).unwrap().mc_meta().unwrap().t0;
        assert!(t0 <= t0_upper_bound(&p));
    }

    #[test]
    fn metadata_block() {
        let s = build_mc_lin(&rental()).unwrap();
        let meta = s.metadata();
        assert_eq!(meta.kind, "mc_lin");
        assert!(meta.t0.is_some() && meta.k.is_some() && meta.rho.is_some());
        let json = serde_json::to_value(&meta).unwrap();
        assert!(json.get("delta").is_none());
    }
}
