//! Deterministic scalar quadrature, bracketed root finding, and fixed-step
//! RK4 integration.
//!
//! Every analytic quantity in this crate (benchmark constants, competitive
//! ratios, expected order statistics, the shooting construction) bottoms out
//! in one of these three routines, so they are deliberately boring: adaptive
//! Simpson refinement, plain bisection, and a fixed step count. No
//! randomized rules anywhere.

use crate::error::{Error, Result};

/// Convergence targets shared by the quadrature and root-finding routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Tolerance {
    pub fn new(abs_tol: f64, rel_tol: f64, max_iter: usize) -> Result<Self> {
        if !(abs_tol > 0.0) || !abs_tol.is_finite() {
            return Err(Error::InvalidTolerance(format!("abs_tol = {abs_tol}")));
        }
        if !(rel_tol > 0.0) || !rel_tol.is_finite() {
            return Err(Error::InvalidTolerance(format!("rel_tol = {rel_tol}")));
        }
        if max_iter == 0 {
            return Err(Error::InvalidTolerance("max_iter = 0".into()));
        }
        Ok(Self { abs_tol, rel_tol, max_iter })
    }

    /// Default for root finding: bracket width driven to ~1e-12.
    pub fn root() -> Self {
        Self { abs_tol: 1e-12, rel_tol: 1e-10, max_iter: 200 }
    }

    /// Default quadrature target. All quantities in this crate are O(1)-O(h),
    /// which leaves at least four digits of headroom over every tolerance the
    /// acceptance suite asserts.
    pub fn quadrature() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-10, max_iter: 60 }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::root()
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// The returned value carries an estimated error below
/// `max(abs_tol, rel_tol * |I|)`; refinement that still disagrees after
/// `max_iter` halvings fails with the best estimate attached.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64> {
    if !(a <= b) {
        return Err(Error::InvalidParameter(format!(
            "integration bounds must satisfy a <= b, got a = {a}, b = {b}"
        )));
    }
    if a == b {
        return Ok(0.0);
    }

    let eval = |t: f64| -> Result<f64> {
        let y = f(t);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFiniteIntegrand { t })
        }
    };

    let m = 0.5 * (a + b);
    let fa = eval(a)?;
    let fm = eval(m)?;
    let fb = eval(b)?;
    let whole = simpson(fa, fm, fb, b - a);
    let eps = tol.abs_tol.max(tol.rel_tol * whole.abs());
    let unresolved = std::cell::Cell::new(0.0f64);
    let best = adaptive(&eval, a, b, fa, fm, fb, whole, eps, tol.max_iter, &unresolved)?;
    let error = unresolved.get();
    if error > 0.0 {
        return Err(Error::QuadratureDidNotConverge { best, error, target: eps });
    }
    Ok(best)
}

fn simpson(fa: f64, fm: f64, fb: f64, width: f64) -> f64 {
    width / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<E: Fn(f64) -> Result<f64>>(
    eval: &E,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: usize,
    unresolved: &std::cell::Cell<f64>,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = eval(lm)?;
    let frm = eval(rm)?;
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    // Standard Richardson factor for Simpson: the refined pair is accurate to
    // |delta| / 15.
    if delta.abs() <= 15.0 * eps {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        // Out of refinement budget: keep the extrapolated value so the
        // failure can still carry a whole-interval best estimate.
        unresolved.set(unresolved.get() + delta.abs() / 15.0);
        return Ok(left + right + delta / 15.0);
    }
    let l = adaptive(eval, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1, unresolved)?;
    let r = adaptive(eval, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1, unresolved)?;
    Ok(l + r)
}

/// Bisection on a bracketed sign change.
///
/// Requires `f(lo) * f(hi) <= 0`; returns the midpoint of the final bracket
/// once its width is below `max(abs_tol, rel_tol * |x|)`. The result always
/// lies inside the initial bracket.
pub fn find_root<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!(
            "root bracket must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if !(f_lo * f_hi < 0.0) {
        return Err(Error::NoSignChange { lo, hi, f_lo, f_hi });
    }

    let (mut a, mut b) = (lo, hi);
    let mut f_a = f_lo;
    for _ in 0..tol.max_iter {
        let mid = 0.5 * (a + b);
        let width = b - a;
        if width <= tol.abs_tol.max(tol.rel_tol * mid.abs()) {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_a * f_mid < 0.0 {
            b = mid;
        } else {
            a = mid;
            f_a = f_mid;
        }
    }
    Err(Error::RootIterationCap { max_iter: tol.max_iter, width: b - a })
}

/// A sampled solution path of a scalar ODE, monotone in `t` and containing
/// both endpoints. `times` runs from `t_from` to `t_to` in integration order,
/// so it is decreasing for a backward integration.
#[derive(Debug, Clone)]
pub struct OdePath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl OdePath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// State at `t_to`.
    pub fn endpoint(&self) -> (f64, f64) {
        (*self.times.last().unwrap(), *self.values.last().unwrap())
    }
}

/// Fixed-step classical RK4 for `y' = rhs(t, y)` from `t_from` to `t_to`
/// (backward integration allowed). A non-finite state aborts with the
/// offending time.
pub fn integrate_ode<F: Fn(f64, f64) -> f64>(
    rhs: F,
    t_from: f64,
    t_to: f64,
    y0: f64,
    steps: usize,
) -> Result<OdePath> {
    if steps == 0 {
        return Err(Error::InvalidParameter("ODE step count must be >= 1".into()));
    }
    let h = (t_to - t_from) / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut y = y0;
    times.push(t_from);
    values.push(y);
    for j in 0..steps {
        let t = t_from + j as f64 * h;
        let k1 = rhs(t, y);
        let k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = rhs(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        // Pin the final node to t_to exactly so both endpoints are present.
        let t_next = if j + 1 == steps { t_to } else { t_from + (j + 1) as f64 * h };
        if !y.is_finite() {
            return Err(Error::NonFiniteState { t: t_next });
        }
        times.push(t_next);
        values.push(y);
    }
    Ok(OdePath { times, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent quadrature oracle: midpoint Riemann sum.
    fn riemann<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn integrate_constant() {
        let v = integrate(|_| 1.0, 0.0, 1.0, Tolerance::quadrature()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integrate_matches_riemann_oracle() {
        // int_0^1 (1-t) e^-t dt = [t e^-t]_0^1 = e^-1.
        let f = |t: f64| (1.0 - t) * (-t).exp();
        let oracle = riemann(f, 0.0, 1.0, 2_000_000);
        let v = integrate(f, 0.0, 1.0, Tolerance::quadrature()).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-10, "v = {v}");
        assert!((v - oracle).abs() < 1e-6, "v = {v}, riemann = {oracle}");
    }

    #[test]
    fn integrate_exponential_cdf() {
        // int_0^T lambda e^{-lambda t} dt = 1 - e^{-lambda T} with lambda = T = 1.
        let v = integrate(|t: f64| (-t).exp(), 0.0, 1.0, Tolerance::quadrature()).unwrap();
        assert!((v - (1.0 - (-1.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn integrate_is_additive() {
        let f = |t: f64| (t * 1.3).sin() + t * t;
        let tol = Tolerance::quadrature();
        let whole = integrate(f, 0.0, 2.0, tol).unwrap();
        let left = integrate(f, 0.0, 0.7, tol).unwrap();
        let right = integrate(f, 0.7, 2.0, tol).unwrap();
        assert!((whole - left - right).abs() < 3e-10);
    }

    #[test]
    fn integrate_rejects_reversed_bounds() {
        assert!(integrate(|_| 1.0, 1.0, 0.0, Tolerance::quadrature()).is_err());
    }

    #[test]
    fn integrate_reports_non_finite_integrand() {
        let err = integrate(|t| 1.0 / t, 0.0, 1.0, Tolerance::quadrature()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteIntegrand { .. }));
    }

    #[test]
    fn integrate_non_convergence_carries_best_estimate() {
        // A sharp boundary layer cannot be resolved within a starved
        // refinement budget; the failure must still report a finite
        // whole-interval estimate that improves as the budget grows.
        let f = |t: f64| (-200.0 * t).exp() * 200.0;
        let best_at = |depth: usize| {
            let starved = Tolerance { abs_tol: 1e-14, rel_tol: 1e-14, max_iter: depth };
            match integrate(f, 0.0, 1.0, starved) {
                Err(Error::QuadratureDidNotConverge { best, error, .. }) => {
                    assert!(best.is_finite() && error > 1e-14);
                    best
                }
                other => panic!("expected non-convergence, got {other:?}"),
            }
        };
        let truth = 1.0 - (-200.0f64).exp();
        let coarse = best_at(2);
        let finer = best_at(6);
        assert!((finer - truth).abs() < (coarse - truth).abs());
    }

    #[test]
    fn find_root_linear() {
        let x = find_root(|x| x - 0.5, 0.0, 1.0, Tolerance::root()).unwrap();
        assert!((x - 0.5).abs() < 1e-10);
    }

    #[test]
    fn find_root_sqrt2() {
        let x = find_root(|x| x * x - 2.0, 1.0, 2.0, Tolerance::root()).unwrap();
        assert!((x - std::f64::consts::SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn find_root_stays_in_bracket_and_brackets_sign_change() {
        let f = |x: f64| (x - 0.3).tan();
        let x = find_root(f, 0.0, 1.0, Tolerance::root()).unwrap();
        assert!((0.0..=1.0).contains(&x));
        let w = 1e-9;
        assert!(f(x - w) * f(x + w) <= 0.0);
    }

    #[test]
    fn find_root_requires_sign_change() {
        let err = find_root(|x| x * x + 1.0, -1.0, 1.0, Tolerance::root()).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
    }

    #[test]
    fn ode_zero_rhs_is_constant() {
        let path = integrate_ode(|_, _| 0.0, 0.0, 5.0, 3.0, 64).unwrap();
        assert!(path.values.iter().all(|&y| y == 3.0));
        assert_eq!(path.endpoint(), (5.0, 3.0));
    }

    #[test]
    fn ode_exponential_growth() {
        let path = integrate_ode(|_, y| y, 0.0, 1.0, 1.0, 1000).unwrap();
        let (_, y1) = path.endpoint();
        assert!((y1 - std::f64::consts::E).abs() < 1e-9, "y(1) = {y1}");
    }

    #[test]
    fn ode_backward_integration() {
        // y' = y integrated from 1 back to 0 starting at e recovers 1.
        let path = integrate_ode(|_, y| y, 1.0, 0.0, std::f64::consts::E, 1000).unwrap();
        let (t, y) = path.endpoint();
        assert_eq!(t, 0.0);
        assert!((y - 1.0).abs() < 1e-9);
        assert!(path.times.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ode_fourth_order_convergence() {
        // Doubling the step count should shrink the endpoint error ~16x.
        let err_at = |steps: usize| {
            let path = integrate_ode(|_, y| y, 0.0, 1.0, 1.0, steps).unwrap();
            (path.endpoint().1 - std::f64::consts::E).abs()
        };
        let e1 = err_at(50);
        let e2 = err_at(100);
        let ratio = e1 / e2;
        assert!((8.0..32.0).contains(&ratio), "observed order ratio {ratio}");
    }

    #[test]
    fn ode_non_finite_state_is_reported() {
        let err = integrate_ode(|_, y| y * y, 0.0, 10.0, 1.0, 32).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }));
    }

    #[test]
    fn tolerance_validation() {
        assert!(Tolerance::new(0.0, 1e-10, 10).is_err());
        assert!(Tolerance::new(1e-12, -1.0, 10).is_err());
        assert!(Tolerance::new(1e-12, 1e-10, 0).is_err());
        assert!(Tolerance::new(1e-12, 1e-10, 1).is_ok());
    }
}
