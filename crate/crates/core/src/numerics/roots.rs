use super::NumericsError;

pub const ROOT_MAX_ITERS: usize = 200;

/// Bracketed Newton iteration for a continuous monotone function.
///
/// `f` returns the value and the derivative at a point. A Newton step that
/// would leave the current bracket (or a zero/non-finite derivative) is
/// replaced by bisection, so the iterate never leaves `[lo, hi]`.
///
/// Returns `x` with `|f(x)| <= tol`. If the bracket collapses to adjacent
/// floating-point values before that, the endpoint with the smaller residual
/// is returned.
pub fn root_find_monotone<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64, NumericsError>
where
    F: FnMut(f64) -> (f64, f64),
{
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(NumericsError::Domain(format!("invalid bracket [{lo}, {hi}]")));
    }
    let (f_lo, _) = f(lo);
    if f_lo.abs() <= tol {
        return Ok(lo);
    }
    let (f_hi, _) = f(hi);
    if f_hi.abs() <= tol {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() || f_lo.is_nan() || f_hi.is_nan() {
        return Err(NumericsError::NoBracket { f_lo, f_hi });
    }
    // Orient so that f(neg) < 0 < f(pos).
    let (mut neg, mut pos) = if f_lo < 0.0 { (lo, hi) } else { (hi, lo) };
    let (mut f_neg, mut f_pos) = if f_lo < 0.0 { (f_lo, f_hi) } else { (f_hi, f_lo) };
    let mut x = 0.5 * (lo + hi);
    for _ in 0..ROOT_MAX_ITERS {
        let (fx, dfx) = f(x);
        if fx.abs() <= tol {
            return Ok(x);
        }
        if fx < 0.0 {
            neg = x;
            f_neg = fx;
        } else {
            pos = x;
            f_pos = fx;
        }
        let (a, b) = if neg < pos { (neg, pos) } else { (pos, neg) };
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            return Ok(if f_neg.abs() <= f_pos.abs() { neg } else { pos });
        }
        let newton = x - fx / dfx;
        x = if dfx != 0.0 && newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            mid
        };
    }
    Err(NumericsError::NoConvergence {
        iterations: ROOT_MAX_ITERS,
    })
}
