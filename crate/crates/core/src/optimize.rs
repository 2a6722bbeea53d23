//! Derivative-free scalar root finding and minimization.

use crate::error::{Error, Result};

const MAX_EXPANSIONS: usize = 1100;

/// Root of a function whose sign goes from negative to positive exactly once.
///
/// Starts from `[lo, hi]` and doubles the bracket width outward on whichever
/// side fails to enclose the sign change, then bisects until the bracket is
/// narrower than `tol` or `max_iter` halvings have run.
pub fn bisect_increasing<F>(f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let mut width = hi - lo;
    let mut expansions = 0;
    while f(lo) > 0.0 {
        hi = lo;
        lo -= width;
        width *= 2.0;
        expansions += 1;
        if expansions > MAX_EXPANSIONS || !lo.is_finite() {
            return Err(Error::NoBracket(format!("no negative value found down to {lo}")));
        }
    }
    while f(hi) < 0.0 {
        lo = hi;
        hi += width;
        width *= 2.0;
        expansions += 1;
        if expansions > MAX_EXPANSIONS || !hi.is_finite() {
            return Err(Error::NoBracket(format!("no positive value found up to {hi}")));
        }
    }
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Golden-section minimizer result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for the minimum of a unimodal function on `[lo, hi]`.
///
/// Non-finite values are treated as `+inf`, so an infeasible region at one end
/// of the bracket simply pushes the search away from it.
pub fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> Minimum
where
    F: FnMut(f64) -> f64,
{
    let mut eval = |x: f64, n: &mut usize| {
        *n += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut n = 0;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = eval(x1, &mut n);
    let mut f2 = eval(x2, &mut n);
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = eval(x1, &mut n);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = eval(x2, &mut n);
        }
    }
    let (x, value) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    Minimum {
        x,
        value,
        evaluations: n,
    }
}
