//! Log-space sums, the safeguarded one-dimensional root finder used by all
//! Newton updates, and output formatting.

pub const NEWTON_MAX_ITERS: usize = 50;
pub const NEWTON_TOL: f64 = 1e-10;
pub const BRACKET: f64 = 30.0;

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalizes log weights into probabilities.
pub fn normalize_log(lw: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(lw.iter().copied());
    lw.iter().map(|w| (w - z).exp()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub iterations: usize,
    pub bisected: bool,
}

/// Root of a strictly decreasing function given as `x -> (f(x), f'(x))`.
///
/// Newton from `start`; if that has not reached `|f| < 1e-10` after 50
/// steps, bisection on `[-30, 30]`. `None` when the root is not bracketed
/// there.
pub fn solve_decreasing(f: impl Fn(f64) -> (f64, f64), start: f64) -> Option<Root> {
    let mut x = start;
    for it in 0..NEWTON_MAX_ITERS {
        let (v, d) = f(x);
        if !v.is_finite() {
            break;
        }
        if v.abs() < NEWTON_TOL {
            return Some(Root {
                x,
                iterations: it,
                bisected: false,
            });
        }
        if !(d < 0.0) || !d.is_finite() {
            break;
        }
        let next = x - v / d;
        if !next.is_finite() {
            break;
        }
        x = next;
    }
    let (mut lo, mut hi) = (-BRACKET, BRACKET);
    let (flo, fhi) = (f(lo).0, f(hi).0);
    if flo.abs() < NEWTON_TOL {
        return Some(Root { x: lo, iterations: NEWTON_MAX_ITERS, bisected: true });
    }
    if fhi.abs() < NEWTON_TOL {
        return Some(Root { x: hi, iterations: NEWTON_MAX_ITERS, bisected: true });
    }
    if !(flo > 0.0 && fhi < 0.0) {
        return None;
    }
    for it in 0..400 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid).0;
        if v.abs() < NEWTON_TOL || hi - lo < 1e-15 {
            return Some(Root {
                x: mid,
                iterations: NEWTON_MAX_ITERS + it,
                bisected: true,
            });
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(Root {
        x: 0.5 * (lo + hi),
        iterations: NEWTON_MAX_ITERS + 400,
        bisected: true,
    })
}

/// Twelve significant digits, shortest form that keeps them.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive() {
        let v = [0.1f64, -2.0, 3.5];
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(v) - naive).abs() < 1e-14);
        assert_eq!(log_sum_exp([]), f64::NEG_INFINITY);
        assert!((log_sum_exp([1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn newton_on_exponential() {
        let r = solve_decreasing(|g| (2.0 - 1.5 * g.exp(), -1.5 * g.exp()), 0.0).unwrap();
        assert!((r.x - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!(!r.bisected);
    }

    #[test]
    fn flat_derivative_falls_back_to_bisection() {
        let r = solve_decreasing(|x| (-(x - 1.0).powi(3), 0.0), 0.0).unwrap();
        assert!(r.bisected);
        assert!((r.x - 1.0).abs() < 1e-3);
    }

    #[test]
    fn unbracketed_root_is_none() {
        assert!(solve_decreasing(|x| (-1.0 - x.exp(), -x.exp()), 0.0).is_none());
    }

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt_num(0.128), "0.128");
        assert_eq!(fmt_num(4.0 / 27.0), "0.148148148148");
        assert_eq!(fmt_num(2f64.ln()), "0.69314718056");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(1e-20), "0.00000000000000000001");
    }
}
