//! Derivative-free one-dimensional search used by the price optimizers.

/// `1 / phi`.
const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub x: f64,
    pub value: f64,
}

/// Golden-section maximization of `f` on `[a, b]`.
///
/// `f` may return `-inf` for infeasible points. Returns the best point
/// probed (ties resolved toward the smaller `x`) and the number of
/// evaluations.
pub fn golden_max<F>(mut a: f64, mut b: f64, tol: f64, mut f: F) -> (Probe, usize)
where
    F: FnMut(f64) -> f64,
{
    let mut evals = 2;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut best = better(Probe { x: c, value: fc }, Probe { x: d, value: fd });
    while (b - a).abs() > tol && evals < 400 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
            best = better(best, Probe { x: c, value: fc });
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
            best = better(best, Probe { x: d, value: fd });
        }
        evals += 1;
    }
    (best, evals)
}

fn better(a: Probe, b: Probe) -> Probe {
    if b.value > a.value || (b.value == a.value && b.x < a.x) {
        b
    } else {
        a
    }
}

/// Bisects between a point where `pred` holds and one where it fails until
/// the bracket is narrower than `tol`, returning the last point where it
/// holds together with the evaluation count.
pub fn bisect_boundary<F>(mut inside: f64, mut outside: f64, tol: f64, mut pred: F) -> (f64, usize)
where
    F: FnMut(f64) -> bool,
{
    let mut evals = 0;
    while (outside - inside).abs() > tol && evals < 200 {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        evals += 1;
        if pred(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    (inside, evals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_smooth_peak() {
        let (p, evals) = golden_max(0.0, 10.0, 1e-10, |x| -(x - 3.3).powi(2));
        assert!((p.x - 3.3).abs() < 1e-6);
        assert!(evals < 100);
    }

    #[test]
    fn golden_tolerates_infeasible_region() {
        // rising ramp that becomes infeasible past 7
        let (p, _) = golden_max(5.0, 9.0, 1e-10, |x| if x <= 7.0 { x } else { f64::NEG_INFINITY });
        assert!((p.x - 7.0).abs() < 1e-8);
    }

    #[test]
    fn bisection_locates_boundary() {
        let (x, _) = bisect_boundary(1.0, 5.0, 1e-12, |x| x * x <= 2.0);
        assert!((x - 2f64.sqrt()).abs() < 1e-11);
        assert!(x * x <= 2.0);
        let (y, _) = bisect_boundary(5.0, 1.0, 1e-12, |x| x >= 3.0);
        assert!((y - 3.0).abs() < 1e-11 && y >= 3.0);
    }
}
