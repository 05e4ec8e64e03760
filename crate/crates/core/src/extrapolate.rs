//! Extrapolation of ladder sequences to a vanishing step.

/// Value at `x = 0` of the interpolating polynomial through `points`.
pub fn neville_at_zero(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    if n == 0 {
        return f64::NAN;
    }
    let mut p: Vec<f64> = points.iter().map(|q| q.1).collect();
    for m in 1..n {
        for i in 0..n - m {
            let (xi, xj) = (points[i].0, points[i + m].0);
            p[i] = (xj * p[i] - xi * p[i + 1]) / (xj - xi);
        }
    }
    p[0]
}

/// Two-point Richardson step assuming an error of order `h^order`.
pub fn richardson(h1: f64, y1: f64, h2: f64, y2: f64, order: f64) -> f64 {
    let (a, b) = (h1.powf(order), h2.powf(order));
    (y2 * a - y1 * b) / (a - b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderLimit {
    pub value: f64,
    /// Observed order from the last three points, if they are not already converged.
    pub order: Option<f64>,
    /// Successive differences below the noise floor.
    pub converged: bool,
    /// The observed order is far from 1, so the first-order claim is not made.
    pub downgraded: bool,
}

/// First-order Richardson over the two smallest steps of a ladder `(h, y)` sorted
/// by decreasing `h`; a third point estimates the actual order.
pub fn first_order_limit(ladder: &[(f64, f64)], floor: f64) -> LadderLimit {
    let n = ladder.len();
    match n {
        0 => LadderLimit { value: f64::NAN, order: None, converged: false, downgraded: true },
        1 => LadderLimit { value: ladder[0].1, order: None, converged: false, downgraded: true },
        _ => {
            let (h1, y1) = ladder[n - 2];
            let (h2, y2) = ladder[n - 1];
            let d2 = (y1 - y2).abs();
            if d2 <= floor {
                return LadderLimit { value: y2, order: None, converged: true, downgraded: false };
            }
            let value = richardson(h1, y1, h2, y2, 1.0);
            if n < 3 {
                return LadderLimit { value, order: None, converged: false, downgraded: false };
            }
            let (h0, y0) = ladder[n - 3];
            let d1 = (y0 - y1).abs();
            let order = (d1 / d2).ln() / (h0 / h1).ln();
            let downgraded = !(0.5..=1.5).contains(&order);
            LadderLimit { value, order: Some(order), converged: false, downgraded }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neville_recovers_polynomials() {
        let f = |x: f64| 2.0 - 3.0 * x + 0.5 * x * x;
        let pts: Vec<(f64, f64)> = [1e-2, 1e-3, 1e-4].iter().map(|&x| (x, f(x))).collect();
        assert!((neville_at_zero(&pts) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn richardson_first_order() {
        let f = |h: f64| 0.5 + 0.3 * h;
        assert!((richardson(0.1, f(0.1), 0.01, f(0.01), 1.0) - 0.5).abs() < 1e-14);
        let l = first_order_limit(&[(1e-2, f(1e-2)), (1e-3, f(1e-3)), (1e-4, f(1e-4))], 1e-15);
        assert!((l.value - 0.5).abs() < 1e-13);
        assert!((l.order.unwrap() - 1.0).abs() < 1e-6);
        assert!(!l.downgraded);
    }

    #[test]
    fn second_order_is_downgraded() {
        let f = |h: f64| 0.5 + h * h;
        let l = first_order_limit(&[(1e-1, f(1e-1)), (1e-2, f(1e-2)), (1e-3, f(1e-3))], 1e-15);
        assert!(l.downgraded);
    }
}
