//! Quadrature helpers: Gauss–Legendre rules and an adaptive composite rule.

use std::cell::Cell;

use gauss_quad::legendre::GaussLegendre;

const ROUNDOFF: f64 = 1e3 * f64::EPSILON;

/// Nodes and weights of the `order`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> Vec<(f64, f64)> {
    // gauss-quad refuses order 1; the 1-point rule is the midpoint rule.
    if order < 2 {
        return vec![(0.0, 2.0)];
    }
    GaussLegendre::new(order)
        .expect("order >= 2")
        .as_node_weight_pairs()
        .to_vec()
}

/// Gauss–Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(order: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    gauss_legendre(order)
        .into_iter()
        .map(|(x, w)| (mid + half * x, half * w))
        .collect()
}

/// Adaptive bisection with a pair of Gauss–Legendre rules per panel.
///
/// A panel is accepted when the 10- and 20-point estimates agree to
/// `max(abs_tol_per_panel, rel_tol * |estimate|)`.
pub struct AdaptiveGauss {
    low: Vec<(f64, f64)>,
    high: Vec<(f64, f64)>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_depth: u32,
    /// Equal panels an interval is split into before adapting, so that
    /// features narrower than the whole interval are not missed.
    pub min_panels: usize,
    /// Upper bound on panels examined per call; once spent, panels are
    /// accepted as they are.
    pub max_panels: usize,
}

impl AdaptiveGauss {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            low: gauss_legendre(10),
            high: gauss_legendre(20),
            rel_tol,
            abs_tol,
            max_depth: 30,
            min_panels: 16,
            max_panels: 200_000,
        }
    }

    /// Panel estimate and the matching integral of `|f|`.
    fn panel<F: Fn(f64) -> f64>(rule: &[(f64, f64)], f: &F, a: f64, b: f64) -> (f64, f64) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let (s, l1) = rule.iter().fold((0.0, 0.0), |(s, l1), &(x, w)| {
            let v = f(mid + half * x);
            (s + w * v, l1 + w * v.abs())
        });
        (half * s, half.abs() * l1)
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> f64 {
        let budget = Cell::new(self.max_panels);
        self.split(&f, a, b, self.abs_tol, &budget)
    }

    fn split<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64, abs_tol: f64, budget: &Cell<usize>) -> f64 {
        let p = self.min_panels.max(1);
        let h = (b - a) / p as f64;
        (0..p)
            .map(|i| {
                let lo = a + i as f64 * h;
                let hi = if i + 1 == p { b } else { lo + h };
                self.recurse(f, lo, hi, abs_tol / p as f64, 0, budget)
            })
            .sum()
    }

    /// Integrates over consecutive sub-intervals split at `breaks`
    /// (useful when the integrand is sharply peaked at known points).
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64, breaks: &[f64]) -> f64 {
        let mut points = vec![a];
        points.extend(breaks.iter().copied().filter(|&p| p > a && p < b));
        points.push(b);
        points.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let n = (points.len() - 1) as f64;
        let budget = Cell::new(self.max_panels);
        points
            .windows(2)
            .map(|w| self.split(&f, w[0], w[1], self.abs_tol / n, &budget))
            .sum()
    }

    fn recurse<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64, abs_tol: f64, depth: u32, budget: &Cell<usize>) -> f64 {
        budget.set(budget.get().saturating_sub(1));
        let (coarse, _) = Self::panel(&self.low, f, a, b);
        let (fine, l1) = Self::panel(&self.high, f, a, b);
        // Differences below the rounding level of the integrand are noise.
        let tol = abs_tol.max(self.rel_tol * fine.abs()).max(ROUNDOFF * l1);
        if (fine - coarse).abs() <= tol || !fine.is_finite() || depth >= self.max_depth || budget.get() == 0 {
            return fine;
        }
        let mid = 0.5 * (a + b);
        self.recurse(f, a, mid, 0.5 * abs_tol, depth + 1, budget) + self.recurse(f, mid, b, 0.5 * abs_tol, depth + 1, budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_integrate_polynomials() {
        let r = gauss_legendre_on(8, 0.0, 2.0);
        let v: f64 = r.iter().map(|&(x, w)| w * x.powi(15)).sum();
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
        assert_eq!(gauss_legendre(1), vec![(0.0, 2.0)]);
    }

    #[test]
    fn adaptive_handles_a_narrow_peak() {
        let q = AdaptiveGauss::new(1e-12, 1e-15);
        let s = 1e-3;
        let v = q.integrate(|x| (-(x - 0.3) * (x - 0.3) / (2.0 * s * s)).exp(), 0.0, 1.0);
        let exact = s * (2.0 * std::f64::consts::PI).sqrt();
        assert!((v - exact).abs() < 1e-10 * exact);
    }
}
