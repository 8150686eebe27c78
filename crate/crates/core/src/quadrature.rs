//! Gauss–Legendre quadrature: fixed rules, composite panels, adaptive bisection
//! and tensor products over boxes.

use std::sync::OnceLock;

/// Nodes and weights of an n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the rule by Newton iteration on P_n from Chebyshev initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule order must be positive");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d.is_finite() { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integral of `f` over [a, b].
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(mid + half * x);
        }
        s * half
    }

    /// Composite rule with `panels` equal sub-intervals.
    pub fn composite<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| {
                let lo = a + k as f64 * h;
                self.integrate(&mut f, lo, lo + h)
            })
            .sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared 15-point rule used by the adaptive integrator.
pub fn gl15() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(15))
}

/// Shared 24-point rule used by tensor products.
pub fn gl24() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(24))
}

/// Outcome of a numerical integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Estimated absolute error.
    pub error: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Tolerances for [`adaptive`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_depth: u32,
    /// Upper bound on integrand evaluations; exceeding it marks the result unconverged.
    pub max_evals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-13,
            rel: 1e-11,
            max_depth: 40,
            max_evals: 400_000,
        }
    }
}

/// Globally adaptive bisection with the 15-point rule; the error estimate on a
/// piece is the difference between the whole-piece and two-half evaluations.
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> QuadResult {
    if a == b {
        return QuadResult { value: 0.0, error: 0.0, converged: true, evaluations: 0 };
    }
    let rule = gl15();
    let evals = std::cell::Cell::new(0usize);
    let eval = |lo: f64, hi: f64, f: &mut F| {
        evals.set(evals.get() + rule.order());
        rule.integrate(|x| f(x), lo, hi)
    };
    struct Piece {
        lo: f64,
        hi: f64,
        whole: f64,
        depth: u32,
    }
    let width = b - a;
    let first = eval(a, b, &mut f);
    let mut stack = vec![Piece { lo: a, hi: b, whole: first, depth: 0 }];
    let mut total = 0.0;
    let mut err = 0.0;
    let mut converged = true;
    // Local tolerance scales with the piece width; the relative part uses a
    // running magnitude estimate seeded by the first pass.
    let mut scale = first.abs();
    while let Some(pc) = stack.pop() {
        let mid = 0.5 * (pc.lo + pc.hi);
        let left = eval(pc.lo, mid, &mut f);
        let right = eval(mid, pc.hi, &mut f);
        let refined = left + right;
        let local_err = (refined - pc.whole).abs();
        scale = scale.max(refined.abs());
        let frac = (pc.hi - pc.lo) / width;
        let local_tol = (tol.abs.max(tol.rel * scale)) * frac.abs();
        if local_err <= local_tol || !refined.is_finite() {
            total += refined;
            err += local_err;
            if !refined.is_finite() {
                converged = false;
            }
        } else if pc.depth >= tol.max_depth || evals.get() >= tol.max_evals {
            total += refined;
            err += local_err;
            converged = false;
        } else {
            stack.push(Piece { lo: mid, hi: pc.hi, whole: right, depth: pc.depth + 1 });
            stack.push(Piece { lo: pc.lo, hi: mid, whole: left, depth: pc.depth + 1 });
        }
    }
    QuadResult { value: total, error: err, converged, evaluations: evals.get() }
}

/// Tensor-product Gauss–Legendre over a box with `panels` panels per axis.
pub fn tensor<F: FnMut(&[f64]) -> f64>(mut f: F, bounds: &[(f64, f64)], rule: &GaussLegendre, panels: usize) -> f64 {
    let dim = bounds.len();
    if dim == 0 {
        return f(&[]);
    }
    let q = rule.order() * panels;
    // Precompute per-axis abscissae and weights.
    let axes: Vec<Vec<(f64, f64)>> = bounds
        .iter()
        .map(|&(a, b)| {
            let h = (b - a) / panels as f64;
            let mut pts = Vec::with_capacity(q);
            for k in 0..panels {
                let lo = a + k as f64 * h;
                for (x, w) in rule.nodes().iter().zip(rule.weights()) {
                    pts.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
                }
            }
            pts
        })
        .collect();
    let mut idx = vec![0usize; dim];
    let mut z = vec![0.0; dim];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for k in 0..dim {
            let (x, wk) = axes[k][idx[k]];
            z[k] = x;
            w *= wk;
        }
        total += w * f(&z);
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < q {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == dim {
                return total;
            }
        }
    }
}

/// Tensor rule with a doubling check: compares `panels` against `2 * panels`.
pub fn tensor_checked<F: FnMut(&[f64]) -> f64>(mut f: F, bounds: &[(f64, f64)], panels: usize, tol: f64) -> QuadResult {
    let rule = gl24();
    let coarse = tensor(&mut f, bounds, rule, panels);
    let fine = tensor(&mut f, bounds, rule, 2 * panels);
    let error = (fine - coarse).abs();
    let pts = (rule.order() * panels) as f64;
    QuadResult {
        value: fine,
        error,
        converged: error <= tol.max(1e-12 * fine.abs()),
        evaluations: (pts.powi(bounds.len() as i32) * (1.0 + 2f64.powi(bounds.len() as i32))) as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_two_and_nodes_sorted() {
        for n in [1, 2, 5, 15, 24, 64] {
            let r = GaussLegendre::new(n);
            let s: f64 = r.weights().iter().sum();
            assert_relative_eq!(s, 2.0, max_relative = 1e-14);
            assert!(r.nodes().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let r = GaussLegendre::new(5);
        // ∫_0^2 x^9 dx = 2^10/10
        assert_relative_eq!(r.integrate(|x| x.powi(9), 0.0, 2.0), 102.4, max_relative = 1e-13);
    }

    #[test]
    fn three_point_rule_matches_closed_form() {
        let r = GaussLegendre::new(3);
        assert_relative_eq!(r.nodes()[2], (0.6f64).sqrt(), max_relative = 1e-15);
        assert_relative_eq!(r.weights()[1], 8.0 / 9.0, max_relative = 1e-15);
    }

    #[test]
    fn adaptive_gaussian_integral() {
        let res = adaptive(|x| (-0.5 * x * x).exp(), -10.0, 10.0, Tolerance::default());
        assert!(res.converged);
        assert_relative_eq!(res.value, (2.0 * std::f64::consts::PI).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        // ∫_0^1 1/(1e-4 + x^2) dx = atan(100)/1e-2
        let res = adaptive(|x| 1.0 / (1e-4 + x * x), 0.0, 1.0, Tolerance::default());
        assert!(res.converged);
        assert_relative_eq!(res.value, 100.0 * 100f64.atan(), max_relative = 1e-10);
    }

    #[test]
    fn tensor_bivariate_gaussian_mass() {
        let det: f64 = 0.035 * 0.0225 - 0.015 * 0.015;
        let f = |z: &[f64]| {
            let q = (0.0225 * z[0] * z[0] - 0.03 * z[0] * z[1] + 0.035 * z[1] * z[1]) / det;
            (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
        };
        let r = tensor_checked(f, &[(-1.5, 1.5), (-1.2, 1.2)], 2, 1e-10);
        assert!(r.converged);
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-10);
    }
}
