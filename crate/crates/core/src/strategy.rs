//! Feedback strategies θ(x, y) ∈ ℝ^d.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

/// Evaluates θ at a state z = (x, y), writing d values.
pub type StrategyFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// How a strategy was obtained.
#[derive(Debug, Clone)]
pub enum StrategyKind {
    Zero,
    /// θ(x, y) = G_X x + G_Y y.
    Linear { g_x: DMatrix<f64>, g_y: DMatrix<f64> },
    /// A named closed-form family with its scalar coefficients.
    ClosedForm { family: String, coefficients: Vec<(String, f64)> },
    /// Assembled numerically (e.g. ξ from a quadrature 𝐮).
    Numerical { description: String },
}

/// A feedback map with metadata.
#[derive(Clone)]
pub struct StrategyField {
    pub name: String,
    pub d: usize,
    pub kind: StrategyKind,
    f: StrategyFn,
}

impl fmt::Debug for StrategyField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrategyField")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("kind", &self.kind)
            .finish()
    }
}

impl StrategyField {
    pub fn new(name: impl Into<String>, d: usize, kind: StrategyKind, f: StrategyFn) -> Self {
        Self { name: name.into(), d, kind, f }
    }

    pub fn zero(d: usize) -> Self {
        Self::new("zero", d, StrategyKind::Zero, Arc::new(|_, out: &mut [f64]| out.fill(0.0)))
    }

    /// θ = G_X x + G_Y y.
    pub fn linear(name: impl Into<String>, g_x: DMatrix<f64>, g_y: DMatrix<f64>) -> Self {
        let d = g_x.nrows();
        let m = g_y.ncols();
        let gx: Vec<f64> = g_x.transpose().iter().copied().collect();
        let gy: Vec<f64> = g_y.transpose().iter().copied().collect();
        let f: StrategyFn = Arc::new(move |z: &[f64], out: &mut [f64]| {
            let (x, y) = z.split_at(d);
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    s += gx[i * d + j] * x[j];
                }
                for j in 0..m {
                    s += gy[i * m + j] * y[j];
                }
                out[i] = s;
            }
        });
        Self::new(name, d, StrategyKind::Linear { g_x, g_y }, f)
    }

    /// Scalar closed-form strategy for d = 1.
    pub fn scalar<F>(name: impl Into<String>, family: impl Into<String>, coefficients: Vec<(String, f64)>, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            name,
            1,
            StrategyKind::ClosedForm { family: family.into(), coefficients },
            Arc::new(move |z: &[f64], out: &mut [f64]| out[0] = f(z)),
        )
    }

    pub fn eval(&self, z: &[f64], out: &mut [f64]) {
        (self.f)(z, out)
    }

    /// Convenience for d = 1.
    pub fn eval_scalar(&self, z: &[f64]) -> f64 {
        let mut out = [0.0];
        (self.f)(z, &mut out);
        out[0]
    }

    pub fn function(&self) -> StrategyFn {
        self.f.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_strategy_evaluates_blocks() {
        let s = StrategyField::linear(
            "ctou",
            DMatrix::from_element(1, 1, -25.0),
            DMatrix::from_element(1, 1, 25.0),
        );
        assert_eq!(s.eval_scalar(&[0.1, 0.05]), -1.25);
        let mut out = [7.0, 7.0];
        StrategyField::zero(2).eval(&[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }
}
