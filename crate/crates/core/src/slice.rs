//! Per-slice verification of the optimality structure: Euler–Lagrange
//! residuals, the online d = 1 slice solve, and quadrature of growth rates.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inputs::{
    assemble_xi, eval_ell, integrate_state_space, partial, FdScheme, ModelInputs, Refinement, UField,
};
use crate::quadrature::QuadResult;
use crate::strategy::StrategyField;

/// Relative change under doubled truncation above which a quadrature is flagged.
pub const TRUNCATION_STABILITY_TOL: f64 = 1e-6;

/// ∇_xφ*(·, y) sampled on an x-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSolution {
    pub y: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub grad_phi_star: Vec<f64>,
    /// Max Euler–Lagrange defect on the grid.
    pub residual: f64,
}

impl SliceSolution {
    /// CSV in the slice-table layout: `x,grad_phi_star`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let ys: Vec<String> = self.y.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(s, "# y={} residual={:.16e}", ys.join(";"), self.residual);
        s.push_str("x,grad_phi_star\n");
        for (x, g) in self.x_grid.iter().zip(&self.grad_phi_star) {
            let _ = writeln!(s, "{x:.16e},{g:.16e}");
        }
        s
    }
}

/// Finite-difference step tied to the grid spacing, capped at `h_max`.
pub fn grid_step(x_grid: &[f64], h_max: f64) -> f64 {
    let spacing = x_grid.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if spacing.is_finite() {
        h_max.min(0.5 * spacing)
    } else {
        h_max
    }
}

/// Solves the slice problem at y for d = 1. The divergence-form first integral
/// c_X(∂_xφ − ξ)p = const has constant 0 by integrability, so ∇_xφ* = ξ(·, y).
pub fn solve_slice(inputs: &ModelInputs, u: &UField, y: &[f64], x_grid: &[f64]) -> Result<SliceSolution> {
    if inputs.d() != 1 {
        return Err(Error::UnsupportedDimension { d: inputs.d() });
    }
    let grad_phi_star = x_grid
        .iter()
        .map(|&x| {
            let mut z = vec![x];
            z.extend_from_slice(y);
            assemble_xi(inputs, u, &z).map(|v| v[0])
        })
        .collect::<Result<Vec<_>>>()?;
    let field = {
        let base = inputs.clone();
        let uf = u.clone();
        StrategyField::new(
            "xi",
            1,
            crate::strategy::StrategyKind::Numerical { description: format!("slice solve with {u:?}") },
            std::sync::Arc::new(move |z: &[f64], out: &mut [f64]| {
                out[0] = assemble_xi(&base, &uf, z).map(|v| v[0]).unwrap_or(f64::NAN)
            }),
        )
    };
    let grid: Vec<Vec<f64>> = x_grid
        .iter()
        .map(|&x| {
            let mut z = vec![x];
            z.extend_from_slice(y);
            z
        })
        .collect();
    let residual = euler_lagrange_residual(inputs, &field, &grid, grid_step(x_grid, 1e-3), FdScheme::Richardson)?;
    Ok(SliceSolution { y: y.to_vec(), x_grid: x_grid.to_vec(), grad_phi_star, residual })
}

/// Slice solves for several factor values, in parallel with fixed output order.
pub fn solve_slices(inputs: &ModelInputs, u: &UField, ys: &[Vec<f64>], x_grid: &[f64]) -> Result<Vec<SliceSolution>> {
    ys.par_iter().map(|y| solve_slice(inputs, u, y, x_grid)).collect()
}

/// max over the grid of |div_x(c_X(∇_xφ − ℓ_X)p) − div_y(c_Yℓ_Yp)|, the
/// x-divergence by finite differences and the right side from the inputs.
/// The strategy enters directly; no 𝐮 is required.
pub fn euler_lagrange_residual(
    inputs: &ModelInputs,
    grad_phi: &StrategyField,
    grid: &[Vec<f64>],
    h: f64,
    scheme: FdScheme,
) -> Result<f64> {
    let d = inputs.d();
    if grad_phi.d != d {
        return Err(Error::DimensionMismatch(format!("strategy of dimension {} for d = {d}", grad_phi.d)));
    }
    // i-th component of c_X(θ − ℓ_X)p.
    let flux_x = |z: &[f64], i: usize| -> Result<f64> {
        let p = inputs.p_at(z)?;
        let c = inputs.c_at(z)?;
        let ell = eval_ell(inputs, z)?;
        let mut th = vec![0.0; d];
        grad_phi.eval(z, &mut th);
        let mut s = 0.0;
        for j in 0..d {
            s += c[(i, j)] * (th[j] - ell.ell_x[j]);
        }
        Ok(s * p)
    };
    let mut worst: f64 = 0.0;
    for z in grid {
        let mut lhs = 0.0;
        for i in 0..d {
            let mut err = None;
            lhs += partial(
                |zz| match flux_x(zz, i) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                },
                z,
                i,
                h,
                scheme,
            );
            if let Some(e) = err {
                return Err(e);
            }
        }
        let defect = (lhs - inputs.flux_at(z)?).abs();
        if !defect.is_finite() {
            return Err(Error::Domain(format!("non-finite Euler-Lagrange defect at {z:?}")));
        }
        worst = worst.max(defect);
    }
    Ok(worst)
}

/// Euler–Lagrange residuals at h and h/2 with the observed order.
pub fn euler_lagrange_refinement(
    inputs: &ModelInputs,
    grad_phi: &StrategyField,
    grid: &[Vec<f64>],
    h: f64,
    scheme: FdScheme,
) -> Result<Refinement> {
    Ok(Refinement::new(
        h,
        euler_lagrange_residual(inputs, grad_phi, grid, h, scheme)?,
        euler_lagrange_residual(inputs, grad_phi, grid, 0.5 * h, scheme)?,
    ))
}

/// A state-space integral on the declared truncation and on the doubled one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureEstimate {
    pub value: f64,
    pub widened: f64,
    pub converged: bool,
    /// False when widening the truncation moved the value by more than
    /// TRUNCATION_STABILITY_TOL relative.
    pub stable: bool,
}

impl QuadratureEstimate {
    fn from_pair(a: QuadResult, b: QuadResult) -> Self {
        let scale = a.value.abs().max(b.value.abs()).max(1e-300);
        Self {
            value: a.value,
            widened: b.value,
            converged: a.converged && b.converged,
            stable: b.value.is_finite() && (a.value - b.value).abs() <= TRUNCATION_STABILITY_TOL * scale,
        }
    }

    pub fn reliable(&self) -> bool {
        self.converged && self.stable
    }
}

fn quadratic_form(inputs: &ModelInputs, z: &[f64], v: &[f64]) -> Result<f64> {
    let c = inputs.c_at(z)?;
    let d = v.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += v[i] * c[(i, j)] * v[j];
        }
    }
    Ok(s)
}

fn estimate<F>(inputs: &ModelInputs, f: F) -> Result<QuadratureEstimate>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    Ok(QuadratureEstimate::from_pair(integrate_state_space(inputs, 1.0, &f)?, integrate_state_space(inputs, 2.0, &f)?))
}

/// ½∫ θᵀc_Xθ p dz; equals λ_P at θ = θ*.
pub fn lambda_p_quadrature(inputs: &ModelInputs, strategy: &StrategyField) -> Result<QuadratureEstimate> {
    let d = inputs.d();
    estimate(inputs, |z| {
        let p = inputs.p_above_floor(z)?;
        let mut th = vec![0.0; d];
        strategy.eval(z, &mut th);
        Ok(0.5 * quadratic_form(inputs, z, &th)? * p)
    })
}

/// ½∫ (θ* − θ̂)ᵀc_X(θ* − θ̂) p dz.
pub fn growth_gap_quadrature(
    inputs: &ModelInputs,
    theta_star: &StrategyField,
    theta_hat: &StrategyField,
) -> Result<QuadratureEstimate> {
    let d = inputs.d();
    estimate(inputs, |z| {
        let p = inputs.p_above_floor(z)?;
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        theta_star.eval(z, &mut a);
        theta_hat.eval(z, &mut b);
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        Ok(0.5 * quadratic_form(inputs, z, &diff)? * p)
    })
}

/// Robust growth of a gradient strategy over the class with fixed b_Y:
/// ∫ (θᵀc_Xξ − ½θᵀc_Xθ) p dz. Concave in θ, maximized at θ = ξ with value λ_P.
pub fn growth_functional(inputs: &ModelInputs, u: &UField, strategy: &StrategyField) -> Result<QuadratureEstimate> {
    let d = inputs.d();
    estimate(inputs, |z| {
        let p = inputs.p_above_floor(z)?;
        let xi = assemble_xi(inputs, u, z)?;
        let mut th = vec![0.0; d];
        strategy.eval(z, &mut th);
        let c = inputs.c_at(z)?;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += th[i] * c[(i, j)] * (xi[j] - 0.5 * th[j]);
            }
        }
        Ok(s * p)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::{grid_2d, linspace, DomainBox};
    use crate::pairs::{Example, Family};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    #[test]
    fn ctou_slice_is_the_ctou_line() {
        let f = Family::default_for(Example::Ctou).unwrap();
        let inputs = f.inputs().unwrap();
        let xs = linspace(-1.0, 1.0, 41);
        let s = solve_slice(&inputs, &f.u_field(), &[0.05], &xs).unwrap();
        for (x, g) in xs.iter().zip(&s.grad_phi_star) {
            assert_relative_eq!(*g, -25.0 * (x - 0.05), epsilon = 1e-9);
        }
        assert!(s.residual < 1e-5, "residual {}", s.residual);
    }

    #[test]
    fn ctou_lambda_p_by_quadrature() {
        let f = Family::default_for(Example::Ctou).unwrap();
        let inputs = f.inputs().unwrap();
        let q = lambda_p_quadrature(&inputs, &f.theta_star_strategy()).unwrap();
        assert!(q.reliable(), "{q:?}");
        assert_relative_eq!(q.value, 0.34375, epsilon = 1e-6);
        let zero = lambda_p_quadrature(&inputs, &StrategyField::zero(1)).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn gap_vanishes_for_identical_strategies() {
        let f = Family::default_for(Example::Ctou).unwrap();
        let inputs = f.inputs().unwrap();
        let s = f.theta_star_strategy();
        assert_eq!(growth_gap_quadrature(&inputs, &s, &s).unwrap().value, 0.0);
    }

    #[test]
    fn uncoupled_inputs_slice_equals_ell_x() {
        // Independent normals with b_Y = ℓ_Y⁰ so ℓ_Y ≡ 0 and 𝐮 = 0.
        let domain = DomainBox::whole_space(1, 1, &[8.0, 8.0]).unwrap();
        let inputs = ModelInputs::new(
            "iid",
            domain,
            Arc::new(|_| DMatrix::identity(2, 2)),
            Arc::new(|z| (-0.5 * (z[0] * z[0] + z[1] * z[1])).exp() / (2.0 * std::f64::consts::PI)),
            Arc::new(|z, out| out[0] = -0.5 * z[1]),
        );
        let xs = linspace(-2.0, 2.0, 9);
        let s = solve_slice(&inputs, &UField::Zero, &[0.3], &xs).unwrap();
        for (x, g) in xs.iter().zip(&s.grad_phi_star) {
            assert_relative_eq!(*g, -0.5 * x, epsilon = 1e-8);
        }
        assert!(s.residual < 1e-6);
    }

    #[test]
    fn perturbed_strategy_has_visible_defect() {
        let f = Family::default_for(Example::Ctou).unwrap();
        let inputs = f.inputs().unwrap();
        let ts = f.theta_star_strategy();
        let shifted = StrategyField::new(
            "shifted",
            1,
            crate::strategy::StrategyKind::Numerical { description: "theta* + 0.1".into() },
            Arc::new(move |z: &[f64], out: &mut [f64]| {
                ts.eval(z, out);
                out[0] += 0.1;
            }),
        );
        let grid = grid_2d(&linspace(-0.5, 0.5, 11), &[0.0, 0.1]);
        let r = euler_lagrange_residual(&inputs, &shifted, &grid, 1e-3, FdScheme::Central).unwrap();
        assert!(r > 1e-2, "defect {r}");
    }

    #[test]
    fn step_follows_grid_spacing() {
        assert_eq!(grid_step(&[0.0, 1e-3, 2e-3], 1e-3), 5e-4);
        assert_eq!(grid_step(&[0.0, 1.0], 1e-3), 1e-3);
    }
}
