//! Closed-form robust solution for constant c and centered Gaussian p
//! (multivariate OU environment) in arbitrary dimensions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inputs::{DomainBox, ModelInputs, UField};
use crate::linalg::{self, Blocks};
use crate::strategy::StrategyField;

/// Tolerance on eigenvalue real parts for drift stability.
pub const STABILITY_TOL: f64 = 1e-12;
/// Gaussian quadrature truncation in standard deviations.
pub const GAUSSIAN_TRUNCATION_SD: f64 = 8.0;

/// Constant-c, Gaussian-p model with all derived blocks.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    pub d: usize,
    pub m: usize,
    pub c: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub beta_x: DMatrix<f64>,
    pub sigma_inv: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_blk: DMatrix<f64>,
    pub d_blk: DMatrix<f64>,
    pub beta_y: DMatrix<f64>,
    pub m_x: DMatrix<f64>,
    pub m_y: DMatrix<f64>,
    /// (Σ⁻¹_X)⁻¹ Cᵀ c_Y.
    pub p_mat: DMatrix<f64>,
    /// Inverse of the marginal block Σ_X.
    pub sigma_x_inv: DMatrix<f64>,
    /// Condition numbers of c and Σ.
    pub condition_c: f64,
    pub condition_sigma: f64,
}

/// θ(x, y) = G_X x + G_Y y.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStrategy {
    pub g_x: DMatrix<f64>,
    pub g_y: DMatrix<f64>,
}

impl LinearStrategy {
    /// [G_X, G_Y] as a d×(d+m) matrix.
    pub fn joined(&self) -> DMatrix<f64> {
        let d = self.g_x.nrows();
        let m = self.g_y.ncols();
        let mut g = DMatrix::zeros(d, d + m);
        g.view_mut((0, 0), (d, d)).copy_from(&self.g_x);
        g.view_mut((0, d), (d, m)).copy_from(&self.g_y);
        g
    }

    pub fn to_field(&self, name: &str) -> StrategyField {
        StrategyField::linear(name, self.g_x.clone(), self.g_y.clone())
    }
}

/// dZ = K Z dt + c^{1/2} dW.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDynamics {
    pub k: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl LinearDynamics {
    /// ‖KΣ + ΣKᵀ + c‖_F.
    pub fn lyapunov_residual(&self, sigma: &DMatrix<f64>) -> f64 {
        linalg::lyapunov_residual(&self.k, sigma, &self.c)
    }

    pub fn max_real_eigenvalue(&self) -> f64 {
        linalg::max_real_eigenvalue(&self.k)
    }

    pub fn check_stable(&self) -> Result<()> {
        let r = self.max_real_eigenvalue();
        if r >= -STABILITY_TOL {
            return Err(Error::UnstableDynamics { max_real_part: r });
        }
        Ok(())
    }

    /// Long-run growth E[θᵀK_X Z] − ½E[θᵀc_Xθ] of a linear strategy when Z ~ N(0, Σ).
    pub fn stationary_growth(&self, theta: &LinearStrategy, sigma: &DMatrix<f64>) -> f64 {
        let g = theta.joined();
        let d = g.nrows();
        let kx = self.k.rows(0, d);
        let cx = self.c.view((0, 0), (d, d));
        (g.transpose() * kx * sigma).trace() - 0.5 * (g.transpose() * cx * &g * sigma).trace()
    }
}

/// Serialized model: inputs plus derived blocks for inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianModelFile {
    pub d: usize,
    pub m: usize,
    pub c: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub beta_x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<DerivedBlocks>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivedBlocks {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub beta_y: Vec<Vec<f64>>,
    pub m_x: Vec<Vec<f64>>,
    pub m_y: Vec<Vec<f64>>,
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::DimensionMismatch(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn chol_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().cholesky().expect("SPD block").solve(b)
}

impl GaussianModel {
    /// Validates (c, Σ) and derives A, B, C, D, β_Y, M_X, M_Y.
    pub fn build(c: DMatrix<f64>, sigma: DMatrix<f64>, beta_x: DMatrix<f64>, d: usize) -> Result<Self> {
        let n = c.nrows();
        if sigma.shape() != (n, n) || c.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "c is {:?} and Sigma is {:?}",
                c.shape(),
                sigma.shape()
            )));
        }
        if d == 0 || d >= n {
            return Err(Error::DimensionMismatch(format!("d = {d} for n = {n}")));
        }
        let m = n - d;
        if beta_x.shape() != (m, d) {
            return Err(Error::DimensionMismatch(format!("beta_X is {:?}, expected ({m}, {d})", beta_x.shape())));
        }
        let ci = linalg::spd_inverse(&c, "c")?;
        let si = linalg::spd_inverse(&sigma, "Sigma")?;
        let c = linalg::symmetrize(&c);
        let sigma = linalg::symmetrize(&sigma);
        let sigma_inv = linalg::symmetrize(&si.inverse);
        let cb = linalg::split(&c, d);
        let sb = linalg::split(&sigma, d);
        let ib = linalg::split(&sigma_inv, d);

        let cx_cxy = chol_solve(&cb.xx, &cb.xy);
        let cy_cyx = chol_solve(&cb.yy, &cb.yx);
        let a = &ib.xx + &cx_cxy * &ib.yx;
        let b = &ib.xy + &cx_cxy * &ib.yy;
        let c0 = &ib.yx + &cy_cyx * &ib.xx;
        let c_blk = &c0 + &beta_x;
        let d0 = &ib.yy + &cy_cyx * &ib.xy;
        let sy_inv = linalg::spd_inverse(&sb.yy, "Sigma_Y")?.inverse;
        let beta_y = -(&d0 + &c_blk * &sb.xy * &sy_inv);
        let d_blk = &d0 + &beta_y;
        let p_mat = chol_solve(&ib.xx, &(c_blk.transpose() * &cb.yy));
        let m_x = &a + chol_solve(&cb.xx, &(&p_mat * &ib.yx));
        let m_y = &b + chol_solve(&cb.xx, &(&p_mat * &ib.yy));
        let sigma_x_inv = linalg::spd_inverse(&sb.xx, "Sigma_X")?.inverse;
        Ok(Self {
            d,
            m,
            c,
            sigma,
            beta_x,
            sigma_inv,
            a,
            b,
            c_blk,
            d_blk,
            beta_y,
            m_x,
            m_y,
            p_mat,
            sigma_x_inv,
            condition_c: ci.condition,
            condition_sigma: si.condition,
        })
    }

    /// Random well-conditioned model: c, Σ = AAᵀ/n + ½I, β_X standard normal.
    pub fn random<R: Rng + ?Sized>(d: usize, m: usize, rng: &mut R) -> Result<Self> {
        let n = d + m;
        let spd = |rng: &mut R| {
            let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5
        };
        let c = spd(rng);
        let sigma = spd(rng);
        let beta_x = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::build(c, sigma, beta_x, d)
    }

    pub fn rebuild_with_beta_x(&self, beta_x: DMatrix<f64>) -> Result<Self> {
        Self::build(self.c.clone(), self.sigma.clone(), beta_x, self.d)
    }

    pub fn n(&self) -> usize {
        self.d + self.m
    }

    pub fn c_blocks(&self) -> Blocks {
        linalg::split(&self.c, self.d)
    }

    pub fn sigma_blocks(&self) -> Blocks {
        linalg::split(&self.sigma, self.d)
    }

    pub fn sigma_inv_blocks(&self) -> Blocks {
        linalg::split(&self.sigma_inv, self.d)
    }

    /// θ* = −½(M_X x + M_Y y).
    pub fn theta_star(&self) -> LinearStrategy {
        LinearStrategy { g_x: &self.m_x * -0.5, g_y: &self.m_y * -0.5 }
    }

    /// ‖M_X − M_Xᵀ‖_F; nonzero means ξ is not an x-gradient.
    pub fn theta_star_asymmetry(&self) -> f64 {
        (&self.m_x - self.m_x.transpose()).norm()
    }

    /// ⅛Tr(M_XᵀcM_XΣ_X) + ¼Tr(M_XᵀcM_YΣ_YX) + ⅛Tr(M_YᵀcM_YΣ_Y).
    pub fn lambda_p(&self) -> f64 {
        let cx = self.c_blocks().xx;
        let s = self.sigma_blocks();
        let (mx, my) = (&self.m_x, &self.m_y);
        (mx.transpose() * &cx * mx * &s.xx).trace() / 8.0
            + (mx.transpose() * &cx * my * &s.yx).trace() / 4.0
            + (my.transpose() * &cx * my * &s.yy).trace() / 8.0
    }

    /// θ̂ = −½Σ_X⁻¹x.
    pub fn theta_hat(&self) -> LinearStrategy {
        LinearStrategy { g_x: &self.sigma_x_inv * -0.5, g_y: DMatrix::zeros(self.d, self.m) }
    }

    /// ⅛Tr(Σ_X⁻¹c_X).
    pub fn lambda_pi(&self) -> f64 {
        (&self.sigma_x_inv * self.c_blocks().xx).trace() / 8.0
    }

    /// Drift of P*: X-rows [−½c_XM_X, −½c_XM_Y], Y-rows [½c_Yβ_X, ½c_Yβ_Y].
    pub fn worst_case_star(&self) -> LinearDynamics {
        let cb = self.c_blocks();
        let xx = &cb.xx * &self.m_x * -0.5;
        let xy = &cb.xx * &self.m_y * -0.5;
        let yx = &cb.yy * &self.beta_x * 0.5;
        let yy = &cb.yy * &self.beta_y * 0.5;
        LinearDynamics { k: linalg::join(&xx, &xy, &yx, &yy), c: self.c.clone() }
    }

    /// Drift of P̂: X autonomous with −½c_XΣ_X⁻¹, Y-rows −½c_Y(C⁰, D⁰) − ½Q(Σ⁻¹_X, Σ⁻¹_XY)
    /// with Q = (Σ⁻¹_Y)⁻¹Bᵀc_X.
    pub fn worst_case_hat(&self) -> LinearDynamics {
        let cb = self.c_blocks();
        let ib = self.sigma_inv_blocks();
        let c0 = &self.c_blk - &self.beta_x;
        let d0 = &self.d_blk - &self.beta_y;
        let q = chol_solve(&ib.yy, &(self.b.transpose() * &cb.xx));
        let xx = &cb.xx * &self.sigma_x_inv * -0.5;
        let xy = DMatrix::zeros(self.d, self.m);
        let yx = (&cb.yy * c0 + &q * &ib.xx) * -0.5;
        let yy = (&cb.yy * d0 + &q * &ib.xy) * -0.5;
        LinearDynamics { k: linalg::join(&xx, &xy, &yx, &yy), c: self.c.clone() }
    }

    /// g(θ*; P̂) = ¼Tr(M_Xᵀc_X) + ¼Tr(M_Yᵀc_XΣ_X⁻¹Σ_XY) − λ_P.
    pub fn growth_theta_star_under_hat(&self) -> f64 {
        let cx = self.c_blocks().xx;
        let sxy = self.sigma_blocks().xy;
        (self.m_x.transpose() * &cx).trace() / 4.0
            + (self.m_y.transpose() * &cx * &self.sigma_x_inv * sxy).trace() / 4.0
            - self.lambda_p()
    }

    /// λ_P − λ_Π.
    pub fn growth_gap(&self) -> f64 {
        self.lambda_p() - self.lambda_pi()
    }

    /// The β_X for which M_Y = 0 (so θ* = θ̂ and P* = P̂).
    pub fn degenerate_beta_x(&self) -> DMatrix<f64> {
        let cb = self.c_blocks();
        let ib = self.sigma_inv_blocks();
        let t1 = chol_solve(&cb.yy, &(&cb.yx * &ib.xx));
        let inner = chol_solve(&ib.yy, &(self.b.transpose() * &cb.xx * &ib.xx));
        let t2 = chol_solve(&cb.yy, &inner);
        -(&ib.yx) - t1 - t2
    }

    /// Gaussian density N(0, Σ) at z.
    pub fn density(&self, z: &[f64]) -> f64 {
        gaussian_density(&self.sigma_inv, self.sigma.determinant(), z)
    }

    /// 𝐮 = −½P(Σ⁻¹_YX x + Σ⁻¹_Y y) p.
    pub fn gaussian_u(&self, z: &[f64]) -> DVector<f64> {
        let ib = self.sigma_inv_blocks();
        let x = DVector::from_column_slice(&z[..self.d]);
        let y = DVector::from_column_slice(&z[self.d..]);
        &self.p_mat * (&ib.yx * x + &ib.yy * y) * (-0.5 * self.density(z))
    }

    pub fn u_field(&self) -> UField {
        let model = self.clone();
        UField::closed_form(move |z, out| out.copy_from_slice(model.gaussian_u(z).as_slice()))
    }

    /// ½E[θᵀc_Xθ] under N(0, Σ) for a linear strategy.
    pub fn quadratic_moment(&self, theta: &LinearStrategy) -> f64 {
        let g = theta.joined();
        let cx = self.c_blocks().xx;
        0.5 * (g.transpose() * cx * &g * &self.sigma).trace()
    }

    /// λ_P as ½E[θ*ᵀc_Xθ*].
    pub fn lambda_p_moments(&self) -> f64 {
        self.quadratic_moment(&self.theta_star())
    }

    /// λ_Π as ½E[θ̂ᵀc_Xθ̂].
    pub fn lambda_pi_moments(&self) -> f64 {
        self.quadratic_moment(&self.theta_hat())
    }

    /// Growth gap as ½E[(θ*−θ̂)ᵀc_X(θ*−θ̂)].
    pub fn growth_gap_moments(&self) -> f64 {
        let s = self.theta_star();
        let h = self.theta_hat();
        self.quadratic_moment(&LinearStrategy { g_x: s.g_x - h.g_x, g_y: s.g_y - h.g_y })
    }

    /// The (c, p, b_Y) triple with b_Y = ½(β_X x + β_Y y) and exact derivative providers.
    pub fn inputs(&self) -> Result<ModelInputs> {
        let n = self.n();
        let d = self.d;
        let m = self.m;
        let sd: Vec<f64> = (0..n).map(|k| self.sigma[(k, k)].sqrt()).collect();
        let radii: Vec<f64> = sd.iter().map(|s| GAUSSIAN_TRUNCATION_SD * s).collect();
        let domain = DomainBox::whole_space(d, m, &radii)?;
        let sigma_inv = self.sigma_inv.clone();
        let det = self.sigma.determinant();
        let c = self.c.clone();
        let cb = self.c_blocks();

        // b_Y = ½[β_X, β_Y] z; ℓ_Y = L z with L = −½[C, D].
        let bmat = linalg::join(
            &DMatrix::zeros(d, d),
            &DMatrix::zeros(d, m),
            &(&self.beta_x * 0.5),
            &(&self.beta_y * 0.5),
        )
        .rows(d, m)
        .into_owned();
        let mut l = DMatrix::zeros(m, n);
        l.view_mut((0, 0), (m, d)).copy_from(&(&self.c_blk * -0.5));
        l.view_mut((0, d), (m, m)).copy_from(&(&self.d_blk * -0.5));
        let cy_l = &cb.yy * &l;
        let tr = (&cb.yy * l.view((0, d), (m, m))).trace();

        // Conditional law of x given y for the quadrature window.
        let sb = self.sigma_blocks();
        let sy_inv = linalg::spd_inverse(&sb.yy, "Sigma_Y")?.inverse;
        let reg = &sb.xy * &sy_inv;
        let cond = &sb.xx - &reg * &sb.yx;
        let cond_sd: Vec<f64> = (0..d).map(|i| cond[(i, i)].max(0.0).sqrt()).collect();

        let si = sigma_inv.clone();
        let p = Arc::new(move |z: &[f64]| gaussian_density(&si, det, z));
        let si = sigma_inv.clone();
        let grad = Arc::new(move |z: &[f64], out: &mut [f64]| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = -(0..z.len()).map(|j| si[(i, j)] * z[j]).sum::<f64>();
            }
        });
        let si = sigma_inv.clone();
        let flux = Arc::new(move |z: &[f64]| {
            let p = gaussian_density(&si, det, z);
            let mut s = tr;
            for j in 0..m {
                let gy: f64 = -(0..n).map(|k| si[(d + j, k)] * z[k]).sum::<f64>();
                let v: f64 = (0..n).map(|k| cy_l[(j, k)] * z[k]).sum();
                s += v * gy;
            }
            s * p
        });
        let window = Arc::new(move |y: &[f64], scale: f64| {
            (0..d)
                .map(|i| {
                    let mu: f64 = (0..m).map(|j| reg[(i, j)] * y[j]).sum();
                    let h = scale * GAUSSIAN_TRUNCATION_SD * cond_sd[i];
                    (mu - h, mu + h)
                })
                .collect()
        });
        Ok(ModelInputs::new(
            format!("gaussian(d={d}, m={m})"),
            domain,
            Arc::new(move |_| c.clone()),
            p,
            Arc::new(move |z: &[f64], out: &mut [f64]| {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = (0..z.len()).map(|k| bmat[(j, k)] * z[k]).sum();
                }
            }),
        )
        .with_div_c(Arc::new(|_, out: &mut [f64]| out.fill(0.0)))
        .with_grad_log_p(grad)
        .with_flux(flux)
        .with_x_window(window))
    }

    pub fn to_file(&self) -> GaussianModelFile {
        GaussianModelFile {
            d: self.d,
            m: self.m,
            c: to_rows(&self.c),
            sigma: to_rows(&self.sigma),
            beta_x: to_rows(&self.beta_x),
            derived: Some(DerivedBlocks {
                a: to_rows(&self.a),
                b: to_rows(&self.b),
                c: to_rows(&self.c_blk),
                d: to_rows(&self.d_blk),
                beta_y: to_rows(&self.beta_y),
                m_x: to_rows(&self.m_x),
                m_y: to_rows(&self.m_y),
            }),
        }
    }

    /// Structured-text export; matrices are row-major arrays of rows.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("model serializes")
    }

    /// Import; derived blocks in the text are ignored and recomputed.
    pub fn from_toml(text: &str) -> Result<Self> {
        let f: GaussianModelFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_file(&f)
    }

    pub fn from_file(f: &GaussianModelFile) -> Result<Self> {
        let beta = if f.beta_x.is_empty() {
            DMatrix::zeros(f.m, f.d)
        } else {
            from_rows(&f.beta_x, "beta_x")?
        };
        let model = Self::build(from_rows(&f.c, "c")?, from_rows(&f.sigma, "sigma")?, beta, f.d)?;
        if model.m != f.m {
            return Err(Error::DimensionMismatch(format!("m = {} but matrices give {}", f.m, model.m)));
        }
        Ok(model)
    }
}

/// N(0, Σ) density from Σ⁻¹ and det Σ.
pub fn gaussian_density(sigma_inv: &DMatrix<f64>, det: f64, z: &[f64]) -> f64 {
    let n = z.len();
    let mut q = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += sigma_inv[(i, j)] * z[j];
        }
        q += z[i] * s;
    }
    (-0.5 * q).exp() / ((2.0 * std::f64::consts::PI).powi(n as i32) * det).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctou() -> GaussianModel {
        GaussianModel::build(
            DMatrix::from_row_slice(2, 2, &[0.04, 0.0, 0.0, 0.0225]),
            DMatrix::from_row_slice(2, 2, &[0.035, 0.015, 0.015, 0.0225]),
            DMatrix::zeros(1, 1),
            1,
        )
        .unwrap()
    }

    fn identity() -> GaussianModel {
        GaussianModel::build(DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::zeros(1, 1), 1).unwrap()
    }

    #[test]
    fn ctou_blocks() {
        let g = ctou();
        assert_relative_eq!(g.a[(0, 0)], 40.0, max_relative = 1e-12);
        assert_relative_eq!(g.b[(0, 0)], -80.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(g.c_blk[(0, 0)], -80.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(g.beta_y[(0, 0)], -400.0 / 9.0, max_relative = 1e-12);
        assert_relative_eq!(0.5 * 0.0225 * g.beta_y[(0, 0)], -0.5, max_relative = 1e-12);
    }

    #[test]
    fn ctou_strategy_and_rates() {
        let g = ctou();
        assert_relative_eq!(g.m_x[(0, 0)], 50.0, max_relative = 1e-12);
        assert_relative_eq!(g.m_y[(0, 0)], -50.0, max_relative = 1e-12);
        assert_relative_eq!(g.lambda_p(), 0.34375, max_relative = 1e-12);
        assert_relative_eq!(g.lambda_pi(), 1.0 / 7.0, max_relative = 1e-12);
        assert_relative_eq!(g.growth_gap(), 0.34375 - 1.0 / 7.0, max_relative = 1e-12);
        assert_relative_eq!(g.growth_theta_star_under_hat(), 0.5 - 0.5 * 0.015 / 0.035 - 0.34375, max_relative = 1e-12);
        assert_relative_eq!(g.theta_hat().g_x[(0, 0)], -0.5 / 0.035, max_relative = 1e-12);
    }

    #[test]
    fn ctou_worst_case_star_is_ctou_generator() {
        let k = ctou().worst_case_star().k;
        let expected = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -0.5]);
        assert!((k - expected).amax() < 1e-12);
    }

    #[test]
    fn identity_model_trivia() {
        let g = identity();
        assert_eq!(g.b[(0, 0)], 0.0);
        assert_eq!(g.c_blk[(0, 0)], 0.0);
        assert_relative_eq!(g.beta_y[(0, 0)], -1.0);
        assert_relative_eq!(g.m_x[(0, 0)], 1.0);
        assert_eq!(g.m_y[(0, 0)], 0.0);
        assert_relative_eq!(g.lambda_pi(), 0.125);
        let k = g.worst_case_star().k;
        assert!((k - DMatrix::from_diagonal_element(2, 2, -0.5)).amax() < 1e-15);
        assert_eq!(g.degenerate_beta_x()[(0, 0)], 0.0);
    }

    #[test]
    fn singular_c_rejected() {
        let r = GaussianModel::build(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(1, 1),
            1,
        );
        assert!(matches!(r, Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn degenerate_beta_collapses_both_measures() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = GaussianModel::random(2, 2, &mut rng).unwrap();
        let deg = g.rebuild_with_beta_x(g.degenerate_beta_x()).unwrap();
        assert!(deg.m_y.norm() < 1e-10);
        assert!(deg.growth_gap().abs() < 1e-10);
        assert!((deg.worst_case_star().k - deg.worst_case_hat().k).norm() < 1e-9);
        assert_relative_eq!(deg.growth_theta_star_under_hat(), deg.lambda_pi(), max_relative = 1e-9);
        assert!(ctou().degenerate_beta_x()[(0, 0)].abs() > 1.0);
    }

    #[test]
    fn both_worst_case_drifts_solve_lyapunov() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (d, m) in [(1, 1), (2, 1), (1, 3), (3, 2)] {
            let g = GaussianModel::random(d, m, &mut rng).unwrap();
            for dyns in [g.worst_case_star(), g.worst_case_hat()] {
                assert!(dyns.lyapunov_residual(&g.sigma) < 1e-10);
                dyns.check_stable().unwrap();
            }
        }
    }

    #[test]
    fn toml_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GaussianModel::random(2, 1, &mut rng).unwrap();
        let back = GaussianModel::from_toml(&g.to_toml()).unwrap();
        assert_eq!(back.c, g.c);
        assert_eq!(back.beta_x, g.beta_x);
        assert_eq!(back.m_x, g.m_x);
    }

    #[test]
    fn u_vanishes_at_origin() {
        assert_eq!(ctou().gaussian_u(&[0.0, 0.0])[0], 0.0);
    }
}
