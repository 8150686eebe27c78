//! Bivariate Student-t invariant law for (X, Y) with constant diagonal c.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::inputs::{DomainBox, ModelInputs, UField};
use crate::special::{student_t_cdf, student_t_pdf};

/// Density level below which the t law is truncated for quadrature.
pub const T_DENSITY_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TDistParams {
    pub sigma_x: f64,
    pub sigma_xy: f64,
    pub sigma_y: f64,
    pub nu: f64,
    pub c_x: f64,
    pub c_y: f64,
}

impl Default for TDistParams {
    /// ν = 3 with the CTOU stationary covariance and volatilities.
    fn default() -> Self {
        Self { sigma_x: 0.035, sigma_xy: 0.015, sigma_y: 0.0225, nu: 3.0, c_x: 0.04, c_y: 0.0225 }
    }
}

/// Precomputed constants of the bivariate t family.
#[derive(Debug, Clone, Copy)]
pub struct TDist {
    pub params: TDistParams,
    det: f64,
    /// Σ⁻¹ entries.
    ixx: f64,
    ixy: f64,
    iyy: f64,
    ln_norm: f64,
    /// Mahalanobis radius where p falls to the cutoff.
    pub radius: f64,
}

impl TDist {
    pub fn new(params: TDistParams) -> Result<Self> {
        let TDistParams { sigma_x, sigma_xy, sigma_y, nu, c_x, c_y } = params;
        if !(nu > 1.0) {
            return Err(Error::InvalidParameter { name: "nu", value: nu, reason: "degrees of freedom must exceed 1" });
        }
        for (name, v) in [("c_x", c_x), ("c_y", c_y), ("sigma_x", sigma_x), ("sigma_y", sigma_y)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, value: v, reason: "must be positive and finite" });
            }
        }
        let det = sigma_x * sigma_y - sigma_xy * sigma_xy;
        if !(det > 0.0) {
            return Err(Error::NotPositiveDefinite { what: "Sigma".into(), min_eigenvalue: det });
        }
        let ln_norm = ln_gamma(0.5 * (nu + 2.0)) - ln_gamma(0.5 * nu) - (nu * std::f64::consts::PI).ln() - 0.5 * det.ln();
        let q = nu * ((ln_norm - T_DENSITY_CUTOFF.ln()) * 2.0 / (nu + 2.0)).exp_m1();
        Ok(Self {
            params,
            det,
            ixx: sigma_y / det,
            ixy: -sigma_xy / det,
            iyy: sigma_x / det,
            ln_norm,
            radius: q.max(0.0).sqrt(),
        })
    }

    fn quad(&self, x: f64, y: f64) -> f64 {
        self.ixx * x * x + 2.0 * self.ixy * x * y + self.iyy * y * y
    }

    /// Joint density.
    pub fn density(&self, x: f64, y: f64) -> f64 {
        let nu = self.params.nu;
        (self.ln_norm - 0.5 * (nu + 2.0) * (self.quad(x, y) / nu).ln_1p()).exp()
    }

    /// ∇ log p.
    pub fn grad_log_p(&self, x: f64, y: f64) -> (f64, f64) {
        let nu = self.params.nu;
        let f = -(nu + 2.0) / (nu + self.quad(x, y));
        (f * (self.ixx * x + self.ixy * y), f * (self.ixy * x + self.iyy * y))
    }

    /// Marginal density of Y (univariate t with scale √Σ_Y).
    pub fn p_y(&self, y: f64) -> f64 {
        let s = self.params.sigma_y.sqrt();
        student_t_pdf(y / s, self.params.nu) / s
    }

    /// b_Y(y) = −(ν+1)y / (2(νΣ_Y + y²)).
    pub fn b_y(&self, y: f64) -> f64 {
        let TDistParams { nu, sigma_y, .. } = self.params;
        -(nu + 1.0) * y / (2.0 * (nu * sigma_y + y * y))
    }

    fn b_y_prime(&self, y: f64) -> f64 {
        let TDistParams { nu, sigma_y, .. } = self.params;
        let s = nu * sigma_y + y * y;
        -(nu + 1.0) * (nu * sigma_y - y * y) / (2.0 * s * s)
    }

    /// Conditional location μ(y), scale τ(y) and their y-derivatives (μ', τ', τ'').
    fn conditional(&self, y: f64) -> (f64, f64, f64, f64, f64) {
        let TDistParams { nu, sigma_xy, sigma_y, .. } = self.params;
        let mu_p = sigma_xy / sigma_y;
        let k = self.det / ((nu + 1.0) * sigma_y * sigma_y);
        let tau = (k * (y * y + nu * sigma_y)).sqrt();
        let tau_p = k * y / tau;
        let tau_pp = (k - tau_p * tau_p) / tau;
        (mu_p * y, mu_p, tau, tau_p, tau_pp)
    }

    /// Conditional CDF F_{X|Y}(x|y): Student-t with ν+1 degrees of freedom.
    pub fn conditional_cdf(&self, x: f64, y: f64) -> f64 {
        let (mu, _, tau, _, _) = self.conditional(y);
        student_t_cdf((x - mu) / tau, self.params.nu + 1.0)
    }

    /// 𝐮 = (c_Y/2) ∂_y(p_Y(y) ∂_y F_{X|Y}(x|y)), with ∂_y applied analytically.
    pub fn u(&self, x: f64, y: f64) -> f64 {
        let nu1 = self.params.nu + 1.0;
        let (mu, mu_p, tau, tau_p, tau_pp) = self.conditional(y);
        let s = (x - mu) / tau;
        let s_y = -mu_p / tau - s * tau_p / tau;
        let s_yy = mu_p * tau_p / (tau * tau) - s_y * tau_p / tau - s * (tau_pp * tau - tau_p * tau_p) / (tau * tau);
        let f = student_t_pdf(s, nu1);
        let f_p = -f * (nu1 + 1.0) * s / (nu1 + s * s);
        let py = self.p_y(y);
        let py_p = py * self.b_y(y) * 2.0;
        0.5 * self.params.c_y * (py_p * f * s_y + py * f_p * s_y * s_y + py * f * s_yy)
    }

    /// θ* = ½∂_x log p + 𝐮 / (c_X p).
    pub fn theta_star(&self, x: f64, y: f64) -> f64 {
        0.5 * self.grad_log_p(x, y).0 + self.u(x, y) / (self.params.c_x * self.density(x, y))
    }

    /// θ̂(x) = −(ν+1)x / (2(νΣ_X + x²)).
    pub fn theta_hat(&self, x: f64) -> f64 {
        let TDistParams { nu, sigma_x, .. } = self.params;
        -(nu + 1.0) * x / (2.0 * (nu * sigma_x + x * x))
    }

    /// Location and magnitude of the largest |θ̂|: x = √(νΣ_X), (ν+1)/(4√(νΣ_X)).
    pub fn theta_hat_peak(&self) -> (f64, f64) {
        let r = (self.params.nu * self.params.sigma_x).sqrt();
        (r, (self.params.nu + 1.0) / (4.0 * r))
    }

    /// div_y(c_Y ℓ_Y p) = c_Y(½∂²_y p − b_Y′p − b_Y∂_y p).
    pub fn flux(&self, x: f64, y: f64) -> f64 {
        let nu = self.params.nu;
        let p = self.density(x, y);
        let q = self.quad(x, y);
        let zy = self.ixy * x + self.iyy * y;
        let g = -(nu + 2.0) * zy / (nu + q);
        let g_y = -(nu + 2.0) * (self.iyy * (nu + q) - 2.0 * zy * zy) / ((nu + q) * (nu + q));
        let p_y = p * g;
        let p_yy = p * (g * g + g_y);
        let b = self.b_y(y);
        self.params.c_y * (0.5 * p_yy - self.b_y_prime(y) * p - b * p_y)
    }

    /// x-window at y: Mahalanobis ball of the cutoff radius, at least ten conditional scales.
    pub fn x_window(&self, y: f64, scale: f64) -> (f64, f64) {
        let (mu, _, tau, _, _) = self.conditional(y);
        let r2 = self.radius * self.radius - y * y / self.params.sigma_y;
        let half = (r2.max(0.0) / self.ixx).sqrt().max(10.0 * tau) * scale;
        (mu - half, mu + half)
    }

    /// Draw from the joint law: Σ^{1/2}·N / √(χ²_ν/ν).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let TDistParams { sigma_x, sigma_xy, nu, .. } = self.params;
        let l11 = sigma_x.sqrt();
        let l21 = sigma_xy / l11;
        let l22 = (self.params.sigma_y - l21 * l21).sqrt();
        let n1: f64 = rng.sample(StandardNormal);
        let n2: f64 = rng.sample(StandardNormal);
        let w = (ChiSquared::new(nu).expect("nu > 1").sample(rng) / nu).sqrt();
        (l11 * n1 / w, (l21 * n1 + l22 * n2) / w)
    }

    pub fn inputs(&self) -> Result<ModelInputs> {
        let t = *self;
        let y_half = self.radius * self.params.sigma_y.sqrt();
        let (xa, xb) = self.x_window(0.0, 1.0);
        let inf = (f64::NEG_INFINITY, f64::INFINITY);
        let domain = DomainBox::new(vec![inf], vec![inf], vec![(xa, xb), (-y_half, y_half)])?;
        let c = DMatrix::from_row_slice(2, 2, &[self.params.c_x, 0.0, 0.0, self.params.c_y]);
        Ok(ModelInputs::new(
            "tdist",
            domain,
            Arc::new(move |_| c.clone()),
            Arc::new(move |z| t.density(z[0], z[1])),
            Arc::new(move |z, out| out[0] = t.b_y(z[1])),
        )
        .with_div_c(Arc::new(|_, out| out.fill(0.0)))
        .with_grad_log_p(Arc::new(move |z, out| {
            let (gx, gy) = t.grad_log_p(z[0], z[1]);
            out[0] = gx;
            out[1] = gy;
        }))
        .with_flux(Arc::new(move |z| t.flux(z[0], z[1])))
        .with_x_window(Arc::new(move |y, scale| vec![t.x_window(y[0], scale)])))
    }

    pub fn u_field(&self) -> UField {
        let t = *self;
        UField::closed_form(move |z, out| out[0] = t.u(z[0], z[1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn t() -> TDist {
        TDist::new(TDistParams::default()).unwrap()
    }

    #[test]
    fn b_y_values() {
        assert_eq!(t().b_y(0.0), 0.0);
        assert_relative_eq!(t().b_y(0.15), -10.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn low_dof_rejected() {
        let r = TDist::new(TDistParams { nu: 1.0, ..Default::default() });
        assert!(matches!(r, Err(Error::InvalidParameter { name: "nu", .. })));
    }

    #[test]
    fn theta_hat_peak_location() {
        let (x, v) = t().theta_hat_peak();
        assert_relative_eq!(x, 0.105f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(x, 0.32404, max_relative = 1e-5);
        assert_relative_eq!(v, 3.0861, max_relative = 2e-5);
        assert_relative_eq!(t().theta_hat(x).abs(), v, max_relative = 1e-14);
        assert!(t().theta_hat(x * 1.01).abs() < v && t().theta_hat(x * 0.99).abs() < v);
    }

    #[test]
    fn origin_values_vanish() {
        assert_eq!(t().theta_hat(0.0), 0.0);
        assert!(t().theta_star(0.0, 0.0).abs() < 1e-14);
    }

    #[test]
    fn u_decays_in_both_tails() {
        let t = t();
        let peak = (0..41).map(|k| t.u(-0.5 + 0.025 * k as f64, 0.1).abs()).fold(0.0, f64::max);
        assert!(t.u(-200.0, 0.1).abs() < 1e-9 * peak);
        assert!(t.u(200.0, 0.1).abs() < 1e-9 * peak);
    }

    #[test]
    fn density_integrates_to_one() {
        let inputs = t().inputs().unwrap();
        let r = crate::inputs::integrate_state_space(&inputs, 1.0, |z| Ok(inputs.density(z))).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-6);
    }
}
