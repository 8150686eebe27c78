//! Spread with CIR stochastic variance: c(y) = y·[[1, ρσ], [ρσ, σ²]],
//! invariant law N(0, y)(x)·Γ(α, β)(y).

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::inputs::{DomainBox, ModelInputs, UField};
use crate::quadrature::{self, Tolerance};
use crate::special::gamma_quantile;

/// Tail probability of the gamma quantiles that truncate the factor domain.
pub const GAMMA_TAIL: f64 = 1e-10;
/// Conditional x-window half-width in conditional standard deviations.
pub const X_WINDOW_SD: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochVolParams {
    pub kappa: f64,
    pub nu: f64,
    pub sigma: f64,
    #[serde(default)]
    pub rho: f64,
}

impl Default for StochVolParams {
    fn default() -> Self {
        Self { kappa: 5.0, nu: 0.04, sigma: 0.6, rho: 0.0 }
    }
}

impl StochVolParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa", self.kappa), ("nu", self.nu), ("sigma", self.sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, value: v, reason: "must be positive and finite" });
            }
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter { name: "rho", value: self.rho, reason: "must lie in (-1, 1)" });
        }
        let lhs = 2.0 * self.kappa * self.nu;
        let rhs = self.sigma * self.sigma;
        if lhs <= rhs {
            return Err(Error::Feller { lhs, rhs });
        }
        Ok(())
    }

    /// Gamma shape α = 2κν/σ².
    pub fn alpha(&self) -> f64 {
        2.0 * self.kappa * self.nu / (self.sigma * self.sigma)
    }

    /// Gamma rate β = 2κ/σ².
    pub fn beta(&self) -> f64 {
        2.0 * self.kappa / (self.sigma * self.sigma)
    }

    /// α > 1 (reported, not enforced).
    pub fn alpha_exceeds_one(&self) -> bool {
        self.alpha() > 1.0
    }
}

/// Validated stochastic-volatility family.
#[derive(Debug, Clone, Copy)]
pub struct StochVol {
    pub params: StochVolParams,
    pub alpha: f64,
    pub beta: f64,
    ln_gamma_norm: f64,
    /// Gamma quantiles at GAMMA_TAIL and 1 − GAMMA_TAIL.
    pub y_lo: f64,
    pub y_hi: f64,
}

impl StochVol {
    pub fn new(params: StochVolParams) -> Result<Self> {
        params.validate()?;
        let alpha = params.alpha();
        let beta = params.beta();
        Ok(Self {
            params,
            alpha,
            beta,
            ln_gamma_norm: alpha * beta.ln() - ln_gamma(alpha),
            y_lo: gamma_quantile(alpha, beta, GAMMA_TAIL),
            y_hi: gamma_quantile(alpha, beta, 1.0 - GAMMA_TAIL),
        })
    }

    fn check_y(y: f64) -> Result<()> {
        if !(y > 0.0) {
            return Err(Error::Domain(format!("variance factor y = {y} must be positive")));
        }
        Ok(())
    }

    pub fn density(&self, x: f64, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let ln_n = -0.5 * x * x / y - 0.5 * (2.0 * std::f64::consts::PI * y).ln();
        (ln_n + self.ln_gamma_norm + (self.alpha - 1.0) * y.ln() - self.beta * y).exp()
    }

    pub fn c(&self, y: f64) -> DMatrix<f64> {
        let StochVolParams { sigma, rho, .. } = self.params;
        DMatrix::from_row_slice(2, 2, &[y, y * rho * sigma, y * rho * sigma, y * sigma * sigma])
    }

    /// ∇ log p = (−x/y, x²/(2y²) + (α − 3/2)/y − β).
    pub fn grad_log_p(&self, x: f64, y: f64) -> (f64, f64) {
        (-x / y, 0.5 * x * x / (y * y) + (self.alpha - 1.5) / y - self.beta)
    }

    /// b_Y(y) = κ(ν − y)/(σ²y).
    pub fn b_y(&self, y: f64) -> f64 {
        let StochVolParams { kappa, nu, sigma, .. } = self.params;
        kappa * (nu - y) / (sigma * sigma * y)
    }

    /// ℓ_Y = x²/(4y²) − 1/(4y) − ρx/(2σy).
    pub fn ell_y(&self, x: f64, y: f64) -> f64 {
        let StochVolParams { sigma, rho, .. } = self.params;
        0.25 * x * x / (y * y) - 0.25 / y - 0.5 * rho * x / (sigma * y)
    }

    /// div_y(c_Y ℓ_Y p).
    pub fn flux(&self, x: f64, y: f64) -> f64 {
        let StochVolParams { sigma, rho, .. } = self.params;
        let s2 = sigma * sigma;
        let p = self.density(x, y);
        let g = self.grad_log_p(x, y).1;
        s2 * p * (-0.25 * x * x / (y * y) + (0.25 * x * x / y - 0.25 - 0.5 * rho * x / sigma) * g)
    }

    /// Closed-form 𝐮 with 𝐮 → 0 as x → −∞.
    pub fn u(&self, x: f64, y: f64) -> f64 {
        let StochVolParams { kappa: k, nu, sigma: s, rho: r } = self.params;
        let s2 = s * s;
        let s3 = s2 * s;
        let num = -s3 * x.powi(3) + 2.0 * r * s2 * x * x * y + 4.0 * k * s * x * y * y
            + (3.0 * s3 - 4.0 * k * nu * s) * x * y
            - 8.0 * k * r * y.powi(3)
            + (8.0 * k * nu * r - 2.0 * r * s2) * y * y;
        num / (8.0 * s * y * y) * self.density(x, y)
    }

    /// θ*(x, y); a rational function of (x, y).
    pub fn theta_star(&self, x: f64, y: f64) -> Result<f64> {
        Self::check_y(y)?;
        let StochVolParams { kappa: k, nu, sigma: s, rho: r } = self.params;
        let s2 = s * s;
        let s3 = s2 * s;
        let num = -s3 * x.powi(3) + 4.0 * r * s2 * x * x * y + (4.0 * k * s - 4.0 * s) * x * y * y
            + (3.0 * s3 - 4.0 * k * nu * s) * x * y
            - 16.0 * k * r * y.powi(3)
            + (16.0 * k * nu * r - 4.0 * r * s2) * y * y;
        Ok(num / (8.0 * s * y.powi(3)))
    }

    /// ln p_X^{a,β}(x) where p_X^{a,β} = ∫ N(0, y)(x) Γ(a, β)(y) dy, by adaptive
    /// quadrature in ln y. The integrand is rescaled by its maximum so that
    /// large |x| does not underflow.
    pub fn ln_marginal(&self, shape: f64, x: f64) -> Result<f64> {
        let beta = self.beta;
        let ln_norm = shape * beta.ln() - ln_gamma(shape) - 0.5 * (2.0 * std::f64::consts::PI).ln();
        // ln of the integrand in s = ln y, including the Jacobian y.
        let ln_f = |s: f64| {
            let y = s.exp();
            -0.5 * x * x / y + (shape - 0.5) * s - beta * y
        };
        let y_peak = {
            // Stationary point of ln_f: βy² − (shape − ½)y − x²/2 = 0.
            let b = shape - 0.5;
            (b + (b * b + 2.0 * beta * x * x).sqrt()) / (2.0 * beta)
        };
        let shift = ln_f(y_peak.ln());
        let lo = gamma_quantile(shape, beta, GAMMA_TAIL).min(y_peak * 1e-3);
        let hi = gamma_quantile(shape, beta, 1.0 - GAMMA_TAIL).max(10.0 * x.abs() / (2.0 * beta).sqrt());
        let tol = Tolerance { abs: 0.0, rel: 1e-11, ..Tolerance::default() };
        // ln_f is concave in s; clip to ±40 Laplace widths and split at the peak
        // so the adaptive rule cannot miss a narrow maximum.
        let s_peak = y_peak.ln();
        let width = (0.5 * x * x / y_peak + beta * y_peak).sqrt().recip();
        let a = lo.ln().max(s_peak - 40.0 * width).min(s_peak);
        let b = hi.ln().min(s_peak + 40.0 * width).max(s_peak);
        let f = |s: f64| (ln_f(s) - shift).exp();
        let left = quadrature::adaptive(f, a, s_peak, tol);
        let right = quadrature::adaptive(f, s_peak, b, tol);
        let r = quadrature::QuadResult {
            value: left.value + right.value,
            error: left.error + right.error,
            converged: left.converged && right.converged,
            evaluations: left.evaluations + right.evaluations,
        };
        if !r.converged || !(r.value > 0.0) {
            return Err(Error::Quadrature(format!("marginal density of X at x = {x} (shape {shape}) did not converge")));
        }
        Ok(ln_norm + shift + r.value.ln())
    }

    /// θ̂(x) = −(α/2β)·x·p_X^{α,β}(x)/p_X^{α+1,β}(x).
    pub fn theta_hat(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Ok(0.0);
        }
        let ratio = (self.ln_marginal(self.alpha, x)? - self.ln_marginal(self.alpha + 1.0, x)?).exp();
        Ok(-self.alpha / (2.0 * self.beta) * x * ratio)
    }

    /// ½ a′/a with a(x) = ∫ y p(x, y) dy = (α/β)p_X^{α+1,β}(x), i.e.
    /// −(β/2α)·x·p_X^{α,β}/p_X^{α+1,β}.
    pub fn theta_hat_marginal_vol(&self, x: f64) -> Result<f64> {
        Ok(self.theta_hat(x)? * (self.beta / self.alpha).powi(2))
    }

    /// lim_{x→+∞} |θ̂(x)| = α²/(√2 β^{3/2}).
    pub fn theta_hat_limit(&self) -> f64 {
        self.alpha * self.alpha / (std::f64::consts::SQRT_2 * self.beta.powf(1.5))
    }

    pub fn x_window(&self, y: f64, scale: f64) -> (f64, f64) {
        let h = X_WINDOW_SD * y.max(0.0).sqrt() * scale;
        (-h, h)
    }

    pub fn inputs(&self) -> Result<ModelInputs> {
        let sv = *self;
        let (xa, xb) = self.x_window(self.y_hi, 1.0);
        let domain = DomainBox::new(
            vec![(f64::NEG_INFINITY, f64::INFINITY)],
            vec![(0.0, f64::INFINITY)],
            vec![(xa, xb), (self.y_lo, self.y_hi)],
        )?;
        let StochVolParams { sigma, rho, .. } = self.params;
        Ok(ModelInputs::new(
            "stochvol",
            domain,
            Arc::new(move |z| sv.c(z[1])),
            Arc::new(move |z| sv.density(z[0], z[1])),
            Arc::new(move |z, out| out[0] = sv.b_y(z[1])),
        )
        .with_div_c(Arc::new(move |_, out| {
            out[0] = rho * sigma;
            out[1] = sigma * sigma;
        }))
        .with_grad_log_p(Arc::new(move |z, out| {
            let (gx, gy) = sv.grad_log_p(z[0], z[1]);
            out[0] = gx;
            out[1] = gy;
        }))
        .with_flux(Arc::new(move |z| sv.flux(z[0], z[1])))
        .with_x_window(Arc::new(move |y, scale| vec![sv.x_window(y[0], scale)])))
    }

    pub fn u_field(&self) -> UField {
        let sv = *self;
        UField::closed_form(move |z, out| out[0] = sv.u(z[0], z[1]))
    }
}

/// θ̂ on nodes x_k = L(k/(n−1))², dense near the cusp at the origin, linearly
/// interpolated and extended oddly; exact quadrature beyond L. Used where θ̂ is
/// evaluated at every time step.
#[derive(Debug, Clone)]
pub struct ThetaHatTable {
    sv: StochVol,
    half_width: f64,
    nodes: Vec<f64>,
    values: Vec<f64>,
}

impl ThetaHatTable {
    pub fn new(sv: &StochVol, half_width: f64, n: usize) -> Result<Self> {
        if !(half_width > 0.0) || n < 2 {
            return Err(Error::InvalidParameter { name: "table", value: half_width, reason: "needs a positive width and two nodes" });
        }
        let nodes: Vec<f64> = (0..n).map(|k| half_width * (k as f64 / (n - 1) as f64).powi(2)).collect();
        let values = nodes.iter().map(|&x| sv.theta_hat(x)).collect::<Result<_>>()?;
        Ok(Self { sv: *sv, half_width, nodes, values })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let a = x.abs();
        if a >= self.half_width {
            return self.sv.theta_hat(x).unwrap_or(f64::NAN);
        }
        let n = self.nodes.len();
        let k = (((a / self.half_width).sqrt() * (n - 1) as f64).floor() as usize).min(n - 2);
        let w = (a - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        let v = self.values[k] * (1.0 - w) + self.values[k + 1] * w;
        if x < 0.0 {
            -v
        } else {
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::{assemble_xi, eval_ell};
    use approx::assert_relative_eq;

    fn sv() -> StochVol {
        StochVol::new(StochVolParams::default()).unwrap()
    }

    #[test]
    fn derived_gamma_parameters() {
        let p = StochVolParams::default();
        assert_relative_eq!(p.alpha(), 10.0 / 9.0, max_relative = 1e-14);
        assert_relative_eq!(p.beta(), 250.0 / 9.0, max_relative = 1e-14);
        assert!(p.alpha_exceeds_one());
    }

    #[test]
    fn feller_violation_rejected() {
        let r = StochVol::new(StochVolParams { sigma: 0.7, ..Default::default() });
        match r {
            Err(Error::Feller { lhs, rhs }) => {
                assert_relative_eq!(lhs, 0.4, max_relative = 1e-14);
                assert_relative_eq!(rhs, 0.49, max_relative = 1e-14);
            }
            other => panic!("expected Feller error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_quantiles() {
        let s = sv();
        assert_relative_eq!(s.y_lo, 3.768642325686357e-11, max_relative = 1e-8);
        assert_relative_eq!(s.y_hi, 0.8436736598478596, max_relative = 1e-8);
    }

    #[test]
    fn theta_star_values() {
        let s = sv();
        assert_relative_eq!(s.theta_star(0.1, 0.04).unwrap(), 6.484375, max_relative = 1e-12);
        assert_relative_eq!(s.theta_star(1.0, 0.04).unwrap(), -631.25, max_relative = 1e-12);
        assert_eq!(s.theta_star(0.0, 0.04).unwrap(), 0.0);
        assert!(matches!(s.theta_star(0.1, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn ell_y_at_origin() {
        let s = sv();
        let inputs = s.inputs().unwrap();
        let e = eval_ell(&inputs, &[0.0, 0.04]).unwrap();
        assert_relative_eq!(e.ell_y[0], -6.25, max_relative = 1e-12);
        assert_relative_eq!(s.ell_y(0.0, 0.04), -6.25, max_relative = 1e-14);
    }

    #[test]
    fn theta_star_is_xi_with_closed_form_u() {
        for rho in [0.0, -0.4] {
            let s = StochVol::new(StochVolParams { rho, ..Default::default() }).unwrap();
            let inputs = s.inputs().unwrap();
            let u = s.u_field();
            for &(x, y) in &[(0.1, 0.04), (-0.3, 0.02), (0.5, 0.06)] {
                let xi = assemble_xi(&inputs, &u, &[x, y]).unwrap()[0];
                let t = s.theta_star(x, y).unwrap();
                assert!((xi - t).abs() <= 1e-9 * t.abs().max(1.0), "rho {rho} at ({x}, {y}): {xi} vs {t}");
            }
        }
    }

    #[test]
    fn theta_hat_matches_reference_quadrature() {
        let s = sv();
        for (x, v) in [
            (0.1, -0.0023433066),
            (0.5, -0.0045807770),
            (1.0, -0.0051848293),
            (2.0, -0.0055478862),
            (5.0, -0.0057899736),
            (20.0, -0.0059187161),
        ] {
            assert_relative_eq!(s.theta_hat(x).unwrap(), v, max_relative = 1e-7);
            assert_relative_eq!(s.theta_hat(-x).unwrap(), -v, max_relative = 1e-7);
        }
        assert_eq!(s.theta_hat(0.0).unwrap(), 0.0);
    }

    #[test]
    fn theta_hat_limit_value_and_approach() {
        let s = sv();
        assert_relative_eq!(s.theta_hat_limit(), 0.00596284794, max_relative = 1e-8);
        let far = s.theta_hat(400.0).unwrap().abs();
        assert!((far - s.theta_hat_limit()).abs() < 1e-3 * s.theta_hat_limit());
    }

    #[test]
    fn marginal_vol_version_differs_by_squared_ratio() {
        let s = sv();
        let r = s.theta_hat_marginal_vol(1.0).unwrap() / s.theta_hat(1.0).unwrap();
        assert_relative_eq!(r, 625.0, max_relative = 1e-12);
    }

    #[test]
    fn table_tracks_quadrature() {
        let sv = StochVol::new(StochVolParams::default()).unwrap();
        let t = ThetaHatTable::new(&sv, 2.0, 2001).unwrap();
        for x in [-1.7, -0.33, 0.0, 0.01234, 0.9, 2.5] {
            let exact = sv.theta_hat(x).unwrap();
            assert!((t.eval(x) - exact).abs() <= 1e-5 * exact.abs().max(1e-3), "{x}: {} vs {exact}", t.eval(x));
        }
    }
}
