//! Central Tendency Ornstein–Uhlenbeck spread: X reverts to a stochastic
//! level Y, which is itself OU.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianModel, LinearDynamics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtouParams {
    pub c_x: f64,
    pub c_y: f64,
    pub kappa_x: f64,
    pub kappa_y: f64,
}

impl Default for CtouParams {
    fn default() -> Self {
        Self { c_x: 0.04, c_y: 0.0225, kappa_x: 1.0, kappa_y: 0.5 }
    }
}

impl CtouParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_x", self.c_x), ("c_y", self.c_y), ("kappa_x", self.kappa_x), ("kappa_y", self.kappa_y)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, value: v, reason: "must be positive and finite" });
            }
        }
        Ok(())
    }

    /// θ^CTOU coefficients (on x, on y) = (−κ_X/c_X, κ_X/c_X).
    pub fn theta_ctou(&self) -> (f64, f64) {
        let k = self.kappa_x / self.c_x;
        (-k, k)
    }

    /// The CTOU generator [[−κ_X, κ_X], [0, −κ_Y]].
    pub fn generator(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-self.kappa_x, self.kappa_x, 0.0, -self.kappa_y])
    }

    pub fn c(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.c_x, 0.0, 0.0, self.c_y])
    }
}

/// Stationary covariance of the CTOU process.
pub fn ctou_sigma(params: &CtouParams) -> DMatrix<f64> {
    let CtouParams { c_x, c_y, kappa_x: kx, kappa_y: ky } = *params;
    let sxy = c_y * kx / (2.0 * ky * (kx + ky));
    DMatrix::from_row_slice(2, 2, &[c_x / (2.0 * kx) + sxy, sxy, sxy, c_y / (2.0 * ky)])
}

/// Gaussian model with c = diag(c_X, c_Y), Σ = ctou_sigma and β_X = 0.
pub fn ctou_model(params: &CtouParams) -> Result<GaussianModel> {
    params.validate()?;
    let model = GaussianModel::build(params.c(), ctou_sigma(params), DMatrix::zeros(1, 1), 1)?;
    let y_drift = 0.5 * params.c_y * model.beta_y[(0, 0)];
    if (y_drift + params.kappa_y).abs() > 1e-9 * params.kappa_y {
        return Err(Error::Domain(format!(
            "factor drift {y_drift} does not reproduce -kappa_Y = {}",
            -params.kappa_y
        )));
    }
    Ok(model)
}

/// Coefficients of the worst-case measure for Π as printed in closed form:
/// θ̂ = θ̂_x·x, dX = x_drift·X dt, dY = (y_drift_x·X + y_drift_y·Y) dt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtouPHat {
    pub theta_hat: f64,
    pub x_drift: f64,
    pub y_drift_x: f64,
    pub y_drift_y: f64,
}

impl CtouPHat {
    pub fn dynamics(&self, params: &CtouParams) -> LinearDynamics {
        LinearDynamics {
            k: DMatrix::from_row_slice(2, 2, &[self.x_drift, 0.0, self.y_drift_x, self.y_drift_y]),
            c: params.c(),
        }
    }

    pub fn lyapunov_residual(&self, params: &CtouParams) -> f64 {
        self.dynamics(params).lyapunov_residual(&ctou_sigma(params))
    }
}

/// The printed closed-form coefficients, taken literally.
pub fn ctou_p_hat_coefficients(params: &CtouParams) -> CtouPHat {
    let CtouParams { c_x, c_y, kappa_x: kx, kappa_y: ky } = *params;
    let den = c_x * (kx + ky) + c_y * ky;
    let den_y = c_y * kx * kx + c_x * ky * (kx + ky);
    CtouPHat {
        theta_hat: -kx * (kx + ky) / den,
        x_drift: -c_x * kx * (kx + ky) / den,
        y_drift_x: c_y * kx * kx * (kx + ky) / den_y,
        y_drift_y: -(kx + ky) * (c_y * kx * kx + c_x * ky * ky) / den_y,
    }
}

/// The same coefficients with θ̂ = −½Σ_X⁻¹ = −κ_Xκ_Y(κ_X+κ_Y)/(c_Xκ_Y(κ_X+κ_Y) + c_Yκ_X²)
/// and X-drift c_X·θ̂; these agree with the general Gaussian formulas.
pub fn ctou_p_hat_consistent(params: &CtouParams) -> CtouPHat {
    let CtouParams { c_x, c_y, kappa_x: kx, kappa_y: ky } = *params;
    let literal = ctou_p_hat_coefficients(params);
    let theta_hat = -kx * ky * (kx + ky) / (c_x * ky * (kx + ky) + c_y * kx * kx);
    CtouPHat { theta_hat, x_drift: c_x * theta_hat, ..literal }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn paper_sigma() {
        let s = ctou_sigma(&CtouParams::default());
        assert_relative_eq!(s[(0, 0)], 0.035, max_relative = 1e-14);
        assert_relative_eq!(s[(0, 1)], 0.015, max_relative = 1e-14);
        assert_relative_eq!(s[(1, 1)], 0.0225, max_relative = 1e-14);
    }

    #[test]
    fn fast_factor_decouples() {
        let s = ctou_sigma(&CtouParams { kappa_y: 1e3, ..Default::default() });
        assert!(s[(0, 1)] < 1e-4);
    }

    #[test]
    fn literal_p_hat_coefficients() {
        let c = ctou_p_hat_coefficients(&CtouParams::default());
        assert_relative_eq!(c.theta_hat, -1.5 / 0.07125, max_relative = 1e-12);
        assert_relative_eq!(c.theta_hat, -21.052631578947368, max_relative = 1e-12);
        assert_relative_eq!(c.x_drift, -0.8421052631578947, max_relative = 1e-12);
        assert_relative_eq!(c.y_drift_x, 0.6428571428571429, max_relative = 1e-12);
        assert_relative_eq!(c.y_drift_y, -0.9285714285714286, max_relative = 1e-12);
        assert!(c.lyapunov_residual(&CtouParams::default()) > 1e-3);
    }

    #[test]
    fn consistent_p_hat_matches_gaussian_solver() {
        let p = CtouParams::default();
        let c = ctou_p_hat_consistent(&p);
        let g = ctou_model(&p).unwrap();
        assert_relative_eq!(c.theta_hat, g.theta_hat().g_x[(0, 0)], max_relative = 1e-12);
        let k = g.worst_case_hat().k;
        assert!((c.dynamics(&p).k - k).amax() < 1e-12);
        assert!(c.lyapunov_residual(&p) < 1e-12);
    }

    #[test]
    fn symmetric_case_is_finite_with_negative_diagonal() {
        let c = ctou_p_hat_coefficients(&CtouParams { c_x: 0.03, c_y: 0.03, kappa_x: 0.7, kappa_y: 0.7 });
        for v in [c.theta_hat, c.x_drift, c.y_drift_x, c.y_drift_y] {
            assert!(v.is_finite());
        }
        assert!(c.x_drift < 0.0 && c.y_drift_y < 0.0);
    }

    #[test]
    fn invalid_kappa_rejected() {
        let r = ctou_model(&CtouParams { kappa_x: 0.0, ..Default::default() });
        assert!(matches!(r, Err(Error::InvalidParameter { name: "kappa_x", .. })));
    }
}
