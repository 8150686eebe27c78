//! Pairs-trading example families: CTOU, bivariate-t and CIR stochastic volatility.

pub mod ctou;
pub mod stochvol;
pub mod tdist;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianModel;
use crate::inputs::{linspace, ModelInputs, UField};
use crate::strategy::StrategyField;

pub use ctou::{ctou_model, ctou_p_hat_coefficients, ctou_p_hat_consistent, ctou_sigma, CtouPHat, CtouParams};
pub use stochvol::{StochVol, StochVolParams, ThetaHatTable};
pub use tdist::{TDist, TDistParams};

/// Example identifiers shared by the CLI and configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Example {
    Ctou,
    Tdist,
    Stochvol,
}

impl Example {
    pub const ALL: [Example; 3] = [Example::Ctou, Example::Tdist, Example::Stochvol];

    pub fn name(self) -> &'static str {
        match self {
            Example::Ctou => "ctou",
            Example::Tdist => "tdist",
            Example::Stochvol => "stochvol",
        }
    }
}

impl std::str::FromStr for Example {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctou" => Ok(Example::Ctou),
            "tdist" => Ok(Example::Tdist),
            "stochvol" => Ok(Example::Stochvol),
            other => Err(Error::Unsupported(format!("unknown example '{other}'"))),
        }
    }
}

/// CTOU parameters together with the derived Gaussian model.
#[derive(Debug, Clone)]
pub struct Ctou {
    pub params: CtouParams,
    pub model: GaussianModel,
}

impl Ctou {
    pub fn new(params: CtouParams) -> Result<Self> {
        Ok(Self { params, model: ctou_model(&params)? })
    }
}

/// A constructed example family.
#[derive(Debug, Clone)]
pub enum Family {
    Ctou(Ctou),
    TDist(TDist),
    StochVol(StochVol),
}

impl Family {
    pub fn ctou(params: CtouParams) -> Result<Self> {
        Ok(Family::Ctou(Ctou::new(params)?))
    }

    pub fn tdist(params: TDistParams) -> Result<Self> {
        Ok(Family::TDist(TDist::new(params)?))
    }

    pub fn stochvol(params: StochVolParams) -> Result<Self> {
        Ok(Family::StochVol(StochVol::new(params)?))
    }

    /// The family with default parameters.
    pub fn default_for(example: Example) -> Result<Self> {
        match example {
            Example::Ctou => Self::ctou(CtouParams::default()),
            Example::Tdist => Self::tdist(TDistParams::default()),
            Example::Stochvol => Self::stochvol(StochVolParams::default()),
        }
    }

    pub fn example(&self) -> Example {
        match self {
            Family::Ctou(_) => Example::Ctou,
            Family::TDist(_) => Example::Tdist,
            Family::StochVol(_) => Example::Stochvol,
        }
    }

    /// Closed-form θ*(x, y).
    pub fn theta_star(&self, x: f64, y: f64) -> Result<f64> {
        match self {
            Family::Ctou(c) => {
                let (gx, gy) = c.params.theta_ctou();
                Ok(gx * x + gy * y)
            }
            Family::TDist(t) => Ok(t.theta_star(x, y)),
            Family::StochVol(s) => s.theta_star(x, y),
        }
    }

    /// θ̂(x); for CTOU the coefficient is −½Σ_X⁻¹.
    pub fn theta_hat(&self, x: f64) -> Result<f64> {
        match self {
            Family::Ctou(c) => Ok(c.model.theta_hat().g_x[(0, 0)] * x),
            Family::TDist(t) => Ok(t.theta_hat(x)),
            Family::StochVol(s) => s.theta_hat(x),
        }
    }

    pub fn inputs(&self) -> Result<ModelInputs> {
        match self {
            Family::Ctou(c) => c.model.inputs(),
            Family::TDist(t) => t.inputs(),
            Family::StochVol(s) => s.inputs(),
        }
    }

    /// Closed-form 𝐮.
    pub fn u_field(&self) -> UField {
        match self {
            Family::Ctou(c) => c.model.u_field(),
            Family::TDist(t) => t.u_field(),
            Family::StochVol(s) => s.u_field(),
        }
    }

    pub fn theta_star_strategy(&self) -> StrategyField {
        match self {
            Family::Ctou(c) => c.model.theta_star().to_field("theta_star[ctou]"),
            Family::TDist(t) => {
                let t = *t;
                StrategyField::scalar("theta_star[tdist]", "tdist", t.coefficients(), move |z| t.theta_star(z[0], z[1]))
            }
            Family::StochVol(s) => {
                let s = *s;
                StrategyField::scalar("theta_star[stochvol]", "stochvol", s.coefficients(), move |z| {
                    s.theta_star(z[0], z[1]).unwrap_or(f64::NAN)
                })
            }
        }
    }

    pub fn theta_hat_strategy(&self) -> StrategyField {
        match self {
            Family::Ctou(c) => c.model.theta_hat().to_field("theta_hat[ctou]"),
            Family::TDist(t) => {
                let t = *t;
                StrategyField::scalar("theta_hat[tdist]", "tdist", t.coefficients(), move |z| t.theta_hat(z[0]))
            }
            Family::StochVol(s) => {
                let s = *s;
                StrategyField::scalar("theta_hat[stochvol]", "stochvol", s.coefficients(), move |z| {
                    s.theta_hat(z[0]).unwrap_or(f64::NAN)
                })
            }
        }
    }

    /// θ̂ for repeated evaluation along simulated paths and inside quadratures; the
    /// stochastic-volatility marginal ratio is tabulated once on eight times its
    /// x-window, which covers every widened quadrature box.
    pub fn theta_hat_sim_strategy(&self) -> Result<StrategyField> {
        match self {
            Family::StochVol(s) => {
                let (_, half) = s.x_window(s.y_hi, 1.0);
                let table = ThetaHatTable::new(s, 8.0 * half, 4001)?;
                Ok(StrategyField::scalar("theta_hat[stochvol]", "stochvol", s.coefficients(), move |z| table.eval(z[0])))
            }
            _ => Ok(self.theta_hat_strategy()),
        }
    }

    /// Default x-grid of the slice plots.
    pub fn default_x_grid(&self) -> Vec<f64> {
        match self {
            Family::StochVol(_) => linspace(-1.0, 1.0, 101),
            _ => linspace(-3.0, 3.0, 121),
        }
    }

    /// Eleven equally spaced factor values of the slice plots.
    pub fn default_y_values(&self) -> Vec<f64> {
        match self {
            Family::Ctou(_) => linspace(-2.0, 2.0, 11),
            Family::TDist(_) => linspace(-3.0, 3.0, 11),
            Family::StochVol(_) => linspace(0.0225, 0.0575, 11),
        }
    }

    /// Parameter listing for headers and manifests.
    pub fn coefficients(&self) -> Vec<(String, f64)> {
        match self {
            Family::Ctou(c) => {
                let p = c.params;
                named(&[("c_x", p.c_x), ("c_y", p.c_y), ("kappa_x", p.kappa_x), ("kappa_y", p.kappa_y)])
            }
            Family::TDist(t) => t.coefficients(),
            Family::StochVol(s) => s.coefficients(),
        }
    }
}

fn named(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

impl TDist {
    pub fn coefficients(&self) -> Vec<(String, f64)> {
        let p = self.params;
        named(&[
            ("sigma_x", p.sigma_x),
            ("sigma_xy", p.sigma_xy),
            ("sigma_y", p.sigma_y),
            ("nu", p.nu),
            ("c_x", p.c_x),
            ("c_y", p.c_y),
        ])
    }
}

impl StochVol {
    pub fn coefficients(&self) -> Vec<(String, f64)> {
        let p = self.params;
        named(&[
            ("kappa", p.kappa),
            ("nu", p.nu),
            ("sigma", p.sigma),
            ("rho", p.rho),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ])
    }
}

/// Converts a spread position θ into holdings of the two legs: the first leg
/// holds q1 = a·θ·V units, the second −(b/a)·q1.
pub fn spread_to_holdings(theta: f64, wealth: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    if a == 0.0 || !a.is_finite() {
        return Err(Error::InvalidParameter { name: "a", value: a, reason: "hedge coefficient must be nonzero" });
    }
    let q1 = a * theta * wealth;
    Ok((q1, -(b / a) * q1))
}

/// θ*(·, y) per factor value and θ̂ on a common x-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceTable {
    pub example: Example,
    pub parameters: Vec<(String, f64)>,
    pub x_grid: Vec<f64>,
    pub y_values: Vec<f64>,
    /// One row per y value.
    pub theta_star: Vec<Vec<f64>>,
    pub theta_hat: Vec<f64>,
}

impl SliceTable {
    /// CSV with a leading `#` comment recording parameters and y values.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let params: Vec<String> = self.parameters.iter().map(|(k, v)| format!("{k}={v:.16e}")).collect();
        let ys: Vec<String> = self.y_values.iter().map(|y| format!("{y:.16e}")).collect();
        let _ = writeln!(s, "# example={} {} y_values={}", self.example.name(), params.join(" "), ys.join(";"));
        s.push_str("x,theta_hat");
        for k in 1..=self.y_values.len() {
            let _ = write!(s, ",theta_star_y{k}");
        }
        s.push('\n');
        for (i, x) in self.x_grid.iter().enumerate() {
            let _ = write!(s, "{x:.16e},{:.16e}", self.theta_hat[i]);
            for row in &self.theta_star {
                let _ = write!(s, ",{:.16e}", row[i]);
            }
            s.push('\n');
        }
        s
    }
}

/// Tabulates θ* and θ̂; factor values are processed in parallel, output order is fixed.
pub fn slice_table(family: &Family, x_grid: &[f64], y_values: &[f64]) -> Result<SliceTable> {
    let theta_hat = x_grid.par_iter().map(|&x| family.theta_hat(x)).collect::<Result<Vec<_>>>()?;
    let theta_star = y_values
        .par_iter()
        .map(|&y| x_grid.iter().map(|&x| family.theta_star(x, y)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let all = theta_hat.iter().chain(theta_star.iter().flatten());
    if let Some(v) = all.copied().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite slice value {v}")));
    }
    Ok(SliceTable {
        example: family.example(),
        parameters: family.coefficients(),
        x_grid: x_grid.to_vec(),
        y_values: y_values.to_vec(),
        theta_star,
        theta_hat,
    })
}
