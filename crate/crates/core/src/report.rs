//! Analytic reports and check batteries shared by the CLI and acceptance runs.
//! Floats are written with 17 significant digits.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::{GaussianModel, LinearStrategy};
use crate::inputs::{
    check_compatibility, divergence_refinement, gradient_strategy, grid_2d, integrability_report, linspace,
    FdScheme, UField,
};
use crate::pairs::{ctou_p_hat_coefficients, ctou_p_hat_consistent, ctou_sigma, CtouParams, Family};
use crate::sim::{simulate_growth, DynamicsSpec, GrowthReport, SimConfig};
use crate::slice::{euler_lagrange_refinement, lambda_p_quadrature};
use crate::strategy::StrategyField;

/// `{:.16e}`: 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Minimal JSON object writer with fixed key order.
#[derive(Debug, Default, Clone)]
pub struct JsonObject {
    entries: Vec<(String, String)>,
}

impl JsonObject {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num(mut self, key: &str, v: f64) -> Self {
        let s = if v.is_finite() { fmt17(v) } else { "null".to_string() };
        self.entries.push((key.to_string(), s));
        self
    }

    pub fn int(mut self, key: &str, v: i64) -> Self {
        self.entries.push((key.to_string(), v.to_string()));
        self
    }

    pub fn boolean(mut self, key: &str, v: bool) -> Self {
        self.entries.push((key.to_string(), v.to_string()));
        self
    }

    pub fn text(mut self, key: &str, v: &str) -> Self {
        self.entries.push((key.to_string(), json_string(v)));
        self
    }

    pub fn raw(mut self, key: &str, json: String) -> Self {
        self.entries.push((key.to_string(), json));
        self
    }

    pub fn nums(self, key: &str, v: &[f64]) -> Self {
        let items: Vec<String> = v.iter().map(|x| fmt17(*x)).collect();
        self.raw(key, format!("[{}]", items.join(", ")))
    }

    pub fn render(&self, indent: usize) -> String {
        if self.entries.is_empty() {
            return "{}".into();
        }
        let pad = " ".repeat(indent + 2);
        let body: Vec<String> = self.entries.iter().map(|(k, v)| format!("{pad}{}: {v}", json_string(k))).collect();
        format!("{{\n{}\n{}}}", body.join(",\n"), " ".repeat(indent))
    }
}

pub fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn json_array(items: &[String], indent: usize) -> String {
    if items.is_empty() {
        return "[]".into();
    }
    let pad = " ".repeat(indent + 2);
    let body: Vec<String> = items.iter().map(|s| format!("{pad}{s}")).collect();
    format!("[\n{}\n{}]", body.join(",\n"), " ".repeat(indent))
}

/// Closed-form CTOU quantities and the two θ̂ candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct CtouReport {
    pub params: CtouParams,
    pub sigma: [f64; 3],
    pub theta_star: (f64, f64),
    pub lambda_p: f64,
    pub lambda_pi: f64,
    pub growth_gap: f64,
    pub growth_star_under_hat: f64,
    pub beta_y: f64,
    /// −½Σ_X⁻¹.
    pub theta_hat_normative: f64,
    /// The printed closed-form coefficient.
    pub theta_hat_literal: f64,
    /// Stationary growth under P* of each candidate.
    pub growth_normative_under_star: f64,
    pub growth_literal_under_star: f64,
    pub lyapunov_star: f64,
    pub lyapunov_hat: f64,
    pub lyapunov_hat_literal: f64,
    pub hat_literal: [f64; 3],
    pub hat_consistent: [f64; 3],
    pub lambda_p_quadrature: f64,
}

impl CtouReport {
    pub fn new(params: &CtouParams) -> Result<Self> {
        let family = Family::ctou(*params)?;
        let Family::Ctou(ctou) = &family else { unreachable!() };
        let model = &ctou.model;
        let sigma = ctou_sigma(params);
        let star = model.worst_case_star();
        let literal = ctou_p_hat_coefficients(params);
        let consistent = ctou_p_hat_consistent(params);
        let ts = model.theta_star();
        let candidate = |g: f64| LinearStrategy { g_x: nalgebra::DMatrix::from_element(1, 1, g), g_y: nalgebra::DMatrix::zeros(1, 1) };
        let inputs = family.inputs()?;
        let quad = lambda_p_quadrature(&inputs, &family.theta_star_strategy())?;
        Ok(Self {
            params: *params,
            sigma: [sigma[(0, 0)], sigma[(0, 1)], sigma[(1, 1)]],
            theta_star: (ts.g_x[(0, 0)], ts.g_y[(0, 0)]),
            lambda_p: model.lambda_p(),
            lambda_pi: model.lambda_pi(),
            growth_gap: model.growth_gap(),
            growth_star_under_hat: model.growth_theta_star_under_hat(),
            beta_y: model.beta_y[(0, 0)],
            theta_hat_normative: consistent.theta_hat,
            theta_hat_literal: literal.theta_hat,
            growth_normative_under_star: star.stationary_growth(&candidate(consistent.theta_hat), &sigma),
            growth_literal_under_star: star.stationary_growth(&candidate(literal.theta_hat), &sigma),
            lyapunov_star: star.lyapunov_residual(&sigma),
            lyapunov_hat: model.worst_case_hat().lyapunov_residual(&sigma),
            lyapunov_hat_literal: literal.lyapunov_residual(params),
            hat_literal: [literal.x_drift, literal.y_drift_x, literal.y_drift_y],
            hat_consistent: [consistent.x_drift, consistent.y_drift_x, consistent.y_drift_y],
            lambda_p_quadrature: quad.value,
        })
    }

    pub fn to_json(&self) -> String {
        let p = self.params;
        JsonObject::new()
            .raw(
                "params",
                JsonObject::new().num("c_x", p.c_x).num("c_y", p.c_y).num("kappa_x", p.kappa_x).num("kappa_y", p.kappa_y).render(2),
            )
            .nums("sigma_xx_xy_yy", &self.sigma)
            .nums("theta_star_x_y", &[self.theta_star.0, self.theta_star.1])
            .num("lambda_p", self.lambda_p)
            .num("lambda_pi", self.lambda_pi)
            .num("growth_gap", self.growth_gap)
            .num("growth_theta_star_under_p_hat", self.growth_star_under_hat)
            .num("beta_y", self.beta_y)
            .num("theta_hat_normative", self.theta_hat_normative)
            .num("theta_hat_literal", self.theta_hat_literal)
            .num("growth_theta_hat_normative_under_p_star", self.growth_normative_under_star)
            .num("growth_theta_hat_literal_under_p_star", self.growth_literal_under_star)
            .nums("p_hat_literal_x_drift_y_drift_x_y_drift_y", &self.hat_literal)
            .nums("p_hat_consistent_x_drift_y_drift_x_y_drift_y", &self.hat_consistent)
            .num("lyapunov_residual_p_star", self.lyapunov_star)
            .num("lyapunov_residual_p_hat", self.lyapunov_hat)
            .num("lyapunov_residual_p_hat_literal", self.lyapunov_hat_literal)
            .num("lambda_p_quadrature", self.lambda_p_quadrature)
            .render(0)
    }
}

/// Strategy names used in the CTOU growth experiment.
pub const THETA_STAR: &str = "theta_star";
pub const THETA_HAT: &str = "theta_hat";
pub const THETA_HAT_LITERAL: &str = "theta_hat_literal";

/// Number of standard errors used for Monte-Carlo agreement.
pub const MC_SE_BAND: f64 = 3.0;

/// Growth samples of the CTOU experiment: θ*, θ̂ and the literal θ̂ under P*,
/// θ* and θ̂ under P^, on common random numbers within each measure.
#[derive(Debug, Clone)]
pub struct CtouGrowthRuns {
    pub report: CtouReport,
    pub star: GrowthReport,
    pub hat: GrowthReport,
}

/// Agreement of one θ̂ candidate with λ_Π under P*.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateOutcome {
    pub coefficient: f64,
    pub mean: f64,
    pub standard_error: f64,
    /// (mean − λ_Π)/SE.
    pub z: f64,
}

impl CandidateOutcome {
    pub fn attains(&self) -> bool {
        self.z.abs() <= MC_SE_BAND
    }
}

pub fn ctou_strategy(name: &str, g_x: f64, g_y: f64) -> StrategyField {
    StrategyField::linear(name, nalgebra::DMatrix::from_element(1, 1, g_x), nalgebra::DMatrix::from_element(1, 1, g_y))
}

pub fn run_ctou_growth(params: &CtouParams, cfg: &SimConfig) -> Result<CtouGrowthRuns> {
    let report = CtouReport::new(params)?;
    let model = crate::pairs::ctou_model(params)?;
    let star_field = ctou_strategy(THETA_STAR, report.theta_star.0, report.theta_star.1);
    let hat_field = ctou_strategy(THETA_HAT, report.theta_hat_normative, 0.0);
    let literal_field = ctou_strategy(THETA_HAT_LITERAL, report.theta_hat_literal, 0.0);
    let hat_dyn = model.worst_case_hat();
    let star = simulate_growth(&DynamicsSpec::gaussian_star(&model)?, &[star_field.clone(), hat_field.clone(), literal_field], cfg)?
        .with_reference(THETA_STAR, report.lambda_p)
        .with_reference(THETA_HAT, report.growth_normative_under_star)
        .with_reference(THETA_HAT_LITERAL, report.growth_literal_under_star);
    let hat = simulate_growth(&DynamicsSpec::gaussian_hat(&model)?, &[star_field, hat_field], cfg)?
        .with_reference(THETA_STAR, report.growth_star_under_hat)
        .with_reference(THETA_HAT, hat_dyn.stationary_growth(&model.theta_hat(), &model.sigma));
    Ok(CtouGrowthRuns { report, star, hat })
}

impl CtouGrowthRuns {
    /// Both measures in one table: `path_id,strategy,measure,T,growth`.
    pub fn to_csv(&self) -> String {
        let mut s = self.star.to_csv();
        s.extend(self.hat.to_csv().lines().skip(1).flat_map(|l| [l, "\n"]));
        s
    }

    /// Growth of each θ̂ candidate under P* at the final horizon against λ_Π.
    pub fn candidates(&self) -> Result<[CandidateOutcome; 2]> {
        let target = self.report.lambda_pi;
        let one = |name: &str, coefficient: f64| -> Result<CandidateOutcome> {
            let g = self.star.final_summary(name)?;
            Ok(CandidateOutcome { coefficient, mean: g.mean, standard_error: g.standard_error, z: (g.mean - target) / g.standard_error })
        };
        Ok([one(THETA_HAT, self.report.theta_hat_normative)?, one(THETA_HAT_LITERAL, self.report.theta_hat_literal)?])
    }

    pub fn verdict(&self) -> Result<String> {
        let c = self.candidates()?;
        let attaining: Vec<String> = c.iter().filter(|c| c.attains()).map(|c| format!("{:.6}", c.coefficient)).collect();
        Ok(match attaining.len() {
            0 => "neither theta^ candidate attains lambda_Pi under P*".to_string(),
            1 => format!("only the theta^ coefficient {} attains lambda_Pi under P*", attaining[0]),
            _ => "both theta^ candidates attain lambda_Pi under P*".to_string(),
        })
    }

    /// Largest |z| over all (measure, strategy) pairs with a reference at the final
    /// horizon, excluding the literal candidate.
    pub fn max_abs_z(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (r, names) in [(&self.star, &[THETA_STAR, THETA_HAT][..]), (&self.hat, &[THETA_STAR, THETA_HAT][..])] {
            for n in names {
                worst = worst.max(r.final_summary(n)?.z_score().unwrap_or(0.0).abs());
            }
        }
        Ok(worst)
    }

    /// Whether each IQR strictly shrinks with the horizon.
    pub fn iqr_shrinks(&self) -> Result<bool> {
        let mut ok = true;
        for r in [&self.star, &self.hat] {
            for n in &r.strategies {
                let v = (0..r.horizons.len()).map(|h| r.summary(n, h).map(|s| s.stats.iqr())).collect::<Result<Vec<_>>>()?;
                ok &= v.windows(2).all(|w| w[1] < w[0]);
            }
        }
        Ok(ok)
    }

    pub fn summary_json(&self) -> Result<String> {
        let candidates: Vec<String> = self
            .candidates()?
            .iter()
            .map(|c| {
                JsonObject::new()
                    .num("coefficient", c.coefficient)
                    .num("mean", c.mean)
                    .num("se", c.standard_error)
                    .num("z_vs_lambda_pi", c.z)
                    .boolean("attains", c.attains())
                    .render(4)
            })
            .collect();
        Ok(JsonObject::new()
            .raw("p_star", self.star.summary_json()?.trim_end().replace('\n', "\n  "))
            .raw("p_hat", self.hat.summary_json()?.trim_end().replace('\n', "\n  "))
            .raw("theta_hat_candidates_under_p_star", json_array(&candidates, 2))
            .text("theta_hat_verdict", &self.verdict()?)
            .boolean("iqr_shrinks", self.iqr_shrinks()?)
            .render(0))
    }
}

/// One named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckOutcome {
    pub fn below(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass: value.is_finite() && value < tolerance, value, tolerance, detail: detail.into() }
    }

    pub fn error(name: &str, e: &Error) -> Self {
        Self { name: name.into(), pass: false, value: f64::NAN, tolerance: f64::NAN, detail: e.to_string() }
    }

    fn json(&self) -> String {
        JsonObject::new()
            .text("name", &self.name)
            .boolean("pass", self.pass)
            .num("value", self.value)
            .num("tolerance", self.tolerance)
            .text("detail", &self.detail)
            .render(4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub subject: String,
    pub checks: Vec<CheckOutcome>,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect()
    }

    pub fn push_result(&mut self, name: &str, r: Result<CheckOutcome>) {
        self.checks.push(r.unwrap_or_else(|e| CheckOutcome::error(name, &e)));
    }

    pub fn to_json(&self) -> String {
        let items: Vec<String> = self.checks.iter().map(|c| c.json()).collect();
        JsonObject::new()
            .text("subject", &self.subject)
            .boolean("pass", self.pass())
            .raw("failed", format!("[{}]", self.failed().iter().map(|s| json_string(s)).collect::<Vec<_>>().join(", ")))
            .raw("checks", json_array(&items, 2))
            .render(0)
    }
}

/// Options of the per-family battery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Constant added to b_Y; nonzero values break compatibility.
    pub b_y_shift: f64,
    pub fd_step: f64,
    pub scheme: FdScheme,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { b_y_shift: 0.0, fd_step: 1e-3, scheme: FdScheme::Richardson }
    }
}

/// Tolerances of the battery.
pub const COMPATIBILITY_TOL: f64 = 1e-6;
pub const DIVERGENCE_TOL: f64 = 1e-5;
pub const EULER_LAGRANGE_TOL: f64 = 1e-4;
pub const GRADIENT_REL_TOL: f64 = 1e-6;
pub const LYAPUNOV_TOL: f64 = 1e-8;

/// Grids used by the battery: (x values, y values) for compatibility and for pointwise checks.
fn check_grids(family: &Family) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    match family {
        Family::StochVol(_) => (linspace(0.005, 0.2, 9), linspace(-1.0, 1.0, 21), linspace(0.0225, 0.0575, 11)),
        Family::TDist(_) => (linspace(-3.0, 3.0, 13), linspace(-3.0, 3.0, 21), linspace(-3.0, 3.0, 11)),
        Family::Ctou(_) => (linspace(-2.0, 2.0, 9), linspace(-3.0, 3.0, 21), linspace(-2.0, 2.0, 11)),
    }
}

/// Relative sup-norm distance max|a − b| / max|b|.
pub fn relative_sup(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Compatibility, divergence, Euler–Lagrange, gradient, symmetry,
/// integrability and (for CTOU) Lyapunov checks.
pub fn run_check(family: &Family, opts: &CheckOptions) -> CheckReport {
    let mut report = CheckReport { subject: family.example().name().to_string(), checks: Vec::new() };
    let base = match family.inputs() {
        Ok(i) => i,
        Err(e) => {
            report.checks.push(CheckOutcome::error("inputs", &e));
            return report;
        }
    };
    let inputs = if opts.b_y_shift != 0.0 {
        let shift = opts.b_y_shift;
        let orig = base.clone();
        base.with_b_y(std::sync::Arc::new(move |z: &[f64], out: &mut [f64]| {
            out.copy_from_slice(orig.b_y_at(z).as_slice());
            out.iter_mut().for_each(|v| *v += shift);
        }))
    } else {
        base
    };
    let (compat_ys, xs, ys) = check_grids(family);
    let grid = grid_2d(&xs, &ys);
    let u = family.u_field();

    report.push_result(
        "compatibility",
        check_compatibility(&inputs, &compat_ys.iter().map(|y| vec![*y]).collect::<Vec<_>>(), COMPATIBILITY_TOL).map(|r| {
            CheckOutcome {
                name: "compatibility".into(),
                pass: r.pass,
                value: r.max_residual,
                tolerance: COMPATIBILITY_TOL,
                detail: if r.reliable { "quadrature settled".into() } else { "quadrature did not settle".into() },
            }
        }),
    );
    report.push_result(
        "divergence",
        divergence_refinement(&u, &inputs, &grid, opts.fd_step, opts.scheme)
            .map(|r| CheckOutcome::below("divergence", r.residual, DIVERGENCE_TOL, format!("h = {}, residual(h/2) = {:e}", r.h, r.residual_half))),
    );
    report.push_result(
        "euler-lagrange",
        euler_lagrange_refinement(&inputs, &family.theta_star_strategy(), &grid, opts.fd_step, opts.scheme).map(|r| {
            let mut c = CheckOutcome::below("euler-lagrange", r.residual, EULER_LAGRANGE_TOL, format!("h = {}, residual(h/2) = {:e}, order = {:.2}", r.h, r.residual_half, r.order));
            // Refinement must not increase the defect unless it is already at round-off.
            c.pass &= r.residual_half <= r.residual || r.residual < 1e-9;
            c
        }),
    );
    report.push_result(
        "gradient",
        (|| {
            let numeric = gradient_strategy(&inputs, &UField::Quadrature)?;
            let closed = family.theta_star_strategy();
            let a: Vec<f64> = grid.iter().map(|z| numeric.eval_scalar(z)).collect();
            let b: Vec<f64> = grid.iter().map(|z| closed.eval_scalar(z)).collect();
            Ok(CheckOutcome::below("gradient", relative_sup(&a, &b), GRADIENT_REL_TOL, "quadrature xi vs closed-form theta*"))
        })(),
    );
    let odd_in_both = !matches!(family, Family::StochVol(_));
    let odd_in_x = matches!(family, Family::StochVol(s) if s.params.rho == 0.0);
    if odd_in_both || odd_in_x {
        report.push_result(
            "symmetry",
            (|| {
                let mut worst: f64 = 0.0;
                for z in &grid {
                    let (x, y) = (z[0], z[1]);
                    let mirror = if odd_in_both { family.theta_star(-x, -y)? } else { family.theta_star(-x, y)? };
                    let scale = family.theta_star(x, y)?.abs().max(1.0);
                    worst = worst.max((family.theta_star(x, y)? + mirror).abs() / scale);
                    worst = worst.max((family.theta_hat(x)? + family.theta_hat(-x)?).abs() / family.theta_hat(x)?.abs().max(1e-300).max(1.0));
                }
                Ok(CheckOutcome::below("symmetry", worst, 1e-12, if odd_in_both { "odd in (x, y)" } else { "odd in x" }))
            })(),
        );
    }
    report.push_result(
        "integrability",
        integrability_report(&inputs, &u).map(|r| CheckOutcome {
            name: "integrability".into(),
            pass: r.finite(),
            value: r.u_integral_widened,
            tolerance: f64::NAN,
            detail: format!(
                "ell: {:e} -> {:e}{}; u: {:e} -> {:e}{}",
                r.ell_integral,
                r.ell_integral_widened,
                if r.ell_diverges { " (diverges)" } else { "" },
                r.u_integral,
                r.u_integral_widened,
                if r.u_diverges { " (diverges)" } else { "" }
            ),
        }),
    );
    if let Family::Ctou(c) = family {
        let sigma = &c.model.sigma;
        let star = c.model.worst_case_star();
        let hat = c.model.worst_case_hat();
        let worst = star.lyapunov_residual(sigma).max(hat.lyapunov_residual(sigma));
        let mut outcome = CheckOutcome::below("lyapunov", worst, LYAPUNOV_TOL, "P* and P^ leave N(0, Sigma) invariant");
        outcome.pass &= star.check_stable().is_ok() && hat.check_stable().is_ok();
        report.checks.push(outcome);
    }
    report
}

/// Check report for a family whose construction failed, e.g. a Feller violation.
pub fn construction_failure(subject: &str, e: &Error) -> CheckReport {
    let name = match e {
        Error::Feller { .. } => "feller",
        _ => "parameters",
    };
    CheckReport { subject: subject.into(), checks: vec![CheckOutcome::error(name, e)] }
}

/// Battery for a user-supplied Gaussian model.
pub fn run_gaussian_check(model: &GaussianModel) -> CheckReport {
    let mut report = CheckReport { subject: format!("gaussian(d={}, m={})", model.d, model.m), checks: Vec::new() };
    match gaussian_suite_row(0, model) {
        Ok(r) => {
            report.checks.push(CheckOutcome::below("compatibility", r.compatibility, COMPATIBILITY_TOL, "x-integral of the flux"));
            report.checks.push(CheckOutcome::below("divergence", r.divergence, DIVERGENCE_TOL, "closed-form u, Richardson h = 1e-3"));
            let mut lyap = CheckOutcome::below("lyapunov", r.lyapunov_star, LYAPUNOV_TOL, "P* leaves N(0, Sigma) invariant");
            lyap.pass &= model.worst_case_star().check_stable().is_ok() && model.worst_case_hat().check_stable().is_ok();
            report.checks.push(lyap);
            report.checks.push(CheckOutcome::below("moments", r.lambda_p_moment_gap, 1e-10, "trace formula vs Gaussian moments"));
        }
        Err(e) => report.checks.push(CheckOutcome::error("gaussian", &e)),
    }
    report
}

/// Per-model results of the random Gaussian suite.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSuiteRow {
    pub index: usize,
    pub d: usize,
    pub m: usize,
    pub compatibility: f64,
    pub divergence: f64,
    pub lyapunov_star: f64,
    pub degenerate_m_y: f64,
    pub degenerate_gap: f64,
    /// |λ_P(trace) − λ_P(moments)|.
    pub lambda_p_moment_gap: f64,
    pub theta_star_asymmetry: f64,
}

impl GaussianSuiteRow {
    pub fn failures(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if !(self.compatibility < COMPATIBILITY_TOL) {
            f.push("compatibility");
        }
        if !(self.divergence < DIVERGENCE_TOL) {
            f.push("divergence");
        }
        if !(self.lyapunov_star < LYAPUNOV_TOL) {
            f.push("lyapunov");
        }
        if !(self.degenerate_m_y < 1e-9 && self.degenerate_gap < 1e-9) {
            f.push("degenerate");
        }
        if !(self.lambda_p_moment_gap < 1e-10) {
            f.push("moments");
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSuite {
    pub seed: u64,
    pub rows: Vec<GaussianSuiteRow>,
}

impl GaussianSuite {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.failures().is_empty())
    }

    pub fn max_of(&self, f: impl Fn(&GaussianSuiteRow) -> f64) -> f64 {
        self.rows.iter().map(f).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,d,m,compatibility,divergence,lyapunov_star,degenerate_m_y,degenerate_gap,lambda_p_moment_gap,theta_star_asymmetry\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.index,
                r.d,
                r.m,
                fmt17(r.compatibility),
                fmt17(r.divergence),
                fmt17(r.lyapunov_star),
                fmt17(r.degenerate_m_y),
                fmt17(r.degenerate_gap),
                fmt17(r.lambda_p_moment_gap),
                fmt17(r.theta_star_asymmetry)
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        let failing: Vec<String> = self
            .rows
            .iter()
            .filter(|r| !r.failures().is_empty())
            .map(|r| format!("{{\"index\": {}, \"failed\": [{}]}}", r.index, r.failures().iter().map(|s| json_string(s)).collect::<Vec<_>>().join(", ")))
            .collect();
        JsonObject::new()
            .int("seed", self.seed as i64)
            .int("models", self.rows.len() as i64)
            .boolean("pass", self.pass())
            .num("max_compatibility", self.max_of(|r| r.compatibility))
            .num("max_divergence", self.max_of(|r| r.divergence))
            .num("max_lyapunov_star", self.max_of(|r| r.lyapunov_star))
            .num("max_degenerate_m_y", self.max_of(|r| r.degenerate_m_y))
            .num("max_degenerate_gap", self.max_of(|r| r.degenerate_gap))
            .num("max_lambda_p_moment_gap", self.max_of(|r| r.lambda_p_moment_gap))
            .num("max_theta_star_asymmetry", self.max_of(|r| r.theta_star_asymmetry))
            .raw("failing", json_array(&failing, 2))
            .render(0)
    }
}

/// Checks one model; grid points are multiples of the marginal standard deviations.
pub fn gaussian_suite_row(index: usize, model: &GaussianModel) -> Result<GaussianSuiteRow> {
    let inputs = model.inputs()?;
    let n = model.n();
    let sd: Vec<f64> = (0..n).map(|k| model.sigma[(k, k)].sqrt()).collect();
    // Off-centre y point; y = 0 is degenerate for odd integrands.
    let y_points: Vec<Vec<f64>> = vec![(0..model.m).map(|j| 0.7 * sd[model.d + j]).collect()];
    let compat = check_compatibility(&inputs, &y_points, COMPATIBILITY_TOL)?;
    let grid: Vec<Vec<f64>> = [-1.0, 0.3, 1.2]
        .iter()
        .flat_map(|&a| [-0.8, 0.5].iter().map(move |&b| (a, b)))
        .map(|(a, b)| (0..n).map(|k| if k < model.d { a * sd[k] } else { b * sd[k] }).collect())
        .collect();
    let div = crate::inputs::verify_divergence(&model.u_field(), &inputs, &grid, 1e-3, FdScheme::Richardson)?;
    let deg = model.rebuild_with_beta_x(model.degenerate_beta_x())?;
    let lp = model.lambda_p();
    Ok(GaussianSuiteRow {
        index,
        d: model.d,
        m: model.m,
        compatibility: if compat.reliable { compat.max_residual } else { f64::INFINITY },
        divergence: div,
        lyapunov_star: model.worst_case_star().lyapunov_residual(&model.sigma),
        degenerate_m_y: deg.m_y.amax(),
        degenerate_gap: deg.growth_gap().abs(),
        lambda_p_moment_gap: (lp - model.lambda_p_moments()).abs() / lp.abs().max(1.0),
        theta_star_asymmetry: model.theta_star_asymmetry(),
    })
}

/// `count` random models with d, m ∈ {1, 2, 3}.
pub fn run_gaussian_suite(count: usize, seed: u64) -> Result<GaussianSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models: Vec<GaussianModel> = (0..count)
        .map(|_| {
            let d = rng.random_range(1..=3);
            let m = rng.random_range(1..=3);
            GaussianModel::random(d, m, &mut rng)
        })
        .collect::<Result<_>>()?;
    use rayon::prelude::*;
    let rows = models.par_iter().enumerate().map(|(i, m)| gaussian_suite_row(i, m)).collect::<Result<Vec<_>>>()?;
    Ok(GaussianSuite { seed, rows })
}
