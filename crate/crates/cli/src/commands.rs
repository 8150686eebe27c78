//! Subcommand bodies. Each returns its artifacts and the names of failed checks.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use robust_growth::gaussian::{GaussianModel, LinearStrategy};
use robust_growth::pairs::{ctou_model, slice_table, CtouParams, Family};
use robust_growth::report::{
    construction_failure, run_check, run_ctou_growth, run_gaussian_check, run_gaussian_suite, CheckOptions,
    CheckReport, CtouReport, LYAPUNOV_TOL, THETA_HAT_LITERAL,
};
use robust_growth::sim::{simulate_growth, DynamicsSpec};
use robust_growth::slice::growth_functional;
use robust_growth::strategy::StrategyField;
use robust_growth::Error;

use crate::config::{ExampleChoice, Measure, RunConfig};
use crate::CliError;

/// Relative agreement required between quadrature and closed-form λ_P.
const LAMBDA_P_QUADRATURE_TOL: f64 = 1e-6;

pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self { name: name.into(), bytes: text.into().into_bytes() }
    }
}

#[derive(Default)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    /// Names of failed checks; non-empty means exit code 1.
    pub failed: Vec<String>,
    /// Human-readable summary lines for stdout.
    pub lines: Vec<String>,
}

fn family(cfg: &RunConfig) -> Result<Family, Error> {
    match cfg.example {
        ExampleChoice::Ctou => Family::ctou(cfg.ctou),
        ExampleChoice::Tdist => Family::tdist(cfg.tdist),
        ExampleChoice::Stochvol => Family::stochvol(cfg.stochvol),
        ExampleChoice::Custom => Err(Error::Unsupported("the custom example has no pairs-trading family".into())),
    }
}

fn custom_model(cfg: &RunConfig) -> Result<GaussianModel, CliError> {
    let path = cfg.model.as_deref().ok_or_else(|| CliError::Config("example 'custom' needs --model FILE".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read model {path}: {e}")))?;
    Ok(GaussianModel::from_toml(&text)?)
}

pub fn ctou_report(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let report = CtouReport::new(&cfg.ctou)?;
    let mut out = RunOutput::default();
    out.artifacts.push(Artifact::new("ctou_report.json", report.to_json() + "\n"));
    out.lines.push(format!(
        "lambda_P = {:.7}, lambda_Pi = {:.7}, gap = {:.7}, g(theta*; P^) = {:.7}",
        report.lambda_p, report.lambda_pi, report.growth_gap, report.growth_star_under_hat
    ));
    out.lines.push(format!(
        "theta^ candidates: {:.6} (growth under P* {:.6}), {:.6} (growth under P* {:.6})",
        report.theta_hat_normative, report.growth_normative_under_star, report.theta_hat_literal, report.growth_literal_under_star
    ));
    if !(report.lyapunov_star < LYAPUNOV_TOL && report.lyapunov_hat < LYAPUNOV_TOL) {
        out.failed.push("lyapunov".into());
    }
    if !((report.lambda_p_quadrature - report.lambda_p).abs() <= LAMBDA_P_QUADRATURE_TOL * report.lambda_p.abs()) {
        out.failed.push("lambda-p-quadrature".into());
    }
    if cfg.report.simulate {
        let runs = run_ctou_growth(&cfg.ctou, &cfg.sim_config())?;
        out.artifacts.push(Artifact::new("ctou_growth.csv", runs.to_csv()));
        out.artifacts.push(Artifact::new("ctou_growth_summary.json", runs.summary_json()? + "\n"));
        for c in runs.candidates()? {
            out.lines.push(format!(
                "theta^ = {:.6} x under P*: growth {:.6} +/- {:.6}, z vs lambda_Pi = {:.2}",
                c.coefficient, c.mean, c.standard_error, c.z
            ));
        }
        out.lines.push(runs.verdict()?);
    }
    Ok(out)
}

pub fn gaussian_suite(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let suite = run_gaussian_suite(cfg.suite.count, cfg.seed)?;
    let failed: BTreeSet<String> = suite.rows.iter().flat_map(|r| r.failures()).map(String::from).collect();
    Ok(RunOutput {
        artifacts: vec![Artifact::new("gaussian_suite.csv", suite.to_csv()), Artifact::new("gaussian_suite.json", suite.to_json() + "\n")],
        failed: failed.into_iter().collect(),
        lines: vec![format!(
            "{} models (seed {}): {} failing",
            suite.rows.len(),
            suite.seed,
            suite.rows.iter().filter(|r| !r.failures().is_empty()).count()
        )],
    })
}

pub fn slices(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let f = family(cfg)?;
    let ys = f.default_y_values();
    let table = slice_table(&f, &f.default_x_grid(), &ys)?;
    let name = format!("slices_{}.csv", cfg.example.name());
    Ok(RunOutput {
        lines: vec![format!("{} y-slices in [{}, {}] -> {name}", ys.len(), ys[0], ys[ys.len() - 1])],
        artifacts: vec![Artifact::new(name, table.to_csv())],
        failed: Vec::new(),
    })
}

/// A requested strategy with its analytic growth under the simulated measure, if known.
struct Planned {
    field: StrategyField,
    reference: Option<f64>,
}

fn renamed(mut f: StrategyField, name: &str) -> StrategyField {
    f.name = name.to_string();
    f
}

fn unknown_strategy(name: &str, allowed: &str) -> CliError {
    CliError::Config(format!("unknown strategy '{name}' (expected one of {allowed})"))
}

fn plan_gaussian(cfg: &RunConfig, model: &GaussianModel, ctou: Option<&CtouParams>) -> Result<(DynamicsSpec, Vec<Planned>), CliError> {
    let (spec, dynamics) = match cfg.simulate.measure {
        Measure::Star => (DynamicsSpec::gaussian_star(model)?, model.worst_case_star()),
        Measure::Hat => (DynamicsSpec::gaussian_hat(model)?, model.worst_case_hat()),
    };
    let literal = ctou.map(|p| robust_growth::pairs::ctou_p_hat_coefficients(p).theta_hat);
    let mut plan = Vec::new();
    for name in &cfg.simulate.strategies {
        let linear = match name.as_str() {
            "theta_star" => model.theta_star(),
            "theta_hat" => model.theta_hat(),
            THETA_HAT_LITERAL if literal.is_some() => {
                LinearStrategy { g_x: DMatrix::from_element(1, 1, literal.unwrap()), g_y: DMatrix::zeros(1, 1) }
            }
            "zero" => LinearStrategy { g_x: DMatrix::zeros(model.d, model.d), g_y: DMatrix::zeros(model.d, model.m) },
            other => {
                let allowed = if literal.is_some() { "theta_star, theta_hat, theta_hat_literal, zero" } else { "theta_star, theta_hat, zero" };
                return Err(unknown_strategy(other, allowed));
            }
        };
        let reference = Some(dynamics.stationary_growth(&linear, &model.sigma));
        plan.push(Planned { field: linear.to_field(name), reference });
    }
    Ok((spec, plan))
}

fn plan_family(cfg: &RunConfig, f: &Family, notes: &mut Vec<String>) -> Result<(DynamicsSpec, Vec<Planned>), CliError> {
    if cfg.simulate.measure == Measure::Hat {
        return Err(CliError::Config(format!("measure 'hat' is available for Gaussian examples only, not '{}'", cfg.example.name())));
    }
    let spec = match f {
        Family::TDist(t) => DynamicsSpec::tdist_star(t),
        Family::StochVol(s) => DynamicsSpec::stochvol_star(s),
        Family::Ctou(_) => unreachable!("CTOU is simulated through its Gaussian model"),
    };
    let inputs = f.inputs()?;
    let u = f.u_field();
    let mut plan = Vec::new();
    for name in &cfg.simulate.strategies {
        let field = match name.as_str() {
            "theta_star" => {
                if matches!(f, Family::StochVol(_)) {
                    notes.push("note: lambda_P diverges for stochvol; theta_star growth samples do not estimate a finite rate".into());
                }
                renamed(f.theta_star_strategy(), name)
            }
            "theta_hat" => renamed(f.theta_hat_sim_strategy()?, name),
            "zero" => StrategyField::zero(1),
            other => return Err(unknown_strategy(other, "theta_star, theta_hat, zero")),
        };
        // Stochastic volatility: λ_P diverges and θ̂ has no closed form, so no reference.
        let reference = match f {
            Family::TDist(_) => match growth_functional(&inputs, &u, &field) {
                Ok(q) if q.reliable() => Some(q.value),
                _ => None,
            },
            _ => None,
        };
        plan.push(Planned { field, reference });
    }
    Ok((spec, plan))
}

pub fn simulate(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let sim = cfg.sim_config();
    sim.validate()?;
    if cfg.simulate.strategies.is_empty() {
        return Err(CliError::Config("at least one strategy is required".into()));
    }
    let mut out = RunOutput::default();
    let (spec, plan) = match cfg.example {
        ExampleChoice::Ctou => plan_gaussian(cfg, &ctou_model(&cfg.ctou)?, Some(&cfg.ctou))?,
        ExampleChoice::Custom => plan_gaussian(cfg, &custom_model(cfg)?, None)?,
        _ => plan_family(cfg, &family(cfg)?, &mut out.lines)?,
    };
    let fields: Vec<StrategyField> = plan.iter().map(|p| p.field.clone()).collect();
    let mut report = simulate_growth(&spec, &fields, &sim)?;
    for p in &plan {
        if let Some(r) = p.reference {
            report = report.with_reference(&p.field.name, r);
        }
    }
    let stem = format!("growth_{}_{}", cfg.example.name(), cfg.simulate.measure.name());
    for p in &plan {
        let g = report.final_summary(&p.field.name)?;
        let reference = match (g.reference, g.z_score()) {
            (Some(r), Some(z)) => format!(", reference {r:.6}, z = {z:.2}"),
            _ => String::new(),
        };
        out.lines.push(format!("{} under {}: T = {} growth {:.6} +/- {:.6}{reference}", g.strategy, spec.name, g.horizon, g.mean, g.standard_error));
    }
    if report.flagged > 0 {
        out.lines.push(format!("{} of {} paths flagged and excluded", report.flagged, report.n_paths));
    }
    out.artifacts.push(Artifact::new(format!("{stem}.csv"), report.to_csv()));
    out.artifacts.push(Artifact::new(format!("{stem}_summary.json"), report.summary_json()?));
    Ok(out)
}

fn describe(report: &CheckReport) -> Vec<String> {
    report
        .checks
        .iter()
        .map(|c| {
            let tol = if c.tolerance.is_finite() { format!(" (tol {:e})", c.tolerance) } else { String::new() };
            format!("{:<15} {} {:e}{tol} {}", c.name, if c.pass { "PASS" } else { "FAIL" }, c.value, c.detail)
        })
        .collect()
}

pub fn check(cfg: &RunConfig) -> Result<RunOutput, CliError> {
    let report = match cfg.example {
        ExampleChoice::Custom => {
            if cfg.check.b_y_shift != 0.0 {
                return Err(CliError::Config("b_y_shift applies to the pairs-trading examples only".into()));
            }
            run_gaussian_check(&custom_model(cfg)?)
        }
        ex => match family(cfg) {
            Ok(f) => run_check(&f, &CheckOptions { b_y_shift: cfg.check.b_y_shift, ..CheckOptions::default() }),
            Err(e @ Error::Feller { .. }) => construction_failure(ex.name(), &e),
            Err(e) => return Err(e.into()),
        },
    };
    Ok(RunOutput {
        artifacts: vec![Artifact::new(format!("check_{}.json", cfg.example.name()), report.to_json() + "\n")],
        failed: report.failed().into_iter().map(String::from).collect(),
        lines: describe(&report),
    })
}
