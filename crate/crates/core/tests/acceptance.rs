//! End-to-end acceptance run: one pass/fail line per criterion.
//! Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use robust_growth::inputs::{check_compatibility, grid_2d, linspace, solve_u_1d, FdScheme};
use robust_growth::pairs::{CtouParams, Example, Family, StochVol, StochVolParams, TDist, TDistParams};
use robust_growth::report::{run_ctou_growth, run_gaussian_suite, CtouGrowthRuns, CtouReport, THETA_HAT, THETA_STAR};
use robust_growth::sim::{simulate_ergodic_averages, DynamicsSpec, Observable, SimConfig};
use robust_growth::slice::euler_lagrange_refinement;
use robust_growth::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn ctou_family() -> Family {
    Family::ctou(CtouParams::default()).expect("default CTOU parameters are valid")
}

fn criterion_1() -> Result<Outcome, Error> {
    let r = CtouReport::new(&CtouParams::default())?;
    let checks = [
        ("lambda_P", r.lambda_p, 0.34375),
        ("lambda_Pi", r.lambda_pi, 1.0 / 7.0),
        ("gap", r.growth_gap, 0.34375 - 1.0 / 7.0),
        ("g(theta*;P^)", r.growth_star_under_hat, -0.05803571428571429),
    ];
    let pass = checks.iter().all(|(_, v, t)| close(*v, *t, 1e-9));
    let detail = checks.iter().map(|(n, v, _)| format!("{n}={v:.10}")).collect::<Vec<_>>().join(" ");
    Ok(outcome(pass, detail))
}

fn criterion_2(runs: &CtouGrowthRuns) -> Result<Outcome, Error> {
    let a = runs.star.final_summary(THETA_STAR)?;
    let b = runs.hat.final_summary(THETA_HAT)?;
    let c = runs.hat.final_summary(THETA_STAR)?;
    // The gap compares two independent runs.
    let gap = a.mean - b.mean;
    let gap_se = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
    let gap_z = (gap - runs.report.growth_gap) / gap_se;
    let z = [a.z_score().unwrap(), b.z_score().unwrap(), gap_z, c.z_score().unwrap()];
    let mut iqrs = Vec::new();
    for (report, name) in [(&runs.star, THETA_STAR), (&runs.hat, THETA_HAT), (&runs.hat, THETA_STAR)] {
        let v: Vec<f64> = (0..report.horizons.len()).map(|h| report.summary(name, h).map(|s| s.stats.iqr())).collect::<Result<_, _>>()?;
        iqrs.push(format!("[{}]", v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(",")));
    }
    let iqr_ok = runs.iqr_shrinks()?;
    let pass = z.iter().all(|z| z.abs() <= 3.0) && iqr_ok && runs.star.flagged == 0 && runs.hat.flagged == 0;
    Ok(outcome(
        pass,
        format!(
            "means {:.5}/{:.5}/{:.5}/{:.5}, z = {:.2}/{:.2}/{:.2}/{:.2}, IQR(10,20,30) {}",
            a.mean, b.mean, gap, c.mean, z[0], z[1], z[2], z[3], iqrs.join(" ")
        ),
    ))
}

fn criterion_3() -> Result<Outcome, Error> {
    let family = ctou_family();
    let Family::Ctou(ctou) = &family else { unreachable!() };
    let s = ctou.model.theta_star();
    let (gx, gy) = (s.g_x[(0, 0)], s.g_y[(0, 0)]);
    let pass = close(gx, -25.0, 1e-12) && close(gy, 25.0, 1e-12);
    Ok(outcome(pass, format!("theta* = ({gx:.14}) x + ({gy:.14}) y")))
}

fn criterion_4() -> Result<Outcome, Error> {
    let suite = run_gaussian_suite(200, 7)?;
    let failing = suite.rows.iter().filter(|r| !r.failures().is_empty()).count();
    Ok(outcome(
        suite.pass(),
        format!(
            "{} models, {} failing; max compat {:.1e}, div {:.1e}, lyap {:.1e}, degenerate M_Y {:.1e} gap {:.1e}, moments {:.1e}",
            suite.rows.len(),
            failing,
            suite.max_of(|r| r.compatibility),
            suite.max_of(|r| r.divergence),
            suite.max_of(|r| r.lyapunov_star),
            suite.max_of(|r| r.degenerate_m_y),
            suite.max_of(|r| r.degenerate_gap),
            suite.max_of(|r| r.lambda_p_moment_gap)
        ),
    ))
}

fn criterion_5() -> Result<Outcome, Error> {
    let sv = StochVol::new(StochVolParams::default())?;
    let limit = sv.theta_hat_limit();
    let ts = sv.theta_star(0.1, 0.04)?;
    let feller = matches!(StochVol::new(StochVolParams { sigma: 0.7, ..StochVolParams::default() }), Err(Error::Feller { .. }));
    let pass = close(sv.alpha, 10.0 / 9.0, 1e-5)
        && close(sv.beta, 250.0 / 9.0, 1e-4)
        && close(limit.abs(), 0.005963, 5e-7)
        && close(ts, 6.484375, 1e-3)
        && ts > 0.0
        && feller;
    Ok(outcome(
        pass,
        format!("alpha={:.5} beta={:.4} |theta^| limit={limit:.7} theta*(0.1,0.04)={ts:.4} feller rejects sigma=0.7: {feller}", sv.alpha, sv.beta),
    ))
}

fn criterion_6() -> Result<Outcome, Error> {
    let t = TDist::new(TDistParams::default())?;
    let inputs = t.inputs()?;
    let ys: Vec<Vec<f64>> = linspace(-3.0, 3.0, 13).into_iter().map(|y| vec![y]).collect();
    let compat = check_compatibility(&inputs, &ys, 1e-6)?;
    // u against cumulative quadrature, differenced from the grid's left end.
    let xs = linspace(-4.0, 4.0, 81);
    let mut u_err: f64 = 0.0;
    for y in [-2.0, -0.5, 0.1, 1.5] {
        let cum = solve_u_1d(&inputs, &[y], &xs)?;
        let u0 = t.u(xs[0], y);
        for (x, c) in xs.iter().zip(&cum) {
            u_err = u_err.max((t.u(*x, y) - u0 - c).abs());
        }
    }
    let (peak_x, peak) = t.theta_hat_peak();
    let mut asym: f64 = 0.0;
    for z in grid_2d(&linspace(-3.0, 3.0, 101), &linspace(-3.0, 3.0, 11)) {
        let (x, y) = (z[0], z[1]);
        asym = asym.max((t.theta_star(x, y) + t.theta_star(-x, -y)).abs());
        asym = asym.max((t.theta_hat(x) + t.theta_hat(-x)).abs());
    }
    let pass = compat.pass && u_err < 1e-5 && close(peak.abs(), 3.0861, 5e-5) && close(peak_x.abs(), 0.32404, 5e-6) && asym < 1e-12;
    Ok(outcome(
        pass,
        format!("compat {:.1e}, u error {u_err:.1e}, theta^ peak {:.5} at x = {:.5}, max odd defect {asym:.1e}", compat.max_residual, peak.abs(), peak_x.abs()),
    ))
}

fn observable(f: fn(&[f64]) -> f64) -> Observable {
    Arc::new(f)
}

fn criterion_7() -> Result<Outcome, Error> {
    let cfg = SimConfig { t: 200.0, n_paths: 200, checkpoints: vec![], ..SimConfig::default() };
    let family = ctou_family();
    let Family::Ctou(ctou) = &family else { unreachable!() };
    let sig = &ctou.model.sigma;
    let ctou_rows = simulate_ergodic_averages(
        &DynamicsSpec::gaussian_star(&ctou.model)?,
        &cfg,
        &[
            ("x^2".into(), observable(|z| z[0] * z[0]), sig[(0, 0)]),
            ("y^2".into(), observable(|z| z[1] * z[1]), sig[(1, 1)]),
            ("xy".into(), observable(|z| z[0] * z[1]), sig[(0, 1)]),
        ],
    )?;
    let sv = StochVol::new(StochVolParams::default())?;
    let sv_rows = simulate_ergodic_averages(&DynamicsSpec::stochvol_star(&sv), &cfg, &[("y".into(), observable(|z| z[1]), sv.params.nu)])?;
    let rows: Vec<_> = ctou_rows.iter().chain(&sv_rows).collect();
    let pass = rows.iter().all(|r| r.within(3.0));
    let detail = rows.iter().map(|r| format!("{}={:.5} (z={:.2})", r.name, r.time_average, r.deviation_se)).collect::<Vec<_>>().join(" ");
    Ok(outcome(pass, detail))
}

fn criterion_8() -> Result<Outcome, Error> {
    let mut pass = true;
    let mut parts = Vec::new();
    for example in Example::ALL {
        let family = Family::default_for(example)?;
        let inputs = family.inputs()?;
        let (xs, ys) = match example {
            Example::Stochvol => (linspace(-1.0, 1.0, 21), linspace(0.0225, 0.0575, 11)),
            _ => (linspace(-3.0, 3.0, 21), linspace(-3.0, 3.0, 11)),
        };
        let r = euler_lagrange_refinement(&inputs, &family.theta_star_strategy(), &grid_2d(&xs, &ys), 1e-3, FdScheme::Richardson)?;
        // Decay of at least second order unless already at round-off.
        let ok = r.residual < 1e-4 && (r.order >= 1.8 || r.residual_half < 1e-10);
        pass &= ok;
        parts.push(format!("{}: {:.1e} -> {:.1e} (order {:.2})", example.name(), r.residual, r.residual_half, r.order));
    }
    Ok(outcome(pass, parts.join(", ")))
}

fn criterion_9(runs: &CtouGrowthRuns) -> Result<Outcome, Error> {
    let lines: Vec<String> = runs
        .candidates()?
        .iter()
        .map(|c| format!("coef {:.4}: growth {:.5} +/- {:.5} (z vs 1/7 = {:.1})", c.coefficient, c.mean, c.standard_error, c.z))
        .collect();
    // Satisfied by producing discriminating evidence.
    Ok(outcome(true, format!("{}; {}", lines.join("; "), runs.verdict()?)))
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: usize, label: &str, r: Result<Outcome, Error>, started: Instant| {
        let o = r.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        all &= o.pass;
        println!("criterion {n} [{}] {label}: {} ({:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail, started.elapsed().as_secs_f64());
    };
    let t = Instant::now();
    report(1, "CTOU analytic identities", criterion_1(), t);
    let t = Instant::now();
    report(3, "theta* equals the CTOU strategy", criterion_3(), t);
    let t = Instant::now();
    report(5, "stochastic volatility", criterion_5(), t);
    let t = Instant::now();
    report(6, "t-distribution", criterion_6(), t);
    let t = Instant::now();
    report(8, "Euler-Lagrange residuals", criterion_8(), t);
    let t = Instant::now();
    report(4, "Gaussian property suite", criterion_4(), t);
    let t = Instant::now();
    match run_ctou_growth(&CtouParams::default(), &SimConfig::default()) {
        Ok(f) => {
            report(2, "CTOU Monte Carlo", criterion_2(&f), t);
            report(9, "theta^ candidates under P*", criterion_9(&f), t);
        }
        Err(e) => {
            report(2, "CTOU Monte Carlo", Ok(outcome(false, format!("error: {e}"))), t);
            report(9, "theta^ candidates under P*", Ok(outcome(false, format!("error: {e}"))), t);
        }
    }
    let t = Instant::now();
    report(7, "ergodic averages", criterion_7(), t);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
