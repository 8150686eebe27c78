//! Monte-Carlo engine: Euler-type simulation of Z = (X, Y), log-wealth of
//! feedback strategies along common paths, and ergodic time averages.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianModel, LinearDynamics};
use crate::linalg;
use crate::pairs::{StochVol, TDist};
use crate::strategy::StrategyField;

/// Floor applied to guarded (positive) coordinates after each step.
pub const GUARD_FLOOR: f64 = 1e-12;
/// Largest tolerated fraction of flagged paths.
pub const MAX_FLAGGED_FRACTION: f64 = 1e-3;

/// Writes the drift at z.
pub type DriftFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Writes a row-major n×n factor L(z) with L Lᵀ = c(z).
pub type DiffusionFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
/// Draws a state from the invariant law.
pub type SamplerFn = Arc<dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync>;
/// Scalar observable h(z).
pub type Observable = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyama,
    /// Drift and diffusion read guarded coordinates at max(y, 0); results are
    /// floored at GUARD_FLOOR. Asset drifts are tamed: b/(1 + dt|b|).
    FullTruncation,
}

/// SDE coefficients for dZ = drift(Z) dt + L(Z) dW.
#[derive(Clone)]
pub struct DynamicsSpec {
    pub name: String,
    pub d: usize,
    pub m: usize,
    pub drift: DriftFn,
    pub diffusion_factor: DiffusionFn,
    /// Lower bound per coordinate, None if unguarded.
    pub guards: Vec<Option<f64>>,
    pub scheme: Scheme,
    pub stationary: Option<SamplerFn>,
    pub stationary_mean: Vec<f64>,
}

impl std::fmt::Debug for DynamicsSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DynamicsSpec")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("guards", &self.guards)
            .field("scheme", &self.scheme)
            .field("stationary_mean", &self.stationary_mean)
            .finish()
    }
}

impl DynamicsSpec {
    pub fn n(&self) -> usize {
        self.d + self.m
    }

    /// Max |L Lᵀ − c| over the given points.
    pub fn factor_defect(&self, c: impl Fn(&[f64]) -> DMatrix<f64>, points: &[Vec<f64>]) -> f64 {
        let n = self.n();
        let mut buf = vec![0.0; n * n];
        points
            .iter()
            .map(|z| {
                (self.diffusion_factor)(z, &mut buf);
                let l = DMatrix::from_row_slice(n, n, &buf);
                (&l * l.transpose() - c(z)).amax()
            })
            .fold(0.0, f64::max)
    }

    /// Linear dynamics dZ = KZ dt + c^{1/2} dW with invariant law N(0, Σ).
    pub fn linear(name: impl Into<String>, dynamics: &LinearDynamics, sigma: &DMatrix<f64>, d: usize) -> Result<Self> {
        dynamics.check_stable()?;
        let n = dynamics.k.nrows();
        let k: Vec<f64> = dynamics.k.transpose().iter().copied().collect();
        let l: Vec<f64> = linalg::sym_sqrt(&dynamics.c)?.transpose().iter().copied().collect();
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite { what: "Sigma".into(), min_eigenvalue: linalg::min_eigenvalue(sigma) })?
            .l();
        Ok(Self {
            name: name.into(),
            d,
            m: n - d,
            drift: Arc::new(move |z, out| {
                for i in 0..n {
                    out[i] = (0..n).map(|j| k[i * n + j] * z[j]).sum();
                }
            }),
            diffusion_factor: Arc::new(move |_, out| out.copy_from_slice(&l)),
            guards: vec![None; n],
            scheme: Scheme::EulerMaruyama,
            stationary: Some(Arc::new(move |rng| {
                let e = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                (&chol * e).iter().copied().collect()
            })),
            stationary_mean: vec![0.0; n],
        })
    }

    /// P* of a Gaussian model.
    pub fn gaussian_star(model: &GaussianModel) -> Result<Self> {
        Self::linear("P*", &model.worst_case_star(), &model.sigma, model.d)
    }

    /// P̂ of a Gaussian model.
    pub fn gaussian_hat(model: &GaussianModel) -> Result<Self> {
        Self::linear("P^", &model.worst_case_hat(), &model.sigma, model.d)
    }

    /// P* of the stochastic-volatility family: dX = Yθ*(X, Y) dt + √Y dW_X,
    /// dY = κ(ν − Y) dt + σ√Y dW_Y with correlation ρ.
    pub fn stochvol_star(sv: &StochVol) -> Self {
        let s = *sv;
        let (kappa, nu, sigma, rho) = (s.params.kappa, s.params.nu, s.params.sigma, s.params.rho);
        let rho_c = (1.0 - rho * rho).sqrt();
        let (alpha, beta) = (s.alpha, s.beta);
        Self {
            name: "P*".into(),
            d: 1,
            m: 1,
            drift: Arc::new(move |z, out| {
                let y = z[1].max(GUARD_FLOOR);
                out[0] = y * s.theta_star(z[0], y).unwrap_or(f64::NAN);
                out[1] = kappa * (nu - z[1].max(0.0));
            }),
            // Cholesky factor of y·[[1, ρσ], [ρσ, σ²]].
            diffusion_factor: Arc::new(move |z, out| {
                let r = z[1].max(0.0).sqrt();
                out.copy_from_slice(&[r, 0.0, r * rho * sigma, r * sigma * rho_c]);
            }),
            guards: vec![None, Some(0.0)],
            scheme: Scheme::FullTruncation,
            stationary: Some(Arc::new(move |rng| {
                let y: f64 = Gamma::new(alpha, 1.0 / beta).expect("valid gamma").sample(rng);
                let y = y.max(GUARD_FLOOR);
                let x = y.sqrt() * rng.sample::<f64, _>(StandardNormal);
                vec![x, y]
            })),
            stationary_mean: vec![0.0, nu],
        }
    }

    /// P* of the bivariate-t family: dX = c_Xθ* dt, dY = c_Y b_Y dt, constant c.
    pub fn tdist_star(t: &TDist) -> Self {
        let t = *t;
        let (cx, cy) = (t.params.c_x, t.params.c_y);
        Self {
            name: "P*".into(),
            d: 1,
            m: 1,
            drift: Arc::new(move |z, out| {
                out[0] = cx * t.theta_star(z[0], z[1]);
                out[1] = cy * t.b_y(z[1]);
            }),
            diffusion_factor: Arc::new(move |_, out| out.copy_from_slice(&[cx.sqrt(), 0.0, 0.0, cy.sqrt()])),
            guards: vec![None, None],
            scheme: Scheme::EulerMaruyama,
            stationary: Some(Arc::new(move |rng| {
                let (x, y) = t.sample(rng);
                vec![x, y]
            })),
            stationary_mean: vec![0.0, 0.0],
        }
    }
}

/// One full-truncation Euler step of a positive factor, floored at GUARD_FLOOR.
/// `drift_value` and `vol_value` must already be evaluated at max(y, 0).
pub fn cir_guarded_step(y: f64, drift_value: f64, vol_value: f64, dw: f64, dt: f64) -> f64 {
    (y + drift_value * dt + vol_value * dw).max(GUARD_FLOOR)
}

/// Where paths start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    /// A fresh draw from the invariant law per path.
    Stationary,
    StationaryMean,
    Point(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Horizon in years.
    pub t: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub initial: InitialState,
    /// Horizons at which growth is recorded; empty means [t].
    #[serde(default)]
    pub checkpoints: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { t: 30.0, dt: 1e-3, n_paths: 10_000, seed: 20_240_901, initial: InitialState::Stationary, checkpoints: vec![10.0, 20.0, 30.0] }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter { name: "dt", value: self.dt, reason: "must be positive" });
        }
        if !(self.t >= self.dt && self.t.is_finite()) {
            return Err(Error::InvalidParameter { name: "T", value: self.t, reason: "must be at least dt" });
        }
        if self.n_paths == 0 {
            return Err(Error::InvalidParameter { name: "n_paths", value: 0.0, reason: "must be at least 1" });
        }
        for &c in &self.checkpoints {
            if !(c >= self.dt && c <= self.t * (1.0 + 1e-12)) {
                return Err(Error::InvalidParameter { name: "checkpoints", value: c, reason: "must lie in [dt, T]" });
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t / self.dt).round() as usize
    }

    /// Checkpoint horizons with their step indices.
    pub fn checkpoint_steps(&self) -> Vec<(f64, usize)> {
        let cps = if self.checkpoints.is_empty() { vec![self.t] } else { self.checkpoints.clone() };
        cps.into_iter().map(|c| (c, ((c / self.dt).round() as usize).max(1))).collect()
    }
}

/// Per-path RNG: ChaCha8 keyed by the seed, stream = path index.
pub fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn initial_state(spec: &DynamicsSpec, init: &InitialState, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let z = match init {
        InitialState::Stationary => {
            let s = spec
                .stationary
                .as_ref()
                .ok_or_else(|| Error::Unsupported(format!("{} has no stationary sampler", spec.name)))?;
            s(rng)
        }
        InitialState::StationaryMean => spec.stationary_mean.clone(),
        InitialState::Point(p) => p.clone(),
    };
    if z.len() != spec.n() {
        return Err(Error::DimensionMismatch(format!("initial state of length {} for n = {}", z.len(), spec.n())));
    }
    Ok(z)
}

/// Reusable buffers for stepping.
struct Stepper<'a> {
    spec: &'a DynamicsSpec,
    dt: f64,
    sqrt_dt: f64,
    eval_z: Vec<f64>,
    drift: Vec<f64>,
    factor: Vec<f64>,
    dw: Vec<f64>,
    dz: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a DynamicsSpec, dt: f64) -> Self {
        let n = spec.n();
        Self {
            spec,
            dt,
            sqrt_dt: dt.sqrt(),
            eval_z: vec![0.0; n],
            drift: vec![0.0; n],
            factor: vec![0.0; n * n],
            dw: vec![0.0; n],
            dz: vec![0.0; n],
        }
    }

    /// Advances z in place; the increment is left in `dz`, the factor at the
    /// start point in `factor`.
    fn step(&mut self, z: &mut [f64], rng: &mut ChaCha8Rng) {
        let n = z.len();
        let spec = self.spec;
        self.eval_z.copy_from_slice(z);
        if spec.scheme == Scheme::FullTruncation {
            for (v, g) in self.eval_z.iter_mut().zip(&spec.guards) {
                if let Some(lo) = g {
                    *v = v.max(*lo);
                }
            }
        }
        (spec.drift)(&self.eval_z, &mut self.drift);
        (spec.diffusion_factor)(&self.eval_z, &mut self.factor);
        if spec.scheme == Scheme::FullTruncation {
            for b in &mut self.drift[..spec.d] {
                *b /= 1.0 + self.dt * b.abs();
            }
        }
        for w in &mut self.dw {
            *w = rng.sample::<f64, _>(StandardNormal) * self.sqrt_dt;
        }
        for i in 0..n {
            let mut s = self.drift[i] * self.dt;
            for j in 0..n {
                s += self.factor[i * n + j] * self.dw[j];
            }
            self.dz[i] = s;
        }
        for i in 0..n {
            let next = z[i] + self.dz[i];
            if let (Scheme::FullTruncation, Some(_)) = (spec.scheme, spec.guards[i]) {
                let floored = next.max(GUARD_FLOOR);
                self.dz[i] = floored - z[i];
                z[i] = floored;
            } else {
                z[i] = next;
            }
        }
    }

    /// c_X = (L Lᵀ)_{XX} from the current factor.
    fn c_x_quadratic(&self, theta: &[f64]) -> f64 {
        let n = self.spec.n();
        let d = self.spec.d;
        let mut s = 0.0;
        for k in 0..n {
            let mut v = 0.0;
            for i in 0..d {
                v += theta[i] * self.factor[i * n + k];
            }
            s += v * v;
        }
        s
    }
}

/// Statistics of one set of growth samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxplotStats {
    pub whisker_low: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_high: f64,
    pub mean: f64,
    pub n: usize,
}

impl BoxplotStats {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] + frac * (v[i + 1] - v[i])
    } else {
        v[i]
    }
}

/// Quartiles by linear interpolation; whiskers at the most extreme samples
/// within 1.5·IQR of the box.
pub fn boxplot_stats(samples: &[f64]) -> Result<BoxplotStats> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter { name: "samples", value: 0.0, reason: "need at least one sample" });
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let median = quantile_sorted(&v, 0.5);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let whisker_low = v.iter().copied().find(|&x| x >= lo_fence).unwrap_or(q1);
    let whisker_high = v.iter().rev().copied().find(|&x| x <= hi_fence).unwrap_or(q3);
    Ok(BoxplotStats { whisker_low, q1, median, q3, whisker_high, mean: mean(&v), n: v.len() })
}

/// Pairwise (cascade) summation; independent of thread scheduling.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mean(v: &[f64]) -> f64 {
    pairwise_sum(v) / v.len() as f64
}

/// Sample standard deviation divided by √n.
pub fn standard_error(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    (pairwise_sum(&dev) / (n - 1) as f64).sqrt() / (n as f64).sqrt()
}

/// Summary of one strategy at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthSummary {
    pub strategy: String,
    pub horizon: f64,
    pub mean: f64,
    pub standard_error: f64,
    pub stats: BoxplotStats,
    pub reference: Option<f64>,
}

impl GrowthSummary {
    /// (mean − reference)/SE when a reference is attached.
    pub fn z_score(&self) -> Option<f64> {
        self.reference.map(|r| {
            let dev = self.mean - r;
            if dev == 0.0 {
                0.0
            } else {
                dev / self.standard_error
            }
        })
    }

    pub fn within(&self, n_se: f64) -> Option<bool> {
        self.z_score().map(|z| z.abs() <= n_se)
    }
}

/// Growth samples (1/T)·log V_T per strategy, horizon and path.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthReport {
    pub measure: String,
    pub strategies: Vec<String>,
    pub horizons: Vec<f64>,
    /// samples[strategy][horizon][path], flagged paths removed.
    pub samples: Vec<Vec<Vec<f64>>>,
    /// Indices of the retained paths.
    pub path_ids: Vec<usize>,
    pub n_paths: usize,
    pub flagged: usize,
    pub references: Vec<(String, f64)>,
    pub config: SimConfig,
}

impl GrowthReport {
    pub fn with_reference(mut self, strategy: &str, value: f64) -> Self {
        self.references.retain(|(s, _)| s != strategy);
        self.references.push((strategy.to_string(), value));
        self
    }

    pub fn reference(&self, strategy: &str) -> Option<f64> {
        self.references.iter().find(|(s, _)| s == strategy).map(|&(_, v)| v)
    }

    fn index(&self, strategy: &str) -> Result<usize> {
        self.strategies
            .iter()
            .position(|s| s == strategy)
            .ok_or_else(|| Error::Unsupported(format!("no strategy '{strategy}' in report")))
    }

    pub fn samples_for(&self, strategy: &str, horizon_index: usize) -> Result<&[f64]> {
        Ok(&self.samples[self.index(strategy)?][horizon_index])
    }

    pub fn summary(&self, strategy: &str, horizon_index: usize) -> Result<GrowthSummary> {
        let s = self.samples_for(strategy, horizon_index)?;
        Ok(GrowthSummary {
            strategy: strategy.to_string(),
            horizon: self.horizons[horizon_index],
            mean: mean(s),
            standard_error: standard_error(s),
            stats: boxplot_stats(s)?,
            reference: self.reference(strategy),
        })
    }

    /// Summary at the final horizon.
    pub fn final_summary(&self, strategy: &str) -> Result<GrowthSummary> {
        self.summary(strategy, self.horizons.len() - 1)
    }

    /// Per-path difference a − b at a horizon (common random numbers).
    pub fn paired_difference(&self, a: &str, b: &str, horizon_index: usize) -> Result<Vec<f64>> {
        let sa = self.samples_for(a, horizon_index)?;
        let sb = self.samples_for(b, horizon_index)?;
        Ok(sa.iter().zip(sb).map(|(x, y)| x - y).collect())
    }

    /// One row per path, strategy and horizon: `path_id,strategy,measure,T,growth`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path_id,strategy,measure,T,growth\n");
        for (si, name) in self.strategies.iter().enumerate() {
            for (hi, h) in self.horizons.iter().enumerate() {
                for (k, pid) in self.path_ids.iter().enumerate() {
                    let _ = writeln!(s, "{pid},{name},{},{h:.16e},{:.16e}", self.measure, self.samples[si][hi][k]);
                }
            }
        }
        s
    }

    /// JSON summary with every float at 17 significant digits.
    pub fn summary_json(&self) -> Result<String> {
        let mut s = String::from("{\n");
        let _ = writeln!(s, "  \"measure\": \"{}\",", self.measure);
        let _ = writeln!(s, "  \"n_paths\": {},", self.n_paths);
        let _ = writeln!(s, "  \"flagged\": {},", self.flagged);
        let _ = writeln!(s, "  \"seed\": {},", self.config.seed);
        let _ = writeln!(s, "  \"dt\": {:.16e},", self.config.dt);
        s.push_str("  \"summaries\": [\n");
        let mut rows = Vec::new();
        for name in &self.strategies {
            for hi in 0..self.horizons.len() {
                let g = self.summary(name, hi)?;
                let reference = g.reference.map_or("null".to_string(), |r| format!("{r:.16e}"));
                let z = g.z_score().map_or("null".to_string(), |z| format!("{z:.16e}"));
                rows.push(format!(
                    "    {{\"strategy\": \"{}\", \"T\": {:.16e}, \"mean\": {:.16e}, \"se\": {:.16e}, \"q1\": {:.16e}, \"median\": {:.16e}, \"q3\": {:.16e}, \"whisker_low\": {:.16e}, \"whisker_high\": {:.16e}, \"reference\": {reference}, \"z\": {z}}}",
                    g.strategy, g.horizon, g.mean, g.standard_error, g.stats.q1, g.stats.median, g.stats.q3, g.stats.whisker_low, g.stats.whisker_high
                ));
            }
        }
        s.push_str(&rows.join(",\n"));
        s.push_str("\n  ]\n}\n");
        Ok(s)
    }
}

fn check_flagged(flagged: usize, total: usize) -> Result<()> {
    if flagged as f64 > MAX_FLAGGED_FRACTION * total as f64 {
        return Err(Error::TooManyFlaggedPaths { flagged, total });
    }
    Ok(())
}

/// Simulates n_paths paths and integrates d log V = θᵀdX − ½θᵀc_Xθ dt for
/// each strategy on the same increments. Paths with non-finite values are
/// flagged and dropped for every strategy.
pub fn simulate_growth(spec: &DynamicsSpec, strategies: &[StrategyField], cfg: &SimConfig) -> Result<GrowthReport> {
    cfg.validate()?;
    for s in strategies {
        if s.d != spec.d {
            return Err(Error::DimensionMismatch(format!("strategy {} has d = {} for d = {}", s.name, s.d, spec.d)));
        }
    }
    let cps = cfg.checkpoint_steps();
    let n_steps = cps.iter().map(|c| c.1).max().unwrap_or(0).max(cfg.n_steps());
    let d = spec.d;
    let ns = strategies.len();
    // Per path: Some(growth[strategy][horizon]) or None if flagged.
    let per_path: Vec<Result<Option<Vec<Vec<f64>>>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let mut z = initial_state(spec, &cfg.initial, &mut rng)?;
            let mut st = Stepper::new(spec, cfg.dt);
            let mut log_v = vec![0.0; ns];
            let mut out = vec![vec![0.0; cps.len()]; ns];
            let mut theta = vec![vec![0.0; d]; ns];
            for step in 1..=n_steps {
                for (k, s) in strategies.iter().enumerate() {
                    s.eval(&z, &mut theta[k]);
                }
                st.step(&mut z, &mut rng);
                for k in 0..ns {
                    let th = &theta[k];
                    let gain: f64 = (0..d).map(|i| th[i] * st.dz[i]).sum();
                    log_v[k] += gain - 0.5 * st.c_x_quadratic(th) * cfg.dt;
                }
                for (hi, &(h, cs)) in cps.iter().enumerate() {
                    if cs == step {
                        for k in 0..ns {
                            out[k][hi] = log_v[k] / h;
                        }
                    }
                }
                if !z.iter().all(|v| v.is_finite()) || !log_v.iter().all(|v| v.is_finite()) {
                    return Ok(None);
                }
            }
            Ok(Some(out))
        })
        .collect();
    let mut samples = vec![vec![Vec::with_capacity(cfg.n_paths); cps.len()]; ns];
    let mut path_ids = Vec::with_capacity(cfg.n_paths);
    let mut flagged = 0;
    for (p, r) in per_path.into_iter().enumerate() {
        match r? {
            Some(g) => {
                path_ids.push(p);
                for k in 0..ns {
                    for hi in 0..cps.len() {
                        samples[k][hi].push(g[k][hi]);
                    }
                }
            }
            None => flagged += 1,
        }
    }
    check_flagged(flagged, cfg.n_paths)?;
    if path_ids.is_empty() {
        return Err(Error::TooManyFlaggedPaths { flagged, total: cfg.n_paths });
    }
    Ok(GrowthReport {
        measure: spec.name.clone(),
        strategies: strategies.iter().map(|s| s.name.clone()).collect(),
        horizons: cps.iter().map(|c| c.0).collect(),
        samples,
        path_ids,
        n_paths: cfg.n_paths,
        flagged,
        references: Vec::new(),
        config: cfg.clone(),
    })
}

/// Time average of one observable against its space average.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicRow {
    pub name: String,
    /// Mean over paths of (1/T)∫h(Z_t)dt.
    pub time_average: f64,
    pub target: f64,
    pub standard_error: f64,
    /// (time_average − target)/SE.
    pub deviation_se: f64,
}

impl ErgodicRow {
    pub fn within(&self, n_se: f64) -> bool {
        self.deviation_se.abs() <= n_se
    }
}

/// Ensemble of time averages of each observable over [0, T], compared with targets.
pub fn simulate_ergodic_averages(
    spec: &DynamicsSpec,
    cfg: &SimConfig,
    observables: &[(String, Observable, f64)],
) -> Result<Vec<ErgodicRow>> {
    cfg.validate()?;
    let n_steps = cfg.n_steps();
    let no = observables.len();
    let per_path: Vec<Result<Option<Vec<f64>>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let mut z = initial_state(spec, &cfg.initial, &mut rng)?;
            let mut st = Stepper::new(spec, cfg.dt);
            let mut acc = vec![0.0; no];
            for _ in 0..n_steps {
                st.step(&mut z, &mut rng);
                for (k, (_, h, _)) in observables.iter().enumerate() {
                    acc[k] += h(&z);
                }
            }
            if !acc.iter().all(|v| v.is_finite()) {
                return Ok(None);
            }
            Ok(Some(acc.into_iter().map(|a| a / n_steps as f64).collect()))
        })
        .collect();
    let mut averages = vec![Vec::with_capacity(cfg.n_paths); no];
    let mut flagged = 0;
    for r in per_path {
        match r? {
            Some(a) => {
                for k in 0..no {
                    averages[k].push(a[k]);
                }
            }
            None => flagged += 1,
        }
    }
    check_flagged(flagged, cfg.n_paths)?;
    Ok(observables
        .iter()
        .zip(averages)
        .map(|((name, _, target), v)| {
            let m = mean(&v);
            let se = standard_error(&v);
            ErgodicRow { name: name.clone(), time_average: m, target: *target, standard_error: se, deviation_se: (m - target) / se }
        })
        .collect())
}

/// Sample covariance of the terminal states Z_T across paths.
pub fn terminal_covariance(spec: &DynamicsSpec, cfg: &SimConfig) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let n = spec.n();
    let finals: Vec<Result<Vec<f64>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let mut z = initial_state(spec, &cfg.initial, &mut rng)?;
            let mut st = Stepper::new(spec, cfg.dt);
            for _ in 0..cfg.n_steps() {
                st.step(&mut z, &mut rng);
            }
            Ok(z)
        })
        .collect();
    let finals = finals.into_iter().collect::<Result<Vec<_>>>()?;
    let mut cov = DMatrix::zeros(n, n);
    let means: Vec<f64> = (0..n).map(|i| mean(&finals.iter().map(|z| z[i]).collect::<Vec<_>>())).collect();
    for i in 0..n {
        for j in 0..n {
            let prods: Vec<f64> = finals.iter().map(|z| (z[i] - means[i]) * (z[j] - means[j])).collect();
            cov[(i, j)] = pairwise_sum(&prods) / (finals.len() - 1) as f64;
        }
    }
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairs::{ctou_model, CtouParams, StochVolParams};
    use approx::assert_relative_eq;

    fn small_cfg(seed: u64) -> SimConfig {
        SimConfig { t: 2.0, dt: 1e-2, n_paths: 64, seed, initial: InitialState::Stationary, checkpoints: vec![1.0, 2.0] }
    }

    #[test]
    fn boxplot_examples() {
        let b = boxplot_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3, b.mean), (2.0, 3.0, 4.0, 3.0));
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 5.0));
        let c = boxplot_stats(&[0.7; 9]).unwrap();
        assert_eq!(c.iqr(), 0.0);
        assert_eq!(c.whisker_low, c.whisker_high);
        assert!(boxplot_stats(&[]).is_err());
        let o = boxplot_stats(&[1.0, 2.0, 3.0, 4.0, 5.0, 100.0]).unwrap();
        assert_eq!(o.whisker_high, 5.0);
    }

    #[test]
    fn cir_step_floor_and_fixed_point() {
        assert_eq!(cir_guarded_step(0.04, 5.0 * (0.04 - 0.04), 0.6 * 0.2, 0.0, 1e-3), 0.04);
        assert!(cir_guarded_step(1e-12, 0.2, 0.6e-6, -10.0, 1e-3) >= GUARD_FLOOR);
        assert_eq!(cir_guarded_step(1e-12, 0.0, 1.0, -1.0, 1e-3), GUARD_FLOOR);
    }

    #[test]
    fn zero_strategy_has_zero_growth() {
        let m = ctou_model(&CtouParams::default()).unwrap();
        let spec = DynamicsSpec::gaussian_star(&m).unwrap();
        let r = simulate_growth(&spec, &[StrategyField::zero(1)], &small_cfg(1)).unwrap();
        assert!(r.samples[0].iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn reports_are_deterministic_across_thread_counts() {
        let m = ctou_model(&CtouParams::default()).unwrap();
        let spec = DynamicsSpec::gaussian_star(&m).unwrap();
        let s = [m.theta_star().to_field("theta_star"), m.theta_hat().to_field("theta_hat")];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| simulate_growth(&spec, &s, &small_cfg(7)).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_ne!(a, simulate_growth(&spec, &s, &small_cfg(8)).unwrap());
    }

    #[test]
    fn factor_reproduces_covariance() {
        let sv = StochVol::new(StochVolParams { rho: -0.5, ..Default::default() }).unwrap();
        let spec = DynamicsSpec::stochvol_star(&sv);
        let pts = vec![vec![0.1, 0.04], vec![-0.3, 0.2], vec![1.0, 1e-3]];
        assert!(spec.factor_defect(|z| sv.c(z[1]), &pts) < 1e-10);
        let m = ctou_model(&CtouParams::default()).unwrap();
        let g = DynamicsSpec::gaussian_star(&m).unwrap();
        assert!(g.factor_defect(|_| m.c.clone(), &pts) < 1e-10);
    }

    #[test]
    fn csv_rows_per_path_strategy_and_horizon() {
        let m = ctou_model(&CtouParams::default()).unwrap();
        let spec = DynamicsSpec::gaussian_star(&m).unwrap();
        let r = simulate_growth(&spec, &[m.theta_star().to_field("theta_star")], &small_cfg(3)).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 1 + 64 * 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("0,theta_star,P*,"));
        assert!(r.summary_json().unwrap().contains("\"measure\": \"P*\""));
    }

    #[test]
    fn summary_statistics() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(mean(&v), 2.5);
        assert_relative_eq!(standard_error(&v), (5.0f64 / 3.0).sqrt() / 2.0, max_relative = 1e-15);
        let big: Vec<f64> = (0..1000).map(|k| k as f64 * 0.1).collect();
        assert_relative_eq!(pairwise_sum(&big), 49950.0, max_relative = 1e-14);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = SimConfig { dt: 0.0, ..small_cfg(1) };
        assert!(bad.validate().is_err());
        let bad = SimConfig { n_paths: 0, ..small_cfg(1) };
        assert!(bad.validate().is_err());
        let bad = SimConfig { checkpoints: vec![5.0], ..small_cfg(1) };
        assert!(bad.validate().is_err());
    }
}
