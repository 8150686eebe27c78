//! The input triple (c, p, b_Y): coefficient fields ℓ_X, ℓ_Y and ξ, the
//! divergence equation for 𝐮 in d = 1, and numerical checks of compatibility
//! and integrability.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadResult, Tolerance};
use crate::strategy::{StrategyField, StrategyKind};

pub type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;
/// Finite x-box for quadrature given y and a widening factor (1 = nominal).
pub type WindowFn = Arc<dyn Fn(&[f64], f64) -> Vec<(f64, f64)> + Send + Sync>;

/// Densities below this are excluded from grids instead of evaluated.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Default residual tolerance for compatibility and divergence checks.
pub const DEFAULT_TOL: f64 = 1e-6;
/// Relative step for first derivatives of c and log p.
pub const FD_STEP: f64 = 1e-5;
/// Relative step for the outer y-derivative of the flux c_Y ℓ_Y p.
pub const FLUX_FD_STEP: f64 = 1e-4;

/// Asset and factor domains with finite quadrature truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub d: usize,
    pub m: usize,
    pub e_bounds: Vec<(f64, f64)>,
    pub d_bounds: Vec<(f64, f64)>,
    /// Finite bounds per coordinate, x first then y.
    pub truncation: Vec<(f64, f64)>,
}

impl DomainBox {
    pub fn new(
        e_bounds: Vec<(f64, f64)>,
        d_bounds: Vec<(f64, f64)>,
        truncation: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let d = e_bounds.len();
        let m = d_bounds.len();
        if d == 0 || m == 0 {
            return Err(Error::DimensionMismatch(format!("need d, m >= 1, got d = {d}, m = {m}")));
        }
        if truncation.len() != d + m {
            return Err(Error::DimensionMismatch(format!(
                "{} truncation intervals for {} coordinates",
                truncation.len(),
                d + m
            )));
        }
        for (k, (&(lo, hi), &(a, b))) in e_bounds.iter().chain(&d_bounds).zip(&truncation).enumerate() {
            if !(lo < hi) {
                return Err(Error::Domain(format!("coordinate {k}: bound {lo} is not below {hi}")));
            }
            if !(a.is_finite() && b.is_finite() && a < b && a >= lo && b <= hi) {
                return Err(Error::Domain(format!(
                    "coordinate {k}: truncation [{a}, {b}] not finite inside ({lo}, {hi})"
                )));
            }
        }
        Ok(Self { d, m, e_bounds, d_bounds, truncation })
    }

    /// ℝ^d × ℝ^m truncated at ±radius per coordinate.
    pub fn whole_space(d: usize, m: usize, radii: &[f64]) -> Result<Self> {
        let inf = (f64::NEG_INFINITY, f64::INFINITY);
        Self::new(vec![inf; d], vec![inf; m], radii.iter().map(|&r| (-r, r)).collect())
    }

    pub fn n(&self) -> usize {
        self.d + self.m
    }

    /// Declared (possibly infinite) bounds of coordinate k.
    pub fn declared(&self, k: usize) -> (f64, f64) {
        if k < self.d {
            self.e_bounds[k]
        } else {
            self.d_bounds[k - self.d]
        }
    }

    /// True if z lies strictly inside the declared domain.
    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.n()
            && z.iter().enumerate().all(|(k, &v)| {
                let (lo, hi) = self.declared(k);
                v > lo && v < hi
            })
    }

    /// Truncation interval of coordinate k widened by `factor`. Half-bounded
    /// coordinates widen multiplicatively in the distance to the finite bound.
    pub fn widened(&self, k: usize, factor: f64) -> (f64, f64) {
        widen(self.truncation[k], self.declared(k), factor)
    }

    fn gap(&self, k: usize, v: f64) -> f64 {
        let (lo, hi) = self.declared(k);
        (v - lo).min(hi - v)
    }
}

pub(crate) fn widen((a, b): (f64, f64), (lo, hi): (f64, f64), factor: f64) -> (f64, f64) {
    match (lo.is_finite(), hi.is_finite()) {
        (true, false) => (lo + (a - lo) / factor, lo + (b - lo) * factor),
        (false, true) => (hi - (hi - a) * factor, hi - (hi - b) / factor),
        _ => {
            let c = 0.5 * (a + b);
            let h = 0.5 * (b - a) * factor;
            ((c - h).max(lo), (c + h).min(hi))
        }
    }
}

/// Optional exact derivative providers.
#[derive(Clone, Default)]
pub struct AnalyticDerivatives {
    /// Row-wise divergence of c, length d + m.
    pub div_c: Option<VectorField>,
    /// ∇ log p, length d + m.
    pub grad_log_p: Option<VectorField>,
    /// div_y(c_Y ℓ_Y p).
    pub flux: Option<ScalarField>,
}

/// The input triple (c, p, b_Y) on a domain.
#[derive(Clone)]
pub struct ModelInputs {
    pub name: String,
    pub domain: DomainBox,
    c: MatrixField,
    p: ScalarField,
    b_y: VectorField,
    pub derivatives: AnalyticDerivatives,
    x_window: Option<WindowFn>,
    pub fd_step: f64,
    pub flux_fd_step: f64,
}

impl fmt::Debug for ModelInputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelInputs")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("analytic_div_c", &self.derivatives.div_c.is_some())
            .field("analytic_grad_log_p", &self.derivatives.grad_log_p.is_some())
            .field("analytic_flux", &self.derivatives.flux.is_some())
            .finish()
    }
}

impl ModelInputs {
    pub fn new(name: impl Into<String>, domain: DomainBox, c: MatrixField, p: ScalarField, b_y: VectorField) -> Self {
        Self {
            name: name.into(),
            domain,
            c,
            p,
            b_y,
            derivatives: AnalyticDerivatives::default(),
            x_window: None,
            fd_step: FD_STEP,
            flux_fd_step: FLUX_FD_STEP,
        }
    }

    pub fn with_div_c(mut self, f: VectorField) -> Self {
        self.derivatives.div_c = Some(f);
        self
    }

    pub fn with_grad_log_p(mut self, f: VectorField) -> Self {
        self.derivatives.grad_log_p = Some(f);
        self
    }

    /// The flux provider must match the current b_Y.
    pub fn with_flux(mut self, f: ScalarField) -> Self {
        self.derivatives.flux = Some(f);
        self
    }

    pub fn with_x_window(mut self, f: WindowFn) -> Self {
        self.x_window = Some(f);
        self
    }

    /// Replaces b_Y; drops the analytic flux, which depends on it.
    pub fn with_b_y(mut self, b_y: VectorField) -> Self {
        self.b_y = b_y;
        self.derivatives.flux = None;
        self
    }

    /// Forces the finite-difference path for every derivative.
    pub fn without_analytic_derivatives(mut self) -> Self {
        self.derivatives = AnalyticDerivatives::default();
        self
    }

    /// Replaces b_Y by the explicit compatible choice b_Y = ℓ_Y⁰.
    pub fn with_explicit_compatible_b_y(self) -> Self {
        let b = explicit_compatible_b_y(&self);
        let mut out = self.with_b_y(b);
        out.name = format!("{} (explicit b_Y)", out.name);
        out
    }

    pub fn d(&self) -> usize {
        self.domain.d
    }

    pub fn m(&self) -> usize {
        self.domain.m
    }

    pub fn n(&self) -> usize {
        self.domain.n()
    }

    /// c(z), checked SPD.
    pub fn c_at(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let c = (self.c)(z);
        if c.clone().cholesky().is_none() || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite {
                what: format!("c at {z:?}"),
                min_eigenvalue: crate::linalg::min_eigenvalue(&c),
            });
        }
        Ok(c)
    }

    /// p(z), checked positive.
    pub fn p_at(&self, z: &[f64]) -> Result<f64> {
        let p = (self.p)(z);
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Domain(format!("density p = {p} at {z:?} is not positive")));
        }
        Ok(p)
    }

    /// p(z) for evaluation points: densities in [0, floor) are underflow errors.
    pub fn p_above_floor(&self, z: &[f64]) -> Result<f64> {
        let p = (self.p)(z);
        if p.is_finite() && (0.0..DENSITY_FLOOR).contains(&p) {
            return Err(Error::DensityUnderflow { point: z.to_vec(), density: p });
        }
        self.p_at(z)
    }

    /// p(z) without the positivity check.
    pub fn density(&self, z: &[f64]) -> f64 {
        (self.p)(z)
    }

    pub fn b_y_at(&self, z: &[f64]) -> DVector<f64> {
        let mut out = vec![0.0; self.m()];
        (self.b_y)(z, &mut out);
        DVector::from_vec(out)
    }

    /// Central-difference step for coordinate k at z, kept inside the domain.
    pub fn step(&self, k: usize, z: &[f64], base: f64) -> f64 {
        let h = base * (1.0 + z[k].abs());
        h.min(0.5 * self.domain.gap(k, z[k]))
    }

    /// Row-wise divergence of c.
    pub fn div_c_at(&self, z: &[f64]) -> DVector<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        if let Some(f) = &self.derivatives.div_c {
            f(z, &mut out);
            return DVector::from_vec(out);
        }
        let mut zz = z.to_vec();
        for j in 0..n {
            let h = self.step(j, z, self.fd_step);
            zz[j] = z[j] + h;
            let cp = (self.c)(&zz);
            zz[j] = z[j] - h;
            let cm = (self.c)(&zz);
            zz[j] = z[j];
            for (i, o) in out.iter_mut().enumerate() {
                *o += (cp[(i, j)] - cm[(i, j)]) / (2.0 * h);
            }
        }
        DVector::from_vec(out)
    }

    /// ∇ log p.
    pub fn grad_log_p_at(&self, z: &[f64]) -> DVector<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        if let Some(f) = &self.derivatives.grad_log_p {
            f(z, &mut out);
            return DVector::from_vec(out);
        }
        let mut zz = z.to_vec();
        for (j, o) in out.iter_mut().enumerate() {
            let h = self.step(j, z, self.fd_step);
            zz[j] = z[j] + h;
            let lp = (self.p)(&zz).ln();
            zz[j] = z[j] - h;
            let lm = (self.p)(&zz).ln();
            zz[j] = z[j];
            *o = (lp - lm) / (2.0 * h);
        }
        DVector::from_vec(out)
    }

    /// div_y(c_Y ℓ_Y p) at z.
    pub fn flux_at(&self, z: &[f64]) -> Result<f64> {
        if let Some(f) = &self.derivatives.flux {
            return Ok(f(z));
        }
        let d = self.d();
        let mut zz = z.to_vec();
        let mut total = 0.0;
        for j in 0..self.m() {
            let k = d + j;
            let h = self.step(k, z, self.flux_fd_step);
            zz[k] = z[k] + h;
            let gp = self.flux_vector(&zz)?[j];
            zz[k] = z[k] - h;
            let gm = self.flux_vector(&zz)?[j];
            zz[k] = z[k];
            total += (gp - gm) / (2.0 * h);
        }
        Ok(total)
    }

    /// c_Y ℓ_Y p at z.
    fn flux_vector(&self, z: &[f64]) -> Result<DVector<f64>> {
        let ell = eval_ell(self, z)?;
        let c = self.c_at(z)?;
        let d = self.d();
        let cy = c.view((d, d), (self.m(), self.m()));
        Ok(cy * ell.ell_y * self.p_at(z)?)
    }

    /// Quadrature box for x at factor state y.
    pub fn x_window(&self, y: &[f64], scale: f64) -> Vec<(f64, f64)> {
        match &self.x_window {
            Some(f) => f(y, scale),
            None => (0..self.d()).map(|k| self.domain.widened(k, scale)).collect(),
        }
    }

    /// Quadrature box for y.
    pub fn y_bounds(&self, scale: f64) -> Vec<(f64, f64)> {
        (0..self.m()).map(|j| self.domain.widened(self.d() + j, scale)).collect()
    }
}

/// ℓ_X, ℓ_Y and ℓ_Y⁰ = ℓ_Y + b_Y at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Ell {
    pub ell_x: DVector<f64>,
    pub ell_y: DVector<f64>,
    pub ell_y0: DVector<f64>,
}

/// Evaluates ℓ_X = ½(w_X + c_X⁻¹c_XY w_Y) and ℓ_Y = ½(w_Y + c_Y⁻¹c_YX w_X) − b_Y
/// with w = c⁻¹ div c + ∇ log p.
pub fn eval_ell(inputs: &ModelInputs, z: &[f64]) -> Result<Ell> {
    if z.len() != inputs.n() {
        return Err(Error::DimensionMismatch(format!("point of length {} for n = {}", z.len(), inputs.n())));
    }
    let c = inputs.c_at(z)?;
    inputs.p_at(z)?;
    let d = inputs.d();
    let m = inputs.m();
    let chol = c.clone().cholesky().expect("checked SPD");
    let w = chol.solve(&inputs.div_c_at(z)) + inputs.grad_log_p_at(z);
    let wx = w.rows(0, d).into_owned();
    let wy = w.rows(d, m).into_owned();
    let cx = c.view((0, 0), (d, d)).into_owned();
    let cy = c.view((d, d), (m, m)).into_owned();
    let cxy = c.view((0, d), (d, m)).into_owned();
    let cyx = c.view((d, 0), (m, d)).into_owned();
    let cx_chol = cx.cholesky().expect("principal block of SPD");
    let cy_chol = cy.cholesky().expect("principal block of SPD");
    let ell_x = (&wx + cx_chol.solve(&(cxy * &wy))) * 0.5;
    let ell_y0 = (&wy + cy_chol.solve(&(cyx * &wx))) * 0.5;
    let ell_y = &ell_y0 - inputs.b_y_at(z);
    Ok(Ell { ell_x, ell_y, ell_y0 })
}

/// The explicit compatible factor drift b_Y = ℓ_Y⁰, for which ℓ_Y ≡ 0.
pub fn explicit_compatible_b_y(inputs: &ModelInputs) -> VectorField {
    let base = inputs.clone();
    Arc::new(move |z: &[f64], out: &mut [f64]| match eval_ell(&base, z) {
        Ok(e) => out.copy_from_slice(e.ell_y0.as_slice()),
        Err(_) => out.fill(f64::NAN),
    })
}

/// One row of a compatibility check.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityRow {
    pub y: Vec<f64>,
    /// ∫_E div_y(c_Y ℓ_Y p) dx.
    pub residual: f64,
    /// Same integral on the widened/refined grid.
    pub refined: f64,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityReport {
    pub rows: Vec<CompatibilityRow>,
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
    /// False if any row's quadrature did not settle within tol.
    pub reliable: bool,
}

fn integrand_tol() -> Tolerance {
    Tolerance { abs: 1e-15, rel: 1e-12, ..Tolerance::default() }
}

/// Captures the first hard error raised inside a quadrature integrand;
/// densities below the floor contribute zero.
struct ErrorSlot(RefCell<Option<Error>>);

impl ErrorSlot {
    fn new() -> Self {
        Self(RefCell::new(None))
    }

    fn take(&self, r: Result<f64>) -> f64 {
        match r {
            Ok(v) => v,
            Err(Error::DensityUnderflow { .. }) => 0.0,
            Err(e) => {
                self.0.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self.0.into_inner() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

/// ∫ f(x, y) dx over the x-window at y.
pub fn integrate_x<F>(inputs: &ModelInputs, y: &[f64], scale: f64, f: F) -> Result<QuadResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let d = inputs.d();
    let window = inputs.x_window(y, scale);
    let slot = ErrorSlot::new();
    let mut z = vec![0.0; inputs.n()];
    z[d..].copy_from_slice(y);
    let res = if d == 1 {
        let (a, b) = window[0];
        quadrature::adaptive(
            |x| {
                z[0] = x;
                slot.take(f(&z))
            },
            a,
            b,
            integrand_tol(),
        )
    } else {
        quadrature::tensor_checked(
            |x: &[f64]| {
                let mut zz = x.to_vec();
                zz.extend_from_slice(y);
                slot.take(f(&zz))
            },
            &window,
            (2.0 * scale).ceil().max(2.0) as usize,
            1e-12,
        )
    };
    slot.finish()?;
    Ok(res)
}

/// ∫_F f dz over the truncated state space widened by `scale`.
///
/// d = m = 1 uses iterated adaptive quadrature (log-transformed y on
/// half-bounded factor domains); up to four coordinates use nested tensor rules.
pub fn integrate_state_space<F>(inputs: &ModelInputs, scale: f64, f: F) -> Result<QuadResult>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let d = inputs.d();
    let m = inputs.m();
    let slot = ErrorSlot::new();
    if d == 1 && m == 1 {
        let (lo, hi) = inputs.domain.declared(1);
        let (a, b) = inputs.y_bounds(scale)[0];
        let log_y = lo.is_finite() && !hi.is_finite();
        let mut all_converged = true;
        let mut evals = 0;
        let inner = |y: f64, jac: f64| -> (f64, bool, usize) {
            let (xa, xb) = inputs.x_window(&[y], scale)[0];
            let r = quadrature::adaptive(|x| slot.take(f(&[x, y])), xa, xb, integrand_tol());
            (r.value * jac, r.converged, r.evaluations)
        };
        let outer = if log_y {
            quadrature::adaptive(
                |s| {
                    let y = lo + s.exp();
                    let (v, c, e) = inner(y, s.exp());
                    all_converged &= c;
                    evals += e;
                    v
                },
                (a - lo).ln(),
                (b - lo).ln(),
                Tolerance { abs: 1e-14, rel: 1e-10, ..Tolerance::default() },
            )
        } else {
            quadrature::adaptive(
                |y| {
                    let (v, c, e) = inner(y, 1.0);
                    all_converged &= c;
                    evals += e;
                    v
                },
                a,
                b,
                Tolerance { abs: 1e-14, rel: 1e-10, ..Tolerance::default() },
            )
        };
        slot.finish()?;
        return Ok(QuadResult {
            converged: outer.converged && all_converged,
            evaluations: evals,
            ..outer
        });
    }
    if d + m > 4 {
        return Err(Error::Unsupported(format!("state-space quadrature in {} dimensions", d + m)));
    }
    let rule = quadrature::gl24();
    let run = |panels: usize| {
        quadrature::tensor(
            |y: &[f64]| {
                let window = inputs.x_window(y, scale);
                quadrature::tensor(
                    |x: &[f64]| {
                        let mut z = x.to_vec();
                        z.extend_from_slice(y);
                        slot.take(f(&z))
                    },
                    &window,
                    rule,
                    panels,
                )
            },
            &inputs.y_bounds(scale),
            rule,
            panels,
        )
    };
    let coarse = run(1);
    let fine = run(2);
    slot.finish()?;
    let error = (fine - coarse).abs();
    Ok(QuadResult {
        value: fine,
        error,
        converged: error <= 1e-9 * fine.abs().max(1e-3),
        evaluations: 0,
    })
}

/// Integrates div_y(c_Y ℓ_Y p) over E at each y; the integral must vanish.
pub fn check_compatibility(inputs: &ModelInputs, y_grid: &[Vec<f64>], tol: f64) -> Result<CompatibilityReport> {
    let mut rows = Vec::with_capacity(y_grid.len());
    for y in y_grid {
        if y.len() != inputs.m() {
            return Err(Error::DimensionMismatch(format!("y of length {} for m = {}", y.len(), inputs.m())));
        }
        let flux = |z: &[f64]| inputs.flux_at(z);
        let base = integrate_x(inputs, y, 1.0, flux)?;
        let refined = integrate_x(inputs, y, 2.0, flux)?;
        let reliable = base.converged && refined.converged && (refined.value - base.value).abs() <= tol;
        rows.push(CompatibilityRow { y: y.clone(), residual: base.value, refined: refined.value, reliable });
    }
    let max_residual = rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    let reliable = rows.iter().all(|r| r.reliable);
    Ok(CompatibilityReport { rows, max_residual, tol, pass: max_residual < tol && reliable, reliable })
}

/// Cumulative quadrature u(x_k, y) = ∫_{x_0}^{x_k} div_y(c_Y ℓ_Y p) dx' with u(x_0) = 0.
pub fn solve_u_1d(inputs: &ModelInputs, y: &[f64], x_grid: &[f64]) -> Result<Vec<f64>> {
    if inputs.d() != 1 {
        return Err(Error::UnsupportedDimension { d: inputs.d() });
    }
    if x_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Domain("x_grid must be strictly increasing".into()));
    }
    let slot = ErrorSlot::new();
    let mut z = vec![0.0; inputs.n()];
    z[1..].copy_from_slice(y);
    let mut out = Vec::with_capacity(x_grid.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in x_grid.windows(2) {
        let r = quadrature::adaptive(
            |x| {
                z[0] = x;
                slot.take(inputs.flux_at(&z))
            },
            w[0],
            w[1],
            integrand_tol(),
        );
        acc += r.value;
        out.push(acc);
    }
    slot.finish()?;
    Ok(out)
}

/// u(x, y) for d = 1 integrated from the nearer tail of the x-window, which
/// keeps u/p accurate far from the bulk. Equivalent to the left-anchored
/// integral whenever the compatibility condition holds.
pub fn u_pointwise(inputs: &ModelInputs, z: &[f64]) -> Result<f64> {
    if inputs.d() != 1 {
        return Err(Error::UnsupportedDimension { d: inputs.d() });
    }
    let y = &z[1..];
    let (a, b) = inputs.x_window(y, 1.0)[0];
    let width = b - a;
    let mid = 0.5 * (a + b);
    let x = z[0];
    let slot = ErrorSlot::new();
    let mut zz = z.to_vec();
    let tol = Tolerance { abs: 0.0, rel: 1e-12, max_depth: 50, ..Tolerance::default() };
    let mut f = |t: f64| {
        zz[0] = t;
        slot.take(inputs.flux_at(&zz))
    };
    let v = if x <= mid {
        quadrature::adaptive(&mut f, a.min(x - width), x, tol).value
    } else {
        -quadrature::adaptive(&mut f, x, b.max(x + width), tol).value
    };
    slot.finish()?;
    Ok(v)
}

/// u(·, y) sampled on one slice, interpolated by cubic Hermite with slope ∂_x u = flux.
#[derive(Debug, Clone)]
pub struct SampledU {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub slope: Vec<f64>,
}

impl SampledU {
    pub fn from_grid(inputs: &ModelInputs, y: &[f64], x_grid: &[f64]) -> Result<Self> {
        let u = solve_u_1d(inputs, y, x_grid)?;
        let mut z = vec![0.0; inputs.n()];
        z[1..].copy_from_slice(y);
        let slope = x_grid
            .iter()
            .map(|&x| {
                z[0] = x;
                inputs.flux_at(&z)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { y: y.to_vec(), x: x_grid.to_vec(), u, slope })
    }

    /// Interpolated value, or None outside the sampled interval.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let n = self.x.len();
        if n < 2 || x < self.x[0] || x > self.x[n - 1] {
            return None;
        }
        let k = match self.x.partition_point(|&v| v <= x) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let (x0, x1) = (self.x[k], self.x[k + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (t2, t3) = (t * t, t * t * t);
        Some(
            (2.0 * t3 - 3.0 * t2 + 1.0) * self.u[k]
                + (t3 - 2.0 * t2 + t) * h * self.slope[k]
                + (-2.0 * t3 + 3.0 * t2) * self.u[k + 1]
                + (t3 - t2) * h * self.slope[k + 1],
        )
    }
}

/// A solution of div_x 𝐮 = div_y(c_Y ℓ_Y p).
#[derive(Clone)]
pub enum UField {
    Zero,
    ClosedForm(VectorField),
    /// d = 1 pointwise quadrature from the nearer tail.
    Quadrature,
    /// d = 1 samples on a single y-slice.
    Sampled(Arc<SampledU>),
}

impl fmt::Debug for UField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UField::Zero => write!(f, "UField::Zero"),
            UField::ClosedForm(_) => write!(f, "UField::ClosedForm"),
            UField::Quadrature => write!(f, "UField::Quadrature"),
            UField::Sampled(s) => write!(f, "UField::Sampled(y = {:?}, {} nodes)", s.y, s.x.len()),
        }
    }
}

impl UField {
    pub fn closed_form<F>(f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        UField::ClosedForm(Arc::new(f))
    }

    pub fn eval(&self, inputs: &ModelInputs, z: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            UField::Zero => out.fill(0.0),
            UField::ClosedForm(f) => f(z, out),
            UField::Quadrature => out[0] = u_pointwise(inputs, z)?,
            UField::Sampled(s) => {
                if z[1..] != s.y[..] {
                    return Err(Error::Domain(format!("sampled u is defined at y = {:?} only", s.y)));
                }
                out[0] = s
                    .eval(z[0])
                    .ok_or_else(|| Error::Domain(format!("x = {} outside the sampled grid", z[0])))?;
            }
        }
        Ok(())
    }
}

/// ξ = ℓ_X + c_X⁻¹ 𝐮 / p.
pub fn assemble_xi(inputs: &ModelInputs, u: &UField, z: &[f64]) -> Result<DVector<f64>> {
    let p = inputs.p_above_floor(z)?;
    let ell = eval_ell(inputs, z)?;
    if matches!(u, UField::Zero) {
        return Ok(ell.ell_x);
    }
    let d = inputs.d();
    let mut uv = vec![0.0; d];
    u.eval(inputs, z, &mut uv)?;
    let c = inputs.c_at(z)?;
    let cx = c.view((0, 0), (d, d)).into_owned();
    let corr = cx.cholesky().expect("principal block of SPD").solve(&DVector::from_vec(uv)) / p;
    Ok(ell.ell_x + corr)
}

/// θ* = ξ as a strategy field. Valid for d = 1, where ξ is always an x-gradient.
pub fn gradient_strategy(inputs: &ModelInputs, u: &UField) -> Result<StrategyField> {
    if inputs.d() != 1 {
        return Err(Error::NotCertifiedGradient { d: inputs.d() });
    }
    certified_gradient_strategy(inputs, u)
}

/// θ* = ξ for any d; the caller certifies that ξ is an x-gradient.
pub fn certified_gradient_strategy(inputs: &ModelInputs, u: &UField) -> Result<StrategyField> {
    let base = inputs.clone();
    let uf = u.clone();
    let d = inputs.d();
    Ok(StrategyField::new(
        format!("xi[{}]", inputs.name),
        d,
        StrategyKind::Numerical { description: format!("xi = ell_X + c_X^-1 u / p with {u:?}") },
        Arc::new(move |z: &[f64], out: &mut [f64]| match assemble_xi(&base, &uf, z) {
            Ok(v) => out.copy_from_slice(v.as_slice()),
            Err(_) => out.fill(f64::NAN),
        }),
    ))
}

/// Quadrature estimates of the two integrability functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrabilityReport {
    /// ∫ ℓ_Xᵀc_Xℓ_X p + ℓ_Yᵀc_Yℓ_Y p.
    pub ell_integral: f64,
    /// ∫ 𝐮ᵀc_X⁻¹𝐮 / p.
    pub u_integral: f64,
    pub ell_integral_widened: f64,
    pub u_integral_widened: f64,
    pub ell_diverges: bool,
    pub u_diverges: bool,
    pub converged: bool,
}

impl IntegrabilityReport {
    pub fn finite(&self) -> bool {
        !self.ell_diverges && !self.u_diverges
    }
}

fn relative_change(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Divergence is flagged when doubling the truncation changes a value by more than 5%.
pub fn integrability_report(inputs: &ModelInputs, u: &UField) -> Result<IntegrabilityReport> {
    let d = inputs.d();
    let m = inputs.m();
    let ell_part = |z: &[f64]| -> Result<f64> {
        let p = inputs.p_above_floor(z)?;
        let e = eval_ell(inputs, z)?;
        let c = inputs.c_at(z)?;
        let cx = c.view((0, 0), (d, d));
        let cy = c.view((d, d), (m, m));
        Ok((e.ell_x.dot(&(cx * &e.ell_x)) + e.ell_y.dot(&(cy * &e.ell_y))) * p)
    };
    let u_part = |z: &[f64]| -> Result<f64> {
        let p = inputs.p_above_floor(z)?;
        let mut uv = vec![0.0; d];
        u.eval(inputs, z, &mut uv)?;
        let uv = DVector::from_vec(uv);
        let c = inputs.c_at(z)?;
        let cx = c.view((0, 0), (d, d)).into_owned();
        let s = cx.cholesky().expect("principal block of SPD").solve(&uv);
        Ok(uv.dot(&s) / p)
    };
    let e1 = integrate_state_space(inputs, 1.0, ell_part)?;
    let e2 = integrate_state_space(inputs, 2.0, ell_part)?;
    let (u1, u2) = if matches!(u, UField::Zero) {
        let zero = QuadResult { value: 0.0, error: 0.0, converged: true, evaluations: 0 };
        (zero, zero)
    } else {
        (integrate_state_space(inputs, 1.0, u_part)?, integrate_state_space(inputs, 2.0, u_part)?)
    };
    Ok(IntegrabilityReport {
        ell_integral: e1.value,
        u_integral: u1.value,
        ell_integral_widened: e2.value,
        u_integral_widened: u2.value,
        ell_diverges: !e2.value.is_finite() || relative_change(e1.value, e2.value) > 0.05,
        u_diverges: !u2.value.is_finite() || relative_change(u1.value, u2.value) > 0.05,
        converged: e1.converged && e2.converged && u1.converged && u2.converged,
    })
}

/// Finite-difference scheme for first derivatives in residual checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FdScheme {
    /// (f(x+h) − f(x−h)) / 2h, error O(h²).
    Central,
    /// (4 D(h/2) − D(h)) / 3 on central differences, error O(h⁴).
    Richardson,
}

/// ∂f/∂x_k at z by the chosen scheme.
pub fn partial<F: FnMut(&[f64]) -> f64>(mut f: F, z: &[f64], k: usize, h: f64, scheme: FdScheme) -> f64 {
    let mut zz = z.to_vec();
    let mut central = |h: f64| {
        zz[k] = z[k] + h;
        let fp = f(&zz);
        zz[k] = z[k] - h;
        let fm = f(&zz);
        zz[k] = z[k];
        (fp - fm) / (2.0 * h)
    };
    match scheme {
        FdScheme::Central => central(h),
        FdScheme::Richardson => {
            let coarse = central(h);
            let fine = central(0.5 * h);
            (4.0 * fine - coarse) / 3.0
        }
    }
}

/// max over the grid of |div_x 𝐮 − div_y(c_Y ℓ_Y p)|, with div_x 𝐮 by finite differences.
pub fn verify_divergence(
    u: &UField,
    inputs: &ModelInputs,
    grid: &[Vec<f64>],
    h: f64,
    scheme: FdScheme,
) -> Result<f64> {
    let d = inputs.d();
    let mut worst: f64 = 0.0;
    let mut buf = vec![0.0; d];
    for z in grid {
        let mut div = 0.0;
        for i in 0..d {
            let mut err = None;
            div += partial(
                |zz| match u.eval(inputs, zz, &mut buf) {
                    Ok(()) => buf[i],
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
        worst = worst.max((div - inputs.flux_at(z)?).abs());
    }
    Ok(worst)
}

/// Residuals at steps h and h/2 with the observed order log2(r(h)/r(h/2)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub h: f64,
    pub residual: f64,
    pub residual_half: f64,
    pub order: f64,
}

impl Refinement {
    pub fn new(h: f64, residual: f64, residual_half: f64) -> Self {
        Self { h, residual, residual_half, order: (residual / residual_half).log2() }
    }
}

/// verify_divergence at h and h/2.
pub fn divergence_refinement(u: &UField, inputs: &ModelInputs, grid: &[Vec<f64>], h: f64, scheme: FdScheme) -> Result<Refinement> {
    Ok(Refinement::new(
        h,
        verify_divergence(u, inputs, grid, h, scheme)?,
        verify_divergence(u, inputs, grid, 0.5 * h, scheme)?,
    ))
}

/// Rectangular grid of points (x, y) for d = m = 1.
pub fn grid_2d(xs: &[f64], ys: &[f64]) -> Vec<Vec<f64>> {
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| vec![x, y])).collect()
}

/// n equally spaced points on [a, b].
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Standard bivariate normal with c = I and b_Y = β y.
    fn iid_normal(beta: f64) -> ModelInputs {
        let domain = DomainBox::whole_space(1, 1, &[8.0, 8.0]).unwrap();
        ModelInputs::new(
            "iid",
            domain,
            Arc::new(|_| DMatrix::identity(2, 2)),
            Arc::new(|z| (-0.5 * (z[0] * z[0] + z[1] * z[1])).exp() / (2.0 * std::f64::consts::PI)),
            Arc::new(move |z, out| out[0] = beta * z[1]),
        )
        .with_div_c(Arc::new(|_, out| out.fill(0.0)))
        .with_grad_log_p(Arc::new(|z, out| {
            out[0] = -z[0];
            out[1] = -z[1];
        }))
    }

    #[test]
    fn domain_rejects_truncation_outside_bounds() {
        let r = DomainBox::new(vec![(0.0, 1.0)], vec![(0.0, f64::INFINITY)], vec![(-0.5, 1.0), (0.1, 2.0)]);
        assert!(matches!(r, Err(Error::Domain(_))));
        let r = DomainBox::new(vec![(0.0, 1.0)], vec![(2.0, 1.0)], vec![(0.0, 1.0), (1.0, 2.0)]);
        assert!(r.is_err());
    }

    #[test]
    fn widening_half_bounded_coordinate_is_multiplicative() {
        assert_eq!(widen((1e-10, 1.0), (0.0, f64::INFINITY), 2.0), (5e-11, 2.0));
        assert_eq!(widen((-1.0, 3.0), (f64::NEG_INFINITY, f64::INFINITY), 2.0), (-3.0, 5.0));
        assert_eq!(widen((0.2, 0.8), (0.0, 1.0), 4.0), (0.0, 1.0));
    }

    #[test]
    fn explicit_b_y_is_minus_half_y_for_standard_normal() {
        let inputs = iid_normal(0.0);
        let b = explicit_compatible_b_y(&inputs);
        let mut out = [0.0];
        b(&[0.3, 0.8], &mut out);
        assert_relative_eq!(out[0], -0.4, epsilon = 1e-9);
    }

    #[test]
    fn explicit_b_y_zeroes_ell_y_exactly() {
        let inputs = iid_normal(0.7).with_explicit_compatible_b_y();
        for z in [[0.1, -0.3], [1.5, 2.0], [-2.0, 0.0]] {
            assert_eq!(eval_ell(&inputs, &z).unwrap().ell_y[0], 0.0);
            assert_eq!(inputs.flux_at(&z).unwrap(), 0.0);
        }
    }

    #[test]
    fn non_spd_and_nonpositive_density_are_errors() {
        let domain = DomainBox::whole_space(1, 1, &[1.0, 1.0]).unwrap();
        let bad_c = ModelInputs::new(
            "bad",
            domain.clone(),
            Arc::new(|_| DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])),
            Arc::new(|_| 1.0),
            Arc::new(|_, o| o[0] = 0.0),
        );
        assert!(matches!(eval_ell(&bad_c, &[0.0, 0.0]), Err(Error::NotPositiveDefinite { .. })));
        let bad_p = ModelInputs::new(
            "bad",
            domain,
            Arc::new(|_| DMatrix::identity(2, 2)),
            Arc::new(|_| 0.0),
            Arc::new(|_, o| o[0] = 0.0),
        );
        assert!(matches!(eval_ell(&bad_p, &[0.0, 0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn u_vanishes_when_ell_y_vanishes() {
        let inputs = iid_normal(-0.5);
        let xs = linspace(-8.0, 8.0, 33);
        let u = solve_u_1d(&inputs, &[0.4], &xs).unwrap();
        assert!(u.iter().all(|v| v.abs() < 1e-12));
        let xi = assemble_xi(&inputs, &UField::Zero, &[0.3, 0.4]).unwrap();
        assert_eq!(xi, eval_ell(&inputs, &[0.3, 0.4]).unwrap().ell_x);
    }

    #[test]
    fn underflow_point_is_refused() {
        let inputs = iid_normal(-0.5);
        let r = assemble_xi(&inputs, &UField::Quadrature, &[37.2, 0.0]);
        assert!(matches!(r, Err(Error::DensityUnderflow { .. })), "{r:?}");
    }

    #[test]
    fn hermite_interpolation_is_exact_for_cubics() {
        let x = linspace(0.0, 1.0, 5);
        let f = |t: f64| t * t * t - 2.0 * t;
        let s = SampledU {
            y: vec![0.0],
            u: x.iter().map(|&t| f(t)).collect(),
            slope: x.iter().map(|&t| 3.0 * t * t - 2.0).collect(),
            x,
        };
        assert_relative_eq!(s.eval(0.37).unwrap(), f(0.37), epsilon = 1e-14);
        assert!(s.eval(1.5).is_none());
    }

    #[test]
    fn richardson_is_fourth_order() {
        let f = |z: &[f64]| z[0].sin();
        let e1 = (partial(f, &[0.3], 0, 0.1, FdScheme::Richardson) - 0.3f64.cos()).abs();
        let e2 = (partial(f, &[0.3], 0, 0.05, FdScheme::Richardson) - 0.3f64.cos()).abs();
        assert!(e1 / e2 > 14.0, "ratio {}", e1 / e2);
    }
}
