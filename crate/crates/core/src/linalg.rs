//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Condition numbers above this are reported alongside inverses.
pub const CONDITION_WARN: f64 = 1e10;

/// Inverse of a symmetric positive definite matrix, with its spectral condition number.
#[derive(Debug, Clone)]
pub struct SpdInverse {
    pub inverse: DMatrix<f64>,
    pub condition: f64,
}

impl SpdInverse {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > CONDITION_WARN
    }
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let s = symmetrize(m);
    s.symmetric_eigenvalues().min()
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Checks that `m` is square, symmetric (relative 1e-10) and positive definite.
pub fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{what} is {}x{}, expected square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("{what} has non-finite entries")));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).amax() > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite {
            what: format!("{what} (not symmetric)"),
            min_eigenvalue: f64::NAN,
        });
    }
    let lmin = min_eigenvalue(m);
    if lmin.is_nan() || lmin <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            what: what.to_string(),
            min_eigenvalue: lmin,
        });
    }
    Ok(())
}

/// Inverts an SPD matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<SpdInverse> {
    check_spd(m, what)?;
    let eig = symmetrize(m).symmetric_eigenvalues();
    let condition = eig.max() / eig.min();
    let chol = symmetrize(m).cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        what: what.to_string(),
        min_eigenvalue: eig.min(),
    })?;
    Ok(SpdInverse {
        inverse: chol.inverse(),
        condition,
    })
}

/// Inverse of a general square matrix via LU.
pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Domain(format!("{what} is singular")))
}

/// Symmetric spectral square root of an SPD matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_spd(m, "matrix under square root")?;
    let eig = symmetrize(m).symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    vals.iter_mut().for_each(|v| *v = v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// Largest real part over the eigenvalues of a general square matrix.
pub fn max_real_eigenvalue(k: &DMatrix<f64>) -> f64 {
    k.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The four blocks of an (d+m)x(d+m) matrix split at `d`.
#[derive(Debug, Clone)]
pub struct Blocks {
    pub xx: DMatrix<f64>,
    pub xy: DMatrix<f64>,
    pub yx: DMatrix<f64>,
    pub yy: DMatrix<f64>,
}

pub fn split(m: &DMatrix<f64>, d: usize) -> Blocks {
    let n = m.nrows();
    let k = n - d;
    Blocks {
        xx: m.view((0, 0), (d, d)).into_owned(),
        xy: m.view((0, d), (d, k)).into_owned(),
        yx: m.view((d, 0), (k, d)).into_owned(),
        yy: m.view((d, d), (k, k)).into_owned(),
    }
}

/// Reassembles a block matrix.
pub fn join(xx: &DMatrix<f64>, xy: &DMatrix<f64>, yx: &DMatrix<f64>, yy: &DMatrix<f64>) -> DMatrix<f64> {
    let d = xx.nrows();
    let m = yy.nrows();
    let mut out = DMatrix::zeros(d + m, d + m);
    out.view_mut((0, 0), (d, d)).copy_from(xx);
    out.view_mut((0, d), (d, m)).copy_from(xy);
    out.view_mut((d, 0), (m, d)).copy_from(yx);
    out.view_mut((d, d), (m, m)).copy_from(yy);
    out
}

/// Frobenius norm of K S + S Kᵀ + c.
pub fn lyapunov_residual(k: &DMatrix<f64>, sigma: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    (k * sigma + sigma * k.transpose() + c).norm()
}
