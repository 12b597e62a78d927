//! Small dense linear-algebra helpers shared by the model and the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative determinant floor below which `B` counts as singular: `|det B| < 1e-10 * n`.
pub const SINGULAR_DET_FACTOR: f64 = 1e-10;

/// Log of the singularity floor for an `n x n` matrix.
pub fn singular_log_threshold(n: usize) -> f64 {
    (SINGULAR_DET_FACTOR * n as f64).ln()
}

/// `(log|det|, sign)` read off an LU factorization.
pub fn lu_log_abs_det(lu: &LU<f64, Dyn, Dyn>) -> (f64, f64) {
    let u = lu.u();
    let mut log_abs = 0.0;
    let mut sign: f64 = lu.p().determinant();
    for &d in u.diagonal().iter() {
        if d == 0.0 || !d.is_finite() {
            return (f64::NEG_INFINITY, 0.0);
        }
        log_abs += d.abs().ln();
        if d < 0.0 {
            sign = -sign;
        }
    }
    (log_abs, sign)
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draw from `Normal(P^-1 b, P^-1)` given the Cholesky factor of the precision `P`.
pub fn sample_from_precision<R: Rng + ?Sized>(
    chol: &Cholesky<f64, Dyn>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let l = chol.l_dirty();
    // P = L L^T. mean = L^-T L^-1 b, noise = L^-T xi.
    let mut w = l
        .solve_lower_triangular(linear)
        .expect("Cholesky factor has a positive diagonal");
    w += standard_normal_vector(linear.len(), rng);
    l.tr_solve_lower_triangular(&w)
        .expect("Cholesky factor has a positive diagonal")
}

/// Cholesky factorization that reports failure as [`Error::RankDeficient`].
pub fn cholesky(m: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::RankDeficient(format!("{what} is not positive definite")))
}

/// `m += c * s`, entrywise.
pub fn add_scaled(m: &mut DMatrix<f64>, c: f64, s: &DMatrix<f64>) {
    m.zip_apply(s, |a, b| *a += c * b);
}

/// Maximum absolute asymmetry `max |A - A^T|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}
