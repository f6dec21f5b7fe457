//! Principal (Perron) eigenpairs of [`GeneratorMatrix`] with Collatz–Wielandt
//! certificates.
//!
//! For an irreducible matrix with nonnegative off-diagonals, `P = M + sI` is
//! entrywise nonnegative once `s >= max |M_ii|`, and for every positive vector
//! `V` the principal eigenvalue of `M` lies in
//! `[min_i (PV)_i / V_i - s, max_i (PV)_i / V_i - s]`.
//! Shifted power iteration tightens this interval monotonically.

use serde::Serialize;
use thiserror::Error;

use crate::genmat::GeneratorMatrix;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 5_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum PerronError {
    #[error("power iteration did not reach the requested gap after {max_iter} sweeps (last gap {gap:.3e})")]
    NonConvergence { max_iter: usize, gap: f64 },
    #[error("negative off-diagonal entry {value:e} at row {row}; matrix is not of Perron type")]
    Structure { row: usize, value: f64 },
    #[error("test vector is not strictly positive at index {0}")]
    NonPositiveVector(usize),
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("starting vector has length {got}, matrix dimension is {expected}")]
    Length { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenPair {
    pub lambda: f64,
    /// Strictly positive, `vector[origin] == 1`.
    pub vector: Vec<f64>,
    pub cw_lower: f64,
    pub cw_upper: f64,
    pub iterations: usize,
    /// `|MV - lambda V|_inf / |V|_inf`.
    pub residual: f64,
}

impl EigenPair {
    pub fn gap(&self) -> f64 {
        self.cw_upper - self.cw_lower
    }

    /// `max V / min V`.
    pub fn harnack_ratio(&self) -> f64 {
        let (lo, hi) = self
            .vector
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi / lo
    }
}

/// Shifted Collatz–Wielandt bounds for `m` and positive `v`, writing `(M + sI) v`
/// into `work`. Shared by the solver and by [`cw_certificate`], so that a stored
/// eigenvector reproduces its certificate bit for bit.
fn shifted_bounds(m: &GeneratorMatrix, v: &[f64], work: &mut [f64]) -> (f64, f64) {
    let s = m.shift_hint();
    m.mul_shifted(v, s, work);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (w, x) in work.iter().zip(v) {
        let r = w / x;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo - s, hi - s)
}

/// Collatz–Wielandt interval `(lower, upper)` containing the principal eigenvalue of `m`.
pub fn cw_certificate(m: &GeneratorMatrix, v: &[f64]) -> Result<(f64, f64), PerronError> {
    if v.len() != m.n() {
        return Err(PerronError::Length {
            expected: m.n(),
            got: v.len(),
        });
    }
    if let Some(i) = v.iter().position(|&x| !(x > 0.0)) {
        return Err(PerronError::NonPositiveVector(i));
    }
    let mut work = vec![0.0; m.n()];
    Ok(shifted_bounds(m, v, &mut work))
}

fn check_structure(m: &GeneratorMatrix) -> Result<(), PerronError> {
    for i in 0..m.n() {
        if let Some((_, value)) = m.row(i).find(|&(j, v)| j != i && v < 0.0) {
            return Err(PerronError::Structure { row: i, value });
        }
    }
    Ok(())
}

/// Principal eigenpair by shifted power iteration from the all-ones vector.
pub fn principal_eigpair(
    m: &GeneratorMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair, PerronError> {
    let ones = vec![1.0; m.n()];
    principal_eigpair_from(m, &ones, tol, max_iter)
}

/// As [`principal_eigpair`], starting from a given positive vector (warm start).
pub fn principal_eigpair_from(
    m: &GeneratorMatrix,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair, PerronError> {
    if !(tol > 0.0) {
        return Err(PerronError::BadTolerance);
    }
    if start.len() != m.n() {
        return Err(PerronError::Length {
            expected: m.n(),
            got: start.len(),
        });
    }
    if let Some(i) = start.iter().position(|&x| !(x > 0.0)) {
        return Err(PerronError::NonPositiveVector(i));
    }
    check_structure(m)?;

    let origin = m.origin();
    let shift = m.shift_hint();
    let mut v: Vec<f64> = start.iter().map(|x| x / start[origin]).collect();
    let mut next = vec![0.0; m.n()];
    let mut work = vec![0.0; m.n()];
    let mut gap = f64::INFINITY;
    for it in 1..=max_iter {
        m.mul_shifted(&v, shift, &mut work);
        // Rescaling by a power of two is exact, so these ratios are those of the
        // origin-normalized iteration without paying a division per entry.
        let scale = pow2_recip(work[origin]);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ((x, w), y) in v.iter().zip(&work).zip(next.iter_mut()) {
            let r = w / x;
            // plain comparisons vectorize; entries are positive, so no NaN
            lo = if r < lo { r } else { lo };
            hi = if r > hi { r } else { hi };
            *y = w * scale;
        }
        gap = (hi - shift) - (lo - shift);
        if gap <= tol {
            let v0 = v[origin];
            for x in v.iter_mut() {
                *x /= v0;
            }
            // certify the returned vector itself, so the certificate reproduces
            let (lo, hi) = shifted_bounds(m, &v, &mut work);
            let lambda = 0.5 * (lo + hi);
            let residual = residual(m, &v, lambda);
            return Ok(EigenPair {
                lambda,
                vector: v,
                cw_lower: lo,
                cw_upper: hi,
                iterations: it,
                residual,
            });
        }
        std::mem::swap(&mut v, &mut next);
    }
    Err(PerronError::NonConvergence { max_iter, gap })
}

/// `2^-k` with `2^k` the power of two nearest below `x > 0`.
fn pow2_recip(x: f64) -> f64 {
    let e = ((x.to_bits() >> 52) & 0x7ff) as i64 - 1023;
    if (-1000..1000).contains(&e) {
        f64::from_bits(((1023 - e) as u64) << 52)
    } else {
        1.0 / x
    }
}

fn residual(m: &GeneratorMatrix, v: &[f64], lambda: f64) -> f64 {
    let mv = m.mul_vec(v);
    let num = mv
        .iter()
        .zip(v)
        .map(|(a, b)| (a - lambda * b).abs())
        .fold(0.0, f64::max);
    let den = v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    num / den
}
