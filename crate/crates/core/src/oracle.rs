//! Brute-force ground truth for tiny grids: every stationary policy is
//! enumerated and eigensolved with a dense solver that shares no code with
//! [`crate::perron`] or the sparse assembly in [`crate::genmat`].

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::genmat::{DriftScheme, Discretization, PolicyField};
use crate::howard::{Sense, SolveResult};

pub const DEFAULT_LIMIT: u64 = 100_000;
/// Stopping tolerance on the dense solver's ratio spread.
const DENSE_TOL: f64 = 1e-13;
const DENSE_MAX_ITER: usize = 50_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{count} policies exceed the enumeration limit {limit}")]
    TooLarge { count: u128, limit: u64 },
    #[error("evaluation failed at {coords:?} (control {control}): {source}")]
    Eval {
        coords: Vec<f64>,
        control: usize,
        source: EvalError,
    },
    #[error("dense power iteration did not converge for policy {index}")]
    NonConvergence { index: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub sense: Sense,
    pub best_lambda: f64,
    pub best_index: u64,
    pub best_policy: Vec<usize>,
    /// `table[j]` is the eigenvalue of the policy with base-K code `j`.
    pub table: Vec<f64>,
    pub count: u64,
    pub n_controls: usize,
    pub n_nodes: usize,
}

/// Policy with lexicographic code `index`: node 0 is the most significant digit.
pub fn decode_policy(index: u64, n_nodes: usize, k: usize) -> Vec<usize> {
    let mut out = vec![0; n_nodes];
    let mut r = index;
    for slot in out.iter_mut().rev() {
        *slot = (r % k as u64) as usize;
        r /= k as u64;
    }
    out
}

pub fn encode_policy(policy: &[usize], k: usize) -> u64 {
    policy.iter().fold(0u64, |acc, &z| acc * k as u64 + z as u64)
}

/// Base-K digit string of a policy (digits beyond 9 are written as `a`, `b`, ...).
pub fn policy_digits(policy: &[usize], k: usize) -> String {
    policy
        .iter()
        .map(|&z| std::char::from_digit(z as u32, k.max(2) as u32).unwrap_or('?'))
        .collect()
}

/// Dense rows of the operator for one control, built straight from the
/// coefficient expressions on full-grid multi-indices.
fn dense_control_rows(disc: &Discretization, k: usize) -> Result<Vec<Vec<f64>>, OracleError> {
    let g = disc.grid;
    let p = disc.problem;
    let n = g.n_interior();
    let ishape = g.interior_shape();
    let u = p.controls.point(k);
    let mut a = vec![vec![0.0; n]; n];
    for (row, out) in a.iter_mut().enumerate() {
        // interior multi-index, 0-based within the interior block
        let mut im = vec![0usize; g.dim()];
        let mut r = row;
        for j in (0..g.dim()).rev() {
            im[j] = r % ishape[j];
            r /= ishape[j];
        }
        let x: Vec<f64> = (0..g.dim())
            .map(|j| -g.extents(j).0 + (im[j] + 1) as f64 * g.steps()[j])
            .collect();
        let err = |source| OracleError::Eval {
            coords: x.clone(),
            control: k,
            source,
        };
        out[row] += p.cost.eval(&x, u).map_err(err)?;
        for j in 0..g.dim() {
            let h = g.steps()[j];
            let s = p.sigma[j].eval(&x, u).map_err(err)?;
            let a_jj = 0.5 * s * s;
            let b = p.drift[j].eval(&x, u).map_err(err)?;
            let central = disc.scheme == DriftScheme::Hybrid && b.abs() * h < 2.0 * a_jj;
            let (lo, hi) = if central {
                (a_jj / (h * h) - b / (2.0 * h), a_jj / (h * h) + b / (2.0 * h))
            } else {
                (
                    a_jj / (h * h) + (-b).max(0.0) / h,
                    a_jj / (h * h) + b.max(0.0) / h,
                )
            };
            out[row] -= lo + hi;
            let stride: usize = ishape[j + 1..].iter().product();
            if im[j] > 0 {
                out[row - stride] += lo;
            }
            if im[j] + 1 < ishape[j] {
                out[row + stride] += hi;
            }
        }
    }
    Ok(a)
}

/// Perron root of a dense matrix with nonnegative off-diagonals.
///
/// Shift `1 + max_i sum_j |a_ij|`, sup-norm normalization, stops when the
/// spread of `(Ax)_i / x_i` falls below `tol`.
pub fn dense_perron(a: &[Vec<f64>], tol: f64, max_iter: usize) -> Option<(f64, Vec<f64>)> {
    let n = a.len();
    let s = 1.0 + a.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut x = vec![1.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..max_iter {
        for i in 0..n {
            y[i] = s * x[i] + a[i].iter().zip(&x).map(|(p, q)| p * q).sum::<f64>();
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let r = y[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if hi - lo <= tol {
            return Some((0.5 * (lo + hi) - s, x));
        }
        let norm = y.iter().cloned().fold(0.0, f64::max);
        for i in 0..n {
            x[i] = y[i] / norm;
        }
    }
    None
}

/// Optimal eigenvalue over all `K^N` stationary policies.
pub fn brute_optimum(
    disc: &Discretization,
    sense: Sense,
    limit: u64,
) -> Result<OracleResult, OracleError> {
    let n = disc.n();
    let k = disc.n_controls();
    let count = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if count > limit as u128 {
        return Err(OracleError::TooLarge { count, limit });
    }
    let count = count as u64;
    let per_control: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|z| dense_control_rows(disc, z))
        .collect::<Result<_, _>>()?;

    // indexed parallel collect keeps lexicographic order
    let table: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|idx| {
            let pol = decode_policy(idx, n, k);
            let a: Vec<Vec<f64>> = pol
                .iter()
                .enumerate()
                .map(|(i, &z)| per_control[z][i].clone())
                .collect();
            dense_perron(&a, DENSE_TOL, DENSE_MAX_ITER)
                .map(|(l, _)| l)
                .ok_or(OracleError::NonConvergence { index: idx })
        })
        .collect::<Result<_, _>>()?;

    let mut best = 0usize;
    for (j, &l) in table.iter().enumerate() {
        let better = match sense {
            Sense::Min => l < table[best],
            Sense::Max => l > table[best],
        };
        if better {
            best = j;
        }
    }
    Ok(OracleResult {
        sense,
        best_lambda: table[best],
        best_index: best as u64,
        best_policy: decode_policy(best as u64, n, k),
        table,
        count,
        n_controls: k,
        n_nodes: n,
    })
}

impl OracleResult {
    /// CSV with columns `policy,lambda`.
    pub fn write_table<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "policy,lambda")?;
        for (j, l) in self.table.iter().enumerate() {
            let pol = decode_policy(j as u64, self.n_nodes, self.n_controls);
            writeln!(w, "{},{:.16e}", policy_digits(&pol, self.n_controls), l)?;
        }
        Ok(())
    }

    pub fn policy_field(&self) -> PolicyField {
        PolicyField::from_vec(self.best_policy.clone())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub pass: bool,
    pub tol: f64,
    pub pia_lambda: f64,
    pub oracle_lambda: f64,
    pub difference: f64,
    pub pia_policy: String,
    pub oracle_policy: String,
    pub policies_agree: bool,
}

/// Pass iff the two eigenvalues agree within `tol`; policies may differ at ties.
pub fn crosscheck(pia: &SolveResult, oracle: &OracleResult, tol: f64) -> CrossCheck {
    crosscheck_values(pia.eig.lambda, pia.policy.as_slice(), oracle, tol)
}

/// [`crosscheck`] against a stored eigenvalue and policy.
pub fn crosscheck_values(lambda: f64, policy: &[usize], oracle: &OracleResult, tol: f64) -> CrossCheck {
    let diff = (lambda - oracle.best_lambda).abs();
    CrossCheck {
        pass: diff <= tol,
        tol,
        pia_lambda: lambda,
        oracle_lambda: oracle.best_lambda,
        difference: diff,
        pia_policy: policy_digits(policy, oracle.n_controls),
        oracle_policy: policy_digits(&oracle.best_policy, oracle.n_controls),
        policies_agree: policy == oracle.best_policy.as_slice(),
    }
}
