//! Monotone finite-difference discretization of `trace(a D^2 f) + b . Df + c f`
//! on the interior nodes of a [`Grid`], with Dirichlet (zero) exterior values.
//!
//! Per axis `j` with step `h`, diffusion `a = sigma_j^2 / 2` and drift `beta = b_j`:
//!
//! * upwind: `+h` neighbour `a/h^2 + beta+/h`, `-h` neighbour `a/h^2 + beta-/h`,
//!   diagonal `-2a/h^2 - |beta|/h`;
//! * hybrid: central differences `a/h^2 +- beta/(2h)`, diagonal `-2a/h^2`, whenever
//!   `|beta| h < 2a`, and the upwind row otherwise.
//!
//! Both keep every off-diagonal entry nonnegative, so `M + sI` is a nonnegative
//! matrix for `s >= max |M_ii|`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::lattice::Grid;
use crate::model::ProblemSpec;

#[derive(Debug, Error)]
pub enum GenmatError {
    #[error("evaluation failed at node {coords:?} with control {control}: {source}")]
    Eval {
        coords: Vec<f64>,
        control: usize,
        #[source]
        source: EvalError,
    },
    #[error("policy covers {got} nodes, grid has {expected} interior nodes")]
    PolicyLength { expected: usize, got: usize },
    #[error("policy assigns control {index} at node {node}, control set has {count}")]
    ControlIndex {
        node: usize,
        index: usize,
        count: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftScheme {
    Upwind,
    #[default]
    Hybrid,
}

/// A stationary Markov control on the interior nodes (control indices).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyField(Vec<usize>);

impl PolicyField {
    pub fn constant(n: usize, k: usize) -> Self {
        Self(vec![k; n])
    }

    pub fn from_vec(v: Vec<usize>) -> Self {
        Self(v)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn changes_from(&self, other: &PolicyField) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub fn validate(&self, n_interior: usize, n_controls: usize) -> Result<(), GenmatError> {
        if self.0.len() != n_interior {
            return Err(GenmatError::PolicyLength {
                expected: n_interior,
                got: self.0.len(),
            });
        }
        match self.0.iter().position(|&k| k >= n_controls) {
            Some(node) => Err(GenmatError::ControlIndex {
                node,
                index: self.0[node],
                count: n_controls,
            }),
            None => Ok(()),
        }
    }
}

/// One assembled row: diagonal plus the off-diagonals to interior neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStencil {
    pub diag: f64,
    pub off: Vec<(usize, f64)>,
}

impl RowStencil {
    pub fn apply(&self, i: usize, v: &[f64]) -> f64 {
        let mut s = self.diag * v[i];
        for &(j, w) in &self.off {
            s += w * v[j];
        }
        s
    }
}

/// A problem paired with a grid and drift scheme.
#[derive(Debug, Clone, Copy)]
pub struct Discretization<'a> {
    pub problem: &'a ProblemSpec,
    pub grid: &'a Grid,
    pub scheme: DriftScheme,
}

impl<'a> Discretization<'a> {
    pub fn new(problem: &'a ProblemSpec, grid: &'a Grid, scheme: DriftScheme) -> Self {
        Self {
            problem,
            grid,
            scheme,
        }
    }

    pub fn n(&self) -> usize {
        self.grid.n_interior()
    }

    pub fn n_controls(&self) -> usize {
        self.problem.controls.len()
    }

    /// Row `i` of the operator under control index `k`.
    pub fn stencil(&self, k: usize, i: usize) -> Result<RowStencil, GenmatError> {
        let g = self.grid;
        let p = self.problem;
        let x = g.interior_point(i);
        let u = p.controls.point(k);
        let wrap = |source| GenmatError::Eval {
            coords: x.clone(),
            control: k,
            source,
        };

        let mut diag = p.cost_at(&x, u).map_err(wrap)?;
        let mut off = Vec::with_capacity(2 * g.dim());
        let neighbors = g.interior_neighbors(i);
        for j in 0..g.dim() {
            let h = g.steps()[j];
            let a = p.diffusion_at(j, &x).map_err(wrap)?;
            let beta = p.drift_at(j, &x, u).map_err(wrap)?;
            let diff = a / (h * h);
            let (minus, plus, centre) = match self.scheme {
                DriftScheme::Hybrid if beta.abs() * h < 2.0 * a => {
                    let adv = beta / (2.0 * h);
                    (diff - adv, diff + adv, -2.0 * diff)
                }
                _ => (
                    diff + (-beta).max(0.0) / h,
                    diff + beta.max(0.0) / h,
                    -2.0 * diff - beta.abs() / h,
                ),
            };
            diag += centre;
            for &(axis, dir, n) in &neighbors {
                if axis == j {
                    off.push((n, if dir < 0 { minus } else { plus }));
                }
            }
        }
        Ok(RowStencil { diag, off })
    }

    /// `(M_k V)_i` without materializing the matrix.
    pub fn row_apply(&self, k: usize, i: usize, v: &[f64]) -> Result<f64, GenmatError> {
        Ok(self.stencil(k, i)?.apply(i, v))
    }

    pub fn assemble_control(&self, k: usize) -> Result<GeneratorMatrix, GenmatError> {
        let policy = PolicyField::constant(self.n(), k);
        let mut m = self.assemble_policy(&policy)?;
        m.label = format!("control {k}");
        Ok(m)
    }

    pub fn assemble_policy(&self, v: &PolicyField) -> Result<GeneratorMatrix, GenmatError> {
        v.validate(self.n(), self.n_controls())?;
        let rows: Vec<RowStencil> = (0..self.n())
            .into_par_iter()
            .map(|i| self.stencil(v.get(i), i))
            .collect::<Result<_, _>>()?;
        Ok(GeneratorMatrix::from_rows(
            rows,
            self.grid.origin_interior(),
            "policy".into(),
        ))
    }
}

/// Square sparse matrix over interior nodes. Rows are stored at a fixed width
/// (the longest row); short rows are padded after their last entry with zero
/// values pointing at the diagonal, which leave every product bit for bit unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    width: usize,
    row_len: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    diag_pos: Vec<usize>,
    origin: usize,
    shift_hint: f64,
    label: String,
}

impl GeneratorMatrix {
    pub fn from_rows(rows: Vec<RowStencil>, origin: usize, label: String) -> Self {
        let n = rows.len();
        let width = rows.iter().map(|r| r.off.len() + 1).max().unwrap_or(1);
        let mut row_len = Vec::with_capacity(n);
        let mut col_idx = Vec::with_capacity(n * width);
        let mut values = Vec::with_capacity(n * width);
        let mut diag_pos = Vec::with_capacity(n);
        for (i, r) in rows.into_iter().enumerate() {
            let mut entries = r.off;
            entries.push((i, r.diag));
            entries.sort_by_key(|e| e.0);
            row_len.push(entries.len());
            let pad = width - entries.len();
            for (j, v) in entries {
                if j == i {
                    diag_pos.push(col_idx.len());
                }
                col_idx.push(u32::try_from(j).expect("matrix dimension fits in u32"));
                values.push(v);
            }
            for _ in 0..pad {
                col_idx.push(i as u32);
                values.push(0.0);
            }
        }
        let mut m = Self {
            width,
            row_len,
            col_idx,
            values,
            diag_pos,
            origin,
            shift_hint: 0.0,
            label,
        };
        m.refresh_shift();
        m
    }

    /// Builds from a dense square matrix, keeping nonzero off-diagonals.
    pub fn from_dense(a: &[Vec<f64>], origin: usize) -> Self {
        let rows = a
            .iter()
            .enumerate()
            .map(|(i, row)| RowStencil {
                diag: row[i],
                off: row
                    .iter()
                    .enumerate()
                    .filter(|&(j, &v)| j != i && v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect(),
            })
            .collect();
        Self::from_rows(rows, origin, "dense".into())
    }

    fn refresh_shift(&mut self) {
        let max_diag = self
            .diag_pos
            .iter()
            .map(|&p| self.values[p].abs())
            .fold(0.0, f64::max);
        self.shift_hint = 1.0 + max_diag;
    }

    pub fn n(&self) -> usize {
        self.diag_pos.len()
    }

    pub fn origin(&self) -> usize {
        self.origin
    }

    pub fn shift_hint(&self) -> f64 {
        self.shift_hint
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.values[self.diag_pos[i]]
    }

    /// Entries `(col, value)` of row `i`, columns ascending.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = i * self.width..i * self.width + self.row_len[i];
        self.col_idx[r.clone()]
            .iter()
            .map(|&j| j as usize)
            .zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|e| e.1).sum()
    }

    /// Smallest off-diagonal entry (`+inf` when there are none).
    pub fn min_off_diagonal(&self) -> f64 {
        (0..self.n())
            .flat_map(|i| self.row(i).filter(move |e| e.0 != i).map(|e| e.1))
            .fold(f64::INFINITY, f64::min)
    }

    /// `out = (M + shift I) v`.
    pub fn mul_shifted(&self, v: &[f64], shift: f64, out: &mut [f64]) {
        match self.width {
            3 => self.mul_fixed::<3>(v, shift, out),
            5 => self.mul_fixed::<5>(v, shift, out),
            w => self.mul_rows(v, shift, out, |vals, cols, s| {
                vals[..w]
                    .iter()
                    .zip(&cols[..w])
                    .fold(s, |s, (&a, &j)| s + a * v[j as usize])
            }),
        }
    }

    // fixed-size rows unroll; the sum runs left to right as in the generic case
    fn mul_fixed<const W: usize>(&self, v: &[f64], shift: f64, out: &mut [f64]) {
        self.mul_rows(v, shift, out, |vals, cols, mut s| {
            for k in 0..W {
                s += vals[k] * v[cols[k] as usize];
            }
            s
        })
    }

    fn mul_rows(
        &self,
        v: &[f64],
        shift: f64,
        out: &mut [f64],
        row: impl Fn(&[f64], &[u32], f64) -> f64 + Sync,
    ) {
        const PAR_ROWS: usize = 1 << 15;
        let w = self.width;
        if self.n() >= PAR_ROWS {
            let rows = self.values.par_chunks_exact(w).zip(self.col_idx.par_chunks_exact(w));
            out.par_iter_mut()
                .zip(rows)
                .enumerate()
                .for_each(|(i, (o, (vals, cols)))| *o = row(vals, cols, shift * v[i]));
        } else {
            let rows = self.values.chunks_exact(w).zip(self.col_idx.chunks_exact(w));
            for (i, (o, (vals, cols))) in out.iter_mut().zip(rows).enumerate() {
                *o = row(vals, cols, shift * v[i]);
            }
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.mul_shifted(v, 0.0, &mut out);
        out
    }

    /// `M + delta I`.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut m = self.clone();
        for &p in &m.diag_pos {
            m.values[p] += delta;
        }
        m.refresh_shift();
        m
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| {
                let mut row = vec![0.0; self.n()];
                for (j, v) in self.row(i) {
                    row[j] = v;
                }
                row
            })
            .collect()
    }

    /// Coordinate-triplet dump, one `row col value` per line, 17 significant digits.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        for i in 0..self.n() {
            for (j, v) in self.row(i) {
                writeln!(w, "{i} {j} {v:.16e}")?;
            }
        }
        Ok(())
    }
}
