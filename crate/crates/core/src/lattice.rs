//! Truncated rectangular lattices `[-R_1,R_1] x ... x [-R_d,R_d]`.
//!
//! Nodes carry multi-indices `i_j in 0..=2 n_j` with `n_j = R_j / h_j`, so the
//! coordinate of index `i_j` is `(i_j - n_j) h_j` and the origin is a node.
//! Ordering is lexicographic (last axis fastest). Interior nodes are those whose
//! neighbours all lie in the closed box, i.e. `1 <= i_j <= 2 n_j - 1`.
//!
//! Symmetric boxes always have an odd number of interior nodes per axis;
//! [`build_box`] allows unequal extents below and above the origin (still with
//! the origin on a node) for tiny instances that need other counts.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("unsupported dimension {0} (1 or 2)")]
    UnsupportedDimension(usize),
    #[error("axis {axis}: radius {radius} / step {step} is not an integer")]
    NonIntegerRatio { axis: usize, radius: f64, step: f64 },
    #[error("axis {axis}: radius and step must be positive (got {radius}, {step})")]
    NonPositive { axis: usize, radius: f64, step: f64 },
    #[error("expected {expected} per-axis values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("refinement radii must be strictly increasing on every axis")]
    NotIncreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    d: usize,
    /// Per-axis distance from the origin to the nearest face.
    radii: Vec<f64>,
    steps: Vec<f64>,
    /// Steps from the lower face to the origin, and from the origin to the upper face.
    below: Vec<usize>,
    above: Vec<usize>,
}

pub fn build_grid(d: usize, radii: &[f64], steps: &[f64]) -> Result<Grid, LatticeError> {
    build_box(d, radii, radii, steps)
}

/// Box `prod [-lower_j, upper_j]`; both extents must be integer multiples of the step.
pub fn build_box(
    d: usize,
    lower: &[f64],
    upper: &[f64],
    steps: &[f64],
) -> Result<Grid, LatticeError> {
    if !(1..=2).contains(&d) {
        return Err(LatticeError::UnsupportedDimension(d));
    }
    for v in [lower, upper, steps] {
        if v.len() != d {
            return Err(LatticeError::Length {
                expected: d,
                got: v.len(),
            });
        }
    }
    let count = |axis: usize, radius: f64, step: f64| {
        if !(radius > 0.0 && step > 0.0) || !radius.is_finite() || !step.is_finite() {
            return Err(LatticeError::NonPositive { axis, radius, step });
        }
        let ratio = radius / step;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) || n < 1.0 {
            return Err(LatticeError::NonIntegerRatio { axis, radius, step });
        }
        Ok(n as usize)
    };
    let mut below = Vec::with_capacity(d);
    let mut above = Vec::with_capacity(d);
    for axis in 0..d {
        below.push(count(axis, lower[axis], steps[axis])?);
        above.push(count(axis, upper[axis], steps[axis])?);
    }
    Ok(Grid {
        d,
        radii: lower.iter().zip(upper).map(|(a, b)| a.min(*b)).collect(),
        steps: steps.to_vec(),
        below,
        above,
    })
}

/// Grids with the steps of `g` and each of the given radii (one vector per grid).
pub fn nested_refinements(g: &Grid, radii_list: &[Vec<f64>]) -> Result<Vec<Grid>, LatticeError> {
    for w in radii_list.windows(2) {
        if w[0].len() != w[1].len() || w[0].iter().zip(&w[1]).any(|(a, b)| !(b > a)) {
            return Err(LatticeError::NotIncreasing);
        }
    }
    radii_list
        .iter()
        .map(|r| build_grid(g.d, r, &g.steps))
        .collect()
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Nodes per axis in the full grid, `2 n_j + 1` for a symmetric box.
    pub fn full_shape(&self) -> Vec<usize> {
        self.below.iter().zip(&self.above).map(|(a, b)| a + b + 1).collect()
    }

    /// Interior nodes per axis, `2 n_j - 1` for a symmetric box.
    pub fn interior_shape(&self) -> Vec<usize> {
        self.below.iter().zip(&self.above).map(|(a, b)| a + b - 1).collect()
    }

    /// Per-axis extents `(lower, upper)` of the box.
    pub fn extents(&self, axis: usize) -> (f64, f64) {
        let h = self.steps[axis];
        (self.below[axis] as f64 * h, self.above[axis] as f64 * h)
    }

    pub fn is_symmetric(&self) -> bool {
        self.below == self.above
    }

    pub fn n_total(&self) -> usize {
        self.full_shape().iter().product()
    }

    pub fn n_interior(&self) -> usize {
        self.interior_shape().iter().product()
    }

    /// Coordinate of full-grid multi-index component `i` on `axis`.
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        (i as f64 - self.below[axis] as f64) * self.steps[axis]
    }

    pub fn point(&self, multi: &[usize]) -> Vec<f64> {
        multi
            .iter()
            .enumerate()
            .map(|(j, &i)| self.coord(j, i))
            .collect()
    }

    /// Full-grid multi-index of full-grid node `k`.
    pub fn full_multi(&self, k: usize) -> Vec<usize> {
        unravel(k, &self.full_shape())
    }

    pub fn full_index(&self, multi: &[usize]) -> usize {
        ravel(multi, &self.full_shape())
    }

    /// Full-grid multi-index of interior node `k`.
    pub fn interior_multi(&self, k: usize) -> Vec<usize> {
        let mut m = unravel(k, &self.interior_shape());
        m.iter_mut().for_each(|i| *i += 1);
        m
    }

    /// Interior index of a full-grid multi-index, if the node is interior.
    pub fn interior_index(&self, multi: &[usize]) -> Option<usize> {
        let shape = self.interior_shape();
        let mut k = 0;
        for (j, &i) in multi.iter().enumerate() {
            if i == 0 || i > shape[j] {
                return None;
            }
            k = k * shape[j] + (i - 1);
        }
        Some(k)
    }

    pub fn interior_point(&self, k: usize) -> Vec<f64> {
        self.point(&self.interior_multi(k))
    }

    pub fn is_interior(&self, full: usize) -> bool {
        self.interior_index(&self.full_multi(full)).is_some()
    }

    pub fn is_boundary(&self, full: usize) -> bool {
        !self.is_interior(full)
    }

    pub fn interior_mask(&self) -> Vec<bool> {
        (0..self.n_total()).map(|k| self.is_interior(k)).collect()
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.n_total()).map(|k| self.is_boundary(k)).collect()
    }

    /// Full-grid index of the node at `x = 0`.
    pub fn origin_full(&self) -> usize {
        self.full_index(&self.below)
    }

    /// Interior index of the node at `x = 0`.
    pub fn origin_interior(&self) -> usize {
        self.interior_index(&self.below)
            .expect("origin is interior when every extent is at least one step")
    }

    /// Full-grid indices of the outermost shell (boundary nodes).
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.n_total()).filter(|&k| self.is_boundary(k)).collect()
    }

    /// Interior neighbours of interior node `k`: `(axis, direction, interior index)`.
    pub fn interior_neighbors(&self, k: usize) -> Vec<(usize, i8, usize)> {
        let multi = self.interior_multi(k);
        let mut out = Vec::with_capacity(2 * self.d);
        let mut m = multi.clone();
        for j in 0..self.d {
            for dir in [-1i8, 1] {
                m[j] = (multi[j] as isize + dir as isize) as usize;
                if let Some(n) = self.interior_index(&m) {
                    out.push((j, dir, n));
                }
                m[j] = multi[j];
            }
        }
        out
    }

    /// Cell volume `prod h_j`.
    pub fn cell_volume(&self) -> f64 {
        self.steps.iter().product()
    }

    pub fn same_steps(&self, other: &Grid) -> bool {
        self.steps == other.steps
    }
}

fn unravel(mut k: usize, shape: &[usize]) -> Vec<usize> {
    let mut out = vec![0; shape.len()];
    for j in (0..shape.len()).rev() {
        out[j] = k % shape[j];
        k /= shape[j];
    }
    out
}

fn ravel(multi: &[usize], shape: &[usize]) -> usize {
    multi
        .iter()
        .zip(shape)
        .fold(0, |acc, (&i, &n)| acc * n + i)
}
