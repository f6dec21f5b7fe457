//! Monte Carlo layer: Euler–Maruyama paths of the controlled diffusion and of
//! its ground-state (twisted) process, the finite-horizon risk-sensitive cost,
//! and the Feynman–Kac martingale check of a computed eigenpair.
//!
//! Every path draws from its own ChaCha8 stream (`seed`, stream = path index),
//! and every reduction runs in path order, so no output depends on the number
//! of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Compiled, EvalError, Expr};
use crate::genmat::PolicyField;
use crate::lattice::Grid;
use crate::model::ProblemSpec;
use crate::perron::EigenPair;

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("path {path}, t = {time}: {source}")]
    Eval {
        path: usize,
        time: f64,
        source: EvalError,
    },
    #[error("invalid Monte Carlo configuration: {0}")]
    Config(String),
    #[error("policy has {got} entries, grid has {expected} interior nodes")]
    PolicyLength { expected: usize, got: usize },
}

/// What happens when a path leaves the grid's box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitPolicy {
    /// The box only matters for the control lookup (clamped to the nearest node).
    #[default]
    Free,
    /// Freeze the path at the first step that leaves the open box.
    Stop,
    /// Mirror at the faces; diagnostics only.
    Reflect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub exit: ExitPolicy,
}

impl McConfig {
    fn validate(&self, d: usize) -> Result<usize, SdeError> {
        if self.x0.len() != d {
            return Err(SdeError::Config(format!(
                "x0 has {} components, the state has {d}",
                self.x0.len()
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SdeError::Config("dt must be positive".into()));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(SdeError::Config("horizon must be nonnegative".into()));
        }
        if self.n_paths == 0 {
            return Err(SdeError::Config("n_paths must be at least 1".into()));
        }
        Ok(self.steps())
    }

    /// Number of Euler steps; the step actually taken is `horizon / steps`.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn step_size(&self) -> f64 {
        match self.steps() {
            0 => self.dt,
            n => self.horizon / n as f64,
        }
    }
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Nearest-interior-node lookup of a grid policy, plus box geometry.
struct Lookup<'a> {
    shape: Vec<usize>,
    steps: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    controls: Vec<&'a [f64]>,
}

impl<'a> Lookup<'a> {
    fn new(p: &'a ProblemSpec, g: &'a Grid, policy: &PolicyField) -> Result<Self, SdeError> {
        if policy.len() != g.n_interior() {
            return Err(SdeError::PolicyLength {
                expected: g.n_interior(),
                got: policy.len(),
            });
        }
        let (lower, upper) = (0..g.dim()).map(|j| g.extents(j)).map(|(l, u)| (-l, u)).unzip();
        Ok(Self {
            shape: g.interior_shape(),
            steps: g.steps().to_vec(),
            lower,
            upper,
            controls: policy
                .as_slice()
                .iter()
                .map(|&k| p.controls.point(k))
                .collect(),
        })
    }

    fn node(&self, x: &[f64]) -> usize {
        let mut k = 0;
        for j in 0..x.len() {
            let n = self.shape[j];
            let i = ((x[j] - self.lower[j]) / self.steps[j]).round() - 1.0;
            let i = i.clamp(0.0, (n - 1) as f64) as usize;
            k = k * n + i;
        }
        k
    }

    fn control(&self, x: &[f64]) -> &'a [f64] {
        if self.controls.len() == 1 {
            return self.controls[0];
        }
        self.controls[self.node(x)]
    }

    fn inside_open(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v > *lo && *v < *hi)
    }

    fn reflect(&self, x: &mut [f64]) {
        for j in 0..x.len() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            let w = hi - lo;
            // fold into [lo, hi] with period 2w
            let mut t = (x[j] - lo).rem_euclid(2.0 * w);
            if t > w {
                t = 2.0 * w - t;
            }
            x[j] = lo + t;
        }
    }
}

/// Multilinear interpolation of a field given on interior nodes, with either
/// zero values on the boundary shell and outside the box (the Dirichlet
/// extension) or coordinates clamped to the interior hull.
struct Field<'a> {
    values: &'a [f64],
    dirichlet: bool,
    offset: Vec<f64>,
    steps: Vec<f64>,
    full: Vec<usize>,
    inner: Vec<usize>,
}

impl<'a> Field<'a> {
    fn new(g: &Grid, values: &'a [f64], dirichlet: bool) -> Self {
        Self {
            values,
            dirichlet,
            offset: (0..g.dim()).map(|j| g.extents(j).0).collect(),
            steps: g.steps().to_vec(),
            full: g.full_shape(),
            inner: g.interior_shape(),
        }
    }

    fn at(&self, x: &[f64]) -> f64 {
        let d = self.full.len();
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for j in 0..d {
            let full = self.full[j];
            let mut s = (x[j] + self.offset[j]) / self.steps[j];
            let (smin, smax) = if self.dirichlet {
                (0.0, (full - 1) as f64)
            } else {
                (1.0, (full - 2) as f64)
            };
            if self.dirichlet && !(s >= smin && s <= smax) {
                return 0.0;
            }
            s = s.clamp(smin, smax);
            let i = (s.floor() as usize).min(full - 2);
            base[j] = i;
            frac[j] = s - i as f64;
        }
        let mut acc = 0.0;
        'corners: for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut k = 0;
            for j in 0..d {
                let up = (corner >> j) & 1;
                let i = base[j] + up;
                w *= if up == 1 { frac[j] } else { 1.0 - frac[j] };
                // boundary shell: zero under Dirichlet, never reached when clamped
                if i == 0 || i > self.inner[j] {
                    continue 'corners;
                }
                k = k * self.inner[j] + (i - 1);
            }
            if w != 0.0 {
                acc += w * self.values[k];
            }
        }
        acc
    }
}

/// Per-axis gradient of `log V` on interior nodes: central differences where
/// both neighbours are interior, one-sided towards the inside otherwise.
fn log_gradient(g: &Grid, v: &[f64]) -> Vec<Vec<f64>> {
    let lv: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    (0..g.dim())
        .map(|j| {
            let h = g.steps()[j];
            (0..g.n_interior())
                .map(|i| {
                    let nb = g.interior_neighbors(i);
                    let minus = nb.iter().find(|e| e.0 == j && e.1 < 0).map(|e| e.2);
                    let plus = nb.iter().find(|e| e.0 == j && e.1 > 0).map(|e| e.2);
                    match (minus, plus) {
                        (Some(a), Some(b)) => (lv[b] - lv[a]) / (2.0 * h),
                        (Some(a), None) => (lv[i] - lv[a]) / h,
                        (None, Some(b)) => (lv[b] - lv[i]) / h,
                        (None, None) => 0.0,
                    }
                })
                .collect()
        })
        .collect()
}

enum DriftMode<'a> {
    Plain,
    /// Adds `2a grad log V`.
    Twisted(Vec<Field<'a>>),
}

/// One Euler–Maruyama integrator bound to a problem, grid policy and mode.
struct Stepper<'a> {
    p: &'a ProblemSpec,
    cost: Compiled,
    drift: Vec<Compiled>,
    sigma: Vec<Compiled>,
    look: Lookup<'a>,
    /// `sigma_j` when it does not depend on the state.
    sigma_const: Option<Vec<f64>>,
    mode: DriftMode<'a>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PathEnd {
    /// `sum_k c(X_k) dt` up to the stopping step.
    integral: f64,
    integral_half: f64,
    /// Undiscounted `sum_k c(X_k)`, so constant costs average back exactly.
    cost_sum: f64,
    /// Time at which the path stopped (`horizon` if it never exited).
    stop_time: f64,
    exited: bool,
}

impl<'a> Stepper<'a> {
    fn new(
        p: &'a ProblemSpec,
        g: &'a Grid,
        policy: &PolicyField,
        mode: DriftMode<'a>,
    ) -> Result<Self, SdeError> {
        let sigma_const = if p.sigma.iter().all(|s| s.free_vars().is_empty()) {
            let zero = vec![0.0; p.d];
            let u = vec![0.0; p.m];
            Some(
                p.sigma
                    .iter()
                    .map(|s| s.eval(&zero, &u))
                    .collect::<Result<_, _>>()
                    .map_err(|source| SdeError::Eval {
                        path: 0,
                        time: 0.0,
                        source,
                    })?,
            )
        } else {
            None
        };
        Ok(Self {
            p,
            cost: p.cost.compile(),
            drift: p.drift.iter().map(Expr::compile).collect(),
            sigma: p.sigma.iter().map(Expr::compile).collect(),
            look: Lookup::new(p, g, policy)?,
            sigma_const,
            mode,
        })
    }

    /// Runs one path, calling `observe(x)` on the state after every step.
    fn run(
        &self,
        path: usize,
        cfg: &McConfig,
        with_cost: bool,
        mut observe: impl FnMut(&[f64]),
    ) -> Result<(PathEnd, Vec<f64>), SdeError> {
        let d = self.p.d;
        let n = cfg.steps();
        let dt = cfg.step_size();
        let sq = dt.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(path as u64);
        let mut x = cfg.x0.clone();
        let mut drift = vec![0.0; d];
        let mut sig = vec![0.0; d];
        let mut sum = Neumaier::default();
        let mut half = 0.0;
        let mut stop_time = n as f64 * dt;
        let mut exited = false;
        let err = |k: usize, source| SdeError::Eval {
            path,
            time: k as f64 * dt,
            source,
        };

        for k in 0..n {
            if k == n / 2 {
                half = sum.value() * dt;
            }
            let u = self.look.control(&x);
            if with_cost {
                sum.add(self.cost.eval(&x, u).map_err(|e| err(k, e))?);
            }
            for j in 0..d {
                drift[j] = self.drift[j].eval(&x, u).map_err(|e| err(k, e))?;
                sig[j] = match &self.sigma_const {
                    Some(s) => s[j],
                    None => self.sigma[j].eval(&x, u).map_err(|e| err(k, e))?,
                };
            }
            if let DriftMode::Twisted(grad) = &self.mode {
                for j in 0..d {
                    drift[j] += sig[j] * sig[j] * grad[j].at(&x);
                }
            }
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                x[j] += drift[j] * dt + sig[j] * sq * z;
            }
            match cfg.exit {
                ExitPolicy::Free => {}
                ExitPolicy::Reflect => self.look.reflect(&mut x),
                ExitPolicy::Stop => {
                    if !self.look.inside_open(&x) {
                        stop_time = (k + 1) as f64 * dt;
                        exited = true;
                        if k < n / 2 {
                            half = sum.value() * dt;
                        }
                        observe(&x);
                        break;
                    }
                }
            }
            observe(&x);
        }
        if n == 0 {
            half = 0.0;
        }
        Ok((
            PathEnd {
                integral: sum.value() * dt,
                integral_half: half,
                cost_sum: sum.value(),
                stop_time,
                exited,
            },
            x,
        ))
    }
}

fn par_paths<T: Send>(
    n: usize,
    f: impl Fn(usize) -> Result<T, SdeError> + Sync + Send,
) -> Result<Vec<T>, SdeError> {
    (0..n).into_par_iter().map(f).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub n_paths: usize,
    pub steps: usize,
    pub dt: f64,
    /// Per-axis sample mean and standard error of `X_T`.
    pub mean_final: Vec<f64>,
    pub se_final: Vec<f64>,
    /// Sample mean of the running-cost integral.
    pub mean_integral: f64,
    pub max_integral: f64,
    pub fraction_exited: f64,
}

/// Euler–Maruyama ensemble of the controlled diffusion under a grid policy.
pub fn simulate_paths(
    p: &ProblemSpec,
    g: &Grid,
    policy: &PolicyField,
    cfg: &McConfig,
) -> Result<PathSummary, SdeError> {
    let steps = cfg.validate(p.d)?;
    let st = Stepper::new(p, g, policy, DriftMode::Plain)?;
    let ends = par_paths(cfg.n_paths, |i| st.run(i, cfg, true, |_| {}))?;
    let n = ends.len() as f64;
    let mut mean = vec![0.0; p.d];
    let mut sq = vec![0.0; p.d];
    for (_, x) in &ends {
        for j in 0..p.d {
            mean[j] += x[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for (_, x) in &ends {
        for j in 0..p.d {
            sq[j] += (x[j] - mean[j]).powi(2);
        }
    }
    let se = sq
        .iter()
        .map(|s| if n > 1.0 { (s / (n - 1.0) / n).sqrt() } else { 0.0 })
        .collect();
    Ok(PathSummary {
        n_paths: cfg.n_paths,
        steps,
        dt: cfg.step_size(),
        mean_final: mean,
        se_final: se,
        mean_integral: ends.iter().map(|e| e.0.integral).sum::<f64>() / n,
        max_integral: ends.iter().map(|e| e.0.integral).fold(f64::NEG_INFINITY, f64::max),
        fraction_exited: ends.iter().filter(|e| e.0.exited).count() as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Same estimator at `T/2`, to expose drift of the finite-horizon proxy.
    pub value_half: f64,
    pub n_effective: usize,
    pub max_exponent: f64,
    pub fraction_exited: f64,
    /// `(sum w)^2 / sum w^2` of the exponential weights.
    pub weight_ess: f64,
}

/// `(1/T) log mean exp(I)` with the max-exponent shift; returns the value, the
/// delta-method standard error and the weights' effective sample size.
fn log_mean_exp(ints: &[f64], t: f64) -> (f64, f64, f64) {
    let m = ints.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n = ints.len() as f64;
    let w: Vec<f64> = ints.iter().map(|i| (i - m).exp()).collect();
    let mean = w.iter().sum::<f64>() / n;
    let var = if n > 1.0 {
        w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let ess = w.iter().sum::<f64>().powi(2) / w.iter().map(|x| x * x).sum::<f64>();
    if t == 0.0 {
        return (0.0, 0.0, ess);
    }
    ((m + mean.ln()) / t, (var / n).sqrt() / mean / t, ess)
}

/// Finite-horizon, finite-sample proxy for the long-run risk-sensitive cost
/// `lim (1/T) log E exp(int_0^T c)`; biased for any finite `T` and `n`.
pub fn estimate_risk_cost(
    p: &ProblemSpec,
    g: &Grid,
    policy: &PolicyField,
    cfg: &McConfig,
) -> Result<McEstimate, SdeError> {
    let steps = cfg.validate(p.d)?;
    let st = Stepper::new(p, g, policy, DriftMode::Plain)?;
    let ends = par_paths(cfg.n_paths, |i| st.run(i, cfg, true, |_| {}).map(|e| e.0))?;
    let t = steps as f64 * cfg.step_size();
    let ints: Vec<f64> = ends.iter().map(|e| e.integral).collect();
    let halves: Vec<f64> = ends.iter().map(|e| e.integral_half).collect();
    let (value, se, ess) = if ints.iter().all(|&i| i == ints[0]) {
        // deterministic exponent: no sampling error at all
        let v = if steps > 0 { ends[0].cost_sum / steps as f64 } else { 0.0 };
        (v, 0.0, ints.len() as f64)
    } else {
        log_mean_exp(&ints, t)
    };
    let th = (steps / 2) as f64 * cfg.step_size();
    let value_half = if halves.iter().all(|&i| i == halves[0]) {
        if th > 0.0 { halves[0] / th } else { 0.0 }
    } else {
        log_mean_exp(&halves, th).0
    };
    Ok(McEstimate {
        value,
        std_error: se,
        value_half,
        n_effective: cfg.n_paths,
        max_exponent: ints.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        fraction_exited: ends.iter().filter(|e| e.exited).count() as f64 / ends.len() as f64,
        weight_ess: ess,
    })
}

/// Per-path ingredients of the Feynman–Kac functional, reusable for any trial
/// eigenvalue (negative controls cost no extra simulation).
#[derive(Debug, Clone)]
pub struct FkSample {
    pub v0: f64,
    pub t_max: f64,
    pub dt: f64,
    pub h: f64,
    integral: Vec<f64>,
    stop_time: Vec<f64>,
    v_end: Vec<f64>,
    pub fraction_exited: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FkReport {
    pub pass: bool,
    pub lambda: f64,
    pub x0: Vec<f64>,
    pub t_max: f64,
    pub v0: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// Declared discretization allowance `V(x0) (t_max dt (1 + |lambda|) + h_max)`.
    pub bias_allowance: f64,
    pub difference: f64,
    pub z_score: f64,
    pub fraction_exited: f64,
    pub n_paths: usize,
}

impl FkSample {
    /// `E[exp(int (c - lambda)) V(X_{t ^ tau})]` against `V(x0)`.
    pub fn evaluate(&self, lambda: f64, x0: &[f64]) -> FkReport {
        let n = self.integral.len() as f64;
        // centred on V(x0) so that t_max = 0 reproduces it bit for bit
        let dev: Vec<f64> = (0..self.integral.len())
            .map(|i| {
                let w = if self.v_end[i] == 0.0 {
                    0.0
                } else {
                    (self.integral[i] - lambda * self.stop_time[i]).exp() * self.v_end[i]
                };
                w - self.v0
            })
            .collect();
        let mut s = Neumaier::default();
        dev.iter().for_each(|&x| s.add(x));
        let mean_dev = s.value() / n;
        let var = if n > 1.0 {
            dev.iter().map(|x| (x - mean_dev).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        let bias = self.v0 * (self.t_max * self.dt * (1.0 + lambda.abs()) + self.h);
        let bias = if self.t_max == 0.0 { 0.0 } else { bias };
        let difference = mean_dev.abs();
        FkReport {
            pass: difference <= 3.0 * se + bias,
            lambda,
            x0: x0.to_vec(),
            t_max: self.t_max,
            v0: self.v0,
            estimate: self.v0 + mean_dev,
            std_error: se,
            bias_allowance: bias,
            difference,
            z_score: if se > 0.0 { mean_dev / se } else { 0.0 },
            fraction_exited: self.fraction_exited,
            n_paths: self.integral.len(),
        }
    }
}

/// Simulates the stopped paths behind [`feynman_kac_check`]. The exit policy
/// of `cfg` is ignored: paths always stop on leaving the open box.
pub fn fk_sample(
    p: &ProblemSpec,
    g: &Grid,
    policy: &PolicyField,
    eig: &EigenPair,
    cfg: &McConfig,
    t_max: f64,
) -> Result<FkSample, SdeError> {
    let cfg = McConfig {
        horizon: t_max,
        exit: ExitPolicy::Stop,
        ..cfg.clone()
    };
    cfg.validate(p.d)?;
    if eig.vector.len() != g.n_interior() {
        return Err(SdeError::PolicyLength {
            expected: g.n_interior(),
            got: eig.vector.len(),
        });
    }
    let st = Stepper::new(p, g, policy, DriftMode::Plain)?;
    let v = Field::new(g, &eig.vector, true);
    let v0 = v.at(&cfg.x0);
    let runs = par_paths(cfg.n_paths, |i| {
        st.run(i, &cfg, true, |_| {}).map(|(end, x)| {
            let ve = if end.exited { 0.0 } else { v.at(&x) };
            (end, ve)
        })
    })?;
    Ok(FkSample {
        v0,
        t_max,
        dt: cfg.step_size(),
        h: g.steps().iter().cloned().fold(0.0, f64::max),
        integral: runs.iter().map(|r| r.0.integral).collect(),
        stop_time: runs.iter().map(|r| r.0.stop_time).collect(),
        v_end: runs.iter().map(|r| r.1).collect(),
        fraction_exited: runs.iter().filter(|r| r.0.exited).count() as f64 / runs.len() as f64,
    })
}

/// Martingale check of an eigenpair: pass iff the stopped Feynman–Kac
/// functional matches `V(x0)` within 3 standard errors plus the declared bias.
pub fn feynman_kac_check(
    p: &ProblemSpec,
    g: &Grid,
    policy: &PolicyField,
    eig: &EigenPair,
    cfg: &McConfig,
    t_max: f64,
) -> Result<FkReport, SdeError> {
    Ok(fk_sample(p, g, policy, eig, cfg, t_max)?.evaluate(eig.lambda, &cfg.x0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Histogram bins per axis over the box.
    pub bins: usize,
    /// Number of radii in the exit-fraction ladder (evenly spaced up to the box radius).
    pub ladder: usize,
    /// Radius of the ball used for return times; defaults to a quarter of the box radius.
    pub return_radius: Option<f64>,
    /// Initial time discarded from occupation statistics.
    pub burn_in: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            bins: 64,
            ladder: 8,
            return_radius: None,
            burn_in: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwistedReport {
    pub n_samples: u64,
    /// Pooled per-axis time averages over all paths after burn-in.
    pub axis_mean: Vec<f64>,
    pub axis_var: Vec<f64>,
    /// Standard error of `axis_var` from the spread of per-path variances.
    pub axis_var_se: Vec<f64>,
    pub bin_edges: Vec<Vec<f64>>,
    /// Occupation fractions, flattened lexicographically (last axis fastest).
    pub histogram: Vec<f64>,
    pub fraction_outside_box: f64,
    pub ladder_radii: Vec<f64>,
    pub fraction_outside: Vec<f64>,
    pub return_radius: f64,
    pub excursions: usize,
    pub mean_return_time: f64,
    /// Exponential decay rate of the return-time survival function (least
    /// squares on `log P(tau > t)`).
    pub return_tail_rate: f64,
    /// Final position of each path, in path order.
    pub final_positions: Vec<Vec<f64>>,
}

#[derive(Default)]
struct PathStats {
    n: u64,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    hist: Vec<u64>,
    outside_box: u64,
    outside: Vec<u64>,
    excursions: Vec<f64>,
}

/// Simulates the ground-state process with drift `b + 2a grad log V` and
/// reports occupation, tightness and return-time statistics. No verdict.
pub fn twisted_diagnostics(
    p: &ProblemSpec,
    g: &Grid,
    policy: &PolicyField,
    eig: &EigenPair,
    cfg: &McConfig,
    diag: &DiagnosticsConfig,
) -> Result<TwistedReport, SdeError> {
    cfg.validate(p.d)?;
    let grads = log_gradient(g, &eig.vector);
    let fields: Vec<Field> = grads
        .iter()
        .map(|vals| Field::new(g, vals, false))
        .collect();
    let st = Stepper::new(p, g, policy, DriftMode::Twisted(fields))?;
    simulate_diagnostics(&st, g, cfg, diag)
}

/// As [`twisted_diagnostics`] for the untwisted process (same reports).
pub fn plain_diagnostics(
    p: &ProblemSpec,
    g: &Grid,
    policy: &PolicyField,
    cfg: &McConfig,
    diag: &DiagnosticsConfig,
) -> Result<TwistedReport, SdeError> {
    cfg.validate(p.d)?;
    let st = Stepper::new(p, g, policy, DriftMode::Plain)?;
    simulate_diagnostics(&st, g, cfg, diag)
}

fn simulate_diagnostics(
    st: &Stepper,
    g: &Grid,
    cfg: &McConfig,
    diag: &DiagnosticsConfig,
) -> Result<TwistedReport, SdeError> {
    let d = g.dim();
    let dt = cfg.step_size();
    let burn = (diag.burn_in / dt).round() as usize;
    let rmax = g.radii().iter().cloned().fold(f64::INFINITY, f64::min);
    let ladder: Vec<f64> = (1..=diag.ladder)
        .map(|k| rmax * k as f64 / diag.ladder as f64)
        .collect();
    let r0 = diag.return_radius.unwrap_or(0.25 * rmax);
    let edges: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let (lo, hi) = g.extents(j);
            (0..=diag.bins)
                .map(|b| -lo + (lo + hi) * b as f64 / diag.bins as f64)
                .collect()
        })
        .collect();
    let nb = diag.bins;

    let per_path = par_paths(cfg.n_paths, |i| {
        let mut s = PathStats {
            sum: vec![0.0; d],
            sumsq: vec![0.0; d],
            hist: vec![0; nb.pow(d as u32)],
            outside: vec![0; ladder.len()],
            ..Default::default()
        };
        let mut step = 0usize;
        let mut out_since: Option<usize> = None;
        let (_, xf) = st.run(i, cfg, false, |x| {
            step += 1;
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            match (r > r0, out_since) {
                (true, None) => out_since = Some(step),
                (false, Some(t0)) => {
                    s.excursions.push((step - t0) as f64 * dt);
                    out_since = None;
                }
                _ => {}
            }
            if step <= burn {
                return;
            }
            s.n += 1;
            for j in 0..d {
                s.sum[j] += x[j];
                s.sumsq[j] += x[j] * x[j];
            }
            for (c, &rk) in s.outside.iter_mut().zip(&ladder) {
                if r > rk {
                    *c += 1;
                }
            }
            let mut cell = 0usize;
            let mut inside = true;
            for j in 0..d {
                let (lo, hi) = (edges[j][0], edges[j][nb]);
                if !(x[j] >= lo && x[j] < hi) {
                    inside = false;
                    break;
                }
                let b = (((x[j] - lo) / (hi - lo)) * nb as f64) as usize;
                cell = cell * nb + b.min(nb - 1);
            }
            if inside {
                s.hist[cell] += 1;
            } else {
                s.outside_box += 1;
            }
        })?;
        Ok((s, xf))
    })?;

    let total: u64 = per_path.iter().map(|p| p.0.n).sum();
    let tf = total.max(1) as f64;
    let mut mean = vec![0.0; d];
    let mut var = vec![0.0; d];
    let mut var_se = vec![0.0; d];
    for j in 0..d {
        let s: f64 = per_path.iter().map(|p| p.0.sum[j]).sum();
        let q: f64 = per_path.iter().map(|p| p.0.sumsq[j]).sum();
        mean[j] = s / tf;
        var[j] = q / tf - mean[j] * mean[j];
        let pv: Vec<f64> = per_path
            .iter()
            .filter(|p| p.0.n > 1)
            .map(|p| {
                let n = p.0.n as f64;
                let m = p.0.sum[j] / n;
                p.0.sumsq[j] / n - m * m
            })
            .collect();
        if pv.len() > 1 {
            let k = pv.len() as f64;
            let pm = pv.iter().sum::<f64>() / k;
            let ps = pv.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / (k - 1.0);
            var_se[j] = (ps / k).sqrt();
        }
    }
    let mut hist = vec![0.0; nb.pow(d as u32)];
    for p in &per_path {
        for (h, &c) in hist.iter_mut().zip(&p.0.hist) {
            *h += c as f64;
        }
    }
    hist.iter_mut().for_each(|h| *h /= tf);
    let outside: Vec<f64> = (0..ladder.len())
        .map(|k| per_path.iter().map(|p| p.0.outside[k]).sum::<u64>() as f64 / tf)
        .collect();
    let exc: Vec<f64> = per_path.iter().flat_map(|p| p.0.excursions.iter().cloned()).collect();
    let mean_ret = if exc.is_empty() {
        f64::NAN
    } else {
        exc.iter().sum::<f64>() / exc.len() as f64
    };

    Ok(TwistedReport {
        n_samples: total,
        axis_mean: mean,
        axis_var: var,
        axis_var_se: var_se,
        bin_edges: edges,
        histogram: hist,
        fraction_outside_box: per_path.iter().map(|p| p.0.outside_box).sum::<u64>() as f64 / tf,
        ladder_radii: ladder,
        fraction_outside: outside,
        return_radius: r0,
        excursions: exc.len(),
        mean_return_time: mean_ret,
        return_tail_rate: tail_rate(&exc),
        final_positions: per_path.into_iter().map(|p| p.1).collect(),
    })
}

/// Least-squares slope of `-log S(t)` over the empirical survival function,
/// restricted to `S >= 1e-3` so the sparse extreme tail does not dominate.
fn tail_rate(samples: &[f64]) -> f64 {
    if samples.len() < 10 {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let pts: Vec<(f64, f64)> = (0..20)
        .map(|q| {
            let idx = ((q as f64 / 20.0) * n) as usize;
            (s[idx], 1.0 - idx as f64 / n)
        })
        .filter(|&(_, surv)| surv >= 1e-3)
        .map(|(t, surv)| (t, surv.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        -sxy / sxx
    }
}

/// Two-sample Kolmogorov–Smirnov statistic and its asymptotic 1% critical value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut dmax) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        dmax = dmax.max((i as f64 / n - j as f64 / m).abs());
    }
    (dmax, 1.628 * ((n + m) / (n * m)).sqrt())
}
