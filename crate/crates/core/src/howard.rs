//! Howard-type policy improvement for the risk-sensitive eigenvalue problem.
//!
//! Each outer step solves the principal eigenproblem for the current policy
//! (value determination) and then re-optimizes the control row by row against
//! the eigenvector (policy improvement). The improvement step optimizes the
//! assembled rows themselves, so `(M_{k+1} V_k)_i <= (M_k V_k)_i` holds exactly
//! and the Collatz–Wielandt upper bound for `M_{k+1}` at `V_k` makes
//! `lambda_{k+1} <= lambda_k` a matrix fact up to the certificate widths.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genmat::{Discretization, GenmatError, PolicyField};
use crate::lattice::Grid;
use crate::perron::{self, EigenPair, PerronError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Min,
    Max,
}

impl Sense {
    /// `true` when `a` is strictly better than `b`.
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Sense::Min => a < b,
            Sense::Max => a > b,
        }
    }
}

#[derive(Debug, Error)]
pub enum HowardError {
    #[error(transparent)]
    Genmat(#[from] GenmatError),
    #[error(transparent)]
    Perron(#[from] PerronError),
    #[error("initialization guard failed: lambda(v0) = {} does not exceed the boundary cost proxy {}", .0.lambda0, .0.boundary_proxy)]
    GuardFailed(GuardReport),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiaOptions {
    pub sense: Sense,
    pub tol_lambda: f64,
    pub tie_tol: f64,
    pub max_outer: usize,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    /// Radius of the ball over which residual norms are reported; defaults to
    /// half the smallest box radius.
    pub psi_ball_radius: Option<f64>,
    pub allow_guard_fail: bool,
    /// Start each eigensolve from the previous eigenvector.
    pub warm_start: bool,
    /// Keep every `(policy, eigenvector)` iterate in the result.
    pub keep_history: bool,
}

impl Default for PiaOptions {
    fn default() -> Self {
        Self {
            sense: Sense::Min,
            tol_lambda: 1e-10,
            tie_tol: 1e-9,
            max_outer: 200,
            eig_tol: perron::DEFAULT_TOL,
            eig_max_iter: perron::DEFAULT_MAX_ITER,
            psi_ball_radius: None,
            allow_guard_fail: false,
            warm_start: true,
            keep_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    pub lambda: f64,
    pub cw_lower: f64,
    pub cw_upper: f64,
    pub cw_gap: f64,
    pub eig_iterations: usize,
    /// Nodes whose control differs between this policy and the improved one.
    pub policy_changes: usize,
    /// Sup and discrete L1 norms of the improvement residual over the reporting ball.
    pub psi_sup: f64,
    pub psi_l1_ball: f64,
    /// Smallest residual value over all interior nodes.
    pub psi_min: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PiaTrace {
    pub records: Vec<IterationRecord>,
    pub psi_ball_radius: f64,
    pub psi_ball_volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    PolicyFixed,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Iterate {
    pub policy: PolicyField,
    pub eig: EigenPair,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub eig: EigenPair,
    pub policy: PolicyField,
    pub trace: PiaTrace,
    pub termination: Termination,
    /// Populated when `keep_history` is set.
    pub history: Vec<Iterate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuardReport {
    pub pass: bool,
    pub lambda0: f64,
    pub lambda0_interval: (f64, f64),
    pub boundary_proxy: f64,
    pub proxy_at: Vec<f64>,
    pub proxy_control: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    /// Smallest `C` with `|grad V| / V <= C (1 + |x|)` on the nodes examined.
    pub c_fit: f64,
    pub argmax_node: Option<usize>,
    pub argmax_x: Vec<f64>,
    pub max_ratio: f64,
}

/// Row scores `(M_zeta V)_i` for every control.
fn scores(disc: &Discretization, i: usize, v: &[f64]) -> Result<Vec<f64>, GenmatError> {
    (0..disc.n_controls())
        .map(|k| disc.row_apply(k, i, v))
        .collect()
}

/// Selection rule at one node: keep the incumbent within the relative tie
/// tolerance, else the first optimal control.
fn select(q: &[f64], incumbent: usize, sense: Sense, tie_tol: f64) -> (usize, f64) {
    let mut best = 0;
    for (k, &val) in q.iter().enumerate().skip(1) {
        if sense.better(val, q[best]) {
            best = k;
        }
    }
    let opt = q[best];
    if (q[incumbent] - opt).abs() <= tie_tol * (1.0 + opt.abs()) {
        (incumbent, opt)
    } else {
        (best, opt)
    }
}

fn check_positive(v: &[f64]) -> Result<(), HowardError> {
    match v.iter().position(|&x| !(x > 0.0)) {
        Some(i) => Err(HowardError::Perron(PerronError::NonPositiveVector(i))),
        None => Ok(()),
    }
}

pub fn improve(
    disc: &Discretization,
    v: &[f64],
    current: &PolicyField,
    sense: Sense,
    tie_tol: f64,
) -> Result<PolicyField, HowardError> {
    check_positive(v)?;
    current.validate(disc.n(), disc.n_controls())?;
    let next: Vec<usize> = (0..disc.n())
        .into_par_iter()
        .map(|i| scores(disc, i, v).map(|q| select(&q, current.get(i), sense, tie_tol).0))
        .collect::<Result<_, _>>()?;
    Ok(PolicyField::from_vec(next))
}

/// Improvement residual at every interior node, sign-normalized so it is
/// nonnegative: `lambda - min_zeta (M_zeta V)_i / V_i` (min) or
/// `max_zeta (M_zeta V)_i / V_i - lambda` (max).
///
/// Values below `-slack` are reported as [`HowardError::InvariantViolation`].
pub fn psi_residual(
    disc: &Discretization,
    v: &[f64],
    lambda: f64,
    sense: Sense,
    slack: f64,
) -> Result<Vec<f64>, HowardError> {
    check_positive(v)?;
    let psi: Vec<f64> = (0..disc.n())
        .into_par_iter()
        .map(|i| {
            scores(disc, i, v).map(|q| {
                let (_, opt) = select(&q, 0, sense, 0.0);
                psi_value(opt, v[i], lambda, sense)
            })
        })
        .collect::<Result<_, _>>()?;
    if let Some((i, &val)) = psi
        .iter()
        .enumerate()
        .find(|(_, &p)| p < -slack)
    {
        return Err(HowardError::InvariantViolation(format!(
            "improvement residual {val:.3e} < -{slack:.1e} at node {i}"
        )));
    }
    Ok(psi)
}

fn psi_value(opt: f64, v: f64, lambda: f64, sense: Sense) -> f64 {
    match sense {
        Sense::Min => lambda - opt / v,
        Sense::Max => opt / v - lambda,
    }
}

/// Nodes within the reporting ball, its radius, and its volume.
fn reporting_ball(g: &Grid, radius: Option<f64>) -> (Vec<usize>, f64, f64) {
    let r = radius.unwrap_or_else(|| 0.5 * g.radii().iter().cloned().fold(f64::INFINITY, f64::min));
    let nodes = (0..g.n_interior())
        .filter(|&i| {
            g.interior_point(i).iter().map(|x| x * x).sum::<f64>().sqrt() <= r + 1e-12
        })
        .collect();
    let vol = match g.dim() {
        1 => 2.0 * r,
        _ => std::f64::consts::PI * r * r,
    };
    (nodes, r, vol)
}

/// Checks the initialization condition for maximization: the principal
/// eigenvalue of `v0` must exceed the largest running cost on the outermost
/// node shell (a stand-in for the limit of the cost at infinity).
pub fn guard_max(
    disc: &Discretization,
    v0: &PolicyField,
    eig_tol: f64,
    eig_max_iter: usize,
) -> Result<GuardReport, HowardError> {
    let g = disc.grid;
    let p = disc.problem;
    let m = disc.assemble_policy(v0)?;
    let eig = perron::principal_eigpair(&m, eig_tol, eig_max_iter)?;
    let mut proxy = f64::NEG_INFINITY;
    let mut at = Vec::new();
    let mut ctrl = 0;
    for node in g.boundary_nodes() {
        let x = g.point(&g.full_multi(node));
        for (k, u) in p.controls.points().iter().enumerate() {
            let c = p.cost_at(&x, u).map_err(|source| GenmatError::Eval {
                coords: x.clone(),
                control: k,
                source,
            })?;
            if c > proxy {
                proxy = c;
                at = x.clone();
                ctrl = k;
            }
        }
    }
    Ok(GuardReport {
        pass: eig.lambda > proxy,
        lambda0: eig.lambda,
        lambda0_interval: (eig.cw_lower, eig.cw_upper),
        boundary_proxy: proxy,
        proxy_at: at,
        proxy_control: ctrl,
    })
}

pub fn solve_pia(
    disc: &Discretization,
    v0: &PolicyField,
    opts: &PiaOptions,
) -> Result<SolveResult, HowardError> {
    v0.validate(disc.n(), disc.n_controls())?;
    if opts.sense == Sense::Max && !opts.allow_guard_fail {
        let report = guard_max(disc, v0, opts.eig_tol, opts.eig_max_iter)?;
        if !report.pass {
            return Err(HowardError::GuardFailed(report));
        }
    }

    let (ball, r0, vol) = reporting_ball(disc.grid, opts.psi_ball_radius);
    let cell = disc.grid.cell_volume();
    let mut trace = PiaTrace {
        records: Vec::new(),
        psi_ball_radius: r0,
        psi_ball_volume: vol,
    };
    let mut history = Vec::new();
    let mut policy = v0.clone();
    let mut start = vec![1.0; disc.n()];
    let mut prev: Option<(f64, f64)> = None;

    for k in 0..opts.max_outer {
        let t0 = Instant::now();
        let m = disc.assemble_policy(&policy)?;
        let eig = perron::principal_eigpair_from(&m, &start, opts.eig_tol, opts.eig_max_iter)?;
        let gap = eig.gap();

        if let Some((lam_prev, gap_prev)) = prev {
            let slack = gap_prev + gap + 4.0 * f64::EPSILON * m.shift_hint();
            let violated = match opts.sense {
                Sense::Min => eig.lambda > lam_prev + slack,
                Sense::Max => eig.lambda < lam_prev - slack,
            };
            if violated {
                return Err(HowardError::InvariantViolation(format!(
                    "lambda moved against the solve direction at iteration {k}: {lam_prev} -> {}",
                    eig.lambda
                )));
            }
        }

        // improvement and residual from the same row scores
        let v = &eig.vector;
        let per_node: Vec<(usize, f64)> = (0..disc.n())
            .into_par_iter()
            .map(|i| {
                scores(disc, i, v).map(|q| {
                    let (choice, opt) = select(&q, policy.get(i), opts.sense, opts.tie_tol);
                    (choice, psi_value(opt, v[i], eig.lambda, opts.sense))
                })
            })
            .collect::<Result<_, _>>()?;
        let next = PolicyField::from_vec(per_node.iter().map(|e| e.0).collect());
        let psi_min = per_node.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        let psi_slack = 1e-9 * (1.0 + eig.lambda.abs());
        if psi_min < -psi_slack {
            return Err(HowardError::InvariantViolation(format!(
                "negative improvement residual {psi_min:.3e} at iteration {k}"
            )));
        }
        let psi_sup = ball.iter().map(|&i| per_node[i].1.abs()).fold(0.0, f64::max);
        let psi_l1 = ball.iter().map(|&i| per_node[i].1.abs()).sum::<f64>() * cell;
        let changes = next.changes_from(&policy);

        trace.records.push(IterationRecord {
            k,
            lambda: eig.lambda,
            cw_lower: eig.cw_lower,
            cw_upper: eig.cw_upper,
            cw_gap: gap,
            eig_iterations: eig.iterations,
            policy_changes: changes,
            psi_sup,
            psi_l1_ball: psi_l1,
            psi_min,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });
        if opts.keep_history {
            history.push(Iterate {
                policy: policy.clone(),
                eig: eig.clone(),
            });
        }

        if changes == 0 {
            let termination = match prev {
                Some((lam_prev, _)) if (eig.lambda - lam_prev).abs() <= opts.tol_lambda => {
                    Termination::Converged
                }
                _ => Termination::PolicyFixed,
            };
            return Ok(SolveResult {
                eig,
                policy,
                trace,
                termination,
                history,
            });
        }

        prev = Some((eig.lambda, gap));
        if opts.warm_start {
            start.clone_from(&eig.vector);
        }
        policy = next;
        if k + 1 == opts.max_outer {
            return Ok(SolveResult {
                eig,
                policy,
                trace,
                termination: Termination::MaxIterations,
                history,
            });
        }
    }
    // max_outer == 0
    let m = disc.assemble_policy(&policy)?;
    let eig = perron::principal_eigpair(&m, opts.eig_tol, opts.eig_max_iter)?;
    Ok(SolveResult {
        eig,
        policy,
        trace,
        termination: Termination::MaxIterations,
        history,
    })
}

/// Discrete `|grad V| / V` at nodes whose neighbours are all interior, with the
/// smallest `C` such that the ratio is at most `C (1 + |x|)`.
pub fn gradient_diagnostic(g: &Grid, v: &[f64]) -> GradientReport {
    let mut rep = GradientReport {
        c_fit: 0.0,
        argmax_node: None,
        argmax_x: Vec::new(),
        max_ratio: 0.0,
    };
    for i in 0..g.n_interior() {
        let nb = g.interior_neighbors(i);
        if nb.len() < 2 * g.dim() {
            continue;
        }
        let mut grad2 = 0.0;
        for j in 0..g.dim() {
            let h = g.steps()[j];
            let plus = nb.iter().find(|e| e.0 == j && e.1 > 0).unwrap().2;
            let minus = nb.iter().find(|e| e.0 == j && e.1 < 0).unwrap().2;
            let dj = (v[plus] - v[minus]) / (2.0 * h);
            grad2 += dj * dj;
        }
        let x = g.interior_point(i);
        let r = x.iter().map(|t| t * t).sum::<f64>().sqrt();
        let ratio = grad2.sqrt() / v[i];
        let c = ratio / (1.0 + r);
        rep.max_ratio = rep.max_ratio.max(ratio);
        if c > rep.c_fit || rep.argmax_node.is_none() {
            rep.c_fit = c;
            rep.argmax_node = Some(i);
            rep.argmax_x = x;
        }
    }
    rep
}
