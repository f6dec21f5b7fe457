//! Problem instances (drift, diffusion, running cost, control set) and the
//! sampled checks of the standing assumptions on them.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{self, EvalError, Expr, ParseError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("control set is empty")]
    EmptyControlSet,
    #[error("control set contains duplicate point {0:?}")]
    DuplicateControl(Vec<f64>),
    #[error("control point {index} has length {got}, expected {expected}")]
    ControlLength {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("diffusion entry {0} depends on the control; sigma must be a function of x only")]
    ControlDependentDiffusion(usize),
    #[error("expected {expected} {what} expressions, got {got}")]
    ExprCount {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("in {field}: {source}")]
    Parse {
        field: String,
        #[source]
        source: ParseError,
    },
}

/// Problem section of a run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub d: usize,
    pub m: usize,
    pub b: Vec<String>,
    pub sigma: Vec<String>,
    pub c: String,
    pub controls: ControlsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlsConfig {
    /// Explicit ordered list of control points.
    Points(Vec<Vec<f64>>),
    /// Tensor grid with `n[j]` equispaced points on `[lo[j], hi[j]]`.
    Uniform {
        lo: Vec<f64>,
        hi: Vec<f64>,
        n: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSet {
    points: Vec<Vec<f64>>,
    provenance: ControlsConfig,
}

impl ControlSet {
    pub fn from_config(cfg: &ControlsConfig, m: usize) -> Result<Self, ModelError> {
        let points = match cfg {
            ControlsConfig::Points(p) => p.clone(),
            ControlsConfig::Uniform { lo, hi, n } => {
                if lo.len() != m || hi.len() != m || n.len() != m {
                    return Err(ModelError::InvalidDimension(format!(
                        "uniform control box needs lo, hi, n of length m = {m}"
                    )));
                }
                let mut pts = vec![Vec::with_capacity(m)];
                for j in 0..m {
                    let axis: Vec<f64> = match n[j] {
                        0 => Vec::new(),
                        1 => vec![0.5 * (lo[j] + hi[j])],
                        k => (0..k)
                            .map(|i| lo[j] + (hi[j] - lo[j]) * i as f64 / (k - 1) as f64)
                            .collect(),
                    };
                    pts = pts
                        .into_iter()
                        .flat_map(|p| {
                            axis.iter().map(move |&v| {
                                let mut q = p.clone();
                                q.push(v);
                                q
                            })
                        })
                        .collect();
                }
                pts
            }
        };
        Self::new(points, m, cfg.clone())
    }

    fn new(points: Vec<Vec<f64>>, m: usize, provenance: ControlsConfig) -> Result<Self, ModelError> {
        if points.is_empty() {
            return Err(ModelError::EmptyControlSet);
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != m {
                return Err(ModelError::ControlLength {
                    index: i,
                    got: p.len(),
                    expected: m,
                });
            }
            if points[..i].contains(p) {
                return Err(ModelError::DuplicateControl(p.clone()));
            }
        }
        Ok(Self { points, provenance })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn provenance(&self) -> &ControlsConfig {
        &self.provenance
    }
}

/// A parsed problem: `dX = b(X,U)dt + sigma(X)dW`, `a = sigma^2 / 2` (diagonal),
/// running cost `c(X,U)`.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub d: usize,
    pub m: usize,
    pub drift: Vec<Expr>,
    pub sigma: Vec<Expr>,
    pub cost: Expr,
    pub controls: ControlSet,
    pub lyapunov: Option<Expr>,
    pub ell: Option<Expr>,
    pub known_lambda: Option<f64>,
}

pub fn build_problem(cfg: &ProblemConfig) -> Result<ProblemSpec, ModelError> {
    let (d, m) = (cfg.d, cfg.m);
    if !(1..=2).contains(&d) {
        return Err(ModelError::InvalidDimension(format!(
            "state dimension d = {d} is not supported (1 or 2)"
        )));
    }
    if m == 0 {
        return Err(ModelError::InvalidDimension(
            "control dimension m must be at least 1".into(),
        ));
    }
    let parse = |field: String, src: &str| {
        expr::parse(src, d, m).map_err(|source| ModelError::Parse { field, source })
    };
    let parse_list = |what: &'static str, srcs: &[String]| {
        if srcs.len() != d {
            return Err(ModelError::ExprCount {
                what,
                expected: d,
                got: srcs.len(),
            });
        }
        srcs.iter()
            .enumerate()
            .map(|(j, s)| parse(format!("{what}[{j}]"), s))
            .collect::<Result<Vec<_>, _>>()
    };

    let drift = parse_list("b", &cfg.b)?;
    let sigma = parse_list("sigma", &cfg.sigma)?;
    if let Some(j) = sigma.iter().position(Expr::depends_on_control) {
        return Err(ModelError::ControlDependentDiffusion(j));
    }
    let cost = parse("c".into(), &cfg.c)?;
    let lyapunov = cfg
        .lyapunov
        .as_deref()
        .map(|s| parse("lyapunov".into(), s))
        .transpose()?;
    let ell = cfg
        .ell
        .as_deref()
        .map(|s| parse("ell".into(), s))
        .transpose()?;
    for (name, e) in [("lyapunov", &lyapunov), ("ell", &ell)] {
        if e.as_ref().is_some_and(Expr::depends_on_control) {
            return Err(ModelError::InvalidDimension(format!(
                "{name} must depend on x only"
            )));
        }
    }
    let controls = ControlSet::from_config(&cfg.controls, m)?;

    Ok(ProblemSpec {
        d,
        m,
        drift,
        sigma,
        cost,
        controls,
        lyapunov,
        ell,
        known_lambda: cfg.known_lambda,
    })
}

impl ProblemSpec {
    pub fn drift_at(&self, j: usize, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        self.drift[j].eval(x, u)
    }

    /// Diagonal diffusion coefficient `a_jj(x) = sigma_j(x)^2 / 2`.
    pub fn diffusion_at(&self, j: usize, x: &[f64]) -> Result<f64, EvalError> {
        let s = self.sigma[j].eval(x, &[])?;
        Ok(0.5 * s * s)
    }

    pub fn sigma_at(&self, j: usize, x: &[f64]) -> Result<f64, EvalError> {
        self.sigma[j].eval(x, &[])
    }

    pub fn cost_at(&self, x: &[f64], u: &[f64]) -> Result<f64, EvalError> {
        self.cost.eval(x, u)
    }

    /// Returns a copy with `delta` added to the running cost.
    pub fn with_cost_shift(&self, delta: f64) -> Self {
        let mut p = self.clone();
        p.cost = Expr::Bin(
            expr::BinOp::Add,
            Box::new(self.cost.clone()),
            Box::new(Expr::Num(delta)),
        );
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotChecked,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<usize>,
    pub quantities: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub verdict: Verdict,
    pub note: String,
    pub witnesses: Vec<Witness>,
}

impl CheckOutcome {
    fn not_checked(note: &str) -> Self {
        Self {
            verdict: Verdict::NotChecked,
            note: note.to_string(),
            witnesses: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    /// Keyed by check name: `drift_growth`, `nondegeneracy`, `cost_growth`,
    /// `lyapunov_drift`, `near_monotone`.
    pub checks: BTreeMap<String, CheckOutcome>,
    pub constants: BTreeMap<String, f64>,
    /// Radii of the far-field ladder used for growth fits.
    pub far_field_radii: Vec<f64>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.values().all(|c| c.verdict != Verdict::Fail)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Smallest admissible diagonal entry of `a(x)`.
    pub min_ellipticity: f64,
    /// Allowed excess of fitted growth exponents over 1 (drift) and 2 (cost).
    pub exponent_slack: f64,
    /// Step of the centered differences used to apply the generator to the Lyapunov function.
    pub fd_step: f64,
    /// Far-field shell spans `[r, far_field_factor * r]` where `r` is the sample radius.
    pub far_field_factor: f64,
    pub far_field_radii: usize,
    /// Directions per far-field radius in two dimensions.
    pub far_field_directions: usize,
    /// Decay rate for the bounded-cost Lyapunov variant; defaults to `sup|c| + gamma_margin`.
    pub gamma: Option<f64>,
    pub gamma_margin: f64,
    /// Also run the near-monotone check (sublinear drift, coercive cost).
    pub near_monotone: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_ellipticity: 1e-8,
            exponent_slack: 0.1,
            fd_step: 1e-5,
            far_field_factor: 2.0,
            far_field_radii: 8,
            far_field_directions: 32,
            gamma: None,
            gamma_margin: 1e-3,
            near_monotone: false,
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-point quantities needed by all checks.
struct PointEval {
    x: Vec<f64>,
    r: f64,
    sup_b: f64,
    sup_b_ctrl: usize,
    sup_c: f64,
    max_c: f64,
    min_c: f64,
    min_a: f64,
    max_bx_plus: f64,
    /// `A V(x, zeta)` for each control, when a Lyapunov function is supplied.
    gen_lyap: Vec<f64>,
    lyap: f64,
    ell: f64,
}

fn eval_point(p: &ProblemSpec, x: &[f64], th: &Thresholds) -> Result<PointEval, EvalError> {
    let mut pe = PointEval {
        x: x.to_vec(),
        r: norm(x),
        sup_b: 0.0,
        sup_b_ctrl: 0,
        sup_c: 0.0,
        max_c: f64::NEG_INFINITY,
        min_c: f64::INFINITY,
        min_a: f64::INFINITY,
        max_bx_plus: 0.0,
        gen_lyap: Vec::new(),
        lyap: f64::NAN,
        ell: f64::NAN,
    };
    let mut a = vec![0.0; p.d];
    for (j, aj) in a.iter_mut().enumerate() {
        *aj = p.diffusion_at(j, x)?;
        pe.min_a = pe.min_a.min(*aj);
    }

    // value, gradient and diagonal second derivatives of the Lyapunov function
    let lyap_derivs = match &p.lyapunov {
        Some(v) => {
            let h = th.fd_step;
            let v0 = v.eval(x, &[])?;
            let mut grad = vec![0.0; p.d];
            let mut hess = vec![0.0; p.d];
            let mut y = x.to_vec();
            for j in 0..p.d {
                y[j] = x[j] + h;
                let vp = v.eval(&y, &[])?;
                y[j] = x[j] - h;
                let vm = v.eval(&y, &[])?;
                y[j] = x[j];
                grad[j] = (vp - vm) / (2.0 * h);
                hess[j] = (vp - 2.0 * v0 + vm) / (h * h);
            }
            pe.lyap = v0;
            Some((grad, hess))
        }
        None => None,
    };
    if let Some(l) = &p.ell {
        pe.ell = l.eval(x, &[])?;
    }

    for (k, u) in p.controls.points().iter().enumerate() {
        let mut b2 = 0.0;
        let mut bx = 0.0;
        let mut gen = 0.0;
        for j in 0..p.d {
            let bj = p.drift_at(j, x, u)?;
            b2 += bj * bj;
            bx += bj * x[j];
            if let Some((grad, hess)) = &lyap_derivs {
                gen += a[j] * hess[j] + bj * grad[j];
            }
        }
        let bn = b2.sqrt();
        if bn > pe.sup_b || k == 0 {
            pe.sup_b = bn;
            pe.sup_b_ctrl = k;
        }
        pe.max_bx_plus = pe.max_bx_plus.max(bx.max(0.0));
        let c = p.cost_at(x, u)?;
        pe.sup_c = pe.sup_c.max(c.abs());
        pe.max_c = pe.max_c.max(c);
        pe.min_c = pe.min_c.min(c);
        if lyap_derivs.is_some() {
            pe.gen_lyap.push(gen);
        }
    }
    Ok(pe)
}

/// Builds the far-field ladder: `n` radii between `r` and `factor * r`.
fn far_field_shell(d: usize, r: f64, th: &Thresholds) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = th.far_field_radii.max(2);
    let radii: Vec<f64> = (0..n)
        .map(|i| r * (1.0 + (th.far_field_factor - 1.0) * i as f64 / (n - 1) as f64))
        .collect();
    let mut pts = Vec::new();
    for &rr in &radii {
        if d == 1 {
            pts.push(vec![-rr]);
            pts.push(vec![rr]);
        } else {
            let k = th.far_field_directions.max(4);
            for i in 0..k {
                let t = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                pts.push(vec![rr * t.cos(), rr * t.sin()]);
            }
        }
    }
    (radii, pts)
}

/// Least-squares slope of `ln y` against `ln r`, over entries with `r, y > 0`.
fn loglog_slope(r: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = r
        .iter()
        .zip(y)
        .filter(|(&r, &v)| r > 0.0 && v > 0.0)
        .map(|(&r, &v)| (r.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

fn witness(pe: &PointEval, control: Option<usize>, q: &[(&str, f64)]) -> Witness {
    Witness {
        x: pe.x.clone(),
        control,
        quantities: q.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

/// Checks growth, nondegeneracy and Lyapunov-drift conditions on `sample`
/// plus a far-field ladder out to `far_field_factor` times the sample radius.
///
/// Evaluation errors at a point are reported as failed `evaluation` checks.
pub fn validate_assumptions(
    p: &ProblemSpec,
    sample: &[Vec<f64>],
    th: &Thresholds,
) -> AssumptionReport {
    let r_sample = sample.iter().map(|x| norm(x)).fold(0.0, f64::max);
    let r_far = if r_sample > 0.0 { r_sample } else { 1.0 };
    let (radii, shell) = far_field_shell(p.d, r_far, th);

    let evals = |pts: &[Vec<f64>]| -> Vec<Result<PointEval, (Vec<f64>, EvalError)>> {
        pts.par_iter()
            .map(|x| eval_point(p, x, th).map_err(|e| (x.clone(), e)))
            .collect()
    };
    let inner_raw = evals(sample);
    let far_raw = evals(&shell);

    let mut checks = BTreeMap::new();
    let mut constants = BTreeMap::new();

    let errors: Vec<&(Vec<f64>, EvalError)> = inner_raw
        .iter()
        .chain(&far_raw)
        .filter_map(|r| r.as_ref().err())
        .collect();
    if let Some((_, first)) = errors.first() {
        checks.insert(
            "evaluation".to_string(),
            CheckOutcome {
                verdict: Verdict::Fail,
                note: format!("evaluation failed at {} points, first: {first}", errors.len()),
                witnesses: errors
                    .iter()
                    .map(|(x, _)| Witness {
                        x: x.clone(),
                        control: None,
                        quantities: BTreeMap::new(),
                    })
                    .collect(),
            },
        );
    }
    let inner: Vec<PointEval> = inner_raw.into_iter().filter_map(Result::ok).collect();
    let far: Vec<PointEval> = far_raw.into_iter().filter_map(Result::ok).collect();
    let all = || inner.iter().chain(far.iter());

    // per-radius suprema on the far-field ladder
    let per_radius = |f: &dyn Fn(&PointEval) -> f64| -> Vec<f64> {
        radii
            .iter()
            .map(|&rr| {
                far.iter()
                    .filter(|pe| (pe.r - rr).abs() <= 1e-9 * (1.0 + rr))
                    .map(f)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    };

    // drift growth
    {
        let c0 = all()
            .map(|pe| pe.sup_b / (1.0 + pe.r))
            .fold(0.0, f64::max);
        let sup_b = per_radius(&|pe| pe.sup_b);
        let expo = loglog_slope(&radii, &sup_b);
        constants.insert("drift_growth_c0".into(), c0);
        constants.insert("drift_growth_exponent".into(), expo);
        let pass = expo <= 1.0 + th.exponent_slack;
        let witnesses = if pass {
            vec![]
        } else {
            far.iter()
                .max_by(|a, b| (a.sup_b / (1.0 + a.r)).total_cmp(&(b.sup_b / (1.0 + b.r))))
                .map(|pe| {
                    vec![witness(
                        pe,
                        Some(pe.sup_b_ctrl),
                        &[("sup_b", pe.sup_b), ("growth_exponent", expo)],
                    )]
                })
                .unwrap_or_default()
        };
        checks.insert(
            "drift_growth".into(),
            CheckOutcome {
                verdict: if pass { Verdict::Pass } else { Verdict::Fail },
                note: format!("sup|b| <= C0 (1 + |x|): C0 = {c0:.6}, far-field exponent {expo:.4}"),
                witnesses,
            },
        );
    }

    // nondegeneracy
    {
        let min_a = all().map(|pe| pe.min_a).fold(f64::INFINITY, f64::min);
        constants.insert("ellipticity_lower_bound".into(), min_a);
        let witnesses: Vec<Witness> = inner
            .iter()
            .chain(&far)
            .filter(|pe| !(pe.min_a >= th.min_ellipticity))
            .map(|pe| witness(pe, None, &[("min_a", pe.min_a)]))
            .collect();
        checks.insert(
            "nondegeneracy".into(),
            CheckOutcome {
                verdict: if witnesses.is_empty() {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                },
                note: format!("min diagonal of a(x) = {min_a:.6e}"),
                witnesses,
            },
        );
    }

    // cost growth
    let cost_expo;
    {
        let cc = all()
            .map(|pe| pe.sup_c / (1.0 + pe.r * pe.r))
            .fold(0.0, f64::max);
        let sup_c = per_radius(&|pe| pe.sup_c);
        cost_expo = loglog_slope(&radii, &sup_c);
        constants.insert("cost_growth_c".into(), cc);
        constants.insert("cost_growth_exponent".into(), cost_expo);
        let pass = cost_expo <= 2.0 + th.exponent_slack;
        let witnesses = if pass {
            vec![]
        } else {
            far.iter()
                .max_by(|a, b| a.sup_c.total_cmp(&b.sup_c))
                .map(|pe| vec![witness(pe, None, &[("sup_c", pe.sup_c), ("growth_exponent", cost_expo)])])
                .unwrap_or_default()
        };
        checks.insert(
            "cost_growth".into(),
            CheckOutcome {
                verdict: if pass { Verdict::Pass } else { Verdict::Fail },
                note: format!("sup|c| <= C (1 + |x|^2): C = {cc:.6}, far-field exponent {cost_expo:.4}"),
                witnesses,
            },
        );
    }

    checks.insert(
        "lyapunov_drift".into(),
        lyapunov_check(p, &inner, &far, &radii, r_sample, cost_expo, th, &mut constants),
    );

    checks.insert(
        "near_monotone".into(),
        if th.near_monotone {
            near_monotone_check(p, &inner, &far, &radii, &mut constants)
        } else {
            CheckOutcome::not_checked("disabled")
        },
    );

    AssumptionReport {
        checks,
        constants,
        far_field_radii: radii,
    }
}

#[allow(clippy::too_many_arguments)]
fn lyapunov_check(
    p: &ProblemSpec,
    inner: &[PointEval],
    far: &[PointEval],
    radii: &[f64],
    r_sample: f64,
    cost_expo: f64,
    th: &Thresholds,
    constants: &mut BTreeMap<String, f64>,
) -> CheckOutcome {
    if p.lyapunov.is_none() {
        return CheckOutcome::not_checked("no Lyapunov function supplied");
    }
    let mut witnesses = Vec::new();
    let mut ok = true;
    let mut notes = Vec::new();

    for pe in inner.iter().chain(far) {
        if !(pe.lyap >= 1.0) {
            ok = false;
            witnesses.push(witness(pe, None, &[("lyapunov", pe.lyap)]));
        }
    }
    if !ok {
        notes.push("Lyapunov function takes values below 1".to_string());
    }

    // decay rate as a function of x: ell(x), or a constant gamma for bounded costs
    let bounded_variant = p.ell.is_none();
    let gamma = if bounded_variant {
        let sup_c = inner.iter().chain(far).map(|pe| pe.sup_c).fold(0.0, f64::max);
        if cost_expo > th.exponent_slack {
            ok = false;
            notes.push(format!(
                "cost grows (far-field exponent {cost_expo:.3}); supply ell for the unbounded variant"
            ));
        }
        let g = th.gamma.unwrap_or(sup_c + th.gamma_margin);
        constants.insert("lyapunov_gamma".into(), g);
        if g <= sup_c {
            ok = false;
            notes.push(format!("gamma = {g} does not exceed sup|c| = {sup_c}"));
        }
        g
    } else {
        // inf-compactness of ell - max c: the shell minimum must increase with the radius
        let mins: Vec<(f64, Option<&PointEval>)> = radii
            .iter()
            .map(|&rr| {
                far.iter()
                    .filter(|pe| (pe.r - rr).abs() <= 1e-9 * (1.0 + rr))
                    .map(|pe| (pe.ell - pe.max_c, Some(pe)))
                    .fold((f64::INFINITY, None), |acc, v| if v.0 < acc.0 { v } else { acc })
            })
            .collect();
        let inner_max = inner
            .iter()
            .map(|pe| pe.ell - pe.max_c)
            .fold(f64::NEG_INFINITY, f64::max);
        let increasing = mins.windows(2).all(|w| w[1].0 > w[0].0);
        if let Some((last, Some(pe))) = mins.last() {
            constants.insert("ell_minus_cost_far".into(), *last);
            if !increasing || !(*last > inner_max.min(mins[0].0)) {
                ok = false;
                notes.push("ell - max c is not increasing on the far-field ladder".into());
                witnesses.push(witness(
                    pe,
                    None,
                    &[("ell", pe.ell), ("max_c", pe.max_c), ("ell_minus_max_c", *last)],
                ));
            }
        }
        f64::NAN
    };

    // violations of A V <= -rate * V, without the indicator term
    let rate = |pe: &PointEval| if bounded_variant { gamma } else { pe.ell };
    let mut k_radius: f64 = 0.0;
    let mut c_hat: f64 = 0.0;
    let mut margin = f64::INFINITY;
    let mut far_violation = None;
    for pe in inner.iter().chain(far) {
        for (k, &g) in pe.gen_lyap.iter().enumerate() {
            let excess = g + rate(pe) * pe.lyap;
            if excess > 0.0 {
                k_radius = k_radius.max(pe.r);
                c_hat = c_hat.max(excess);
                if pe.r >= r_sample && far_violation.is_none() {
                    far_violation = Some(witness(
                        pe,
                        Some(k),
                        &[("generator", g), ("rate", rate(pe)), ("lyapunov", pe.lyap), ("excess", excess)],
                    ));
                }
            }
        }
    }
    for pe in far {
        for &g in &pe.gen_lyap {
            margin = margin.min(-g / pe.lyap - rate(pe));
        }
    }
    constants.insert("lyapunov_c_hat".into(), c_hat);
    constants.insert("lyapunov_k_radius".into(), k_radius);
    constants.insert("lyapunov_far_margin".into(), margin);
    if let Some(w) = far_violation {
        ok = false;
        notes.push("drift inequality violated outside every ball inside the sample".into());
        witnesses.push(w);
    }

    let variant = if bounded_variant { "bounded-cost" } else { "unbounded-cost" };
    CheckOutcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        note: if notes.is_empty() {
            format!("{variant} variant holds with K = ball of radius {k_radius:.4}, C_hat = {c_hat:.4e}")
        } else {
            format!("{variant} variant: {}", notes.join("; "))
        },
        witnesses,
    }
}

fn near_monotone_check(
    p: &ProblemSpec,
    inner: &[PointEval],
    far: &[PointEval],
    radii: &[f64],
    constants: &mut BTreeMap<String, f64>,
) -> CheckOutcome {
    let at_radius = |rr: f64| {
        far.iter()
            .filter(move |pe| (pe.r - rr).abs() <= 1e-9 * (1.0 + rr))
    };
    let sup_b: Vec<f64> = radii
        .iter()
        .map(|&r| at_radius(r).map(|pe| pe.sup_b).fold(0.0, f64::max))
        .collect();
    let sup_c: Vec<f64> = radii
        .iter()
        .map(|&r| at_radius(r).map(|pe| pe.sup_c).fold(0.0, f64::max))
        .collect();
    let theta = loglog_slope(radii, &sup_b)
        .max(0.5 * loglog_slope(radii, &sup_c))
        .max(0.0);
    let kappa0 = inner
        .iter()
        .chain(far)
        .map(|pe| {
            let rt = pe.r.powf(theta);
            (pe.sup_b / (1.0 + rt)).max(pe.sup_c / (1.0 + rt * rt))
        })
        .fold(0.0, f64::max);
    constants.insert("near_monotone_theta".into(), theta);
    constants.insert("near_monotone_kappa0".into(), kappa0);

    let mut ok = true;
    let mut notes = Vec::new();
    let mut witnesses = Vec::new();
    if theta >= 1.0 {
        ok = false;
        notes.push(format!("growth exponent theta = {theta:.3} is not below 1"));
    }

    // outward drift relative to |x|^(1 - theta) must decay
    let outward: Vec<(f64, Option<&PointEval>)> = radii
        .iter()
        .map(|&r| {
            at_radius(r)
                .map(|pe| (pe.max_bx_plus / pe.r.powf(1.0 - theta), Some(pe)))
                .fold((0.0, None), |acc, v| if v.0 >= acc.0 { v } else { acc })
        })
        .collect();
    let decays = outward.windows(2).all(|w| w[1].0 <= w[0].0)
        && (outward.last().unwrap().0 < outward[0].0 || outward.last().unwrap().0 == 0.0);
    if !decays {
        ok = false;
        notes.push("outward drift does not decay on the far-field ladder".into());
        if let Some((v, Some(pe))) = outward.last() {
            witnesses.push(witness(pe, None, &[("outward_ratio", *v)]));
        }
    }

    if let Some(lam) = p.known_lambda {
        let (min_c_far, pe) = at_radius(*radii.last().unwrap())
            .map(|pe| (pe.min_c, Some(pe)))
            .fold((f64::INFINITY, None), |acc, v| if v.0 < acc.0 { v } else { acc });
        constants.insert("near_monotone_min_cost_far".into(), min_c_far);
        if !(min_c_far > lam) {
            ok = false;
            notes.push(format!("far-field cost {min_c_far:.4} does not exceed the optimal value {lam:.4}"));
            if let Some(pe) = pe {
                witnesses.push(witness(pe, None, &[("min_c", min_c_far), ("known_lambda", lam)]));
            }
        }
    } else {
        notes.push("coercivity relative to the optimal value not checked (no known_lambda)".into());
    }

    CheckOutcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        note: notes.join("; "),
        witnesses,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn cfg(b: &str, sigma: &str, c: &str) -> ProblemConfig {
        ProblemConfig {
            d: 1,
            m: 1,
            b: vec![b.into()],
            sigma: vec![sigma.into()],
            c: c.into(),
            controls: ControlsConfig::Uniform {
                lo: vec![-1.0],
                hi: vec![1.0],
                n: vec![21],
            },
            lyapunov: None,
            ell: None,
            known_lambda: None,
        }
    }

    fn line(r: f64, n: usize) -> Vec<Vec<f64>> {
        (0..=2 * n)
            .map(|i| vec![-r + r * i as f64 / n as f64])
            .collect()
    }

    #[test]
    fn builds_lq_problem() {
        let p = build_problem(&cfg("-x1 + u1", "1.4142135", "0.25*x1^2 + u1^2")).unwrap();
        assert_eq!(p.controls.len(), 21);
        assert_eq!(p.controls.point(0), &[-1.0]);
        assert_eq!(p.controls.point(20), &[1.0]);
        assert!((p.controls.point(10)[0]).abs() < 1e-15);
        assert!((p.diffusion_at(0, &[0.0]).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_control_dependent_diffusion() {
        assert!(matches!(
            build_problem(&cfg("-x1", "u1", "0")),
            Err(ModelError::ControlDependentDiffusion(0))
        ));
    }

    #[test]
    fn rejects_bad_dimensions() {
        let mut c = cfg("-x1", "1", "0");
        c.d = 3;
        assert!(matches!(build_problem(&c), Err(ModelError::InvalidDimension(_))));
        let mut c = cfg("-x1", "1", "0");
        c.controls = ControlsConfig::Points(vec![]);
        assert!(matches!(build_problem(&c), Err(ModelError::EmptyControlSet)));
        let mut c = cfg("-x1", "1", "0");
        c.controls = ControlsConfig::Points(vec![vec![0.0], vec![0.0]]);
        assert!(matches!(build_problem(&c), Err(ModelError::DuplicateControl(_))));
        let c = cfg("-x2", "1", "0");
        assert!(matches!(build_problem(&c), Err(ModelError::Parse { .. })));
    }

    #[test]
    fn two_dimensional_uniform_controls_are_lexicographic() {
        let set = ControlSet::from_config(
            &ControlsConfig::Uniform {
                lo: vec![0.0, 0.0],
                hi: vec![1.0, 2.0],
                n: vec![2, 3],
            },
            2,
        )
        .unwrap();
        assert_eq!(
            set.points(),
            &[
                vec![0.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, 2.0],
                vec![1.0, 0.0],
                vec![1.0, 1.0],
                vec![1.0, 2.0]
            ]
        );
    }

    #[test]
    fn cubic_drift_family_passes_unbounded_lyapunov_check() {
        let mut c = cfg("-x1*abs(x1) + u1", "1.4142135", "0.01*abs(x1)");
        c.lyapunov = Some("exp(0.1*sqrt(x1^2+1))".into());
        c.ell = Some("0.05*abs(x1)".into());
        let p = build_problem(&c).unwrap();
        let rep = validate_assumptions(&p, &line(10.0, 200), &Thresholds::default());
        let ly = &rep.checks["lyapunov_drift"];
        assert_eq!(ly.verdict, Verdict::Pass, "{}", ly.note);
        let k = rep.constants["lyapunov_k_radius"];
        assert!(k.is_finite() && k < 10.0);
        // quadratic drift violates linear growth
        assert_eq!(rep.checks["drift_growth"].verdict, Verdict::Fail);
    }

    #[test]
    fn degenerate_diffusion_fails_everywhere() {
        let p = build_problem(&cfg("-x1", "0", "0")).unwrap();
        let sample = line(4.0, 8);
        let rep = validate_assumptions(&p, &sample, &Thresholds::default());
        let nd = &rep.checks["nondegeneracy"];
        assert_eq!(nd.verdict, Verdict::Fail);
        for x in &sample {
            assert!(nd.witnesses.iter().any(|w| &w.x == x));
        }
        assert!(!rep.all_pass());
    }

    #[test]
    fn quartic_cost_breaks_inf_compactness() {
        let mut c = cfg("-x1 + u1", "1.4142135", "x1^4");
        c.lyapunov = Some("exp(0.1*sqrt(x1^2+1))".into());
        c.ell = Some("abs(x1)".into());
        let p = build_problem(&c).unwrap();
        let rep = validate_assumptions(&p, &line(5.0, 50), &Thresholds::default());
        let ly = &rep.checks["lyapunov_drift"];
        assert_eq!(ly.verdict, Verdict::Fail);
        let w = &ly.witnesses[0];
        // ell - c at |x| = 10 (outermost far-field radius)
        assert!((w.x[0].abs() - 10.0).abs() < 1e-12);
        assert!((w.quantities["ell_minus_max_c"] - (10.0 - 1e4)).abs() < 1e-9);
        // quartic cost also exceeds quadratic growth
        assert_eq!(rep.checks["cost_growth"].verdict, Verdict::Fail);
    }

    #[test]
    fn ou_family_bounded_variant_passes_for_small_delta() {
        let mut c = cfg("-x1 + u1", "1.4142135", "0");
        c.lyapunov = Some("exp(0.05*sqrt(x1^2+1))".into());
        let p = build_problem(&c).unwrap();
        for r in [3.0, 10.0, 50.0] {
            let rep = validate_assumptions(&p, &line(r, 100), &Thresholds::default());
            let ly = &rep.checks["lyapunov_drift"];
            assert_eq!(ly.verdict, Verdict::Pass, "r = {r}: {}", ly.note);
            assert!(rep.all_pass());
        }
    }

    #[test]
    fn missing_lyapunov_is_not_checked() {
        let p = build_problem(&cfg("-x1", "1.4142135", "0.1875*x1^2")).unwrap();
        let rep = validate_assumptions(&p, &line(8.0, 64), &Thresholds::default());
        assert_eq!(rep.checks["lyapunov_drift"].verdict, Verdict::NotChecked);
        assert!(rep.all_pass(), "{:#?}", rep.checks);
    }

    #[test]
    fn near_monotone_family() {
        let mut c = cfg("-tanh(x1) + 0.2*u1", "1.4142135", "min(x1^2, 4) + 0.1*u1^2");
        c.known_lambda = Some(1.0);
        let p = build_problem(&c).unwrap();
        let th = Thresholds {
            near_monotone: true,
            ..Thresholds::default()
        };
        let rep = validate_assumptions(&p, &line(6.0, 60), &th);
        let nm = &rep.checks["near_monotone"];
        assert_eq!(nm.verdict, Verdict::Pass, "{}", nm.note);
        assert!(rep.constants["near_monotone_theta"] < 0.2);

        // linear drift: theta = 1 is out of range
        let p = build_problem(&cfg("-x1", "1.4142135", "0.25*x1^2")).unwrap();
        let rep = validate_assumptions(&p, &line(6.0, 60), &th);
        assert_eq!(rep.checks["near_monotone"].verdict, Verdict::Fail);
    }

    #[test]
    fn report_is_deterministic() {
        let mut c = cfg("-x1*abs(x1) + u1", "1.4142135", "0.01*abs(x1)");
        c.lyapunov = Some("exp(0.1*sqrt(x1^2+1))".into());
        c.ell = Some("0.05*abs(x1)".into());
        let p = build_problem(&c).unwrap();
        let s = line(10.0, 100);
        let a = validate_assumptions(&p, &s, &Thresholds::default());
        let b = validate_assumptions(&p, &s, &Thresholds::default());
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}
