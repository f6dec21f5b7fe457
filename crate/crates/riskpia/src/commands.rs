//! The five subcommands. Each returns an exit code; hard failures are errors
//! whose code comes from [`exit_code`].

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

use riskpia_core::genmat::{Discretization, PolicyField};
use riskpia_core::howard::{gradient_diagnostic, solve_pia, HowardError, SolveResult, Termination};
use riskpia_core::lattice::Grid;
use riskpia_core::model::{build_problem, validate_assumptions, ProblemSpec, Verdict};
use riskpia_core::oracle::{brute_optimum, crosscheck_values, OracleError};
use riskpia_core::perron::{cw_certificate, EigenPair, PerronError};
use riskpia_core::sde::{
    estimate_risk_cost, feynman_kac_check, twisted_diagnostics, McConfig, TwistedReport,
};

use crate::artifact::{self, fmt_f, write_atomic, ArtifactError};
use crate::config::{InitialPolicy, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAIL: i32 = 2;
pub const EXIT_GUARD: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;
pub const EXIT_ORACLE_MISMATCH: i32 = 5;
pub const EXIT_MISSING_ARTIFACT: i32 = 6;
pub const EXIT_MC_FAIL: i32 = 7;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub allow_guard_fail: bool,
}

/// Exit code for an error returned by a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(h) = cause.downcast_ref::<HowardError>() {
            match h {
                HowardError::GuardFailed(_) => return EXIT_GUARD,
                HowardError::Perron(PerronError::NonConvergence { .. }) => return EXIT_NONCONVERGENCE,
                _ => {}
            }
        }
        if let Some(PerronError::NonConvergence { .. }) = cause.downcast_ref::<PerronError>() {
            return EXIT_NONCONVERGENCE;
        }
        if let Some(ArtifactError::Missing(_)) = cause.downcast_ref::<ArtifactError>() {
            return EXIT_MISSING_ARTIFACT;
        }
    }
    EXIT_ERROR
}

struct Run {
    cfg: RunConfig,
    problem: ProblemSpec,
    grid: Grid,
    out: PathBuf,
    seed: Option<u64>,
}

fn prepare(cfg: &RunConfig, opts: &RunOptions) -> Result<Run> {
    let problem = build_problem(&cfg.problem).context("invalid [problem] section")?;
    let grid = cfg.grid.build(problem.d).context("invalid [grid] section")?;
    let out = opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let mut cfg = cfg.clone();
    if let (Some(seed), Some(mc)) = (opts.seed, cfg.mc.as_mut()) {
        mc.seed = seed;
    }
    let seed = cfg.mc.as_ref().map(|m| m.seed).or(opts.seed);
    Ok(Run {
        cfg,
        problem,
        grid,
        out,
        seed,
    })
}

fn stamp(ctx: &Run, command: &str) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
    m.insert("last_command".into(), json!(command));
    m.insert("seed".into(), json!(ctx.seed));
    m
}

fn grid_json(g: &Grid, scheme: &impl Serialize) -> Value {
    let (lower, upper): (Vec<f64>, Vec<f64>) = (0..g.dim()).map(|j| g.extents(j)).unzip();
    json!({
        "lower": lower,
        "upper": upper,
        "steps": g.steps(),
        "n_interior": g.n_interior(),
        "scheme": scheme,
    })
}

fn sample_radius(g: &Grid) -> f64 {
    g.radii().iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn cmd_check(cfg: &RunConfig, opts: &RunOptions) -> Result<i32> {
    let ctx = prepare(cfg, opts)?;
    let sample = ctx.cfg.check.sample(ctx.problem.d, sample_radius(&ctx.grid));
    let rep = validate_assumptions(&ctx.problem, &sample, &ctx.cfg.check.thresholds);
    for (name, c) in &rep.checks {
        let v = match c.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "FAIL",
            Verdict::NotChecked => "not-checked",
        };
        println!("{name:<16} {v:<12} {}", c.note);
    }
    write_atomic(&ctx.out.join("check.json"), artifact::to_json(&rep).as_bytes())?;
    Ok(if rep.all_pass() { EXIT_OK } else { EXIT_CHECK_FAIL })
}

fn initial_policy(cfg: &RunConfig, n: usize, k: usize) -> Result<PolicyField> {
    let p = match &cfg.solve.initial {
        InitialPolicy::Control(z) => PolicyField::constant(n, *z),
        InitialPolicy::File(f) => artifact::read_policy(f)?,
    };
    p.validate(n, k).context("initial policy")?;
    Ok(p)
}

fn solve_on(ctx: &Run, grid: &Grid, opts: &RunOptions) -> Result<SolveResult, HowardError> {
    let disc = Discretization::new(&ctx.problem, grid, ctx.cfg.grid.scheme);
    let v0 = match &ctx.cfg.solve.initial {
        InitialPolicy::Control(z) => PolicyField::constant(disc.n(), *z),
        // files describe the primary grid only
        InitialPolicy::File(_) if grid.n_interior() != ctx.grid.n_interior() => {
            PolicyField::constant(disc.n(), 0)
        }
        InitialPolicy::File(_) => initial_policy(&ctx.cfg, disc.n(), disc.n_controls())
            .map_err(|e| HowardError::InvariantViolation(e.to_string()))?,
    };
    solve_pia(&disc, &v0, &ctx.cfg.solve.options(opts.allow_guard_fail))
}

pub fn cmd_solve(cfg: &RunConfig, opts: &RunOptions) -> Result<i32> {
    let ctx = prepare(cfg, opts)?;
    initial_policy(&ctx.cfg, ctx.grid.n_interior(), ctx.problem.controls.len())?;
    write_atomic(
        &ctx.out.join(artifact::CONFIG_SNAPSHOT),
        toml::to_string(&ctx.cfg)?.as_bytes(),
    )?;

    let res = match solve_on(&ctx, &ctx.grid, opts) {
        Ok(r) => r,
        Err(HowardError::GuardFailed(rep)) => {
            write_atomic(&ctx.out.join("guard.json"), artifact::to_json(&rep).as_bytes())?;
            eprintln!("{}", artifact::to_json(&rep));
            return Err(HowardError::GuardFailed(rep).into());
        }
        Err(e) => return Err(e.into()),
    };
    let g = &ctx.grid;
    write_atomic(&ctx.out.join(artifact::TRACE), artifact::trace_csv(&res.trace).as_bytes())?;
    write_atomic(
        &ctx.out.join(artifact::EIGENFUNCTION),
        artifact::eigenfunction_csv(g, &res.eig.vector).as_bytes(),
    )?;
    write_atomic(
        &ctx.out.join(artifact::POLICY),
        artifact::policy_csv(g, &ctx.problem, &res.policy).as_bytes(),
    )?;
    if ctx.cfg.output.matrix_triplets {
        let m = Discretization::new(&ctx.problem, g, ctx.cfg.grid.scheme).assemble_policy(&res.policy)?;
        let mut buf = Vec::new();
        m.write_triplets(&mut buf)?;
        write_atomic(&ctx.out.join("matrix.txt"), &buf)?;
    }

    let sample = ctx.cfg.check.sample(ctx.problem.d, sample_radius(g));
    let assumptions = validate_assumptions(&ctx.problem, &sample, &ctx.cfg.check.thresholds);
    let last = res.trace.records.last();
    let mut s = stamp(&ctx, "solve");
    s.insert("sense".into(), json!(ctx.cfg.solve.sense));
    s.insert("lambda".into(), json!(res.eig.lambda));
    s.insert("cw_lower".into(), json!(res.eig.cw_lower));
    s.insert("cw_upper".into(), json!(res.eig.cw_upper));
    s.insert("eig_residual".into(), json!(res.eig.residual));
    s.insert("eig_iterations".into(), json!(res.eig.iterations));
    s.insert("harnack_ratio".into(), json!(res.eig.harnack_ratio()));
    s.insert("termination".into(), json!(res.termination));
    s.insert("outer_iterations".into(), json!(res.trace.records.len()));
    s.insert(
        "psi".into(),
        json!({
            "ball_radius": res.trace.psi_ball_radius,
            "ball_volume": res.trace.psi_ball_volume,
            "final_sup": last.map(|r| r.psi_sup),
            "final_l1_ball": last.map(|r| r.psi_l1_ball),
            "min_over_run": res.trace.records.iter().map(|r| r.psi_min).fold(f64::INFINITY, f64::min),
        }),
    );
    if let Some(known) = ctx.problem.known_lambda {
        s.insert("known_lambda".into(), json!(known));
        s.insert("error_vs_known".into(), json!((res.eig.lambda - known).abs()));
    }
    s.insert("grid".into(), grid_json(g, &ctx.cfg.grid.scheme));
    s.insert("gradient".into(), json!(gradient_diagnostic(g, &res.eig.vector)));
    s.insert("assumptions".into(), json!(assumptions));
    // a fresh solve invalidates downstream sections
    for stale in ["mc", "oracle"] {
        s.insert(stale.into(), Value::Null);
    }
    artifact::merge_summary(&ctx.out, s)?;

    println!(
        "lambda = {} in [{}, {}] ({:?}, {} outer iterations)",
        fmt_f(res.eig.lambda),
        fmt_f(res.eig.cw_lower),
        fmt_f(res.eig.cw_upper),
        res.termination,
        res.trace.records.len()
    );
    Ok(match res.termination {
        Termination::MaxIterations => EXIT_NONCONVERGENCE,
        _ => EXIT_OK,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineRow {
    pub radii: Vec<f64>,
    pub steps: Vec<f64>,
    pub n_interior: usize,
    pub lambda: f64,
    pub cw_lower: f64,
    pub cw_upper: f64,
    pub outer_iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Serialize)]
pub struct RefineReport {
    pub radius_study: Vec<RefineRow>,
    /// `lambda` nondecreasing in the box radius, up to the certificate widths.
    pub nondecreasing_in_radius: bool,
    pub strictly_increasing_in_radius: bool,
    pub mesh_study: Vec<RefineRow>,
    /// `|lambda(h) - lambda(h/2)|` for consecutive mesh rows.
    pub mesh_differences: Vec<f64>,
    pub observed_order: Option<f64>,
    pub richardson: Option<f64>,
}

fn row(g: &Grid, r: &SolveResult) -> RefineRow {
    RefineRow {
        radii: g.radii().to_vec(),
        steps: g.steps().to_vec(),
        n_interior: g.n_interior(),
        lambda: r.eig.lambda,
        cw_lower: r.eig.cw_lower,
        cw_upper: r.eig.cw_upper,
        outer_iterations: r.trace.records.len(),
        termination: r.termination,
    }
}

pub fn refine_report(cfg: &RunConfig, opts: &RunOptions) -> Result<RefineReport> {
    let ctx = prepare(cfg, opts)?;
    if ctx.cfg.grid.refine_radii.is_empty() && ctx.cfg.grid.refine_steps.is_empty() {
        bail!("[grid] needs refine_radii and/or refine_steps for a refinement study");
    }
    let grids = ctx.cfg.grid.refinements(ctx.problem.d)?;
    let mut radius_study = Vec::new();
    for g in &grids {
        radius_study.push(row(g, &solve_on(&ctx, g, opts)?));
    }
    let mut nondecreasing = true;
    let mut strict = true;
    for w in radius_study.windows(2) {
        let slack = (w[0].cw_upper - w[0].cw_lower) + (w[1].cw_upper - w[1].cw_lower);
        nondecreasing &= w[1].lambda >= w[0].lambda - slack;
        strict &= w[1].lambda > w[0].lambda + slack;
    }

    let largest = ctx
        .cfg
        .grid
        .refine_radii
        .last()
        .cloned()
        .unwrap_or_else(|| ctx.cfg.grid.radii.clone());
    let mut mesh_study = Vec::new();
    for h in &ctx.cfg.grid.refine_steps {
        let g = riskpia_core::lattice::build_grid(ctx.problem.d, &largest, h)?;
        mesh_study.push(row(&g, &solve_on(&ctx, &g, opts)?));
    }
    let diffs: Vec<f64> = mesh_study
        .windows(2)
        .map(|w| (w[1].lambda - w[0].lambda).abs())
        .collect();
    let (order, rich) = match mesh_study.len() {
        n if n >= 3 => {
            let (l1, l2, l3) = (
                mesh_study[n - 3].lambda,
                mesh_study[n - 2].lambda,
                mesh_study[n - 1].lambda,
            );
            let ratio = (l2 - l1) / (l3 - l2);
            if ratio > 1.0 && ratio.is_finite() {
                let p = ratio.log2();
                (Some(p), Some(l3 + (l3 - l2) / (2f64.powf(p) - 1.0)))
            } else {
                (None, None)
            }
        }
        2 => (None, Some(2.0 * mesh_study[1].lambda - mesh_study[0].lambda)),
        _ => (None, None),
    };
    Ok(RefineReport {
        radius_study,
        nondecreasing_in_radius: nondecreasing,
        strictly_increasing_in_radius: strict,
        mesh_study,
        mesh_differences: diffs,
        observed_order: order,
        richardson: rich,
    })
}

pub fn cmd_refine(cfg: &RunConfig, opts: &RunOptions) -> Result<i32> {
    let rep = refine_report(cfg, opts)?;
    let ctx = prepare(cfg, opts)?;
    let mut csv = String::from("study,radius,step,n_interior,lambda,cw_lower,cw_upper,outer_iterations\n");
    for (study, rows) in [("radius", &rep.radius_study), ("mesh", &rep.mesh_study)] {
        for r in rows.iter() {
            csv.push_str(&format!(
                "{study},{},{},{},{},{},{},{}\n",
                fmt_f(r.radii[0]),
                fmt_f(r.steps[0]),
                r.n_interior,
                fmt_f(r.lambda),
                fmt_f(r.cw_lower),
                fmt_f(r.cw_upper),
                r.outer_iterations
            ));
        }
    }
    write_atomic(&ctx.out.join("refine.csv"), csv.as_bytes())?;
    write_atomic(&ctx.out.join("refine.json"), artifact::to_json(&rep).as_bytes())?;
    let mut s = stamp(&ctx, "refine");
    s.insert("refinement".into(), json!(rep));
    artifact::merge_summary(&ctx.out, s)?;
    for r in rep.radius_study.iter().chain(&rep.mesh_study) {
        println!("R = {:?}, h = {:?}: lambda = {}", r.radii, r.steps, fmt_f(r.lambda));
    }
    if !rep.nondecreasing_in_radius {
        bail!("lambda decreased as the box grew; see refine.json");
    }
    Ok(EXIT_OK)
}

pub fn cmd_oracle(cfg: &RunConfig, opts: &RunOptions) -> Result<i32> {
    let ctx = prepare(cfg, opts)?;
    let disc = Discretization::new(&ctx.problem, &ctx.grid, ctx.cfg.grid.scheme);
    let o = match brute_optimum(&disc, ctx.cfg.solve.sense, ctx.cfg.oracle.limit) {
        Ok(o) => o,
        Err(e @ OracleError::TooLarge { .. }) => {
            eprintln!("{e}");
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let mut table = Vec::new();
    o.write_table(&mut table)?;
    write_atomic(&ctx.out.join("oracle_table.csv"), &table)?;
    println!(
        "oracle: {} policies, best lambda = {} (policy {})",
        o.count,
        fmt_f(o.best_lambda),
        riskpia_core::oracle::policy_digits(&o.best_policy, o.n_controls)
    );

    let mut s = stamp(&ctx, "oracle");
    let mut entry = json!({
        "count": o.count,
        "best_lambda": o.best_lambda,
        "best_policy": riskpia_core::oracle::policy_digits(&o.best_policy, o.n_controls),
        "sense": o.sense,
    });
    let mut code = EXIT_OK;
    // compare with a solve artifact on the same grid, if there is one
    let summary_path = ctx.out.join(artifact::SUMMARY);
    if let Ok(summary) = artifact::read_summary(&ctx.out) {
        let n = summary
            .get("grid")
            .and_then(|g| g.get("n_interior"))
            .and_then(Value::as_u64);
        if let (Some(n), Some(_)) = (n, summary.get("lambda")) {
            if n as usize == ctx.grid.n_interior() {
                let lambda = artifact::get_f64(&summary, "lambda", &summary_path)?;
                let policy = artifact::read_policy(&ctx.out.join(artifact::POLICY))?;
                let x = crosscheck_values(lambda, policy.as_slice(), &o, ctx.cfg.oracle.tol);
                println!(
                    "crosscheck: |{} - {}| = {:.3e} -> {}",
                    fmt_f(x.pia_lambda),
                    fmt_f(x.oracle_lambda),
                    x.difference,
                    if x.pass { "pass" } else { "FAIL" }
                );
                if !x.pass {
                    code = EXIT_ORACLE_MISMATCH;
                }
                entry["crosscheck"] = json!(x);
            }
        }
    }
    write_atomic(&ctx.out.join("oracle.json"), artifact::to_json(&entry).as_bytes())?;
    s.insert("oracle".into(), entry);
    artifact::merge_summary(&ctx.out, s)?;
    Ok(code)
}

/// Eigenpair and policy reconstructed from a solve artifact.
pub fn load_solution(dir: &Path, g: &Grid) -> Result<(EigenPair, PolicyField), ArtifactError> {
    let summary = artifact::read_summary(dir)?;
    let path = dir.join(artifact::SUMMARY);
    let lambda = artifact::get_f64(&summary, "lambda", &path)?;
    let vector = artifact::read_values(&dir.join(artifact::EIGENFUNCTION), "V")?;
    let policy = artifact::read_policy(&dir.join(artifact::POLICY))?;
    if vector.len() != g.n_interior() || policy.len() != g.n_interior() {
        return Err(ArtifactError::Malformed {
            path: dir.to_path_buf(),
            reason: format!(
                "artifact has {} nodes, configured grid has {}",
                vector.len(),
                g.n_interior()
            ),
        });
    }
    let (lo, hi) = (
        artifact::get_f64(&summary, "cw_lower", &path)?,
        artifact::get_f64(&summary, "cw_upper", &path)?,
    );
    Ok((
        EigenPair {
            lambda,
            vector,
            cw_lower: lo,
            cw_upper: hi,
            iterations: 0,
            residual: f64::NAN,
        },
        policy,
    ))
}

fn histogram_csv(rep: &TwistedReport) -> String {
    let mut s = String::new();
    let d = rep.bin_edges.len();
    let nb = rep.bin_edges[0].len() - 1;
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}_lo,x{j}_hi")).collect();
    s.push_str(&format!("{},fraction\n", header.join(",")));
    for (cell, f) in rep.histogram.iter().enumerate() {
        let mut idx = vec![0; d];
        let mut r = cell;
        for j in (0..d).rev() {
            idx[j] = r % nb;
            r /= nb;
        }
        let cols: Vec<String> = (0..d)
            .map(|j| format!("{},{}", fmt_f(rep.bin_edges[j][idx[j]]), fmt_f(rep.bin_edges[j][idx[j] + 1])))
            .collect();
        s.push_str(&format!("{},{}\n", cols.join(","), fmt_f(*f)));
    }
    s
}

pub fn cmd_simulate(cfg: &RunConfig, opts: &RunOptions) -> Result<i32> {
    let ctx = prepare(cfg, opts)?;
    let mc = ctx
        .cfg
        .mc
        .clone()
        .ok_or_else(|| anyhow!("config has no [mc] section"))?;
    let g = &ctx.grid;
    let solution = match load_solution(&ctx.out, g) {
        Ok(sol) => Some(sol),
        Err(ArtifactError::Missing(p)) if mc.constant_control.is_some() => {
            eprintln!("no solve artifact ({}); using the constant control", p.display());
            None
        }
        Err(e) => return Err(e.into()),
    };
    let policy = match (&solution, mc.constant_control) {
        (Some((_, pol)), _) => pol.clone(),
        (None, Some(k)) => PolicyField::constant(g.n_interior(), k),
        (None, None) => unreachable!(),
    };
    policy.validate(g.n_interior(), ctx.problem.controls.len())?;

    let risk = estimate_risk_cost(&ctx.problem, g, &policy, &mc.risk())?;
    println!(
        "risk-sensitive cost estimate: {} +- {} (T/2: {})",
        fmt_f(risk.value),
        fmt_f(risk.std_error),
        fmt_f(risk.value_half)
    );
    let mut section = json!({ "risk_cost": risk, "seed": mc.seed });
    let mut code = EXIT_OK;

    if let Some((eig, _)) = &solution {
        // the stored vector must still certify the stored eigenvalue's interval
        if let Ok((lo, hi)) = cw_certificate(
            &Discretization::new(&ctx.problem, g, ctx.cfg.grid.scheme).assemble_policy(&policy)?,
            &eig.vector,
        ) {
            section["certificate_recomputed"] = json!({ "cw_lower": lo, "cw_upper": hi });
        }
        if let Some(fk) = &mc.feynman_kac {
            let mut reports = Vec::new();
            for x0 in &fk.x0 {
                let c = McConfig {
                    x0: x0.clone(),
                    horizon: fk.t_max,
                    dt: fk.dt,
                    n_paths: fk.n_paths,
                    seed: mc.seed,
                    exit: riskpia_core::sde::ExitPolicy::Stop,
                };
                let r = feynman_kac_check(&ctx.problem, g, &policy, eig, &c, fk.t_max)?;
                println!(
                    "feynman-kac x0 = {:?}: {} vs V(x0) = {} (se {}, bias {}) -> {}",
                    x0,
                    fmt_f(r.estimate),
                    fmt_f(r.v0),
                    fmt_f(r.std_error),
                    fmt_f(r.bias_allowance),
                    if r.pass { "pass" } else { "FAIL" }
                );
                if !r.pass {
                    code = EXIT_MC_FAIL;
                }
                reports.push(r);
            }
            section["feynman_kac"] = json!(reports);
        }
        if let Some(tw) = &mc.twisted {
            let c = McConfig {
                x0: tw.x0.clone(),
                horizon: tw.horizon,
                dt: tw.dt,
                n_paths: tw.n_paths,
                seed: mc.seed,
                exit: tw.exit,
            };
            let rep = twisted_diagnostics(&ctx.problem, g, &policy, eig, &c, &tw.diagnostics)?;
            write_atomic(&ctx.out.join("histogram.csv"), histogram_csv(&rep).as_bytes())?;
            let mut ladder = String::from("radius,fraction_outside\n");
            for (r, f) in rep.ladder_radii.iter().zip(&rep.fraction_outside) {
                ladder.push_str(&format!("{},{}\n", fmt_f(*r), fmt_f(*f)));
            }
            write_atomic(&ctx.out.join("ladder.csv"), ladder.as_bytes())?;
            println!("twisted process: per-axis variance {:?}", rep.axis_var);
            let mut v = json!(rep);
            // paths' end points and the histogram live in CSV / are bulky
            if let Some(o) = v.as_object_mut() {
                o.remove("final_positions");
                o.remove("histogram");
            }
            section["twisted"] = v;
        }
    }
    write_atomic(&ctx.out.join("mc.json"), artifact::to_json(&section).as_bytes())?;
    let mut s = stamp(&ctx, "simulate");
    s.insert("mc".into(), section);
    artifact::merge_summary(&ctx.out, s)?;
    Ok(code)
}

pub fn run(command: &str, cfg: &RunConfig, opts: &RunOptions) -> Result<i32> {
    match command {
        "check" => cmd_check(cfg, opts),
        "solve" => cmd_solve(cfg, opts),
        "refine" => cmd_refine(cfg, opts),
        "oracle" => cmd_oracle(cfg, opts),
        "simulate" => cmd_simulate(cfg, opts),
        other => bail!("unknown command {other}"),
    }
}
