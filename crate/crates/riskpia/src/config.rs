//! Run configuration: one TOML document, unknown keys rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use riskpia_core::genmat::DriftScheme;
use riskpia_core::howard::{PiaOptions, Sense};
use riskpia_core::lattice::{build_box, nested_refinements, Grid, LatticeError};
use riskpia_core::model::{ProblemConfig, Thresholds};
use riskpia_core::oracle::DEFAULT_LIMIT;
use riskpia_core::perron;
use riskpia_core::sde::{DiagnosticsConfig, ExitPolicy, McConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<MonteCarloConfig>,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Upper extents of the box (and lower ones unless `lower` is given).
    pub radii: Vec<f64>,
    pub steps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub scheme: DriftScheme,
    /// Nested radii for the box-size study (fixed `steps`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refine_radii: Vec<Vec<f64>>,
    /// Steps for the mesh study at the largest refinement radius.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refine_steps: Vec<Vec<f64>>,
}

impl GridConfig {
    pub fn build(&self, d: usize) -> Result<Grid, LatticeError> {
        let lower = self.lower.as_deref().unwrap_or(&self.radii);
        build_box(d, lower, &self.radii, &self.steps)
    }

    pub fn refinements(&self, d: usize) -> Result<Vec<Grid>, LatticeError> {
        let base = self.build(d)?;
        nested_refinements(&base, &self.refine_radii)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPolicy {
    /// The same control index at every node.
    Control(usize),
    /// A CSV with a `control` column, one row per interior node (e.g. a previous `policy.csv`).
    File(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub sense: Sense,
    pub tol_lambda: f64,
    pub tie_tol: f64,
    pub max_outer: usize,
    pub eig_tol: f64,
    pub eig_max_iter: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi_ball_radius: Option<f64>,
    pub warm_start: bool,
    pub initial: InitialPolicy,
}

impl Default for SolveConfig {
    fn default() -> Self {
        let o = PiaOptions::default();
        Self {
            sense: o.sense,
            tol_lambda: o.tol_lambda,
            tie_tol: o.tie_tol,
            max_outer: o.max_outer,
            eig_tol: perron::DEFAULT_TOL,
            eig_max_iter: perron::DEFAULT_MAX_ITER,
            psi_ball_radius: None,
            warm_start: o.warm_start,
            initial: InitialPolicy::Control(0),
        }
    }
}

impl SolveConfig {
    pub fn options(&self, allow_guard_fail: bool) -> PiaOptions {
        PiaOptions {
            sense: self.sense,
            tol_lambda: self.tol_lambda,
            tie_tol: self.tie_tol,
            max_outer: self.max_outer,
            eig_tol: self.eig_tol,
            eig_max_iter: self.eig_max_iter,
            psi_ball_radius: self.psi_ball_radius,
            allow_guard_fail,
            warm_start: self.warm_start,
            keep_history: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    /// Risk-cost estimate: start, horizon, step, paths, seed, exit policy.
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exit: ExitPolicy,
    /// Control index used when no solve artifact is present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_control: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feynman_kac: Option<FkConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub twisted: Option<TwistedConfig>,
}

impl MonteCarloConfig {
    pub fn risk(&self) -> McConfig {
        McConfig {
            x0: self.x0.clone(),
            horizon: self.horizon,
            dt: self.dt,
            n_paths: self.n_paths,
            seed: self.seed,
            exit: self.exit,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkConfig {
    /// One check per starting point.
    pub x0: Vec<Vec<f64>>,
    pub t_max: f64,
    pub dt: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwistedConfig {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub exit: ExitPolicy,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub limit: u64,
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            limit: DEFAULT_LIMIT,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Half-width of the tensor sample; defaults to the smallest grid radius.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_radius: Option<f64>,
    /// Sample points per axis.
    pub sample_points: usize,
    pub thresholds: Thresholds,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            sample_radius: None,
            sample_points: 33,
            thresholds: Thresholds::default(),
        }
    }
}

impl CheckConfig {
    pub fn sample(&self, d: usize, default_radius: f64) -> Vec<Vec<f64>> {
        let r = self.sample_radius.unwrap_or(default_radius);
        let n = self.sample_points.max(2);
        let axis: Vec<f64> = (0..n)
            .map(|i| -r + 2.0 * r * i as f64 / (n - 1) as f64)
            .collect();
        match d {
            1 => axis.iter().map(|&x| vec![x]).collect(),
            _ => axis
                .iter()
                .flat_map(|&x| axis.iter().map(move |&y| vec![x, y]))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also dump the final generator matrix as `i j value` triplets.
    pub matrix_triplets: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            matrix_triplets: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    // relative paths inside the config are relative to the config file
    if let InitialPolicy::File(f) = &mut cfg.solve.initial {
        if f.is_relative() {
            if let Some(parent) = path.parent() {
                *f = parent.join(&*f);
            }
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const OU: &str = r#"
[problem]
d = 1
m = 1
b = ["-x1"]
sigma = ["1.4142135623730951"]
c = "0.1875*x1^2"
controls = { points = [[0.0]] }

[grid]
radii = [8.0]
steps = [0.015625]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: RunConfig = toml::from_str(OU).unwrap();
        assert_eq!(c.solve.sense, Sense::Min);
        assert_eq!(c.solve.max_outer, 200);
        assert_eq!(c.oracle.limit, 100_000);
        assert!(matches!(c.solve.initial, InitialPolicy::Control(0)));
        assert_eq!(c.grid.build(1).unwrap().n_interior(), 1023);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["\n[solve]\nmax_iter = 3\n", "\n[grid2]\n", "\n[check.thresholds]\nmin_elipticity = 1\n"] {
            let text = format!("{OU}{extra}");
            assert!(toml::from_str::<RunConfig>(&text).is_err(), "{extra}");
        }
        let typo = OU.replace("sigma =", "sigmaa =");
        assert!(toml::from_str::<RunConfig>(&typo).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let c: RunConfig = toml::from_str(OU).unwrap();
        let text = toml::to_string(&c).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(toml::to_string(&back).unwrap(), text);
    }

    #[test]
    fn decreasing_refinement_radii_rejected() {
        let text = OU.replace("steps = [0.015625]", "steps = [0.5]\nrefine_radii = [[4.0], [2.0]]");
        let c: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(c.grid.refinements(1), Err(LatticeError::NotIncreasing));
    }
}
