//! Run artifacts on disk: atomic writes, CSV tables, and the merged `summary.json`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use riskpia_core::genmat::PolicyField;
use riskpia_core::howard::PiaTrace;
use riskpia_core::lattice::Grid;
use riskpia_core::model::ProblemSpec;

pub const SUMMARY: &str = "summary.json";
pub const TRACE: &str = "trace.csv";
pub const EIGENFUNCTION: &str = "eigenfunction.csv";
pub const POLICY: &str = "policy.csv";
pub const CONFIG_SNAPSHOT: &str = "config.toml";

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("missing artifact {0} (run `riskpia solve` first)")]
    Missing(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Floats in CSV: 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn coord_header(d: usize) -> String {
    (1..=d).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",")
}

pub fn trace_csv(trace: &PiaTrace) -> String {
    let mut s = String::from(
        "k,lambda,cw_lower,cw_upper,cw_gap,eig_iterations,policy_changes,psi_sup,psi_l1_ball,psi_min,wall_ms\n",
    );
    for r in &trace.records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{:.3}",
            r.k,
            fmt_f(r.lambda),
            fmt_f(r.cw_lower),
            fmt_f(r.cw_upper),
            fmt_f(r.cw_gap),
            r.eig_iterations,
            r.policy_changes,
            fmt_f(r.psi_sup),
            fmt_f(r.psi_l1_ball),
            fmt_f(r.psi_min),
            r.wall_ms
        );
    }
    s
}

pub fn eigenfunction_csv(g: &Grid, v: &[f64]) -> String {
    let mut s = format!("{},V\n", coord_header(g.dim()));
    for (i, val) in v.iter().enumerate() {
        let x = g.interior_point(i);
        let xs: Vec<String> = x.iter().map(|t| fmt_f(*t)).collect();
        let _ = writeln!(s, "{},{}", xs.join(","), fmt_f(*val));
    }
    s
}

pub fn policy_csv(g: &Grid, p: &ProblemSpec, policy: &PolicyField) -> String {
    let uh: Vec<String> = (1..=p.m).map(|j| format!("u{j}")).collect();
    let mut s = format!("{},control,{}\n", coord_header(g.dim()), uh.join(","));
    for (i, &k) in policy.as_slice().iter().enumerate() {
        let xs: Vec<String> = g.interior_point(i).iter().map(|t| fmt_f(*t)).collect();
        let us: Vec<String> = p.controls.point(k).iter().map(|t| fmt_f(*t)).collect();
        let _ = writeln!(s, "{},{},{}", xs.join(","), k, us.join(","));
    }
    s
}

/// Column `name` of a CSV file with a header row.
pub fn read_column(path: &Path, name: &str) -> Result<Vec<String>, ArtifactError> {
    if !path.exists() {
        return Err(ArtifactError::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| ArtifactError::Malformed {
        path: path.to_path_buf(),
        reason: "empty file".into(),
    })?;
    let col = header
        .split(',')
        .position(|h| h.trim() == name)
        .ok_or_else(|| ArtifactError::Malformed {
            path: path.to_path_buf(),
            reason: format!("no `{name}` column"),
        })?;
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(row, l)| {
            l.split(',')
                .nth(col)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| ArtifactError::Malformed {
                    path: path.to_path_buf(),
                    reason: format!("row {} is short", row + 1),
                })
        })
        .collect()
}

pub fn read_policy(path: &Path) -> Result<PolicyField, ArtifactError> {
    let col = read_column(path, "control")?;
    col.iter()
        .map(|v| {
            v.parse::<usize>().map_err(|e| ArtifactError::Malformed {
                path: path.to_path_buf(),
                reason: format!("bad control index `{v}`: {e}"),
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(PolicyField::from_vec)
}

pub fn read_values(path: &Path, name: &str) -> Result<Vec<f64>, ArtifactError> {
    let col = read_column(path, name)?;
    col.iter()
        .map(|v| {
            v.parse::<f64>().map_err(|e| ArtifactError::Malformed {
                path: path.to_path_buf(),
                reason: format!("bad number `{v}`: {e}"),
            })
        })
        .collect()
}

pub fn read_summary(dir: &Path) -> Result<Map<String, Value>, ArtifactError> {
    let path = dir.join(SUMMARY);
    if !path.exists() {
        return Err(ArtifactError::Missing(path));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ArtifactError::Malformed {
            path,
            reason: "not a JSON object".into(),
        }),
        Err(e) => Err(ArtifactError::Malformed {
            path,
            reason: e.to_string(),
        }),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

/// Merges `entries` into `summary.json` (creating it if absent) and rewrites it atomically.
pub fn merge_summary(dir: &Path, entries: Map<String, Value>) -> Result<(), ArtifactError> {
    let mut summary = match read_summary(dir) {
        Ok(m) => m,
        Err(ArtifactError::Missing(_)) => Map::new(),
        Err(e) => return Err(e),
    };
    summary.extend(entries);
    write_atomic(&dir.join(SUMMARY), to_json(&summary).as_bytes())
}

/// Numeric field of a JSON object.
pub fn get_f64(m: &Map<String, Value>, key: &str, path: &Path) -> Result<f64, ArtifactError> {
    m.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| ArtifactError::Malformed {
            path: path.to_path_buf(),
            reason: format!("missing numeric `{key}`"),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn atomic_write_and_merge() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Map::new();
        m.insert("lambda".into(), Value::from(0.25));
        merge_summary(dir.path(), m).unwrap();
        let mut m = Map::new();
        m.insert("mc".into(), Value::from("x"));
        merge_summary(dir.path(), m).unwrap();
        let s = read_summary(dir.path()).unwrap();
        assert_eq!(s["lambda"], 0.25);
        assert_eq!(s["mc"], "x");
        assert!(!dir.path().join("summary.json.tmp").exists());
    }

    #[test]
    fn reads_columns_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("policy.csv");
        fs::write(&p, "x1,control,u1\n-1,0,-1\n0,2,0.5\n").unwrap();
        assert_eq!(read_policy(&p).unwrap().as_slice(), &[0, 2]);
        assert_eq!(read_values(&p, "u1").unwrap(), vec![-1.0, 0.5]);
        assert!(matches!(read_column(&p, "V"), Err(ArtifactError::Malformed { .. })));
        assert!(matches!(
            read_policy(&dir.path().join("nope.csv")),
            Err(ArtifactError::Missing(_))
        ));
    }
}
