//! Regression comparison of run artifacts against stored golden files.

use crate::artifacts::MANIFEST;
use serde::Serialize;
use serde_json::Value;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn accepts(&self, got: f64, want: f64) -> bool {
        if got.is_nan() || want.is_nan() {
            return got.is_nan() && want.is_nan();
        }
        if got == want {
            return true;
        }
        (got - want).abs() <= self.abs + self.rel * want.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffEntry {
    /// Row number for CSV, JSON pointer for JSON.
    pub location: String,
    pub column: String,
    pub got: String,
    pub want: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffReport {
    pub file: PathBuf,
    pub compared: usize,
    pub entries: Vec<DiffEntry>,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug)]
pub enum GoldenError {
    Io(PathBuf, std::io::Error),
    Parse(PathBuf, String),
    /// Header, schema version, key set or shape differs: the files are not comparable.
    Schema(PathBuf, String),
}

impl fmt::Display for GoldenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GoldenError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            GoldenError::Parse(p, e) => write!(f, "{}: {e}", p.display()),
            GoldenError::Schema(p, e) => write!(f, "{}: schema drift: {e}", p.display()),
        }
    }
}

impl std::error::Error for GoldenError {}

fn read(p: &Path) -> Result<String, GoldenError> {
    std::fs::read_to_string(p).map_err(|e| GoldenError::Io(p.to_path_buf(), e))
}

/// Compares one artifact with its golden counterpart, dispatching on the extension.
pub fn golden_compare(result: &Path, golden: &Path, tol: Tolerance) -> Result<DiffReport, GoldenError> {
    let (a, b) = (read(result)?, read(golden)?);
    let mut report = DiffReport { file: result.to_path_buf(), compared: 0, entries: Vec::new() };
    match result.extension().and_then(|e| e.to_str()) {
        Some("csv") => compare_csv(&a, &b, tol, result, &mut report)?,
        Some("json") => {
            let parse = |t: &str| serde_json::from_str::<Value>(t).map_err(|e| GoldenError::Parse(result.to_path_buf(), e.to_string()));
            let (va, vb) = (parse(&a)?, parse(&b)?);
            if va.get("schema") != vb.get("schema") {
                return Err(GoldenError::Schema(result.to_path_buf(), format!("schema {:?} vs {:?}", va.get("schema"), vb.get("schema"))));
            }
            compare_json(&va, &vb, "", tol, result, &mut report)?;
        }
        _ => {
            report.compared = 1;
            if a != b {
                report.entries.push(DiffEntry { location: "file".into(), column: String::new(), got: "bytes differ".into(), want: String::new() });
            }
        }
    }
    Ok(report)
}

fn is_integer_literal(s: &str) -> bool {
    let t = s.strip_prefix('-').unwrap_or(s);
    !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit())
}

fn compare_cell(got: &str, want: &str, tol: Tolerance) -> bool {
    if is_integer_literal(got) || is_integer_literal(want) {
        return got == want;
    }
    match (got.parse::<f64>(), want.parse::<f64>()) {
        (Ok(x), Ok(y)) => tol.accepts(x, y),
        _ => got == want,
    }
}

fn split_csv(text: &str, file: &Path) -> Result<(Vec<String>, csv::StringRecord, Vec<csv::StringRecord>), GoldenError> {
    let comments: Vec<String> = text.lines().take_while(|l| l.starts_with('#')).map(str::to_owned).collect();
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| GoldenError::Parse(file.to_path_buf(), e.to_string()))?.clone();
    let rows = r.records().collect::<Result<Vec<_>, _>>().map_err(|e| GoldenError::Parse(file.to_path_buf(), e.to_string()))?;
    Ok((comments, header, rows))
}

fn compare_csv(a: &str, b: &str, tol: Tolerance, file: &Path, report: &mut DiffReport) -> Result<(), GoldenError> {
    let (ca, ha, ra) = split_csv(a, file)?;
    let (cb, hb, rb) = split_csv(b, file)?;
    let schema = |c: &[String]| c.iter().find(|l| l.starts_with("# schema:")).cloned();
    if schema(&ca).is_none() || schema(&ca) != schema(&cb) {
        return Err(GoldenError::Schema(file.to_path_buf(), format!("{:?} vs {:?}", schema(&ca), schema(&cb))));
    }
    if ha != hb {
        return Err(GoldenError::Schema(file.to_path_buf(), format!("columns {:?} vs {:?}", ha, hb)));
    }
    if ra.len() != rb.len() {
        report.entries.push(DiffEntry {
            location: "rows".into(),
            column: String::new(),
            got: ra.len().to_string(),
            want: rb.len().to_string(),
        });
    }
    for (i, (x, y)) in ra.iter().zip(&rb).enumerate() {
        for (j, col) in ha.iter().enumerate() {
            let (g, w) = (x.get(j).unwrap_or(""), y.get(j).unwrap_or(""));
            report.compared += 1;
            if !compare_cell(g, w, tol) {
                report.entries.push(DiffEntry { location: format!("row {}", i + 1), column: col.into(), got: g.into(), want: w.into() });
            }
        }
    }
    Ok(())
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "bool",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn compare_json(a: &Value, b: &Value, at: &str, tol: Tolerance, file: &Path, report: &mut DiffReport) -> Result<(), GoldenError> {
    let drift = |msg: String| GoldenError::Schema(file.to_path_buf(), format!("{}: {msg}", if at.is_empty() { "/" } else { at }));
    let diff = |report: &mut DiffReport| {
        report.entries.push(DiffEntry { location: at.into(), column: String::new(), got: a.to_string(), want: b.to_string() })
    };
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let (kx, ky): (Vec<_>, Vec<_>) = (x.keys().collect(), y.keys().collect());
            if kx != ky {
                return Err(drift(format!("keys {kx:?} vs {ky:?}")));
            }
            for (k, v) in x {
                compare_json(v, &y[k], &format!("{at}/{k}"), tol, file, report)?;
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                report.compared += 1;
                report.entries.push(DiffEntry {
                    location: at.into(),
                    column: "length".into(),
                    got: x.len().to_string(),
                    want: y.len().to_string(),
                });
            }
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                compare_json(u, v, &format!("{at}/{i}"), tol, file, report)?;
            }
        }
        (Value::Number(x), Value::Number(y)) => {
            report.compared += 1;
            let ok = if x.is_f64() || y.is_f64() {
                tol.accepts(x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN))
            } else {
                x == y
            };
            if !ok {
                diff(report);
            }
        }
        // Non-finite floats serialize as null; a number on one side only is a value change.
        (Value::Null, Value::Number(_)) | (Value::Number(_), Value::Null) => {
            report.compared += 1;
            diff(report);
        }
        _ if kind(a) != kind(b) => return Err(drift(format!("{} vs {}", kind(a), kind(b)))),
        _ => {
            report.compared += 1;
            if a != b {
                diff(report);
            }
        }
    }
    Ok(())
}

pub const DIFF_REPORT: &str = "golden-diff.json";

pub fn is_artifact(name: &str) -> bool {
    name != MANIFEST && name != DIFF_REPORT && (name.ends_with(".csv") || name.ends_with(".json"))
}

/// Compares every CSV and JSON artifact under `golden` with the same path under `result`.
/// A golden file missing from the result counts as schema drift.
pub fn compare_dirs(result: &Path, golden: &Path, tol: Tolerance) -> Result<Vec<DiffReport>, GoldenError> {
    let mut files = Vec::new();
    collect(golden, golden, &mut files)?;
    files.sort();
    let mut out = Vec::new();
    for rel in files {
        let r = result.join(&rel);
        if !r.exists() {
            return Err(GoldenError::Schema(r, "missing from the result".into()));
        }
        let mut rep = golden_compare(&r, &golden.join(&rel), tol)?;
        rep.file = rel;
        out.push(rep);
    }
    Ok(out)
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), GoldenError> {
    let rd = std::fs::read_dir(dir).map_err(|e| GoldenError::Io(dir.to_path_buf(), e))?;
    for entry in rd {
        let entry = entry.map_err(|e| GoldenError::Io(dir.to_path_buf(), e))?;
        let p = entry.path();
        if p.is_dir() {
            collect(root, &p, out)?;
        } else if p.file_name().and_then(|n| n.to_str()).is_some_and(is_artifact) {
            out.push(p.strip_prefix(root).expect("walk stays under root").to_path_buf());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: Tolerance = Tolerance { abs: 1e-8, rel: 0.0 };

    fn pair(a: &str, b: &str, ext: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
        let d = tempfile::tempdir().unwrap();
        let (pa, pb) = (d.path().join(format!("a.{ext}")), d.path().join(format!("b.{ext}")));
        std::fs::write(&pa, a).unwrap();
        std::fs::write(&pb, b).unwrap();
        (d, pa, pb)
    }

    #[test]
    fn identical_csv_has_empty_diff() {
        let t = "# schema: 1\nid,x,status\n1,1.0000000000000000e0,tracked\n";
        let (_d, a, b) = pair(t, t, "csv");
        let r = golden_compare(&a, &b, TOL).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.compared, 3);
    }

    #[test]
    fn perturbed_value_gives_one_row_diff() {
        let g = "# schema: 1\nid,x\n1,1.0000000000000000e0\n2,2.0000000000000000e0\n";
        let r = "# schema: 1\nid,x\n1,1.0000010000000000e0\n2,2.0000000000000000e0\n";
        let (_d, a, b) = pair(r, g, "csv");
        let rep = golden_compare(&a, &b, TOL).unwrap();
        assert_eq!(rep.entries.len(), 1);
        assert_eq!(rep.entries[0].location, "row 1");
        assert_eq!(rep.entries[0].column, "x");
    }

    #[test]
    fn integer_and_status_columns_are_exact() {
        let g = "# schema: 1\nid,status\n1,tracked\n";
        let r = "# schema: 1\nid,status\n2,lost\n";
        let (_d, a, b) = pair(r, g, "csv");
        assert_eq!(golden_compare(&a, &b, Tolerance { abs: 10.0, rel: 10.0 }).unwrap().entries.len(), 2);
    }

    #[test]
    fn csv_schema_drift_is_a_hard_failure() {
        let (_d, a, b) = pair("# schema: 1\nid,x\n", "# schema: 1\nid,y\n", "csv");
        assert!(matches!(golden_compare(&a, &b, TOL), Err(GoldenError::Schema(..))));
        let (_e, a, b) = pair("# schema: 2\nid,x\n", "# schema: 1\nid,x\n", "csv");
        assert!(matches!(golden_compare(&a, &b, TOL), Err(GoldenError::Schema(..))));
    }

    #[test]
    fn json_compares_numbers_with_tolerance_and_keys_exactly() {
        let g = r#"{"schema":1,"a":[1.0,2.5],"n":3,"s":"ok"}"#;
        let (_d, a, b) = pair(r#"{"schema":1,"a":[1.0,2.5000000001],"n":3,"s":"ok"}"#, g, "json");
        assert!(golden_compare(&a, &b, TOL).unwrap().is_empty());
        let (_e, a, b) = pair(r#"{"schema":1,"a":[1.0,2.5],"n":4,"s":"ok"}"#, g, "json");
        assert_eq!(golden_compare(&a, &b, TOL).unwrap().entries[0].location, "/n");
        let (_f, a, b) = pair(r#"{"schema":1,"a":[1.0,2.5],"m":3,"s":"ok"}"#, g, "json");
        assert!(matches!(golden_compare(&a, &b, TOL), Err(GoldenError::Schema(..))));
        let (_g, a, b) = pair(r#"{"schema":2,"a":[1.0,2.5],"n":3,"s":"ok"}"#, g, "json");
        assert!(matches!(golden_compare(&a, &b, TOL), Err(GoldenError::Schema(..))));
    }
}
