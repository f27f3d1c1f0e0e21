//! Output files: schema-versioned CSV and JSON, atomic writes, and the run manifest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const SCHEMA: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => format_float(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<i64> for Cell {
    fn from(i: i64) -> Self {
        Cell::Int(i)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.into())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Float)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

pub fn render_csv(header: &[&str], rows: &[Vec<Cell>], comments: &[String]) -> Vec<u8> {
    let mut out = format!("# schema: {SCHEMA}\n").into_bytes();
    for c in comments {
        out.extend_from_slice(format!("# {c}\n").as_bytes());
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).expect("in-memory write");
    for r in rows {
        assert_eq!(r.len(), header.len(), "row width must match the header");
        w.write_record(r.iter().map(Cell::render)).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema: u32,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

pub fn render_json<T: Serialize>(kind: &str, body: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(&Versioned { schema: SCHEMA, kind, body }).expect("report serializes");
    v.push(b'\n');
    v
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temp file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// The single sink for every file a run produces.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    outputs: Vec<OutputEntry>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), outputs: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.root.join(name), bytes)?;
        self.outputs.retain(|o| o.path != name);
        self.outputs.push(OutputEntry { path: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>], comments: &[String]) -> std::io::Result<()> {
        self.write(name, &render_csv(header, rows, comments))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, kind: &str, body: &T) -> std::io::Result<()> {
        self.write(name, &render_json(kind, body))
    }

    /// Records a file written elsewhere (a nested run) under this root.
    pub fn adopt(&mut self, entry: OutputEntry) {
        self.outputs.retain(|o| o.path != entry.path);
        self.outputs.push(entry);
    }

    pub fn outputs(&self) -> &[OutputEntry] {
        &self.outputs
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Unset when the measured quantity is not a finite number.
    pub value: Option<f64>,
    /// Human-readable acceptance rule, e.g. `<= 1e-10`.
    pub limit: String,
    pub detail: String,
}

impl CheckResult {
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self { name: name.into(), passed: value <= limit, value: finite(value), limit: format!("<= {limit:e}"), detail: String::new() }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            passed: (lo..=hi).contains(&value),
            value: finite(value),
            limit: format!("in [{lo}, {hi}]"),
            detail: String::new(),
        }
    }

    pub fn flag(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, value: None, limit: "true".into(), detail: detail.into() }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: u32,
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_sha256: String,
    pub started: String,
    pub finished: String,
    pub elapsed_seconds: f64,
    pub threads: usize,
    pub exit_code: i32,
    pub error: Option<String>,
    pub residuals: Vec<(String, Option<f64>)>,
    pub checks: Vec<CheckResult>,
    pub outputs: Vec<OutputEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> std::io::Result<Manifest> {
        let text = std::fs::read(dir.join(MANIFEST))?;
        serde_json::from_slice(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Recomputes every listed digest; returns the paths that are missing or changed.
pub fn verify_manifest(dir: &Path) -> std::io::Result<Vec<String>> {
    let m = Manifest::read(dir)?;
    let mut bad = Vec::new();
    for o in &m.outputs {
        match std::fs::read(dir.join(&o.path)) {
            Ok(b) if sha256_hex(&b) == o.sha256 && b.len() as u64 == o.bytes => {}
            _ => bad.push(o.path.clone()),
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_the_csv_format() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE, -0.0] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn csv_starts_with_the_schema_line() {
        let b = render_csv(&["a", "b"], &[vec![Cell::Int(3), Cell::Float(0.5)], vec![Cell::Text("x".into()), Cell::Empty]], &[]);
        assert_eq!(String::from_utf8(b).unwrap(), "# schema: 1\na,b\n3,5.0000000000000000e-1\nx,\n");
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("sub/f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
