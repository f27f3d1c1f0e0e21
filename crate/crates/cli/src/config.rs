//! Run configuration: a strict TOML schema with defaults for every field.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Spectrum,
    Sweep,
    Perturb,
    Project,
    Probe,
    Simulate,
    VerifyCalculus,
    Golden,
}

impl Subcommand {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subcommand::Spectrum => "spectrum",
            Subcommand::Sweep => "sweep",
            Subcommand::Perturb => "perturb",
            Subcommand::Project => "project",
            Subcommand::Probe => "probe",
            Subcommand::Simulate => "simulate",
            Subcommand::VerifyCalculus => "verify-calculus",
            Subcommand::Golden => "golden",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSpec {
    FlatTorus,
    Sphere,
    /// Surface of revolution with profile `r(u) = Σ a_j cos(j u)`, coefficients in `profile`.
    Revolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservableSpec {
    CosTheta,
    CosX1CosTheta,
    CosX1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimulateMode {
    /// MSD and velocity autocorrelation, plus `⟨f, g⟩` when observables are set.
    Ensemble,
    /// Correlation decay of `f` fitted against the spectral gap.
    Decay,
    /// Median distance to the noiseless geodesic over an ε list.
    Deviation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameBaseSpec {
    FlatTorus,
    Sphere,
    Revolution,
    Euclidean3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Acceptance-size ensembles and grids.
    Full,
    /// Small ensembles for smoke runs.
    Quick,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub max: f64,
    pub min: f64,
    pub ratio: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { max: 0.2, min: 1e-3, ratio: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    /// `[re, im]`.
    pub center: [f64; 2],
    pub radius: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { center: [0.0, -0.2], radius: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub residual: f64,
    pub imag: f64,
    pub exact: f64,
    pub mirror: f64,
    pub idempotency: f64,
    pub trace: f64,
    pub rank_one: f64,
    pub richardson: f64,
    pub slope_residual: f64,
    pub msd_se: f64,
    pub dt_shift_se: f64,
    pub decay_rel: f64,
    pub calculus: f64,
    pub nash: f64,
    pub control_slope: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            residual: 1e-9,
            imag: 1e-12,
            exact: 1e-13,
            mirror: 1e-10,
            idempotency: 1e-8,
            trace: 1e-6,
            rank_one: 1e-7,
            richardson: 0.15,
            slope_residual: 5e-3,
            msd_se: 3.0,
            dt_shift_se: 1.0,
            decay_rel: 0.3,
            calculus: 1e-6,
            nash: 1e-8,
            control_slope: 0.1,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 15] {
        [
            ("residual", self.residual),
            ("imag", self.imag),
            ("exact", self.exact),
            ("mirror", self.mirror),
            ("idempotency", self.idempotency),
            ("trace", self.trace),
            ("rank_one", self.rank_one),
            ("richardson", self.richardson),
            ("slope_residual", self.slope_residual),
            ("msd_se", self.msd_se),
            ("dt_shift_se", self.dt_shift_se),
            ("decay_rel", self.decay_rel),
            ("calculus", self.calculus),
            ("nash", self.nash),
            ("control_slope", self.control_slope),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSpec {
    /// Eigenvalues kept per block when the block is too large for the dense solver.
    pub count: usize,
    /// Compute eigenvectors and residuals; eigenvalues only when off.
    pub vectors: bool,
    pub mirror: bool,
    pub conjugation: bool,
}

impl Default for SpectrumSpec {
    fn default() -> Self {
        Self { count: 20, vectors: true, mirror: true, conjugation: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectSpec {
    /// Eigenvalue (in spectral order) the contour is centred on when `center` is unset.
    pub index: usize,
    pub center: Option<[f64; 2]>,
    /// Defaults to a third of the distance from the centre eigenvalue to its nearest neighbour.
    pub radius: Option<f64>,
    pub nodes: usize,
    pub delta: f64,
    pub derivative: bool,
}

impl Default for ProjectSpec {
    fn default() -> Self {
        Self { index: 0, center: None, radius: None, nodes: 64, delta: 1e-3, derivative: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbSpec {
    pub index: usize,
    pub delta: f64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self { index: 0, delta: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSpec {
    pub s: f64,
    pub shell: f64,
    pub lambda: [f64; 2],
    pub expected_slope: [f64; 2],
    /// Also run the `s = 0` weight and require a flat slope.
    pub control: bool,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self { s: 2.0 / 3.0, shell: 1.5, lambda: [0.0, 0.0], expected_slope: [-0.78, -0.52], control: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    pub mode: SimulateMode,
    pub paths: usize,
    pub horizon: f64,
    pub dt: f64,
    /// Time between recorded samples.
    pub sample_dt: f64,
    pub coarsen: usize,
    pub blocks: usize,
    /// `[x1, x2, theta]`; unset means a uniform start.
    pub initial: Option<[f64; 3]>,
    pub f: Option<ObservableSpec>,
    pub g: Option<ObservableSpec>,
    pub origins: usize,
    pub stride: f64,
    pub check_msd: bool,
    /// Rerun at `dt/2` on the same Brownian paths and bound the shift.
    pub dt_halving: bool,
    pub deviation_eps: Vec<f64>,
    pub exponent_range: [f64; 2],
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            mode: SimulateMode::Ensemble,
            paths: 10_000,
            horizon: 10.0,
            dt: 0.01,
            sample_dt: 0.1,
            coarsen: 1,
            blocks: 50,
            initial: None,
            f: None,
            g: None,
            origins: 20,
            stride: 1.0,
            check_msd: true,
            dt_halving: false,
            deviation_eps: (0..5).map(|i| 1e-4 * 10f64.powf(i as f64 / 2.0)).collect(),
            exponent_range: [0.4, 0.6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalculusSpec {
    pub trials: usize,
    pub bases: Vec<FrameBaseSpec>,
    pub intertwining_points: usize,
    /// Count `div X_j = 0` as a check rather than a diagnostic.
    pub nash_divergence: bool,
}

impl Default for CalculusSpec {
    fn default() -> Self {
        Self {
            trials: 50,
            bases: vec![FrameBaseSpec::FlatTorus, FrameBaseSpec::Sphere, FrameBaseSpec::Revolution, FrameBaseSpec::Euclidean3],
            intertwining_points: 20,
            nash_divergence: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoldenSpec {
    pub scale: Scale,
    /// Directory of a previous suite run to compare against.
    pub reference: Option<PathBuf>,
    pub abs: f64,
    pub rel: f64,
}

impl Default for GoldenSpec {
    fn default() -> Self {
        Self { scale: Scale::Full, reference: None, abs: 1e-12, rel: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub subcommand: Option<Subcommand>,
    pub model: ModelSpec,
    pub profile: Vec<f64>,
    pub eps: Vec<f64>,
    /// Torus momenta `[k1, k2]`.
    pub k: Vec<[i64; 2]>,
    /// Fiber modes `N`; unset means `max(64, ⌈8/√ε⌉)`.
    pub truncation: Option<usize>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub grid: GridSpec,
    pub window: WindowSpec,
    pub tolerances: Tolerances,
    pub spectrum: SpectrumSpec,
    pub project: ProjectSpec,
    pub perturb: PerturbSpec,
    pub probe: ProbeSpec,
    pub simulate: SimulateSpec,
    pub calculus: CalculusSpec,
    pub golden: GoldenSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: None,
            model: ModelSpec::FlatTorus,
            profile: vec![2.0, 1.0],
            eps: vec![0.1],
            k: vec![[1, 0]],
            truncation: None,
            seed: 1,
            output: None,
            grid: GridSpec::default(),
            window: WindowSpec::default(),
            tolerances: Tolerances::default(),
            spectrum: SpectrumSpec::default(),
            project: ProjectSpec::default(),
            perturb: PerturbSpec::default(),
            probe: ProbeSpec::default(),
            simulate: SimulateSpec::default(),
            calculus: CalculusSpec::default(),
            golden: GoldenSpec::default(),
        }
    }
}

/// Every violation found in a config, not just the first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0.join("; "))
    }
}

impl std::error::Error for ConfigError {}

fn known_keys() -> BTreeSet<String> {
    let mut full = RunConfig::default();
    full.subcommand = Some(Subcommand::Spectrum);
    full.truncation = Some(1);
    full.output = Some(PathBuf::from("."));
    full.project.center = Some([0.0, 0.0]);
    full.project.radius = Some(1.0);
    full.simulate.initial = Some([0.0; 3]);
    full.simulate.f = Some(ObservableSpec::CosTheta);
    full.simulate.g = Some(ObservableSpec::CosTheta);
    full.golden.reference = Some(PathBuf::from("."));
    let v = toml::Value::try_from(&full).expect("default config serializes");
    let mut keys = BTreeSet::new();
    collect_keys(&v, "", &mut keys);
    keys
}

fn collect_keys(v: &toml::Value, prefix: &str, out: &mut BTreeSet<String>) {
    if let toml::Value::Table(t) = v {
        for (k, v) in t {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            if let toml::Value::Table(_) = v {
                collect_keys(v, &path, out);
            }
            out.insert(path);
        }
    }
}

/// Removes keys absent from `known`, reporting each one.
fn prune_unknown(v: &mut toml::Value, prefix: &str, known: &BTreeSet<String>, out: &mut Vec<String>) {
    if let toml::Value::Table(t) = v {
        t.retain(|k, _| {
            let path = if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
            let keep = known.contains(&path);
            if !keep {
                out.push(format!("{path}: unknown key"));
            }
            keep
        });
        for (k, v) in t.iter_mut() {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            prune_unknown(v, &path, known, out);
        }
    }
}

/// Parses and validates a config, reporting unknown keys, type errors and range
/// violations together.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut value: toml::Value = toml::from_str::<toml::Table>(text)
        .map(toml::Value::Table)
        .map_err(|e| ConfigError(vec![e.message().to_string()]))?;
    let mut bad = Vec::new();
    prune_unknown(&mut value, "", &known_keys(), &mut bad);
    match value.try_into::<RunConfig>() {
        Ok(cfg) => {
            if let Err(e) = cfg.validate() {
                bad.extend(e.0);
            }
            if bad.is_empty() {
                Ok(cfg)
            } else {
                Err(ConfigError(bad))
            }
        }
        Err(e) => {
            bad.push(e.message().to_string());
            Err(ConfigError(bad))
        }
    }
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("config serializes")
}

fn positive(bad: &mut Vec<String>, field: &str, x: f64) {
    if !(x > 0.0 && x.is_finite()) {
        bad.push(format!("{field}: must be positive and finite, got {x}"));
    }
}

fn range(bad: &mut Vec<String>, field: &str, r: [f64; 2]) {
    if !(r[0] < r[1] && r[0].is_finite() && r[1].is_finite()) {
        bad.push(format!("{field}: need lo < hi, got [{}, {}]", r[0], r[1]));
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut bad = Vec::new();
        if self.eps.is_empty() {
            bad.push("eps: at least one value required".into());
        }
        for (i, e) in self.eps.iter().enumerate() {
            if !e.is_finite() || *e < 0.0 {
                bad.push(format!("eps[{i}]: must be finite and nonnegative, got {e}"));
            }
        }
        if self.k.is_empty() {
            bad.push("k: at least one momentum required".into());
        }
        if self.truncation == Some(0) {
            bad.push("truncation: must be at least 1".into());
        }
        if self.model == ModelSpec::Revolution && self.profile.is_empty() {
            bad.push("profile: revolution model needs coefficients".into());
        }
        let g = &self.grid;
        positive(&mut bad, "grid.min", g.min);
        positive(&mut bad, "grid.max", g.max);
        if g.min >= g.max {
            bad.push(format!("grid.min: must be below grid.max, got {} >= {}", g.min, g.max));
        }
        if !(g.ratio > 0.0 && g.ratio < 1.0) {
            bad.push(format!("grid.ratio: must lie in (0, 1), got {}", g.ratio));
        }
        positive(&mut bad, "window.radius", self.window.radius);
        for (name, t) in self.tolerances.entries() {
            positive(&mut bad, &format!("tolerances.{name}"), t);
        }
        if self.spectrum.count == 0 {
            bad.push("spectrum.count: must be at least 1".into());
        }
        let p = &self.project;
        if let Some(r) = p.radius {
            positive(&mut bad, "project.radius", r);
        }
        if p.nodes < 8 {
            bad.push(format!("project.nodes: need at least 8, got {}", p.nodes));
        }
        positive(&mut bad, "project.delta", p.delta);
        positive(&mut bad, "perturb.delta", self.perturb.delta);
        positive(&mut bad, "probe.shell", self.probe.shell);
        range(&mut bad, "probe.expected_slope", self.probe.expected_slope);
        let s = &self.simulate;
        for (name, x) in [("horizon", s.horizon), ("dt", s.dt), ("sample_dt", s.sample_dt), ("stride", s.stride)] {
            positive(&mut bad, &format!("simulate.{name}"), x);
        }
        if s.sample_dt < s.dt {
            bad.push(format!("simulate.sample_dt: must be at least dt, got {} < {}", s.sample_dt, s.dt));
        }
        for (name, n) in [("paths", s.paths), ("coarsen", s.coarsen), ("blocks", s.blocks), ("origins", s.origins)] {
            if n == 0 {
                bad.push(format!("simulate.{name}: must be at least 1"));
            }
        }
        if s.mode == SimulateMode::Decay && s.f.is_none() {
            bad.push("simulate.f: decay mode needs an observable".into());
        }
        for (i, e) in s.deviation_eps.iter().enumerate() {
            if !(e.is_finite() && *e >= 0.0) {
                bad.push(format!("simulate.deviation_eps[{i}]: must be finite and nonnegative, got {e}"));
            }
        }
        range(&mut bad, "simulate.exponent_range", s.exponent_range);
        if self.calculus.trials == 0 {
            bad.push("calculus.trials: must be at least 1".into());
        }
        if self.calculus.intertwining_points == 0 {
            bad.push("calculus.intertwining_points: must be at least 1".into());
        }
        positive(&mut bad, "golden.abs", self.golden.abs);
        positive(&mut bad, "golden.rel", self.golden.rel);
        if bad.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(bad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_sweep_fills_defaults() {
        let c = parse_config("subcommand = \"sweep\"\n").unwrap();
        assert_eq!(c.subcommand, Some(Subcommand::Sweep));
        assert_eq!(c.grid, GridSpec::default());
        assert_eq!(c.window, WindowSpec::default());
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c.k, vec![[1, 0]]);
    }

    #[test]
    fn ratio_out_of_range_names_the_field() {
        let e = parse_config("[grid]\nratio = 1.2\n").unwrap_err();
        assert_eq!(e.0.len(), 1);
        assert!(e.0[0].starts_with("grid.ratio"), "{e}");
    }

    #[test]
    fn all_violations_are_reported() {
        let e = parse_config("eps = [-1.0]\n[grid]\nratio = 1.2\nmin = 0.0\n[tolerances]\nimag = -1.0\n").unwrap_err();
        let fields: Vec<&str> = e.0.iter().map(|s| s.split(':').next().unwrap()).collect();
        for f in ["eps[0]", "grid.ratio", "grid.min", "tolerances.imag"] {
            assert!(fields.contains(&f), "{f} missing from {e}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = parse_config("sed = 3\n[tolerances]\nresidul = 1e-3\n[window]\nradius = 1.0\nextra = 2\n").unwrap_err();
        assert_eq!(e.0.len(), 3, "{e}");
        assert!(e.0.iter().any(|s| s.starts_with("tolerances.residul")));
        let e = parse_config("bogus = 1\neps = [-1.0]\n[grid]\nratio = 2.0\n").unwrap_err();
        assert_eq!(e.0.len(), 3, "{e}");
        assert!(e.0[0].starts_with("bogus") && e.0.iter().any(|s| s.starts_with("grid.ratio")));
    }

    #[test]
    fn round_trip_is_identity() {
        let text = "subcommand = \"probe\"\nk = [[2, -1], [0, 3]]\ntruncation = 40\n[probe]\ns = 0.5\n[simulate]\nf = \"cos-x1\"\ninitial = [0.1, 0.2, 0.3]\n";
        let a = parse_config(text).unwrap();
        let b = parse_config(&to_toml(&a)).unwrap();
        assert_eq!(a, b);
        assert_eq!(to_toml(&a), to_toml(&b));
        let d = RunConfig::default();
        assert_eq!(parse_config(&to_toml(&d)).unwrap(), d);
    }

    #[test]
    fn type_errors_are_reported() {
        assert!(parse_config("seed = \"x\"\n").is_err());
        assert!(parse_config("subcommand = \"plot\"\n").is_err());
    }
}
