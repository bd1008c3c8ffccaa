//! Run configuration: JSON schema, dotted overrides and canonical hashing.

use std::f64::consts::PI;

use formstab_core::msf::MsfGridSpec;
use formstab_core::simulate::{HistoryPolicy, TrajectorySpec};
use formstab_core::{CouplingGainVector, FormationSpec, GainVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Invalid input; reported with exit status 2.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub gains: Gains,
    #[serde(default)]
    pub topology: Option<TopologyConfig>,
    pub delay: DelayConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub acs: AcsConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub bifurcation: BifurcationConfig,
    #[serde(default)]
    pub msf: MsfConfig,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    pub p0: GainVector,
    #[serde(default)]
    pub pbar: CouplingGainVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    /// `adjacency[i][j] > 0` when agent `i` listens to agent `j`.
    pub adjacency: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    /// Largest switching delay listed.
    pub horizon: f64,
    pub tolerance: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            horizon: 30.0,
            tolerance: formstab_core::acs::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcsConfig {
    pub omega_max: f64,
    pub samples: usize,
}

impl Default for AcsConfig {
    fn default() -> Self {
        Self {
            omega_max: 5.0,
            samples: 1001,
        }
    }
}

/// Root window; unset edges fall back to the delay-dependent default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub re_min: Option<f64>,
    pub re_max: Option<f64>,
    pub im_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    K0H0,
    LambdaH0,
    #[default]
    LambdaPlane,
    Contours,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BifurcationConfig {
    pub plane: Plane,
    /// Frequency range `|omega| <= omega_max`; default depends on the delay.
    pub omega_max: Option<f64>,
    /// `Re mu` levels for `contours`.
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub n_re: usize,
    pub n_im: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = MsfGridSpec::default();
        Self {
            re_min: g.re_min,
            re_max: g.re_max,
            im_min: g.im_min,
            im_max: g.im_max,
            n_re: g.n_re,
            n_im: g.n_im,
        }
    }
}

impl GridConfig {
    pub fn spec(&self) -> MsfGridSpec {
        MsfGridSpec {
            re_min: self.re_min,
            re_max: self.re_max,
            im_min: self.im_min,
            im_max: self.im_max,
            n_re: self.n_re,
            n_im: self.n_im,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsfConfig {
    /// Evaluate the field on the grid (expensive for large delays).
    pub field: bool,
    pub grid: GridConfig,
    /// Number of self-intersections the boundary window must enclose.
    pub j_max: usize,
    /// Bound on `|omega tau|`; default `2 pi (j_max + 1)`.
    pub omega_window: Option<f64>,
}

impl Default for MsfConfig {
    fn default() -> Self {
        Self {
            field: true,
            grid: GridConfig::default(),
            j_max: 3,
            omega_window: None,
        }
    }
}

impl MsfConfig {
    pub fn window(&self) -> f64 {
        self.omega_window.unwrap_or(2.0 * PI * (self.j_max as f64 + 1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    pub t_end: f64,
    pub dt: Option<f64>,
    pub history: HistoryPolicy,
    pub trajectory: TrajectorySpec,
    /// Default: the isosceles triangle for three agents, otherwise all zero.
    pub formation: Option<FormationSpec>,
    pub perturbation: Option<Vec<[f64; 3]>>,
    pub log_stride: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            t_end: 300.0,
            dt: None,
            history: HistoryPolicy::AtRest,
            trajectory: TrajectorySpec::parabola(),
            formation: None,
            perturbation: None,
            log_stride: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
    pub format: Format,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: "formstab-out".into(),
            format: Format::Csv,
        }
    }
}

/// Applies `path.to.key=value`; the value is read as JSON when it parses,
/// otherwise as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), SchemaError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| SchemaError(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(SchemaError(format!("override path `{path}` has an empty segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for (n, key) in keys.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(SchemaError(format!(
                "override `{path}`: `{}` is not an object",
                keys[..n].join(".")
            )));
        };
        if n + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("override path has at least one key")
}

/// Parses and checks a configuration document.
pub fn parse(doc: &Value) -> Result<RunConfig, SchemaError> {
    let config: RunConfig = serde_path_to_error::deserialize(doc.clone())
        .map_err(|e| SchemaError(format!("{}: {}", e.path(), e.inner())))?;
    validate(&config)?;
    Ok(config)
}

fn check(ok: bool, path: &str, message: &str) -> Result<(), SchemaError> {
    if ok {
        Ok(())
    } else {
        Err(SchemaError(format!("{path}: {message}")))
    }
}

fn validate(c: &RunConfig) -> Result<(), SchemaError> {
    check(c.gains.p0.is_finite(), "gains.p0", "gains must be finite")?;
    check(
        c.gains.pbar.as_array().iter().all(|v| v.is_finite()),
        "gains.pbar",
        "gains must be finite",
    )?;
    check(c.delay.tau.is_finite() && c.delay.tau >= 0.0, "delay.tau", "must be finite and nonnegative")?;
    if let Some(t) = &c.topology {
        let n = t.adjacency.len();
        check(n > 0, "topology.adjacency", "must not be empty")?;
        for (i, row) in t.adjacency.iter().enumerate() {
            check(row.len() == n, &format!("topology.adjacency[{i}]"), "matrix must be square")?;
        }
    }
    check(
        c.classify.horizon.is_finite() && c.classify.horizon >= 0.0,
        "classify.horizon",
        "must be finite and nonnegative",
    )?;
    check(
        c.classify.tolerance.is_finite() && c.classify.tolerance > 0.0,
        "classify.tolerance",
        "must be positive",
    )?;
    check(c.acs.omega_max.is_finite() && c.acs.omega_max > 0.0, "acs.omega_max", "must be positive")?;
    check(c.acs.samples >= 2, "acs.samples", "needs at least 2 samples")?;
    for (name, v) in [
        ("spectrum.re_min", c.spectrum.re_min),
        ("spectrum.re_max", c.spectrum.re_max),
        ("spectrum.im_max", c.spectrum.im_max),
    ] {
        check(v.map_or(true, f64::is_finite), name, "must be finite")?;
    }
    if let Some(w) = c.bifurcation.omega_max {
        check(w.is_finite() && w > 0.0, "bifurcation.omega_max", "must be positive")?;
    }
    check(
        c.bifurcation.levels.iter().all(|v| v.is_finite()),
        "bifurcation.levels",
        "must be finite",
    )?;
    c.msf
        .grid
        .spec()
        .validate()
        .map_err(|e| SchemaError(format!("msf.grid: {e}")))?;
    let w = c.msf.window();
    check(w.is_finite() && w > 0.0, "msf.omega_window", "must be positive")?;
    let s = &c.simulation;
    // the relation to the delay is checked when a simulation actually runs
    check(s.t_end.is_finite() && s.t_end > 0.0, "simulation.t_end", "must be positive")?;
    if let Some(dt) = s.dt {
        check(dt.is_finite() && dt > 0.0, "simulation.dt", "must be positive")?;
    }
    check(s.log_stride > 0, "simulation.log_stride", "must be positive")?;
    s.trajectory
        .validate()
        .map_err(|e| SchemaError(format!("simulation.trajectory: {e}")))?;
    check(!c.output.directory.is_empty(), "output.directory", "must not be empty")?;
    Ok(())
}

/// Canonical form of the resolved configuration (defaults filled in, keys sorted).
pub fn resolved(config: &RunConfig) -> Value {
    serde_json::to_value(config).expect("configuration serializes")
}

/// SHA-256 of the canonical configuration. The output directory only says
/// where artifacts go, so it is left out: reruns elsewhere hash identically.
pub fn hash(resolved: &Value) -> String {
    let mut content = resolved.clone();
    if let Some(Value::Object(out)) = content.get_mut("output") {
        out.remove("directory");
    }
    let text = serde_json::to_string(&content).expect("configuration serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
