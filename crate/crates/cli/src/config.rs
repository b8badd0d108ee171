//! Run configuration: a sectioned TOML file with `[system]`, `[target]`,
//! `[optimizer]`, `[output]` and, for the two-level table, `[twolevel]`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    DoubleWell,
    Harmonic,
    Tabulated,
    TwoLevel,
    Matrices,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    pub x_max: f64,
    pub dx: f64,
    /// Double-well `B`, `ω0` and `β`.
    pub b: f64,
    pub omega0: f64,
    pub beta: f64,
    /// Harmonic frequency.
    pub omega: f64,
    /// Two-column `x V(x)` table for `tabulated`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential_file: Option<PathBuf>,
    pub n_states: usize,
    pub omega_a: f64,
    pub omega_b: f64,
    pub mu: f64,
    /// Blank-line separated `H0`, `H1`, ... blocks for `matrices`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matrix_file: Option<PathBuf>,
    pub t_final: f64,
    pub dt: f64,
    pub eigen_tol: f64,
    pub eigen_dtau: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            kind: SystemKind::DoubleWell,
            x_max: 30.0,
            dx: 0.1172,
            b: 1.0,
            omega0: 1.0,
            beta: 1.0 / 256.0,
            omega: 1.0,
            potential_file: None,
            n_states: 6,
            omega_a: 0.0,
            omega_b: 0.1568,
            mu: 0.3921,
            matrix_file: None,
            t_final: 400.0,
            dt: 0.005,
            eigen_tol: 1e-10,
            eigen_dtau: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKindConfig {
    Projection,
    Identity,
    LocalDensity,
    Follower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConfig {
    Final,
    Uniform,
    Follower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub kind: TargetKindConfig,
    /// Eigenstate index of `φ_i`.
    pub initial: usize,
    /// Eigenstate index of `φ_f` for projections.
    pub state: usize,
    pub x0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub weight: WeightConfig,
    /// Rows `t c_0 c_1 ...` replacing the built-in occupation path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficient_file: Option<PathBuf>,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            kind: TargetKindConfig::Projection,
            initial: 0,
            state: 1,
            x0: 0.0,
            sigma: None,
            weight: WeightConfig::Final,
            coefficient_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    Standard,
    Rapid,
    Fluence,
    Filtered,
    FilteredFluence,
    TimeDependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKindConfig {
    GaussianPass,
    GaussianStop,
    Band,
    NearestBin,
}

/// A frequency filter. Centers are given directly or as eigenstate pairs whose
/// transition frequencies are looked up after the eigen-solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub kind: FilterKindConfig,
    pub centers: Vec<f64>,
    pub transitions: Vec<[usize; 2]>,
    pub gamma: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { kind: FilterKindConfig::GaussianPass, centers: Vec::new(), transitions: Vec::new(), gamma: 500.0, lo: 0.0, hi: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StorageConfig {
    Auto,
    Stored,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub scheme: SchemeConfig,
    pub alpha: Vec<f64>,
    pub fluence: Vec<f64>,
    pub eta: f64,
    pub xi: f64,
    /// Constant initial guess; ignored when `guess_file` is set.
    pub guess: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub guess_file: Option<PathBuf>,
    pub threshold: f64,
    pub max_iters: usize,
    pub storage: StorageConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterConfig>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            scheme: SchemeConfig::Standard,
            alpha: vec![1.0],
            fluence: Vec::new(),
            eta: 1.0,
            xi: 1.0,
            guess: 0.0,
            guess_file: None,
            threshold: qoct::optimizer::DEFAULT_THRESHOLD,
            max_iters: 600,
            storage: StorageConfig::Auto,
            filter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Exit status is nonzero when the best yield is below this floor.
    pub floor: f64,
    /// Write every `n`-th time point of the field and occupations.
    pub field_stride: usize,
    pub occupation_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("run"), floor: 0.0, field_stride: 1, occupation_stride: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoLevelSection {
    pub times: Vec<f64>,
    pub penalties: Vec<f64>,
    pub guess: f64,
    pub dt: f64,
    pub max_iters: usize,
    /// Skip the optimal-control columns.
    pub rwa_only: bool,
}

impl Default for TwoLevelSection {
    fn default() -> Self {
        Self { times: Vec::new(), penalties: Vec::new(), guess: 0.05, dt: 0.01, max_iters: 5000, rwa_only: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub target: TargetConfig,
    pub optimizer: OptimizerSection,
    pub output: OutputConfig,
    pub twolevel: TwoLevelSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("invalid configuration")?;
        Ok(cfg)
    }

    /// Reads `path`, resolving relative file references against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(f) = p.as_mut() {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        };
        fix(&mut cfg.system.potential_file);
        fix(&mut cfg.system.matrix_file);
        fix(&mut cfg.target.coefficient_file);
        fix(&mut cfg.optimizer.guess_file);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks ranges and referenced files before any computation.
    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        for (name, v) in [("system.t_final", s.t_final), ("system.dt", s.dt), ("system.x_max", s.x_max), ("system.dx", s.dx)] {
            if !(v.is_finite() && v > 0.0) {
                bail!("{name} must be positive, got {v}");
            }
        }
        if s.n_states == 0 || s.n_states > 8 {
            bail!("system.n_states must be in 1..=8, got {}", s.n_states);
        }
        for f in [&s.potential_file, &s.matrix_file, &self.target.coefficient_file, &self.optimizer.guess_file]
            .into_iter()
            .flatten()
        {
            if !f.exists() {
                bail!("referenced file {} does not exist", f.display());
            }
        }
        if s.kind == SystemKind::Tabulated && s.potential_file.is_none() {
            bail!("system.kind = \"tabulated\" needs system.potential_file");
        }
        if s.kind == SystemKind::Matrices && s.matrix_file.is_none() {
            bail!("system.kind = \"matrices\" needs system.matrix_file");
        }
        let o = &self.optimizer;
        if !(0.0..=1.0).contains(&o.eta) || !(0.0..=2.0).contains(&o.xi) {
            bail!("optimizer.eta must lie in [0, 1] and optimizer.xi in [0, 2]");
        }
        let fluence_mode = matches!(o.scheme, SchemeConfig::Fluence | SchemeConfig::FilteredFluence)
            || (o.scheme == SchemeConfig::TimeDependent && !o.fluence.is_empty());
        if fluence_mode {
            if o.fluence.is_empty() || o.fluence.iter().any(|e| !(*e > 0.0)) {
                bail!("optimizer.fluence must be positive");
            }
        } else if o.alpha.is_empty() || o.alpha.iter().any(|a| !(*a > 0.0)) {
            bail!("optimizer.alpha must be positive");
        }
        if matches!(o.scheme, SchemeConfig::Filtered | SchemeConfig::FilteredFluence) && o.filter.is_none() {
            bail!("optimizer.filter is required for filtered schemes");
        }
        if let Some(f) = &o.filter {
            if f.gamma < 0.0 {
                bail!("optimizer.filter.gamma must be nonnegative");
            }
            for t in &f.transitions {
                if t.iter().any(|&k| k >= s.n_states) {
                    bail!("filter transition {:?} refers to a state beyond system.n_states", t);
                }
            }
        }
        let t = &self.target;
        if t.initial >= s.n_states || t.state >= s.n_states {
            bail!("target states must be below system.n_states");
        }
        if t.kind == TargetKindConfig::Follower && s.n_states < 5 {
            bail!("the follower target needs at least 5 eigenstates");
        }
        if self.output.field_stride == 0 || self.output.occupation_stride == 0 {
            bail!("output strides must be at least 1");
        }
        let tl = &self.twolevel;
        if !tl.penalties.is_empty() && tl.penalties.len() != tl.times.len() {
            bail!("twolevel.penalties must match twolevel.times");
        }
        Ok(())
    }

    /// The effective configuration with every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing configuration")
    }

    /// SHA-256 of the effective configuration.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
