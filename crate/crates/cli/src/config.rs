//! Experiment configuration: a TOML document, its validation and its hash.
//!
//! ```toml
//! seed = 7
//! out = "results"
//! particles = 1000
//! horizon = 10.0
//! grid_step = 0.1          # optional, default horizon/100
//! mode = "self"            # self | frozen:<h> | flow:<file>
//! initial_k = 0
//! suites = ["all"]         # simulate dynkin girsanov picard tightness mm1-validate all
//!
//! [[kernel]]
//! id = "const"
//! params = { a = 1.0, b = 2.0 }
//! ```
//!
//! Several `[[kernel]]` tables are summed. The optional `[dynkin]`,
//! `[girsanov]`, `[picard]`, `[tightness]` and `[cells]` tables tune the
//! individual suites.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use mfqueue::{CellScheme, IntensityKernel, KernelSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTerm {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Simulate,
    Dynkin,
    Girsanov,
    Picard,
    Tightness,
    Mm1Validate,
    All,
}

impl Suite {
    pub const ORDER: [Suite; 6] =
        [Suite::Simulate, Suite::Mm1Validate, Suite::Dynkin, Suite::Girsanov, Suite::Picard, Suite::Tightness];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Simulate => "simulate",
            Suite::Dynkin => "dynkin",
            Suite::Girsanov => "girsanov",
            Suite::Picard => "picard",
            Suite::Tightness => "tightness",
            Suite::Mm1Validate => "mm1-validate",
            Suite::All => "all",
        }
    }

    pub fn parse(text: &str) -> Option<Suite> {
        Suite::ORDER.iter().chain(&[Suite::All]).copied().find(|s| s.name() == text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynkinSection {
    /// Particle count for the suite; the global count when absent.
    pub particles: Option<usize>,
    /// Largest quadrature step; the recording step when absent.
    pub max_step: Option<f64>,
}

impl Default for DynkinSection {
    fn default() -> Self {
        DynkinSection { particles: None, max_step: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GirsanovSection {
    /// Flow files; both absent means the flows are simulated.
    pub flow1: Option<PathBuf>,
    pub flow2: Option<PathBuf>,
    /// Initial count of the second simulated flow.
    pub alt_initial_k: u32,
    /// Particles used to simulate each flow; the global count when absent.
    pub flow_particles: Option<usize>,
}

impl Default for GirsanovSection {
    fn default() -> Self {
        GirsanovSection { flow1: None, flow2: None, alt_initial_k: 3, flow_particles: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSection {
    pub iterations: usize,
    /// Manual horizon; chosen from the kernel bounds when absent.
    pub horizon: Option<f64>,
    /// Recording intervals per horizon.
    pub grid_intervals: usize,
    pub windows: usize,
    pub window_iterations: usize,
    pub floor_pairs: usize,
}

impl Default for PicardSection {
    fn default() -> Self {
        PicardSection { iterations: 6, horizon: None, grid_intervals: 20, windows: 3, window_iterations: 4, floor_pairs: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TightnessSection {
    /// Delays `h = horizon/d`.
    pub divisors: Vec<u32>,
    pub epsilon: f64,
    /// Equicontinuity windows; multiples of the recording step when empty.
    pub windows: Vec<f64>,
}

impl Default for TightnessSection {
    fn default() -> Self {
        TightnessSection { divisors: vec![4, 8, 16, 32], epsilon: 0.5, windows: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub particles: usize,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default)]
    pub initial_k: u32,
    #[serde(default = "default_suites")]
    pub suites: Vec<Suite>,
    pub kernel: Vec<KernelTerm>,
    #[serde(default)]
    pub dynkin: DynkinSection,
    #[serde(default)]
    pub girsanov: GirsanovSection,
    #[serde(default)]
    pub picard: PicardSection,
    #[serde(default)]
    pub tightness: TightnessSection,
    #[serde(default)]
    pub cells: CellScheme,
}

fn default_mode() -> String {
    "self".into()
}

fn default_suites() -> Vec<Suite> {
    vec![Suite::All]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            out: PathBuf::from("mfq-out"),
            threads: None,
            particles: 1000,
            horizon: 10.0,
            grid_step: None,
            mode: default_mode(),
            initial_k: 0,
            suites: default_suites(),
            kernel: vec![KernelTerm { id: "const".into(), params: BTreeMap::from([("a".into(), 1.0), ("b".into(), 2.0)]) }],
            dynkin: DynkinSection::default(),
            girsanov: GirsanovSection::default(),
            picard: PicardSection::default(),
            tightness: TightnessSection::default(),
            cells: CellScheme::default(),
        }
    }
}

/// Parsed `mode` field.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeSpec {
    SelfConsistent,
    Frozen(f64),
    Flow(PathBuf),
}

impl ModeSpec {
    pub fn parse(text: &str) -> Result<ModeSpec, String> {
        match text.split_once(':') {
            None if text == "self" => Ok(ModeSpec::SelfConsistent),
            Some(("frozen", h)) => {
                h.parse::<f64>().map(ModeSpec::Frozen).map_err(|_| format!("cannot parse delay {h:?}"))
            }
            Some(("flow", file)) if !file.is_empty() => Ok(ModeSpec::Flow(PathBuf::from(file))),
            _ => Err(format!("{text:?} is not one of self, frozen:<h>, flow:<file>")),
        }
    }
}

/// A violated constraint on one configuration field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub constraint: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.constraint)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step.unwrap_or(0.01 * self.horizon)
    }

    pub fn mode_spec(&self) -> Result<ModeSpec, CliError> {
        ModeSpec::parse(&self.mode).map_err(|e| CliError::Usage(format!("mode: {e}")))
    }

    /// The suites to run, in a fixed order.
    pub fn selected_suites(&self) -> Vec<Suite> {
        if self.suites.contains(&Suite::All) {
            return Suite::ORDER.to_vec();
        }
        Suite::ORDER.iter().copied().filter(|s| self.suites.contains(s)).collect()
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, CliError> {
        let terms = self
            .kernel
            .iter()
            .map(|t| KernelSpec::from_params(&t.id, &t.params))
            .collect::<mfqueue::Result<Vec<_>>>()?;
        match terms.len() {
            0 => Err(CliError::Usage("kernel: at least one term is required".into())),
            1 => Ok(terms.into_iter().next().expect("one term")),
            _ => Ok(KernelSpec::sum(terms)),
        }
    }

    pub fn build_kernel(&self) -> Result<IntensityKernel, CliError> {
        Ok(IntensityKernel::new(self.kernel_spec()?)?)
    }

    /// SHA-256 of the TOML form without the output directory and thread
    /// count, which do not affect results.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        canonical.threads = None;
        format!("{:x}", Sha256::digest(canonical.to_toml().as_bytes()))
    }
}

/// Every violated constraint; empty iff the configuration is runnable.
pub fn validate_config(config: &ExperimentConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |field: &str, constraint: String| out.push(Violation { field: field.into(), constraint });
    if config.particles == 0 {
        bad("particles", "must be >= 1".into());
    }
    let t = config.horizon;
    if !(t.is_finite() && t > 0.0) {
        bad("horizon", format!("{t} must be finite and > 0"));
    }
    let step = config.grid_step();
    if !(step.is_finite() && step > 0.0) {
        bad("grid_step", format!("{step} must be finite and > 0"));
    } else if t.is_finite() && t > 0.0 && step > t {
        bad("grid_step", format!("{step} must not exceed the horizon {t}"));
    }
    if config.threads == Some(0) {
        bad("threads", "must be >= 1".into());
    }
    if config.suites.is_empty() {
        bad("suites", "at least one suite is required".into());
    }
    if config.kernel.is_empty() {
        bad("kernel", "at least one term is required".into());
    } else if let Err(e) = config.kernel_spec() {
        bad("kernel", e.to_string());
    }
    match ModeSpec::parse(&config.mode) {
        Err(e) => bad("mode", e),
        Ok(ModeSpec::Frozen(h)) => {
            if !(h.is_finite() && h > 0.0) {
                bad("mode", format!("delay h = {h} must be finite and > 0"));
            } else if step > h {
                bad("grid_step", format!("{step} must not exceed the delay h = {h}"));
            }
        }
        Ok(ModeSpec::Flow(path)) => {
            if !path.is_file() {
                bad("mode", format!("flow file {} does not exist", path.display()));
            }
        }
        Ok(ModeSpec::SelfConsistent) => {}
    }
    if let Some(n) = config.dynkin.particles {
        if n == 0 {
            bad("dynkin.particles", "must be >= 1".into());
        }
    }
    if let Some(s) = config.dynkin.max_step {
        if !(s.is_finite() && s > 0.0 && s <= step) {
            bad("dynkin.max_step", format!("{s} must lie in (0, grid_step]"));
        }
    }
    let g = &config.girsanov;
    if g.flow1.is_some() != g.flow2.is_some() {
        bad("girsanov.flow1", "flow1 and flow2 must be given together".into());
    }
    for (field, path) in [("girsanov.flow1", &g.flow1), ("girsanov.flow2", &g.flow2)] {
        if let Some(p) = path {
            if !p.is_file() {
                bad(field, format!("flow file {} does not exist", p.display()));
            }
        }
    }
    if g.flow_particles == Some(0) {
        bad("girsanov.flow_particles", "must be >= 1".into());
    }
    let p = &config.picard;
    if p.iterations < 2 {
        bad("picard.iterations", "must be >= 2".into());
    }
    if let Some(h) = p.horizon {
        if !(h.is_finite() && h > 0.0) {
            bad("picard.horizon", format!("{h} must be finite and > 0"));
        }
    }
    if p.grid_intervals == 0 {
        bad("picard.grid_intervals", "must be >= 1".into());
    }
    if p.windows == 0 {
        bad("picard.windows", "must be >= 1".into());
    }
    if p.window_iterations == 0 {
        bad("picard.window_iterations", "must be >= 1".into());
    }
    if p.floor_pairs < 2 {
        bad("picard.floor_pairs", "must be >= 2".into());
    }
    let tt = &config.tightness;
    if tt.divisors.is_empty() || tt.divisors.contains(&0) {
        bad("tightness.divisors", "must be a non-empty list of positive integers".into());
    }
    if !(tt.epsilon.is_finite() && tt.epsilon > 0.0) {
        bad("tightness.epsilon", format!("{} must be finite and > 0", tt.epsilon));
    }
    if tt.windows.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        bad("tightness.windows", "must be finite and > 0".into());
    }
    let c = &config.cells;
    if !(c.width.is_finite() && c.width > 0.0) {
        bad("cells.width", format!("{} must be finite and > 0", c.width));
    }
    out
}

/// Parses `--kernel id1+id2 --params "a=1,b=2;a=0.5,b0=1,b1=1"`: one
/// `;`-separated parameter group per `+`-separated id.
pub fn parse_kernel_terms(ids: &str, params: Option<&str>) -> Result<Vec<KernelTerm>, CliError> {
    let ids: Vec<&str> = ids.split('+').map(str::trim).collect();
    let groups: Vec<&str> = match params {
        Some(p) => p.split(';').collect(),
        None => vec![""; ids.len()],
    };
    if groups.len() != ids.len() {
        return Err(CliError::Usage(format!("--params has {} groups for {} kernel ids", groups.len(), ids.len())));
    }
    ids.iter()
        .zip(groups)
        .map(|(id, group)| {
            let mut params = BTreeMap::new();
            for pair in group.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (key, value) = pair
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("--params: expected key=value, got {pair:?}")))?;
                let value: f64 =
                    value.trim().parse().map_err(|_| CliError::Usage(format!("--params: bad number in {pair:?}")))?;
                params.insert(key.trim().to_string(), value);
            }
            Ok(KernelTerm { id: id.to_string(), params })
        })
        .collect()
}
