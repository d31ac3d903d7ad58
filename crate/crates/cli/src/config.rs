//! Experiment configuration: JSON schema, loading and semantic validation.

use std::fmt;
use std::path::{Path, PathBuf};

use koopbound::bounds::BoundVariant;
use koopbound::kernels::MultiTaskKernelConfig;
use koopbound::matana::WeightClassSpec;
use koopbound::network::{GeneratorConfig, NetworkSpec, WeightRecipe};
use koopbound::rademacher::RademacherConfig;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSource {
    Generator(GeneratorConfig),
    /// Path to a `NetworkSpec` JSON file, relative to the config file.
    File(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_number: Option<Vec<f64>>,
    #[serde(default, rename = "T", alias = "tasks", skip_serializing_if = "Option::is_none")]
    pub tasks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkSource,
    pub class: WeightClassSpec,
    /// Inline kernel; when both this and `kernel_file` are absent the kernel is
    /// derived from the network (Matérn of order `s_0` on `ℝ^{d_0}`, `M_t` from `g`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<MultiTaskKernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_file: Option<PathBuf>,
    pub dataset: DatasetSpec,
    /// Bound variants to compute; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variants: Option<Vec<BoundVariant>>,
    /// Restriction factors `G_l` for the injective bound (default 1 per layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restriction_factors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<RademacherConfig>,
    #[serde(default)]
    pub sweep: SweepAxes,
    #[serde(default)]
    pub output: OutputSpec,
    /// Master seed, added to the generator, dataset and estimator seeds.
    #[serde(default)]
    pub seed: u64,
}

/// A parsed configuration together with its source text and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub text: String,
    pub config: ExperimentConfig,
}

impl LoadedConfig {
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or_else(|| Path::new("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }
}

/// One validation finding, anchored to a line of the config when the key can be found.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
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
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{} invalid:\n{}", .path.display(), .issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid { path: PathBuf, issues: Vec<Issue> },
}

impl ConfigError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads and parses a JSON file, reporting parse errors with line and column.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(String, T), ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::io(path, e))?;
    let value = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Ok((text, value))
}

pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let (text, config) = read_json(path)?;
    Ok(LoadedConfig {
        path: path.to_path_buf(),
        text,
        config,
    })
}

/// Line of the key at `path` (dot separated), searching nested keys in order.
pub fn locate(text: &str, path: &str) -> Option<usize> {
    let mut pos = 0;
    let mut found = None;
    for key in path.split('.').filter(|k| !k.is_empty()) {
        let key = key.split('[').next().unwrap_or(key);
        let needle = format!("\"{key}\"");
        let mut search = pos;
        let hit = loop {
            let idx = text[search..].find(&needle)? + search;
            let after = text[idx + needle.len()..].trim_start();
            if after.starts_with(':') {
                break idx;
            }
            search = idx + needle.len();
        };
        pos = hit + needle.len();
        found = Some(hit);
    }
    found.map(|idx| text[..idx].matches('\n').count() + 1)
}

pub(crate) struct Issues<'a> {
    text: &'a str,
    pub list: Vec<Issue>,
}

impl<'a> Issues<'a> {
    pub fn new(text: &'a str) -> Self {
        Self { text, list: Vec::new() }
    }

    pub fn push(&mut self, path: &str, message: impl Into<String>) {
        let issue = Issue {
            path: path.to_string(),
            line: locate(self.text, path),
            message: message.into(),
        };
        if !self.list.contains(&issue) {
            self.list.push(issue);
        }
    }
}

/// Sweep axes that only make sense for generated networks.
pub(crate) fn generator_axes(s: &SweepAxes) -> Vec<&'static str> {
    let mut out = Vec::new();
    if s.width.is_some() {
        out.push("width");
    }
    if s.depth.is_some() {
        out.push("depth");
    }
    if s.condition_number.is_some() {
        out.push("condition_number");
    }
    if s.tasks.is_some() {
        out.push("T");
    }
    out
}

/// Structural checks that do not need to build any network.
pub(crate) fn check_structure(loaded: &LoadedConfig, issues: &mut Issues) {
    let cfg = &loaded.config;
    let s = &cfg.sweep;
    let empty = |name: &str, len: Option<usize>, issues: &mut Issues| {
        if len == Some(0) {
            issues.push(&format!("sweep.{name}"), "sweep axis value list must be non-empty");
        }
    };
    empty("width", s.width.as_ref().map(Vec::len), issues);
    empty("depth", s.depth.as_ref().map(Vec::len), issues);
    empty("condition_number", s.condition_number.as_ref().map(Vec::len), issues);
    empty("T", s.tasks.as_ref().map(Vec::len), issues);
    empty("n", s.n.as_ref().map(Vec::len), issues);
    if s.width.iter().flatten().any(|&w| w == 0) {
        issues.push("sweep.width", "widths must be positive");
    }
    if s.depth.iter().flatten().any(|&d| d == 0) {
        issues.push("sweep.depth", "depth must be positive");
    }
    if s.tasks.iter().flatten().any(|&t| t == 0) {
        issues.push("sweep.T", "T must be positive");
    }
    if s.n.iter().flatten().any(|&n| n == 0) {
        issues.push("sweep.n", "n must be positive");
    }
    if s.condition_number.iter().flatten().any(|&k| !(k >= 1.0 && k.is_finite())) {
        issues.push("sweep.condition_number", "condition numbers must be finite and >= 1");
    }

    match &cfg.network {
        NetworkSource::File(p) => {
            let axes = generator_axes(s);
            if !axes.is_empty() {
                issues.push("network.file", format!("sweep axes {axes:?} need a network generator, not a file"));
            }
            let full = loaded.resolve(p);
            if !full.is_file() {
                issues.push("network.file", format!("referenced file {} does not exist", full.display()));
            }
        }
        NetworkSource::Generator(g) => {
            let uniform = g.widths.windows(2).all(|w| w[0] == w[1]);
            if s.depth.is_some() && s.width.is_none() && !uniform {
                issues.push("sweep.depth", "depth sweep needs uniform generator widths or a width axis");
            }
            if s.condition_number.is_some() && matches!(g.recipe, WeightRecipe::ScaledOrthogonal { .. }) {
                issues.push("sweep.condition_number", "condition_number sweep replaces the recipe; use conditioned or orthogonal");
            }
        }
    }
    if cfg.kernel.is_some() && cfg.kernel_file.is_some() {
        issues.push("kernel_file", "give either an inline kernel or kernel_file, not both");
    }
    if let Some(p) = &cfg.kernel_file {
        let full = loaded.resolve(p);
        if !full.is_file() {
            issues.push("kernel_file", format!("referenced file {} does not exist", full.display()));
        }
    }
    if (cfg.kernel.is_some() || cfg.kernel_file.is_some()) && s.tasks.is_some() {
        issues.push("sweep.T", "a T sweep needs the kernel derived from the network; drop kernel/kernel_file");
    }
    if let Some(v) = &cfg.variants {
        if v.is_empty() {
            issues.push("variants", "variant list must be non-empty when given");
        }
    }
    if let Err(e) = cfg.class.validate() {
        issues.push("class", e.to_string());
    }
    if let Some(est) = &cfg.estimator {
        if let Err(e) = est.validate() {
            issues.push("estimator", e.to_string());
        }
    }
    if cfg.dataset.n == 0 {
        issues.push("dataset.n", "n must be positive");
    }
}

/// Loads a network file referenced by the config.
pub(crate) fn load_network(loaded: &LoadedConfig, p: &Path) -> Result<NetworkSpec, String> {
    let full = loaded.resolve(p);
    read_json::<NetworkSpec>(&full).map(|(_, n)| n).map_err(|e| e.to_string())
}

pub(crate) fn load_kernel(loaded: &LoadedConfig) -> Result<Option<MultiTaskKernelConfig>, String> {
    if let Some(k) = &loaded.config.kernel {
        return Ok(Some(k.clone()));
    }
    match &loaded.config.kernel_file {
        Some(p) => read_json::<MultiTaskKernelConfig>(&loaded.resolve(p))
            .map(|(_, k)| Some(k))
            .map_err(|e| e.to_string()),
        None => Ok(None),
    }
}
