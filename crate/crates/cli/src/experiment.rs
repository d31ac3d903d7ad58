//! Sweep expansion, per-cell execution and the experiment report.

use std::time::Instant;

use koopbound::bounds::{combined_minimum, BoundReport, BoundVariant};
use koopbound::kernels::MultiTaskKernelConfig;
use koopbound::network::{generate_network, GeneratorConfig, NetworkSpec, WeightRecipe};
use koopbound::rademacher::{estimate_sup, RademacherEstimate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{check_structure, load_kernel, load_network, ConfigError, Issues, LoadedConfig, NetworkSource};
use crate::dataset;

/// Axis values of one sweep cell; `None` means the axis is not swept.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellAxes {
    pub width: Option<usize>,
    pub depth: Option<usize>,
    pub condition_number: Option<f64>,
    #[serde(rename = "T")]
    pub tasks: Option<usize>,
    pub n: Option<usize>,
}

pub const AXIS_NAMES: [&str; 5] = ["width", "depth", "condition_number", "T", "n"];

impl CellAxes {
    pub fn value(&self, axis: &str) -> Option<f64> {
        match axis {
            "width" => self.width.map(|v| v as f64),
            "depth" => self.depth.map(|v| v as f64),
            "condition_number" => self.condition_number,
            "T" => self.tasks.map(|v| v as f64),
            "n" => self.n.map(|v| v as f64),
            _ => None,
        }
    }
}

/// Cartesian product of the sweep axes in the fixed order width, depth,
/// condition_number, T, n (last axis varies fastest).
pub fn expand_cells(loaded: &LoadedConfig) -> Vec<CellAxes> {
    let s = &loaded.config.sweep;
    let opt = |v: &Option<Vec<usize>>| -> Vec<Option<usize>> {
        v.as_ref().map_or(vec![None], |xs| xs.iter().map(|&x| Some(x)).collect())
    };
    let conds: Vec<Option<f64>> = s
        .condition_number
        .as_ref()
        .map_or(vec![None], |xs| xs.iter().map(|&x| Some(x)).collect());
    let mut out = Vec::new();
    for &width in &opt(&s.width) {
        for &depth in &opt(&s.depth) {
            for &condition_number in &conds {
                for &tasks in &opt(&s.tasks) {
                    for &n in &opt(&s.n) {
                        out.push(CellAxes { width, depth, condition_number, tasks, n });
                    }
                }
            }
        }
    }
    out
}

/// Generator config for a cell, with sweep values and the master seed applied.
pub fn cell_generator(base: &GeneratorConfig, axes: &CellAxes, master_seed: u64) -> GeneratorConfig {
    let mut g = base.clone();
    let depth = axes.depth.unwrap_or(base.widths.len().saturating_sub(1));
    if let Some(w) = axes.width {
        g.widths = vec![w; depth + 1];
    } else if axes.depth.is_some() {
        g.widths = vec![base.widths.first().copied().unwrap_or(1); depth + 1];
    }
    if let Some(kappa) = axes.condition_number {
        g.recipe = WeightRecipe::Conditioned { kappa };
    }
    if let Some(t) = axes.tasks {
        g.tasks = t;
    }
    g.seed = base.seed.wrapping_add(master_seed);
    g
}

/// Matérn kernel of order `s_0` on `ℝ^{d_0}` for every task, `M_t` taken from `g`.
pub fn derive_kernel(net: &NetworkSpec) -> koopbound::Result<MultiTaskKernelConfig> {
    net.default_kernel()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEcho {
    pub n: usize,
    pub d0: usize,
    pub distribution: dataset::Distribution,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantIssue {
    pub variant: BoundVariant,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Combined {
    pub variant: BoundVariant,
    pub total: f64,
}

/// Resolved inputs of one cell.
pub struct CellInputs {
    pub network: NetworkSpec,
    pub generator: Option<GeneratorConfig>,
    pub kernel: MultiTaskKernelConfig,
    pub data: Vec<Vec<f64>>,
    pub dataset: DatasetEcho,
    /// Axis values actually realized by the network (reported and plotted).
    pub axes: CellAxes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub index: usize,
    pub axes: CellAxes,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetEcho>,
    pub bounds: Vec<BoundReport>,
    /// Default variants that do not apply to this network.
    pub skipped: Vec<VariantIssue>,
    /// Explicitly requested variants that errored.
    pub failures: Vec<VariantIssue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined: Option<Combined>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<RademacherEstimate>,
    /// Cell-level failure (network, kernel, dataset or estimator).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub elapsed_seconds: f64,
}

impl CellReport {
    pub fn failed(&self) -> bool {
        self.error.is_some() || !self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub started_unix_seconds: f64,
    pub elapsed_seconds: f64,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool_version: String,
    pub master_seed: u64,
    pub config: crate::config::ExperimentConfig,
    pub cells: Vec<CellReport>,
    pub failed_cells: usize,
    pub wall_clock: WallClock,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    /// Skip bound computation (estimate-only runs).
    pub skip_bounds: bool,
}

pub fn resolve_cell(loaded: &LoadedConfig, axes: &CellAxes, master_seed: u64) -> Result<CellInputs, String> {
    let cfg = &loaded.config;
    let (network, generator) = match &cfg.network {
        NetworkSource::Generator(base) => {
            let g = cell_generator(base, axes, master_seed);
            let net = generate_network(&g).map_err(|e| format!("network: {e}"))?;
            (net, Some(g))
        }
        NetworkSource::File(p) => {
            let net = load_network(loaded, p)?;
            net.validate().map_err(|e| format!("network: {e}"))?;
            (net, None)
        }
    };
    let kernel = match load_kernel(loaded)? {
        Some(k) => k,
        None => derive_kernel(&network).map_err(|e| format!("kernel (derived from network): {e}"))?,
    };
    let d0 = network.input_dim();
    if let Some(d) = cfg.dataset.d0 {
        if d != d0 {
            return Err(format!("dataset: d0 = {d} but the network input dimension is {d0}"));
        }
    }
    let n = axes.n.unwrap_or(cfg.dataset.n);
    let seed = cfg.dataset.seed.wrapping_add(master_seed);
    let data = dataset::generate(n, d0, cfg.dataset.distribution, seed);

    let widths = network.widths();
    let uniform = widths.windows(2).all(|w| w[0] == w[1]);
    let realized = CellAxes {
        width: uniform.then_some(widths[0]),
        depth: Some(network.depth()),
        condition_number: match generator.as_ref().map(|g| g.recipe) {
            Some(WeightRecipe::Conditioned { kappa }) => Some(kappa),
            Some(WeightRecipe::Orthogonal) => Some(1.0),
            _ => None,
        },
        tasks: Some(network.tasks),
        n: Some(n),
    };
    Ok(CellInputs {
        network,
        generator,
        kernel,
        data,
        dataset: DatasetEcho {
            n,
            d0,
            distribution: cfg.dataset.distribution,
            seed,
        },
        axes: realized,
    })
}

fn compute_variant(
    variant: BoundVariant,
    inputs: &CellInputs,
    loaded: &LoadedConfig,
    n: usize,
) -> koopbound::Result<BoundReport> {
    let cfg = &loaded.config;
    koopbound::bounds::compute_variant(
        variant,
        &inputs.network,
        &cfg.class,
        &inputs.kernel,
        n,
        cfg.restriction_factors.as_deref(),
    )
}

pub fn requested_variants(loaded: &LoadedConfig) -> (Vec<BoundVariant>, bool) {
    match &loaded.config.variants {
        Some(v) => {
            let mut out: Vec<BoundVariant> = BoundVariant::ALL.iter().copied().filter(|x| v.contains(x)).collect();
            out.dedup();
            (out, true)
        }
        None => (BoundVariant::ALL.to_vec(), false),
    }
}

pub fn run_cell(loaded: &LoadedConfig, index: usize, axes: &CellAxes, master_seed: u64, skip_bounds: bool) -> CellReport {
    let start = Instant::now();
    let mut report = CellReport {
        index,
        axes: *axes,
        generator: None,
        dataset: None,
        bounds: Vec::new(),
        skipped: Vec::new(),
        failures: Vec::new(),
        combined: None,
        estimate: None,
        error: None,
        elapsed_seconds: 0.0,
    };
    let inputs = match resolve_cell(loaded, axes, master_seed) {
        Ok(i) => i,
        Err(e) => {
            report.error = Some(e);
            report.elapsed_seconds = start.elapsed().as_secs_f64();
            return report;
        }
    };
    report.axes = inputs.axes;
    report.generator = inputs.generator.clone();
    report.dataset = Some(inputs.dataset.clone());
    let n = inputs.dataset.n;

    if !skip_bounds {
        let (variants, explicit) = requested_variants(loaded);
        for v in variants {
            match compute_variant(v, &inputs, loaded, n) {
                Ok(r) => report.bounds.push(r),
                Err(e) => {
                    let issue = VariantIssue { variant: v, reason: e.to_string() };
                    if explicit {
                        report.failures.push(issue);
                    } else {
                        report.skipped.push(issue);
                    }
                }
            }
        }
        report.combined = combined_minimum(&report.bounds).map(|(variant, total)| Combined { variant, total });
    }

    if let Some(est) = &loaded.config.estimator {
        let mut est = est.clone();
        est.seed = est.seed.wrapping_add(master_seed);
        match estimate_sup(&inputs.network, &loaded.config.class, &inputs.data, &est) {
            Ok(e) => report.estimate = Some(e),
            Err(e) => report.error = Some(format!("estimator: {e}")),
        }
    }
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    report
}

/// Structural and per-cell semantic validation (dimension chains, `s_l > d_l/2`,
/// class feasibility, kernel consistency).
pub fn validate(loaded: &LoadedConfig) -> Result<usize, ConfigError> {
    let mut issues = Issues::new(&loaded.text);
    check_structure(loaded, &mut issues);
    let cells = expand_cells(loaded);
    if issues.list.is_empty() {
        let cfg = &loaded.config;
        for axes in &cells {
            let inputs = match resolve_cell(loaded, axes, cfg.seed) {
                Ok(i) => i,
                Err(e) => {
                    let path = if e.starts_with("kernel") {
                        "kernel"
                    } else if e.starts_with("dataset") {
                        "dataset.d0"
                    } else {
                        "network"
                    };
                    let msg = e.split_once(": ").map_or(e.as_str(), |(_, rest)| rest);
                    issues.push(path, msg);
                    continue;
                }
            };
            for layer in &inputs.network.layers {
                match cfg.class.check_orientation(&layer.weight) {
                    Ok(dim) => {
                        if let Err(e) = cfg.class.check_feasible(dim) {
                            issues.push("class", e.to_string());
                        }
                    }
                    Err(e) => issues.push("class.kind", e.to_string()),
                }
            }
            let k = &inputs.kernel;
            if let Err(e) = k.validate() {
                issues.push("kernel", e.to_string());
            } else if k.num_tasks() != inputs.network.tasks
                || k.output_dim() != inputs.network.m
                || k.input_dim() != inputs.network.input_dim()
            {
                issues.push(
                    "kernel",
                    format!(
                        "kernel (T, m, d_0) = ({}, {}, {}) does not match the network ({}, {}, {})",
                        k.num_tasks(),
                        k.output_dim(),
                        k.input_dim(),
                        inputs.network.tasks,
                        inputs.network.m,
                        inputs.network.input_dim()
                    ),
                );
            }
            if let Some(g) = &cfg.restriction_factors {
                if g.len() != inputs.network.depth() {
                    issues.push("restriction_factors", format!("need one G_l per layer ({})", inputs.network.depth()));
                }
            }
        }
    }
    if issues.list.is_empty() {
        Ok(cells.len())
    } else {
        Err(ConfigError::Invalid {
            path: loaded.path.clone(),
            issues: issues.list,
        })
    }
}

pub fn run(loaded: &LoadedConfig, opts: RunOptions) -> Result<ExperimentReport, ConfigError> {
    validate(loaded)?;
    let master_seed = opts.seed.unwrap_or(loaded.config.seed);
    let cells = expand_cells(loaded);
    let started = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let clock = Instant::now();
    let jobs = opts.jobs.unwrap_or_else(rayon::current_num_threads).max(1);
    let work = || -> Vec<CellReport> {
        cells
            .par_iter()
            .enumerate()
            .map(|(i, axes)| run_cell(loaded, i, axes, master_seed, opts.skip_bounds))
            .collect()
    };
    let reports = if jobs == 1 {
        cells
            .iter()
            .enumerate()
            .map(|(i, axes)| run_cell(loaded, i, axes, master_seed, opts.skip_bounds))
            .collect()
    } else {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(work),
            Err(_) => work(),
        }
    };
    let mut config = loaded.config.clone();
    config.seed = master_seed;
    Ok(ExperimentReport {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed,
        config,
        failed_cells: reports.iter().filter(|c| c.failed()).count(),
        cells: reports,
        wall_clock: WallClock {
            started_unix_seconds: started,
            elapsed_seconds: clock.elapsed().as_secs_f64(),
            jobs,
        },
    })
}
