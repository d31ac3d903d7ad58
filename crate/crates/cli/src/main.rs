use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use koopbound::bounds::{combined_minimum, compute_variant, BoundVariant};
use koopbound::kernels::MultiTaskKernelConfig;
use koopbound::matana::WeightClassSpec;
use koopbound::network::{generate_network, ActivationSpec, GeneratorConfig, NetworkSpec, WeightRecipe};
use koopbound_cli::config::{load, read_json, ConfigError};
use koopbound_cli::experiment::{run, validate, RunOptions};
use koopbound_cli::output::write_all;
use koopbound_cli::{EXIT_CELL_FAILED, EXIT_INVALID_CONFIG, OUT_DIR_ENV};
use serde_json::json;

#[derive(Parser)]
#[command(name = "koopbound", version, about = "Koopman-based generalization bounds and Rademacher estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config for structural and semantic errors.
    Validate { config: PathBuf },
    /// Execute the sweep and write report.json, bounds.csv and plots/.
    Run {
        config: PathBuf,
        /// Worker threads over sweep cells (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: config output.dir, then $KOOPBOUND_OUT_DIR, then ./koopbound-out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute bound variants for explicit network, class and kernel files; prints JSON.
    Bound {
        network: PathBuf,
        class: PathBuf,
        kernel: PathBuf,
        #[arg(long)]
        n: usize,
        /// Comma-separated variants (default: all applicable).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        /// Comma-separated restriction factors G_l for theorem_inj.
        #[arg(long, value_delimiter = ',')]
        g: Option<Vec<f64>>,
    },
    /// Run only the Rademacher estimator over the sweep; prints JSON.
    Estimate {
        config: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic network JSON.
    GenNetwork {
        /// Comma-separated widths d_0,...,d_L (nondecreasing).
        #[arg(long, value_delimiter = ',', required = true)]
        widths: Vec<usize>,
        #[arg(long = "tasks", short = 'T', default_value_t = 1)]
        tasks: usize,
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, value_enum, default_value_t = RecipeArg::Orthogonal)]
        recipe: RecipeArg,
        /// Scale for scaled-orthogonal.
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Condition number for conditioned.
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Smoothed leaky ReLU slope.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Smoothed leaky ReLU smoothing width.
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// s_l = d_l/2 + smoothness.
        #[arg(long, default_value_t = 1.5)]
        smoothness: f64,
        #[arg(long, default_value_t = 0.0)]
        bias_scale: f64,
        #[arg(long, default_value_t = 1)]
        rate: u32,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RecipeArg {
    Orthogonal,
    ScaledOrthogonal,
    Conditioned,
}

fn invalid(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(EXIT_INVALID_CONFIG as u8)
}

fn out_dir(flag: Option<PathBuf>, config_dir: Option<&Path>) -> PathBuf {
    flag.or_else(|| config_dir.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("koopbound-out"))
}

fn cmd_validate(path: &Path) -> ExitCode {
    let loaded = match load(path) {
        Ok(l) => l,
        Err(e) => return invalid(e),
    };
    match validate(&loaded) {
        Ok(cells) => {
            println!("{}: valid ({cells} sweep cell{})", path.display(), if cells == 1 { "" } else { "s" });
            ExitCode::SUCCESS
        }
        Err(e) => invalid(e),
    }
}

fn cmd_run(path: &Path, jobs: Option<usize>, seed: Option<u64>, out: Option<PathBuf>) -> ExitCode {
    let loaded = match load(path) {
        Ok(l) => l,
        Err(e) => return invalid(e),
    };
    let report = match run(&loaded, RunOptions { jobs, seed, skip_bounds: false }) {
        Ok(r) => r,
        Err(e) => return invalid(e),
    };
    let configured = loaded.config.output.dir.as_ref().map(|d| loaded.resolve(d));
    let dir = out_dir(out, configured.as_deref());
    match write_all(&report, &dir) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CELL_FAILED as u8);
        }
    }
    for c in report.cells.iter().filter(|c| c.failed()) {
        let mut reasons: Vec<String> = c.error.iter().cloned().collect();
        reasons.extend(c.failures.iter().map(|f| format!("{}: {}", f.variant, f.reason)));
        eprintln!("cell {} failed: {}", c.index, reasons.join("; "));
    }
    if report.failed_cells > 0 {
        ExitCode::from(EXIT_CELL_FAILED as u8)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_estimate(path: &Path, jobs: Option<usize>, seed: Option<u64>) -> ExitCode {
    let mut loaded = match load(path) {
        Ok(l) => l,
        Err(e) => return invalid(e),
    };
    if loaded.config.estimator.is_none() {
        loaded.config.estimator = Some(Default::default());
    }
    let report = match run(&loaded, RunOptions { jobs, seed, skip_bounds: true }) {
        Ok(r) => r,
        Err(e) => return invalid(e),
    };
    let cells: Vec<_> = report
        .cells
        .iter()
        .map(|c| json!({"index": c.index, "axes": c.axes, "estimate": c.estimate, "error": c.error}))
        .collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({"master_seed": report.master_seed, "cells": cells})).expect("json")
    );
    if report.failed_cells > 0 {
        ExitCode::from(EXIT_CELL_FAILED as u8)
    } else {
        ExitCode::SUCCESS
    }
}

fn parse_variant(s: &str) -> Option<BoundVariant> {
    BoundVariant::ALL.into_iter().find(|v| v.as_str() == s.trim())
}

fn cmd_bound(
    network: &Path,
    class: &Path,
    kernel: &Path,
    n: usize,
    variants: Option<Vec<String>>,
    g: Option<Vec<f64>>,
) -> ExitCode {
    let loaded = (|| -> Result<_, ConfigError> {
        let (_, net) = read_json::<NetworkSpec>(network)?;
        let (_, class) = read_json::<WeightClassSpec>(class)?;
        let (_, kernel) = read_json::<MultiTaskKernelConfig>(kernel)?;
        Ok((net, class, kernel))
    })();
    let (net, class, kernel) = match loaded {
        Ok(x) => x,
        Err(e) => return invalid(e),
    };
    let explicit = variants.is_some();
    let selected: Vec<BoundVariant> = match variants {
        Some(names) => {
            let mut out = Vec::new();
            for name in names {
                match parse_variant(&name) {
                    Some(v) => out.push(v),
                    None => return invalid(format!("unknown variant {name:?}")),
                }
            }
            out
        }
        None => BoundVariant::ALL.to_vec(),
    };
    let mut reports = Vec::new();
    let mut issues = Vec::new();
    for v in selected {
        let r = compute_variant(v, &net, &class, &kernel, n, g.as_deref());
        match r {
            Ok(r) => reports.push(r),
            Err(e) => issues.push(json!({"variant": v, "reason": e.to_string()})),
        }
    }
    let combined = combined_minimum(&reports).map(|(variant, total)| json!({"variant": variant, "total": total}));
    let key = if explicit { "failures" } else { "skipped" };
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({"bounds": reports, key: issues, "combined": combined})).expect("json")
    );
    if reports.is_empty() || (explicit && !issues.is_empty()) {
        ExitCode::from(EXIT_CELL_FAILED as u8)
    } else {
        ExitCode::SUCCESS
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_network(
    widths: Vec<usize>,
    tasks: usize,
    m: usize,
    recipe: RecipeArg,
    gamma: f64,
    kappa: f64,
    seed: u64,
    alpha: f64,
    beta: f64,
    smoothness: f64,
    bias_scale: f64,
    rate: u32,
    output: &Path,
) -> ExitCode {
    let recipe = match recipe {
        RecipeArg::Orthogonal => WeightRecipe::Orthogonal,
        RecipeArg::ScaledOrthogonal => WeightRecipe::ScaledOrthogonal { gamma },
        RecipeArg::Conditioned => WeightRecipe::Conditioned { kappa },
    };
    let mut cfg = GeneratorConfig::new(widths, tasks, m, recipe, seed);
    cfg.activation = ActivationSpec::SmoothedLeakyRelu { alpha, beta };
    cfg.smoothness = smoothness;
    cfg.bias_scale = bias_scale;
    cfg.rate = rate;
    let net = match generate_network(&cfg) {
        Ok(n) => n,
        Err(e) => return invalid(e),
    };
    let text = serde_json::to_string_pretty(&net).expect("json");
    if let Err(e) = std::fs::write(output, text) {
        eprintln!("writing {}: {e}", output.display());
        return ExitCode::from(EXIT_CELL_FAILED as u8);
    }
    println!("wrote {}", output.display());
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run { config, jobs, seed, out } => cmd_run(&config, jobs, seed, out),
        Command::Bound { network, class, kernel, n, variants, g } => cmd_bound(&network, &class, &kernel, n, variants, g),
        Command::Estimate { config, jobs, seed } => cmd_estimate(&config, jobs, seed),
        Command::GenNetwork {
            widths,
            tasks,
            m,
            recipe,
            gamma,
            kappa,
            seed,
            alpha,
            beta,
            smoothness,
            bias_scale,
            rate,
            output,
        } => cmd_gen_network(
            widths, tasks, m, recipe, gamma, kappa, seed, alpha, beta, smoothness, bias_scale, rate, &output,
        ),
    }
}
