//! report.json, bounds.csv and plots/*.svg.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use koopbound::bounds::{BoundReport, LayerFactor};

use crate::experiment::{CellReport, ExperimentReport, AXIS_NAMES};
use crate::plot::{emit_plot, PlotSpec, Series};

/// Fixed CSV column set, one row per cell x variant.
///
/// `layer_*` columns hold `;`-separated per-layer values. Floats use the
/// shortest representation that parses back to the same bits.
pub const CSV_COLUMNS: [&str; 25] = [
    "cell",
    "width",
    "depth",
    "condition_number",
    "T",
    "n",
    "variant",
    "status",
    "total",
    "alternate_prefactor_total",
    "prefactor",
    "kappa",
    "u0",
    "g_norm",
    "layer_ratio_sup",
    "layer_det_factor",
    "layer_activation_norm_bound",
    "layer_restriction_factor",
    "layer_operator_norm",
    "layer_contribution",
    "combined_variant",
    "combined_total",
    "estimate_mean",
    "estimate_stderr",
    "message",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn layer_list(layers: &[LayerFactor], f: impl Fn(&LayerFactor) -> f64) -> String {
    layers.iter().map(|l| fmt_f64(f(l))).collect::<Vec<_>>().join(";")
}

fn cell_prefix(cell: &CellReport) -> Vec<String> {
    let a = &cell.axes;
    vec![
        cell.index.to_string(),
        opt(a.width),
        opt(a.depth),
        opt(a.condition_number.map(fmt_f64)),
        opt(a.tasks),
        opt(a.n),
    ]
}

fn cell_suffix(cell: &CellReport) -> Vec<String> {
    vec![
        opt(cell.combined.as_ref().map(|c| c.variant)),
        opt(cell.combined.as_ref().map(|c| fmt_f64(c.total))),
        opt(cell.estimate.as_ref().map(|e| fmt_f64(e.mean))),
        opt(cell.estimate.as_ref().map(|e| fmt_f64(e.stderr))),
    ]
}

fn bound_fields(r: &BoundReport) -> Vec<String> {
    let p = r.prefactor_parts;
    vec![
        fmt_f64(r.total),
        opt(r.alternate_prefactor_total.map(fmt_f64)),
        fmt_f64(r.prefactor),
        opt(p.map(|p| fmt_f64(p.kappa))),
        opt(p.map(|p| fmt_f64(p.u0))),
        opt(p.map(|p| fmt_f64(p.g_norm))),
        layer_list(&r.layers, |l| l.ratio_sup),
        layer_list(&r.layers, |l| l.det_factor),
        layer_list(&r.layers, |l| l.activation_norm_bound),
        layer_list(&r.layers, |l| l.restriction_factor),
        layer_list(&r.layers, |l| l.operator_norm),
        layer_list(&r.layers, |l| l.contribution),
    ]
}

fn row(prefix: &[String], variant: &str, status: &str, fields: Vec<String>, suffix: &[String], message: &str) -> Vec<String> {
    let mut out = prefix.to_vec();
    out.push(variant.to_string());
    out.push(status.to_string());
    out.extend(fields);
    out.extend_from_slice(suffix);
    out.push(message.to_string());
    out
}

pub fn csv_rows(report: &ExperimentReport) -> Vec<Vec<String>> {
    let blank = || vec![String::new(); 12];
    let mut rows = Vec::new();
    for cell in &report.cells {
        let prefix = cell_prefix(cell);
        let suffix = cell_suffix(cell);
        let mut emitted = false;
        for r in &cell.bounds {
            rows.push(row(&prefix, r.variant.as_str(), "ok", bound_fields(r), &suffix, ""));
            emitted = true;
        }
        for s in &cell.skipped {
            rows.push(row(&prefix, s.variant.as_str(), "skipped", blank(), &suffix, &s.reason));
            emitted = true;
        }
        for s in &cell.failures {
            rows.push(row(&prefix, s.variant.as_str(), "failed", blank(), &suffix, &s.reason));
            emitted = true;
        }
        if let Some(e) = &cell.error {
            rows.push(row(&prefix, "", "failed", blank(), &suffix, e));
        } else if !emitted {
            rows.push(row(&prefix, "", "ok", blank(), &suffix, ""));
        }
    }
    rows
}

pub fn csv_text(report: &ExperimentReport) -> Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for r in csv_rows(report) {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("utf-8 fields"))
}

/// One chart per swept axis with at least two values, taken along the slice
/// where every other axis sits at its first value.
pub fn plot_specs(report: &ExperimentReport) -> Vec<(String, PlotSpec)> {
    let sweep = &report.config.sweep;
    let swept: Vec<&str> = AXIS_NAMES
        .iter()
        .copied()
        .filter(|a| match *a {
            "width" => sweep.width.as_ref().is_some_and(|v| v.len() > 1),
            "depth" => sweep.depth.as_ref().is_some_and(|v| v.len() > 1),
            "condition_number" => sweep.condition_number.as_ref().is_some_and(|v| v.len() > 1),
            "T" => sweep.tasks.as_ref().is_some_and(|v| v.len() > 1),
            "n" => sweep.n.as_ref().is_some_and(|v| v.len() > 1),
            _ => false,
        })
        .collect();
    let first = |axis: &str| -> Option<f64> {
        match axis {
            "width" => sweep.width.as_ref().map(|v| v[0] as f64),
            "depth" => sweep.depth.as_ref().map(|v| v[0] as f64),
            "condition_number" => sweep.condition_number.as_ref().map(|v| v[0]),
            "T" => sweep.tasks.as_ref().map(|v| v[0] as f64),
            "n" => sweep.n.as_ref().map(|v| v[0] as f64),
            _ => None,
        }
    };
    let mut out = Vec::new();
    for &axis in &swept {
        let slice: Vec<&CellReport> = report
            .cells
            .iter()
            .filter(|c| {
                swept
                    .iter()
                    .filter(|&&o| o != axis)
                    .all(|&o| c.axes.value(o) == first(o))
            })
            .collect();
        let mut by_variant: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        let mut estimate = Vec::new();
        for c in &slice {
            let Some(x) = c.axes.value(axis) else { continue };
            for r in &c.bounds {
                by_variant.entry(r.variant.as_str().to_string()).or_default().push((x, r.total));
            }
            if let Some(e) = &c.estimate {
                estimate.push((x, e.mean));
            }
        }
        let mut series: Vec<Series> = by_variant
            .into_iter()
            .map(|(name, points)| Series { name, points })
            .collect();
        if !estimate.is_empty() {
            series.push(Series { name: "estimate".into(), points: estimate });
        }
        series.retain(|s| s.points.iter().filter(|p| p.1.is_finite() && p.1 > 0.0).count() >= 2);
        if !series.is_empty() {
            out.push((
                axis.to_string(),
                PlotSpec {
                    title: format!("bounds vs {axis}"),
                    x_label: axis.to_string(),
                    series,
                },
            ));
        }
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("plot {axis}: {source}")]
    Plot { axis: String, source: crate::plot::PlotError },
}

fn write(path: &Path, text: &str) -> Result<(), OutputError> {
    std::fs::write(path, text).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

/// Writes all artifacts under `dir` and returns the written paths.
pub fn write_all(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>, OutputError> {
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots).map_err(|source| OutputError::Io { path: plots.clone(), source })?;
    let mut written = Vec::new();
    let json = dir.join("report.json");
    write(&json, &serde_json::to_string_pretty(report)?)?;
    written.push(json);
    let csv_path = dir.join("bounds.csv");
    write(&csv_path, &csv_text(report)?)?;
    written.push(csv_path);
    for (axis, spec) in plot_specs(report) {
        let svg = emit_plot(&spec).map_err(|source| OutputError::Plot { axis: axis.clone(), source })?;
        let p = plots.join(format!("{axis}.svg"));
        write(&p, &svg)?;
        written.push(p);
    }
    Ok(written)
}
