//! Self-contained SVG line charts with a log-scale y axis.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlotError {
    #[error("plot needs at least one series")]
    NoSeries,
    #[error("series {0:?} needs at least two points with finite positive y")]
    TooFewPoints(String),
    #[error("degenerate x axis: all x values equal {0}")]
    DegenerateAxis(f64),
    #[error("non-finite x value in series {0:?}")]
    NonFiniteX(String),
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 64.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_label(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e9 {
        format!("{}", x as i64)
    } else {
        format!("{x:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders the series as polylines; points with `y <= 0` are dropped before
/// the log transform.
pub fn emit_plot(spec: &PlotSpec) -> Result<String, PlotError> {
    if spec.series.is_empty() {
        return Err(PlotError::NoSeries);
    }
    let mut cleaned = Vec::with_capacity(spec.series.len());
    for s in &spec.series {
        if s.points.iter().any(|p| !p.0.is_finite()) {
            return Err(PlotError::NonFiniteX(s.name.clone()));
        }
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.1.is_finite() && p.1 > 0.0).collect();
        if pts.len() < 2 {
            return Err(PlotError::TooFewPoints(s.name.clone()));
        }
        cleaned.push(pts);
    }
    let xs = cleaned.iter().flatten().map(|p| p.0);
    let x_min = xs.clone().fold(f64::INFINITY, f64::min);
    let x_max = xs.fold(f64::NEG_INFINITY, f64::max);
    if x_max == x_min {
        return Err(PlotError::DegenerateAxis(x_min));
    }
    let ly = cleaned.iter().flatten().map(|p| p.1.log10());
    let mut y_lo = ly.clone().fold(f64::INFINITY, f64::min).floor();
    let mut y_hi = ly.fold(f64::NEG_INFINITY, f64::max).ceil();
    if y_hi <= y_lo {
        y_lo -= 1.0;
        y_hi += 1.0;
    }

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| TOP + (y_hi - y.log10()) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&spec.title)
    );

    // y decades
    let mut k = y_lo as i64;
    while k as f64 <= y_hi {
        let y = TOP + (y_hi - k as f64) / (y_hi - y_lo) * plot_h;
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{k}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
        k += 1;
    }

    let mut ticks: Vec<f64> = cleaned.iter().flatten().map(|p| p.0).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    if ticks.len() > 10 {
        let step = (ticks.len() - 1) as f64 / 9.0;
        ticks = (0..10).map(|i| ticks[(i as f64 * step).round() as usize]).collect();
    }
    let base = TOP + plot_h;
    for &t in &ticks {
        let x = px(t);
        let _ = writeln!(svg, r##"<line x1="{x:.2}" y1="{base:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##, base + 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            base + 18.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        svg,
        r##"<line x1="{LEFT}" y1="{base:.2}" x2="{:.2}" y2="{base:.2}" stroke="#333"/>"##,
        LEFT + plot_w
    );
    let _ = writeln!(svg, r##"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base:.2}" stroke="#333"/>"##);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 18.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">bound value</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, (s, pts)) in spec.series.iter().zip(&cleaned).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.2}" y="{:.2}" width="18" height="4" fill="{color}"/>"#,
            ly - 2.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
