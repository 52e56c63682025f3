//! Hand-rolled SVG charts mirroring the experiment's figure structure:
//! per-parent-count accuracy-vs-time and log-storage-vs-time line charts
//! (one series per cluster factor) plus one accuracy-vs-storage scatter
//! whose point size encodes the parent count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{CellResult, HarnessError, SweepResult};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 168.0; // room for the legend
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 56.0;

/// Categorical palette, one entry per cluster-factor series.
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Renders every chart for the sweep into `dir` and returns the files
/// written: for each parent count an accuracy-vs-time and a storage-vs-time
/// chart, then one accuracy-vs-storage scatter across all parent counts.
/// Cells without records (failed cells) are skipped; an entirely empty
/// result is an error.
pub fn emit_plots(result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let populated: Vec<&CellResult> = result
        .cells
        .iter()
        .filter(|c| !c.records.is_empty())
        .collect();
    if populated.is_empty() {
        return Err(HarnessError::Config(
            "nothing to plot: no cell holds records".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(super::io_err(dir))?;

    let mut m_values: Vec<u32> = populated.iter().map(|c| c.m).collect();
    m_values.sort_unstable();
    m_values.dedup();

    let mut written = Vec::new();
    for &m in &m_values {
        let cells: Vec<&CellResult> = populated.iter().copied().filter(|c| c.m == m).collect();
        let path = dir.join(format!("accuracy_vs_time_m{m}.svg"));
        fs::write(&path, accuracy_vs_time_svg(&cells, m)).map_err(super::io_err(&path))?;
        written.push(path);
        let path = dir.join(format!("storage_vs_time_m{m}.svg"));
        fs::write(&path, storage_vs_time_svg(&cells, m)).map_err(super::io_err(&path))?;
        written.push(path);
    }
    let path = dir.join("accuracy_vs_storage.svg");
    fs::write(&path, accuracy_vs_storage_svg(&populated, &m_values))
        .map_err(super::io_err(&path))?;
    written.push(path);
    Ok(written)
}

/// Linear y, linear x line chart of accuracy against cumulative seconds.
fn accuracy_vs_time_svg(cells: &[&CellResult], m: u32) -> String {
    let xs: Vec<f64> = points(cells, |r| r.cumulative_train_seconds);
    let ys: Vec<f64> = points(cells, |r| r.accuracy);
    let x = LinearAxis::fit(&xs);
    let y = LinearAxis::fit(&ys);
    let mut svg = SvgChart::new(
        &format!("accuracy vs training time (m = {m})"),
        "cumulative training seconds (modeled)",
        "test accuracy",
    );
    svg.linear_x(&x);
    svg.linear_y(&y);
    for (i, cell) in cells.iter().enumerate() {
        let pts: Vec<(f64, f64)> = cell
            .records
            .iter()
            .map(|r| (x.place(r.cumulative_train_seconds), y.place(r.accuracy)))
            .collect();
        svg.polyline(&pts, PALETTE[i % PALETTE.len()]);
        svg.legend_line(
            &format!("cluster factor {:.2}", cell.cluster_factor),
            PALETTE[i % PALETTE.len()],
        );
    }
    svg.finish()
}

/// Log y, linear x line chart of storage bytes against cumulative seconds.
fn storage_vs_time_svg(cells: &[&CellResult], m: u32) -> String {
    let xs: Vec<f64> = points(cells, |r| r.cumulative_train_seconds);
    let ys: Vec<f64> = points(cells, |r| r.storage_bytes as f64);
    let x = LinearAxis::fit(&xs);
    let y = LogAxis::fit(&ys);
    let mut svg = SvgChart::new(
        &format!("storage size vs training time (m = {m})"),
        "cumulative training seconds (modeled)",
        "storage bytes",
    );
    svg.linear_x(&x);
    svg.log_y(&y);
    for (i, cell) in cells.iter().enumerate() {
        let pts: Vec<(f64, f64)> = cell
            .records
            .iter()
            .map(|r| {
                (
                    x.place(r.cumulative_train_seconds),
                    y.place(r.storage_bytes as f64),
                )
            })
            .collect();
        svg.polyline(&pts, PALETTE[i % PALETTE.len()]);
        svg.legend_line(
            &format!("cluster factor {:.2}", cell.cluster_factor),
            PALETTE[i % PALETTE.len()],
        );
    }
    svg.finish()
}

/// Scatter of accuracy against log storage across every cell; marker radius
/// grows with the parent count (smallest m = smallest points).
fn accuracy_vs_storage_svg(cells: &[&CellResult], m_values: &[u32]) -> String {
    let xs: Vec<f64> = points(cells, |r| r.storage_bytes as f64);
    let ys: Vec<f64> = points(cells, |r| r.accuracy);
    let x = LogAxis::fit(&xs);
    let y = LinearAxis::fit(&ys);
    let mut svg = SvgChart::new(
        "accuracy vs storage size",
        "storage bytes",
        "test accuracy",
    );
    svg.log_x(&x);
    svg.linear_y(&y);
    for cell in cells {
        let rank = m_values.iter().position(|&v| v == cell.m).unwrap_or(0);
        let radius = 2.0 + 1.4 * rank as f64;
        let color = PALETTE[rank % PALETTE.len()];
        for r in &cell.records {
            svg.circle(
                x.place(r.storage_bytes as f64),
                y.place(r.accuracy),
                radius,
                color,
            );
        }
    }
    for (rank, &m) in m_values.iter().enumerate() {
        svg.legend_marker(
            &format!("m = {m}"),
            PALETTE[rank % PALETTE.len()],
            2.0 + 1.4 * rank as f64,
        );
    }
    svg.finish()
}

fn points(cells: &[&CellResult], f: impl Fn(&super::GenerationRecord) -> f64) -> Vec<f64> {
    cells
        .iter()
        .flat_map(|c| c.records.iter().map(&f))
        .collect()
}

/// Linear axis over a data range, padded so single points stay visible.
struct LinearAxis {
    min: f64,
    max: f64,
}

impl LinearAxis {
    fn fit(values: &[f64]) -> LinearAxis {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            return LinearAxis { min: 0.0, max: 1.0 };
        }
        if min == max {
            let pad = if min == 0.0 { 1.0 } else { min.abs() * 0.1 };
            return LinearAxis {
                min: min - pad,
                max: max + pad,
            };
        }
        LinearAxis { min, max }
    }

    /// Position in [0, 1] along the axis.
    fn place(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    /// Five evenly spaced tick values.
    fn ticks(&self) -> Vec<f64> {
        (0..=4)
            .map(|i| self.min + (self.max - self.min) * f64::from(i) / 4.0)
            .collect()
    }
}

/// Base-10 logarithmic axis with decade-rounded bounds.
struct LogAxis {
    lo: i32,
    hi: i32,
}

impl LogAxis {
    fn fit(values: &[f64]) -> LogAxis {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in values {
            if v > 0.0 {
                min = min.min(v);
                max = max.max(v);
            }
        }
        if !min.is_finite() {
            return LogAxis { lo: 0, hi: 1 };
        }
        let lo = min.log10().floor() as i32;
        let mut hi = max.log10().ceil() as i32;
        if hi <= lo {
            hi = lo + 1;
        }
        LogAxis { lo, hi }
    }

    fn place(&self, v: f64) -> f64 {
        let span = f64::from(self.hi - self.lo);
        (v.max(f64::MIN_POSITIVE).log10() - f64::from(self.lo)) / span
    }

    fn decades(&self) -> Vec<i32> {
        (self.lo..=self.hi).collect()
    }
}

/// Shortest clean tick label: integers bare, fractions trimmed.
fn fmt_tick(v: f64) -> String {
    if v == v.round() && v.abs() < 1e7 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0');
        s.trim_end_matches('.').to_string()
    }
}

/// Incremental SVG builder for one framed chart.
struct SvgChart {
    body: String,
    legend_rows: usize,
}

impl SvgChart {
    fn new(title: &str, x_label: &str, y_label: &str) -> SvgChart {
        let mut body = String::new();
        let _ = write!(
            body,
            r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="Helvetica, Arial, sans-serif">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{tx}" y="28" font-size="16" text-anchor="middle">{title}</text>
<text x="{tx}" y="{by}" font-size="12" text-anchor="middle">{x_label}</text>
<text x="20" y="{my}" font-size="12" text-anchor="middle" transform="rotate(-90 20 {my})">{y_label}</text>
<rect x="{px}" y="{py}" width="{pw}" height="{ph}" fill="none" stroke="#333" stroke-width="1"/>
"##,
            tx = MARGIN_LEFT + plot_width() / 2.0,
            by = HEIGHT - 14.0,
            my = MARGIN_TOP + plot_height() / 2.0,
            px = MARGIN_LEFT,
            py = MARGIN_TOP,
            pw = plot_width(),
            ph = plot_height(),
            title = xml_escape(title),
            x_label = xml_escape(x_label),
            y_label = xml_escape(y_label),
        );
        SvgChart {
            body,
            legend_rows: 0,
        }
    }

    fn sx(&self, unit: f64) -> f64 {
        MARGIN_LEFT + unit.clamp(0.0, 1.0) * plot_width()
    }

    fn sy(&self, unit: f64) -> f64 {
        MARGIN_TOP + (1.0 - unit.clamp(0.0, 1.0)) * plot_height()
    }

    fn linear_x(&mut self, axis: &LinearAxis) {
        for t in axis.ticks() {
            let x = self.sx(axis.place(t));
            self.tick_x(x, &fmt_tick(t));
        }
    }

    fn linear_y(&mut self, axis: &LinearAxis) {
        for t in axis.ticks() {
            let y = self.sy(axis.place(t));
            self.tick_y(y, &fmt_tick(t));
        }
    }

    fn log_x(&mut self, axis: &LogAxis) {
        for d in axis.decades() {
            let x = self.sx(axis.place(10f64.powi(d)));
            self.tick_x(x, &format!("10^{d}"));
        }
    }

    fn log_y(&mut self, axis: &LogAxis) {
        for d in axis.decades() {
            let y = self.sy(axis.place(10f64.powi(d)));
            self.tick_y(y, &format!("10^{d}"));
        }
    }

    fn tick_x(&mut self, x: f64, label: &str) {
        let y0 = MARGIN_TOP + plot_height();
        let _ = write!(
            self.body,
            r##"<line x1="{x:.2}" y1="{MARGIN_TOP}" x2="{x:.2}" y2="{y0}" stroke="#ddd" stroke-width="0.5"/>
<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{y1}" stroke="#333" stroke-width="1"/>
<text x="{x:.2}" y="{ty}" font-size="11" text-anchor="middle">{label}</text>
"##,
            y1 = y0 + 5.0,
            ty = y0 + 18.0,
            label = xml_escape(label),
        );
    }

    fn tick_y(&mut self, y: f64, label: &str) {
        let x1 = MARGIN_LEFT + plot_width();
        let _ = write!(
            self.body,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd" stroke-width="0.5"/>
<line x1="{x0}" y1="{y:.2}" x2="{MARGIN_LEFT}" y2="{y:.2}" stroke="#333" stroke-width="1"/>
<text x="{tx}" y="{ty:.2}" font-size="11" text-anchor="end">{label}</text>
"##,
            x0 = MARGIN_LEFT - 5.0,
            tx = MARGIN_LEFT - 8.0,
            ty = y + 4.0,
            label = xml_escape(label),
        );
    }

    fn polyline(&mut self, unit_points: &[(f64, f64)], color: &str) {
        if unit_points.is_empty() {
            return;
        }
        let coords: Vec<String> = unit_points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.sx(x), self.sy(y)))
            .collect();
        let _ = write!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>
"#,
            coords.join(" "),
        );
        // Mark the vertices so single-record series remain visible.
        for &(x, y) in unit_points {
            self.circle(x, y, 2.2, color);
        }
    }

    fn circle(&mut self, unit_x: f64, unit_y: f64, radius: f64, color: &str) {
        let _ = write!(
            self.body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{radius:.1}" fill="{color}" fill-opacity="0.75"/>
"#,
            self.sx(unit_x),
            self.sy(unit_y),
        );
    }

    fn legend_line(&mut self, label: &str, color: &str) {
        let (x, y) = self.legend_slot();
        let _ = write!(
            self.body,
            r#"<line x1="{x}" y1="{y}" x2="{x2}" y2="{y}" stroke="{color}" stroke-width="2"/>
<text x="{tx}" y="{ty}" font-size="11">{label}</text>
"#,
            x2 = x + 22.0,
            tx = x + 28.0,
            ty = y + 4.0,
            label = xml_escape(label),
        );
    }

    fn legend_marker(&mut self, label: &str, color: &str, radius: f64) {
        let (x, y) = self.legend_slot();
        let _ = write!(
            self.body,
            r#"<circle cx="{cx}" cy="{y}" r="{radius:.1}" fill="{color}" fill-opacity="0.75"/>
<text x="{tx}" y="{ty}" font-size="11">{label}</text>
"#,
            cx = x + 11.0,
            tx = x + 28.0,
            ty = y + 4.0,
            label = xml_escape(label),
        );
    }

    fn legend_slot(&mut self) -> (f64, f64) {
        let x = MARGIN_LEFT + plot_width() + 14.0;
        let y = MARGIN_TOP + 10.0 + 18.0 * self.legend_rows as f64;
        self.legend_rows += 1;
        (x, y)
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn plot_width() -> f64 {
    WIDTH - MARGIN_LEFT - MARGIN_RIGHT
}

fn plot_height() -> f64 {
    HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
