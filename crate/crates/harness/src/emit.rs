//! CSV and SVG emission. Output bytes are a pure function of the inputs so
//! that reruns of the same experiment produce identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use zopn_core::SolveReport;

use crate::HarnessError;

/// Gap floor used for log plots; raw CSV values are never clamped.
pub const PLOT_GAP_FLOOR: f64 = 1e-18;

/// One CSV row of a run trace, keyed by iterate.
#[derive(Debug, Clone)]
pub struct CsvRow {
    pub k: usize,
    pub nf: u64,
    pub composite: f64,
    pub gap: f64,
    pub step_norm: f64,
    pub step_size: f64,
    pub radius: f64,
    pub inner_iters: usize,
    pub unit_step: bool,
}

/// Materializes iterate-level rows from a solve report: row 0 is the initial
/// point, row k the iterate after iteration k-1, plus the terminal point when
/// the run stopped mid-iteration.
pub fn csv_rows(report: &SolveReport, f_star: f64) -> Vec<CsvRow> {
    let mut rows = Vec::with_capacity(report.trace.len() + 2);
    rows.push(CsvRow {
        k: 0,
        nf: 0,
        composite: report.f_initial,
        gap: report.f_initial - f_star,
        step_norm: 0.0,
        step_size: 0.0,
        radius: 0.0,
        inner_iters: 0,
        unit_step: false,
    });
    for rec in &report.trace {
        rows.push(CsvRow {
            k: rec.k + 1,
            nf: rec.nf_total,
            composite: rec.composite_value,
            gap: rec.composite_value - f_star,
            step_norm: rec.step_norm,
            step_size: rec.step_size,
            radius: rec.radius,
            inner_iters: rec.inner_iters,
            unit_step: rec.unit_step,
        });
    }
    if let Some(term) = &report.terminal {
        rows.push(CsvRow {
            k: term.k + 1,
            nf: term.nf_total,
            composite: report.f_final,
            gap: report.f_final - f_star,
            step_norm: term.step_norm,
            step_size: 0.0,
            radius: term.radius,
            inner_iters: term.inner_iters,
            unit_step: false,
        });
    }
    rows
}

pub fn format_run_csv(rows: &[CsvRow]) -> String {
    let mut out = String::from("k,nf,F,gap,d_norm,t,delta,inner_iters,unit_step\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e},{:e},{},{}",
            r.k,
            r.nf,
            r.composite,
            r.gap,
            r.step_norm,
            r.step_size,
            r.radius,
            r.inner_iters,
            u8::from(r.unit_step),
        );
    }
    out
}

pub fn write_run_csv(path: &Path, rows: &[CsvRow]) -> Result<(), HarnessError> {
    fs::write(path, format_run_csv(rows))?;
    Ok(())
}

pub fn write_aggregate_csv(path: &Path, grid: &[(u64, f64)]) -> Result<(), HarnessError> {
    let mut out = String::from("nf,mean_gap\n");
    for &(nf, gap) in grid {
        let _ = writeln!(out, "{},{:e}", nf, gap);
    }
    fs::write(path, out)?;
    Ok(())
}

/// One plotted line.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
];

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 540.0;
const MARGIN_L: f64 = 72.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 56.0;

fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    (0..=count)
        .map(|i| lo + (hi - lo) * i as f64 / count as f64)
        .collect()
}

/// Renders a deterministic SVG line chart. `note`, when present, is embedded
/// as a comment header (used to flag gap clamping for log plots).
pub fn render_line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    note: Option<&str>,
) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    let (x_lo, x_hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (y_lo, y_hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let (x_lo, x_hi) = if x_lo.is_finite() && x_hi > x_lo {
        (x_lo, x_hi)
    } else {
        (0.0, 1.0)
    };
    let (y_lo, y_hi) = if y_lo.is_finite() && y_hi > y_lo {
        (y_lo, y_hi)
    } else {
        (y_lo.min(0.0), y_lo.min(0.0) + 1.0)
    };

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    if let Some(note) = note {
        let _ = writeln!(svg, "<!-- {note} -->");
    }
    let _ = writeln!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        title
    );

    // Axes.
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN_L:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        HEIGHT - MARGIN_B,
        WIDTH - MARGIN_R,
        HEIGHT - MARGIN_B
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN_L:.1}\" y1=\"{MARGIN_T:.1}\" x2=\"{MARGIN_L:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        HEIGHT - MARGIN_B
    );
    for t in ticks(x_lo, x_hi, 5) {
        let x = px(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{:.1}\" x2=\"{x:.2}\" y2=\"{:.1}\" stroke=\"black\"/>",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{:.4e}</text>",
            HEIGHT - MARGIN_B + 18.0,
            t
        );
    }
    for t in ticks(y_lo, y_hi, 5) {
        let y = py(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{y:.2}\" x2=\"{MARGIN_L:.1}\" y2=\"{y:.2}\" stroke=\"black\"/>",
            MARGIN_L - 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>",
            MARGIN_L - 8.0,
            y + 4.0,
            t
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0,
        x_label
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{}</text>",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        y_label
    );

    // Lines.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for &(x, y) in &s.points {
            let _ = write!(points, "{:.2},{:.2} ", px(x), py(y));
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\" points=\"{}\"/>",
            points.trim_end()
        );
    }

    // Legend.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = MARGIN_T + 14.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN_R - 190.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            x + 22.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>",
            x + 28.0,
            y + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Gap series for plotting: `log10(max(gap, floor))` against NF.
pub fn gap_series(label: &str, trace: &[(u64, f64)]) -> Series {
    Series {
        label: label.to_string(),
        points: trace
            .iter()
            .map(|&(nf, gap)| (nf as f64, gap.max(PLOT_GAP_FLOOR).log10()))
            .collect(),
    }
}
