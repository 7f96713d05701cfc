//! Static SVG line plots of experiment results.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::error::{CliError, Result};
use crate::experiment::{summarize, ResultRow, SummaryRow};

const SIZE: (u32, u32) = (800, 560);

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

fn log_bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite() && *v > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return None;
    }
    let (lo, hi) = if hi / lo < 1.5 { (lo / 1.5, hi * 1.5) } else { (lo / 1.2, hi * 1.2) };
    Some((lo, hi))
}

/// `{1, 2, 5} x 10^k` inside `[lo, hi]`, or every mantissa `1..9` when that
/// gives fewer than four ticks.
fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let pick = |mantissas: &[f64]| {
        let mut ticks = Vec::new();
        let mut decade = 10f64.powf(lo.log10().floor());
        while decade <= hi {
            ticks.extend(mantissas.iter().map(|m| m * decade).filter(|t| *t >= lo && *t <= hi));
            decade *= 10.0;
        }
        ticks
    };
    let coarse = pick(&[1.0, 2.0, 5.0]);
    if coarse.len() >= 4 {
        coarse
    } else {
        pick(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0])
    }
}

/// Line plot with a logarithmic y axis (and optionally x axis).
fn line_plot(path: &Path, title: &str, x_label: &str, y_label: &str, log_x: bool, series: &[Series]) -> Result<()> {
    let series: Vec<&Series> = series.iter().filter(|s| !s.points.is_empty()).collect();
    let Some((y_lo, y_hi)) = log_bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))) else {
        return Ok(());
    };
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x_lo, x_hi) = if log_x {
        match log_bounds(xs) {
            Some(b) => b,
            None => return Ok(()),
        }
    } else {
        let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) }
    };
    // Whole-number ticks for short integer axes such as n.
    let x_ticks = if !log_x && x_hi - x_lo <= 20.0 { (x_hi - x_lo) as usize + 1 } else { 10 };
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.caption(title, ("sans-serif", 20)).margin(12).x_label_area_size(40).y_label_area_size(70);

    macro_rules! draw {
        ($chart:expr) => {{
            let mut chart = $chart;
            chart
                .configure_mesh()
                .light_line_style(TRANSPARENT)
                .x_labels(x_ticks)
                .x_desc(x_label)
                .y_desc(y_label)
                .x_label_formatter(&|v| if log_x { format!("{:.0e}", v) } else { format!("{:.0}", v) })
                .y_label_formatter(&|v| format!("{:.1e}", v))
                .draw()
                .map_err(plot_err)?;
            for (i, s) in series.iter().enumerate() {
                let color = Palette99::pick(i).to_rgba();
                chart
                    .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
                    .map_err(plot_err)?
                    .label(s.label.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
                if s.points.len() <= 50 {
                    chart
                        .draw_series(s.points.iter().map(|&p| Circle::new(p, 3, color.filled())))
                        .map_err(plot_err)?;
                }
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .label_font(("sans-serif", 11))
                .position(SeriesLabelPosition::UpperRight)
                .draw()
                .map_err(plot_err)?;
        }};
    }

    if log_x {
        draw!(builder.build_cartesian_2d((x_lo..x_hi).log_scale(), (y_lo..y_hi).log_scale().with_key_points(log_ticks(y_lo, y_hi))).map_err(plot_err)?);
    } else {
        draw!(builder.build_cartesian_2d(x_lo..x_hi, (y_lo..y_hi).log_scale().with_key_points(log_ticks(y_lo, y_hi))).map_err(plot_err)?);
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn group_by<K: Ord>(
    summary: &[SummaryRow],
    key: impl Fn(&SummaryRow) -> K,
    label: impl Fn(&SummaryRow) -> String,
    x: impl Fn(&SummaryRow) -> f64,
) -> Vec<Series> {
    let mut groups: BTreeMap<K, Series> = BTreeMap::new();
    for s in summary {
        groups
            .entry(key(s))
            .or_insert_with(|| Series { label: label(s), points: Vec::new() })
            .points
            .push((x(s), s.median_final_error));
    }
    groups
        .into_values()
        .map(|mut s| {
            s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            s
        })
        .collect()
}

/// `iter,error` pairs from a trace CSV (provenance lines skipped).
fn read_trace(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut points = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let iter: f64 = rec.get(0).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
        let err: f64 = rec.get(2).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN);
        points.push((iter, err));
    }
    Ok(points)
}

/// `plots/error_vs_n.svg`, `plots/error_vs_m.svg` (when the axis has more than
/// one value) and `plots/convergence.svg` (seed-0 traces).
pub fn render_all(out: &Path, rows: &[ResultRow], traces: Option<&Path>) -> Result<()> {
    let dir = out.join("plots");
    crate::io::ensure_dir(&dir)?;
    let summary = summarize(rows);
    let distinct = |f: &dyn Fn(&SummaryRow) -> u64| {
        let mut v: Vec<u64> = summary.iter().map(f).collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    if distinct(&|s| s.n as u64) > 1 {
        let series = group_by(
            &summary,
            |s| (s.m, s.rbar, s.init.clone(), s.algorithm.clone()),
            |s| format!("M={} r={} {} {}", s.m, s.rbar, s.init, s.algorithm),
            |s| s.n as f64,
        );
        line_plot(&dir.join("error_vs_n.svg"), "median recovery error vs n", "n", "error", false, &series)?;
    }
    if distinct(&|s| s.m) > 1 {
        let series = group_by(
            &summary,
            |s| (s.n, s.rbar, s.init.clone(), s.algorithm.clone()),
            |s| format!("n={} r={} {} {}", s.n, s.rbar, s.init, s.algorithm),
            |s| s.m as f64,
        );
        line_plot(&dir.join("error_vs_m.svg"), "median recovery error vs M", "M", "error", true, &series)?;
    }
    if let Some(tdir) = traces {
        let mut series = Vec::new();
        for r in rows.iter().filter(|r| r.seed == 0) {
            let p = tdir.join(format!("{}.csv", r.key));
            if p.exists() {
                series.push(Series { label: r.key.clone(), points: read_trace(&p)? });
            }
        }
        line_plot(&dir.join("convergence.svg"), "recovery error per iteration (seed 0)", "iteration", "error", false, &series)?;
    }
    Ok(())
}
