//! F1 against training-data fraction, one series per label.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use okie::harness::AggregateReport;

use crate::{CliError, CliResult};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_Y: f64 = 40.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// label -> [(fraction, f1)], sorted by fraction.
pub(crate) type Series = BTreeMap<String, Vec<(f64, f64)>>;

pub(crate) fn run(pattern: &str, out: &Path) -> CliResult {
    let paths = glob::glob(pattern)
        .map_err(CliError::input)?
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::input)?;
    if paths.is_empty() {
        return Err(CliError::input(anyhow!("no reports match {pattern}")));
    }
    let mut reports = Vec::with_capacity(paths.len());
    for path in &paths {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(CliError::input)?;
        let report: AggregateReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(CliError::input)?;
        reports.push(report);
    }
    let series = collect_series(&reports);
    let table = render_table(&series);
    let body = match out.extension().and_then(|e| e.to_str()) {
        Some("svg") => render_svg(&series),
        _ => table.clone(),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(CliError::input)?;
    }
    fs::write(out, body)
        .with_context(|| format!("writing {}", out.display()))
        .map_err(CliError::input)?;
    print!("{table}");
    Ok(())
}

/// Reports sharing a label and fraction are averaged.
pub(crate) fn collect_series(reports: &[AggregateReport]) -> Series {
    let mut grouped: BTreeMap<String, Vec<(f64, Vec<f64>)>> = BTreeMap::new();
    for r in reports {
        let points = grouped.entry(r.label.clone()).or_default();
        match points.iter_mut().find(|(f, _)| *f == r.fraction) {
            Some((_, values)) => values.push(r.f1),
            None => points.push((r.fraction, vec![r.f1])),
        }
    }
    grouped
        .into_iter()
        .map(|(label, points)| {
            let mut points: Vec<(f64, f64)> = points
                .into_iter()
                .map(|(f, v)| (f, okie::harness::mean(v)))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            (label, points)
        })
        .collect()
}

pub(crate) fn render_table(series: &Series) -> String {
    let width = series.keys().map(String::len).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:>9}  {:>6}\n", "Label", "Data (%)", "F1");
    for (label, points) in series {
        for (fraction, f1) in points {
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>6.1}",
                label,
                format_fraction(*fraction),
                100.0 * f1
            );
        }
    }
    out
}

fn format_fraction(fraction: f64) -> String {
    let pct = 100.0 * fraction;
    let s = format!("{pct:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

struct XAxis {
    log: bool,
    min: f64,
    max: f64,
}

impl XAxis {
    fn new(series: &Series) -> Self {
        let xs: Vec<f64> = series.values().flatten().map(|p| p.0).collect();
        let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log = min > 0.0 && max / min >= 10.0;
        Self { log, min, max }
    }

    fn unit(&self, x: f64) -> f64 {
        let (x, lo, hi) = if self.log {
            (x.log10(), self.min.log10(), self.max.log10())
        } else {
            (x, self.min, self.max)
        };
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.5
        }
    }
}

pub(crate) fn render_svg(series: &Series) -> String {
    let axis = XAxis::new(series);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |x: f64| MARGIN_LEFT + axis.unit(x) * plot_w;
    let py = |f1: f64| MARGIN_Y + (1.0 - f1.clamp(0.0, 1.0)) * plot_h;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let (x0, x1, y0, y1) = (
        MARGIN_LEFT,
        MARGIN_LEFT + plot_w,
        MARGIN_Y,
        MARGIN_Y + plot_h,
    );
    let _ = writeln!(
        svg,
        "<path d=\"M{x0},{y0} L{x0},{y1} L{x1},{y1}\" fill=\"none\" stroke=\"black\"/>"
    );
    for tick in 0..=5 {
        let f1 = tick as f64 / 5.0;
        let y = py(f1);
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{x0}\" y2=\"{y}\" stroke=\"black\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0,
            tick * 20
        );
    }
    let mut fractions: Vec<f64> = series.values().flatten().map(|p| p.0).collect();
    fractions.sort_by(f64::total_cmp);
    fractions.dedup();
    for f in fractions {
        let x = px(f);
        let _ = writeln!(
            svg,
            "<line x1=\"{x}\" y1=\"{y1}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\
             <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            y1 + 4.0,
            y1 + 18.0,
            format_fraction(f)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">Training data (%){}</text>",
        x0 + plot_w / 2.0,
        HEIGHT - 6.0,
        if axis.log { ", log scale" } else { "" }
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">F1 (%)</text>",
        y0 + plot_h / 2.0,
        y0 + plot_h / 2.0
    );
    for (k, (label, points)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = points
            .iter()
            .map(|&(f, f1)| format!("{:.2},{:.2}", px(f), py(f1)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            coords.join(" ")
        );
        for c in &coords {
            let (cx, cy) = c.split_once(',').unwrap_or(("0", "0"));
            let _ = writeln!(
                svg,
                "<circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"{color}\"/>"
            );
        }
        let ly = y0 + 16.0 * k as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            x1 + 12.0,
            x1 + 32.0,
            x1 + 38.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
