use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::io::Table;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// Mean validation loss against log2 learning rate, one line per width.
    LossVsLr,
    /// RMS feature size against step, one panel per layer.
    CoordCheck,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "loss-vs-lr" | "loss" | "lr" => Ok(PlotKind::LossVsLr),
            "coord-check" | "coord" => Ok(PlotKind::CoordCheck),
            _ => Err(Error::Config(format!("unknown plot kind `{s}` (expected loss-vs-lr or coord-check)"))),
        }
    }
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 50.0;
const LEGEND_W: f64 = 110.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

struct Panel {
    title: String,
    x_label: &'static str,
    y_label: &'static str,
    series: Vec<Series>,
}

/// Renders rows as an SVG document. Output depends only on the rows.
pub fn render_svg(table: &Table, kind: PlotKind) -> Result<String> {
    let panels = match (table, kind) {
        (Table::Results(rows), PlotKind::LossVsLr) => {
            if rows.is_empty() {
                return Err(Error::Plot("no rows to plot".into()));
            }
            let mut series: Vec<Series> = Vec::new();
            for m in super::sweep::seed_means(rows) {
                if m.lr <= 0.0 || !m.val_loss.is_finite() {
                    continue;
                }
                let label = format!("width {}", m.width);
                let point = (m.lr.log2(), m.val_loss);
                match series.iter_mut().find(|s| s.label == label) {
                    Some(s) => s.points.push(point),
                    None => series.push(Series { label, points: vec![point] }),
                }
            }
            for s in &mut series {
                s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            vec![Panel {
                title: "validation loss".into(),
                x_label: "log2 lr",
                y_label: "loss",
                series,
            }]
        }
        (Table::Coord(rows), PlotKind::CoordCheck) => {
            if rows.is_empty() {
                return Err(Error::Plot("no rows to plot".into()));
            }
            let mut layers: Vec<usize> = rows.iter().map(|r| r.layer).collect();
            layers.sort_unstable();
            layers.dedup();
            layers
                .into_iter()
                .map(|layer| {
                    let mut series: Vec<Series> = Vec::new();
                    for r in rows.iter().filter(|r| r.layer == layer && r.rms_coord.is_finite()) {
                        let label = format!("width {}", r.width);
                        let point = (r.step as f64, r.rms_coord);
                        match series.iter_mut().find(|s| s.label == label) {
                            Some(s) => s.points.push(point),
                            None => series.push(Series { label, points: vec![point] }),
                        }
                    }
                    Panel {
                        title: format!("layer {layer}"),
                        x_label: "step",
                        y_label: "rms",
                        series,
                    }
                })
                .collect()
        }
        (Table::Results(_), PlotKind::CoordCheck) => {
            return Err(Error::Plot("coord-check plot needs coordinate-check rows, got sweep results".into()))
        }
        (Table::Coord(_), PlotKind::LossVsLr) => {
            return Err(Error::Plot("loss-vs-lr plot needs sweep results, got coordinate-check rows".into()))
        }
    };
    Ok(draw(&panels))
}

pub fn emit_plot(table: &Table, kind: PlotKind, out_path: impl AsRef<Path>) -> Result<()> {
    let svg = render_svg(table, kind)?;
    let path = out_path.as_ref();
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn draw(panels: &[Panel]) -> String {
    let cell_w = PANEL_W + 2.0 * MARGIN + LEGEND_W;
    let cell_h = PANEL_H + 2.0 * MARGIN;
    let total_w = cell_w * panels.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{cell_h}" viewBox="0 0 {total_w} {cell_h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        draw_panel(&mut svg, panel, i as f64 * cell_w);
    }
    svg.push_str("</svg>\n");
    svg
}

fn draw_panel(svg: &mut String, panel: &Panel, x0: f64) {
    let left = x0 + MARGIN;
    let top = MARGIN;
    let pts = panel.series.iter().flat_map(|s| s.points.iter());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    if !xmin.is_finite() {
        (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
    }
    if xmax - xmin < 1e-12 {
        xmin -= 0.5;
        xmax += 0.5;
    }
    if ymax - ymin < 1e-12 * ymax.abs().max(1.0) {
        let pad = 0.5 * ymax.abs().max(1.0);
        ymin -= pad;
        ymax += pad;
    }
    let sx = |x: f64| left + (x - xmin) / (xmax - xmin) * PANEL_W;
    let sy = |y: f64| top + PANEL_H - (y - ymin) / (ymax - ymin) * PANEL_H;

    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text>"#,
        left + PANEL_W / 2.0,
        top - 15.0,
        panel.title
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + PANEL_W / 2.0,
        top + PANEL_H + 35.0,
        panel.x_label
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        left - 38.0,
        top + PANEL_H / 2.0,
        left - 38.0,
        top + PANEL_H / 2.0,
        panel.y_label
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = xmin + f * (xmax - xmin);
        let yv = ymin + f * (ymax - ymin);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            sx(xv),
            top + PANEL_H + 15.0,
            tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 4.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    for (i, s) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = top + 10.0 + 16.0 * i as f64;
        let lx = left + PANEL_W + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 22.0, ly + 4.0, s.label);
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}
