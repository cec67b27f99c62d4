//! Browser bindings: rule tables, coordinate-check plots and spectral probes
//! on a small teacher-student task.

use mup_core::harness::{
    render_svg, run_coord_check, run_spectral_probe, write_probes, ExperimentConfig, PlotKind, Table,
};
use mup_core::model::mlp_specs;
use mup_core::scaling::rule_table;
use wasm_bindgen::prelude::*;

/// Small enough to run in a page without blocking for long.
fn demo_config(optimizer: &str, scheme: &str, widths: &str) -> mup_core::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::parse(
        "input_dim = 8\noutput_dim = 2\nn_train = 128\nn_val = 64\nteacher_width = 32\ndepth = 3\nbatch_size = 16\nprobe_size = 32\nseeds = 0\n",
    )?;
    cfg.set("optimizer", optimizer)?;
    cfg.set("scheme", scheme)?;
    cfg.set("widths", widths)?;
    if cfg.widths.iter().any(|&w| w > 1024) {
        return Err(mup_core::Error::Config("the demo caps widths at 1024".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn rules_text(optimizer: &str, scheme: &str, widths: &str, depth: &str) -> mup_core::Result<String> {
    let mut cfg = demo_config(optimizer, scheme, widths)?;
    cfg.set("depth", depth)?;
    cfg.validate()?;
    mlp_specs(8, cfg.widths[0], cfg.depth, 2)?;
    rule_table(cfg.optimizer, cfg.scheme, &cfg.widths, cfg.depth, 8, 2)
}

pub fn coord_check_svg_text(
    optimizer: &str,
    scheme: &str,
    widths: &str,
    steps: usize,
    eta: f64,
) -> mup_core::Result<String> {
    let mut cfg = demo_config(optimizer, scheme, widths)?;
    cfg.steps = steps.clamp(2, 20);
    cfg.hp.eta = eta;
    cfg.validate()?;
    let records = run_coord_check(&cfg, 0)?;
    render_svg(&Table::Coord(records), PlotKind::CoordCheck)
}

pub fn spectral_probe_text(optimizer: &str, scheme: &str, widths: &str, eta: f64) -> mup_core::Result<String> {
    let mut cfg = demo_config(optimizer, scheme, widths)?;
    cfg.hp.eta = eta;
    cfg.validate()?;
    let probes = run_spectral_probe(&cfg, 0)?;
    let mut buf = Vec::new();
    write_probes(&probes, &mut buf)?;
    String::from_utf8(buf).map_err(|e| mup_core::Error::Plot(e.to_string()))
}

fn js(r: mup_core::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Tab-separated per-layer multipliers at each width.
#[wasm_bindgen]
pub fn rules(optimizer: &str, scheme: &str, widths: &str, depth: &str) -> Result<String, JsError> {
    js(rules_text(optimizer, scheme, widths, depth))
}

/// SVG with one panel per layer and one line per width.
#[wasm_bindgen]
pub fn coord_check_svg(optimizer: &str, scheme: &str, widths: &str, steps: usize, eta: f64) -> Result<String, JsError> {
    js(coord_check_svg_text(optimizer, scheme, widths, steps, eta))
}

/// CSV of weight and update spectral norms after one step.
#[wasm_bindgen]
pub fn spectral_probe(optimizer: &str, scheme: &str, widths: &str, eta: f64) -> Result<String, JsError> {
    js(spectral_probe_text(optimizer, scheme, widths, eta))
}
