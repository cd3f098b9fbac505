//! Result files: canonical JSON, flat CSV and SVG charts.

use std::fmt::Write as _;
use std::path::Path;

use super::datasets::Split;
use super::trials::TrialResult;
use crate::error::Result;
use crate::graph::DicyclicSpec;
use crate::wl::Coloring;

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<TrialResult>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// One row per reported input: name, split, label, mean, std, then one
/// column per completed trial.
pub fn write_csv(results: &[TrialResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let width = results.iter().flat_map(|r| r.inputs.iter().map(|i| i.ratings.len())).max().unwrap_or(0);
    let mut header: Vec<String> = ["experiment", "input", "split", "label", "mean", "std"].map(String::from).to_vec();
    header.extend((0..width).map(|t| format!("trial_{t}")));
    w.write_record(&header)?;
    for r in results {
        let tag = r.config.tag();
        for i in &r.inputs {
            let split = match i.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let mut row = vec![tag.clone(), i.name.clone(), split.into(), i.label.to_string(), i.mean.to_string(), i.std.to_string()];
            row.extend(i.ratings.iter().map(|x| x.to_string()));
            row.resize(header.len(), String::new());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

const PALETTE: [&str; 8] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars: one group per input of the first result, one bar per result
/// (e.g. per encoding), whiskers at one standard deviation.
pub fn svg_bars(results: &[TrialResult], title: &str) -> String {
    let names: Vec<&str> = results.first().map(|r| r.inputs.iter().map(|i| i.name.as_str()).collect()).unwrap_or_default();
    let (left, top, plot_h, group_w) = (50.0, 40.0, 220.0, 24.0 * results.len().max(1) as f64 + 20.0);
    let width = left + group_w * names.len() as f64 + 20.0;
    let height = top + plot_h + 90.0;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="13">{}</text>"#, escape(title));
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = top + plot_h * (1.0 - v);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##, width - 20.0, left - 4.0, y + 4.0);
    }
    let bar_w = 20.0;
    for (g, name) in names.iter().enumerate() {
        let gx = left + group_w * g as f64 + 10.0;
        for (b, r) in results.iter().enumerate() {
            let Some(i) = r.input(name) else { continue };
            let x = gx + b as f64 * (bar_w + 4.0);
            let mean = if i.mean.is_finite() { i.mean.clamp(0.0, 1.0) } else { 0.0 };
            let h = plot_h * mean;
            let _ = writeln!(s, r#"<rect x="{x:.1}" y="{:.1}" width="{bar_w}" height="{h:.1}" fill="{}"/>"#, top + plot_h - h, PALETTE[b % PALETTE.len()]);
            let cx = x + bar_w / 2.0;
            let lo = top + plot_h * (1.0 - (mean - i.std).clamp(0.0, 1.0));
            let hi = top + plot_h * (1.0 - (mean + i.std).clamp(0.0, 1.0));
            let _ = writeln!(s, r#"<line x1="{cx:.1}" y1="{lo:.1}" x2="{cx:.1}" y2="{hi:.1}" stroke="black"/>"#);
        }
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, gx + (group_w - 20.0) / 2.0, top + plot_h + 16.0, escape(name));
    }
    for (b, r) in results.iter().enumerate() {
        let y = top + plot_h + 36.0 + 14.0 * b as f64;
        let label = r.config.encoding.map_or_else(|| r.config.tag(), |e| e.name());
        let _ = writeln!(s, r#"<rect x="{left}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{y:.1}">{}</text>"#, y - 9.0, PALETTE[b % PALETTE.len()], left + 14.0, escape(&label));
    }
    s.push_str("</svg>\n");
    s
}

/// `[m,n]` grid: fill encodes the mean rating (white = 0, dark = 1), the
/// circle radius the standard deviation; test cells get a red outline.
pub fn svg_heatmap(result: &TrialResult, title: &str) -> String {
    let cells: Vec<_> = result.inputs.iter().filter_map(|i| i.cell.map(|c| (c, i))).collect();
    let hi = cells.iter().map(|((m, n), _)| *m.max(n)).max().unwrap_or(3);
    let size = 28.0;
    let (left, top) = (40.0, 40.0);
    let span = (hi - 2) as f64 * size;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" font-family="sans-serif" font-size="11">"#, left + span + 20.0, top + span + 30.0);
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="13">{}</text>"#, escape(title));
    for v in 3..=hi {
        let off = (v - 3) as f64 * size + size / 2.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#, left + off, top + span + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#, left - 6.0, top + span - off + 4.0);
    }
    for ((m, n), i) in cells {
        let x = left + (m - 3) as f64 * size;
        let y = top + span - (n - 2) as f64 * size;
        let mean = if i.mean.is_finite() { i.mean.clamp(0.0, 1.0) } else { 0.0 };
        let shade = (255.0 * (1.0 - mean)).round() as u8;
        let stroke = if i.split == Split::Test { "#d62728" } else { "#999" };
        let _ = writeln!(s, r#"<rect x="{x:.1}" y="{y:.1}" width="{size}" height="{size}" fill="rgb({shade},{shade},255)" stroke="{stroke}"/>"#);
        let r = (i.std.min(0.5) * size).max(0.0);
        let _ = writeln!(s, r##"<circle cx="{:.1}" cy="{:.1}" r="{r:.2}" fill="none" stroke="#222"/>"##, x + size / 2.0, y + size / 2.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Nodes of `[m,n]` on two rings, filled by color class.
pub fn svg_dicyclic_coloring(spec: DicyclicSpec, coloring: &Coloring) -> String {
    let radius = |len: usize| 20.0 + 8.0 * len as f64;
    let (ra, rb) = (radius(spec.m), radius(spec.n));
    let (ca, cb) = ((20.0 + ra, 30.0 + rb.max(ra)), (20.0 + 2.0 * ra + 60.0 + rb, 30.0 + rb.max(ra)));
    let pos = |v: usize| -> (f64, f64) {
        // bridge endpoints face each other
        if v < spec.m {
            let a = std::f64::consts::TAU * v as f64 / spec.m as f64;
            (ca.0 + ra * a.cos(), ca.1 + ra * a.sin())
        } else {
            let a = std::f64::consts::PI + std::f64::consts::TAU * (v - spec.m) as f64 / spec.n as f64;
            (cb.0 + rb * a.cos(), cb.1 + rb * a.sin())
        }
    };
    let g = crate::graph::make_dicyclic(spec).expect("spec was validated on construction");
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" font-family="sans-serif" font-size="10">"#, cb.0 + rb + 20.0, 2.0 * rb.max(ra) + 60.0);
    for &(u, v) in g.edges() {
        let (a, b) = (pos(u), pos(v));
        let _ = writeln!(s, r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#555"/>"##, a.0, a.1, b.0, b.1);
    }
    for (v, &c) in coloring.colors().iter().enumerate().take(g.num_nodes()) {
        let (x, y) = pos(v);
        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="9" fill="{}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{c}</text>"#, PALETTE[c % PALETTE.len()], y + 3.5);
    }
    s.push_str("</svg>\n");
    s
}
