use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Green marks label only, red prediction only, brown both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpanKind {
    Green,
    Red,
    Brown,
}

impl SpanKind {
    fn class(self) -> &'static str {
        match self {
            Self::Green => "span-green",
            Self::Red => "span-red",
            Self::Brown => "span-brown",
        }
    }

    fn fill(self) -> &'static str {
        match self {
            Self::Green => "#2ca02c",
            Self::Red => "#d62728",
            Self::Brown => "#8c564b",
        }
    }
}

/// Half-open sample range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

/// Maximal runs of equal overlap class between labels and predictions.
pub fn spans(actual: &[u8], predicted: &[u8]) -> Vec<Span> {
    let kind_at = |t: usize| match (actual[t] == 1, predicted.get(t) == Some(&1)) {
        (true, true) => Some(SpanKind::Brown),
        (true, false) => Some(SpanKind::Green),
        (false, true) => Some(SpanKind::Red),
        (false, false) => None,
    };
    let mut out: Vec<Span> = Vec::new();
    for t in 0..actual.len() {
        let Some(kind) = kind_at(t) else { continue };
        match out.last_mut() {
            Some(s) if s.kind == kind && s.end == t => s.end = t + 1,
            _ => out.push(Span { start: t, end: t + 1, kind }),
        }
    }
    out
}

/// One panel: a title and its predicted mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelPrediction {
    pub title: String,
    pub predicted: Vec<u8>,
}

const WIDTH: f64 = 1000.0;
const PANEL_H: f64 = 120.0;
const TITLE_H: f64 = 18.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained SVG: one panel per prediction, each showing the signal
/// over shaded label/prediction spans.
pub fn prediction_svg(x: &[f32], labels: &[u8], panels: &[PanelPrediction]) -> Result<String> {
    if x.len() != labels.len() || x.is_empty() {
        return Err(Error::shape("plot", format!("{} samples for {} labels", x.len(), labels.len())));
    }
    if let Some(p) = panels.iter().find(|p| p.predicted.len() != labels.len()) {
        return Err(Error::shape("plot", format!("panel {:?} has {} predictions", p.title, p.predicted.len())));
    }
    let t = x.len() as f64;
    let sx = WIDTH / t;
    let peak = x.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(f32::MIN_POSITIVE) as f64;
    let height = panels.len() as f64 * (PANEL_H + TITLE_H);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{height}" fill="white"/>"#);
    let step = (x.len() / 2000).max(1);
    for (i, p) in panels.iter().enumerate() {
        let top = i as f64 * (PANEL_H + TITLE_H);
        let _ = writeln!(out, r#"<g class="panel" transform="translate(0,{top})">"#);
        let _ = writeln!(out, r#"<text x="4" y="13">{}</text>"#, escape(&p.title));
        for s in spans(labels, &p.predicted) {
            let _ = writeln!(
                out,
                r#"<rect class="{}" x="{:.2}" y="{TITLE_H}" width="{:.2}" height="{PANEL_H}" fill="{}" fill-opacity="0.35"/>"#,
                s.kind.class(),
                s.start as f64 * sx,
                (s.end - s.start) as f64 * sx,
                s.kind.fill()
            );
        }
        let mid = TITLE_H + PANEL_H / 2.0;
        let amp = PANEL_H / 2.0 - 4.0;
        let points: Vec<String> = (0..x.len())
            .step_by(step)
            .map(|k| format!("{:.2},{:.2}", k as f64 * sx, mid - x[k] as f64 / peak * amp))
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="black" stroke-width="0.6" points="{}"/>"#, points.join(" "));
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_prediction_plot(x: &[f32], labels: &[u8], panels: &[PanelPrediction], path: &Path) -> Result<()> {
    let svg = prediction_svg(x, labels, panels)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
