//! Static SVG view of one series: anglez and enmo panes with shaded sleep spans.

use std::fmt::Write as _;

use crate::model::{EventClass, Series};

const WIDTH: f64 = 1200.0;
const PANE_HEIGHT: f64 = 220.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const PANE_GAP: f64 = 40.0;
/// Long series are reduced to a min/max envelope over this many columns.
const MAX_COLUMNS: usize = 1000;

/// A shaded span `[start_step, end_step)` with a fill colour.
#[derive(Debug, Clone, PartialEq)]
pub struct Span {
    pub start_step: u64,
    pub end_step: u64,
    pub fill: String,
}

/// A vertical marker at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub step: u64,
    pub class: EventClass,
}

/// Pairs each onset with the next wakeup after it, in step order.
pub fn spans_from_events(events: &[(u64, EventClass)], fill: &str) -> Vec<Span> {
    let mut sorted = events.to_vec();
    sorted.sort_by_key(|&(s, c)| (s, c == EventClass::Onset));
    let mut out = Vec::new();
    let mut open: Option<u64> = None;
    for (step, class) in sorted {
        match (class, open) {
            (EventClass::Onset, None) => open = Some(step),
            (EventClass::Wakeup, Some(start)) if step > start => {
                out.push(Span {
                    start_step: start,
                    end_step: step,
                    fill: fill.to_string(),
                });
                open = None;
            }
            _ => {}
        }
    }
    out
}

struct Pane<'a> {
    id: &'a str,
    title: &'a str,
    values: Vec<f64>,
    lo: f64,
    hi: f64,
    top: f64,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders a two-pane SVG 1.1 document.
pub fn render_svg(series: &Series, spans: &[Span], markers: &[Marker]) -> String {
    let n = series.len();
    let first = series.first_step().unwrap_or(0);
    let last = first + n.saturating_sub(1) as u64;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let x_of = |step: u64| {
        let span = (last - first).max(1) as f64;
        MARGIN_LEFT + (step.saturating_sub(first).min(last - first) as f64 / span) * plot_w
    };

    let enmo = series.enmo();
    let enmo_hi = enmo.iter().copied().fold(0.0f64, f64::max).max(1e-3);
    let panes = [
        Pane {
            id: "anglez",
            title: "anglez (deg)",
            values: series.anglez(),
            lo: -90.0,
            hi: 90.0,
            top: MARGIN_TOP,
        },
        Pane {
            id: "enmo",
            title: "enmo (g)",
            values: enmo,
            lo: 0.0,
            hi: enmo_hi,
            top: MARGIN_TOP + PANE_HEIGHT + PANE_GAP,
        },
    ];
    let height = MARGIN_TOP + 2.0 * PANE_HEIGHT + PANE_GAP + 40.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"##
    );
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}">"#
    );
    let _ = writeln!(s, r##"<title>{}</title>"##, escape(&series.series_id));
    let _ = writeln!(
        s,
        r##"<rect x="0" y="0" width="{WIDTH}" height="{height}" fill="white"/>"##
    );

    for pane in &panes {
        let y_of = |v: f64| {
            let t = ((v - pane.lo) / (pane.hi - pane.lo)).clamp(0.0, 1.0);
            pane.top + PANE_HEIGHT - t * PANE_HEIGHT
        };
        let _ = writeln!(s, r##"<g class="pane" id="{}-pane">"##, pane.id);
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_LEFT}" y="{}" width="{plot_w}" height="{PANE_HEIGHT}" fill="none" stroke="#444" stroke-width="1"/>"##,
            pane.top
        );
        for sp in spans {
            let (x0, x1) = (x_of(sp.start_step), x_of(sp.end_step));
            let _ = writeln!(
                s,
                r##"<rect class="span" x="{x0:.2}" y="{}" width="{:.2}" height="{PANE_HEIGHT}" fill="{}" fill-opacity="0.25"/>"##,
                pane.top,
                (x1 - x0).max(0.5),
                escape(&sp.fill)
            );
        }

        let cols = n.clamp(1, MAX_COLUMNS);
        let mut points = String::new();
        for c in 0..cols {
            let (a, b) = (
                c * n / cols,
                ((c + 1) * n / cols).max(c * n / cols + 1).min(n),
            );
            if a >= n {
                break;
            }
            let chunk = &pane.values[a..b];
            let lo = chunk.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = chunk.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let x = x_of(series.samples[a].step);
            let _ = write!(points, "{x:.2},{:.2} {x:.2},{:.2} ", y_of(lo), y_of(hi));
        }
        if n > 0 {
            let _ = writeln!(
                s,
                r##"<polyline fill="none" stroke="#1f4e79" stroke-width="0.8" points="{}"/>"##,
                points.trim_end()
            );
        }
        for m in markers {
            let colour = match m.class {
                EventClass::Onset => "#c0392b",
                EventClass::Wakeup => "#2471a3",
            };
            let x = x_of(m.step);
            let _ = writeln!(
                s,
                r##"<line class="{}" x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="{colour}" stroke-width="1.2"/>"##,
                m.class.as_str(),
                pane.top,
                pane.top + PANE_HEIGHT
            );
        }
        let _ = writeln!(
            s,
            r##"<text x="{MARGIN_LEFT}" y="{}" font-family="sans-serif" font-size="13">{}</text>"##,
            pane.top - 8.0,
            escape(pane.title)
        );
        for v in [pane.lo, pane.hi] {
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"##,
                MARGIN_LEFT - 6.0,
                y_of(v) + 4.0,
                format_tick(v)
            );
        }
        let _ = writeln!(s, "</g>");
    }
    let axis_y = height - 14.0;
    for (step, anchor) in [(first, "start"), (last, "end")] {
        let _ = writeln!(
            s,
            r##"<text x="{:.2}" y="{axis_y}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">step {step}</text>"##,
            x_of(step)
        );
    }
    let _ = writeln!(s, "</svg>");
    s
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1.0 || v == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}
