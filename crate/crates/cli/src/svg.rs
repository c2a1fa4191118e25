//! Hand-written SVG scatter plot of selected and rejected points.

use std::fmt::Write;

use rejopt_core::score_model::{Decision, ScoreSet};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 10.0;
const RADIUS: f64 = 1.6;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Selected points are coloured by predicted class, rejected points black.
/// The caller guarantees that every example has coordinates.
pub fn scatter(set: &ScoreSet, decisions: &[Decision]) -> String {
    let points: Vec<[f64; 2]> = set.examples().iter().filter_map(|e| e.coords).collect();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for [x, y] in &points {
        xmin = xmin.min(*x);
        xmax = xmax.max(*x);
        ymin = ymin.min(*y);
        ymax = ymax.max(*y);
    }
    let span = (xmax - xmin).max(ymax - ymin).max(1e-12);
    let scale = (SIZE - 2.0 * MARGIN) / span;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    // Rejected points last so they stay visible on top.
    for rejected in [false, true] {
        for (p, d) in points.iter().zip(decisions) {
            if d.rejected != rejected {
                continue;
            }
            let cx = MARGIN + (p[0] - xmin) * scale;
            let cy = SIZE - MARGIN - (p[1] - ymin) * scale;
            let fill = if rejected {
                "#000000"
            } else {
                PALETTE[d.predicted % PALETTE.len()]
            };
            let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{RADIUS}" fill="{fill}"/>"#);
        }
    }
    out.push_str("</svg>\n");
    out
}
