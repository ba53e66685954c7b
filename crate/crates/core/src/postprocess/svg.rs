//! Static scatter plots.

use std::fmt::Write;

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];
const SIZE: f64 = 520.0;
const MARGIN: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub label: String,
    /// Index into the legend; selects the colour.
    pub category: usize,
    /// Drawn as a square instead of a circle.
    pub square: bool,
}

pub fn color(category: usize) -> &'static str {
    PALETTE[category % PALETTE.len()]
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter plot with equal axis scaling, point labels and a legend.
pub fn scatter(title: &str, points: &[Point], legend: &[String]) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    if points.is_empty() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
    let inner = SIZE - 2.0 * MARGIN;
    let map = |x: f64, y: f64| {
        (
            SIZE / 2.0 + (x - cx) / span * inner,
            SIZE / 2.0 - (y - cy) / span * inner,
        )
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" font-size="15" text-anchor="middle">{}</text>"#, SIZE / 2.0, esc(title));
    let (ox, oy) = map(0.0, 0.0);
    let _ = writeln!(
        s,
        r##"<g stroke="#cccccc" stroke-width="1"><line x1="{MARGIN}" y1="{oy:.2}" x2="{:.1}" y2="{oy:.2}"/><line x1="{ox:.2}" y1="{MARGIN}" x2="{ox:.2}" y2="{:.1}"/></g>"##,
        SIZE - MARGIN,
        SIZE - MARGIN
    );
    for p in points {
        let (px, py) = map(p.x, p.y);
        let c = color(p.category);
        if p.square {
            let _ = writeln!(s, r#"<rect x="{:.2}" y="{:.2}" width="9" height="9" fill="{c}"/>"#, px - 4.5, py - 4.5);
        } else {
            let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="4.5" fill="{c}"/>"#);
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="9">{}</text>"#, px + 6.0, py - 4.0, esc(&p.label));
    }
    for (k, name) in legend.iter().enumerate() {
        let y = MARGIN + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="9" height="9" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"#,
            SIZE - 120.0,
            y - 8.0,
            color(k),
            SIZE - 106.0,
            y,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
