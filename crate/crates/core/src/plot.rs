//! Minimal static SVG charts: line panels and MCB interval plots.

use std::fmt::Write as _;

use crate::evalkit::McbResult;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Line<'a> {
    pub label: &'a str,
    /// Points as (x, y); non-finite y values break the line.
    pub points: Vec<(f64, f64)>,
}

pub struct Panel<'a> {
    pub title: &'a str,
    pub lines: Vec<Line<'a>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Panels stacked vertically, each with its own y range and a shared x range.
pub fn line_panels(title: &str, panels: &[Panel]) -> String {
    let width = 900.0;
    let panel_h = 150.0;
    let (left, right, top, gap) = (70.0, 20.0, 40.0, 30.0);
    let height = top + panels.len() as f64 * (panel_h + gap) + 10.0;
    let plot_w = width - left - right;
    let (x0, x1) = extent(panels.iter().flat_map(|p| p.lines.iter().flat_map(|l| l.points.iter().map(|pt| pt.0))));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));
    for (pi, panel) in panels.iter().enumerate() {
        let py = top + pi as f64 * (panel_h + gap);
        let (y0, y1) = extent(panel.lines.iter().flat_map(|l| l.points.iter().map(|pt| pt.1)));
        let sx = |x: f64| left + (x - x0) / (x1 - x0) * plot_w;
        let sy = |y: f64| py + panel_h - (y - y0) / (y1 - y0) * panel_h;
        let _ = writeln!(
            svg,
            r##"<rect x="{left}" y="{py}" width="{plot_w}" height="{panel_h}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, left + 4.0, py - 4.0, escape(panel.title));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, left - 4.0, py + 10.0, y1);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.4}</text>"#, left - 4.0, py + panel_h, y0);
        for (li, line) in panel.lines.iter().enumerate() {
            let colour = PALETTE[li % PALETTE.len()];
            let mut d = String::new();
            let mut pen_down = false;
            for &(x, y) in &line.points {
                if !y.is_finite() {
                    pen_down = false;
                    continue;
                }
                let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(x), sy(y));
                pen_down = true;
            }
            let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{colour}" stroke-width="1.2"/>"#, d.trim_end());
            if panel.lines.len() > 1 {
                let lx = left + plot_w - 140.0;
                let ly = py + 14.0 + li as f64 * 14.0;
                let _ = writeln!(svg, r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{colour}" stroke-width="2"/>"#, ly - 4.0, lx + 18.0, ly - 4.0);
                let _ = writeln!(svg, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 22.0, escape(line.label));
            }
        }
    }
    let _ = writeln!(svg, "</svg>");
    svg
}

/// Mean rank of each model with its MCB interval; the shaded band is the
/// best model's interval.
pub fn mcb_chart(title: &str, result: &McbResult) -> String {
    let row_h = 28.0;
    let (left, right, top) = (190.0, 30.0, 50.0);
    let width = 700.0;
    let height = top + result.entries.len() as f64 * row_h + 40.0;
    let plot_w = width - left - right;
    let (lo, hi) = extent(result.entries.iter().flat_map(|e| [e.lower, e.upper]));
    let sx = |x: f64| left + (x - lo) / (hi - lo) * plot_w;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));
    if let Some(best) = result.entries.first() {
        let _ = writeln!(
            svg,
            r##"<rect x="{:.2}" y="{top}" width="{:.2}" height="{}" fill="#dde8f5"/>"##,
            sx(best.lower),
            sx(best.upper) - sx(best.lower),
            result.entries.len() as f64 * row_h
        );
    }
    for (i, e) in result.entries.iter().enumerate() {
        let y = top + (i as f64 + 0.5) * row_h;
        let colour = if e.not_significantly_worse { "#1f77b4" } else { "#d62728" };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">{} - {:.2}</text>"#,
            left - 8.0,
            y + 4.0,
            escape(&e.model),
            e.mean_rank
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y}" x2="{:.2}" y2="{y}" stroke="{colour}" stroke-width="2"/>"#,
            sx(e.lower),
            sx(e.upper)
        );
        let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{y}" r="4" fill="{colour}"/>"#, sx(e.mean_rank));
    }
    let axis_y = top + result.entries.len() as f64 * row_h + 16.0;
    let _ = writeln!(svg, r#"<text x="{left}" y="{axis_y}">{lo:.2}</text>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="{axis_y}" text-anchor="end">{hi:.2}</text>"#, left + plot_w);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{axis_y}" text-anchor="middle">mean rank (alpha {}, {} cases)</text>"#,
        left + plot_w / 2.0,
        result.alpha,
        result.n_cases
    );
    let _ = writeln!(svg, "</svg>");
    svg
}
