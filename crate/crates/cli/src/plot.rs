//! Bare-bones SVG line plots of a trace: first column on x, the named
//! columns on y.

use std::fmt::Write;

use crate::trace::TraceRecord;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if lo > hi {
        return None;
    }
    if lo == hi {
        return Some((lo - 0.5, hi + 0.5));
    }
    Some((lo, hi))
}

pub fn render_svg(trace: &TraceRecord, series: &[&str]) -> String {
    let x = trace.column(&trace.columns[0]).unwrap_or_default();
    let ys: Vec<(&str, Vec<f64>)> = series
        .iter()
        .filter_map(|&name| trace.column(name).map(|c| (name, c)))
        .collect();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (Some((x0, x1)), Some((y0, y1))) = (
        bounds(x.iter().copied()),
        bounds(ys.iter().flat_map(|(_, c)| c.iter().copied())),
    ) else {
        svg.push_str("</svg>\n");
        return svg;
    };
    let sx = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (label, px, py, anchor) in [
        (format!("{x0:.4}"), MARGIN, HEIGHT - MARGIN + 15.0, "start"),
        (
            format!("{x1:.4}"),
            WIDTH - MARGIN,
            HEIGHT - MARGIN + 15.0,
            "end",
        ),
        (format!("{y0:.4}"), MARGIN - 4.0, HEIGHT - MARGIN, "end"),
        (format!("{y1:.4}"), MARGIN - 4.0, MARGIN + 4.0, "end"),
        (
            trace.columns[0].clone(),
            WIDTH / 2.0,
            HEIGHT - 15.0,
            "middle",
        ),
        (trace.name.clone(), WIDTH / 2.0, 25.0, "middle"),
    ] {
        let _ = writeln!(
            svg,
            r#"<text x="{px}" y="{py}" text-anchor="{anchor}">{label}</text>"#
        );
    }
    for (k, (name, values)) in ys.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = x
            .iter()
            .zip(values)
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(&a, &b)| format!("{:.2},{:.2}", sx(a), sy(b)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 14.0 * (k as f64 + 1.0);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{name}</text>"#,
            WIDTH - MARGIN - 6.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
