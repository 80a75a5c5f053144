//! Minimal polyline charts written as SVG text.

use std::fmt::Write;

/// A line with an optional shaded band `(x, mean, low, high)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub series: Vec<Series>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
const W: f64 = 360.0;
const H: f64 = 260.0;
const PAD: f64 = 45.0;

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn panel_svg(out: &mut String, panel: &Panel, x0: f64) {
    let pts = || panel.series.iter().flat_map(|s| s.points.iter());
    let (xl, xh) = bounds(pts().map(|p| p.0));
    let (yl, yh) = bounds(pts().flat_map(|p| [p.1, p.2, p.3]));
    let sx = |x: f64| x0 + PAD + (x - xl) / (xh - xl) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - yl) / (yh - yl) * (H - 2.0 * PAD);
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{PAD:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
        x0 + PAD,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(out, r#"<text x="{:.1}" y="25" font-size="13" text-anchor="middle">{}</text>"#, x0 + W / 2.0, panel.title);
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#, x0 + W / 2.0, H - 8.0, panel.x_label);
    for (v, y) in [(yl, sy(yl)), (yh, sy(yh))] {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.3}</text>"#, x0 + PAD - 4.0, y + 4.0);
    }
    for (v, x) in [(xl, sx(xl)), (xh, sx(xh))] {
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{v}</text>"#, H - PAD + 14.0);
    }
    for (i, s) in panel.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if s.points.iter().any(|p| p.2 != p.3) {
            let upper = s.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.3)));
            let lower = s.points.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.2)));
            let poly: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(out, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, poly.join(" "));
        }
        let line: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{color}">{}</text>"#,
            x0 + PAD + 6.0,
            PAD + 14.0 + 12.0 * i as f64,
            s.name
        );
    }
}

/// Panels side by side in one document.
pub fn chart(panels: &[Panel]) -> String {
    let width = W * panels.len().max(1) as f64;
    let mut out = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" viewBox="0 0 {width} {H}">"#);
    out.push('\n');
    for (i, p) in panels.iter().enumerate() {
        panel_svg(&mut out, p, W * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_well_formed() {
        let s = Series { name: "a".into(), points: vec![(0.0, 1.0, 0.5, 1.5), (1.0, 2.0, 2.0, 2.0)] };
        let flat = Series { name: "b".into(), points: vec![(0.0, 3.0, 3.0, 3.0)] };
        let svg = chart(&[Panel { title: "t".into(), x_label: "x".into(), series: vec![s, flat] }]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert!(!svg.contains("NaN"));
    }
}
