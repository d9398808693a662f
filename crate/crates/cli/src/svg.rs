//! Minimal SVG rendering of planar tube cross-sections.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const PAD: f64 = 24.0;

/// Polygon `k` is drawn bold when `k` is in `emphasize`; `path` is the
/// nominal trajectory.
pub fn render(polygons: &[Vec<[f64; 2]>], path: &[[f64; 2]], emphasize: &[usize]) -> String {
    let pts = polygons.iter().flatten().chain(path.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    let span_x = (x1 - x0).max(1e-9);
    let span_y = (y1 - y0).max(1e-9);
    let scale = ((WIDTH - 2.0 * PAD) / span_x).min((HEIGHT - 2.0 * PAD) / span_y);
    let map = |p: &[f64; 2]| (PAD + (p[0] - x0) * scale, HEIGHT - PAD - (p[1] - y0) * scale);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, poly) in polygons.iter().enumerate() {
        let bold = emphasize.contains(&k);
        let (fill, stroke, width) = if bold {
            ("#d95f02", "#7f3300", 2.0)
        } else {
            ("#1b9e77", "#0b4f3b", 0.75)
        };
        let points: Vec<String> = poly
            .iter()
            .map(|p| {
                let (x, y) = map(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon data-k="{k}" points="{}" fill="{fill}" fill-opacity="{}" stroke="{stroke}" stroke-width="{width}"/>"#,
            points.join(" "),
            if bold { 0.35 } else { 0.12 }
        );
    }
    if path.len() > 1 {
        let points: Vec<String> = path
            .iter()
            .map(|p| {
                let (x, y) = map(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1" stroke-dasharray="4 3"/>"#,
            points.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}
