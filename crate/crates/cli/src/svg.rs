//! Scatter plots: target shots in red, generated samples in blue, on a fixed viewport
//! around the unit circle.

use std::fmt::Write;

use fpfm_core::tensor::DenseMatrix;

const HALF_EXTENT: f64 = 1.3;
const SIZE: f64 = 480.0;

fn to_px(v: f64) -> f64 {
    (v + HALF_EXTENT) / (2.0 * HALF_EXTENT) * SIZE
}

fn points(out: &mut String, pts: &DenseMatrix, color: &str) {
    for p in pts.row_iter() {
        let (x, y) = (p[0], p.get(1).copied().unwrap_or(0.0));
        if !(x.is_finite() && y.is_finite()) {
            continue;
        }
        // SVG's y axis points down.
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{color}" fill-opacity="0.6"/>"#,
            to_px(x),
            SIZE - to_px(y)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn scatter(targets: &DenseMatrix, generated: &DenseMatrix, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let r = SIZE / (2.0 * HALF_EXTENT);
    let c = SIZE / 2.0;
    let _ = writeln!(
        s,
        r##"<circle cx="{c}" cy="{c}" r="{r:.2}" fill="none" stroke="#cccccc" stroke-width="1"/>"##
    );
    points(&mut s, targets, "red");
    points(&mut s, generated, "blue");
    let _ = writeln!(s, r#"<text x="8" y="18" font-family="sans-serif" font-size="13">{}</text>"#, escape(title));
    s.push_str("</svg>\n");
    s
}
