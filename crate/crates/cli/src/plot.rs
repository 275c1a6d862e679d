//! Minimal SVG line plots of a metric against layer.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;

pub fn line_plot(title: &str, ys: &[f64]) -> String {
    let finite: Vec<f64> = ys.iter().copied().filter(|v| v.is_finite()).collect();
    let (lo, hi) = finite
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if finite.is_empty() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let n = ys.len().max(2) - 1;
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / n as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(s, r#"<text x="{}" y="18" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = write!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = write!(s, r#"<text x="4" y="{}">{hi:.4}</text><text x="4" y="{}">{lo:.4}</text>"#, PAD, H - PAD);
    let pts: Vec<String> = ys
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
        .collect();
    let _ = write!(s, r##"<polyline fill="none" stroke="#1f5fa8" stroke-width="2" points="{}"/>"##, pts.join(" "));
    for i in 0..ys.len() {
        let _ = write!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{i}</text>"#, x(i), H - PAD + 14.0);
    }
    s.push_str("</svg>\n");
    s
}
