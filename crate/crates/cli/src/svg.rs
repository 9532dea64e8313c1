//! Static SVG figures: coherence traces and matrix heatmaps.

use std::fmt::Write as _;

use cohwash_core::Tensor;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// One line per series over `0..len` seconds, with the legend showing each series'
/// mean ± std.
pub fn trace_plot(title: &str, series: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (760.0, 380.0);
    let (left, right, top, bottom) = (60.0, 190.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let len = series.iter().map(|s| s.1.len()).max().unwrap_or(0).max(2);
    let all = series.iter().flat_map(|s| s.1.iter().copied());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = lo.min(0.0);
    hi = hi.max(lo + 1e-6);
    let x = |i: usize| left + pw * i as f64 / (len - 1) as f64;
    let y = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(s, r##"<line x1="{left}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{v:.2}</text>"##, left + pw, left - 6.0, y(v) + 4.0, y = y(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#, left + pw / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left + pw, top + ph + 18.0, len - 1);
    let _ = writeln!(s, r#"<text x="{left}" y="{}" text-anchor="start">0</text>"#, top + ph + 18.0);
    for (k, (name, v)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = v.iter().enumerate().map(|(i, &val)| format!("{:.2},{:.2}", x(i), y(val))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let (m, sd) = mean_std(v);
        let ly = top + 16.0 + 20.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{colour}" stroke-width="3"/><text x="{}" y="{}">{} {m:.3} ± {sd:.3}</text>"#, lx + 18.0, lx + 24.0, ly + 4.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// White to dark blue.
fn shade(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(255.0, 8.0), c(255.0, 48.0), c(255.0, 107.0))
}

/// Matrices drawn side by side, each scaled to its own range and annotated with it.
pub fn heatmaps(panels: &[(&str, &Tensor)], row_labels: &[String], col_labels: &[String]) -> String {
    let cell = 14.0;
    let (label_w, top, gap) = (48.0, 50.0, 40.0);
    let dims: Vec<(usize, usize)> = panels.iter().map(|(_, t)| (t.shape()[0], t.shape()[1])).collect();
    let rows = dims.iter().map(|d| d.0).max().unwrap_or(0);
    let widths: Vec<f64> = dims.iter().map(|d| d.1 as f64 * cell).collect();
    let w = label_w + widths.iter().sum::<f64>() + gap * panels.len() as f64;
    let h = top + rows as f64 * cell + 40.0;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (i, label) in row_labels.iter().enumerate().take(rows) {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, label_w - 4.0, top + (i as f64 + 0.75) * cell, escape(label));
    }
    let mut x0 = label_w;
    for (k, (title, t)) in panels.iter().enumerate() {
        let (r, c) = dims[k];
        let (lo, hi) = t.data().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let _ = writeln!(s, r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="12">{}</text>"#, x0 + widths[k] / 2.0, escape(title));
        let _ = writeln!(s, r#"<text x="{:.1}" y="32" text-anchor="middle">range {lo:.3} to {hi:.3}</text>"#, x0 + widths[k] / 2.0);
        for i in 0..r {
            for j in 0..c {
                let v = t.at2(i, j);
                let _ = writeln!(s, r#"<rect x="{:.1}" y="{:.1}" width="{cell}" height="{cell}" fill="{}"><title>{i},{j}: {v:.4}</title></rect>"#, x0 + j as f64 * cell, top + i as f64 * cell, shade((v - lo) / span));
            }
        }
        for (j, label) in col_labels.iter().enumerate().take(c) {
            let (cx, cy) = (x0 + (j as f64 + 0.5) * cell, top + r as f64 * cell + 8.0);
            let _ = writeln!(s, r#"<text x="{cx:.1}" y="{cy:.1}" transform="rotate(60 {cx:.1} {cy:.1})">{}</text>"#, escape(label));
        }
        x0 += widths[k] + gap;
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figures_are_well_formed_xml() {
        let plot = trace_plot("a <b> & c", &[("raw".into(), vec![0.5, 0.4, 0.6]), ("net".into(), vec![0.2; 3])]);
        roxmltree::Document::parse(&plot).unwrap();
        let t = Tensor::new(&[2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 4.0]).unwrap();
        let labels: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let heat = heatmaps(&[("attention", &t), ("flat", &Tensor::zeros(&[2, 3]))], &labels, &labels);
        let doc = roxmltree::Document::parse(&heat).unwrap();
        let cells = doc.descendants().filter(|n| n.has_tag_name("rect")).count();
        assert_eq!(cells, 1 + 12);
    }

    #[test]
    fn shade_endpoints() {
        assert_eq!(shade(0.0), "#ffffff");
        assert_eq!(shade(1.0), "#08306b");
    }
}
