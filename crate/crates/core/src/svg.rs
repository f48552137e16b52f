//! Minimal static SVG rendering for report figures. Output depends only on
//! the inputs (no timestamps, no randomness), so report files are
//! byte-stable across runs.

use crate::error::{Error, Result};

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Linear ramp from near-white to dark blue.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: u8, b: u8| -> u8 { (a as f64 + (b as f64 - a as f64) * t).round() as u8 };
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(0xf7, 0x08),
        lerp(0xfb, 0x30),
        lerp(0xff, 0x6b)
    )
}

/// Renders a labeled matrix as a colored grid with the numeric value printed
/// in every cell. `lo`/`hi` pin the color scale.
pub fn heatmap(
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<f64>],
    lo: f64,
    hi: f64,
) -> Result<String> {
    if values.len() != row_labels.len() {
        return Err(Error::mismatch("one row label per row required"));
    }
    for row in values {
        if row.len() != col_labels.len() {
            return Err(Error::mismatch("one column label per column required"));
        }
    }
    if !(hi > lo) {
        return Err(Error::invalid("heatmap scale must have hi > lo"));
    }
    let cell = 54.0;
    let left = 110.0;
    let top = 70.0;
    let width = left + cell * col_labels.len() as f64 + 30.0;
    let height = top + cell * row_labels.len() as f64 + 40.0;
    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width:.0} {height:.0}\" \
         font-family=\"sans-serif\">\n"
    ));
    out.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"28\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        escape(title)
    ));
    for (j, label) in col_labels.iter().enumerate() {
        out.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            left + (j as f64 + 0.5) * cell,
            top - 10.0,
            escape(label)
        ));
    }
    for (i, label) in row_labels.iter().enumerate() {
        out.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            left - 8.0,
            top + (i as f64 + 0.6) * cell,
            escape(label)
        ));
    }
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = (v - lo) / (hi - lo);
            let x = left + j as f64 * cell;
            let y = top + i as f64 * cell;
            out.push_str(&format!(
                "  <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" \
                 fill=\"{}\" stroke=\"#ffffff\"/>\n",
                ramp(t)
            ));
            let text_fill = if t > 0.55 { "#ffffff" } else { "#1a1a1a" };
            out.push_str(&format!(
                "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\" \
                 fill=\"{text_fill}\">{v:.3}</text>\n",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            ));
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// One named line with optional symmetric error bars.
pub struct Series<'a> {
    pub name: &'a str,
    pub ys: Vec<f64>,
    pub err: Option<Vec<f64>>,
}

/// Renders series over a shared x axis, with markers, straight segments and
/// error bars.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    xs: &[f64],
    series: &[Series],
) -> Result<String> {
    if xs.len() < 2 {
        return Err(Error::invalid("line chart needs at least two x values"));
    }
    if series.is_empty() {
        return Err(Error::invalid("line chart needs at least one series"));
    }
    for s in series {
        if s.ys.len() != xs.len() {
            return Err(Error::mismatch("series length disagrees with x axis"));
        }
        if let Some(err) = &s.err {
            if err.len() != xs.len() {
                return Err(Error::mismatch("error-bar length disagrees with x axis"));
            }
        }
    }
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for (i, &y) in s.ys.iter().enumerate() {
            let e = s.err.as_ref().map_or(0.0, |err| err[i]);
            y_min = y_min.min(y - e);
            y_max = y_max.max(y + e);
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        return Err(Error::NonFinite("line chart values are not finite".into()));
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let pad = 0.08 * (y_max - y_min);
    let (y_lo, y_hi) = (y_min - pad, y_max + pad);
    let x_lo = xs[0];
    let x_hi = xs[xs.len() - 1];

    let width = 560.0;
    let height = 360.0;
    let left = 70.0;
    let right = width - 30.0;
    let top = 50.0;
    let bottom = height - 60.0;
    let sx = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * (right - left);
    let sy = |y: f64| bottom - (y - y_lo) / (y_hi - y_lo) * (bottom - top);
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width:.0} {height:.0}\" \
         font-family=\"sans-serif\">\n"
    ));
    out.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        escape(title)
    ));
    out.push_str(&format!(
        "  <line x1=\"{left:.1}\" y1=\"{bottom:.1}\" x2=\"{right:.1}\" y2=\"{bottom:.1}\" \
         stroke=\"#333333\"/>\n"
    ));
    out.push_str(&format!(
        "  <line x1=\"{left:.1}\" y1=\"{top:.1}\" x2=\"{left:.1}\" y2=\"{bottom:.1}\" \
         stroke=\"#333333\"/>\n"
    ));
    for &x in xs {
        out.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{x}</text>\n",
            sx(x),
            bottom + 18.0
        ));
    }
    for k in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        out.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{y:.2}</text>\n",
            left - 8.0,
            sy(y) + 4.0
        ));
        out.push_str(&format!(
            "  <line x1=\"{left:.1}\" y1=\"{:.1}\" x2=\"{right:.1}\" y2=\"{:.1}\" \
             stroke=\"#dddddd\"/>\n",
            sy(y),
            sy(y)
        ));
    }
    out.push_str(&format!(
        "  <text x=\"{:.0}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        (left + right) / 2.0,
        height - 16.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "  <text x=\"18\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(y_label)
    ));

    for (k, s) in series.iter().enumerate() {
        let color = palette[k % palette.len()];
        if let Some(err) = &s.err {
            for (i, (&x, &y)) in xs.iter().zip(s.ys.iter()).enumerate() {
                if err[i] > 0.0 {
                    out.push_str(&format!(
                        "  <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
                         stroke=\"{color}\"/>\n",
                        sx(x),
                        sy(y - err[i]),
                        sx(x),
                        sy(y + err[i])
                    ));
                }
            }
        }
        let points: Vec<String> = xs
            .iter()
            .zip(s.ys.iter())
            .map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        out.push_str(&format!(
            "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            points.join(" ")
        ));
        for (&x, &y) in xs.iter().zip(s.ys.iter()) {
            out.push_str(&format!(
                "  <circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        out.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            right - 150.0,
            top + 16.0 * (k as f64 + 1.0),
            escape(s.name)
        ));
    }
    out.push_str("</svg>\n");
    Ok(out)
}
