//! Minimal static SVG charts: annotated heatmaps and line plots.

use std::fmt::Write as _;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// White at 0, deep blue at 1.
fn blue(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0))
}

/// Grid of `values` (rows x columns) shaded by value relative to the
/// maximum, with `label(i, j)` printed in each cell.
pub fn heatmap<F>(title: &str, rows: &[String], cols: &[String], values: &[Vec<f64>], label: F) -> String
where
    F: Fn(usize, usize) -> String,
{
    let cell = if cols.len() > 12 { 18.0 } else { 40.0 };
    let left = 10.0 + 7.0 * rows.iter().map(|r| r.len()).max().unwrap_or(1) as f64;
    let top = 50.0;
    let width = left + cell * cols.len() as f64 + 20.0;
    let height = top + cell * rows.len() as f64 + 20.0;
    let max = values
        .iter()
        .flatten()
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    writeln!(s, "<text x=\"10\" y=\"18\" {FONT} font-size=\"14\">{}</text>", escape(title)).unwrap();
    for (j, c) in cols.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        writeln!(s, "<text x=\"{x}\" y=\"{}\" {FONT} text-anchor=\"middle\">{}</text>", top - 6.0, escape(c)).unwrap();
    }
    for (i, row) in values.iter().enumerate() {
        let y = top + cell * i as f64;
        let name = rows.get(i).map(String::as_str).unwrap_or("");
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>",
            left - 4.0,
            y + cell * 0.5 + 4.0,
            escape(name)
        )
        .unwrap();
        for (j, &v) in row.iter().enumerate() {
            let x = left + cell * j as f64;
            let t = if max > 0.0 { v / max } else { 0.0 };
            writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" stroke=\"#999\" stroke-width=\"0.5\"/>",
                blue(t)
            )
            .unwrap();
            let text = label(i, j);
            if !text.is_empty() && cell >= 30.0 {
                let ink = if t > 0.5 { "white" } else { "black" };
                writeln!(
                    s,
                    "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\" fill=\"{ink}\">{}</text>",
                    x + cell * 0.5,
                    y + cell * 0.5 + 4.0,
                    escape(&text)
                )
                .unwrap();
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Polyline of `ys` against epochs 1..=n.
pub fn line_chart(title: &str, ys: &[f64], x_label: &str, y_label: &str) -> String {
    let (w, h) = (480.0, 300.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 40.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let finite: Vec<f64> = ys.iter().copied().filter(|v| v.is_finite()).collect();
    let y_max = finite.iter().copied().fold(0.0f64, f64::max);
    let y_max = if y_max > 0.0 { y_max } else { 1.0 };
    let n = ys.len().max(1);
    let px = |i: usize| {
        if n == 1 {
            left + pw * 0.5
        } else {
            left + pw * i as f64 / (n - 1) as f64
        }
    };
    let py = |v: f64| top + ph * (1.0 - v / y_max);

    let mut s = String::new();
    writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    )
    .unwrap();
    writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    writeln!(s, "<text x=\"10\" y=\"18\" {FONT} font-size=\"14\">{}</text>", escape(title)).unwrap();
    writeln!(
        s,
        "<path d=\"M{left} {top} V{} H{}\" fill=\"none\" stroke=\"black\"/>",
        top + ph,
        left + pw
    )
    .unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{y_max:.3}</text>", left - 4.0, top + 4.0).unwrap();
    writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">0</text>", left - 4.0, top + ph + 4.0).unwrap();
    writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\">{} (1..{n})</text>",
        left + pw * 0.5,
        h - 10.0,
        escape(x_label)
    )
    .unwrap();
    writeln!(
        s,
        "<text x=\"14\" y=\"{}\" {FONT} transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>",
        top + ph * 0.5,
        top + ph * 0.5,
        escape(y_label)
    )
    .unwrap();
    let points: Vec<String> = ys
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, &v)| format!("{:.2},{:.2}", px(i), py(v)))
        .collect();
    if points.len() > 1 {
        writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"#08306b\" stroke-width=\"1.5\"/>", points.join(" ")).unwrap();
    }
    for p in &points {
        let (x, y) = p.split_once(',').expect("formatted pair");
        writeln!(s, "<circle cx=\"{x}\" cy=\"{y}\" r=\"2.5\" fill=\"#08306b\"/>").unwrap();
    }
    s.push_str("</svg>\n");
    s
}
