//! CSV tables and static SVG line charts.
//!
//! Numbers are written with 17 significant digits so every value
//! round-trips to the same f64.

use std::fs;
use std::io;
use std::path::Path;

/// 17 significant digits: exact f64 round-trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<f64>>,
) -> io::Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    fs::write(path, text)
}

/// Self-contained SVG line chart: each series is normalized to its own
/// range (printed in the legend) so differently scaled columns stay
/// readable on one canvas.
pub fn write_line_chart(
    path: &Path,
    title: &str,
    x: &[f64],
    series: &[(String, Vec<f64>)],
) -> io::Result<()> {
    const W: f64 = 900.0;
    const H: f64 = 480.0;
    const ML: f64 = 60.0;
    const MR: f64 = 30.0;
    const MT: f64 = 50.0;
    const MB: f64 = 50.0;
    const COLORS: [&str; 6] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
    ];

    let (x_min, x_max) = (
        x.iter().cloned().fold(f64::INFINITY, f64::min),
        x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let x_span = (x_max - x_min).max(f64::MIN_POSITIVE);
    let px = |v: f64| ML + (v - x_min) / x_span * (W - ML - MR);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        W / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB,
        H - MB
    ));
    svg.push_str(&format!(
        "<text x=\"{ML}\" y=\"{}\">{}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
        H - MB + 20.0,
        fmt_short(x_min),
        W - MR,
        H - MB + 20.0,
        fmt_short(x_max)
    ));

    for (s, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[s % COLORS.len()];
        let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (y_max - y_min).max(1e-300);
        let py = |v: f64| {
            let unit = if y_max > y_min { (v - y_min) / span } else { 0.5 };
            (H - MB) - unit * (H - MB - MT)
        };
        let pts: Vec<String> = x
            .iter()
            .zip(ys)
            .map(|(&xv, &yv)| format!("{:.2},{:.2}", px(xv), py(yv)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name} [{}, {}]</text>\n",
            ML + 10.0,
            MT + 16.0 * (s as f64 + 1.0),
            fmt_short(y_min),
            fmt_short(y_max)
        ));
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg)
}

fn fmt_short(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 0.01 && v.abs() < 10000.0 {
        format!("{v:.4}")
    } else {
        format!("{v:.3e}")
    }
}
