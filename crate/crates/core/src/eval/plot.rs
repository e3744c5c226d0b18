//! Minimal SVG plot output: a cumulative-distribution curve for per-sample
//! MAAPE values and per-node imbalance bars. No plotting dependency; the
//! files are plain standalone SVG.

use std::path::Path;

use super::EvalError;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

fn svg_header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    )
}

fn axes(title: &str, x_label: &str, y_label: &str) -> String {
    let x0 = MARGIN;
    let y0 = HEIGHT - MARGIN;
    let x1 = WIDTH - MARGIN / 2.0;
    let y1 = MARGIN / 2.0;
    format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n\
         <text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{y_label}</text>\n",
        WIDTH / 2.0,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
    )
}

fn write_svg(path: &Path, body: String) -> Result<(), EvalError> {
    let doc = format!("{}{}</svg>\n", svg_header(), body);
    std::fs::write(path, doc).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Cumulative distribution curves of per-sample metric values, one polyline
/// per named series.
pub fn cumulative_curve_svg(
    path: impl AsRef<Path>,
    series: &[(String, Vec<f64>)],
    x_label: &str,
) -> Result<(), EvalError> {
    if series.is_empty() || series.iter().any(|(_, v)| v.is_empty()) {
        return Err(EvalError::Empty);
    }
    let x_max = series
        .iter()
        .flat_map(|(_, v)| v.iter())
        .fold(0.0f64, |a, &b| a.max(b))
        .max(1e-12);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

    let plot_w = WIDTH - MARGIN * 1.5;
    let plot_h = HEIGHT - MARGIN * 1.5;
    let mut body = axes("Cumulative distribution", x_label, "fraction of samples");
    for (si, (name, values)) in series.iter().enumerate() {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut points = String::new();
        points.push_str(&format!("{:.2},{:.2} ", MARGIN, HEIGHT - MARGIN));
        for (i, v) in sorted.iter().enumerate() {
            let x = MARGIN + v / x_max * plot_w;
            let y = (HEIGHT - MARGIN) - ((i + 1) as f64 / n) * plot_h;
            points.push_str(&format!("{x:.2},{y:.2} "));
        }
        let color = colors[si % colors.len()];
        body.push_str(&format!(
            "<polyline points=\"{points}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{name}</text>\n",
            WIDTH - MARGIN * 2.5,
            MARGIN + 18.0 * si as f64,
        ));
    }
    let tick_y = HEIGHT - MARGIN + 16.0;
    body.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{tick_y:.1}\" text-anchor=\"middle\">{x_max:.3}</text>\n\
         <text x=\"{MARGIN}\" y=\"{tick_y:.1}\" text-anchor=\"middle\">0</text>\n",
        WIDTH - MARGIN / 2.0,
    ));
    write_svg(path.as_ref(), body)
}

/// Per-node bars of mean absolute imbalance, in MW.
pub fn imbalance_bars_svg(
    path: impl AsRef<Path>,
    per_node: &[f64],
    title: &str,
) -> Result<(), EvalError> {
    if per_node.is_empty() {
        return Err(EvalError::Empty);
    }
    let y_max = per_node.iter().fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
    let plot_w = WIDTH - MARGIN * 1.5;
    let plot_h = HEIGHT - MARGIN * 1.5;
    let slot = plot_w / per_node.len() as f64;
    let bar_w = (slot * 0.7).min(40.0);

    let mut body = axes(title, "node", "mean |imbalance| (MW)");
    for (j, &v) in per_node.iter().enumerate() {
        let h = v / y_max * plot_h;
        let x = MARGIN + slot * j as f64 + (slot - bar_w) / 2.0;
        let y = (HEIGHT - MARGIN) - h;
        body.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"#1f77b4\"/>\n"
        ));
        if per_node.len() <= 40 {
            body.push_str(&format!(
                "<text x=\"{:.2}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{}</text>\n",
                x + bar_w / 2.0,
                HEIGHT - MARGIN + 14.0,
                j + 1
            ));
        }
    }
    body.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"10\">{y_max:.4}</text>\n",
        MARGIN - 4.0,
        MARGIN / 2.0 + 4.0,
    ));
    write_svg(path.as_ref(), body)
}
