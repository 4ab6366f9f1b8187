//! Minimal SVG line plots for phase portraits and energy traces.
//!
//! The renderer draws straight into an SVG string: axes, linear tick
//! labels, one polyline per series, and a legend. Non-finite points
//! break the polyline rather than distorting the scale, so a diverged
//! forecast still plots its finite prefix.

use std::path::Path;

use super::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const TICK_TARGET: usize = 5;

/// Line colors keyed by model kind name, plus a gray for references.
pub fn series_color(label: &str) -> &'static str {
    match label {
        "nn" => "#d62728",
        "hnn" => "#1f77b4",
        "ghnn" => "#2ca02c",
        _ => "#7f7f7f",
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.to_string(),
            color: series_color(label).to_string(),
            dashed: false,
            points,
        }
    }

    pub fn reference(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.to_string(),
            color: "#7f7f7f".to_string(),
            dashed: true,
            points,
        }
    }
}

fn escape_xml(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Axis range over the finite coordinates, padded so a degenerate span
/// (constant series, single point, or no finite data) still renders.
fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Round-number tick positions covering `[lo, hi]` with roughly
/// `TICK_TARGET` steps of size 1, 2, or 5 times a power of ten.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / TICK_TARGET as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = first;
    while t <= hi + step * 1e-9 {
        // Snap values like 0.30000000000000004 back onto the grid.
        out.push((t / step).round() * step);
        t += step;
    }
    out
}

fn format_tick(value: f64) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    let abs = value.abs();
    if !(1e-3..1e4).contains(&abs) {
        return format!("{value:.1e}");
    }
    let s = format!("{value:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

/// Render a complete SVG document with the given title, axis labels,
/// and series.
pub fn render(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x_lo, x_hi) = axis_range(series.iter().flat_map(|s| {
        s.points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, _)| x)
    }));
    let (y_lo, y_hi) = axis_range(series.iter().flat_map(|s| {
        s.points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(_, y)| y)
    }));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_px = |x: f64, y: f64| {
        let px = MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let py = MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;
        (px, py)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        escape_xml(title)
    ));

    // Grid lines and tick labels.
    for t in ticks(x_lo, x_hi) {
        let (px, _) = to_px(t, y_lo);
        svg.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{MARGIN_TOP}\" x2=\"{px:.1}\" y2=\"{:.1}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_TOP + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\" \
             font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            MARGIN_TOP + plot_h + 16.0,
            format_tick(t)
        ));
    }
    for t in ticks(y_lo, y_hi) {
        let (_, py) = to_px(x_lo, t);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_LEFT}\" y1=\"{py:.1}\" x2=\"{:.1}\" y2=\"{py:.1}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_LEFT + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" \
             font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            MARGIN_LEFT - 6.0,
            py + 4.0,
            format_tick(t)
        ));
    }

    // Axes frame.
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape_xml(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape_xml(y_label)
    ));

    // Series polylines; non-finite points split a series into segments.
    for s in series {
        let dash = if s.dashed {
            " stroke-dasharray=\"6 4\""
        } else {
            ""
        };
        let mut segment: Vec<(f64, f64)> = Vec::new();
        let flush = |segment: &mut Vec<(f64, f64)>, svg: &mut String| {
            if segment.len() >= 2 {
                let pts: Vec<String> = segment
                    .iter()
                    .map(|&(x, y)| {
                        let (px, py) = to_px(x, y);
                        format!("{px:.2},{py:.2}")
                    })
                    .collect();
                svg.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" \
                     stroke-width=\"1.5\"{dash}/>\n",
                    pts.join(" "),
                    s.color
                ));
            }
            segment.clear();
        };
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                segment.push((x, y));
            } else {
                flush(&mut segment, &mut svg);
            }
        }
        flush(&mut segment, &mut svg);
    }

    // Legend in the top-right corner of the plot area. Series with empty
    // labels are drawn but get no legend entry, so repeats of one model
    // across initial conditions share a single entry.
    for (i, s) in series.iter().filter(|s| !s.label.is_empty()).enumerate() {
        let ly = MARGIN_TOP + 16.0 + 18.0 * i as f64;
        let lx = MARGIN_LEFT + plot_w - 120.0;
        let dash = if s.dashed {
            " stroke-dasharray=\"6 4\""
        } else {
            ""
        };
        svg.push_str(&format!(
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
             stroke=\"{}\" stroke-width=\"2\"{dash}/>\n",
            lx + 28.0,
            s.color
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" \
             font-size=\"12\">{}</text>\n",
            lx + 34.0,
            ly + 4.0,
            escape_xml(&s.label)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

/// Render and write a plot in one step.
pub fn write_plot(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<(), CliError> {
    let svg = render(title, x_label, y_label, series);
    crate::write_atomic(path, svg.as_bytes())
        .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))
}
