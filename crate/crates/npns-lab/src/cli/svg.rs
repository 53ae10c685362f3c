//! Standalone SVG line plots: fixed canvas, optional logarithmic axes, no
//! external assets. Output is deterministic byte for byte, so plots are as
//! reproducible as the tables they are drawn from.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SvgError {
    #[error("no series to plot")]
    NoSeries,
    #[error("series `{0}` has no plottable points")]
    EmptySeries(String),
}

/// One named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Titles and axis scales for a plot.
#[derive(Debug, Clone, PartialEq)]
pub struct AxesSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 78.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 46.0;
const MARGIN_B: f64 = 58.0;
/// Floor applied to nonpositive values on a logarithmic axis; every clamp is
/// counted and reported in a footnote on the plot itself.
const LOG_CLAMP: f64 = 1e-16;

const PALETTE: [&str; 6] = ["#1f6fb4", "#c23b3b", "#2d8a4d", "#8a55b0", "#d07f2a", "#4f6d7a"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Transform a data value onto an axis: identity for linear axes, log10 with
/// the clamp floor for logarithmic ones. Returns the transformed value and
/// whether clamping occurred.
fn transform(v: f64, log: bool) -> (f64, bool) {
    if !log {
        return (v, false);
    }
    if v >= LOG_CLAMP {
        (v.log10(), false)
    } else {
        (LOG_CLAMP.log10(), true)
    }
}

fn tick_label(t: f64, log: bool) -> String {
    let v = if log { 10f64.powf(t) } else { t };
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Render series as a standalone SVG document. Nonfinite points are skipped;
/// a series whose points are all nonfinite is an error, as is an empty plot.
pub fn emit_svg(series: &[Series], axes: &AxesSpec) -> Result<String, SvgError> {
    if series.is_empty() {
        return Err(SvgError::NoSeries);
    }

    let mut clamped = 0usize;
    let mut cleaned: Vec<(&Series, Vec<(f64, f64)>)> = Vec::new();
    for s in series {
        let mut pts = Vec::new();
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let (tx, cx) = transform(x, axes.log_x);
            let (ty, cy) = transform(y, axes.log_y);
            clamped += usize::from(cx) + usize::from(cy);
            pts.push((tx, ty));
        }
        if pts.is_empty() {
            return Err(SvgError::EmptySeries(s.label.clone()));
        }
        cleaned.push((s, pts));
    }

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, pts) in &cleaned {
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    // Degenerate ranges get symmetric padding so the line sits mid-plot.
    if x_max - x_min < 1e-300 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_max - y_min < 1e-300 {
        y_min -= 0.5;
        y_max += 0.5;
    }

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |t: f64| MARGIN_L + (t - x_min) / (x_max - x_min) * plot_w;
    let sy = |t: f64| MARGIN_T + (y_max - t) / (y_max - y_min) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"26\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        esc(&axes.title)
    ));

    // Frame.
    out.push_str(&format!(
        "<rect x=\"{MARGIN_L:.1}\" y=\"{MARGIN_T:.1}\" width=\"{plot_w:.1}\" \
         height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n"
    ));

    // Ticks: five per axis, uniform in transformed coordinates.
    const N_TICKS: usize = 5;
    for k in 0..N_TICKS {
        let f = k as f64 / (N_TICKS - 1) as f64;
        let tx = x_min + f * (x_max - x_min);
        let px = sx(tx);
        out.push_str(&format!(
            "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#333\"/>\n",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{}</text>\n",
            MARGIN_T + plot_h + 18.0,
            esc(&tick_label(tx, axes.log_x))
        ));
        let ty = y_min + f * (y_max - y_min);
        let py = sy(ty);
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{MARGIN_L:.1}\" y2=\"{py:.1}\" \
             stroke=\"#333\"/>\n",
            MARGIN_L - 5.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"11\">{}</text>\n",
            MARGIN_L - 8.0,
            py + 4.0,
            esc(&tick_label(ty, axes.log_y))
        ));
    }

    // Axis labels.
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0,
        esc(&axes.x_label)
    ));
    out.push_str(&format!(
        "<text x=\"20\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\" transform=\"rotate(-90 20 {:.1})\">{}</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        esc(&axes.y_label)
    ));

    // Data.
    for (idx, (s, pts)) in cleaned.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let coords: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        if pts.len() == 1 {
            let (x, y) = pts[0];
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        if cleaned.len() > 1 {
            let ly = MARGIN_T + 16.0 + 16.0 * idx as f64;
            let lx = MARGIN_L + plot_w - 150.0;
            out.push_str(&format!(
                "<line x1=\"{lx:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{color}\" \
                 stroke-width=\"1.6\"/>\n",
                ly - 4.0,
                lx + 22.0,
                ly - 4.0
            ));
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{ly:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}\
                 </text>\n",
                lx + 28.0,
                esc(&s.label)
            ));
        }
    }

    if clamped > 0 {
        out.push_str(&format!(
            "<text x=\"{MARGIN_L:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" \
             fill=\"#888\">{clamped} nonpositive value(s) clamped to {LOG_CLAMP:e} for the \
             logarithmic scale</text>\n",
            HEIGHT - 2.0
        ));
    }

    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axes(log_x: bool, log_y: bool) -> AxesSpec {
        AxesSpec {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x,
            log_y,
        }
    }

    #[test]
    fn two_points_make_one_polyline() {
        let s = [Series { label: "a".into(), points: vec![(0.0, 1.0), (1.0, 2.0)] }];
        let svg = emit_svg(&s, &axes(false, false)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("clamped"));
    }

    #[test]
    fn log_scale_clamps_and_annotates_nonpositive_values() {
        let s = [Series {
            label: "decay".into(),
            points: vec![(0.0, 1.0), (1.0, 1e-3), (2.0, 0.0)],
        }];
        let svg = emit_svg(&s, &axes(false, true)).unwrap();
        assert!(svg.contains("1 nonpositive value(s) clamped to 1e-16"));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(emit_svg(&[], &axes(false, false)), Err(SvgError::NoSeries));
        let s = [Series { label: "void".into(), points: vec![] }];
        assert!(matches!(emit_svg(&s, &axes(false, false)), Err(SvgError::EmptySeries(_))));
        let s = [Series { label: "nan".into(), points: vec![(f64::NAN, 1.0)] }];
        assert!(matches!(emit_svg(&s, &axes(false, false)), Err(SvgError::EmptySeries(_))));
    }

    #[test]
    fn output_is_deterministic_and_escapes_labels() {
        let s = [Series { label: "a<b & c".into(), points: vec![(1e-3, 5.0), (1.0, 6.0)] }];
        let a = emit_svg(&s, &axes(true, false)).unwrap();
        let b = emit_svg(&s, &axes(true, false)).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("a&lt;b &amp; c") || !a.contains("a<b"));
    }

    #[test]
    fn multiple_series_get_a_legend() {
        let s = [
            Series { label: "one".into(), points: vec![(0.0, 1.0), (1.0, 2.0)] },
            Series { label: "two".into(), points: vec![(0.0, 2.0), (1.0, 1.0)] },
        ];
        let svg = emit_svg(&s, &axes(false, false)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains(">one</text>"));
        assert!(svg.contains(">two</text>"));
    }
}
