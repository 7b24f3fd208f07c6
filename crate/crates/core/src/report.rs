//! CSV-to-SVG reporting: suboptimality against cumulative downlink bits per
//! worker, one polyline per run, log-scaled y axis.
//!
//! The SVG is emitted by hand (polylines and text only) so the output is a
//! pure function of the input curves: no timestamps, no library versioning,
//! byte-identical across re-runs. Rows whose y value is non-finite or
//! non-positive cannot be placed on a log axis; they are dropped from the
//! polyline and counted in the machine-readable summary emitted alongside.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsLog;

/// Which suboptimality column a report plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YColumn {
    /// The theorem evaluation point (default).
    SuboptW,
    /// The server model `xᵗ`.
    SuboptX,
}

impl Default for YColumn {
    fn default() -> Self {
        YColumn::SuboptW
    }
}

pub struct CurveInput {
    pub label: String,
    pub log: MetricsLog,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveSummary {
    pub label: String,
    pub points_plotted: usize,
    pub points_dropped: usize,
    /// Final plottable suboptimality, if any row survived.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_subopt: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub y_column: YColumn,
    pub curves: Vec<CurveSummary>,
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 600.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 230.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 60.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render the curves to a standalone SVG plus a summary of what was plotted.
pub fn render_svg(curves: &[CurveInput], y_column: YColumn) -> Result<(String, ReportSummary)> {
    if curves.is_empty() {
        return Err(Error::EmptyReport);
    }
    let pick = |row: &crate::metrics::MetricsRow| match y_column {
        YColumn::SuboptW => row.f_subopt_w,
        YColumn::SuboptX => row.f_subopt_x,
    };

    // Collect plottable points and the data ranges.
    let mut plottable: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut summary = Vec::new();
    let mut x_max = 0.0f64;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for curve in curves {
        let mut pts = Vec::new();
        let mut dropped = 0usize;
        for row in &curve.log.rows {
            let y = pick(row);
            if !row.bits_per_worker.is_finite() || !y.is_finite() || y <= 0.0 {
                dropped += 1;
                continue;
            }
            x_max = x_max.max(row.bits_per_worker);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
            pts.push((row.bits_per_worker, y));
        }
        summary.push(CurveSummary {
            label: curve.label.clone(),
            points_plotted: pts.len(),
            points_dropped: dropped,
            final_subopt: pts.last().map(|&(_, y)| y),
        });
        plottable.push(pts);
    }

    // Degenerate data still renders (empty axes) so callers can diff bytes.
    let (dec_lo, dec_hi) = if y_min.is_finite() {
        let lo = y_min.log10().floor() as i32;
        let hi = y_max.log10().ceil() as i32;
        (lo, if hi > lo { hi } else { lo + 1 })
    } else {
        (0, 1)
    };
    if x_max <= 0.0 {
        x_max = 1.0;
    }

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let x_px = |bits: f64| MARGIN_L + bits / x_max * plot_w;
    let y_px = |v: f64| {
        let t = (v.log10() - dec_lo as f64) / (dec_hi - dec_lo) as f64;
        MARGIN_T + (1.0 - t) * plot_h
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Frame.
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n"
    ));

    // y decades: gridline, tick label 10^k.
    for dec in dec_lo..=dec_hi {
        let y = y_px(10f64.powi(dec));
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n",
            MARGIN_L + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"end\" \
             font-family=\"sans-serif\">1e{dec}</text>\n",
            MARGIN_L - 8.0,
            y + 4.0
        ));
    }

    // x ticks: five evenly spaced values.
    for i in 0..=4 {
        let bits = x_max * i as f64 / 4.0;
        let x = x_px(bits);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" \
             stroke=\"black\" stroke-width=\"1\"/>\n",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"13\" text-anchor=\"middle\" \
             font-family=\"sans-serif\">{}</text>\n",
            MARGIN_T + plot_h + 22.0,
            if bits == 0.0 { "0".to_string() } else { format!("{bits:.2e}") }
        ));
    }

    // Axis labels.
    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"15\" text-anchor=\"middle\" \
         font-family=\"sans-serif\">bits/n</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0
    ));
    svg.push_str(&format!(
        "<text x=\"22\" y=\"{:.2}\" font-size=\"15\" text-anchor=\"middle\" \
         font-family=\"sans-serif\" transform=\"rotate(-90 22 {:.2})\">f(x) - f(x*)</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));

    // Curves and legend.
    for (idx, pts) in plottable.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if !pts.is_empty() {
            let mut path = String::new();
            for &(bits, y) in pts {
                path.push_str(&format!("{:.2},{:.2} ", x_px(bits), y_px(y)));
            }
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                path.trim_end()
            ));
        }
        let ly = MARGIN_T + 16.0 + idx as f64 * 20.0;
        let lx = MARGIN_L + plot_w + 14.0;
        svg.push_str(&format!(
            "<line x1=\"{lx:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n",
            ly - 4.0,
            lx + 24.0,
            ly - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{ly:.2}\" font-size=\"12\" font-family=\"sans-serif\">{}</text>\n",
            lx + 30.0,
            xml_escape(&curves[idx].label)
        ));
    }
    svg.push_str("</svg>\n");

    Ok((svg, ReportSummary { y_column, curves: summary }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{MetricsLog, MetricsRow};

    fn log_with(values: &[(f64, f64)]) -> MetricsLog {
        let mut log = MetricsLog::new(false);
        for (i, &(bits, y)) in values.iter().enumerate() {
            log.rows.push(MetricsRow {
                round: i as u64,
                gamma: 0.1,
                f_subopt_w: y,
                f_subopt_x: y * 2.0,
                bits_per_worker: bits,
                lyapunov: None,
                full_round: None,
                f_subopt_avg: None,
            });
        }
        log
    }

    #[test]
    fn single_curve_renders_one_polyline() {
        let curves = vec![CurveInput {
            label: "run".into(),
            log: log_with(&[(100.0, 1.0), (200.0, 0.5), (300.0, 0.25)]),
        }];
        let (svg, summary) = render_svg(&curves, YColumn::SuboptW).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("bits/n"));
        assert!(svg.contains("f(x) - f(x*)"));
        assert_eq!(summary.curves[0].points_plotted, 3);
        assert_eq!(summary.curves[0].final_subopt, Some(0.25));
    }

    #[test]
    fn identical_curves_are_not_deduped() {
        let log = log_with(&[(100.0, 1.0), (200.0, 0.5)]);
        let curves = vec![
            CurveInput { label: "a".into(), log: log.clone() },
            CurveInput { label: "b".into(), log },
        ];
        let (svg, _) = render_svg(&curves, YColumn::SuboptW).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn non_finite_rows_are_dropped_and_counted() {
        let curves = vec![CurveInput {
            label: "r".into(),
            log: log_with(&[(100.0, 1.0), (200.0, f64::NAN), (300.0, 0.0), (400.0, 0.5)]),
        }];
        let (_, summary) = render_svg(&curves, YColumn::SuboptW).unwrap();
        assert_eq!(summary.curves[0].points_plotted, 2);
        assert_eq!(summary.curves[0].points_dropped, 2);
        assert_eq!(summary.curves[0].final_subopt, Some(0.5));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(render_svg(&[], YColumn::SuboptW), Err(Error::EmptyReport)));
    }

    #[test]
    fn rendering_is_deterministic() {
        let make = || {
            vec![CurveInput {
                label: "x".into(),
                log: log_with(&[(1.5e6, 0.123456789), (3e6, 1e-9)]),
            }]
        };
        let (a, _) = render_svg(&make(), YColumn::SuboptW).unwrap();
        let (b, _) = render_svg(&make(), YColumn::SuboptW).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_are_escaped() {
        let curves =
            vec![CurveInput { label: "a<b&c".into(), log: log_with(&[(1.0, 1.0)]) }];
        let (svg, _) = render_svg(&curves, YColumn::SuboptW).unwrap();
        assert!(svg.contains("a&lt;b&amp;c"));
    }
}
