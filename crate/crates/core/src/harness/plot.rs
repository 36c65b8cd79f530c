//! Standalone SVG charts. Series are drawn as paths in data coordinates
//! inside a transformed group, so the path data holds the raw values.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::EngineResult;

const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
}

fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(panels: usize) -> String {
    let h = panels as f64 * (PANEL_H + MARGIN_T + MARGIN_B);
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{h}\" viewBox=\"0 0 {WIDTH} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Axis-aligned panel frame with tick labels; returns the data→pixel
/// transform attribute for a group whose children use data coordinates.
fn frame(out: &mut String, top: f64, title: &str, x_labels: &[String], y_lo: f64, y_hi: f64) -> String {
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let y0 = top + MARGIN_T;
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        top + 20.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        "<rect x=\"{MARGIN_L}\" y=\"{y0}\" width=\"{plot_w}\" height=\"{PANEL_H}\" fill=\"none\" stroke=\"#444\"/>"
    );
    for k in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let py = y0 + PANEL_H - PANEL_H * k as f64 / 4.0;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{py:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{v:.1}</text>",
            MARGIN_L - 4.0
        );
    }
    let n = x_labels.len().max(1);
    let step = (n / 10).max(1);
    for (i, lab) in x_labels.iter().enumerate().filter(|(i, _)| i % step == 0) {
        let px = MARGIN_L + plot_w * x_frac(i, n);
        let _ = writeln!(
            out,
            "<text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            y0 + PANEL_H + 14.0,
            escape(lab)
        );
    }
    let sx = if n > 1 { plot_w / (n - 1) as f64 } else { plot_w };
    let sy = PANEL_H / (y_hi - y_lo);
    format!(
        "translate({MARGIN_L},{}) scale({sx},{}) translate(0,{})",
        y0 + PANEL_H,
        -sy,
        num(-y_lo)
    )
}

fn x_frac(i: usize, n: usize) -> f64 {
    if n > 1 {
        i as f64 / (n - 1) as f64
    } else {
        0.0
    }
}

fn y_range(series: &[Series<'_>], include_zero: bool) -> (f64, f64) {
    let vals = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    (lo, hi)
}

fn line_panel(out: &mut String, top: f64, title: &str, x_labels: &[String], series: &[Series<'_>]) {
    let (lo, hi) = y_range(series, true);
    let tf = frame(out, top, title, x_labels, lo, hi);
    let _ = writeln!(out, "<g transform=\"{tf}\">");
    for (k, s) in series.iter().enumerate() {
        let mut d = String::new();
        for (i, &v) in s.values.iter().enumerate() {
            let _ = write!(d, "{}{},{}", if i == 0 { "M" } else { " L" }, i, num(v));
        }
        let _ = writeln!(
            out,
            "<path class=\"series\" data-label=\"{}\" d=\"{d}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" vector-effect=\"non-scaling-stroke\"/>",
            escape(s.label),
            COLORS[k % COLORS.len()]
        );
    }
    let _ = writeln!(out, "</g>");
    legend(out, top, series.iter().map(|s| s.label));
}

fn legend<'a>(out: &mut String, top: f64, labels: impl Iterator<Item = &'a str>) {
    for (k, lab) in labels.enumerate() {
        let x = WIDTH - MARGIN_R - 140.0;
        let y = top + MARGIN_T + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"2\"/>\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            y - 4.0,
            x + 18.0,
            y - 4.0,
            COLORS[k % COLORS.len()],
            x + 22.0,
            y,
            escape(lab)
        );
    }
}

/// Predicted vs true RUL per engine above the absolute error.
pub fn rul_chart(title: &str, engines: &[EngineResult]) -> Result<String> {
    if engines.is_empty() {
        return Err(Error::Contract("no predictions to plot".into()));
    }
    let labels: Vec<String> = engines.iter().map(|e| e.unit_id.to_string()).collect();
    let truth: Vec<f64> = engines.iter().map(|e| e.true_rul).collect();
    let pred: Vec<f64> = engines.iter().map(|e| e.pred_rul).collect();
    let err: Vec<f64> = engines.iter().map(|e| e.abs_err).collect();
    let mut out = header(2);
    line_panel(
        &mut out,
        0.0,
        &format!("{title}: RUL by test engine"),
        &labels,
        &[
            Series {
                label: "true",
                values: &truth,
            },
            Series {
                label: "predicted",
                values: &pred,
            },
        ],
    );
    line_panel(
        &mut out,
        PANEL_H + MARGIN_T + MARGIN_B,
        "absolute error",
        &labels,
        &[Series {
            label: "|pred - true|",
            values: &err,
        }],
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// One panel per metric, x = category.
pub fn metric_lines(x_labels: &[String], panels: &[(&str, Vec<f64>)]) -> Result<String> {
    if x_labels.is_empty() || panels.is_empty() {
        return Err(Error::Contract("nothing to plot".into()));
    }
    let mut out = header(panels.len());
    for (k, (name, vals)) in panels.iter().enumerate() {
        line_panel(
            &mut out,
            k as f64 * (PANEL_H + MARGIN_T + MARGIN_B),
            name,
            x_labels,
            &[Series {
                label: name,
                values: vals,
            }],
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// One bar panel per metric, bars = categories.
pub fn metric_bars(categories: &[String], panels: &[(&str, Vec<f64>)]) -> Result<String> {
    if categories.is_empty() || panels.is_empty() {
        return Err(Error::Contract("nothing to plot".into()));
    }
    let n = categories.len();
    let mut out = header(panels.len());
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let slot = plot_w / n as f64;
    for (k, (name, vals)) in panels.iter().enumerate() {
        let top = k as f64 * (PANEL_H + MARGIN_T + MARGIN_B);
        let (lo, hi) = y_range(
            &[Series {
                label: name,
                values: vals,
            }],
            true,
        );
        let y0 = top + MARGIN_T;
        let _ = frame(&mut out, top, name, &[], lo, hi);
        for (i, (&v, cat)) in vals.iter().zip(categories).enumerate() {
            let h = PANEL_H * (v.max(lo) - lo) / (hi - lo);
            let x = MARGIN_L + slot * i as f64 + slot * 0.2;
            let _ = writeln!(
                out,
                "<rect class=\"bar\" data-value=\"{}\" x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"/>",
                num(v),
                y0 + PANEL_H - h,
                slot * 0.6,
                COLORS[i % COLORS.len()]
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
                x + slot * 0.3,
                y0 + PANEL_H + 14.0,
                escape(cat)
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn engines(err: f64) -> Vec<EngineResult> {
        (1..=100)
            .map(|u| EngineResult {
                unit_id: u,
                true_rul: u as f64,
                pred_rul: u as f64 + err,
                abs_err: err.abs(),
            })
            .collect()
    }

    fn paths(svg: &str) -> Vec<&str> {
        svg.split("d=\"").skip(1).map(|s| &s[..s.find('"').unwrap()]).collect()
    }

    #[test]
    fn two_panels_three_series() {
        let svg = rul_chart("FD001", &engines(2.0)).unwrap();
        assert_eq!(svg.matches("<g transform=").count(), 2);
        assert_eq!(paths(&svg).len(), 3);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }

    #[test]
    fn perfect_predictions_give_flat_zero_error_path() {
        let svg = rul_chart("FD001", &engines(0.0)).unwrap();
        let err = paths(&svg)[2];
        let ys: Vec<&str> = err.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert_eq!(ys.len(), 100);
        assert!(ys.iter().all(|y| *y == "0"));
    }

    #[test]
    fn deterministic_and_rejects_empty() {
        assert_eq!(
            rul_chart("a", &engines(1.5)).unwrap(),
            rul_chart("a", &engines(1.5)).unwrap()
        );
        assert!(matches!(rul_chart("a", &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn bar_chart_has_one_bar_per_category_and_panel() {
        let cats: Vec<String> = ["cnn", "vit", "vit_mae"].iter().map(|s| s.to_string()).collect();
        let svg = metric_bars(&cats, &[("RMSE", vec![1.0, 2.0, 3.0]), ("Score", vec![4.0, 5.0, 6.0])]).unwrap();
        assert_eq!(svg.matches("class=\"bar\"").count(), 6);
    }
}
