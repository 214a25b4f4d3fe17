//! Tables and plots derived from estimates and benchmark reports.

use std::fmt::Write as _;

use serde::Serialize;

use crate::entropy::EpochRecord;
use crate::harness::BenchmarkReport;
use crate::infometer::{Comparison, MIEstimate};

/// Pretty JSON with a trailing newline. Field order follows the struct
/// definitions, so equal values give identical bytes.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> csv::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w)?;
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn training_curve_csv(curve: &[EpochRecord]) -> csv::Result<String> {
    csv_string(|w| {
        w.write_record(["epoch", "learning_rate", "mean_bits_per_element"])?;
        for r in curve {
            w.write_record([r.epoch.to_string(), r.learning_rate.to_string(), r.mean_bits_per_element.to_string()])?;
        }
        Ok(())
    })
}

const ESTIMATE_HEADER: [&str; 10] = [
    "label",
    "dataset_id",
    "concat_mode",
    "h_x_bits_per_element",
    "h_y_bits_per_element",
    "h_xy_bits_per_element",
    "i_total_bits",
    "i_bits_per_x_element",
    "i_paper_convention",
    "negative_warning",
];

fn estimate_fields(e: &MIEstimate) -> Vec<String> {
    vec![
        e.dataset_id.clone(),
        e.concat_mode.to_string(),
        e.h_x.bits_per_element.to_string(),
        e.h_y.bits_per_element.to_string(),
        e.h_xy.bits_per_element.to_string(),
        e.i_total_bits.to_string(),
        e.i_bits_per_x_element.to_string(),
        e.i_paper_convention.to_string(),
        e.negative_warning.to_string(),
    ]
}

pub fn estimates_csv(rows: &[(String, MIEstimate)]) -> csv::Result<String> {
    csv_string(|w| {
        w.write_record(ESTIMATE_HEADER)?;
        for (label, e) in rows {
            let mut rec = vec![label.clone()];
            rec.extend(estimate_fields(e));
            w.write_record(rec)?;
        }
        Ok(())
    })
}

pub fn comparison_csv(c: &Comparison) -> csv::Result<String> {
    csv_string(|w| {
        let mut header = vec!["label".to_string(), "dataset_id".to_string()];
        header.extend(c.conventions.iter().map(|k| k.to_string()));
        header.push("delta".into());
        w.write_record(header)?;
        for r in &c.rows {
            let mut rec = vec![r.label.clone(), r.dataset_id.clone()];
            rec.extend(r.values.iter().map(|v| v.to_string()));
            rec.push(r.delta.to_string());
            w.write_record(rec)?;
        }
        Ok(())
    })
}

/// One row per condition, then the overall sign-agreement flag on every row
/// so the table is self-contained.
pub fn benchmark_csv(report: &BenchmarkReport) -> csv::Result<String> {
    let agree = report.all_signs_agree.map(|b| b.to_string()).unwrap_or_default();
    csv_string(|w| {
        w.write_record([
            "condition",
            "parameter",
            "h_x_bits_per_element",
            "h_y_bits_per_element",
            "h_xy_bits_per_element",
            "i_total_bits",
            "i_bits_per_x_element",
            "i_paper_convention",
            "oracle_mi_bits",
            "analytic_mi_bits_per_element",
            "all_signs_agree",
            "error",
        ])?;
        for c in &report.conditions {
            let e = c.estimate.as_ref();
            w.write_record([
                c.label.clone(),
                c.parameter.to_string(),
                opt(e.map(|e| e.h_x.bits_per_element)),
                opt(e.map(|e| e.h_y.bits_per_element)),
                opt(e.map(|e| e.h_xy.bits_per_element)),
                opt(e.map(|e| e.i_total_bits)),
                opt(e.map(|e| e.i_bits_per_x_element)),
                opt(e.map(|e| e.i_paper_convention)),
                opt(c.oracle_mi_bits),
                opt(c.analytic_mi_bits_per_element),
                agree.clone(),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        Ok(())
    })
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// A minimal line chart with axes, tick labels and a legend.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let pts = || series.iter().flat_map(|s| s.points.iter().copied()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        l = left,
        t = top,
        b = h - bottom,
        r = w - right
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#, px(fx), h - bottom + 16.0, tick(fx));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#, left - 6.0, py(fy) + 4.0, tick(fy));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#, (left + w - right) / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        escape(y_label),
        y = (top + h - bottom) / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .enumerate()
            .map(|(i, &(x, y))| format!("{}{:.1} {:.1}", if i == 0 { "M" } else { "L" }, px(x), py(y)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(s, r#"<path d="{}" stroke="{color}" stroke-width="2" fill="none"/>"#, path.join(" "));
        }
        for &(x, y) in ser.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = top + 14.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/>"#, w - right - 150.0, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#, w - right - 132.0, ly, escape(ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// InfoMeter and oracle MI against the condition parameter.
pub fn benchmark_svg(report: &BenchmarkReport) -> String {
    let mut rows: Vec<_> = report.conditions.iter().collect();
    rows.sort_by(|a, b| a.parameter.total_cmp(&b.parameter));
    let info = Series {
        name: "InfoMeter (bits / X element)",
        points: rows
            .iter()
            .filter_map(|c| c.estimate.as_ref().map(|e| (c.parameter, e.i_bits_per_x_element)))
            .collect(),
    };
    let oracle = Series {
        name: "binned plug-in oracle",
        points: rows.iter().filter_map(|c| c.oracle_mi_bits.map(|o| (c.parameter, o))).collect(),
    };
    let analytic = Series {
        name: "analytic",
        points: rows
            .iter()
            .filter_map(|c| c.analytic_mi_bits_per_element.map(|a| (c.parameter, a)))
            .collect(),
    };
    line_plot_svg("MI by condition", "condition parameter", "bits", &[info, oracle, analytic])
}

pub fn training_curve_svg(curves: &[(&str, &[EpochRecord])]) -> String {
    let series: Vec<Series> = curves
        .iter()
        .map(|(name, c)| Series {
            name,
            points: c.iter().map(|r| (r.epoch as f64, r.mean_bits_per_element)).collect(),
        })
        .collect();
    line_plot_svg("Training loss", "epoch", "bits per element", &series)
}
