//! Metric-curve reports: a CSV (`method,subset_size,metric`) and a small
//! hand-rolled SVG line plot. Output bytes are a pure function of the
//! curves, so identical inputs produce identical files.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use pointrank_core::eval::{MetricCurve, MetricKind};

/// Validate that all curves share one size grid; returns it.
fn common_sizes(curves: &[MetricCurve]) -> Result<Vec<usize>> {
    let Some(first) = curves.first() else {
        bail!("no curves to report");
    };
    let sizes: Vec<usize> = first.points.iter().map(|&(s, _)| s).collect();
    for c in curves {
        let this: Vec<usize> = c.points.iter().map(|&(s, _)| s).collect();
        if this != sizes {
            bail!(
                "curve {:?} uses size grid {:?}, expected {:?}",
                c.method,
                this,
                sizes
            );
        }
    }
    Ok(sizes)
}

pub fn write_csv(curves: &[MetricCurve], path: &Path) -> Result<()> {
    common_sizes(curves)?;
    let mut out = String::from("method,subset_size,metric\n");
    for c in curves {
        for &(size, value) in &c.points {
            out.push_str(&format!("{},{},{}\n", c.method, size, format_metric(value)));
        }
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn format_metric(v: f64) -> String {
    // enough digits to round-trip the comparisons we make, stable format
    format!("{v:.9}")
}

const COLORS: [(&str, &str); 4] = [
    ("learned", "#d62728"),
    ("random", "#7f7f7f"),
    ("fps", "#1f77b4"),
    ("", "#2ca02c"),
];

fn color_for(method: &str) -> &'static str {
    COLORS
        .iter()
        .find(|(m, _)| *m == method)
        .map(|&(_, c)| c)
        .unwrap_or("#2ca02c")
}

/// Render the curves as an SVG line plot. Subset sizes go on a log-2 x
/// axis; the y axis spans the data range.
pub fn write_svg(curves: &[MetricCurve], kind: MetricKind, path: &Path) -> Result<()> {
    let sizes = common_sizes(curves)?;
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (64.0, 16.0, 24.0, 48.0);

    let xs: Vec<f64> = sizes.iter().map(|&s| (s as f64).log2()).collect();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let x_span = (x_max - x_min).max(1e-9);

    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for c in curves {
        for &(_, v) in &c.points {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if !y_min.is_finite() {
        bail!("curves contain no finite values");
    }
    let pad = ((y_max - y_min) * 0.05).max(1e-9);
    let (y_min, y_max) = (y_min - pad, y_max + pad);
    let y_span = y_max - y_min;

    let px = |lx: f64| ml + (lx - x_min) / x_span * (w - ml - mr);
    let py = |v: f64| h - mb - (v - y_min) / y_span * (h - mt - mb);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        ml,
        h - mb,
        w - mr,
        h - mb
    ));
    svg.push_str(&format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        ml,
        mt,
        ml,
        h - mb
    ));

    for (&size, &lx) in sizes.iter().zip(&xs) {
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            px(lx),
            h - mb + 16.0,
            size
        ));
    }
    for i in 0..=4 {
        let v = y_min + y_span * i as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{:.3}</text>\n",
            ml - 6.0,
            py(v) + 4.0,
            v
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">subset size</text>\n",
        (ml + w - mr) / 2.0,
        h - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        kind.as_str()
    ));

    for (ci, c) in curves.iter().enumerate() {
        let color = color_for(&c.method);
        let pts: Vec<String> = c
            .points
            .iter()
            .zip(&xs)
            .map(|(&(_, v), &lx)| format!("{:.2},{:.2}", px(lx), py(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
            color,
            pts.join(" ")
        ));
        for (&(_, v), &lx) in c.points.iter().zip(&xs) {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                px(lx),
                py(v),
                color
            ));
        }
        let ly = mt + 16.0 * ci as f64;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            w - mr - 110.0,
            ly,
            w - mr - 86.0,
            ly,
            color
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\">{}</text>\n",
            w - mr - 80.0,
            ly + 4.0,
            c.method
        ));
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg).with_context(|| format!("writing {}", path.display()))
}

/// Write both artifacts for one metric.
pub fn curve_report(curves: &[MetricCurve], kind: MetricKind, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_csv(curves, &dir.join(format!("{}.csv", kind.as_str())))?;
    write_svg(curves, kind, &dir.join(format!("{}.svg", kind.as_str())))
}
