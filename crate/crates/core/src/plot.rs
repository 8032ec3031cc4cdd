//! Self-contained SVG line charts of metric series.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::artifacts::read_series;
use crate::diagnostics::{fit_log_log, MetricSeries};
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// Slope label with two decimals; values that round to zero print as `0.00`.
pub fn slope_label(slope: f64) -> String {
    let s = format!("{slope:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            let pad = if log { 0.5 } else { 0.5 * lo.abs().max(1.0) };
            lo -= pad;
            hi += pad;
        }
        Axis { log, lo, hi }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn label(&self, u: f64) -> String {
        let v = self.lo + u * (self.hi - self.lo);
        if self.log {
            format!("{:.3e}", 10f64.powf(v))
        } else {
            format!("{v:.4}")
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one chart with a polyline per series. Log-log axes are used when
/// every sample is positive, and then each series gets a fitted line and
/// its slope in the legend.
pub fn render_svg(title: &str, series: &[MetricSeries]) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidParameter(format!("plot {title}: empty series")));
    }
    let log = series
        .iter()
        .all(|s| s.samples.iter().all(|&(t, v)| t > 0.0 && v > 0.0));
    let xs = Axis::fit(series.iter().flat_map(|s| s.samples.iter().map(|p| p.0)), log);
    let ys = Axis::fit(series.iter().flat_map(|s| s.samples.iter().map(|p| p.1)), log);
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |t: f64| MARGIN_LEFT + xs.unit(t) * pw;
    let py = |v: f64| MARGIN_TOP + (1.0 - ys.unit(v)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="24" font-size="15">{}</text>"#, MARGIN_LEFT, escape(title));
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    for k in 0..=4 {
        let u = k as f64 / 4.0;
        let x = MARGIN_LEFT + u * pw;
        let y = MARGIN_TOP + (1.0 - u) * ph;
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{MARGIN_TOP}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            MARGIN_TOP + ph,
            MARGIN_TOP + ph + 16.0,
            xs.label(u)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            MARGIN_LEFT + pw,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            ys.label(u)
        );
    }
    let axes = if log { "log-log" } else { "linear" };
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t ({axes})</text>"#,
        MARGIN_LEFT + 0.5 * pw,
        HEIGHT - 12.0
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = s
            .samples
            .iter()
            .map(|&(t, v)| format!("{:.2},{:.2}", px(t), py(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let mut legend = match s.n {
            Some(n) => format!("n={n}"),
            None => s.name.clone(),
        };
        if log {
            if let Ok(fit) = fit_log_log(&s.samples) {
                let (t0, t1) = (s.samples[0].0, s.samples[s.len() - 1].0);
                let line = |t: f64| fit.prefactor * t.powf(fit.exponent);
                let _ = writeln!(
                    svg,
                    r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="6 4"/>"#,
                    px(t0),
                    py(line(t0)),
                    px(t1),
                    py(line(t1))
                );
                legend.push_str(&format!(" slope {}", slope_label(fit.exponent)));
            }
        }
        let ly = MARGIN_TOP + 16.0 + 18.0 * k as f64;
        let lx = MARGIN_LEFT + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text class="legend" x="{:.2}" y="{ly:.2}">{}</text>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0,
            lx + 26.0,
            escape(&legend)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Groups metric CSVs by series name, renders one SVG per group into
/// `out_dir` and returns the written paths.
pub fn emit_plots(csv_files: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<String, Vec<MetricSeries>> = BTreeMap::new();
    for path in csv_files {
        let s = read_series(path)?;
        groups.entry(s.name.clone()).or_default().push(s);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(groups.len());
    for (name, mut series) in groups {
        series.sort_by_key(|s| s.n);
        let path = out_dir.join(format!("{name}.svg"));
        std::fs::write(&path, render_svg(&name, &series)?)?;
        written.push(path);
    }
    Ok(written)
}

/// Every metric CSV under a pipeline output directory, sorted.
pub fn find_metric_csvs(out: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for sub in ["ansatz", "runs"] {
        collect_csvs(&out.join(sub), &mut found)?;
    }
    found.sort();
    Ok(found)
}

fn collect_csvs(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_csvs(&path, found)?;
        } else if path.extension().is_some_and(|e| e == "csv") {
            found.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(name: &str, n: Option<u32>, f: impl Fn(f64) -> f64) -> MetricSeries {
        let mut s = MetricSeries::new(name, n, "all");
        for i in 0..40 {
            let t = 0.01 * 1.1f64.powi(i);
            s.push(t, f(t)).unwrap();
        }
        s
    }

    #[test]
    fn constant_series_has_zero_slope() {
        let svg = render_svg("c", &[series("c", None, |_| 3.0)]).unwrap();
        assert!(svg.contains("slope 0.00"), "{svg}");
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn inverse_law_has_unit_slope() {
        let svg = render_svg("u", &[series("u", Some(8), |t| 2.0 / t)]).unwrap();
        assert!(svg.contains("n=8 slope -1.00"));
        assert!(svg.contains("log-log"));
    }

    #[test]
    fn overlay_has_one_polyline_per_n() {
        let set: Vec<MetricSeries> = [8, 16, 32].iter().map(|&n| series("h1", Some(n), move |t| t * n as f64)).collect();
        let svg = render_svg("h1", &set).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        for n in [8, 16, 32] {
            assert!(svg.contains(&format!(">n={n} slope 1.00<")));
        }
    }

    #[test]
    fn signed_series_use_linear_axes() {
        let svg = render_svg("e", &[series("e", None, |t| t - 0.1)]).unwrap();
        assert!(svg.contains("(linear)"));
        assert!(!svg.contains("slope"));
    }

    #[test]
    fn empty_series_is_an_error() {
        assert!(render_svg("x", &[MetricSeries::new("x", None, "all")]).is_err());
        assert!(render_svg("x", &[]).is_err());
    }

    #[test]
    fn emit_groups_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let mut files = Vec::new();
        for n in [8u32, 16] {
            let path = dir.path().join(format!("n{n}/u.csv"));
            crate::artifacts::write_series(&path, &series("u", Some(n), |t| 1.0 / t)).unwrap();
            files.push(path);
        }
        let written = emit_plots(&files, &dir.path().join("plots")).unwrap();
        assert_eq!(written.len(), 1);
        let svg = std::fs::read_to_string(&written[0]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
