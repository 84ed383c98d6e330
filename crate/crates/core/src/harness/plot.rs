//! Minimal deterministic SVG line and point charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::MetricsRow;
use super::sweep::SchemeSummary;
use crate::error::Result;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Lines,
    Markers,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub style: Style,
    pub series: Vec<Series>,
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        if hi - lo > 0.0 {
            (lo, hi)
        } else {
            let d = lo.abs().max(1.0) * 0.05;
            (lo - d, hi + d)
        }
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    (x0, x1, y0, y1)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = bounds(&self.series);
        let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(xv),
                HEIGHT - MARGIN + 15.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                MARGIN - 5.0,
                sy(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| (sx(x), sy(y)))
                .collect();
            match self.style {
                Style::Lines if pts.len() > 1 => {
                    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                        coords.join(" ")
                    );
                }
                _ => {
                    for (x, y) in &pts {
                        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
                    }
                }
            }
            let ly = MARGIN + 12.0 + 14.0 * i as f64;
            let lx = WIDTH - MARGIN - 110.0;
            let _ = writeln!(
                out,
                r#"<rect x="{lx}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
                ly - 9.0,
                lx + 14.0,
                ly,
                escape(&s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn u_key(u: f64) -> u64 {
    u.to_bits()
}

/// Mean training return against step, one line per `U` for `env`.
pub fn training_chart(rows: &[MetricsRow], env: &str) -> Chart {
    // (U, step) -> returns across seeds
    let mut groups: BTreeMap<u64, (f64, BTreeMap<u64, Vec<f64>>)> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.env == env) {
        let entry = groups
            .entry(u_key(row.uncertainty))
            .or_insert((row.uncertainty, BTreeMap::new()));
        if let Some(r) = row.r_train {
            entry.1.entry(row.step).or_default().push(r);
        }
    }
    let mut series: Vec<Series> = groups
        .into_values()
        .map(|(u, steps)| Series {
            label: format!("U = {u}"),
            points: steps
                .into_iter()
                .map(|(step, rs)| (step as f64, rs.iter().sum::<f64>() / rs.len() as f64))
                .collect(),
        })
        .collect();
    series.sort_by(|a, b| a.label.cmp(&b.label));
    Chart {
        title: format!("Training return ({env})"),
        x_label: "environment steps".into(),
        y_label: "mean episode return".into(),
        style: Style::Lines,
        series,
    }
}

/// Mean posterior uncertainty per configured `U`, one marker set per env.
pub fn pu_chart(rows: &[MetricsRow]) -> Chart {
    let mut groups: BTreeMap<&str, BTreeMap<u64, (f64, Vec<f64>)>> = BTreeMap::new();
    for row in rows {
        if let Some(pu) = row.pu {
            groups
                .entry(row.env.as_str())
                .or_default()
                .entry(u_key(row.uncertainty))
                .or_insert((row.uncertainty, Vec::new()))
                .1
                .push(pu);
        }
    }
    let series = groups
        .into_iter()
        .map(|(env, by_u)| Series {
            label: env.to_string(),
            points: by_u
                .into_values()
                .map(|(u, pus)| (u, pus.iter().sum::<f64>() / pus.len() as f64))
                .collect(),
        })
        .collect();
    Chart {
        title: "Posterior ratio uncertainty".into(),
        x_label: "ratio uncertainty U".into(),
        y_label: "mean PU".into(),
        style: Style::Markers,
        series,
    }
}

/// Mean test return across seeds per `U`, one marker set per env.
pub fn rtest_chart(summary: &[SchemeSummary]) -> Chart {
    let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for s in summary {
        if let Some(r) = s.r_test_mean {
            groups.entry(s.env.as_str()).or_default().push((s.uncertainty, r));
        }
    }
    let series = groups
        .into_iter()
        .map(|(env, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                label: env.to_string(),
                points,
            }
        })
        .collect();
    Chart {
        title: "Test return".into(),
        x_label: "ratio uncertainty U".into(),
        y_label: "mean R_test".into(),
        style: Style::Markers,
        series,
    }
}

/// Writes `training_<env>.svg` per env in `metrics`, `pu_vs_u.svg` and
/// `rtest_vs_u.svg` into `out_dir`.
pub fn emit_plots(metrics: &[MetricsRow], summary: Option<&[SchemeSummary]>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut envs: Vec<&str> = metrics.iter().map(|r| r.env.as_str()).collect();
    envs.sort_unstable();
    envs.dedup();
    let mut charts: Vec<(String, Chart)> = envs
        .into_iter()
        .map(|env| (format!("training_{env}.svg"), training_chart(metrics, env)))
        .collect();
    charts.push(("pu_vs_u.svg".into(), pu_chart(metrics)));
    charts.push(("rtest_vs_u.svg".into(), rtest_chart(summary.unwrap_or(&[]))));
    let mut written = Vec::with_capacity(charts.len());
    for (name, chart) in charts {
        let path = out_dir.join(name);
        std::fs::write(&path, chart.to_svg())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(env: &str, u: f64, seed: u64, step: u64, r: Option<f64>, pu: Option<f64>) -> MetricsRow {
        MetricsRow {
            env: env.into(),
            seed,
            step,
            update: 0,
            r_train: r,
            episodes: 1,
            threshold: 0.0,
            uncertainty: u,
            ranking_len: 0,
            low_count: 0,
            pu,
            explore_fraction: 1.0,
            log_std: 0.0,
            surrogate: 0.0,
            value_loss: 0.0,
            mean_ratio: 1.0,
            clip_fraction: 0.0,
        }
    }

    #[test]
    fn training_chart_averages_seeds() {
        let rows = vec![
            row("lqr", 0.9, 0, 100, Some(-4.0), None),
            row("lqr", 0.9, 1, 100, Some(-2.0), None),
            row("lqr", 1.0, 0, 100, None, None),
            row("pendulum", 0.9, 0, 100, Some(-1.0), None),
        ];
        let chart = training_chart(&rows, "lqr");
        assert_eq!(chart.series.len(), 2);
        assert_eq!(chart.series[0].points, vec![(100.0, -3.0)]);
        assert!(chart.series[1].points.is_empty());
    }

    #[test]
    fn empty_inputs_give_empty_axes() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plots(&[], None, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        for f in files {
            let svg = std::fs::read_to_string(f).unwrap();
            assert!(svg.starts_with("<svg"));
            assert!(!svg.contains("polyline") && !svg.contains("circle"));
        }
    }

    #[test]
    fn output_is_deterministic() {
        let rows = vec![
            row("lqr", 0.9, 0, 100, Some(-4.0), Some(0.9)),
            row("lqr", 0.9, 0, 200, Some(-3.0), Some(0.85)),
            row("lqr", 0.5, 0, 100, Some(-5.0), Some(0.5)),
        ];
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = emit_plots(&rows, None, a.path()).unwrap();
        let fb = emit_plots(&rows.iter().rev().cloned().collect::<Vec<_>>(), None, b.path()).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let pu = pu_chart(&rows);
        assert_eq!(pu.series[0].points, vec![(0.5, 0.5), (0.9, 0.875)]);
    }
}
