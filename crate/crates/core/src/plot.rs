//! Minimal static SVG charts rendered from the campaign CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::campaign::{read_numeric_csv, NumericTable};
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| &s.points).filter(|(x, y)| x.is_finite() && y.is_finite());
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
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    (x0, x1, y0, y1)
}

fn frame(svg: &mut String, title: &str, xlabel: &str, ylabel: &str, b: (f64, f64, f64, f64)) {
    let (x0, x1, y0, y1) = b;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 16.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, x, y, anchor) in [
        (x0, PAD, H - PAD + 16.0, "start"),
        (x1, W - PAD, H - PAD + 16.0, "end"),
        (y0, PAD - 4.0, H - PAD, "end"),
        (y1, PAD - 4.0, PAD + 4.0, "end"),
    ] {
        let _ = writeln!(svg, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#, tick(v));
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(svg: &mut String, labels: &[&str]) {
    for (i, l) in labels.iter().enumerate() {
        let y = PAD + 14.0 * i as f64;
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{c}"/><text x="{}" y="{}">{l}</text>"#,
            W - PAD - 110.0,
            y - 9.0,
            W - PAD - 96.0,
            y
        );
    }
}

pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let b = bounds(series);
    let (x0, x1, y0, y1) = b;
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut svg = String::new();
    frame(&mut svg, title, xlabel, ylabel, b);
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            pts.join(" ")
        );
    }
    legend(&mut svg, &series.iter().map(|s| s.label.as_str()).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bars; every series shares the x categories of its points.
pub fn bar_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let (x0, x1, _, y1) = bounds(series);
    let (x0, x1, y0) = (x0 - 0.5, x1 + 0.5, 0.0);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut svg = String::new();
    frame(&mut svg, title, xlabel, ylabel, (x0, x1, y0, y1));
    let slot = (sx(1.0) - sx(0.0)) * 0.8 / series.len().max(1) as f64;
    for (i, s) in series.iter().enumerate() {
        for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let left = sx(x) - 0.4 * (sx(1.0) - sx(0.0)) + slot * i as f64;
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                left,
                sy(y),
                slot,
                sy(0.0) - sy(y),
                COLORS[i % COLORS.len()]
            );
        }
    }
    legend(&mut svg, &series.iter().map(|s| s.label.as_str()).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    svg
}

fn read_table(path: &Path) -> Result<NumericTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_numeric_csv(&text)
}

fn write_svg(path: &Path, svg: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Render the calibration figure from a `calibration.csv`.
pub fn render_calibration(csv_path: &Path, out_dir: &Path) -> Result<()> {
    let t = read_table(csv_path)?;
    let col = |n: &str| t.column(n).ok_or_else(|| Error::parse("calibration csv", format!("missing column {n}")));
    let gamma = col("gamma")?;
    let pair = |ys: Vec<f64>| gamma.iter().copied().zip(ys).collect::<Vec<_>>();
    let counts = vec![
        Series { label: "no DP".into(), points: pair(col("outliers_nodp")?) },
        Series { label: "DP".into(), points: pair(col("outliers_dp")?) },
        Series { label: "attack".into(), points: pair(col("outliers_attack")?) },
    ];
    write_svg(
        &out_dir.join("calibration_outliers.svg"),
        &line_chart("Detected outliers", "gamma", "mean outliers", &counts),
    )?;
    let rmse = vec![Series { label: "RMSE".into(), points: pair(col("rmse")?) }];
    write_svg(&out_dir.join("calibration_rmse.svg"), &line_chart("Attack RMSE", "gamma", "RMSE", &rmse))
}

/// Render every figure whose source CSV exists under a campaign directory.
pub fn render_dir(dir: &Path) -> Result<()> {
    let summary = dir.join("summary");
    let plots = dir.join("plots");
    let mut ratios: Vec<(String, NumericTable)> = Vec::new();
    if summary.is_dir() {
        let mut entries: Vec<_> = fs::read_dir(&summary)
            .map_err(|e| Error::io(&summary, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("ratio_") && n.ends_with(".csv"))
            })
            .collect();
        entries.sort();
        for p in entries {
            let label = p.file_stem().and_then(|s| s.to_str()).unwrap_or("").trim_start_matches("ratio_");
            ratios.push((format!("{label} attackers"), read_table(&p)?));
        }
    }
    for (file, column, title, ylabel) in [
        ("steps.svg", "steps_mean", "Average steps to goal", "steps"),
        ("reward.svg", "reward_mean", "Average reward", "reward"),
        ("delta_q.svg", "delta_q_mean", "Distance to reference Q", "mean |Q - Q*|"),
    ] {
        if ratios.is_empty() {
            break;
        }
        let series: Vec<Series> = ratios
            .iter()
            .filter_map(|(label, t)| {
                let x = t.column("episode")?;
                let y = t.column(column)?;
                Some(Series { label: label.clone(), points: x.into_iter().zip(y).collect() })
            })
            .collect();
        write_svg(&plots.join(file), &line_chart(title, "episode", ylabel, &series))?;
    }
    let hist = summary.join("gamma_hist.csv");
    if hist.is_file() {
        let t = read_table(&hist)?;
        let mut by_ratio: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
        for r in &t.rows {
            match by_ratio.iter_mut().find(|(k, _)| *k == r[0]) {
                Some((_, pts)) => pts.push((r[1], r[2])),
                None => by_ratio.push((r[0], vec![(r[1], r[2])])),
            }
        }
        let series: Vec<Series> = by_ratio
            .into_iter()
            .map(|(k, points)| Series { label: format!("{k} attackers"), points })
            .collect();
        write_svg(&plots.join("gamma_hist.svg"), &bar_chart("Poisoning degree", "gamma", "count", &series))?;
    }
    let cal = dir.join("calibration.csv");
    if cal.is_file() {
        render_calibration(&cal, &plots)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let s = vec![Series { label: "a".into(), points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN)] }];
        let svg = line_chart("t", "x", "y", &s);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        let bars = bar_chart("t", "x", "y", &s);
        assert_eq!(bars.matches("<rect").count(), 1 + 2 + 1);
        // nothing to plot still renders a frame
        assert!(line_chart("t", "x", "y", &[]).contains("</svg>"));
    }

    #[test]
    fn render_dir_reads_campaign_layout() {
        let dir = tempfile::tempdir().unwrap();
        let summary = dir.path().join("summary");
        fs::create_dir_all(&summary).unwrap();
        fs::write(summary.join("ratio_0.csv"), "episode,steps_mean,reward_mean,delta_q_mean\n0,5,1,2\n1,4,1,1\n").unwrap();
        fs::write(summary.join("gamma_hist.csv"), "ratio,gamma,count\n0.2,1,10\n0.2,2,3\n").unwrap();
        render_dir(dir.path()).unwrap();
        for f in ["steps.svg", "reward.svg", "delta_q.svg", "gamma_hist.svg"] {
            assert!(dir.path().join("plots").join(f).is_file(), "{f}");
        }
    }
}
