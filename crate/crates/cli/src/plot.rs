//! Learning-curve charts from training log CSVs.
//!
//! Logs whose labels agree are treated as seeds of one run: the chart shows
//! their mean as a line and their min/max as a shaded band.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

const X_COLUMN: &str = "samples";
const SKIP: [&str; 3] = ["iteration", "samples", "wall_time"];
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, PartialEq)]
pub struct LogData {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl LogData {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

pub fn read_log(path: &Path) -> Result<LogData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;
    let columns: Vec<String> = rdr
        .headers()
        .with_context(|| format!("{}: line 1: bad header", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    if columns.is_empty() || columns.iter().all(|c| c.is_empty()) {
        bail!("{}: empty log", path.display());
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            anyhow!("{}: line {line}: {e}", path.display())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| anyhow!("{}: line {line}: {e}", path.display()))?;
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: log has no rows", path.display());
    }
    Ok(LogData { columns, rows })
}

/// File stem with a trailing seed marker (`_seed3`, `_s3`, `_3`) removed.
pub fn group_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if let Some((head, tail)) = stem.rsplit_once('_') {
        let digits = tail.trim_start_matches("seed").trim_start_matches('s');
        if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) && !head.is_empty() {
            return head.to_string();
        }
    }
    stem
}

/// Mean and min/max of one statistic across logs, aligned by row and cut
/// to the shortest log.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn band(logs: &[&LogData], column: &str) -> Result<Band> {
    let xs = logs[0].column(X_COLUMN).ok_or_else(|| anyhow!("log has no {X_COLUMN} column"))?;
    let ys: Vec<Vec<f64>> = logs
        .iter()
        .map(|l| l.column(column).ok_or_else(|| anyhow!("log has no {column} column")))
        .collect::<Result<_>>()?;
    let n = ys.iter().map(Vec::len).min().unwrap_or(0).min(xs.len());
    let mut b = Band {
        x: xs[..n].to_vec(),
        mean: Vec::with_capacity(n),
        min: Vec::with_capacity(n),
        max: Vec::with_capacity(n),
    };
    for i in 0..n {
        let col: Vec<f64> = ys.iter().map(|y| y[i]).collect();
        b.mean.push(col.iter().sum::<f64>() / col.len() as f64);
        b.min.push(col.iter().copied().fold(f64::INFINITY, f64::min));
        b.max.push(col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    Ok(b)
}

fn finite_range(v: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = v
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    (lo <= hi).then(|| if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) })
}

/// Renders one statistic as an SVG line chart.
pub fn render_svg(title: &str, series: &[(String, Band)]) -> Option<String> {
    let (w, h, m) = (640.0, 400.0, 56.0);
    let (x0, x1) = finite_range(series.iter().flat_map(|(_, b)| b.x.iter().copied()))?;
    let (y0, y1) = finite_range(series.iter().flat_map(|(_, b)| b.min.iter().chain(&b.max).copied()))?;
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    let _ = writeln!(s, r#"<text x="{m}" y="{}" font-family="sans-serif" font-size="11">{x0:.4e}</text>"#, h - m + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{x1:.4e}</text>"#, w - m, h - m + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">samples</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="11">{y0:.4}</text>"#, h - m);
    let _ = writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="11">{y1:.4}</text>"#, m + 4.0);
    for (k, (label, b)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let ok: Vec<usize> = (0..b.x.len()).filter(|&i| b.mean[i].is_finite() && b.x[i].is_finite()).collect();
        if ok.is_empty() {
            continue;
        }
        if b.min != b.max {
            let mut d = String::new();
            for (j, &i) in ok.iter().enumerate() {
                let _ = write!(d, "{}{:.2} {:.2} ", if j == 0 { "M" } else { "L" }, px(b.x[i]), py(b.max[i]));
            }
            for &i in ok.iter().rev() {
                let _ = write!(d, "L{:.2} {:.2} ", px(b.x[i]), py(b.min[i]));
            }
            let _ = writeln!(s, r#"<path d="{}Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, d);
        }
        let pts: Vec<String> = ok.iter().map(|&i| format!("{:.2},{:.2}", px(b.x[i]), py(b.mean[i]))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{label}</text>"#,
            w - m - 4.0,
            m + 16.0 * (k as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Writes `<out_dir>/<stat>.svg` for every statistic with finite data.
/// Inputs are `(label, path)`; equal labels form one banded series.
pub fn plot_logs(inputs: &[(String, PathBuf)], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        bail!("no logs given");
    }
    let logs: Vec<(String, LogData)> = inputs
        .iter()
        .map(|(l, p)| Ok((l.clone(), read_log(p)?)))
        .collect::<Result<_>>()?;
    let mut labels: Vec<String> = Vec::new();
    for (l, _) in &logs {
        if !labels.contains(l) {
            labels.push(l.clone());
        }
    }
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let stats: Vec<String> = logs[0].1.columns.iter().filter(|c| !SKIP.contains(&c.as_str())).cloned().collect();
    let mut written = Vec::new();
    for stat in &stats {
        let mut series = Vec::new();
        for label in &labels {
            let group: Vec<&LogData> = logs.iter().filter(|(l, _)| l == label).map(|(_, d)| d).collect();
            series.push((label.clone(), band(&group, stat)?));
        }
        if let Some(svg) = render_svg(stat, &series) {
            let path = out_dir.join(format!("{stat}.svg"));
            std::fs::write(&path, svg).with_context(|| format!("cannot write {}", path.display()))?;
            written.push(path);
        }
    }
    Ok(written)
}
