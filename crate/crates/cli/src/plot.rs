use std::collections::BTreeMap;

use anyhow::anyhow;
use plotters::prelude::*;
use sprinql::eval::CellResult;
use sprinql::objective::Diagnostics;

const PALETTE: [RGBColor; 7] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(127, 127, 127),
];

/// One row of a results CSV.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
pub struct ScoreRow {
    pub method: String,
    pub env: String,
    pub seed: u64,
    pub score: f64,
}

fn plot_err(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("drawing failed: {e}")
}

fn first_seen(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for it in items {
        if !out.contains(&it) {
            out.push(it);
        }
    }
    out
}

/// Grouped bar chart of mean score per method and environment, with one-standard-deviation
/// whiskers across seeds.
pub fn scores_svg(rows: &[ScoreRow]) -> anyhow::Result<String> {
    if rows.is_empty() {
        return Err(anyhow!("no result rows to plot"));
    }
    let envs = first_seen(rows.iter().map(|r| r.env.clone()));
    let methods = first_seen(rows.iter().map(|r| r.method.clone()));
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let e = envs.iter().position(|x| *x == r.env).unwrap();
        let m = methods.iter().position(|x| *x == r.method).unwrap();
        groups.entry((e, m)).or_default().push(r.score);
    }
    let stats: BTreeMap<(usize, usize), (f64, f64)> = groups
        .into_iter()
        .map(|(k, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (k, (mean, sd))
        })
        .collect();
    let lo = stats.values().map(|(m, s)| m - s).fold(0.0f64, f64::min);
    let hi = stats.values().map(|(m, s)| m + s).fold(100.0f64, f64::max);

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (260 * envs.len() as u32 + 200, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let n_env = envs.len();
        let mut chart = ChartBuilder::on(&root)
            .caption("normalized score by method", ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(30)
            .y_label_area_size(50)
            .right_y_label_area_size(0)
            .build_cartesian_2d(0.0..n_env as f64, lo * 1.05..hi * 1.05)
            .map_err(plot_err)?;
        let env_names = envs.clone();
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n_env * 2 + 1)
            .x_label_formatter(&|x| {
                let centre = x - x.floor();
                if (centre - 0.5).abs() < 1e-6 {
                    env_names.get(x.floor() as usize).cloned().unwrap_or_default()
                } else {
                    String::new()
                }
            })
            .y_desc("score")
            .draw()
            .map_err(plot_err)?;
        let width = 0.8 / methods.len() as f64;
        for (m, name) in methods.iter().enumerate() {
            let color = PALETTE[m % PALETTE.len()];
            let bars: Vec<_> = (0..n_env)
                .filter_map(|e| stats.get(&(e, m)).map(|s| (e, *s)))
                .collect();
            chart
                .draw_series(bars.iter().map(|&(e, (mean, _))| {
                    let x0 = e as f64 + 0.1 + m as f64 * width;
                    Rectangle::new([(x0, 0.0), (x0 + width * 0.9, mean)], color.filled())
                }))
                .map_err(plot_err)?
                .label(name.as_str())
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
            chart
                .draw_series(bars.iter().map(|&(e, (mean, sd))| {
                    let x = e as f64 + 0.1 + (m as f64 + 0.45) * width;
                    PathElement::new(vec![(x, mean - sd), (x, mean + sd)], BLACK.stroke_width(1))
                }))
                .map_err(plot_err)?;
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperRight)
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Line chart of several named `(x, y)` series.
pub fn lines_svg(title: &str, x_desc: &str, y_desc: &str, series: &[(String, Vec<(f64, f64)>)]) -> anyhow::Result<String> {
    let points = series.iter().flat_map(|(_, s)| s.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(anyhow!("no finite points to plot"));
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-9);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(35)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0 - pad..y1 + pad)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc(x_desc)
            .y_desc(y_desc)
            .draw()
            .map_err(plot_err)?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(plot_err)?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 14, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Seed-averaged evaluation curves of the methods that train iteratively on `env`.
pub fn curves_svg(cells: &[CellResult], env: &str) -> anyhow::Result<Option<String>> {
    let mut by_method: BTreeMap<_, Vec<&CellResult>> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.env == env && c.curve.len() > 1) {
        by_method.entry(c.method).or_default().push(c);
    }
    if by_method.is_empty() {
        return Ok(None);
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = by_method
        .into_iter()
        .map(|(m, cs)| {
            let len = cs.iter().map(|c| c.curve.len()).min().unwrap_or(0);
            let pts = (0..len)
                .map(|i| {
                    let y = cs.iter().map(|c| c.curve[i].1).sum::<f64>() / cs.len() as f64;
                    (cs[0].curve[i].0 as f64, y)
                })
                .collect();
            (m.name().to_string(), pts)
        })
        .collect();
    lines_svg(&format!("evaluation score on {env}"), "iteration", "score", &series).map(Some)
}

/// Objective trace and evaluation scores of one training run.
pub fn training_svgs(d: &Diagnostics) -> anyhow::Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    if !d.objective.is_empty() {
        let pts = d.objective.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect();
        out.push((
            "objective.svg".to_string(),
            lines_svg("training objective", "iteration", "objective", &[("objective".into(), pts)])?,
        ));
    }
    if !d.evaluations.is_empty() {
        let pts = d.evaluations.iter().map(|&(i, s)| (i as f64, s)).collect();
        out.push((
            "scores.svg".to_string(),
            lines_svg("evaluation score", "iteration", "score", &[("score".into(), pts)])?,
        ));
    }
    Ok(out)
}

/// Histogram, as a line per level, of the reference reward over each level's transitions.
pub fn reference_levels_svg(levels: &[Vec<f64>], bins: usize) -> anyhow::Result<String> {
    let all = levels.iter().flatten().copied();
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() || bins == 0 {
        return Err(anyhow!("no reference values to plot"));
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let series: Vec<(String, Vec<(f64, f64)>)> = levels
        .iter()
        .enumerate()
        .map(|(l, vals)| {
            let mut counts = vec![0.0; bins];
            for v in vals {
                let k = (((v - lo) / width) as usize).min(bins - 1);
                counts[k] += 1.0;
            }
            let n = vals.len().max(1) as f64;
            let pts = counts
                .iter()
                .enumerate()
                .map(|(k, c)| (lo + (k as f64 + 0.5) * width, c / n))
                .collect();
            (format!("level {}", l + 1), pts)
        })
        .collect();
    lines_svg("reference reward by level", "reference reward", "fraction of transitions", &series)
}
