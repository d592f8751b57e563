//! Side-by-side view of finished runs: one CSV aligned by step and one SVG
//! with loss, weight ℓ2 and positive-momentum ℓ2 panels.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{HarnessError, Result};
use crate::train::{MetricRecord, CSV_HEADER, METRICS_FILE};

pub const COMBINED_FILE: &str = "combined.csv";
pub const CHART_FILE: &str = "curves.svg";
const METRICS: [&str; 5] = ["loss", "eval_metric", "weight_l2", "momentum_l2_pos", "lr"];

/// One finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub label: String,
    pub records: Vec<MetricRecord>,
}

/// `path` is a run directory or a metrics CSV.
fn metrics_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(METRICS_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = metrics_path(path);
    let mut reader = csv::Reader::from_path(&file).map_err(|e| HarnessError::Compare(format!("{}: {e}", file.display())))?;
    let header = reader.headers().map_err(|e| HarnessError::Compare(e.to_string()))?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(HarnessError::Compare(format!("{}: unexpected header `{header}`", file.display())));
    }
    let parse = |row: &csv::StringRecord, i: usize| -> Result<f64> {
        row[i].parse().map_err(|_| HarnessError::Compare(format!("{}: bad number `{}`", file.display(), &row[i])))
    };
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| HarnessError::Compare(format!("{}: {e}", file.display())))?;
        let step = row[0].parse().map_err(|_| HarnessError::Compare(format!("{}: bad step `{}`", file.display(), &row[0])))?;
        out.push(MetricRecord {
            step,
            loss: parse(&row, 1)?,
            eval_metric: parse(&row, 2)?,
            weight_l2: parse(&row, 3)?,
            momentum_l2_pos: parse(&row, 4)?,
            lr: parse(&row, 5)?,
        });
    }
    if out.is_empty() {
        return Err(HarnessError::Compare(format!("{}: no metric rows", file.display())));
    }
    Ok(out)
}

/// Labels from directory (or file stem) names, made unique with an index.
pub fn load_runs(paths: &[PathBuf]) -> Result<Vec<Run>> {
    let mut seen = HashSet::new();
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let base = if p.is_dir() { p.file_name() } else { p.parent().and_then(Path::file_name) };
            let mut label = base.map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("run{i}"));
            if !seen.insert(label.clone()) {
                label = format!("{label}#{i}");
                seen.insert(label.clone());
            }
            Ok(Run { label, records: read_metrics(p)? })
        })
        .collect()
}

fn value(r: &MetricRecord, metric: &str) -> f64 {
    match metric {
        "loss" => r.loss,
        "eval_metric" => r.eval_metric,
        "weight_l2" => r.weight_l2,
        "momentum_l2_pos" => r.momentum_l2_pos,
        _ => r.lr,
    }
}

/// Combined table; every run must log the same steps.
pub fn combined_csv(runs: &[Run]) -> Result<String> {
    if runs.len() < 2 {
        return Err(HarnessError::Compare(format!("need at least two runs, got {}", runs.len())));
    }
    let steps: Vec<u64> = runs[0].records.iter().map(|r| r.step).collect();
    for run in &runs[1..] {
        let other: Vec<u64> = run.records.iter().map(|r| r.step).collect();
        if other != steps {
            return Err(HarnessError::Compare(format!(
                "run `{}` logs steps {:?}.. but `{}` logs {:?}..; logging intervals differ",
                run.label,
                &other[..other.len().min(4)],
                runs[0].label,
                &steps[..steps.len().min(4)]
            )));
        }
    }
    let mut out = String::from("step");
    for run in runs {
        for m in METRICS {
            out.push_str(&format!(",{}.{m}", run.label));
        }
    }
    out.push('\n');
    for (i, step) in steps.iter().enumerate() {
        out.push_str(&step.to_string());
        for run in runs {
            for m in METRICS {
                out.push_str(&format!(",{:.16e}", value(&run.records[i], m)));
            }
        }
        out.push('\n');
    }
    Ok(out)
}

fn chart_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Compare(format!("chart: {e}"))
}

/// Three stacked line charts against step.
pub fn render_chart(runs: &[Run], path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (900, 1050)).into_drawing_area();
    root.fill(&WHITE).map_err(chart_err)?;
    let panels = root.split_evenly((3, 1));
    for (area, metric) in panels.iter().zip(["loss", "weight_l2", "momentum_l2_pos"]) {
        let x_max = runs.iter().flat_map(|r| r.records.iter().map(|m| m.step)).max().unwrap_or(1).max(1);
        let ys = runs.iter().flat_map(|r| r.records.iter().map(|m| value(m, metric)));
        let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * hi.abs().max(1.0) };
        let mut chart = ChartBuilder::on(area)
            .caption(metric, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(30)
            .y_label_area_size(70)
            .build_cartesian_2d(0u64..x_max, (lo - pad)..(hi + pad))
            .map_err(chart_err)?;
        chart.configure_mesh().x_desc("step").draw().map_err(chart_err)?;
        for (i, run) in runs.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(run.records.iter().map(|m| (m.step, value(m, metric))), color.stroke_width(2)))
                .map_err(chart_err)?
                .label(run.label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        }
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(chart_err)?;
    }
    root.present().map_err(chart_err)?;
    Ok(())
}

/// Reads `paths`, writes `combined.csv` and `curves.svg` into `out`.
pub fn compare(paths: &[PathBuf], out: &Path) -> Result<(PathBuf, PathBuf)> {
    let runs = load_runs(paths)?;
    let table = combined_csv(&runs)?;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let (csv_path, svg_path) = (out.join(COMBINED_FILE), out.join(CHART_FILE));
    fs::write(&csv_path, table).map_err(|e| HarnessError::io(&csv_path, e))?;
    render_chart(&runs, &svg_path)?;
    Ok((csv_path, svg_path))
}
