//! SVG charts: loss curves, per-context-length scores and α sweeps.

use std::path::Path;

use anyhow::{anyhow, Result};
use dimt_core::metrics::report::EvalReport;
use plotters::prelude::*;

use crate::runner::{steps, validations, LogRecord, VariantRow};

fn plot_err<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e}")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo.min(0.0), hi + pad)
}

/// Total, alignment and translation losses per step, plus validation BLEU
/// on a second panel.
pub fn loss_curve(log: &[LogRecord], path: &Path) -> Result<()> {
    let st = steps(log);
    let va = validations(log);
    let root = SVGBackend::new(path, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (top, bottom) = root.split_vertically(360);
    let max_step = st.iter().map(|r| r.step).chain(va.iter().map(|r| r.step)).max().unwrap_or(1).max(1) as f64;

    let (lo, hi) = bounds(st.iter().flat_map(|r| [r.total, r.align, r.trans]));
    let mut chart = ChartBuilder::on(&top)
        .caption("training loss", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..max_step, lo..hi)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("step").y_desc("loss").draw().map_err(plot_err)?;
    let series: [(&str, RGBColor, fn(&dimt_core::training::StepRecord) -> f64); 3] =
        [("total", BLACK, |r| r.total), ("align", BLUE, |r| r.align), ("trans", RED, |r| r.trans)];
    for (name, color, f) in series {
        chart
            .draw_series(LineSeries::new(st.iter().map(|r| (r.step as f64, f(r))), color))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;

    let (_, bhi) = bounds(va.iter().map(|r| r.bleu));
    let mut chart = ChartBuilder::on(&bottom)
        .caption("validation BLEU", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..max_step, 0.0..bhi.max(1.0))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("step").y_desc("BLEU").draw().map_err(plot_err)?;
    chart.draw_series(LineSeries::new(va.iter().map(|r| (r.step as f64, r.bleu)), GREEN)).map_err(plot_err)?;
    chart.draw_series(va.iter().map(|r| Circle::new((r.step as f64, r.bleu), 3, GREEN.filled()))).map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// BLEU per context-length bucket. Empty buckets are drawn as zero-height
/// bars labelled with their count.
pub fn context_bars(report: &EvalReport, path: &Path) -> Result<()> {
    let buckets: Vec<_> = report.slices.iter().filter(|s| s.name.starts_with("context")).collect();
    let root = SVGBackend::new(path, (800, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = buckets.len().max(1);
    let (_, hi) = bounds(buckets.iter().filter_map(|s| s.scores.map(|x| x.bleu)));
    let mut chart = ChartBuilder::on(&root)
        .caption("BLEU by context length", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d((0..n).into_segmented(), 0.0..hi.max(1.0))
        .map_err(plot_err)?;
    let names: Vec<String> = buckets.iter().map(|s| format!("{} (n={})", s.name.trim_start_matches("context "), s.count)).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) | SegmentValue::Exact(i) => names.get(*i).cloned().unwrap_or_default(),
            SegmentValue::Last => String::new(),
        })
        .y_desc("BLEU")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(buckets.iter().enumerate().map(|(i, s)| {
            let v = s.scores.map_or(0.0, |x| x.bleu);
            Rectangle::new([(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), v)], BLUE.mix(0.6).filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Test BLEU and BLEU-PT against α; failed runs are left out.
pub fn alpha_sweep(rows: &[VariantRow], path: &Path) -> Result<()> {
    let pts: Vec<(f64, f64, f64)> = rows.iter().filter_map(|r| Some((r.alpha, r.bleu?, r.bleu_pt?))).collect();
    let root = SVGBackend::new(path, (800, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (amin, amax) = bounds(pts.iter().map(|p| p.0));
    let (_, hi) = bounds(pts.iter().flat_map(|p| [p.1, p.2]));
    let mut chart = ChartBuilder::on(&root)
        .caption("α sweep", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(amin..amax, 0.0..hi.max(1.0))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("α").y_desc("BLEU").draw().map_err(plot_err)?;
    let series: [(&str, RGBColor, fn(&(f64, f64, f64)) -> f64); 2] = [("BLEU", BLUE, |p| p.1), ("BLEU-PT", RED, |p| p.2)];
    for (name, color, f) in series {
        chart
            .draw_series(LineSeries::new(pts.iter().map(|p| (p.0, f(p))), color))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
        chart.draw_series(pts.iter().map(|p| Circle::new((p.0, f(p)), 3, color.filled()))).map_err(plot_err)?;
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
