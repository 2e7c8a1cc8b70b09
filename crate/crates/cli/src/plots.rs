//! PNG figures. Every plot is derived from data also written as CSV, so a
//! missing font only costs the picture.

use std::path::Path;
use std::sync::OnceLock;

use kedmd::run::{PredictSummary, SpectrumSummary};
use kedmd::trainer::TrainHistory;
use plotters::prelude::*;
use plotters::style::{register_font, FontStyle};

const FONT_PATHS: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

/// Registers the first readable font as `sans-serif`, once.
pub fn fonts_available() -> bool {
    static OK: OnceLock<bool> = OnceLock::new();
    *OK.get_or_init(|| {
        let candidates = std::env::var("KEDMD_FONT")
            .into_iter()
            .chain(FONT_PATHS.iter().map(|s| s.to_string()));
        for path in candidates {
            if let Ok(bytes) = std::fs::read(&path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        log::warn!("no usable font found (set KEDMD_FONT); plots are skipped");
        false
    })
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

/// Per-epoch mean losses on a log10 axis.
pub fn loss_curve(path: &Path, history: &TrainHistory) -> Result<(), String> {
    let series = |f: fn(&kedmd::losses::LossReport) -> Option<f64>| -> Vec<(f64, f64)> {
        history
            .epochs
            .iter()
            .filter_map(|e| f(&e.mean).filter(|v| *v > 0.0).map(|v| (e.epoch as f64, v.log10())))
            .collect()
    };
    let total = series(|r| Some(r.total));
    let pred = series(|r| r.pred);
    if total.is_empty() {
        return Ok(());
    }
    let (ylo, yhi) = bounds(total.iter().chain(&pred).map(|p| p.1));
    let xmax = history.epochs.len().max(1) as f64;
    let root = BitMapBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.5..xmax + 0.5, ylo..yhi)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("log10 loss")
        .draw()
        .map_err(err)?;
    chart
        .draw_series(LineSeries::new(total, BLUE.stroke_width(2)))
        .map_err(err)?
        .label("total")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], BLUE));
    if !pred.is_empty() {
        chart
            .draw_series(LineSeries::new(pred, RED))
            .map_err(err)?
            .label("prediction")
            .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], RED));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    root.present().map_err(err)
}

/// Green for small residuals, red for large, on a log scale over the finite range.
fn residual_color(r: Option<f64>, lo: f64, hi: f64) -> RGBColor {
    match r {
        Some(v) if v.is_finite() && v > 0.0 => {
            let t = if hi > lo {
                ((v.log10() - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            RGBColor((40.0 + 200.0 * t) as u8, (180.0 * (1.0 - t)) as u8, 60)
        }
        _ => RGBColor(150, 150, 150),
    }
}

/// Eigenvalues against the unit circle, colored by residual.
pub fn spectrum(path: &Path, s: &SpectrumSummary) -> Result<(), String> {
    let logs: Vec<f64> = s
        .residuals
        .iter()
        .flatten()
        .filter(|v| **v > 0.0)
        .map(|v| v.log10())
        .collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r = s.eigenvalues.iter().map(|l| l.norm()).fold(1.0, f64::max) * 1.1;
    let root = BitMapBackend::new(path, (600, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("spectrum", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(-r..r, -r..r)
        .map_err(err)?;
    chart.configure_mesh().x_desc("Re").y_desc("Im").draw().map_err(err)?;
    chart
        .draw_series(LineSeries::new(
            (0..=360).map(|d| {
                let t = (d as f64).to_radians();
                (t.cos(), t.sin())
            }),
            BLACK.mix(0.4),
        ))
        .map_err(err)?;
    if let Some(overlay) = &s.overlay {
        chart
            .draw_series(
                overlay
                    .iter()
                    .map(|l| Circle::new((l.re, l.im), 7, BLACK.stroke_width(1))),
            )
            .map_err(err)?
            .label("true")
            .legend(|(x, y)| Circle::new((x + 8, y), 5, BLACK.stroke_width(1)));
    }
    chart
        .draw_series(
            s.eigenvalues
                .iter()
                .zip(&s.residuals)
                .map(|(l, res)| Circle::new((l.re, l.im), 4, residual_color(*res, lo, hi).filled())),
        )
        .map_err(err)?;
    if s.overlay.is_some() {
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
    }
    root.present().map_err(err)
}

/// Phase portrait for two-dimensional states, otherwise a space-time heatmap
/// of the first trajectory (truth left, prediction right).
pub fn trajectories(dir: &Path, s: &PredictSummary) -> Result<(), String> {
    let Some(first) = s.trajectories.first() else {
        return Ok(());
    };
    let dim = first.truth[0].len();
    if dim == 2 {
        phase(&dir.join("phase.png"), s)
    } else {
        heatmap(&dir.join("heatmap.png"), first)
    }
}

fn phase(path: &Path, s: &PredictSummary) -> Result<(), String> {
    let shown = &s.trajectories[..s.trajectories.len().min(12)];
    let pred_rows = |t: &kedmd::run::TrajectoryPrediction| -> Vec<(f64, f64)> {
        std::iter::once((t.truth[0][0], t.truth[0][1]))
            .chain((0..t.predicted.nrows()).map(|i| (t.predicted[(i, 0)], t.predicted[(i, 1)])))
            .collect()
    };
    let xs = shown.iter().flat_map(|t| t.truth.iter().map(|x| x[0]));
    let ys = shown.iter().flat_map(|t| t.truth.iter().map(|x| x[1]));
    let (xlo, xhi) = bounds(xs);
    let (ylo, yhi) = bounds(ys);
    let root = BitMapBackend::new(path, (640, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("trajectories (grey: truth, blue: prediction)", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(xlo..xhi, ylo..yhi)
        .map_err(err)?;
    chart.configure_mesh().x_desc("x1").y_desc("x2").draw().map_err(err)?;
    for t in shown {
        chart
            .draw_series(LineSeries::new(
                t.truth.iter().map(|x| (x[0], x[1])),
                RGBColor(160, 160, 160).stroke_width(2),
            ))
            .map_err(err)?;
        let p: Vec<(f64, f64)> = pred_rows(t)
            .into_iter()
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .collect();
        chart.draw_series(LineSeries::new(p.clone(), BLUE)).map_err(err)?;
        chart
            .draw_series(p.into_iter().map(|q| Circle::new(q, 2, BLUE.filled())))
            .map_err(err)?;
    }
    root.present().map_err(err)
}

fn heatmap(path: &Path, t: &kedmd::run::TrajectoryPrediction) -> Result<(), String> {
    let dim = t.truth[0].len();
    let steps = t.truth.len().max(t.predicted.nrows() + 1);
    let pred: Vec<Vec<f64>> = std::iter::once(t.truth[0].clone())
        .chain((0..t.predicted.nrows()).map(|i| (0..dim).map(|j| t.predicted[(i, j)]).collect()))
        .collect();
    let m = t.truth.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let color = |v: f64| -> RGBColor {
        let u = (v / m).clamp(-1.0, 1.0);
        if u >= 0.0 {
            RGBColor(255, (255.0 * (1.0 - u)) as u8, (255.0 * (1.0 - u)) as u8)
        } else {
            RGBColor((255.0 * (1.0 + u)) as u8, (255.0 * (1.0 + u)) as u8, 255)
        }
    };
    let root = BitMapBackend::new(path, (900, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let panels = root.split_evenly((1, 2));
    for (area, (title, rows)) in panels.iter().zip([("truth", &t.truth), ("prediction", &pred)]) {
        let mut chart = ChartBuilder::on(area)
            .caption(title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(32)
            .y_label_area_size(40)
            .build_cartesian_2d(0..dim, 0..steps)
            .map_err(err)?;
        chart
            .configure_mesh()
            .disable_mesh()
            .x_desc("grid")
            .y_desc("step")
            .draw()
            .map_err(err)?;
        chart
            .draw_series(rows.iter().enumerate().flat_map(|(s, row)| {
                row.iter().enumerate().map(move |(j, v)| {
                    let c = if v.is_finite() { color(*v) } else { RGBColor(0, 0, 0) };
                    Rectangle::new([(j, s), (j + 1, s + 1)], c.filled())
                })
            }))
            .map_err(err)?;
    }
    root.present().map_err(err)
}
