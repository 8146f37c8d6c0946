use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use super::{EstimatorKind, ResultTable};
use crate::error::{input, Error, Result};
use crate::quantizer::MAX_BITS;

/// Trial-mean NMSE of one `(bits, estimator, snr)` cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub bits: u32,
    pub estimator: EstimatorKind,
    pub snr_db: f64,
    pub mean_nmse: f64,
    /// Trials that contributed; failed trials are left out.
    pub count: usize,
}

impl SeriesPoint {
    pub fn nmse_db(&self) -> f64 {
        10.0 * self.mean_nmse.log10()
    }
}

/// Averages NMSE over trials, ordered by bits, estimator, then SNR.
pub fn aggregate(table: &ResultTable) -> Vec<SeriesPoint> {
    let mut cells: BTreeMap<(u32, EstimatorKind, u64), (f64, f64, usize)> = BTreeMap::new();
    for r in table.rows.iter().filter(|r| r.nmse.is_finite()) {
        // Order-preserving key for finite floats.
        let bits = r.snr_db.to_bits();
        let key = if r.snr_db >= 0.0 { bits | 1 << 63 } else { !bits };
        let cell = cells.entry((r.bits, r.estimator, key)).or_insert((r.snr_db, 0.0, 0));
        cell.1 += r.nmse;
        cell.2 += 1;
    }
    cells
        .into_iter()
        .map(|((bits, estimator, _), (snr_db, sum, count))| SeriesPoint {
            bits,
            estimator,
            snr_db,
            mean_nmse: sum / count as f64,
            count,
        })
        .collect()
}

const COLORS: [RGBColor; 3] = [RGBColor(200, 30, 30), RGBColor(30, 80, 200), RGBColor(20, 140, 60)];

/// Draws NMSE (dB) against SNR (dB), one panel per bit depth and one curve per
/// estimator, to an SVG file. Returns the plotted points.
pub fn emit_plot(table: &ResultTable, path: &Path) -> Result<Vec<SeriesPoint>> {
    let points = aggregate(table);
    if table.rows.is_empty() || points.is_empty() {
        return input("nothing to plot");
    }
    let mut bits: Vec<u32> = points.iter().map(|p| p.bits).collect();
    bits.dedup();
    let cols = bits.len().min(2);
    let nrows = bits.len().div_ceil(cols);

    let (x_min, x_max) = bounds(points.iter().map(|p| p.snr_db));
    let (y_min, y_max) = bounds(points.iter().map(|p| p.nmse_db()).filter(|v| v.is_finite()));

    let draw_err = |e: Box<dyn std::error::Error>| Error::Input(format!("plot: {e}"));
    let root = SVGBackend::new(path, (480 * cols as u32, 360 * nrows as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(e.into()))?;
    let panels = root.split_evenly((nrows, cols));
    for (panel, &b) in panels.iter().zip(&bits) {
        let caption = if b == MAX_BITS {
            format!("B = {b} (unquantized reference)")
        } else {
            format!("B = {b}")
        };
        let mut chart = ChartBuilder::on(panel)
            .caption(caption, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(35)
            .y_label_area_size(50)
            .build_cartesian_2d(x_min..x_max, y_min..y_max)
            .map_err(|e| draw_err(e.into()))?;
        chart
            .configure_mesh()
            .x_desc("SNR (dB)")
            .y_desc("NMSE (dB)")
            .draw()
            .map_err(|e| draw_err(e.into()))?;
        let mut kinds: Vec<EstimatorKind> = points.iter().filter(|p| p.bits == b).map(|p| p.estimator).collect();
        kinds.dedup();
        for kind in kinds {
            let color = COLORS[EstimatorKind::ALL.iter().position(|k| *k == kind).unwrap_or(0) % COLORS.len()];
            let series: Vec<(f64, f64)> = points
                .iter()
                .filter(|p| p.bits == b && p.estimator == kind)
                .map(|p| (p.snr_db, p.nmse_db()))
                .collect();
            chart
                .draw_series(LineSeries::new(series.clone(), color.stroke_width(2)))
                .map_err(|e| draw_err(e.into()))?
                .label(kind.name())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
            chart
                .draw_series(series.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(|e| draw_err(e.into()))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| draw_err(e.into()))?;
    }
    root.present().map_err(|e| draw_err(e.into()))?;
    Ok(points)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(0.5);
    (lo - pad, hi + pad)
}
