//! Displacement and shape errors, paired significance tests and value diagnostics.

mod qcurve;
mod report;
mod wilcoxon;

use thiserror::Error;

use crate::geom::{PixelPoint, Resolution};

pub use qcurve::{conservative_fraction, qcurve, QCurve, QPoint};
pub use report::{parse_metrics_csv, MetricsReport, MetricsRow, Summary};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult, EXACT_MAX_N, MIN_PAIRS};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("{0} nonzero paired differences, need at least {MIN_PAIRS}")]
    TooFewPairs(usize),
    #[error("all paired differences are zero")]
    NoNonzeroDifferences,
    #[error("metrics csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Encoder(#[from] crate::encoders::EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Point = (f64, f64);

fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn check_paired(pred: &[Point], gt: &[Point]) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    Ok(())
}

/// Normalized points in source pixels, each axis scaled separately.
pub fn to_pixels(points: &[PixelPoint], resolution: Resolution) -> Vec<Point> {
    points.iter().map(|p| resolution.to_pixels(*p)).collect()
}

/// Mean pointwise Euclidean distance.
pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64, MetricsError> {
    check_paired(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(a, b)| dist(*a, *b)).sum::<f64>() / pred.len() as f64)
}

/// Distance between the final points.
pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64, MetricsError> {
    check_paired(pred, gt)?;
    Ok(dist(pred[pred.len() - 1], gt[gt.len() - 1]))
}

/// Discrete Fréchet distance: the minimum over monotone couplings of the
/// largest coupled distance.
pub fn frechet(a: &[Point], b: &[Point]) -> Result<f64, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let m = b.len();
    let mut prev = vec![0.0f64; m];
    let mut cur = vec![0.0; m];
    for (i, &p) in a.iter().enumerate() {
        for (j, &q) in b.iter().enumerate() {
            let d = dist(p, q);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => cur[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

/// ADE, FDE and Fréchet distance of one prediction, in the units of the inputs.
pub fn trajectory_errors(pred: &[Point], gt: &[Point]) -> Result<(f64, f64, f64), MetricsError> {
    Ok((ade(pred, gt)?, fde(pred, gt)?, frechet(pred, gt)?))
}
