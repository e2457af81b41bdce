use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{to_pixels, trajectory_errors, MetricsError};
use crate::geom::{PixelPoint, Resolution};

pub const CSV_HEADER: [&str; 4] = ["id", "ade_px", "fde_px", "fd_px"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub ade_px: f64,
    pub fde_px: f64,
    pub fd_px: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count();
        if n == 0 {
            return Self::default();
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub n: usize,
    pub resolution: [u32; 2],
    pub ade_px: MeanStd,
    pub fde_px: MeanStd,
    pub fd_px: MeanStd,
}

/// Per-trajectory errors of one method, in source pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub resolution: Resolution,
    pub rows: Vec<MetricsRow>,
}

impl MetricsReport {
    /// `ids`, `predictions` and `truths` are aligned; points are normalized.
    pub fn from_predictions(
        method: &str,
        resolution: Resolution,
        ids: &[String],
        predictions: &[Vec<PixelPoint>],
        truths: &[Vec<PixelPoint>],
    ) -> Result<Self, MetricsError> {
        if predictions.len() != truths.len() || ids.len() != truths.len() {
            return Err(MetricsError::LengthMismatch(predictions.len(), truths.len()));
        }
        let rows = ids
            .iter()
            .zip(predictions.iter().zip(truths))
            .map(|(id, (p, t))| {
                let (ade, fde, fd) = trajectory_errors(&to_pixels(p, resolution), &to_pixels(t, resolution))?;
                Ok(MetricsRow {
                    id: id.clone(),
                    ade_px: ade,
                    fde_px: fde,
                    fd_px: fd,
                })
            })
            .collect::<Result<_, MetricsError>>()?;
        Ok(Self {
            method: method.to_string(),
            resolution,
            rows,
        })
    }

    pub fn summary(&self) -> Summary {
        Summary {
            method: self.method.clone(),
            n: self.rows.len(),
            resolution: [self.resolution.width, self.resolution.height],
            ade_px: MeanStd::of(self.rows.iter().map(|r| r.ade_px)),
            fde_px: MeanStd::of(self.rows.iter().map(|r| r.fde_px)),
            fd_px: MeanStd::of(self.rows.iter().map(|r| r.fd_px)),
        }
    }

    pub fn mean_ade(&self) -> f64 {
        self.summary().ade_px.mean
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.serialize((&r.id, r.ade_px, r.fde_px, r.fd_px)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    /// Writes `<stem>.csv` and `<stem>.summary.json` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(), MetricsError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let json = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        std::fs::write(dir.join(format!("{stem}.summary.json")), json + "\n")?;
        Ok(())
    }
}

/// Rows of a per-trajectory metrics CSV. Errors carry 1-based line numbers.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| MetricsError::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(MetricsError::Csv {
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize::<MetricsRow>() {
        let row = rec.map_err(|e| MetricsError::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        for v in [row.ade_px, row.fde_px, row.fd_px] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MetricsError::Csv {
                    line: rows.len() + 2,
                    message: format!("metric value {v} is not a finite nonnegative number"),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}
