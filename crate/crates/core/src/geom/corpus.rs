//! Newline-delimited JSON trajectory corpus.
//!
//! One record per line:
//!
//! ```text
//! {"id":"t0007","scene_id":"s002","source_resolution":[1264,902],
//!  "keyframes":[[0,512,300],[7,530,310],...],
//!  "dense":[[0,512,300,1.0,true],[1,515,301,0.81,false],...]}
//! ```
//!
//! Keyframe and dense coordinates are in source pixels. `dense` and
//! `scene_id` are optional; a missing `dense` is recomputed on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{densify, DenseSample, GeomError, Keyframe, Resolution, Trajectory, CONF_MAX, CONF_MIN};

/// Longest accepted keyframe span, in frames.
pub const MAX_SPAN: i64 = 100_000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("line {line}: {source}")]
    Geom {
        line: usize,
        #[source]
        source: GeomError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub scene_id: String,
    pub source_resolution: [u32; 2],
    pub keyframes: Vec<(i64, f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<Vec<(i64, f64, f64, f64, bool)>>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(t: &Trajectory, with_dense: bool) -> Self {
        let res = t.resolution;
        let px = |p| res.to_pixels(p);
        Self {
            id: t.id.clone(),
            scene_id: t.scene_id.clone(),
            source_resolution: [res.width, res.height],
            keyframes: t
                .keyframes
                .iter()
                .map(|k| {
                    let (x, y) = px(k.point);
                    (k.frame, x, y)
                })
                .collect(),
            dense: with_dense.then(|| {
                t.dense
                    .iter()
                    .map(|d| {
                        let (x, y) = px(d.point);
                        (d.frame, x, y, d.confidence, d.is_keyframe)
                    })
                    .collect()
            }),
        }
    }

    pub fn into_trajectory(self, line: usize) -> Result<Trajectory, CorpusError> {
        let invalid = |message: String| CorpusError::Invalid { line, message };
        let geom = |source| CorpusError::Geom { line, source };
        if self.id.is_empty() {
            return Err(invalid("empty id".into()));
        }
        let [w, h] = self.source_resolution;
        let res = Resolution::new(w, h).map_err(geom)?;
        if self.keyframes.len() < 2 {
            return Err(geom(GeomError::TooFewKnots(self.keyframes.len())));
        }
        let mut keyframes = Vec::with_capacity(self.keyframes.len());
        for (i, &(frame, x, y)) in self.keyframes.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                return Err(geom(GeomError::NonFinite(frame)));
            }
            if !(0.0..=res.x_scale()).contains(&x) || !(0.0..=res.y_scale()).contains(&y) {
                return Err(invalid(format!("keyframe {i} at ({x}, {y}) lies outside the image")));
            }
            if i > 0 {
                let prev = self.keyframes[i - 1].0;
                if frame == prev {
                    return Err(geom(GeomError::DuplicateKnot(frame)));
                }
                if frame < prev {
                    return Err(geom(GeomError::UnsortedKnots(frame)));
                }
            }
            keyframes.push(Keyframe::new(frame, res.from_pixels(x, y)));
        }
        let span = keyframes[keyframes.len() - 1]
            .frame
            .checked_sub(keyframes[0].frame)
            .filter(|s| *s <= MAX_SPAN)
            .ok_or_else(|| invalid(format!("keyframe span exceeds {MAX_SPAN} frames")))?;

        let dense = match self.dense {
            None => densify(&keyframes, res).map_err(geom)?,
            Some(rows) => {
                if rows.len() as i64 != span + 1 {
                    return Err(invalid(format!(
                        "dense has {} samples, expected {}",
                        rows.len(),
                        span + 1
                    )));
                }
                let mut dense = Vec::with_capacity(rows.len());
                let mut kf = keyframes.iter().peekable();
                for (i, (frame, x, y, confidence, is_keyframe)) in rows.into_iter().enumerate() {
                    if frame != keyframes[0].frame + i as i64 {
                        return Err(invalid(format!("dense sample {i} has frame {frame}")));
                    }
                    if !(x.is_finite() && y.is_finite()) || x < 0.0 || y < 0.0 || x > res.x_scale() || y > res.y_scale() {
                        return Err(invalid(format!("dense sample {i} lies outside the image")));
                    }
                    let on_kf = kf.peek().is_some_and(|k| k.frame == frame);
                    if on_kf {
                        kf.next();
                    }
                    let conf_ok = if on_kf {
                        confidence == 1.0
                    } else {
                        (CONF_MIN..=CONF_MAX).contains(&confidence)
                    };
                    if on_kf != is_keyframe || !conf_ok {
                        return Err(invalid(format!("dense sample {i} has inconsistent confidence")));
                    }
                    dense.push(DenseSample {
                        frame,
                        point: res.from_pixels(x, y),
                        confidence,
                        is_keyframe,
                    });
                }
                dense
            }
        };
        Ok(Trajectory {
            id: self.id,
            scene_id: self.scene_id,
            resolution: res,
            keyframes,
            dense,
        })
    }
}

/// Parses a corpus, reporting the first bad record by 1-based line number.
pub fn parse_corpus(text: &str) -> Result<Vec<Trajectory>, CorpusError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let rec: TrajectoryRecord =
            serde_json::from_str(raw).map_err(|source| CorpusError::Json { line, source })?;
        out.push(rec.into_trajectory(line)?);
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<Trajectory>, CorpusError> {
    parse_corpus(&fs::read_to_string(path)?)
}

pub fn write_corpus(path: &Path, trajectories: &[Trajectory], with_dense: bool) -> Result<(), CorpusError> {
    let mut text = String::new();
    for t in trajectories {
        let rec = TrajectoryRecord::from_trajectory(t, with_dense);
        text.push_str(&serde_json::to_string(&rec).map_err(|source| CorpusError::Json { line: 0, source })?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
