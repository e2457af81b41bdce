//! Trajectory data model and keyframe densification.
//!
//! Coordinates are normalised to `[0, 1]` by `(width − 1, height − 1)` of
//! the source resolution, so pixel `0` maps to `0.0` and the last pixel
//! column maps to `1.0`.

mod corpus;
mod densify;
mod spline;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{parse_corpus, read_corpus, write_corpus, CorpusError, TrajectoryRecord};
pub use densify::{assign_confidence, densify, TrajectorySpline, CONF_MAX, CONF_MIN};
pub use spline::SplineModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("spline needs at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("two knots share frame {0}")]
    DuplicateKnot(i64),
    #[error("knot frames must increase (frame {0} out of order)")]
    UnsortedKnots(i64),
    #[error("non-finite value at frame {0}")]
    NonFinite(i64),
    #[error("frame {frame} outside keyframe span [{first}, {last}]")]
    OutOfRange { frame: i64, first: i64, last: i64 },
    #[error("invalid resolution {0}×{1}")]
    InvalidResolution(u32, u32),
}

/// Normalised image position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn clipped(self) -> Self {
        Self {
            x: self.x.clamp(0.0, 1.0),
            y: self.y.clamp(0.0, 1.0),
        }
    }

    pub fn distance(self, other: Self) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(self, other: Self) -> (f64, f64) {
        (self.x - other.x, self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Source image size in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub const SOURCE: Resolution = Resolution {
        width: 1264,
        height: 902,
    };

    pub fn new(width: u32, height: u32) -> Result<Self, GeomError> {
        if width < 2 || height < 2 {
            return Err(GeomError::InvalidResolution(width, height));
        }
        Ok(Self { width, height })
    }

    pub fn x_scale(self) -> f64 {
        f64::from(self.width - 1)
    }

    pub fn y_scale(self) -> f64 {
        f64::from(self.height - 1)
    }

    pub fn to_pixels(self, p: PixelPoint) -> (f64, f64) {
        (p.x * self.x_scale(), p.y * self.y_scale())
    }

    pub fn from_pixels(self, x: f64, y: f64) -> PixelPoint {
        PixelPoint::new(x / self.x_scale(), y / self.y_scale())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keyframe {
    pub frame: i64,
    pub point: PixelPoint,
}

impl Keyframe {
    pub const CONFIDENCE: f64 = 1.0;

    pub fn new(frame: i64, point: PixelPoint) -> Self {
        Self { frame, point }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseSample {
    pub frame: i64,
    pub point: PixelPoint,
    pub confidence: f64,
    pub is_keyframe: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: String,
    /// Trajectories sharing a scene never straddle a split.
    pub scene_id: String,
    pub resolution: Resolution,
    pub keyframes: Vec<Keyframe>,
    pub dense: Vec<DenseSample>,
}

impl Trajectory {
    /// Builds a trajectory and densifies its keyframes.
    pub fn from_keyframes(
        id: impl Into<String>,
        scene_id: impl Into<String>,
        resolution: Resolution,
        keyframes: Vec<Keyframe>,
    ) -> Result<Self, GeomError> {
        let dense = densify(&keyframes, resolution)?;
        Ok(Self {
            id: id.into(),
            scene_id: scene_id.into(),
            resolution,
            keyframes,
            dense,
        })
    }

    pub fn first_frame(&self) -> i64 {
        self.keyframes[0].frame
    }

    pub fn last_frame(&self) -> i64 {
        self.keyframes[self.keyframes.len() - 1].frame
    }

    /// Dense sample at `frame`, if inside the span.
    pub fn sample_at(&self, frame: i64) -> Option<&DenseSample> {
        let first = self.dense.first()?.frame;
        let idx = usize::try_from(frame - first).ok()?;
        self.dense.get(idx).filter(|s| s.frame == frame)
    }
}
