use super::{DenseSample, GeomError, Keyframe, PixelPoint, Resolution, SplineModel};

/// Upper end of the interpolated-frame confidence map, approached as the distance to a keyframe shrinks.
pub const CONF_MAX: f64 = 0.9;
/// Confidence at the frame farthest from any keyframe in its interval.
pub const CONF_MIN: f64 = 0.45;

/// Pair of natural splines `S_x(t)`, `S_y(t)` in pixel units over frame index.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySpline {
    pub x: SplineModel,
    pub y: SplineModel,
    resolution: Resolution,
}

impl TrajectorySpline {
    pub fn fit(keyframes: &[Keyframe], resolution: Resolution) -> Result<Self, GeomError> {
        let xs: Vec<(i64, f64)> = keyframes
            .iter()
            .map(|k| (k.frame, k.point.x * resolution.x_scale()))
            .collect();
        let ys: Vec<(i64, f64)> = keyframes
            .iter()
            .map(|k| (k.frame, k.point.y * resolution.y_scale()))
            .collect();
        Ok(Self {
            x: SplineModel::fit(&xs)?,
            y: SplineModel::fit(&ys)?,
            resolution,
        })
    }

    /// Unrounded pixel position at `frame`.
    pub fn eval_pixels(&self, frame: f64) -> (f64, f64) {
        (self.x.eval(frame), self.y.eval(frame))
    }

    /// Position rounded to the nearest valid pixel, then normalised.
    pub fn eval_rounded(&self, frame: i64) -> PixelPoint {
        let (px, py) = self.eval_pixels(frame as f64);
        let rx = px.round().clamp(0.0, self.resolution.x_scale());
        let ry = py.round().clamp(0.0, self.resolution.y_scale());
        self.resolution.from_pixels(rx, ry)
    }
}

/// One sample per integer frame between the first and last keyframe.
///
/// Keyframe frames keep their annotated coordinates; every other frame is
/// the rounded spline position with a proximity-based confidence.
pub fn densify(keyframes: &[Keyframe], resolution: Resolution) -> Result<Vec<DenseSample>, GeomError> {
    let spline = TrajectorySpline::fit(keyframes, resolution)?;
    let frames: Vec<i64> = keyframes.iter().map(|k| k.frame).collect();
    let (first, last) = (frames[0], frames[frames.len() - 1]);
    let mut out = Vec::with_capacity((last - first + 1) as usize);
    let mut next_kf = 0;
    for frame in first..=last {
        if keyframes[next_kf].frame == frame {
            out.push(DenseSample {
                frame,
                point: keyframes[next_kf].point,
                confidence: Keyframe::CONFIDENCE,
                is_keyframe: true,
            });
            next_kf = (next_kf + 1).min(keyframes.len() - 1);
        } else {
            out.push(DenseSample {
                frame,
                point: spline.eval_rounded(frame),
                confidence: assign_confidence(frame, &frames)?,
                is_keyframe: false,
            });
        }
    }
    Ok(out)
}

/// `1.0` on a keyframe, else `0.9 − 0.45·d/d_max` where `d` is the frame
/// distance to the nearest keyframe and `d_max` the largest such distance in
/// the enclosing keyframe interval.
pub fn assign_confidence(frame: i64, keyframe_frames: &[i64]) -> Result<f64, GeomError> {
    let (Some(&first), Some(&last)) = (keyframe_frames.first(), keyframe_frames.last()) else {
        return Err(GeomError::TooFewKnots(0));
    };
    if frame < first || frame > last {
        return Err(GeomError::OutOfRange { frame, first, last });
    }
    let upper = keyframe_frames.partition_point(|k| *k < frame);
    if keyframe_frames[upper] == frame {
        return Ok(Keyframe::CONFIDENCE);
    }
    let (lo, hi) = (keyframe_frames[upper - 1], keyframe_frames[upper]);
    let d = (frame - lo).min(hi - frame) as f64;
    let d_max = ((hi - lo) / 2) as f64;
    Ok((CONF_MAX - (CONF_MAX - CONF_MIN) * d / d_max).clamp(CONF_MIN, CONF_MAX))
}
