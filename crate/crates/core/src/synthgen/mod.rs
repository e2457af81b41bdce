//! Procedural keyframe-annotated trajectories with rendered crops.
//!
//! Each trajectory follows a chain of quadratic Bézier segments whose
//! tangents turn by a bounded angle at every joint. Keyframes sit at evenly
//! spaced curve parameters and evenly spaced frames, so with zero turning
//! and zero noise the path is affine in frame index.

mod archive;
mod render;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::geom::{GeomError, Keyframe, Resolution, Trajectory};

pub use archive::{decode_crop_archive, CropArchive, CropArchiveError, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use render::{render_crop, CropGeometry, SceneTexture};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("could not place trajectory {0} inside the frame")]
    Placement(usize),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub keyframes: usize,
    /// Inclusive range of frames between consecutive keyframes.
    pub spacing: (i64, i64),
    /// Inclusive range of path length per keyframe interval, in source pixels.
    pub step_px: (f64, f64),
    /// Largest tangent turn at a segment joint, radians.
    pub curvature: f64,
    /// Standard deviation of keyframe noise, in source pixels.
    pub noise_px: f64,
    pub resolution: Resolution,
    /// Sinusoid components per colour channel of the background.
    pub texture_complexity: usize,
    pub per_scene: usize,
    /// Train/val fractions of scenes; the remainder is test.
    pub split: (f64, f64),
    /// Largest normalised displacement allowed between consecutive keyframes.
    pub delta_max: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            count: 280,
            keyframes: 9,
            spacing: (5, 11),
            step_px: (12.0, 30.0),
            curvature: 0.6,
            noise_px: 1.5,
            resolution: Resolution::SOURCE,
            texture_complexity: 4,
            per_scene: 4,
            split: (0.7, 0.15),
            delta_max: 0.05,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.count == 0 || self.per_scene == 0 {
            return bad("count and per_scene must be at least 1");
        }
        if self.keyframes < 2 {
            return bad("keyframes must be at least 2");
        }
        if self.spacing.0 < 1 || self.spacing.1 < self.spacing.0 {
            return bad("spacing must be a nonempty range of positive frame counts");
        }
        if !(self.step_px.0 >= 0.0 && self.step_px.1 >= self.step_px.0) {
            return bad("step_px must be a nonempty nonnegative range");
        }
        if !(self.noise_px >= 0.0) || !(self.curvature >= 0.0) {
            return bad("noise_px and curvature must be nonnegative");
        }
        let (tr, va) = self.split;
        if !(tr >= 0.0 && va >= 0.0 && tr + va <= 1.0) {
            return bad("split fractions must be nonnegative and sum to at most 1");
        }
        if !(self.delta_max > 0.0) {
            return bad("delta_max must be positive");
        }
        if Resolution::new(self.resolution.width, self.resolution.height).is_err() {
            return bad("resolution must be at least 2 x 2 pixels");
        }
        let max_norm_step = (self.step_px.1 + 6.0 * self.noise_px) / f64::from(self.resolution.height.min(self.resolution.width) - 1);
        if max_norm_step > self.delta_max {
            return bad("step_px too large for delta_max at this resolution");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub scenes: BTreeMap<String, SceneTexture>,
}

impl SynthCorpus {
    pub fn all(&self) -> impl Iterator<Item = &Trajectory> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Derived per-item seed so items can be generated in any order.
pub fn derive_seed(root: u64, stream: u64, index: u64) -> u64 {
    let mut z = root ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn bezier(a: (f64, f64), c: (f64, f64), b: (f64, f64), u: f64) -> (f64, f64) {
    let v = 1.0 - u;
    (
        v * v * a.0 + 2.0 * v * u * c.0 + u * u * b.0,
        v * v * a.1 + 2.0 * v * u * c.1 + u * u * b.1,
    )
}

/// Keyframe pixel positions along a turning Bézier chain starting at the origin.
fn curve_points(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<(f64, f64)> {
    let intervals = cfg.keyframes - 1;
    let segments = intervals.div_ceil(2);
    let step = rng.gen_range(cfg.step_px.0..=cfg.step_px.1);
    let seg_len = step * intervals as f64 / segments as f64;
    let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut anchor = (0.0, 0.0);
    let mut segs = Vec::with_capacity(segments);
    for _ in 0..segments {
        let turn = if cfg.curvature > 0.0 {
            rng.gen_range(-cfg.curvature..=cfg.curvature)
        } else {
            0.0
        };
        let half = seg_len / 2.0;
        let ctrl = (anchor.0 + half * heading.cos(), anchor.1 + half * heading.sin());
        heading += turn;
        let end = (ctrl.0 + half * heading.cos(), ctrl.1 + half * heading.sin());
        segs.push((anchor, ctrl, end));
        anchor = end;
    }
    (0..cfg.keyframes)
        .map(|j| {
            let u = j as f64 * segments as f64 / intervals as f64;
            let s = (u.floor() as usize).min(segments - 1);
            let (a, c, b) = segs[s];
            bezier(a, c, b, u - s as f64)
        })
        .collect()
}

fn max_norm_step(points: &[(f64, f64)], res: Resolution) -> f64 {
    points
        .windows(2)
        .map(|w| ((w[1].0 - w[0].0) / res.x_scale()).hypot((w[1].1 - w[0].1) / res.y_scale()))
        .fold(0.0, f64::max)
}

/// One trajectory; retries with fresh draws until it fits the frame and the step bound.
pub fn generate_trajectory(cfg: &SynthConfig, index: usize) -> Result<Trajectory, SynthError> {
    let res = cfg.resolution;
    let margin = 0.08;
    let noise = Normal::new(0.0, cfg.noise_px).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    for attempt in 0..64u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1 + attempt, index as u64));
        let mut pts = curve_points(&mut rng, cfg);
        let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
        for p in &pts {
            lo = (lo.0.min(p.0), lo.1.min(p.1));
            hi = (hi.0.max(p.0), hi.1.max(p.1));
        }
        let room = (
            res.x_scale() * (1.0 - 2.0 * margin) - (hi.0 - lo.0),
            res.y_scale() * (1.0 - 2.0 * margin) - (hi.1 - lo.1),
        );
        if room.0 < 0.0 || room.1 < 0.0 {
            continue;
        }
        let shift = (
            res.x_scale() * margin - lo.0 + rng.gen_range(0.0..=room.0),
            res.y_scale() * margin - lo.1 + rng.gen_range(0.0..=room.1),
        );
        for p in &mut pts {
            p.0 = (p.0 + shift.0 + noise.sample(&mut rng)).round();
            p.1 = (p.1 + shift.1 + noise.sample(&mut rng)).round();
        }
        if max_norm_step(&pts, res) > cfg.delta_max {
            continue;
        }
        let spacing = rng.gen_range(cfg.spacing.0..=cfg.spacing.1);
        let start = rng.gen_range(0..=20);
        let keyframes = pts
            .iter()
            .enumerate()
            .map(|(j, p)| Keyframe::new(start + j as i64 * spacing, res.from_pixels(p.0, p.1)))
            .collect();
        let scene = index / cfg.per_scene;
        return Ok(Trajectory::from_keyframes(
            format!("t{index:05}"),
            format!("s{scene:04}"),
            res,
            keyframes,
        )?);
    }
    Err(SynthError::Placement(index))
}

/// Generates trajectories, scene textures, and a scene-grouped split.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let trajectories: Vec<Trajectory> = (0..cfg.count)
        .into_par_iter()
        .map(|i| generate_trajectory(cfg, i))
        .collect::<Result<_, _>>()?;
    let n_scenes = cfg.count.div_ceil(cfg.per_scene);
    let scenes: BTreeMap<String, SceneTexture> = (0..n_scenes)
        .map(|s| {
            let seed = derive_seed(cfg.seed, 0, s as u64);
            (format!("s{s:04}"), SceneTexture::random(seed, cfg.texture_complexity))
        })
        .collect();

    let mut order: Vec<usize> = (0..n_scenes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xFFFF, 0));
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let n_train = (cfg.split.0 * n_scenes as f64).round() as usize;
    let n_val = ((cfg.split.1 * n_scenes as f64).round() as usize).min(n_scenes - n_train.min(n_scenes));
    let mut split_of = vec![2u8; n_scenes];
    for (rank, &s) in order.iter().enumerate() {
        split_of[s] = if rank < n_train {
            0
        } else if rank < n_train + n_val {
            1
        } else {
            2
        };
    }
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, t) in trajectories.into_iter().enumerate() {
        match split_of[i / cfg.per_scene] {
            0 => train.push(t),
            1 => val.push(t),
            _ => test.push(t),
        }
    }
    Ok(SynthCorpus { train, val, test, scenes })
}
