use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::Trajectory;

/// Square crop of `extent_px` source pixels around `center_px`, sampled at `size`×`size`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropGeometry {
    pub center_px: (f64, f64),
    pub extent_px: f64,
    pub size: usize,
}

impl CropGeometry {
    pub fn px_per_cell(&self) -> f64 {
        self.extent_px / self.size as f64
    }

    /// Source pixel coordinates → continuous crop coordinates (cell centres at `i + 0.5`).
    pub fn to_crop(&self, x_px: f64, y_px: f64) -> (f64, f64) {
        let s = self.px_per_cell();
        let half = self.extent_px / 2.0;
        (
            (x_px - self.center_px.0 + half) / s,
            (y_px - self.center_px.1 + half) / s,
        )
    }

    pub fn to_source(&self, col: f64, row: f64) -> (f64, f64) {
        let s = self.px_per_cell();
        let half = self.extent_px / 2.0;
        (self.center_px.0 - half + col * s, self.center_px.1 - half + row * s)
    }
}

/// Smooth background: a base colour plus a few plane waves per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTexture {
    pub base: [f64; 3],
    /// `(amplitude, kx, ky, phase)` per component and channel.
    pub waves: [Vec<(f64, f64, f64, f64)>; 3],
}

impl SceneTexture {
    pub fn random(seed: u64, components: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [
            rng.gen_range(140.0..190.0),
            rng.gen_range(70.0..110.0),
            rng.gen_range(70.0..110.0),
        ];
        let waves = std::array::from_fn(|_| {
            (0..components)
                .map(|_| {
                    let period = rng.gen_range(40.0..260.0);
                    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let k = std::f64::consts::TAU / period;
                    (rng.gen_range(6.0..22.0), k * angle.cos(), k * angle.sin(), rng.gen_range(0.0..std::f64::consts::TAU))
                })
                .collect()
        });
        Self { base, waves }
    }

    pub fn color(&self, x: f64, y: f64) -> [f64; 3] {
        std::array::from_fn(|c| {
            self.base[c]
                + self.waves[c]
                    .iter()
                    .map(|(a, kx, ky, ph)| a * (kx * x + ky * y + ph).sin())
                    .sum::<f64>()
        })
    }
}

const TIP_RADIUS_PX: f64 = 7.0;
const TIP_COLOR: [f64; 3] = [250.0, 240.0, 40.0];
const SHAFT_LEN_PX: f64 = 48.0;
const SHAFT_HALF_WIDTH_PX: f64 = 3.5;
const SHAFT_COLOR: [f64; 3] = [35.0, 40.0, 45.0];

fn distance_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// RGB crop (channel-major `u8`) at `frame`, centred on the annotated tip.
///
/// The instrument shaft trails the tip opposite to its recent motion, which
/// is estimated from the previous frame only.
pub fn render_crop(scene: &SceneTexture, traj: &Trajectory, frame: i64, extent_px: f64, size: usize) -> Option<Vec<u8>> {
    let res = traj.resolution;
    let here = traj.sample_at(frame)?;
    let tip = res.to_pixels(here.point);
    let prev = traj.sample_at(frame - 1).map_or(tip, |s| res.to_pixels(s.point));
    let (vx, vy) = (tip.0 - prev.0, tip.1 - prev.1);
    let vnorm = vx.hypot(vy);
    let back = if vnorm > 1e-9 { (-vx / vnorm, -vy / vnorm) } else { (0.0, 1.0) };
    let shaft_end = (tip.0 + back.0 * SHAFT_LEN_PX, tip.1 + back.1 * SHAFT_LEN_PX);

    let geo = CropGeometry {
        center_px: tip,
        extent_px,
        size,
    };
    let mut out = vec![0u8; 3 * size * size];
    for row in 0..size {
        for col in 0..size {
            let (x, y) = geo.to_source(col as f64 + 0.5, row as f64 + 0.5);
            if x < 0.0 || y < 0.0 || x > res.x_scale() || y > res.y_scale() {
                continue;
            }
            let rgb = if (x - tip.0).hypot(y - tip.1) <= TIP_RADIUS_PX {
                TIP_COLOR
            } else if distance_to_segment((x, y), tip, shaft_end) <= SHAFT_HALF_WIDTH_PX {
                SHAFT_COLOR
            } else {
                scene.color(x, y)
            };
            for c in 0..3 {
                out[c * size * size + row * size + col] = rgb[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Some(out)
}
