//! Synthetic RGBD frames standing in for a depth camera: a back wall, a
//! sphere and a noisy person silhouette that sways from frame to frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DepthFrame, Intrinsics};

pub const DEFAULT_WIDTH: u32 = 640;
pub const DEFAULT_HEIGHT: u32 = 576;
pub const DEFAULT_INTRINSICS: Intrinsics = Intrinsics { fx: 504.0, fy: 504.0, cx: 320.0, cy: 288.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticScene {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self { width: DEFAULT_WIDTH, height: DEFAULT_HEIGHT, fps: 30.0, seed: 0 }
    }
}

impl SyntheticScene {
    /// Intrinsics scaled from the default mode to this resolution. Values are
    /// exact in `f32` so they survive the recording format.
    pub fn intrinsics(&self) -> Intrinsics {
        let sx = f64::from(self.width) / f64::from(DEFAULT_WIDTH);
        let sy = f64::from(self.height) / f64::from(DEFAULT_HEIGHT);
        let q = |v: f64| f64::from(v as f32);
        Intrinsics {
            fx: q(DEFAULT_INTRINSICS.fx * sx),
            fy: q(DEFAULT_INTRINSICS.fy * sy),
            cx: q(f64::from(self.width) / 2.0),
            cy: q(f64::from(self.height) / 2.0),
        }
    }

    pub fn frame(&self, index: u32) -> DepthFrame {
        synthetic_frame(self, index)
    }
}

fn sphere_depth(dir: (f64, f64), center: (f64, f64, f64), radius: f64) -> Option<f64> {
    // Ray p = z * (dx, dy, 1); solve |p - c|^2 = r^2 for the nearest z.
    let (dx, dy) = dir;
    let a = dx * dx + dy * dy + 1.0;
    let b = -2.0 * (dx * center.0 + dy * center.1 + center.2);
    let c = center.0 * center.0 + center.1 * center.1 + center.2 * center.2 - radius * radius;
    let disc = b * b - 4.0 * a * c;
    (disc >= 0.0).then(|| (-b - disc.sqrt()) / (2.0 * a))
}

pub fn synthetic_frame(scene: &SyntheticScene, index: u32) -> DepthFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ (u64::from(index) << 32 | 0x9e37));
    let intr = scene.intrinsics();
    let (w, h) = (scene.width as usize, scene.height as usize);
    let mut depth = vec![0u16; w * h];
    let mut color = vec![0u8; w * h * 3];
    let t = f64::from(index) / scene.fps;
    let sway = 0.15 * (t * 1.3).sin();
    for v in 0..h {
        for u in 0..w {
            let dx = (u as f64 - intr.cx) / intr.fx;
            let dy = (v as f64 - intr.cy) / intr.fy;
            let mut z = 2.5 + 0.05 * dy;
            let mut rgb = [150u8, 150, 160];

            if let Some(zs) = sphere_depth((dx, dy), (0.45, -0.1, 1.6), 0.25) {
                if zs < z {
                    z = zs;
                    let shade = (255.0 * (1.0 - (zs - 1.35) * 2.0)).clamp(40.0, 255.0) as u8;
                    rgb = [shade, 30, 30];
                }
            }

            // Person: an elliptical torso and a round head at ~1.2 m.
            let zp = 1.2;
            let (px, py) = (dx * zp - sway, dy * zp);
            let torso = (px / 0.22).powi(2) + ((py - 0.25) / 0.45).powi(2) <= 1.0;
            let head = px * px + (py + 0.35).powi(2) <= 0.11 * 0.11;
            if torso || head {
                z = zp + rng.gen_range(-0.005..0.005);
                rgb = if head { [224, 172, 105] } else { [40, 90, 170] };
                if rng.gen_bool(0.03) {
                    z = 0.0;
                }
            }

            let i = v * w + u;
            depth[i] = (z * 1000.0).round() as u16;
            color[3 * i..3 * i + 3].copy_from_slice(&rgb);
        }
    }
    DepthFrame {
        width: scene.width,
        height: scene.height,
        depth,
        color,
        intrinsics: intr,
        timestamp_ms: (f64::from(index) * 1000.0 / scene.fps).round() as u64,
        frame_id: index,
    }
}
