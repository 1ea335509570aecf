//! Scene archetypes and the rasterizer that paints backgrounds, distractors
//! and the robot arms into an RGB image.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::robot::{forward_kinematics, RobotSpec, ARMS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    PlainA,
    PlainB,
    ClutterA,
    ClutterB,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [SceneKind::PlainA, SceneKind::PlainB, SceneKind::ClutterA, SceneKind::ClutterB];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::PlainA => "plain-a",
            SceneKind::PlainB => "plain-b",
            SceneKind::ClutterA => "clutter-a",
            SceneKind::ClutterB => "clutter-b",
        }
    }

    /// The captured scene each archetype stands in for.
    pub fn description(self) -> &'static str {
        match self {
            SceneKind::PlainA => "front towel",
            SceneKind::PlainB => "front glass",
            SceneKind::ClutterA => "front computers",
            SceneKind::ClutterB => "in lab",
        }
    }

    pub fn is_cluttered(self) -> bool {
        matches!(self, SceneKind::ClutterA | SceneKind::ClutterB)
    }

    pub fn parse(s: &str) -> Option<SceneKind> {
        SceneKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistractorShape {
    Rectangle,
    Disc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub scene_kind: SceneKind,
    pub background_palette: Vec<[f32; 3]>,
    pub distractor_count_range: [usize; 2],
    pub distractor_shapes: Vec<DistractorShape>,
    pub bright_distractor_probability: f32,
    /// Bright distractors may take the robot's own colour.
    pub robot_colored_distractors: bool,
    /// `(height, width)` in pixels.
    pub image_size: (usize, usize),
    pub pixel_noise: f32,
    pub seed: u64,
}

const BRIGHT_COLORS: [[f32; 3]; 3] = [[0.95, 0.85, 0.15], [0.97, 0.97, 0.95], [0.98, 0.55, 0.10]];

impl SceneSpec {
    pub fn new(kind: SceneKind, image_size: (usize, usize), seed: u64) -> Self {
        use DistractorShape::*;
        let (palette, range, shapes, bright) = match kind {
            SceneKind::PlainA => (vec![[0.80, 0.74, 0.62], [0.74, 0.68, 0.56]], [0, 2], vec![Rectangle], 0.1),
            SceneKind::PlainB => (vec![[0.62, 0.72, 0.80], [0.55, 0.66, 0.76]], [0, 2], vec![Rectangle, Disc], 0.1),
            SceneKind::ClutterA => (
                vec![[0.36, 0.36, 0.40], [0.46, 0.45, 0.42], [0.22, 0.22, 0.26]],
                [5, 9],
                vec![Rectangle, Disc],
                0.35,
            ),
            SceneKind::ClutterB => (
                vec![[0.56, 0.53, 0.48], [0.30, 0.33, 0.31], [0.66, 0.61, 0.55]],
                [6, 10],
                vec![Rectangle, Disc],
                0.5,
            ),
        };
        SceneSpec {
            scene_kind: kind,
            background_palette: palette,
            distractor_count_range: range,
            distractor_shapes: shapes,
            bright_distractor_probability: bright,
            robot_colored_distractors: kind.is_cluttered(),
            image_size,
            pixel_noise: 0.02,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.distractor_count_range;
        if lo > hi {
            return Err(Error::Config("distractor count range must be ordered".into()));
        }
        if self.scene_kind.is_cluttered() && lo < 5 {
            return Err(Error::Config(format!("{} scenes need at least 5 distractors", self.scene_kind.name())));
        }
        if !self.scene_kind.is_cluttered() && hi > 2 {
            return Err(Error::Config(format!("{} scenes allow at most 2 distractors", self.scene_kind.name())));
        }
        if !(0.0..=1.0).contains(&self.bright_distractor_probability) {
            return Err(Error::Config("bright distractor probability must lie in [0, 1]".into()));
        }
        if self.background_palette.is_empty() || self.distractor_shapes.is_empty() {
            return Err(Error::Config("palette and shape lists must be non-empty".into()));
        }
        if self.image_size.0 < 8 || self.image_size.1 < 8 {
            return Err(Error::Config("image size must be at least 8x8".into()));
        }
        if !(self.pixel_noise >= 0.0) {
            return Err(Error::Config("pixel noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Bit-packed `H x W` mask of pixels painted as robot limbs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmMask {
    height: usize,
    width: usize,
    bits: Vec<u64>,
}

impl ArmMask {
    pub fn new(height: usize, width: usize) -> Self {
        ArmMask { height, width, bits: vec![0; (height * width).div_ceil(64)] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        let i = y * self.width + x;
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, y: usize, x: usize) {
        let i = y * self.width + x;
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / (self.height * self.width) as f64
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }
}

#[derive(Debug, Clone)]
pub struct Rendered {
    /// `3 x H x W`, values in `[0, 1]`.
    pub image: Vec<f32>,
    pub mask: ArmMask,
    pub distractors: usize,
    /// Pixel-space centroid of each visible gripper disc.
    pub gripper_centroids: [Option<[f32; 2]>; ARMS],
}

struct Canvas {
    h: usize,
    w: usize,
    rgb: Vec<f32>,
}

impl Canvas {
    fn put(&mut self, y: usize, x: usize, c: [f32; 3]) {
        let plane = self.h * self.w;
        for (ch, v) in c.iter().enumerate() {
            self.rgb[ch * plane + y * self.w + x] = *v;
        }
    }
}

fn jitter<R: Rng + ?Sized>(c: [f32; 3], amount: f32, rng: &mut R) -> [f32; 3] {
    let d = rng.random_range(-amount..=amount);
    c.map(|v| (v + d + rng.random_range(-amount / 3.0..=amount / 3.0)).clamp(0.0, 1.0))
}

fn seg_dist2(px: f32, py: f32, a: [f32; 2], b: [f32; 2]) -> f32 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a[0] + t * dx - px, a[1] + t * dy - py);
    cx * cx + cy * cy
}

/// Paints background, distractors and arms, then adds pixel noise.
///
/// Arms are drawn last, so every mask pixel holds `arm_color` before noise.
pub fn render_scene<R: Rng + ?Sized>(
    scene: &SceneSpec,
    robot: &RobotSpec,
    angles: &[f32],
    rng: &mut R,
) -> Result<Rendered> {
    let (h, w) = scene.image_size;
    let scale = h.min(w) as f32;
    let mut canvas = Canvas { h, w, rgb: vec![0.0; 3 * h * w] };

    let top = jitter(scene.background_palette[rng.random_range(0..scene.background_palette.len())], 0.05, rng);
    let bottom = jitter(scene.background_palette[rng.random_range(0..scene.background_palette.len())], 0.05, rng);
    for y in 0..h {
        let t = y as f32 / (h - 1) as f32;
        let c = [0, 1, 2].map(|i| top[i] * (1.0 - t) + bottom[i] * t);
        for x in 0..w {
            canvas.put(y, x, c);
        }
    }

    let [lo, hi] = scene.distractor_count_range;
    let distractors = rng.random_range(lo..=hi);
    for _ in 0..distractors {
        let bright = rng.random_bool(scene.bright_distractor_probability as f64);
        let color = if bright {
            let n = BRIGHT_COLORS.len() + usize::from(scene.robot_colored_distractors);
            let pick = rng.random_range(0..n);
            if pick < BRIGHT_COLORS.len() {
                jitter(BRIGHT_COLORS[pick], 0.03, rng)
            } else {
                robot.arm_color
            }
        } else {
            let base = scene.background_palette[rng.random_range(0..scene.background_palette.len())];
            let shade = rng.random_range(-0.25f32..=0.25);
            jitter(base.map(|v| v + shade), 0.08, rng)
        };
        let shape = scene.distractor_shapes[rng.random_range(0..scene.distractor_shapes.len())];
        let cx = rng.random_range(0.0..w as f32);
        let cy = rng.random_range(0.0..h as f32);
        match shape {
            DistractorShape::Rectangle => {
                let hw = rng.random_range(0.03..0.13) * scale;
                let hh = rng.random_range(0.03..0.13) * scale;
                for y in 0..h {
                    for x in 0..w {
                        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                        if (px - cx).abs() <= hw && (py - cy).abs() <= hh {
                            canvas.put(y, x, color);
                        }
                    }
                }
            }
            DistractorShape::Disc => {
                let r = rng.random_range(0.03..0.12) * scale;
                for y in 0..h {
                    for x in 0..w {
                        let (px, py) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
                        if px * px + py * py <= r * r {
                            canvas.put(y, x, color);
                        }
                    }
                }
            }
        }
    }

    let chains = forward_kinematics(robot, angles)?;
    let half_width = 0.5 * robot.link_width * scale;
    let grip_r = robot.gripper_radius * scale;
    let to_px = |p: [f32; 2]| [p[0] * w as f32, p[1] * h as f32];
    let mut mask = ArmMask::new(h, w);
    let mut centroids = [None; ARMS];
    for (arm, chain) in chains.iter().enumerate() {
        let pts: Vec<[f32; 2]> = chain.points.iter().map(|&p| to_px(p)).collect();
        let g = *pts.last().expect("non-empty chain");
        let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
        for y in 0..h {
            for x in 0..w {
                let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                let in_gripper = (px - g[0]).powi(2) + (py - g[1]).powi(2) <= grip_r * grip_r;
                let on_link = pts.windows(2).any(|s| seg_dist2(px, py, s[0], s[1]) <= half_width * half_width);
                if in_gripper {
                    sx += px as f64;
                    sy += py as f64;
                    n += 1;
                }
                if in_gripper || on_link {
                    mask.set(y, x);
                    canvas.put(y, x, robot.arm_color);
                }
            }
        }
        if n > 0 {
            centroids[arm] = Some([(sx / n as f64) as f32, (sy / n as f64) as f32]);
        }
    }

    if scene.pixel_noise > 0.0 {
        let noise = Normal::new(0.0f32, scene.pixel_noise).expect("positive sd");
        for v in &mut canvas.rgb {
            *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }

    Ok(Rendered { image: canvas.rgb, mask, distractors, gripper_centroids: centroids })
}
