//! A linearly separable stand-in dataset for exercising the training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Sample};
use super::robot::{Label, RobotSpec};
use super::scene::{ArmMask, SceneKind, SceneSpec};

/// `n` samples alternating self / environment. The label is the common sign
/// of the first third of the proprio vector (magnitudes in `[0.5, 1)`); the
/// rest is uniform noise and each image is a flat grey of random level, so
/// vision carries no label information. Consecutive pairs cycle through `kinds`.
pub fn separable_toy(n: usize, image_size: (usize, usize), seed: u64, kinds: &[SceneKind]) -> Dataset {
    assert!(!kinds.is_empty(), "at least one scene kind");
    let robot = RobotSpec::default();
    let dim = robot.proprio_dim();
    let (h, w) = image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::SelfBody } else { Label::Environment };
            let mut proprio: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sign = if label == Label::SelfBody { 1.0 } else { -1.0 };
            for v in &mut proprio[..dim / 3] {
                *v = sign * rng.random_range(0.5..1.0);
            }
            let image = vec![rng.random_range(0.3f32..0.7); 3 * h * w];
            Sample {
                image,
                proprio,
                label,
                scene_kind: kinds[(i / 2) % kinds.len()],
                case_tag: None,
                sample_id: i as u64,
                seed,
                mask: ArmMask::new(h, w),
                distractors: 0,
            }
        })
        .collect();
    let mut scenes: Vec<SceneSpec> = Vec::new();
    for &k in kinds {
        if !scenes.iter().any(|s| s.scene_kind == k) {
            scenes.push(SceneSpec::new(k, image_size, seed));
        }
    }
    Dataset { robot, scenes, image_size, proprio_dim: dim, samples }
}
