//! Procedural dual-arm robot scenes with synchronised proprioception.

pub mod dataset;
pub mod robot;
pub mod scene;
pub mod toy;

pub use dataset::{
    assemble_group, generate_all_scenes, generate_group, generate_sample, generate_scene, make_confounding_cases,
    read_dataset, read_manifest, rng_for, derive_seed, sample_id, write_dataset, Case, ConfoundingCases, Dataset, DatasetManifest, GroupData,
    GroupLayout, Sample,
};
pub use robot::{forward_kinematics, sample_pose, synthesize_proprio, ArmChain, Label, Proprio, RobotSpec};
pub use toy::separable_toy;
pub use scene::{render_scene, ArmMask, DistractorShape, Rendered, SceneKind, SceneSpec};
