//! Planar dual-arm robot: geometry, pose sampling, forward kinematics and
//! simulated proprioception.
//!
//! Coordinates are normalised image coordinates: x grows to the right and y
//! grows downwards, `(0, 0)` is the top-left corner and `(1, 1)` the
//! bottom-right corner of the camera frame.

use std::f32::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARMS: usize = 2;
const MAX_POSE_TRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Environment = 0,
    #[serde(rename = "self")]
    SelfBody = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Environment),
            1 => Some(Label::SelfBody),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Environment => "environment",
            Label::SelfBody => "self",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotSpec {
    pub joints_per_arm: usize,
    /// Link lengths from shoulder to gripper, shared by both arms.
    pub link_lengths: Vec<f32>,
    pub base_positions: [[f32; 2]; ARMS],
    pub arm_color: [f32; 3],
    pub link_width: f32,
    pub gripper_radius: f32,
    /// Per-joint `[min, max]` in radians, shared by both arms.
    pub joint_limits: Vec<[f32; 2]>,
    /// Per-joint angles of the out-of-frame rest configuration.
    pub parked_angles: Vec<f32>,
    pub parked_jitter: f32,
    pub timestep: f32,
    pub max_joint_speed: f32,
    pub torque_gain: f32,
    pub torque_noise: f32,
}

impl Default for RobotSpec {
    fn default() -> Self {
        RobotSpec {
            joints_per_arm: 3,
            link_lengths: vec![0.28, 0.20, 0.15],
            base_positions: [[0.40, 1.05], [0.60, 1.05]],
            arm_color: [0.85, 0.12, 0.10],
            link_width: 0.05,
            gripper_radius: 0.05,
            joint_limits: vec![[-FRAC_PI_2 - 0.5, -FRAC_PI_2 + 0.5], [-0.5, 0.5], [-0.5, 0.5]],
            parked_angles: vec![FRAC_PI_2, 0.0, 0.0],
            parked_jitter: 0.01,
            timestep: 0.1,
            max_joint_speed: 1.0,
            torque_gain: 9.81,
            torque_noise: 0.05,
        }
    }
}

impl RobotSpec {
    pub fn validate(&self) -> Result<()> {
        let j = self.joints_per_arm;
        if j == 0 {
            return Err(Error::Config("joints_per_arm must be >= 1".into()));
        }
        if self.link_lengths.len() != j || self.joint_limits.len() != j || self.parked_angles.len() != j {
            return Err(Error::Config(format!(
                "robot spec needs {j} link lengths, joint limits and parked angles"
            )));
        }
        if self.link_lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config("link lengths must be positive".into()));
        }
        if self.joint_limits.iter().any(|l| !(l[0] <= l[1]) || !l[0].is_finite() || !l[1].is_finite()) {
            return Err(Error::Config("joint limits must be finite and ordered".into()));
        }
        if !(self.gripper_radius > 0.0) || !(self.link_width > 0.0) {
            return Err(Error::Config("gripper radius and link width must be positive".into()));
        }
        if !(self.timestep > 0.0) {
            return Err(Error::Config("timestep must be positive".into()));
        }
        if self.arm_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("arm colour components must lie in [0, 1]".into()));
        }
        if self.max_joint_speed < 0.0 || self.torque_noise < 0.0 || self.parked_jitter < 0.0 {
            return Err(Error::Config("noise and speed parameters must be non-negative".into()));
        }
        Ok(())
    }

    pub fn proprio_dim(&self) -> usize {
        3 * ARMS * self.joints_per_arm
    }

    pub fn reach(&self) -> f32 {
        self.link_lengths.iter().sum()
    }

    fn arm<'a>(&self, angles: &'a [f32], arm: usize) -> &'a [f32] {
        &angles[arm * self.joints_per_arm..(arm + 1) * self.joints_per_arm]
    }
}

/// Joint points of one arm: the base followed by the end of every link.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmChain {
    pub points: Vec<[f32; 2]>,
}

impl ArmChain {
    pub fn gripper(&self) -> [f32; 2] {
        *self.points.last().expect("chain always holds its base")
    }
}

/// Planar chain: `p_k = p_{k-1} + L_k (cos T_k, sin T_k)`, `T_k` the running
/// sum of the joint angles up to `k`.
pub fn forward_kinematics(robot: &RobotSpec, angles: &[f32]) -> Result<[ArmChain; ARMS]> {
    if angles.len() != ARMS * robot.joints_per_arm {
        return Err(Error::Dimension(format!(
            "expected {} joint angles, got {}",
            ARMS * robot.joints_per_arm,
            angles.len()
        )));
    }
    let chain = |arm: usize| {
        let base = robot.base_positions[arm];
        let mut p = [base[0] as f64, base[1] as f64];
        let mut theta = 0.0f64;
        let mut points = vec![base];
        for (&a, &l) in robot.arm(angles, arm).iter().zip(&robot.link_lengths) {
            theta += a as f64;
            p[0] += l as f64 * theta.cos();
            p[1] += l as f64 * theta.sin();
            points.push([p[0] as f32, p[1] as f32]);
        }
        ArmChain { points }
    };
    Ok([chain(0), chain(1)])
}

/// Whether the gripper disc of `chain` lies entirely inside an `h x w` frame.
pub fn gripper_in_frame(robot: &RobotSpec, chain: &ArmChain, image_size: (usize, usize)) -> bool {
    let (h, w) = (image_size.0 as f32, image_size.1 as f32);
    let r = robot.gripper_radius * h.min(w);
    let g = chain.gripper();
    let (x, y) = (g[0] * w, g[1] * h);
    x >= r && x <= w - r && y >= r && y <= h - r
}

/// Draws a task-free pose. Self poses are uniform within the joint limits,
/// conditioned on at least one gripper being fully visible; environment poses
/// are the parked configuration plus jitter.
pub fn sample_pose<R: Rng + ?Sized>(
    robot: &RobotSpec,
    label: Label,
    image_size: (usize, usize),
    rng: &mut R,
) -> Result<Vec<f32>> {
    let j = robot.joints_per_arm;
    match label {
        Label::SelfBody => {
            for _ in 0..MAX_POSE_TRIES {
                let angles: Vec<f32> = (0..ARMS * j)
                    .map(|i| {
                        let [lo, hi] = robot.joint_limits[i % j];
                        if lo == hi {
                            lo
                        } else {
                            rng.random_range(lo..=hi)
                        }
                    })
                    .collect();
                let chains = forward_kinematics(robot, &angles)?;
                if chains.iter().any(|c| gripper_in_frame(robot, c, image_size)) {
                    return Ok(angles);
                }
            }
            Err(Error::Geometry(format!(
                "no gripper landed inside the frame after {MAX_POSE_TRIES} draws"
            )))
        }
        Label::Environment => {
            let jitter = normal(robot.parked_jitter);
            Ok((0..ARMS * j).map(|i| robot.parked_angles[i % j] + jitter.sample(rng)).collect())
        }
    }
}

/// The pose one timestep earlier, used to derive joint velocities.
pub fn previous_pose<R: Rng + ?Sized>(robot: &RobotSpec, label: Label, angles: &[f32], rng: &mut R) -> Vec<f32> {
    match label {
        Label::SelfBody => angles
            .iter()
            .map(|&a| {
                let speed = if robot.max_joint_speed > 0.0 {
                    rng.random_range(-robot.max_joint_speed..=robot.max_joint_speed)
                } else {
                    0.0
                };
                a - speed * robot.timestep
            })
            .collect(),
        Label::Environment => {
            let jitter = normal(robot.parked_jitter);
            let j = robot.joints_per_arm;
            (0..angles.len()).map(|i| robot.parked_angles[i % j] + jitter.sample(rng)).collect()
        }
    }
}

fn normal(std: f32) -> Normal<f32> {
    Normal::new(0.0, std.max(0.0)).expect("non-negative standard deviation")
}

/// Gravity-load torque proxy of one arm without noise:
/// `tau_k = g0 * sum_{j >= k} L_j cos T_j`.
pub fn gravity_torques(robot: &RobotSpec, arm_angles: &[f32]) -> Vec<f32> {
    let mut theta = 0.0f64;
    let moments: Vec<f64> = arm_angles
        .iter()
        .zip(&robot.link_lengths)
        .map(|(&a, &l)| {
            theta += a as f64;
            l as f64 * theta.cos()
        })
        .collect();
    (0..moments.len())
        .map(|k| (robot.torque_gain as f64 * moments[k..].iter().sum::<f64>()) as f32)
        .collect()
}

/// Joint state vector `[positions | velocities | torques]`, each block
/// ordered arm-major then joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Proprio(pub Vec<f32>);

impl Proprio {
    pub fn positions(&self) -> &[f32] {
        &self.0[..self.0.len() / 3]
    }

    pub fn velocities(&self) -> &[f32] {
        let n = self.0.len() / 3;
        &self.0[n..2 * n]
    }

    pub fn torques(&self) -> &[f32] {
        let n = self.0.len() / 3;
        &self.0[2 * n..]
    }
}

pub fn synthesize_proprio<R: Rng + ?Sized>(
    robot: &RobotSpec,
    angles: &[f32],
    previous: &[f32],
    rng: &mut R,
) -> Result<Proprio> {
    let n = ARMS * robot.joints_per_arm;
    if angles.len() != n || previous.len() != n {
        return Err(Error::Dimension(format!("expected {n} joint angles per pose")));
    }
    let mut v = Vec::with_capacity(3 * n);
    v.extend_from_slice(angles);
    v.extend(angles.iter().zip(previous).map(|(a, p)| (a - p) / robot.timestep));
    let noise = normal(robot.torque_noise);
    for arm in 0..ARMS {
        for t in gravity_torques(robot, robot.arm(angles, arm)) {
            v.push(t + if robot.torque_noise > 0.0 { noise.sample(rng) } else { 0.0 });
        }
    }
    Ok(Proprio(v))
}
