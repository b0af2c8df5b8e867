//! Observation, reward and discriminator feature extractors.
//!
//! Everything here is expressed in the root's heading frame where it should
//! not depend on where the character stands or which way it faces.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::engine::SimState;
use crate::kinematics::fk::forward_kinematics_unchecked;
use crate::kinematics::motion::finite_difference;
use crate::kinematics::{CharacterModel, JointValue, Pose, PoseVelocity, Quat, UP};

/// Weights and sharpness of the four tracking reward terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingWeights {
    pub w_pose: f64,
    pub w_vel: f64,
    pub w_end_effector: f64,
    pub w_root: f64,
    pub a_pose: f64,
    pub a_vel: f64,
    pub a_end_effector: f64,
    pub a_root: f64,
}

impl Default for TrackingWeights {
    fn default() -> Self {
        TrackingWeights {
            w_pose: 0.65,
            w_vel: 0.10,
            w_end_effector: 0.15,
            w_root: 0.10,
            a_pose: 2.0,
            a_vel: 0.1,
            a_end_effector: 40.0,
            a_root: 10.0,
        }
    }
}

/// Tracking reward in `(0, 1]`; weights are normalized to sum to one.
pub fn tracking_reward(
    ch: &CharacterModel,
    sim: (&Pose, &PoseVelocity),
    reference: (&Pose, &PoseVelocity),
    w: &TrackingWeights,
) -> f64 {
    let mut pose_err = 0.0;
    for (j, spec) in ch.joints.iter().enumerate() {
        let a = sim.0.joints[j].rotation(&spec.axis);
        let b = reference.0.joints[j].rotation(&spec.axis);
        pose_err += a.angle_to(&b).powi(2);
    }
    let vel_err: f64 = sim
        .1
        .dof
        .iter()
        .zip(&reference.1.dof)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let xs = forward_kinematics_unchecked(ch, sim.0);
    let xr = forward_kinematics_unchecked(ch, reference.0);
    let ee_err: f64 = ch
        .end_effectors()
        .iter()
        .map(|&b| (xs[b].pos - xr[b].pos).norm_squared())
        .sum();
    let root_err = (sim.0.root_pos - reference.0.root_pos).norm_squared();
    let total = w.w_pose + w.w_vel + w.w_end_effector + w.w_root;
    (w.w_pose * (-w.a_pose * pose_err).exp()
        + w.w_vel * (-w.a_vel * vel_err).exp()
        + w.w_end_effector * (-w.a_end_effector * ee_err).exp()
        + w.w_root * (-w.a_root * root_err).exp())
        / total
}

fn push_joint_features(out: &mut Vec<f64>, pose: &Pose) {
    for j in &pose.joints {
        match j {
            JointValue::Ball(q) => out.extend_from_slice(&q.tan_norm()),
            JointValue::Hinge(a) => out.extend_from_slice(&[a.sin(), a.cos()]),
            JointValue::Fixed => {}
        }
    }
}

/// Pose features that ignore heading and horizontal position: root height,
/// heading-relative root orientation, root-relative body positions and joint
/// rotations.
fn pose_features(ch: &CharacterModel, pose: &Pose, out: &mut Vec<f64>) -> Quat {
    let inv_heading = pose.root_rot.heading().conjugate();
    out.push(UP.dot(&pose.root_pos));
    out.extend_from_slice(&(inv_heading * pose.root_rot).tan_norm());
    let fk = forward_kinematics_unchecked(ch, pose);
    for t in &fk[1..] {
        out.extend_from_slice(inv_heading.rotate(&(t.pos - pose.root_pos)).as_slice());
    }
    push_joint_features(out, pose);
    inv_heading
}

/// Proprioceptive observation of one state.
pub fn proprio_obs(ch: &CharacterModel, s: &SimState, out: &mut Vec<f64>) {
    let inv_heading = pose_features(ch, &s.pose, out);
    out.extend_from_slice(inv_heading.rotate(&s.vel.root_lin).as_slice());
    out.extend_from_slice(inv_heading.rotate(&s.vel.root_ang).as_slice());
    out.extend_from_slice(&s.vel.dof);
}

pub fn proprio_dim(ch: &CharacterModel) -> usize {
    let joint: usize = ch
        .joints
        .iter()
        .map(|j| match j.kind.dof() {
            3 => 6,
            1 => 2,
            d => d,
        })
        .sum();
    1 + 6 + 3 * ch.num_joints() + joint + 6 + ch.dof_count()
}

/// Per-joint rotation difference carrying `from` to `to`: exp-map for
/// spherical joints, angle difference for revolute joints.
fn joint_difference(from: &Pose, to: &Pose, out: &mut Vec<f64>) {
    for (a, b) in from.joints.iter().zip(&to.joints) {
        match (a, b) {
            (JointValue::Ball(qa), JointValue::Ball(qb)) => {
                out.extend_from_slice(qa.delta_to(qb).as_slice())
            }
            (JointValue::Hinge(x), JointValue::Hinge(y)) => out.push(y - x),
            _ => {}
        }
    }
}

/// Target features for tracking: where the reference will be next, relative
/// to the current state, plus the clip phase.
pub fn reference_obs(s: &SimState, next: &Pose, phase: f64, out: &mut Vec<f64>) {
    let inv_heading = s.pose.root_rot.heading().conjugate();
    out.extend_from_slice(inv_heading.rotate(&(next.root_pos - s.pose.root_pos)).as_slice());
    out.extend_from_slice(
        inv_heading
            .rotate(&s.pose.root_rot.delta_to(&next.root_rot))
            .as_slice(),
    );
    joint_difference(&s.pose, next, out);
    out.extend(next.dof_values());
    let (sn, cs) = (std::f64::consts::TAU * phase).sin_cos();
    out.push(sn);
    out.push(cs);
}

pub fn reference_dim(ch: &CharacterModel) -> usize {
    6 + 2 * ch.dof_count() + 2
}

/// Discriminator features of a transition `prev → cur` lasting `dt`
/// seconds: pose features of both states plus heading-frame finite
/// difference velocities.
pub fn amp_observation_pair(ch: &CharacterModel, prev: &Pose, cur: &Pose, dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(amp_dim(ch));
    pose_features(ch, prev, &mut out);
    let inv_heading = pose_features(ch, cur, &mut out);
    let v = finite_difference(prev, cur, dt);
    out.extend_from_slice(inv_heading.rotate(&v.root_lin).as_slice());
    out.extend_from_slice(inv_heading.rotate(&v.root_ang).as_slice());
    out.extend_from_slice(&v.dof);
    out
}

pub fn amp_dim(ch: &CharacterModel) -> usize {
    let pose = proprio_dim(ch) - 6 - ch.dof_count();
    2 * pose + 6 + ch.dof_count()
}

/// Difference between reference and simulated features: root position,
/// root rotation, per-joint rotation and per-dof velocity. Zero exactly when
/// the two coincide.
pub fn add_difference_obs(sim: (&Pose, &PoseVelocity), reference: (&Pose, &PoseVelocity)) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice((reference.0.root_pos - sim.0.root_pos).as_slice());
    out.extend_from_slice(sim.0.root_rot.delta_to(&reference.0.root_rot).as_slice());
    joint_difference(sim.0, reference.0, &mut out);
    out.extend(reference.1.dof.iter().zip(&sim.1.dof).map(|(r, s)| r - s));
    out
}

pub fn add_dim(ch: &CharacterModel) -> usize {
    6 + 2 * ch.dof_count()
}

/// Horizontal (ground plane) coordinates of a world point.
pub fn ground_xy(p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(p.x, p.z)
}

/// Goal relative to the root, in the heading frame: `(forward, lateral)`.
pub fn target_local(root_pos: &Vector3<f64>, root_rot: &Quat, goal: &Vector2<f64>) -> Vector2<f64> {
    let d = Vector3::new(goal.x - root_pos.x, 0.0, goal.y - root_pos.z);
    let local = root_rot.heading().conjugate().rotate(&d);
    Vector2::new(local.x, local.z)
}

pub fn target_reward(root_pos: &Vector3<f64>, goal: &Vector2<f64>) -> f64 {
    (-0.5 * (ground_xy(root_pos) - goal).norm_squared()).exp()
}
