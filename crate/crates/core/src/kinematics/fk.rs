use nalgebra::Vector3;

use super::character::CharacterModel;
use super::pose::Pose;
use super::rotation::Quat;
use crate::error::Result;

/// World transform of one body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyTransform {
    pub pos: Vector3<f64>,
    pub rot: Quat,
}

impl BodyTransform {
    pub fn apply(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.pos + self.rot.rotate(local)
    }
}

/// World transforms of all bodies, root first.
///
/// Body `j + 1` sits at its joint origin: parent transform, then the joint
/// offset, then the joint rotation.
pub fn forward_kinematics(ch: &CharacterModel, pose: &Pose) -> Result<Vec<BodyTransform>> {
    pose.validate(ch)?;
    Ok(forward_kinematics_unchecked(ch, pose))
}

pub(crate) fn forward_kinematics_unchecked(ch: &CharacterModel, pose: &Pose) -> Vec<BodyTransform> {
    let mut out = Vec::with_capacity(ch.num_bodies());
    out.push(BodyTransform {
        pos: pose.root_pos,
        rot: pose.root_rot,
    });
    for (j, spec) in ch.joints.iter().enumerate() {
        let parent = out[ch.parent_body(j)];
        let pos = parent.apply(&spec.offset);
        let rot = parent.rot * pose.joints[j].rotation(&spec.axis);
        out.push(BodyTransform { pos, rot });
    }
    out
}

/// Body positions only.
pub fn body_positions(ch: &CharacterModel, pose: &Pose) -> Vec<Vector3<f64>> {
    forward_kinematics_unchecked(ch, pose).into_iter().map(|t| t.pos).collect()
}
