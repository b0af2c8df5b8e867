use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::character::{CharacterModel, JointKind};
use super::rotation::Quat;
use crate::error::{Error, Result};

/// Rotation state of one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum JointValue {
    Ball(Quat),
    Hinge(f64),
    Fixed,
}

impl JointValue {
    pub fn zero(kind: JointKind) -> Self {
        match kind {
            JointKind::Spherical => JointValue::Ball(Quat::IDENTITY),
            JointKind::Revolute => JointValue::Hinge(0.0),
            JointKind::Fixed => JointValue::Fixed,
        }
    }

    pub fn kind(&self) -> JointKind {
        match self {
            JointValue::Ball(_) => JointKind::Spherical,
            JointValue::Hinge(_) => JointKind::Revolute,
            JointValue::Fixed => JointKind::Fixed,
        }
    }

    /// Local rotation given the joint axis (used by revolute joints only).
    pub fn rotation(&self, axis: &Vector3<f64>) -> Quat {
        match self {
            JointValue::Ball(q) => *q,
            JointValue::Hinge(a) => Quat::from_axis_angle(axis, *a),
            JointValue::Fixed => Quat::IDENTITY,
        }
    }
}

/// Root transform plus per-joint rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub root_pos: Vector3<f64>,
    pub root_rot: Quat,
    pub joints: Vec<JointValue>,
}

/// Root linear/angular velocity (world frame) plus per-dof joint velocities.
/// Spherical joints contribute their local angular velocity (3 entries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseVelocity {
    pub root_lin: Vector3<f64>,
    pub root_ang: Vector3<f64>,
    pub dof: Vec<f64>,
}

impl PoseVelocity {
    pub fn zeros(dof_count: usize) -> Self {
        PoseVelocity {
            root_lin: Vector3::zeros(),
            root_ang: Vector3::zeros(),
            dof: vec![0.0; dof_count],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.root_lin.iter().chain(self.root_ang.iter()).chain(self.dof.iter()).all(|v| v.is_finite())
    }
}

impl Pose {
    pub fn zero(ch: &CharacterModel) -> Self {
        Pose {
            root_pos: Vector3::zeros(),
            root_rot: Quat::IDENTITY,
            joints: ch.joints.iter().map(|j| JointValue::zero(j.kind)).collect(),
        }
    }

    pub fn validate(&self, ch: &CharacterModel) -> Result<()> {
        if self.joints.len() != ch.num_joints() {
            return Err(Error::invalid(format!(
                "pose has {} joints, character {} has {}",
                self.joints.len(),
                ch.name,
                ch.num_joints()
            )));
        }
        for (j, (v, spec)) in self.joints.iter().zip(&ch.joints).enumerate() {
            if v.kind() != spec.kind {
                return Err(Error::invalid(format!(
                    "joint {j} ({}) expects {:?}, pose has {:?}",
                    spec.name,
                    spec.kind,
                    v.kind()
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.root_pos.iter().all(|v| v.is_finite())
            && self.root_rot.is_finite()
            && self.joints.iter().all(|j| match j {
                JointValue::Ball(q) => q.is_finite(),
                JointValue::Hinge(a) => a.is_finite(),
                JointValue::Fixed => true,
            })
    }

    /// Decodes a motion frame row.
    pub fn from_frame(kinds: &[JointKind], row: &[f64]) -> Result<Self> {
        let width = 6 + kinds.iter().map(|k| k.dof()).sum::<usize>();
        if row.len() != width {
            return Err(Error::invalid(format!("frame width {} != {width}", row.len())));
        }
        let root_pos = Vector3::new(row[0], row[1], row[2]);
        let root_rot = Quat::from_scaled_axis(&Vector3::new(row[3], row[4], row[5]));
        let mut joints = Vec::with_capacity(kinds.len());
        Self::decode_dofs(kinds, &row[6..], &mut joints);
        Ok(Pose {
            root_pos,
            root_rot,
            joints,
        })
    }

    fn decode_dofs(kinds: &[JointKind], dofs: &[f64], out: &mut Vec<JointValue>) {
        let mut i = 0;
        for k in kinds {
            match k {
                JointKind::Spherical => {
                    let v = Vector3::new(dofs[i], dofs[i + 1], dofs[i + 2]);
                    out.push(JointValue::Ball(Quat::from_scaled_axis(&v)));
                }
                JointKind::Revolute => out.push(JointValue::Hinge(dofs[i])),
                JointKind::Fixed => out.push(JointValue::Fixed),
            }
            i += k.dof();
        }
    }

    /// Encodes as a motion frame row with canonical exponential maps.
    pub fn to_frame(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(6 + 3 * self.joints.len());
        row.extend_from_slice(self.root_pos.as_slice());
        row.extend_from_slice(self.root_rot.scaled_axis().as_slice());
        row.extend(self.dof_values());
        row
    }

    /// Joint coordinates: exponential maps for spherical joints, angles for
    /// revolute joints.
    pub fn dof_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(3 * self.joints.len());
        for j in &self.joints {
            match j {
                JointValue::Ball(q) => out.extend_from_slice(q.scaled_axis().as_slice()),
                JointValue::Hinge(a) => out.push(*a),
                JointValue::Fixed => {}
            }
        }
        out
    }

    /// Replaces joint coordinates from a dof vector (same layout as
    /// [`Pose::dof_values`]).
    pub fn set_dof_values(&mut self, dofs: &[f64]) -> Result<()> {
        let kinds: Vec<JointKind> = self.joints.iter().map(|j| j.kind()).collect();
        let n: usize = kinds.iter().map(|k| k.dof()).sum();
        if dofs.len() != n {
            return Err(Error::invalid(format!("dof vector length {} != {n}", dofs.len())));
        }
        let mut joints = Vec::with_capacity(kinds.len());
        Self::decode_dofs(&kinds, dofs, &mut joints);
        self.joints = joints;
        Ok(())
    }
}
