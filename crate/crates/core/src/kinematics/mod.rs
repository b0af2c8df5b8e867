//! Rotation math, character models, motion clips and forward kinematics.

pub mod character;
pub mod fk;
pub mod motion;
pub mod pose;
pub mod rotation;

pub use character::{BodySpec, CharacterModel, Geometry, JointKind, JointSpec};
pub use fk::{body_positions, forward_kinematics, BodyTransform};
pub use motion::{LoopMode, MotionClip, MotionLibrary};
pub use pose::{JointValue, Pose, PoseVelocity};
pub use rotation::{exp_map_to_quat, quat_to_exp_map, slerp, ExpMap, Quat, UP};
