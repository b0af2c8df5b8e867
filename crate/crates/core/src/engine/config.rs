use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{CharacterModel, JointKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Pose commands are written straight into the state.
    Kinematic,
    /// Reduced-coordinate rigid-body dynamics in the x-y plane.
    PlanarDynamics,
}

/// How a command vector is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Commands are ignored.
    None,
    /// PD targets for revolute and spherical joints.
    Pos,
    /// Joint velocity targets, imposed kinematically.
    Vel,
    /// Joint torques.
    Torque,
    /// PD targets for characters built only from revolute joints.
    #[serde(rename = "pd_1d")]
    Pd1d,
}

/// Penalty ground contact parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContactParams {
    /// Normal stiffness, N/m.
    pub kn: f64,
    /// Normal damping, N·s/m.
    pub dn: f64,
    /// Coulomb friction coefficient capping the tangential force.
    pub friction: f64,
    /// Tangential damping, N·s/m.
    pub tangential_damping: f64,
    /// Height slack for the contact flag, m.
    pub tolerance: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            kn: 3e4,
            dn: 300.0,
            friction: 1.0,
            tangential_damping: 1000.0,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub backend: BackendKind,
    pub control_mode: ControlMode,
    /// Hz.
    pub control_freq: f64,
    /// Hz; a positive integer multiple of `control_freq`.
    pub sim_freq: f64,
    /// m/s².
    pub gravity: Vector3<f64>,
    /// m.
    pub ground_height: f64,
    pub contact: ContactParams,
    /// Standard deviation of additive noise on kinematic pose commands.
    pub action_noise: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            backend: BackendKind::PlanarDynamics,
            control_mode: ControlMode::Pos,
            control_freq: 30.0,
            sim_freq: 600.0,
            gravity: Vector3::new(0.0, -9.81, 0.0),
            ground_height: 0.0,
            contact: ContactParams::default(),
            action_noise: 0.0,
        }
    }
}

impl EngineConfig {
    pub fn substeps(&self) -> Result<usize> {
        if !(self.control_freq > 0.0 && self.sim_freq > 0.0) {
            return Err(Error::Config("control_freq and sim_freq must be positive".into()));
        }
        let ratio = self.sim_freq / self.control_freq;
        let r = ratio.round();
        if r < 1.0 || (ratio - r).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "sim_freq {} is not an integer multiple of control_freq {}",
                self.sim_freq, self.control_freq
            )));
        }
        Ok(r as usize)
    }

    /// Control period in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.control_freq
    }

    /// Checks the configuration against a character.
    pub fn validate(&self, ch: &CharacterModel) -> Result<()> {
        self.substeps()?;
        if !self.gravity.iter().all(|g| g.is_finite()) || !self.ground_height.is_finite() {
            return Err(Error::Config("gravity and ground_height must be finite".into()));
        }
        if self.control_mode == ControlMode::Pd1d && ch.has_spherical() {
            return Err(Error::Config(format!(
                "pd_1d control requires only revolute joints; character {} has spherical joints",
                ch.name
            )));
        }
        match self.backend {
            BackendKind::Kinematic => {
                if self.control_mode == ControlMode::Torque {
                    return Err(Error::Config("the kinematic backend cannot apply torques".into()));
                }
            }
            BackendKind::PlanarDynamics => {
                for j in &ch.joints {
                    if j.kind != JointKind::Revolute {
                        return Err(Error::Config(format!(
                            "planar dynamics supports revolute joints only; {} is {:?}",
                            j.name, j.kind
                        )));
                    }
                    if j.axis.x.abs() > 1e-9 || j.axis.y.abs() > 1e-9 {
                        return Err(Error::Config(format!(
                            "planar dynamics needs z-axis joints; {} has axis {:?}",
                            j.name, j.axis
                        )));
                    }
                    if j.offset.z.abs() > 1e-12 {
                        return Err(Error::Config(format!("joint {} leaves the x-y plane", j.name)));
                    }
                }
            }
        }
        Ok(())
    }
}
