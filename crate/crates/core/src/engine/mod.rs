//! Simulation engine: a single stepping interface over interchangeable
//! backends.
//!
//! A command is a vector of length `dof_count` whose meaning depends on the
//! [`ControlMode`]: joint coordinates (exp-maps for spherical joints, angles
//! for revolute) in `pos`/`pd_1d`, joint velocities in `vel`, joint torques in
//! `torque`.

pub mod config;
pub mod pd;
mod planar;

use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{BackendKind, ContactParams, ControlMode, EngineConfig};
pub use pd::{pd_torque, pd_torque_spherical};

use crate::error::{Error, Result};
use crate::kinematics::fk::forward_kinematics_unchecked;
use crate::kinematics::motion::finite_difference;
use crate::kinematics::{CharacterModel, JointValue, Pose, PoseVelocity, Quat, UP};
use crate::SimRng;
use planar::PlanarModel;

/// Per-env simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub pose: Pose,
    pub vel: PoseVelocity,
    /// Per body: lowest point within tolerance of the ground.
    pub contacts: Vec<bool>,
    /// Set when a command or the integration produced non-finite values.
    pub failed: bool,
}

impl SimState {
    pub fn is_finite(&self) -> bool {
        self.pose.is_finite() && self.vel.is_finite()
    }
}

pub struct Engine {
    cfg: EngineConfig,
    character: Arc<CharacterModel>,
    substeps: usize,
    planar: Option<PlanarModel>,
    probes: Vec<Vec<(Vector3<f64>, f64)>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("cfg", &self.cfg)
            .field("character", &self.character.name)
            .finish()
    }
}

impl Engine {
    pub fn new(cfg: EngineConfig, character: Arc<CharacterModel>) -> Result<Self> {
        cfg.validate(&character)?;
        let substeps = cfg.substeps()?;
        let planar = match cfg.backend {
            BackendKind::PlanarDynamics => Some(PlanarModel::new(&character)),
            BackendKind::Kinematic => None,
        };
        let probes = character.bodies.iter().map(|b| b.geometry.probes()).collect();
        Ok(Engine {
            cfg,
            character,
            substeps,
            planar,
            probes,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn character(&self) -> &Arc<CharacterModel> {
        &self.character
    }

    /// Control period, seconds.
    pub fn dt(&self) -> f64 {
        self.cfg.dt()
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn command_dim(&self) -> usize {
        self.character.dof_count()
    }

    /// Builds a state from a pose and velocity, filling in contact flags.
    pub fn make_state(&self, pose: Pose, vel: PoseVelocity) -> Result<SimState> {
        pose.validate(&self.character)?;
        if vel.dof.len() != self.character.dof_count() {
            return Err(Error::invalid(format!(
                "velocity has {} dofs, character has {}",
                vel.dof.len(),
                self.character.dof_count()
            )));
        }
        let mut s = SimState {
            contacts: vec![false; self.character.num_bodies()],
            pose,
            vel,
            failed: false,
        };
        self.update_contacts(&mut s);
        Ok(s)
    }

    pub fn update_contacts(&self, s: &mut SimState) {
        let fk = forward_kinematics_unchecked(&self.character, &s.pose);
        let limit = self.cfg.ground_height + self.cfg.contact.tolerance;
        s.contacts = fk
            .iter()
            .zip(&self.probes)
            .map(|(t, probes)| {
                probes
                    .iter()
                    .map(|(p, r)| UP.dot(&t.apply(p)) - r)
                    .fold(f64::INFINITY, f64::min)
                    <= limit
            })
            .collect();
    }

    /// Advances one control period.
    ///
    /// A command of the wrong length is an error; a non-finite command flags
    /// the state as failed and leaves it otherwise untouched.
    pub fn step(&self, s: &mut SimState, command: &[f64], noise: &mut SimRng) -> Result<()> {
        if command.len() != self.command_dim() {
            return Err(Error::invalid(format!(
                "command length {} != {}",
                command.len(),
                self.command_dim()
            )));
        }
        if command.iter().any(|c| !c.is_finite()) {
            s.failed = true;
            return Ok(());
        }
        match &self.planar {
            Some(model) => self.step_planar(model, s, command),
            None => self.step_kinematic(s, command, noise),
        }
        if !s.is_finite() {
            s.failed = true;
        } else {
            self.update_contacts(s);
        }
        Ok(())
    }

    fn step_planar(&self, model: &PlanarModel, s: &mut SimState, command: &[f64]) {
        let h = self.dt() / self.substeps as f64;
        let g = Vector2::new(self.cfg.gravity.x, self.cfg.gravity.y);
        let mut c = model.coords(s);
        for _ in 0..self.substeps {
            model.substep(
                &mut c,
                self.cfg.control_mode,
                command,
                &g,
                self.cfg.ground_height,
                &self.cfg.contact,
                h,
            );
        }
        model.write_back(&c, s);
    }

    fn step_kinematic(&self, s: &mut SimState, command: &[f64], noise: &mut SimRng) {
        let dt = self.dt();
        match self.cfg.control_mode {
            ControlMode::None | ControlMode::Torque => {}
            ControlMode::Pos | ControlMode::Pd1d => {
                let mut target = command.to_vec();
                if self.cfg.action_noise > 0.0 {
                    let n = Normal::new(0.0, self.cfg.action_noise).expect("finite sigma");
                    for t in &mut target {
                        *t += n.sample(noise);
                    }
                }
                let before = s.pose.clone();
                s.pose.set_dof_values(&target).expect("validated command length");
                s.vel.dof = finite_difference(&before, &s.pose, dt).dof;
            }
            ControlMode::Vel => {
                let h = dt / self.substeps as f64;
                let offsets = self.character.dof_offsets();
                for _ in 0..self.substeps {
                    for (j, v) in s.pose.joints.iter_mut().enumerate() {
                        let o = offsets[j];
                        match v {
                            JointValue::Ball(q) => {
                                let w = Vector3::new(command[o], command[o + 1], command[o + 2]);
                                *q = (*q * Quat::from_scaled_axis(&(w * h))).normalize();
                            }
                            JointValue::Hinge(a) => *a += command[o] * h,
                            JointValue::Fixed => {}
                        }
                    }
                }
                s.vel.dof.copy_from_slice(command);
            }
        }
    }

    /// Kinetic plus potential energy (planar backend only).
    pub fn mechanical_energy(&self, s: &SimState) -> Option<f64> {
        let model = self.planar.as_ref()?;
        let c = model.coords(s);
        let g = Vector2::new(self.cfg.gravity.x, self.cfg.gravity.y);
        Some(model.kinetic_energy(&c) + model.potential_energy(&c, &g))
    }
}

/// Steps a batch of states in parallel. Results do not depend on the thread
/// schedule.
pub fn engine_step(
    engine: &Engine,
    states: &mut [SimState],
    commands: &[Vec<f64>],
    noise: &mut [SimRng],
) -> Result<()> {
    if states.len() != commands.len() || states.len() != noise.len() {
        return Err(Error::invalid(format!(
            "batch sizes differ: {} states, {} commands",
            states.len(),
            commands.len()
        )));
    }
    if let Some(c) = commands.iter().find(|c| c.len() != engine.command_dim()) {
        return Err(Error::invalid(format!(
            "command length {} != {}",
            c.len(),
            engine.command_dim()
        )));
    }
    states
        .par_iter_mut()
        .zip(commands.par_iter())
        .zip(noise.par_iter_mut())
        .try_for_each(|((s, c), r)| engine.step(s, c, r))
}

/// Engine plus the per-env states it owns.
#[derive(Debug)]
pub struct SimBatch {
    engine: Arc<Engine>,
    states: Vec<SimState>,
    noise: Vec<SimRng>,
}

impl SimBatch {
    pub fn new(engine: Arc<Engine>, initial: SimState, num_envs: usize, seed: u64) -> Self {
        let noise = (0..num_envs)
            .map(|i| SimRng::seed_from_u64(seed.wrapping_add(0x9E37_79B9 * i as u64)))
            .collect();
        SimBatch {
            engine,
            states: vec![initial; num_envs],
            noise,
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[SimState] {
        &self.states
    }

    pub fn get_state(&self, env: usize) -> Result<&SimState> {
        self.states
            .get(env)
            .ok_or_else(|| Error::invalid(format!("env index {env} out of range 0..{}", self.states.len())))
    }

    pub fn set_state(&mut self, env: usize, state: SimState) -> Result<()> {
        let n = self.states.len();
        state.pose.validate(self.engine.character())?;
        let slot = self
            .states
            .get_mut(env)
            .ok_or_else(|| Error::invalid(format!("env index {env} out of range 0..{n}")))?;
        *slot = state;
        Ok(())
    }

    pub fn step(&mut self, commands: &[Vec<f64>]) -> Result<()> {
        engine_step(&self.engine, &mut self.states, commands, &mut self.noise)
    }
}
