//! Vectorized environments: observation construction, action processing,
//! rewards, termination and reference-motion synchronization.
//!
//! A step that ends an episode returns the terminal observation in
//! [`StepResult::obs`]; the env is reset before `step` returns and the fresh
//! observation is carried in [`StepResult::reset_obs`].

pub mod features;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{ControlMode, Engine, EngineConfig, SimState};
use crate::error::{Error, Result};
use crate::eval::metrics::pose_errors;
use crate::kinematics::fk::forward_kinematics_unchecked;
use crate::kinematics::{CharacterModel, LoopMode, MotionLibrary, Pose, PoseVelocity, UP};
use crate::SimRng;
pub use features::TrackingWeights;

/// Why an episode ended, if it did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
#[repr(u8)]
pub enum DoneFlag {
    Null = 0,
    Fail = 1,
    Succ = 2,
    Time = 3,
}

impl DoneFlag {
    pub fn is_done(self) -> bool {
        self != DoneFlag::Null
    }

    /// Combines simultaneous conditions: FAIL beats SUCC beats TIME.
    pub fn resolve(fail: bool, succ: bool, time: bool) -> Self {
        if fail {
            DoneFlag::Fail
        } else if succ {
            DoneFlag::Succ
        } else if time {
            DoneFlag::Time
        } else {
            DoneFlag::Null
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DoneFlag::Null),
            1 => Some(DoneFlag::Fail),
            2 => Some(DoneFlag::Succ),
            3 => Some(DoneFlag::Time),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: DoneFlag,
    /// Auxiliary vectors: `disc_obs`, `add_delta`, `e_pos`, `e_vel`.
    pub info: BTreeMap<String, Vec<f64>>,
    /// Observation after the automatic reset when `done` is set.
    pub reset_obs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Deepmimic,
    Amp,
    Add,
    TargetLocation,
    ViewMotion,
    /// Raise the last body above the root; no reference motion.
    SwingUp,
}

impl TaskKind {
    pub fn is_tracking(self) -> bool {
        matches!(self, TaskKind::Deepmimic | TaskKind::Add | TaskKind::ViewMotion)
    }

    pub fn needs_motion(self) -> bool {
        !matches!(self, TaskKind::SwingUp | TaskKind::TargetLocation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseErrorTermination {
    pub enabled: bool,
    /// m.
    pub threshold: f64,
}

impl Default for PoseErrorTermination {
    fn default() -> Self {
        PoseErrorTermination {
            enabled: true,
            threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetParams {
    /// m.
    pub radius: f64,
    /// s inside the radius before success.
    pub dwell: f64,
    pub min_distance: f64,
    pub max_distance: f64,
}

impl Default for TargetParams {
    fn default() -> Self {
        TargetParams {
            radius: 0.3,
            dwell: 0.5,
            min_distance: 1.0,
            max_distance: 5.0,
        }
    }
}

/// Swing-up reward shaping: uprightness is scaled by
/// `exp(-velocity_penalty · |q̇|²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwingUpParams {
    pub velocity_penalty: f64,
}

impl Default for SwingUpParams {
    fn default() -> Self {
        SwingUpParams { velocity_penalty: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub task: TaskKind,
    /// Character JSON, relative to the config file.
    pub character_file: Option<PathBuf>,
    /// Clip or dataset file, relative to the config file.
    pub motion_file: Option<PathBuf>,
    /// s.
    pub episode_length: f64,
    /// Random reference-time initialization; defaults on for tracking tasks.
    pub rsi: Option<bool>,
    pub pose_error_termination: PoseErrorTermination,
    /// Bodies whose ground contact fails the episode; defaults to every
    /// body except the feet.
    pub contact_termination_bodies: Option<Vec<String>>,
    /// Root height below which the episode fails.
    pub fall_height: Option<f64>,
    /// Root height of the default pose used by tasks without a reference.
    pub init_root_height: f64,
    /// Half-width of the uniform noise on default-pose joint coordinates.
    pub init_noise: f64,
    /// Multiplier from policy action to command.
    pub action_scale: f64,
    pub engine: EngineConfig,
    pub reward: TrackingWeights,
    pub target: TargetParams,
    pub swing_up: SwingUpParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            task: TaskKind::Deepmimic,
            character_file: None,
            motion_file: None,
            episode_length: 10.0,
            rsi: None,
            pose_error_termination: PoseErrorTermination::default(),
            contact_termination_bodies: None,
            fall_height: None,
            init_root_height: 1.0,
            init_noise: 0.05,
            action_scale: 1.0,
            engine: EngineConfig::default(),
            reward: TrackingWeights::default(),
            target: TargetParams::default(),
            swing_up: SwingUpParams::default(),
        }
    }
}

impl EnvConfig {
    /// Reads a JSON or YAML config (by extension; YAML otherwise).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_config(path.as_ref())
    }

    pub fn rsi_enabled(&self) -> bool {
        self.rsi.unwrap_or(matches!(self.task, TaskKind::Deepmimic | TaskKind::Add))
    }
}

/// Discriminator features of `count` reference transitions, each starting
/// at a uniformly drawn clip and time.
pub fn reference_transitions(
    lib: &MotionLibrary,
    ch: &CharacterModel,
    dt: f64,
    count: usize,
    rng: &mut SimRng,
) -> Result<Vec<Vec<f64>>> {
    (0..count)
        .map(|_| {
            let clip = lib.clip(lib.sample_clip(rng));
            let span = match clip.loop_mode() {
                LoopMode::Wrap => clip.duration(),
                LoopMode::None => (clip.duration() - dt).max(0.0),
            };
            let t = if span > 0.0 { rng.random_range(0.0..span) } else { 0.0 };
            let (p0, _) = clip.sample_pose(t)?;
            let (p1, _) = clip.sample_pose(t + dt)?;
            Ok(features::amp_observation_pair(ch, &p0, &p1, dt))
        })
        .collect()
}

pub(crate) fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    } else {
        serde_yaml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Serializable generator position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(r: &SimRng) -> Self {
        RngState {
            seed: r.get_seed(),
            stream: r.get_stream(),
            word_pos: r.get_word_pos(),
        }
    }

    pub fn restore(&self) -> SimRng {
        let mut r = SimRng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

/// Per-env episode bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSlot {
    pub state: SimState,
    pub prev_pose: Pose,
    /// s since reset.
    pub time: f64,
    pub clip: usize,
    /// Reference time at reset.
    pub t0: f64,
    pub goal: [f64; 2],
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub slots: Vec<EnvSlot>,
    pub rngs: Vec<RngState>,
}

struct Shared {
    cfg: EnvConfig,
    engine: Engine,
    character: Arc<CharacterModel>,
    motions: Option<Arc<MotionLibrary>>,
    termination_bodies: Vec<usize>,
    obs_dim: usize,
}

pub struct VecEnv {
    shared: Shared,
    slots: Vec<EnvSlot>,
    rngs: Vec<SimRng>,
}

impl std::fmt::Debug for VecEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VecEnv")
            .field("task", &self.shared.cfg.task)
            .field("num_envs", &self.slots.len())
            .finish()
    }
}

impl VecEnv {
    /// Loads the character and motion named by `cfg`, resolving paths
    /// against `base_dir`.
    pub fn from_config(cfg: EnvConfig, base_dir: &Path, num_envs: usize, seed: u64) -> Result<Self> {
        let ch_path = cfg
            .character_file
            .as_ref()
            .ok_or_else(|| Error::Config("env config needs character_file".into()))?;
        let ch = Arc::new(CharacterModel::load(base_dir.join(ch_path))?);
        let motions = match &cfg.motion_file {
            Some(m) => Some(Arc::new(MotionLibrary::load(base_dir.join(m), &ch)?)),
            None => None,
        };
        Self::new(cfg, ch, motions, num_envs, seed)
    }

    pub fn new(
        cfg: EnvConfig,
        character: Arc<CharacterModel>,
        motions: Option<Arc<MotionLibrary>>,
        num_envs: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_envs == 0 {
            return Err(Error::Config("num_envs must be at least 1".into()));
        }
        if cfg.task.needs_motion() && motions.is_none() {
            return Err(Error::Config(format!("task {:?} needs a motion_file", cfg.task)));
        }
        if !(cfg.episode_length > 0.0) {
            return Err(Error::Config("episode_length must be positive".into()));
        }
        let mut engine_cfg = cfg.engine.clone();
        if cfg.task == TaskKind::ViewMotion {
            engine_cfg.control_mode = ControlMode::None;
        }
        let engine = Engine::new(engine_cfg, character.clone())?;
        let termination_bodies = match &cfg.contact_termination_bodies {
            Some(names) => names
                .iter()
                .map(|n| {
                    character
                        .body_index(n)
                        .ok_or_else(|| Error::Config(format!("unknown body {n} in contact_termination_bodies")))
                })
                .collect::<Result<Vec<_>>>()?,
            None => (0..character.num_bodies())
                .filter(|&b| !character.feet.contains(&character.bodies[b].name))
                .collect(),
        };
        let obs_dim = features::proprio_dim(&character)
            + match cfg.task {
                TaskKind::Deepmimic | TaskKind::Add => features::reference_dim(&character),
                TaskKind::TargetLocation => 2,
                _ => 0,
            };
        let shared = Shared {
            cfg,
            engine,
            character,
            motions,
            termination_bodies,
            obs_dim,
        };
        let mut rngs: Vec<SimRng> = (0..num_envs)
            .map(|i| {
                let mut r = SimRng::seed_from_u64(seed);
                r.set_stream(i as u64);
                r
            })
            .collect();
        let slots = rngs
            .iter_mut()
            .map(|r| shared.reset_slot(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(VecEnv { shared, slots, rngs })
    }

    pub fn num_envs(&self) -> usize {
        self.slots.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.shared.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.shared.character.dof_count()
    }

    pub fn dt(&self) -> f64 {
        self.shared.engine.dt()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.shared.cfg
    }

    pub fn character(&self) -> &Arc<CharacterModel> {
        &self.shared.character
    }

    pub fn motions(&self) -> Option<&Arc<MotionLibrary>> {
        self.shared.motions.as_ref()
    }

    pub fn engine(&self) -> &Engine {
        &self.shared.engine
    }

    pub fn slots(&self) -> &[EnvSlot] {
        &self.slots
    }

    /// Current observations of all envs.
    pub fn observe(&self) -> Vec<Vec<f64>> {
        self.slots.iter().map(|s| self.shared.observe(s)).collect()
    }

    /// Resets every env.
    pub fn reset_all(&mut self) -> Result<Vec<Vec<f64>>> {
        let idx: Vec<usize> = (0..self.num_envs()).collect();
        self.reset(&idx)
    }

    /// Resets the listed envs and returns their observations in order.
    pub fn reset(&mut self, indices: &[usize]) -> Result<Vec<Vec<f64>>> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.num_envs()) {
            return Err(Error::invalid(format!("env index {i} out of range 0..{}", self.num_envs())));
        }
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            self.slots[i] = self.shared.reset_slot(&mut self.rngs[i])?;
            out.push(self.shared.observe(&self.slots[i]));
        }
        Ok(out)
    }

    /// Advances every env by one control period.
    pub fn step(&mut self, actions: &[Vec<f64>]) -> Result<Vec<StepResult>> {
        if actions.len() != self.num_envs() {
            return Err(Error::invalid(format!(
                "{} actions for {} envs",
                actions.len(),
                self.num_envs()
            )));
        }
        let adim = self.action_dim();
        if let Some(a) = actions.iter().find(|a| a.len() != adim) {
            return Err(Error::invalid(format!("action length {} != {adim}", a.len())));
        }
        let shared = &self.shared;
        self.slots
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .zip(actions.par_iter())
            .map(|((slot, rng), a)| shared.step_slot(slot, rng, a))
            .collect()
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot {
            slots: self.slots.clone(),
            rngs: self.rngs.iter().map(RngState::capture).collect(),
        }
    }

    pub fn restore(&mut self, snap: &EnvSnapshot) -> Result<()> {
        if snap.slots.len() != self.num_envs() || snap.rngs.len() != self.num_envs() {
            return Err(Error::Checkpoint(format!(
                "snapshot holds {} envs, expected {}",
                snap.slots.len(),
                self.num_envs()
            )));
        }
        for s in &snap.slots {
            s.state.pose.validate(&self.shared.character)?;
        }
        self.slots = snap.slots.clone();
        self.rngs = snap.rngs.iter().map(RngState::restore).collect();
        Ok(())
    }

    /// Reference pose for env `i` at its current time, if the task has one.
    pub fn reference(&self, i: usize) -> Option<(Pose, PoseVelocity)> {
        self.shared.reference_at(&self.slots[i], self.slots[i].time)
    }
}

impl Shared {
    fn clip_duration(&self, slot: &EnvSlot) -> Option<(f64, LoopMode)> {
        let lib = self.motions.as_ref()?;
        let c = lib.clip(slot.clip);
        Some((c.duration(), c.loop_mode()))
    }

    fn reference_at(&self, slot: &EnvSlot, time: f64) -> Option<(Pose, PoseVelocity)> {
        let lib = self.motions.as_ref()?;
        let t = (slot.t0 + time).max(0.0);
        Some(lib.clip(slot.clip).sample_pose(t).expect("non-negative time"))
    }

    fn reset_slot(&self, rng: &mut SimRng) -> Result<EnvSlot> {
        let ch = &self.character;
        let (pose, vel, clip, t0) = match (&self.motions, self.cfg.task.is_tracking()) {
            (Some(lib), true) => {
                let clip = lib.sample_clip(rng);
                let c = lib.clip(clip);
                let t0 = if self.cfg.rsi_enabled() && c.duration() > 0.0 {
                    rng.random_range(0.0..c.duration())
                } else {
                    0.0
                };
                let (p, v) = c.sample_pose(t0)?;
                (p, v, clip, t0)
            }
            _ => {
                let mut p = Pose::zero(ch);
                p.root_pos = UP * self.cfg.init_root_height;
                let n = self.cfg.init_noise;
                let dofs: Vec<f64> = (0..ch.dof_count())
                    .map(|_| if n > 0.0 { rng.random_range(-n..n) } else { 0.0 })
                    .collect();
                p.set_dof_values(&dofs)?;
                (p, PoseVelocity::zeros(ch.dof_count()), 0, 0.0)
            }
        };
        let goal = if self.cfg.task == TaskKind::TargetLocation {
            let tp = &self.cfg.target;
            let ang = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let dist = if tp.max_distance > tp.min_distance {
                rng.random_range(tp.min_distance..tp.max_distance)
            } else {
                tp.min_distance
            };
            [pose.root_pos.x + dist * ang.cos(), pose.root_pos.z + dist * ang.sin()]
        } else {
            [0.0, 0.0]
        };
        let state = self.engine.make_state(pose.clone(), vel)?;
        Ok(EnvSlot {
            state,
            prev_pose: pose,
            time: 0.0,
            clip,
            t0,
            goal,
            dwell: 0.0,
        })
    }

    fn observe(&self, slot: &EnvSlot) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.obs_dim);
        features::proprio_obs(&self.character, &slot.state, &mut out);
        match self.cfg.task {
            TaskKind::Deepmimic | TaskKind::Add => {
                let dt = self.engine.dt();
                let (next, _) = self.reference_at(slot, slot.time + dt).expect("tracking task has motion");
                let phase = match self.clip_duration(slot) {
                    Some((d, _)) if d > 0.0 => ((slot.t0 + slot.time + dt) / d).fract(),
                    _ => 0.0,
                };
                features::reference_obs(&slot.state, &next, phase, &mut out);
            }
            TaskKind::TargetLocation => {
                let g = Vector2::new(slot.goal[0], slot.goal[1]);
                let local = features::target_local(&slot.state.pose.root_pos, &slot.state.pose.root_rot, &g);
                out.extend_from_slice(local.as_slice());
            }
            _ => {}
        }
        out
    }

    /// Maps a policy action to an engine command.
    fn command(&self, slot: &EnvSlot, action: &[f64]) -> Vec<f64> {
        let scale = self.cfg.action_scale;
        match self.engine.config().control_mode {
            ControlMode::None => vec![0.0; action.len()],
            ControlMode::Pos | ControlMode::Pd1d => {
                let base = if matches!(self.cfg.task, TaskKind::Deepmimic | TaskKind::Add) {
                    let (next, _) = self
                        .reference_at(slot, slot.time + self.engine.dt())
                        .expect("tracking task has motion");
                    next.dof_values()
                } else {
                    vec![0.0; action.len()]
                };
                base.iter().zip(action).map(|(b, a)| b + scale * a).collect()
            }
            ControlMode::Vel | ControlMode::Torque => action.iter().map(|a| scale * a).collect(),
        }
    }

    fn step_slot(&self, slot: &mut EnvSlot, rng: &mut SimRng, action: &[f64]) -> Result<StepResult> {
        let dt = self.engine.dt();
        let ch = &self.character;
        let before = slot.state.clone();
        let mut fail = false;
        if action.iter().any(|a| !a.is_finite()) {
            fail = true;
        } else if self.cfg.task == TaskKind::ViewMotion {
            let (p, v) = self.reference_at(slot, slot.time + dt).expect("view_motion has motion");
            slot.state = self.engine.make_state(p, v)?;
        } else {
            let cmd = self.command(slot, action);
            self.engine.step(&mut slot.state, &cmd, rng)?;
            if slot.state.failed {
                fail = true;
                slot.state = before.clone();
            }
        }
        slot.time += dt;
        slot.prev_pose = before.pose.clone();

        let mut info = BTreeMap::new();
        let mut reward = 0.0;
        let mut succ = false;
        let reference = if self.cfg.task.needs_motion() {
            self.reference_at(slot, slot.time)
        } else {
            None
        };
        let s = &slot.state;
        if let Some((rp, rv)) = &reference {
            let (ep, ev) = pose_errors(ch, (&s.pose, &s.vel), (rp, rv));
            info.insert("e_pos".to_string(), vec![ep]);
            info.insert("e_vel".to_string(), vec![ev]);
            if self.cfg.task.is_tracking()
                && self.cfg.task != TaskKind::ViewMotion
                && self.cfg.pose_error_termination.enabled
                && ep > self.cfg.pose_error_termination.threshold
            {
                fail = true;
            }
        }
        match self.cfg.task {
            TaskKind::Deepmimic | TaskKind::Add => {
                let (rp, rv) = reference.as_ref().expect("tracking task has motion");
                reward = features::tracking_reward(ch, (&s.pose, &s.vel), (rp, rv), &self.cfg.reward);
                if self.cfg.task == TaskKind::Add {
                    info.insert(
                        "add_delta".to_string(),
                        features::add_difference_obs((&s.pose, &s.vel), (rp, rv)),
                    );
                }
            }
            TaskKind::Amp | TaskKind::ViewMotion => {}
            TaskKind::TargetLocation => {
                let g = Vector2::new(slot.goal[0], slot.goal[1]);
                reward = features::target_reward(&s.pose.root_pos, &g);
                if (features::ground_xy(&s.pose.root_pos) - g).norm() <= self.cfg.target.radius {
                    slot.dwell += dt;
                } else {
                    slot.dwell = 0.0;
                }
                succ = slot.dwell >= self.cfg.target.dwell - 1e-9;
            }
            TaskKind::SwingUp => {
                let fk = forward_kinematics_unchecked(ch, &s.pose);
                let last = ch.num_bodies() - 1;
                let tip = fk[last].apply(&ch.bodies[last].com);
                let d = tip - s.pose.root_pos;
                let n = d.norm();
                let up = if n > 0.0 { 0.5 * (1.0 + UP.dot(&d) / n) } else { 0.5 };
                let speed2: f64 = s.vel.dof.iter().map(|v| v * v).sum();
                reward = up * (-self.cfg.swing_up.velocity_penalty * speed2).exp();
            }
        }
        if matches!(self.cfg.task, TaskKind::Amp | TaskKind::TargetLocation | TaskKind::ViewMotion) {
            info.insert(
                "disc_obs".to_string(),
                features::amp_observation_pair(ch, &slot.prev_pose, &s.pose, dt),
            );
        }
        if self.termination_bodies.iter().any(|&b| s.contacts[b]) && self.cfg.task != TaskKind::ViewMotion {
            fail = true;
        }
        if let Some(h) = self.cfg.fall_height {
            if UP.dot(&s.pose.root_pos) < h {
                fail = true;
            }
        }
        let mut time_up = slot.time >= self.cfg.episode_length - 1e-9;
        if let Some((d, LoopMode::None)) = self.clip_duration(slot) {
            if self.cfg.task.is_tracking() && slot.t0 + slot.time >= d - 1e-9 {
                time_up = true;
            }
        }
        let done = DoneFlag::resolve(fail, succ, time_up);
        if done == DoneFlag::Fail {
            reward = 0.0;
        }
        let obs = self.observe(slot);
        let reset_obs = if done.is_done() {
            *slot = self.reset_slot(rng)?;
            Some(self.observe(slot))
        } else {
            None
        };
        Ok(StepResult {
            obs,
            reward,
            done,
            info,
            reset_obs,
        })
    }
}
