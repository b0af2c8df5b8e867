//! Reference motion clips: storage, sampling and file IO.
//!
//! A motion file is UTF-8 JSON:
//!
//! ```json
//! { "fps": 30, "loop": "wrap", "character": "chain3", "frame_width": 9,
//!   "frames": [[...], [...]] }
//! ```
//!
//! Each frame row is `[root position (3), root rotation exp-map (3), joint
//! coordinates in depth-first order]`. A dataset file is a JSON array of
//! `{"file": path, "weight": w}` entries with paths relative to the dataset.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::character::{CharacterModel, JointKind};
use super::pose::{JointValue, Pose, PoseVelocity};
use super::rotation::{slerp_unchecked, UP};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopMode {
    None,
    Wrap,
}

#[derive(Debug, Serialize, Deserialize)]
struct MotionFile {
    fps: f64,
    #[serde(rename = "loop")]
    loop_mode: LoopMode,
    character: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_width: Option<usize>,
    frames: Vec<Vec<f64>>,
}

/// A sampled reference motion.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    fps: f64,
    loop_mode: LoopMode,
    character: String,
    kinds: Vec<JointKind>,
    frames: Vec<Vec<f64>>,
    poses: Vec<Pose>,
}

impl MotionClip {
    pub fn new(
        ch: &CharacterModel,
        fps: f64,
        loop_mode: LoopMode,
        frames: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if frames.is_empty() {
            return Err(Error::invalid("motion clip has no frames"));
        }
        let width = ch.frame_width();
        for (i, row) in frames.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid(format!(
                    "row {i} has width {} but character {} needs {width}",
                    row.len(),
                    ch.name
                )));
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("row {i} column {c} is not finite")));
            }
        }
        let kinds: Vec<JointKind> = ch.joints.iter().map(|j| j.kind).collect();
        let poses = frames
            .iter()
            .map(|r| Pose::from_frame(&kinds, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(MotionClip {
            fps,
            loop_mode,
            character: ch.name.clone(),
            kinds,
            frames,
            poses,
        })
    }

    /// Builds a clip by sampling `pose_at(t)` on the frame grid.
    pub fn from_fn(
        ch: &CharacterModel,
        fps: f64,
        num_frames: usize,
        loop_mode: LoopMode,
        mut pose_at: impl FnMut(f64) -> Pose,
    ) -> Result<Self> {
        let frames = (0..num_frames)
            .map(|i| pose_at(i as f64 / fps).to_frame())
            .collect();
        Self::new(ch, fps, loop_mode, frames)
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn loop_mode(&self) -> LoopMode {
        self.loop_mode
    }

    pub fn character(&self) -> &str {
        &self.character
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn frame_pose(&self, k: usize) -> &Pose {
        &self.poses[k]
    }

    pub fn duration(&self) -> f64 {
        (self.frames.len() - 1) as f64 / self.fps
    }

    fn cycle_offset(&self) -> Vector3<f64> {
        let d = self.poses[self.poses.len() - 1].root_pos - self.poses[0].root_pos;
        d - UP * UP.dot(&d)
    }

    /// Pose at time `t`, with wrap handling for any real `t`.
    fn pose_at(&self, t: f64) -> Pose {
        let n = self.poses.len();
        let dur = self.duration();
        if n == 1 || dur <= 0.0 {
            return self.poses[0].clone();
        }
        let (local, shift) = match self.loop_mode {
            LoopMode::None => (t.clamp(0.0, dur), Vector3::zeros()),
            LoopMode::Wrap => {
                let mut cycles = (t / dur).floor();
                let mut local = t - cycles * dur;
                if local >= dur {
                    local -= dur;
                    cycles += 1.0;
                }
                if local < 0.0 {
                    local = 0.0;
                }
                (local, self.cycle_offset() * cycles)
            }
        };
        let mut f = local * self.fps;
        let r = f.round();
        if (f - r).abs() < 1e-9 {
            f = r;
        }
        let i0 = (f.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let u = if i0 == i1 { 0.0 } else { f - i0 as f64 };
        let mut pose = if u == 0.0 {
            self.poses[i0].clone()
        } else {
            interpolate(&self.poses[i0], &self.poses[i1], u)
        };
        pose.root_pos += shift;
        pose
    }

    /// Pose and finite-difference velocity at time `t` seconds.
    pub fn sample_pose(&self, t: f64) -> Result<(Pose, PoseVelocity)> {
        if !(t >= 0.0) {
            return Err(Error::invalid(format!("sample time must be >= 0, got {t}")));
        }
        let dur = self.duration();
        let dof = self.kinds.iter().map(|k| k.dof()).sum();
        let t = match self.loop_mode {
            LoopMode::None => t.min(dur),
            LoopMode::Wrap => t,
        };
        let pose = self.pose_at(t);
        if self.poses.len() == 1 || dur <= 0.0 {
            return Ok((pose, PoseVelocity::zeros(dof)));
        }
        let h = 0.5 / self.fps;
        let (t0, t1) = match self.loop_mode {
            LoopMode::Wrap => (t - h, t + h),
            LoopMode::None if t - h < 0.0 => (t, t + h),
            LoopMode::None if t + h > dur => (t - h, t),
            LoopMode::None => (t - h, t + h),
        };
        let p0 = if t0 == t { pose.clone() } else { self.pose_at(t0) };
        let p1 = if t1 == t { pose.clone() } else { self.pose_at(t1) };
        let vel = finite_difference(&p0, &p1, t1 - t0);
        Ok((pose, vel))
    }

    pub fn load(path: impl AsRef<Path>, ch: &CharacterModel) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MotionFile =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let width = ch.frame_width();
        if let Some(w) = file.frame_width {
            if w != width {
                return Err(Error::format(
                    path,
                    format!("declared frame_width {w} but character {} needs {width}", ch.name),
                ));
            }
        }
        for (i, row) in file.frames.iter().enumerate() {
            if row.len() != width {
                return Err(Error::format(
                    path,
                    format!("row {i} has width {} but expected {width}", row.len()),
                ));
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::format(path, format!("row {i} column {c} is not finite")));
            }
        }
        Self::new(ch, file.fps, file.loop_mode, file.frames).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = MotionFile {
            fps: self.fps,
            loop_mode: self.loop_mode,
            character: self.character.clone(),
            frame_width: Some(self.frames[0].len()),
            frames: self.frames.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Componentwise blend: lerp for positions and angles, slerp for rotations.
pub fn interpolate(a: &Pose, b: &Pose, u: f64) -> Pose {
    let joints = a
        .joints
        .iter()
        .zip(&b.joints)
        .map(|(ja, jb)| match (ja, jb) {
            (JointValue::Ball(qa), JointValue::Ball(qb)) => JointValue::Ball(slerp_unchecked(qa, qb, u)),
            (JointValue::Hinge(x), JointValue::Hinge(y)) => JointValue::Hinge(x + u * (y - x)),
            _ => *ja,
        })
        .collect();
    Pose {
        root_pos: a.root_pos + (b.root_pos - a.root_pos) * u,
        root_rot: slerp_unchecked(&a.root_rot, &b.root_rot, u),
        joints,
    }
}

/// Velocity carrying pose `a` to pose `b` over `dt` seconds. Root angular
/// velocity is in the world frame, spherical joint velocity in the child
/// frame.
pub fn finite_difference(a: &Pose, b: &Pose, dt: f64) -> PoseVelocity {
    let mut dof = Vec::with_capacity(3 * a.joints.len());
    for (ja, jb) in a.joints.iter().zip(&b.joints) {
        match (ja, jb) {
            (JointValue::Ball(qa), JointValue::Ball(qb)) => {
                let w = qa.delta_to(qb) / dt;
                dof.extend_from_slice(w.as_slice());
            }
            (JointValue::Hinge(x), JointValue::Hinge(y)) => dof.push((y - x) / dt),
            _ => {}
        }
    }
    PoseVelocity {
        root_lin: (b.root_pos - a.root_pos) / dt,
        root_ang: if a.root_rot == b.root_rot {
            Vector3::zeros()
        } else {
            (b.root_rot * a.root_rot.conjugate()).scaled_axis() / dt
        },
        dof,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetEntry {
    file: PathBuf,
    weight: f64,
}

/// One or more clips with sampling weights.
#[derive(Debug, Clone)]
pub struct MotionLibrary {
    clips: Vec<MotionClip>,
    probs: Vec<f64>,
}

impl MotionLibrary {
    pub fn from_clips(clips: Vec<MotionClip>, weights: Vec<f64>) -> Result<Self> {
        if clips.is_empty() || clips.len() != weights.len() {
            return Err(Error::invalid("motion library needs one weight per clip"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("dataset weights must be finite and >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("dataset weights sum to zero"));
        }
        Ok(MotionLibrary {
            clips,
            probs: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn single(clip: MotionClip) -> Self {
        MotionLibrary {
            clips: vec![clip],
            probs: vec![1.0],
        }
    }

    /// Loads a clip file or a dataset file.
    pub fn load(path: impl AsRef<Path>, ch: &CharacterModel) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if !value.is_array() {
            return Ok(Self::single(MotionClip::load(path, ch)?));
        }
        let entries: Vec<DatasetEntry> =
            serde_json::from_value(value).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut clips = Vec::with_capacity(entries.len());
        let mut weights = Vec::with_capacity(entries.len());
        for e in entries {
            let p = if e.file.is_absolute() { e.file.clone() } else { base.join(&e.file) };
            clips.push(MotionClip::load(&p, ch)?);
            weights.push(e.weight);
        }
        Self::from_clips(clips, weights).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn clips(&self) -> &[MotionClip] {
        &self.clips
    }

    pub fn clip(&self, i: usize) -> &MotionClip {
        &self.clips[i]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample_clip<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.clips.len() == 1 {
            return 0;
        }
        WeightedIndex::new(&self.probs)
            .expect("validated weights")
            .sample(rng)
    }
}
