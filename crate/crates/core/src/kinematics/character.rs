//! Character definitions: a kinematic tree of joints with one rigid body per
//! joint plus the root body.
//!
//! Body `0` is the root. Joint `j` drives body `j + 1`. Joints are listed in
//! depth-first order, which is also the order of their rotations in a motion
//! frame.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Spherical,
    Revolute,
    Fixed,
}

impl JointKind {
    pub fn dof(self) -> usize {
        match self {
            JointKind::Spherical => 3,
            JointKind::Revolute => 1,
            JointKind::Fixed => 0,
        }
    }
}

fn z_axis() -> Vector3<f64> {
    Vector3::z()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    /// Parent joint index, `None` when attached to the root body.
    pub parent: Option<usize>,
    /// Joint origin in the parent body frame, metres.
    pub offset: Vector3<f64>,
    /// Rotation axis for revolute joints.
    #[serde(default = "z_axis")]
    pub axis: Vector3<f64>,
    #[serde(default)]
    pub torque_limit: f64,
    /// `(kp, kd)`.
    #[serde(default)]
    pub pd_gains: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geometry {
    Sphere {
        radius: f64,
        center: Vector3<f64>,
    },
    Capsule {
        radius: f64,
        start: Vector3<f64>,
        end: Vector3<f64>,
    },
    Box {
        center: Vector3<f64>,
        half_extents: Vector3<f64>,
    },
}

impl Geometry {
    /// Contact probe points in the body frame, each with its rounding radius.
    pub fn probes(&self) -> Vec<(Vector3<f64>, f64)> {
        match self {
            Geometry::Sphere { radius, center } => vec![(*center, *radius)],
            Geometry::Capsule { radius, start, end } => vec![(*start, *radius), (*end, *radius)],
            Geometry::Box {
                center,
                half_extents: h,
            } => {
                let mut pts = Vec::with_capacity(8);
                for sx in [-1.0, 1.0] {
                    for sy in [-1.0, 1.0] {
                        for sz in [-1.0, 1.0] {
                            pts.push((center + Vector3::new(sx * h.x, sy * h.y, sz * h.z), 0.0));
                        }
                    }
                }
                pts
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    pub name: String,
    pub mass: f64,
    /// Centre of mass in the body frame.
    #[serde(default)]
    pub com: Vector3<f64>,
    /// Principal moments of inertia about the centre of mass.
    pub inertia: Vector3<f64>,
    pub geometry: Geometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterModel {
    pub name: String,
    /// Root body pinned in place rather than floating.
    #[serde(default)]
    pub fixed_root: bool,
    pub joints: Vec<JointSpec>,
    /// `joints.len() + 1` entries; `bodies[0]` is the root.
    pub bodies: Vec<BodySpec>,
    /// Bodies allowed to touch the ground without ending an episode.
    #[serde(default)]
    pub feet: Vec<String>,
}

impl CharacterModel {
    /// Validates and normalizes a character definition.
    pub fn new(mut ch: CharacterModel) -> Result<Self> {
        if ch.bodies.len() != ch.joints.len() + 1 {
            return Err(Error::Config(format!(
                "character {}: {} bodies for {} joints (expected joints + 1)",
                ch.name,
                ch.bodies.len(),
                ch.joints.len()
            )));
        }
        for (j, joint) in ch.joints.iter_mut().enumerate() {
            if let Some(p) = joint.parent {
                if p >= j {
                    return Err(Error::Config(format!(
                        "joint {} ({}) has parent {p} not preceding it",
                        j, joint.name
                    )));
                }
            }
            let finite = joint.offset.iter().chain(joint.axis.iter()).all(|v| v.is_finite());
            if !finite {
                return Err(Error::Config(format!("joint {} has non-finite geometry", joint.name)));
            }
            if joint.kind == JointKind::Revolute {
                let n = joint.axis.norm();
                if n < 1e-9 {
                    return Err(Error::Config(format!("revolute joint {} has no axis", joint.name)));
                }
                joint.axis /= n;
            }
        }
        // Depth-first pre-order: every joint between a parent and its child
        // belongs to the parent's subtree.
        for j in 0..ch.joints.len() {
            let parent = ch.joints[j].parent;
            for k in (parent.map_or(0, |p| p + 1))..j {
                if !ch.is_descendant_of(k, parent) {
                    return Err(Error::Config(format!(
                        "joints are not in depth-first order at {} ({})",
                        j, ch.joints[j].name
                    )));
                }
            }
        }
        for b in &ch.bodies {
            if !(b.mass.is_finite() && b.mass >= 0.0) {
                return Err(Error::Config(format!("body {} has invalid mass", b.name)));
            }
        }
        let names: HashSet<&str> = ch.bodies.iter().map(|b| b.name.as_str()).collect();
        for f in &ch.feet {
            if !names.contains(f.as_str()) {
                return Err(Error::Config(format!("unknown foot body {f}")));
            }
        }
        Ok(ch)
    }

    fn is_descendant_of(&self, joint: usize, ancestor: Option<usize>) -> bool {
        let Some(a) = ancestor else { return true };
        let mut cur = self.joints[joint].parent;
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.joints[c].parent;
        }
        false
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ch: CharacterModel =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::new(ch)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn num_bodies(&self) -> usize {
        self.bodies.len()
    }

    pub fn dof_count(&self) -> usize {
        self.joints.iter().map(|j| j.kind.dof()).sum()
    }

    /// Width of one motion frame: root position, root rotation, joint dofs.
    pub fn frame_width(&self) -> usize {
        6 + self.dof_count()
    }

    /// Start index of each joint in the dof vector.
    pub fn dof_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.joints.len());
        let mut acc = 0;
        for j in &self.joints {
            out.push(acc);
            acc += j.kind.dof();
        }
        out
    }

    pub fn has_spherical(&self) -> bool {
        self.joints.iter().any(|j| j.kind == JointKind::Spherical)
    }

    /// Body index of joint `j`'s parent body.
    pub fn parent_body(&self, joint: usize) -> usize {
        self.joints[joint].parent.map_or(0, |p| p + 1)
    }

    /// Bodies without children.
    pub fn end_effectors(&self) -> Vec<usize> {
        let mut has_child = vec![false; self.num_bodies()];
        for j in 0..self.joints.len() {
            has_child[self.parent_body(j)] = true;
        }
        (0..self.num_bodies()).filter(|&b| !has_child[b]).collect()
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }

    /// Joint indices whose motion moves body `body` (its ancestors and itself).
    pub fn supporting_joints(&self, body: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if body == 0 {
            return out;
        }
        let mut cur = Some(body - 1);
        while let Some(j) = cur {
            out.push(j);
            cur = self.joints[j].parent;
        }
        out.reverse();
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.bodies.iter().map(|b| b.mass).sum()
    }

    /// Humanoid with the 13-joint depth-first layout (34-wide frames).
    pub fn humanoid() -> Self {
        fn capsule_body(name: &str, mass: f64, end: Vector3<f64>, radius: f64) -> BodySpec {
            let len = end.norm();
            let i_perp = mass * (3.0 * radius * radius + len * len) / 12.0;
            BodySpec {
                name: name.into(),
                mass,
                com: end * 0.5,
                inertia: Vector3::new(i_perp, i_perp, 0.5 * mass * radius * radius),
                geometry: Geometry::Capsule {
                    radius,
                    start: Vector3::zeros(),
                    end,
                },
            }
        }
        let sph = |name: &str, parent: Option<usize>, off: [f64; 3], kp: f64| JointSpec {
            name: name.into(),
            kind: JointKind::Spherical,
            parent,
            offset: Vector3::from(off),
            axis: Vector3::z(),
            torque_limit: 200.0,
            pd_gains: [kp, kp / 10.0],
        };
        let rev = |name: &str, parent: Option<usize>, off: [f64; 3], axis: [f64; 3]| JointSpec {
            name: name.into(),
            kind: JointKind::Revolute,
            parent,
            offset: Vector3::from(off),
            axis: Vector3::from(axis),
            torque_limit: 150.0,
            pd_gains: [300.0, 30.0],
        };
        let joints = vec![
            sph("abdomen", None, [0.0, 0.24, 0.0], 1000.0),
            sph("neck", Some(0), [0.0, 0.22, 0.0], 500.0),
            sph("right_shoulder", Some(0), [0.0, 0.2, 0.18], 400.0),
            rev("right_elbow", Some(2), [0.0, -0.28, 0.0], [0.0, 0.0, 1.0]),
            sph("left_shoulder", Some(0), [0.0, 0.2, -0.18], 400.0),
            rev("left_elbow", Some(4), [0.0, -0.28, 0.0], [0.0, 0.0, 1.0]),
            sph("right_hip", None, [0.0, 0.0, 0.085], 500.0),
            rev("right_knee", Some(6), [0.0, -0.42, 0.0], [0.0, 0.0, 1.0]),
            sph("right_ankle", Some(7), [0.0, -0.41, 0.0], 400.0),
            sph("left_hip", None, [0.0, 0.0, -0.085], 500.0),
            rev("left_knee", Some(9), [0.0, -0.42, 0.0], [0.0, 0.0, 1.0]),
            sph("left_ankle", Some(10), [0.0, -0.41, 0.0], 400.0),
        ];
        let bodies = vec![
            capsule_body("pelvis", 4.6, Vector3::new(0.0, 0.12, 0.0), 0.09),
            capsule_body("torso", 8.9, Vector3::new(0.0, 0.2, 0.0), 0.11),
            capsule_body("head", 2.0, Vector3::new(0.0, 0.18, 0.0), 0.09),
            capsule_body("right_upper_arm", 1.5, Vector3::new(0.0, -0.27, 0.0), 0.045),
            capsule_body("right_lower_arm", 1.2, Vector3::new(0.0, -0.3, 0.0), 0.04),
            capsule_body("left_upper_arm", 1.5, Vector3::new(0.0, -0.27, 0.0), 0.045),
            capsule_body("left_lower_arm", 1.2, Vector3::new(0.0, -0.3, 0.0), 0.04),
            capsule_body("right_thigh", 4.5, Vector3::new(0.0, -0.4, 0.0), 0.055),
            capsule_body("right_shin", 3.0, Vector3::new(0.0, -0.39, 0.0), 0.05),
            BodySpec {
                name: "right_foot".into(),
                mass: 1.2,
                com: Vector3::new(0.045, -0.045, 0.0),
                inertia: Vector3::new(0.003, 0.004, 0.002),
                geometry: Geometry::Box {
                    center: Vector3::new(0.045, -0.045, 0.0),
                    half_extents: Vector3::new(0.0885, 0.0275, 0.045),
                },
            },
            capsule_body("left_thigh", 4.5, Vector3::new(0.0, -0.4, 0.0), 0.055),
            capsule_body("left_shin", 3.0, Vector3::new(0.0, -0.39, 0.0), 0.05),
            BodySpec {
                name: "left_foot".into(),
                mass: 1.2,
                com: Vector3::new(0.045, -0.045, 0.0),
                inertia: Vector3::new(0.003, 0.004, 0.002),
                geometry: Geometry::Box {
                    center: Vector3::new(0.045, -0.045, 0.0),
                    half_extents: Vector3::new(0.0885, 0.0275, 0.045),
                },
            },
        ];
        Self::new(CharacterModel {
            name: "humanoid".into(),
            fixed_root: false,
            joints,
            bodies,
            feet: vec!["right_foot".into(), "left_foot".into()],
        })
        .expect("built-in humanoid is valid")
    }

    /// Planar chain of `links` revolute-z joints hanging along `-y` at the
    /// zero pose. Link `k` has length `link_length` and mass `link_mass`.
    pub fn planar_chain(
        links: usize,
        link_length: f64,
        link_mass: f64,
        fixed_root: bool,
        pd_gains: [f64; 2],
        torque_limit: f64,
    ) -> Self {
        let radius = 0.04;
        let i_zz = link_mass * link_length * link_length / 12.0;
        let link = |name: String| BodySpec {
            name,
            mass: link_mass,
            com: Vector3::new(0.0, -0.5 * link_length, 0.0),
            inertia: Vector3::new(i_zz, 1e-4, i_zz),
            geometry: Geometry::Capsule {
                radius,
                start: Vector3::zeros(),
                end: Vector3::new(0.0, -link_length, 0.0),
            },
        };
        let mut bodies = vec![BodySpec {
            name: "base".into(),
            mass: if fixed_root { 0.0 } else { link_mass },
            com: Vector3::zeros(),
            inertia: Vector3::new(0.01, 0.01, 0.01),
            geometry: Geometry::Sphere {
                radius,
                center: Vector3::zeros(),
            },
        }];
        let mut joints = Vec::with_capacity(links);
        for k in 0..links {
            joints.push(JointSpec {
                name: format!("joint{k}"),
                kind: JointKind::Revolute,
                parent: k.checked_sub(1),
                offset: if k == 0 {
                    Vector3::zeros()
                } else {
                    Vector3::new(0.0, -link_length, 0.0)
                },
                axis: Vector3::z(),
                torque_limit,
                pd_gains,
            });
            bodies.push(link(format!("link{k}")));
        }
        Self::new(CharacterModel {
            name: format!("chain{links}"),
            fixed_root,
            joints,
            bodies,
            feet: Vec::new(),
        })
        .expect("planar chain is valid")
    }

    /// Pinned pendulum with a point-like bob at distance `length` below the
    /// pivot at the zero pose.
    pub fn pendulum(length: f64, mass: f64, torque_limit: f64) -> Self {
        let mut ch = Self::planar_chain(1, length, mass, true, [0.0, 0.0], torque_limit);
        ch.name = "pendulum".into();
        let b = &mut ch.bodies[1];
        b.com = Vector3::new(0.0, -length, 0.0);
        b.inertia = Vector3::new(1e-6, 1e-6, 1e-6);
        ch
    }
}
