//! Planar reduced-coordinate dynamics.
//!
//! Generalized coordinates are `[x, y, heading, q_0 .. q_{n-1}]` for a floating
//! root and `[q_0 .. q_{n-1}]` for a pinned root. All joints rotate about ±z.
//! The equations of motion come from d'Alembert's principle:
//!
//! `M(q) q̈ + Σ_b J_bᵀ m_b (J̇_b q̇ − g) = τ + Σ_c J_cᵀ f_c`
//!
//! with `M = Σ_b m_b J_bᵀ J_b + I_b j_bᵀ j_b` summed over body centres of mass.
//! Integration is semi-implicit Euler.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};

use super::config::{ContactParams, ControlMode};
use super::pd::pd_torque;
use super::SimState;
use crate::kinematics::{CharacterModel, JointValue, Quat};

fn perp(r: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-r.y, r.x)
}

fn rot(phi: f64, v: &Vector2<f64>) -> Vector2<f64> {
    let (s, c) = phi.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

#[derive(Debug, Clone)]
pub(crate) struct PlanarModel {
    fixed_root: bool,
    base_dofs: usize,
    parent_body: Vec<usize>,
    offsets: Vec<Vector2<f64>>,
    signs: Vec<f64>,
    mass: Vec<f64>,
    com: Vec<Vector2<f64>>,
    izz: Vec<f64>,
    probes: Vec<Vec<(Vector2<f64>, f64)>>,
    supporting: Vec<Vec<usize>>,
    gains: Vec<[f64; 2]>,
    limits: Vec<f64>,
}

/// Generalized state plus the out-of-plane root data it does not evolve.
#[derive(Debug, Clone)]
pub(crate) struct PlanarCoords {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub root_origin: Vector2<f64>,
    pub root_phi: f64,
    pub root_z: f64,
}

struct Frames {
    phi: Vec<f64>,
    origin: Vec<Vector2<f64>>,
}

impl PlanarModel {
    pub fn new(ch: &CharacterModel) -> Self {
        let base_dofs = if ch.fixed_root { 0 } else { 3 };
        let mut probes = Vec::with_capacity(ch.num_bodies());
        for b in &ch.bodies {
            let mut pts: Vec<(Vector2<f64>, f64)> = Vec::new();
            for (p, r) in b.geometry.probes() {
                let p2 = Vector2::new(p.x, p.y);
                if !pts.iter().any(|(q, s)| (q - p2).norm() < 1e-12 && *s == r) {
                    pts.push((p2, r));
                }
            }
            probes.push(pts);
        }
        PlanarModel {
            fixed_root: ch.fixed_root,
            base_dofs,
            parent_body: (0..ch.num_joints()).map(|j| ch.parent_body(j)).collect(),
            offsets: ch.joints.iter().map(|j| Vector2::new(j.offset.x, j.offset.y)).collect(),
            signs: ch.joints.iter().map(|j| j.axis.z.signum()).collect(),
            mass: ch.bodies.iter().map(|b| b.mass).collect(),
            com: ch.bodies.iter().map(|b| Vector2::new(b.com.x, b.com.y)).collect(),
            izz: ch.bodies.iter().map(|b| b.inertia.z).collect(),
            probes,
            supporting: (0..ch.num_bodies()).map(|b| ch.supporting_joints(b)).collect(),
            gains: ch.joints.iter().map(|j| j.pd_gains).collect(),
            limits: ch.joints.iter().map(|j| j.torque_limit).collect(),
        }
    }

    pub fn ndof(&self) -> usize {
        self.base_dofs + self.signs.len()
    }

    fn num_bodies(&self) -> usize {
        self.mass.len()
    }

    pub fn coords(&self, s: &SimState) -> PlanarCoords {
        let n = self.ndof();
        let nb = self.base_dofs;
        let r = s.pose.root_rot;
        let phi = 2.0 * r.z.atan2(r.w);
        let mut q = DVector::zeros(n);
        let mut qd = DVector::zeros(n);
        if !self.fixed_root {
            q[0] = s.pose.root_pos.x;
            q[1] = s.pose.root_pos.y;
            q[2] = phi;
            qd[0] = s.vel.root_lin.x;
            qd[1] = s.vel.root_lin.y;
            qd[2] = s.vel.root_ang.z;
        }
        for (j, v) in s.pose.joints.iter().enumerate() {
            if let JointValue::Hinge(a) = v {
                q[nb + j] = *a;
            }
            qd[nb + j] = s.vel.dof[j];
        }
        PlanarCoords {
            q,
            qd,
            root_origin: Vector2::new(s.pose.root_pos.x, s.pose.root_pos.y),
            root_phi: phi,
            root_z: s.pose.root_pos.z,
        }
    }

    pub fn write_back(&self, c: &PlanarCoords, s: &mut SimState) {
        let nb = self.base_dofs;
        if !self.fixed_root {
            s.pose.root_pos = Vector3::new(c.q[0], c.q[1], c.root_z);
            s.pose.root_rot = Quat::from_rotation_z(c.q[2]);
            s.vel.root_lin = Vector3::new(c.qd[0], c.qd[1], 0.0);
            s.vel.root_ang = Vector3::new(0.0, 0.0, c.qd[2]);
        }
        for j in 0..self.signs.len() {
            s.pose.joints[j] = JointValue::Hinge(c.q[nb + j]);
            s.vel.dof[j] = c.qd[nb + j];
        }
    }

    fn base(&self, c: &PlanarCoords) -> (Vector2<f64>, f64) {
        if self.fixed_root {
            (c.root_origin, c.root_phi)
        } else {
            (Vector2::new(c.q[0], c.q[1]), c.q[2])
        }
    }

    fn frames(&self, c: &PlanarCoords) -> Frames {
        let (o0, phi0) = self.base(c);
        let nb = self.base_dofs;
        let mut phi = Vec::with_capacity(self.num_bodies());
        let mut origin = Vec::with_capacity(self.num_bodies());
        phi.push(phi0);
        origin.push(o0);
        for j in 0..self.signs.len() {
            let p = self.parent_body[j];
            origin.push(origin[p] + rot(phi[p], &self.offsets[j]));
            phi.push(phi[p] + self.signs[j] * c.q[nb + j]);
        }
        Frames { phi, origin }
    }

    /// Linear Jacobian (2 × n) of a world point rigidly attached to `body`.
    fn point_jacobian(&self, f: &Frames, body: usize, p: &Vector2<f64>) -> DMatrix<f64> {
        let n = self.ndof();
        let nb = self.base_dofs;
        let mut jac = DMatrix::zeros(2, n);
        if !self.fixed_root {
            jac[(0, 0)] = 1.0;
            jac[(1, 1)] = 1.0;
            let d = perp(&(p - f.origin[0]));
            jac[(0, 2)] = d.x;
            jac[(1, 2)] = d.y;
        }
        for &k in &self.supporting[body] {
            let d = perp(&(p - f.origin[k + 1])) * self.signs[k];
            jac[(0, nb + k)] = d.x;
            jac[(1, nb + k)] = d.y;
        }
        jac
    }

    fn angular_jacobian(&self, body: usize) -> DVector<f64> {
        let n = self.ndof();
        let mut j = DVector::zeros(n);
        if !self.fixed_root {
            j[2] = 1.0;
        }
        for &k in &self.supporting[body] {
            j[self.base_dofs + k] = self.signs[k];
        }
        j
    }

    fn angular_velocities(&self, c: &PlanarCoords) -> Vec<f64> {
        let nb = self.base_dofs;
        let mut w = Vec::with_capacity(self.num_bodies());
        w.push(if self.fixed_root { 0.0 } else { c.qd[2] });
        for j in 0..self.signs.len() {
            let p = self.parent_body[j];
            w.push(w[p] + self.signs[j] * c.qd[nb + j]);
        }
        w
    }

    /// Mass matrix and bias `Σ J_bᵀ m_b (J̇_b q̇ − g)`.
    pub fn mass_and_bias(&self, c: &PlanarCoords, gravity: &Vector2<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.ndof();
        let f = self.frames(c);
        let w = self.angular_velocities(c);
        let mut m = DMatrix::zeros(n, n);
        let mut bias = DVector::zeros(n);
        // Origin accelerations with q̈ = 0.
        let mut acc = vec![Vector2::zeros(); self.num_bodies()];
        for j in 0..self.signs.len() {
            let p = self.parent_body[j];
            let r = rot(f.phi[p], &self.offsets[j]);
            acc[j + 1] = acc[p] - r * (w[p] * w[p]);
        }
        for b in 0..self.num_bodies() {
            let mass = self.mass[b];
            let rc = rot(f.phi[b], &self.com[b]);
            let c_world = f.origin[b] + rc;
            let jc = self.point_jacobian(&f, b, &c_world);
            let jw = self.angular_jacobian(b);
            if mass > 0.0 {
                m += jc.transpose() * &jc * mass;
                let a_c = acc[b] - rc * (w[b] * w[b]);
                let force = (a_c - gravity) * mass;
                bias += jc.transpose() * DVector::from_column_slice(force.as_slice());
            }
            if self.izz[b] > 0.0 {
                m += &jw * jw.transpose() * self.izz[b];
            }
        }
        (m, bias)
    }

    pub fn kinetic_energy(&self, c: &PlanarCoords) -> f64 {
        let (m, _) = self.mass_and_bias(c, &Vector2::zeros());
        0.5 * c.qd.dot(&(m * &c.qd))
    }

    pub fn potential_energy(&self, c: &PlanarCoords, gravity: &Vector2<f64>) -> f64 {
        let f = self.frames(c);
        (0..self.num_bodies())
            .map(|b| {
                let p = f.origin[b] + rot(f.phi[b], &self.com[b]);
                -self.mass[b] * gravity.dot(&p)
            })
            .sum()
    }

    fn contact_forces(
        &self,
        c: &PlanarCoords,
        f: &Frames,
        ground: f64,
        params: &ContactParams,
    ) -> DVector<f64> {
        let mut gen = DVector::zeros(self.ndof());
        for b in 0..self.num_bodies() {
            for (local, radius) in &self.probes[b] {
                let centre = f.origin[b] + rot(f.phi[b], local);
                let depth = ground - (centre.y - radius);
                if depth <= 0.0 {
                    continue;
                }
                let point = centre - Vector2::new(0.0, *radius);
                let jac = self.point_jacobian(f, b, &point);
                let v = &jac * &c.qd;
                let fn_ = (params.kn * depth - params.dn * v[1]).max(0.0);
                let cap = params.friction * fn_;
                let ft = (-params.tangential_damping * v[0]).clamp(-cap, cap);
                gen += jac.transpose() * DVector::from_column_slice(&[ft, fn_]);
            }
        }
        gen
    }

    /// One semi-implicit Euler step of length `h`.
    #[allow(clippy::too_many_arguments)]
    pub fn substep(
        &self,
        c: &mut PlanarCoords,
        mode: ControlMode,
        command: &[f64],
        gravity: &Vector2<f64>,
        ground: f64,
        contact: &ContactParams,
        h: f64,
    ) {
        let n = self.ndof();
        let nb = self.base_dofs;
        let nj = self.signs.len();
        let f = self.frames(c);
        let (m, bias) = self.mass_and_bias(c, gravity);
        let mut rhs = self.contact_forces(c, &f, ground, contact) - bias;
        match mode {
            ControlMode::Pos | ControlMode::Pd1d => {
                for j in 0..nj {
                    let [kp, kd] = self.gains[j];
                    rhs[nb + j] += pd_torque(c.q[nb + j], c.qd[nb + j], command[j], kp, kd, self.limits[j]);
                }
            }
            ControlMode::Torque => {
                for j in 0..nj {
                    let lim = self.limits[j];
                    let t = if lim > 0.0 { command[j].clamp(-lim, lim) } else { command[j] };
                    rhs[nb + j] += t;
                }
            }
            ControlMode::None | ControlMode::Vel => {}
        }
        if mode == ControlMode::Vel {
            let mut qdd_j = DVector::zeros(nj);
            for j in 0..nj {
                qdd_j[j] = (command[j] - c.qd[nb + j]) / h;
            }
            if nb > 0 {
                let m_bb = m.view((0, 0), (nb, nb)).into_owned();
                let m_bj = m.view((0, nb), (nb, nj)).into_owned();
                let r = rhs.rows(0, nb).into_owned() - m_bj * &qdd_j;
                let qdd_b = solve(m_bb, r);
                for i in 0..nb {
                    c.qd[i] += h * qdd_b[i];
                }
            }
            for j in 0..nj {
                c.qd[nb + j] = command[j];
            }
        } else {
            let qdd = solve(m, rhs);
            c.qd += qdd * h;
        }
        for i in 0..n {
            c.q[i] += h * c.qd[i];
        }
    }
}

fn solve(m: DMatrix<f64>, rhs: DVector<f64>) -> DVector<f64> {
    match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => m.lu().solve(&rhs).unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN)),
    }
}
