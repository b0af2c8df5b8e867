use nalgebra::Vector3;

use crate::kinematics::Quat;

fn clamp_limit(tau: f64, limit: f64) -> f64 {
    if limit > 0.0 {
        tau.clamp(-limit, limit)
    } else {
        tau
    }
}

/// `kp·(target − q) − kd·q̇`, clamped to `±limit` (no clamp when `limit <= 0`).
pub fn pd_torque(q: f64, qd: f64, target: f64, kp: f64, kd: f64, limit: f64) -> f64 {
    clamp_limit(kp * (target - q) - kd * qd, limit)
}

/// Spherical PD: the error is the rotation vector of `q⁻¹·target`, `omega`
/// is the joint's local angular velocity. Clamped per component.
pub fn pd_torque_spherical(
    q: &Quat,
    omega: &Vector3<f64>,
    target: &Quat,
    kp: f64,
    kd: f64,
    limit: f64,
) -> Vector3<f64> {
    let err = (q.conjugate() * *target).scaled_axis();
    (err * kp - omega * kd).map(|t| clamp_limit(t, limit))
}
