use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::kinematics::fk::forward_kinematics_unchecked;
use crate::kinematics::{CharacterModel, Pose, PoseVelocity};

/// Position tracking error in metres.
///
/// `sim` and `reference` hold the root position first, then one position per
/// joint. With `N` joints:
/// `(1/(N+1)) · (Σ_j ‖(x̂ʲ − x̂ʳ) − (xʲ − xʳ)‖ + ‖x̂ʳ − xʳ‖)`.
pub fn e_pos(sim: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<f64> {
    if sim.len() != reference.len() || sim.is_empty() {
        return Err(Error::invalid(format!(
            "position counts differ or are empty: {} vs {}",
            sim.len(),
            reference.len()
        )));
    }
    let (xr, rr) = (sim[0], reference[0]);
    let rel: f64 = sim[1..]
        .iter()
        .zip(&reference[1..])
        .map(|(x, r)| ((r - rr) - (x - xr)).norm())
        .sum();
    Ok((rel + (rr - xr).norm()) / sim.len() as f64)
}

/// Joint velocity error in rad/s: `(1/(N+1)) · Σ_j ‖q̂̇ʲ − q̇ʲ‖`, where `dofs`
/// gives each of the `N` joints' velocity width.
pub fn e_vel(sim: &[f64], reference: &[f64], dofs: &[usize]) -> Result<f64> {
    let width: usize = dofs.iter().sum();
    if sim.len() != width || reference.len() != width {
        return Err(Error::invalid(format!(
            "velocity layout mismatch: {} and {} values for {width} dofs",
            sim.len(),
            reference.len()
        )));
    }
    let mut sum = 0.0;
    let mut i = 0;
    for &d in dofs {
        sum += sim[i..i + d]
            .iter()
            .zip(&reference[i..i + d])
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        i += d;
    }
    Ok(sum / (dofs.len() + 1) as f64)
}

/// Both errors for a simulated pose against a reference pose, with joint
/// positions from forward kinematics.
pub fn pose_errors(
    ch: &CharacterModel,
    sim: (&Pose, &PoseVelocity),
    reference: (&Pose, &PoseVelocity),
) -> (f64, f64) {
    let xs: Vec<_> = forward_kinematics_unchecked(ch, sim.0).iter().map(|t| t.pos).collect();
    let xr: Vec<_> = forward_kinematics_unchecked(ch, reference.0).iter().map(|t| t.pos).collect();
    let dofs: Vec<usize> = ch.joints.iter().map(|j| j.kind.dof()).collect();
    let ep = e_pos(&xs, &xr).expect("same character");
    let ev = e_vel(&sim.1.dof, &reference.1.dof, &dofs).expect("same character");
    (ep, ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_zero() {
        let x = vec![Vector3::new(0.1, 1.0, 0.0), Vector3::new(0.3, 0.5, 0.2)];
        assert_eq!(e_pos(&x, &x).unwrap(), 0.0);
        assert_eq!(e_vel(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0], &[3, 1]).unwrap(), 0.0);
    }

    #[test]
    fn rigid_shift_gives_one_over_n_plus_one() {
        let r = vec![Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, 0.5, 0.0), Vector3::new(0.2, 0.1, 0.0)];
        let s: Vec<_> = r.iter().map(|p| p + Vector3::x()).collect();
        assert_eq!(e_pos(&s, &r).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn one_joint_velocity_off() {
        assert_eq!(e_vel(&[0.0, 0.0, 0.0, 1.0], &[0.0; 4], &[3, 1]).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn layout_mismatch() {
        assert!(e_pos(&[Vector3::zeros()], &[]).is_err());
        assert!(e_vel(&[0.0; 3], &[0.0; 4], &[3, 1]).is_err());
    }
}
