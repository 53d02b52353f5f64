use serde::{Deserialize, Serialize};

use crate::feasibility::InputBox;
use crate::geometry::{wrap_angle, RobotState};
use crate::numerics::{Vec2, Vec3};

fn unicycle_rhs(x: &Vec3, u: &Vec2) -> Vec3 {
    [u[0] * x[2].cos(), u[0] * x[2].sin(), u[1]]
}

/// One classical RK4 step of `ṗ_x = v cos θ, ṗ_y = v sin θ, θ̇ = ω` with `u` held.
pub fn unicycle_step(x: &RobotState, u: &Vec2, dt: f64) -> RobotState {
    assert!(dt > 0.0, "time step must be positive");
    let x0 = x.as_array();
    let at = |k: &Vec3, h: f64| -> Vec3 { std::array::from_fn(|i| x0[i] + h * k[i]) };
    let k1 = unicycle_rhs(&x0, u);
    let k2 = unicycle_rhs(&at(&k1, 0.5 * dt), u);
    let k3 = unicycle_rhs(&at(&k2, 0.5 * dt), u);
    let k4 = unicycle_rhs(&at(&k3, dt), u);
    RobotState::from_array(std::array::from_fn(|i| {
        x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NominalGains {
    pub k_p: f64,
    pub k_omega: f64,
}

impl Default for NominalGains {
    fn default() -> Self {
        Self { k_p: 1.0, k_omega: 2.0 }
    }
}

/// Goal-seeking reference: turn toward the goal, drive proportionally to the
/// distance projected on the heading.
pub fn nominal_control(x: &RobotState, goal: &Vec2, gains: &NominalGains, input_box: &InputBox) -> Vec2 {
    let dx = goal[0] - x.p_x;
    let dy = goal[1] - x.p_y;
    let dist = dx.hypot(dy);
    let theta_r = dy.atan2(dx);
    let e_theta = wrap_angle(x.theta - theta_r);
    input_box.clamp([gains.k_p * dist * e_theta.cos(), -gains.k_omega * e_theta])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn straight_line() {
        let x = unicycle_step(&RobotState::new(0.0, 0.0, 0.0), &[1.0, 0.0], 0.1);
        assert_abs_diff_eq!(x.p_x, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(x.p_y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x.theta, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn pure_rotation() {
        let x = unicycle_step(&RobotState::new(0.0, 0.0, 0.0), &[0.0, 0.5], 0.1);
        assert_abs_diff_eq!(x.theta, 0.05, epsilon = 1e-15);
        assert_eq!(x.position(), [0.0, 0.0]);
    }

    #[test]
    fn arc_matches_closed_form() {
        // v = 1, ω = π: circle of radius 1/π about (0, 1/π); θ sweeps π/2 in 0.5 s.
        let (v, w) = (1.0, PI);
        let steps = 500;
        let dt = 0.5 / steps as f64;
        let mut x = RobotState::new(0.0, 0.0, 0.0);
        for _ in 0..steps {
            x = unicycle_step(&x, &[v, w], dt);
        }
        let r = v / w;
        let th = w * 0.5;
        assert_abs_diff_eq!(x.p_x, r * th.sin(), epsilon = 1e-12);
        assert_abs_diff_eq!(x.p_y, r * (1.0 - th.cos()), epsilon = 1e-12);
        assert_abs_diff_eq!(x.theta, PI / 2.0, epsilon = 1e-12);
        // A single coarse step still lands near the circle.
        let y = unicycle_step(&RobotState::new(0.0, 0.0, 0.0), &[v, w], 0.5);
        assert_abs_diff_eq!(y.p_x.hypot(y.p_y - r), r, epsilon = 1e-3);
    }

    #[test]
    fn nominal_aligned() {
        let u = nominal_control(&RobotState::new(0.0, 0.0, 0.0), &[1.0, 0.0], &NominalGains::default(), &InputBox::default());
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn nominal_facing_away_is_clamped() {
        let u = nominal_control(&RobotState::new(0.0, 0.0, PI), &[1.0, 0.0], &NominalGains::default(), &InputBox::default());
        assert_eq!(u, [-1.0, -0.5]);
    }

    #[test]
    fn nominal_at_goal() {
        let u = nominal_control(&RobotState::new(2.0, 3.0, 0.7), &[2.0, 3.0], &NominalGains::default(), &InputBox::default());
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn full_quadrant_heading() {
        // Goal behind-left: a plain atan of dy/dx would point the wrong way.
        let x = RobotState::new(0.0, 0.0, 3.0 * PI / 4.0);
        let u = nominal_control(&x, &[-1.0, 1.0], &NominalGains::default(), &InputBox::default());
        assert_abs_diff_eq!(u[1], 0.0, epsilon = 1e-12);
        assert!(u[0] > 0.0);
    }
}
