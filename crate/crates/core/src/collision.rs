//! Differentiable collision layer.
//!
//! The minimum scaling factor between an obstacle ellipse `O` and the robot
//! ellipse `R(x)` is
//!
//! ```text
//! γ*(x) = min_p F_O(p)  s.t.  F_R(p, x) ≤ 1
//! ```
//!
//! which exceeds one exactly when the two regions are disjoint. The problem is
//! solved through its one-dimensional dual: for a multiplier `λ` the
//! stationary point is `p(λ) = (Q_O + λ Q_R)⁻¹ (Q_O μ_O + λ Q_R μ_R)`, and
//! `λ*` is the root of the decreasing function `F_R(p(λ)) − 1`.
//!
//! Because the single constraint is active with a positive multiplier, the
//! state gradient is the gradient of the Lagrangian:
//! `∂γ*/∂x = λ* ∂F_R(p*, x)/∂x`.

use thiserror::Error;

use crate::geometry::{robot_ellipse, scaling_state_grad, Ellipsoid, RobotShape, RobotState};
use crate::numerics::{
    dot, norm, root_find_monotone, solve_dense, solve_spd, sub, NumericsError, Sym2, Vec2, Vec3,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CollisionError {
    #[error("minimum scaling solve failed: {0}")]
    SolverFailure(NumericsError),
}

impl From<NumericsError> for CollisionError {
    fn from(e: NumericsError) -> Self {
        CollisionError::SolverFailure(e)
    }
}

/// Primal-dual solution of the minimum scaling problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingSolution {
    pub gamma_star: f64,
    pub lambda_star: f64,
    pub p_star: Vec2,
}

/// Minimum scaling factor together with its state gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingResult {
    pub gamma_star: f64,
    pub lambda_star: f64,
    pub p_star: Vec2,
    /// `∂γ*/∂(p_x, p_y, θ)`.
    pub grad_x: Vec3,
}

/// One control barrier constraint `lf_h + lg_h · u ≥ −κ h`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CbfRow {
    pub h: f64,
    pub lf_h: f64,
    pub lg_h: Vec2,
    pub kappa: f64,
}

/// Control-affine dynamics `ẋ = f(x) + g(x) u` with a planar pose state and
/// two inputs.
pub trait ControlAffine {
    fn drift(&self, x: &RobotState) -> Vec3;
    /// Columns of `g(x)`, one per input.
    fn input_columns(&self, x: &RobotState) -> [Vec3; 2];
}

/// `ṗ_x = v cos θ`, `ṗ_y = v sin θ`, `θ̇ = ω`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Unicycle;

impl ControlAffine for Unicycle {
    fn drift(&self, _x: &RobotState) -> Vec3 {
        [0.0; 3]
    }

    fn input_columns(&self, x: &RobotState) -> [Vec3; 2] {
        let (s, c) = x.theta.sin_cos();
        [[c, s, 0.0], [0.0, 0.0, 1.0]]
    }
}

const DUAL_TOL: f64 = 1e-13;
const BRACKET_DOUBLINGS: usize = 200;

fn stationary_point(obs: &Ellipsoid<2>, rob: &Ellipsoid<2>, lambda: f64) -> Result<(Vec2, Vec2), NumericsError> {
    let (qo, qr) = (obs.shape(), rob.shape());
    let k = qo.add(&qr.scale(lambda));
    let rhs_o = qo.mul_vec(obs.center());
    let rhs_r = qr.mul_vec(rob.center());
    let rhs = [rhs_o[0] + lambda * rhs_r[0], rhs_o[1] + lambda * rhs_r[1]];
    let p = solve_spd(&k, &rhs)?;
    // dp/dλ = K⁻¹ Q_R (μ_R − p)
    let dp = solve_spd(&k, &qr.mul_vec(&sub(rob.center(), &p)))?;
    Ok((p, dp))
}

/// Solves `min F_O(p) s.t. F_R(p) ≤ 1`.
///
/// When the obstacle center already lies inside the robot region the
/// constraint is inactive and the result is `γ* = 0`, `λ* = 0`, `p* = μ_O`.
pub fn min_scaling(obs: &Ellipsoid<2>, rob: &Ellipsoid<2>) -> Result<ScalingSolution, CollisionError> {
    if rob.eval_scaling(obs.center()) <= 1.0 {
        return Ok(ScalingSolution {
            gamma_star: 0.0,
            lambda_star: 0.0,
            p_star: *obs.center(),
        });
    }
    let qr = *rob.shape();
    let mut failure = None;
    let mut g = |lambda: f64| -> (f64, f64) {
        match stationary_point(obs, rob, lambda) {
            Ok((p, dp)) => {
                let d = sub(&p, rob.center());
                let val = qr.quad_form(&d) - 1.0;
                let deriv = 2.0 * dot(&qr.mul_vec(&d), &dp);
                (val, deriv)
            }
            Err(e) => {
                failure.get_or_insert(e);
                (f64::NAN, 0.0)
            }
        }
    };
    let mut hi = 1.0;
    let mut doublings = 0;
    while g(hi).0 >= 0.0 {
        hi *= 2.0;
        doublings += 1;
        if doublings > BRACKET_DOUBLINGS {
            return Err(CollisionError::SolverFailure(NumericsError::NoBracket {
                f_lo: g(0.0).0,
                f_hi: g(hi).0,
            }));
        }
    }
    let lambda = root_find_monotone(&mut g, 0.0, hi, DUAL_TOL);
    if let Some(e) = failure {
        return Err(e.into());
    }
    let lambda = lambda?;
    let (p, _) = stationary_point(obs, rob, lambda)?;
    Ok(ScalingSolution {
        gamma_star: obs.eval_scaling(&p),
        lambda_star: lambda,
        p_star: p,
    })
}

/// Stationarity residual `‖∇F_O(p*) + λ* ∇F_R(p*)‖` and primal residual
/// `|λ* (F_R(p*) − 1)|`, combined by max.
pub fn kkt_residual(obs: &Ellipsoid<2>, rob: &Ellipsoid<2>, sol: &ScalingSolution) -> f64 {
    let go = obs.shape().mul_vec(&sub(&sol.p_star, obs.center()));
    let gr = rob.shape().mul_vec(&sub(&sol.p_star, rob.center()));
    let stat = norm(&[
        2.0 * go[0] + sol.lambda_star * 2.0 * gr[0],
        2.0 * go[1] + sol.lambda_star * 2.0 * gr[1],
    ]);
    let comp = (sol.lambda_star * (rob.eval_scaling(&sol.p_star) - 1.0)).abs();
    stat.max(comp)
}

/// Minimum scaling factor between the robot at `x` and `obs`, with its
/// gradient with respect to the robot state.
pub fn min_scaling_grad(
    x: &RobotState,
    s: &RobotShape,
    obs: &Ellipsoid<2>,
) -> Result<ScalingResult, CollisionError> {
    let rob = robot_ellipse(x, s);
    let sol = min_scaling(obs, &rob)?;
    let grad_x = if sol.gamma_star > 0.0 {
        let g = scaling_state_grad(x, s, &sol.p_star);
        [sol.lambda_star * g[0], sol.lambda_star * g[1], sol.lambda_star * g[2]]
    } else {
        [0.0; 3]
    };
    Ok(ScalingResult {
        gamma_star: sol.gamma_star,
        lambda_star: sol.lambda_star,
        p_star: sol.p_star,
        grad_x,
    })
}

/// Barrier row `h = γ* − γ0` with Lie derivatives along the unicycle.
pub fn cbf_row(
    x: &RobotState,
    s: &RobotShape,
    obs: &Ellipsoid<2>,
    gamma0: f64,
    kappa: f64,
) -> Result<CbfRow, CollisionError> {
    cbf_row_with(&Unicycle, x, s, obs, gamma0, kappa)
}

/// Barrier row for arbitrary control-affine dynamics.
pub fn cbf_row_with<D: ControlAffine>(
    dynamics: &D,
    x: &RobotState,
    s: &RobotShape,
    obs: &Ellipsoid<2>,
    gamma0: f64,
    kappa: f64,
) -> Result<CbfRow, CollisionError> {
    let r = min_scaling_grad(x, s, obs)?;
    Ok(row_from_gradient(dynamics, x, r.gamma_star, &r.grad_x, gamma0, kappa))
}

pub(crate) fn row_from_gradient<D: ControlAffine>(
    dynamics: &D,
    x: &RobotState,
    gamma_star: f64,
    grad_x: &Vec3,
    gamma0: f64,
    kappa: f64,
) -> CbfRow {
    let [g1, g2] = dynamics.input_columns(x);
    CbfRow {
        h: gamma_star - gamma0,
        lf_h: dot(grad_x, &dynamics.drift(x)),
        lg_h: [dot(grad_x, &g1), dot(grad_x, &g2)],
        kappa,
    }
}

/// How the second derivatives of `γ*` with respect to the state are obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SecondOrder {
    /// Central differences of the analytic gradient.
    FiniteDifference { step: f64 },
    /// Implicit differentiation of the KKT system.
    Analytic,
}

impl Default for SecondOrder {
    fn default() -> Self {
        SecondOrder::FiniteDifference { step: 1e-5 }
    }
}

/// Hessian of `γ*` with respect to `(p_x, p_y, θ)`, row-major.
pub type StateHessian = [[f64; 3]; 3];

/// `γ*`, its gradient and its state Hessian.
pub fn min_scaling_hessian(
    x: &RobotState,
    s: &RobotShape,
    obs: &Ellipsoid<2>,
    method: SecondOrder,
) -> Result<(ScalingResult, StateHessian), CollisionError> {
    let base = min_scaling_grad(x, s, obs)?;
    if base.gamma_star == 0.0 {
        return Ok((base, [[0.0; 3]; 3]));
    }
    let hess = match method {
        SecondOrder::FiniteDifference { step } => {
            let mut hess = [[0.0; 3]; 3];
            let x0 = x.as_array();
            for j in 0..3 {
                let mut xp = x0;
                let mut xm = x0;
                xp[j] += step;
                xm[j] -= step;
                let gp = min_scaling_grad(&RobotState::from_array(xp), s, obs)?.grad_x;
                let gm = min_scaling_grad(&RobotState::from_array(xm), s, obs)?.grad_x;
                for i in 0..3 {
                    hess[i][j] = (gp[i] - gm[i]) / (2.0 * step);
                }
            }
            hess
        }
        SecondOrder::Analytic => analytic_hessian(x, s, obs, &base)?,
    };
    Ok((base, hess))
}

fn analytic_hessian(
    x: &RobotState,
    s: &RobotShape,
    obs: &Ellipsoid<2>,
    sol: &ScalingResult,
) -> Result<StateHessian, CollisionError> {
    let (qr, dq, d2q) = s.shape_and_derivatives(x.theta);
    let lambda = sol.lambda_star;
    let d = sub(&sol.p_star, &x.position());
    let qd = qr.mul_vec(&d);
    let dqd = dq.mul_vec(&d);
    // ∂F_R/∂p, ∂F_R/∂x.
    let n = [2.0 * qd[0], 2.0 * qd[1]];
    let r = [-2.0 * qd[0], -2.0 * qd[1], dq.quad_form(&d)];
    // ∂²F_R/∂p∂x (2×3) and ∂²F_R/∂x² (3×3).
    let f_px = [
        [-2.0 * qr.get(0, 0), -2.0 * qr.get(0, 1), 2.0 * dqd[0]],
        [-2.0 * qr.get(1, 0), -2.0 * qr.get(1, 1), 2.0 * dqd[1]],
    ];
    let f_xx = [
        [2.0 * qr.get(0, 0), 2.0 * qr.get(0, 1), -2.0 * dqd[0]],
        [2.0 * qr.get(1, 0), 2.0 * qr.get(1, 1), -2.0 * dqd[1]],
        [-2.0 * dqd[0], -2.0 * dqd[1], d2q.quad_form(&d)],
    ];
    let lagr_pp: Sym2 = obs.shape().scale(2.0).add(&qr.scale(2.0 * lambda));
    // [L_pp n; nᵀ 0] [dp; dλ] = −[λ F_px; r] dx, one column per state component.
    let mut dp_dx = [[0.0; 3]; 2];
    let mut dl_dx = [0.0; 3];
    for j in 0..3 {
        let mut kkt = vec![
            lagr_pp.get(0, 0), lagr_pp.get(0, 1), n[0],
            lagr_pp.get(1, 0), lagr_pp.get(1, 1), n[1],
            n[0], n[1], 0.0,
        ];
        let mut rhs = vec![-lambda * f_px[0][j], -lambda * f_px[1][j], -r[j]];
        solve_dense(&mut kkt, &mut rhs, 3)?;
        dp_dx[0][j] = rhs[0];
        dp_dx[1][j] = rhs[1];
        dl_dx[j] = rhs[2];
    }
    let mut hess = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mixed = f_px[0][i] * dp_dx[0][j] + f_px[1][i] * dp_dx[1][j];
            hess[i][j] = r[i] * dl_dx[j] + lambda * (f_xx[i][j] + mixed);
        }
    }
    Ok(hess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_ellipse(rng: &mut ChaCha8Rng, center_range: f64) -> Ellipsoid<2> {
        let a = rng.random_range(0.2..1.5);
        let b = rng.random_range(0.2..1.5);
        let t = rng.random_range(-PI..PI);
        let shape = RobotShape::new(a, b).unwrap().shape_and_derivatives(t).0;
        Ellipsoid::new(
            [
                rng.random_range(-center_range..center_range),
                rng.random_range(-center_range..center_range),
            ],
            shape,
        )
        .unwrap()
    }

    #[test]
    fn collinear_unit_disks() {
        let obs = Ellipsoid::ball([3.0, 0.0], 1.0).unwrap();
        let rob = Ellipsoid::ball([0.0, 0.0], 1.0).unwrap();
        let sol = min_scaling(&obs, &rob).unwrap();
        assert_abs_diff_eq!(sol.gamma_star, 4.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.lambda_star, 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.p_star[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.p_star[1], 0.0, epsilon = 1e-8);
        assert!(kkt_residual(&obs, &rob, &sol) <= 1e-8);
    }

    #[test]
    fn elongated_obstacle() {
        let obs = Ellipsoid::new([4.0, 0.0], Sym2::from_diag([0.25, 1.0])).unwrap();
        let rob = Ellipsoid::ball([0.0, 0.0], 1.0).unwrap();
        let sol = min_scaling(&obs, &rob).unwrap();
        assert_abs_diff_eq!(sol.gamma_star, 2.25, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.lambda_star, 0.75, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.p_star[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn center_inside_robot_is_inactive() {
        let obs = Ellipsoid::ball([0.2, 0.0], 0.5).unwrap();
        let rob = Ellipsoid::ball([0.0, 0.0], 1.0).unwrap();
        let sol = min_scaling(&obs, &rob).unwrap();
        assert_eq!(sol.gamma_star, 0.0);
        assert_eq!(sol.lambda_star, 0.0);
        assert_eq!(sol.p_star, [0.2, 0.0]);
        let x = RobotState::new(0.0, 0.0, 0.0);
        let r = min_scaling_grad(&x, &RobotShape::new(1.0, 1.0).unwrap(), &obs).unwrap();
        assert_eq!(r.grad_x, [0.0; 3]);
    }

    /// Dense sampling of the robot disk: interior grid plus a fine boundary
    /// parameterization.
    fn grid_min(obs: &Ellipsoid<2>, rob: &Ellipsoid<2>, n: usize) -> f64 {
        let r = rob.semi_axes()[1];
        let c = rob.center();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let p = [
                    c[0] - r + 2.0 * r * i as f64 / (n - 1) as f64,
                    c[1] - r + 2.0 * r * j as f64 / (n - 1) as f64,
                ];
                if rob.eval_scaling(&p) <= 1.0 {
                    best = best.min(obs.eval_scaling(&p));
                }
            }
        }
        for k in 0..(n * 100) {
            let p = rob.boundary_point(2.0 * PI * k as f64 / (n * 100) as f64);
            best = best.min(obs.eval_scaling(&p));
        }
        best
    }

    #[test]
    fn overlapping_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 5 {
            let obs = random_ellipse(&mut rng, 1.5);
            let rob = random_ellipse(&mut rng, 0.5);
            let sol = min_scaling(&obs, &rob).unwrap();
            if !(sol.gamma_star > 0.0 && sol.gamma_star < 1.0) {
                continue;
            }
            let oracle = grid_min(&obs, &rob, 1000);
            assert!(
                (sol.gamma_star - oracle).abs() <= 1e-3,
                "solver {} oracle {}",
                sol.gamma_star,
                oracle
            );
            assert!(sol.gamma_star <= oracle + 1e-12);
            checked += 1;
        }
    }

    #[test]
    fn disjointness_matches_overlap_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut checked = 0;
        let n = 200;
        while checked < 500 {
            let obs = random_ellipse(&mut rng, 2.5);
            let rob = random_ellipse(&mut rng, 0.5);
            let gamma = min_scaling(&obs, &rob).unwrap().gamma_star;
            // Tangent-ish pairs are below the oracle's grid resolution.
            if (gamma - 1.0).abs() < 0.05 {
                continue;
            }
            let r = rob.semi_axes()[1];
            let c = rob.center();
            let mut overlap = false;
            'grid: for i in 0..n {
                for j in 0..n {
                    let p = [
                        c[0] - r + 2.0 * r * i as f64 / (n - 1) as f64,
                        c[1] - r + 2.0 * r * j as f64 / (n - 1) as f64,
                    ];
                    if rob.contains(&p) && obs.contains(&p) {
                        overlap = true;
                        break 'grid;
                    }
                }
            }
            assert_eq!(gamma > 1.0, !overlap, "gamma {gamma}");
            checked += 1;
        }
    }

    #[test]
    fn inflation_divides_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let obs = random_ellipse(&mut rng, 4.0);
            let rob = random_ellipse(&mut rng, 0.5);
            let g = min_scaling(&obs, &rob).unwrap().gamma_star;
            let delta = rng.random_range(1.0..3.0);
            let gi = min_scaling(&obs.scaled(delta), &rob).unwrap().gamma_star;
            assert!((gi - g / delta).abs() <= 1e-9 * g.max(1.0), "{gi} vs {}", g / delta);
        }
    }

    #[test]
    fn tangency_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut checked = 0;
        while checked < 100 {
            let obs = random_ellipse(&mut rng, 4.0);
            let rob = random_ellipse(&mut rng, 0.5);
            let g = min_scaling(&obs, &rob).unwrap().gamma_star;
            if g <= 1.0 {
                continue;
            }
            let touching = obs.scaled(g);
            let forward = min_scaling(&touching, &rob).unwrap().gamma_star;
            let swapped = min_scaling(&rob, &touching).unwrap().gamma_star;
            assert_abs_diff_eq!(forward, 1.0, epsilon = 1e-6);
            assert_abs_diff_eq!(swapped, 1.0, epsilon = 1e-6);
            checked += 1;
        }
    }

    #[test]
    fn kkt_residual_small_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..1000 {
            let obs = random_ellipse(&mut rng, 4.0);
            let rob = random_ellipse(&mut rng, 0.5);
            let sol = min_scaling(&obs, &rob).unwrap();
            assert!(kkt_residual(&obs, &rob, &sol) <= 1e-8);
            if sol.gamma_star > 1.0 {
                assert_abs_diff_eq!(rob.eval_scaling(&sol.p_star), 1.0, epsilon = 1e-8);
                assert!(sol.lambda_star > 0.0);
            }
        }
    }

    #[test]
    fn gradient_of_collinear_disks() {
        // γ*(p_x) = (2 − p_x)² near p_x = 0, so ∂γ*/∂p_x = −4.
        let obs = Ellipsoid::ball([3.0, 0.0], 1.0).unwrap();
        let s = RobotShape::new(1.0, 1.0).unwrap();
        let x = RobotState::new(0.0, 0.0, 0.0);
        let r = min_scaling_grad(&x, &s, &obs).unwrap();
        assert_abs_diff_eq!(r.grad_x[0], -4.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r.grad_x[1], 0.0, epsilon = 1e-8);
        assert_eq!(r.grad_x[2], 0.0);
        let h = 1e-6;
        let gp = min_scaling_grad(&RobotState::new(h, 0.0, 0.0), &s, &obs).unwrap().gamma_star;
        let gm = min_scaling_grad(&RobotState::new(-h, 0.0, 0.0), &s, &obs).unwrap().gamma_star;
        assert_abs_diff_eq!((gp - gm) / (2.0 * h), r.grad_x[0], epsilon = 1e-4);
    }

    #[test]
    fn cbf_row_cases() {
        let obs = Ellipsoid::ball([3.0, 0.0], 1.0).unwrap();
        let s = RobotShape::new(1.0, 1.0).unwrap();
        let row = cbf_row(&RobotState::new(0.0, 0.0, 0.0), &s, &obs, 1.2, 3.3).unwrap();
        assert_abs_diff_eq!(row.h, 2.8, epsilon = 1e-8);
        assert_eq!(row.lf_h, 0.0);
        assert_abs_diff_eq!(row.lg_h[0], -4.0, epsilon = 1e-8);
        assert_abs_diff_eq!(row.lg_h[1], 0.0, epsilon = 1e-8);

        let x = RobotState::new(0.0, 0.0, FRAC_PI_2);
        let r = row_from_gradient(&Unicycle, &x, 4.0, &[4.0, 0.0, 1.0], 1.2, 3.3);
        assert_abs_diff_eq!(r.lg_h[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.lg_h[1], 1.0, epsilon = 1e-15);
        let r = row_from_gradient(&Unicycle, &RobotState::new(0.0, 0.0, 0.0), 4.0, &[4.0, 0.0, 0.0], 1.2, 3.3);
        assert_eq!(r.lg_h, [4.0, 0.0]);
    }

    #[test]
    fn drift_hook_feeds_lf_h() {
        struct Drifting;
        impl ControlAffine for Drifting {
            fn drift(&self, _x: &RobotState) -> Vec3 {
                [1.0, 0.0, 0.0]
            }
            fn input_columns(&self, x: &RobotState) -> [Vec3; 2] {
                Unicycle.input_columns(x)
            }
        }
        let obs = Ellipsoid::ball([3.0, 0.0], 1.0).unwrap();
        let s = RobotShape::new(1.0, 1.0).unwrap();
        let row = cbf_row_with(&Drifting, &RobotState::new(0.0, 0.0, 0.0), &s, &obs, 1.2, 3.3).unwrap();
        assert_abs_diff_eq!(row.lf_h, -4.0, epsilon = 1e-8);
    }

    fn fd_gradient(x: &RobotState, s: &RobotShape, obs: &Ellipsoid<2>, h: f64) -> Vec3 {
        let x0 = x.as_array();
        let mut g = [0.0; 3];
        for k in 0..3 {
            let mut xp = x0;
            let mut xm = x0;
            xp[k] += h;
            xm[k] -= h;
            let fp = min_scaling(obs, &robot_ellipse(&RobotState::from_array(xp), s)).unwrap().gamma_star;
            let fm = min_scaling(obs, &robot_ellipse(&RobotState::from_array(xm), s)).unwrap().gamma_star;
            g[k] = (fp - fm) / (2.0 * h);
        }
        g
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let mut worst = 0.0f64;
        let mut n = 0;
        while n < 1000 {
            let obs = random_ellipse(&mut rng, 4.0);
            let s = RobotShape::new(rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)).unwrap();
            let x = RobotState::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-PI..PI));
            let r = min_scaling_grad(&x, &s, &obs).unwrap();
            if r.gamma_star < 1.0 {
                continue;
            }
            let fd = fd_gradient(&x, &s, &obs, 1e-6);
            let err = norm(&sub(&r.grad_x, &fd)) / norm(&fd).max(1e-3);
            worst = worst.max(err);
            n += 1;
        }
        assert!(worst <= 1e-4, "worst relative error {worst:e}");
    }

    #[test]
    fn analytic_hessian_matches_finite_difference_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let mut n = 0;
        while n < 300 {
            let obs = random_ellipse(&mut rng, 4.0);
            let s = RobotShape::new(rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)).unwrap();
            let x = RobotState::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-PI..PI));
            let (r, ha) = min_scaling_hessian(&x, &s, &obs, SecondOrder::Analytic).unwrap();
            if r.gamma_star < 1.0 {
                continue;
            }
            let (_, hf) = min_scaling_hessian(&x, &s, &obs, SecondOrder::default()).unwrap();
            let scale = ha.iter().flatten().fold(1.0f64, |a, v| a.max(v.abs()));
            for i in 0..3 {
                for j in 0..3 {
                    assert!((ha[i][j] - hf[i][j]).abs() <= 1e-5 * scale, "({i},{j}) {} vs {}", ha[i][j], hf[i][j]);
                    assert!((ha[i][j] - ha[j][i]).abs() <= 1e-8 * scale);
                }
            }
            n += 1;
        }
    }
}
