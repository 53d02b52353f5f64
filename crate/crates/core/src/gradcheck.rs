//! Finite-difference suites for the collision and volume gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::collision::{min_scaling_grad, SecondOrder};
use crate::feasibility::{
    assemble_polytope, max_inscribed_ellipsoid, volume_cbf, volume_of, BarrierParams, InputBox,
};
use crate::geometry::{Ellipsoid, RobotShape, RobotState};
use crate::numerics::{Sym2, Vec3};

/// MVIE duality-gap tolerance used on both sides of the volume comparison.
const VOLUME_MVIE_TOL: f64 = 1e-10;
/// Give up after this many rejected draws per accepted instance.
const MAX_DRAWS_PER_INSTANCE: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub step: f64,
    pub collision_tolerance: f64,
    pub volume_tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { instances: 200, step: 1e-5, collision_tolerance: 1e-4, volume_tolerance: 2e-3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    /// Draws discarded before comparison (solver failure or an active-set
    /// change inside the difference stencil).
    pub rejected: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self { name: name.into(), instances: 0, rejected: 0, max_rel_error: 0.0, tolerance, passed: false }
    }

    fn finish(mut self, wanted: usize) -> Self {
        self.passed = self.instances >= wanted && self.max_rel_error <= self.tolerance;
        self
    }
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<10} {} instances ({} rejected), max rel error {:.3e}, tolerance {:.1e}: {}",
            self.name,
            self.instances,
            self.rejected,
            self.max_rel_error,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// `‖analytic − fd‖∞ / max(‖fd‖∞, floor)`.
pub fn relative_error(analytic: &Vec3, fd: &Vec3, floor: f64) -> f64 {
    let diff = (0..3).map(|k| (analytic[k] - fd[k]).abs()).fold(0.0, f64::max);
    let scale = fd.iter().map(|v| v.abs()).fold(floor, f64::max);
    diff / scale
}

/// Central differences of `f` along each state coordinate.
pub fn central_difference<E>(x: &RobotState, step: f64, mut f: impl FnMut(&RobotState) -> Result<f64, E>) -> Result<Vec3, E> {
    let base = x.as_array();
    let mut g = [0.0; 3];
    for k in 0..3 {
        let (mut plus, mut minus) = (base, base);
        plus[k] += step;
        minus[k] -= step;
        g[k] = (f(&RobotState::from_array(plus))? - f(&RobotState::from_array(minus))?) / (2.0 * step);
    }
    Ok(g)
}

fn random_ellipse(rng: &mut ChaCha8Rng, center: [f64; 2]) -> Ellipsoid<2> {
    let a: f64 = rng.random_range(0.3..1.0);
    let b: f64 = rng.random_range(0.3..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (s, c) = phi.sin_cos();
    let (ia, ib) = (1.0 / (a * a), 1.0 / (b * b));
    let q = Sym2::from_rows_symmetrized([
        [ia * c * c + ib * s * s, (ia - ib) * c * s],
        [(ia - ib) * c * s, ia * s * s + ib * c * c],
    ]);
    Ellipsoid::new(center, q).expect("positive semi-axes")
}

fn random_pose(rng: &mut ChaCha8Rng) -> RobotState {
    RobotState::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0))
}

fn obstacle_near(rng: &mut ChaCha8Rng, x: &RobotState, min_dist: f64, max_dist: f64) -> Ellipsoid<2> {
    let d: f64 = rng.random_range(min_dist..max_dist);
    let ang: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    random_ellipse(rng, [x.p_x + d * ang.cos(), x.p_y + d * ang.sin()])
}

/// `∂γ*/∂x` against central differences of `γ*` on disjoint robot/obstacle pairs.
pub fn collision_suite(cfg: &GradcheckConfig) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xC011);
    let shape = RobotShape::new(0.4, 0.25).expect("valid shape");
    let mut rep = SuiteReport::new("collision", cfg.collision_tolerance);
    while rep.instances < cfg.instances && rep.rejected < MAX_DRAWS_PER_INSTANCE * cfg.instances.max(1) {
        let x = random_pose(&mut rng);
        let obs = obstacle_near(&mut rng, &x, 1.5, 5.0);
        let Ok(r) = min_scaling_grad(&x, &shape, &obs) else {
            rep.rejected += 1;
            continue;
        };
        if r.gamma_star <= 1.0 {
            rep.rejected += 1;
            continue;
        }
        let fd = central_difference(&x, cfg.step, |y| min_scaling_grad(y, &shape, &obs).map(|s| s.gamma_star));
        let Ok(fd) = fd else {
            rep.rejected += 1;
            continue;
        };
        let err = relative_error(&r.grad_x, &fd, 1e-8);
        log::debug!("collision instance {}: rel error {err:.3e}", rep.instances);
        rep.max_rel_error = rep.max_rel_error.max(err);
        rep.instances += 1;
    }
    rep.finish(cfg.instances)
}

/// `∂V/∂x` through the active multipliers against central differences of the
/// re-assembled and re-solved inscribed-ellipse volume.
pub fn volume_suite(cfg: &GradcheckConfig) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7011);
    let shape = RobotShape::new(0.4, 0.25).expect("valid shape");
    let params = BarrierParams { kappa: 3.3, gamma0: 1.2, second_order: SecondOrder::default() };
    let input_box = InputBox::default();
    let mut rep = SuiteReport::new("volume", cfg.volume_tolerance);
    while rep.instances < cfg.instances && rep.rejected < MAX_DRAWS_PER_INSTANCE * cfg.instances.max(1) {
        let x = random_pose(&mut rng);
        let n_obs = rng.random_range(1..=3);
        let obstacles: Vec<_> = (0..n_obs).map(|_| obstacle_near(&mut rng, &x, 1.2, 3.0)).collect();
        let solve = |y: &RobotState| {
            let poly = assemble_polytope(y, &shape, &obstacles, &input_box, &params).map_err(|_| ())?;
            let e = max_inscribed_ellipsoid(&poly, VOLUME_MVIE_TOL).map_err(|_| ())?;
            Ok::<_, ()>((poly, e))
        };
        let Ok((poly, e)) = solve(&x) else {
            rep.rejected += 1;
            continue;
        };
        let analytic = volume_cbf(&x, &poly, &e, 0.01, 1.1).dv_dx;
        // The volume is only differentiable away from active-set changes.
        let mut same_active = true;
        let fd = central_difference(&x, cfg.step, |y| {
            let (_, ey) = solve(y)?;
            same_active &= ey.active_set == e.active_set;
            Ok::<_, ()>(volume_of(&ey, 2))
        });
        let Ok(fd) = fd else {
            rep.rejected += 1;
            continue;
        };
        if !same_active {
            rep.rejected += 1;
            continue;
        }
        let floor = 1e-6 * volume_of(&e, 2).max(1e-12);
        let err = relative_error(&analytic, &fd, floor);
        log::debug!("volume instance {}: rel error {err:.3e}", rep.instances);
        rep.max_rel_error = rep.max_rel_error.max(err);
        rep.instances += 1;
    }
    rep.finish(cfg.instances)
}

pub fn run_all(cfg: &GradcheckConfig) -> Vec<SuiteReport> {
    vec![collision_suite(cfg), volume_suite(cfg)]
}
