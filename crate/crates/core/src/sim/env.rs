use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::collision::min_scaling;
use crate::geometry::{robot_ellipse, Ellipsoid, RobotShape, RobotState};
use crate::numerics::{rotation, Sym2, Vec2};

/// Random obstacle-field parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Workspace `[0, w] × [0, h]`.
    pub workspace: Vec2,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    pub min_semi_axis: f64,
    pub max_semi_axis: f64,
    pub start: RobotState,
    pub goal: Vec2,
    pub robot: RobotShape,
    /// Minimum scaling factor every obstacle must keep from the robot at the
    /// start pose and at the goal (any heading).
    pub clearance: f64,
    pub max_attempts: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            workspace: [10.0, 10.0],
            min_obstacles: 4,
            max_obstacles: 8,
            min_semi_axis: 0.3,
            max_semi_axis: 1.0,
            start: RobotState::new(1.0, 1.0, std::f64::consts::FRAC_PI_4),
            goal: [9.0, 9.0],
            robot: RobotShape { semi_axis_a: 0.4, semi_axis_b: 0.25 },
            clearance: 4.0,
            max_attempts: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub obstacles: Vec<Ellipsoid<2>>,
    pub start: RobotState,
    pub goal: Vec2,
    pub workspace: Vec2,
    pub robot: RobotShape,
}

impl Environment {
    pub fn empty(cfg: &EnvConfig) -> Self {
        Self {
            obstacles: Vec::new(),
            start: cfg.start,
            goal: cfg.goal,
            workspace: cfg.workspace,
            robot: cfg.robot,
        }
    }

    /// Smallest true scaling factor between the robot at `x` and any obstacle.
    pub fn min_gamma(&self, x: &RobotState) -> f64 {
        let rob = robot_ellipse(x, &self.robot);
        self.obstacles
            .iter()
            .map(|o| min_scaling(o, &rob).map_or(0.0, |s| s.gamma_star))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Random ellipse with semi-axes in the configured range and a uniform
/// orientation, centered uniformly in the workspace.
pub fn random_obstacle<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Ellipsoid<2> {
    let c = [rng.random_range(0.0..cfg.workspace[0]), rng.random_range(0.0..cfg.workspace[1])];
    let a = rng.random_range(cfg.min_semi_axis..=cfg.max_semi_axis);
    let b = rng.random_range(cfg.min_semi_axis..=cfg.max_semi_axis);
    let phi = rng.random_range(0.0..std::f64::consts::PI);
    let q = Sym2::from_diag([1.0 / (a * a), 1.0 / (b * b)]).congruence(&rotation(phi));
    Ellipsoid::new(c, q).expect("positive semi-axes")
}

fn clear_of(cfg: &EnvConfig, obs: &Ellipsoid<2>) -> bool {
    let gamma = |x: &RobotState, shape: &RobotShape| {
        min_scaling(obs, &robot_ellipse(x, shape)).map_or(0.0, |s| s.gamma_star)
    };
    // The goal heading is unknown: test a disk of the larger semi-axis.
    let r = cfg.robot.semi_axis_a.max(cfg.robot.semi_axis_b);
    let disk = RobotShape { semi_axis_a: r, semi_axis_b: r };
    let goal = RobotState::new(cfg.goal[0], cfg.goal[1], 0.0);
    gamma(&cfg.start, &cfg.robot) >= cfg.clearance && gamma(&goal, &disk) >= cfg.clearance
}

/// Draws the obstacle count, then rejection-samples each obstacle until it
/// keeps the start and goal clear.
pub fn generate_environment<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Environment {
    let n = rng.random_range(cfg.min_obstacles..=cfg.max_obstacles);
    let mut env = Environment::empty(cfg);
    let mut attempts = 0;
    while env.obstacles.len() < n && attempts < cfg.max_attempts {
        attempts += 1;
        let obs = random_obstacle(cfg, rng);
        if clear_of(cfg, &obs) {
            env.obstacles.push(obs);
        }
    }
    if env.obstacles.len() < n {
        log::warn!("environment generator placed {} of {n} obstacles", env.obstacles.len());
    }
    env
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn start_and_goal_are_clear() {
        let cfg = EnvConfig::default();
        for seed in 0..50 {
            let env = generate_environment(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!((cfg.min_obstacles..=cfg.max_obstacles).contains(&env.obstacles.len()));
            assert!(env.min_gamma(&env.start) >= cfg.clearance);
            for th in [0.0, 1.0, 2.0, 3.0] {
                assert!(env.min_gamma(&RobotState::new(cfg.goal[0], cfg.goal[1], th)) >= cfg.clearance);
            }
            for o in &env.obstacles {
                let ax = o.semi_axes();
                assert!(ax[0] >= cfg.min_semi_axis - 1e-12 && ax[1] <= cfg.max_semi_axis + 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = EnvConfig::default();
        let a = generate_environment(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = generate_environment(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
