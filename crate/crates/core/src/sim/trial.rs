use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::SecondOrder;
use crate::conformal::inflate;
use crate::feasibility::{
    assemble_polytope, max_inscribed_ellipsoid, volume_cbf, volume_of, BarrierParams, InputBox,
};
use crate::geometry::{mvee_fit, Ellipsoid, RobotState};
use crate::numerics::{Sym2, Vec2};
use crate::qp::{solve_plain_qp, solve_safety_qp, slack_within_bound, ControlSolution, SolveStatus};

use super::dynamics::{nominal_control, unicycle_step, NominalGains};
use super::env::Environment;
use super::sensor::{lidar_scan, SensorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Calibrated inflation, volume barrier and slack QP.
    Proposed,
    /// Volume barrier and slack QP on raw fitted ellipses.
    Uninflated,
    /// Calibrated inflation with the plain barrier QP.
    NoFeasibility,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Proposed, Method::Uninflated, Method::NoFeasibility];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Uninflated => "uninflated",
            Method::NoFeasibility => "nofeasibility",
        }
    }

    /// Stable tag for RNG stream derivation.
    pub fn tag(self) -> u64 {
        match self {
            Method::Proposed => 1,
            Method::Uninflated => 2,
            Method::NoFeasibility => 3,
        }
    }

    pub fn uses_volume_barrier(self) -> bool {
        !matches!(self, Method::NoFeasibility)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "proposed" => Ok(Method::Proposed),
            "uninflated" => Ok(Method::Uninflated),
            "nofeasibility" => Ok(Method::NoFeasibility),
            other => Err(format!("unknown method '{other}' (expected proposed, uninflated or nofeasibility)")),
        }
    }
}

/// Where the controller's obstacle ellipses come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Perception {
    /// Scan, fit one ellipse per ray cluster, inflate.
    #[default]
    Lidar,
    /// Use the true obstacles directly.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialParams {
    pub kappa: f64,
    pub kappa_v: f64,
    pub gamma0: f64,
    pub v0: f64,
    pub weight: Sym2,
    pub dt: f64,
    pub horizon: f64,
    pub success_radius: f64,
    pub gains: NominalGains,
    pub input_box: InputBox,
    pub sensor: SensorConfig,
    pub perception: Perception,
    /// Clusters with fewer hits are ignored.
    pub min_cluster_points: usize,
    pub mvee_tol: f64,
    pub mvie_tol: f64,
    pub second_order: SecondOrder,
    pub record_trajectory: bool,
}

impl Default for TrialParams {
    fn default() -> Self {
        Self {
            kappa: 3.3,
            kappa_v: 1.1,
            gamma0: 1.2,
            v0: 0.01,
            weight: Sym2::identity(),
            dt: 0.02,
            horizon: 60.0,
            success_radius: 0.1,
            gains: NominalGains::default(),
            input_box: InputBox::default(),
            sensor: SensorConfig::default(),
            perception: Perception::Lidar,
            min_cluster_points: 20,
            mvee_tol: 1e-4,
            mvie_tol: crate::feasibility::MVIE_DEFAULT_TOL,
            second_order: SecondOrder::default(),
            record_trajectory: true,
        }
    }
}

/// One line of the per-trial trajectory file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub p_x: f64,
    pub p_y: f64,
    #[serde(rename = "θ")]
    pub theta: f64,
    pub v: f64,
    #[serde(rename = "ω")]
    pub omega: f64,
    #[serde(rename = "ε")]
    pub epsilon: f64,
    #[serde(rename = "V")]
    pub volume: f64,
    pub h_min: f64,
    pub status: SolveStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub method: Method,
    pub seed: u64,
    pub success: bool,
    pub collision: bool,
    pub timeout: bool,
    pub steps: usize,
    /// Smallest true scaling factor over the trajectory.
    pub min_true_gamma: f64,
    pub wall_time: f64,
    /// Smallest inscribed-ellipse volume over all steps.
    pub min_volume: f64,
    pub infeasible_steps: usize,
    pub degraded_steps: usize,
    /// Steps where the slack exceeded `κ_v V_0`.
    pub premise_violations: usize,
    /// Steps whose QP working set differs from the previous step's.
    pub active_set_switches: usize,
    pub final_distance: f64,
    /// `(t, V)` per control step; empty unless trajectories are recorded.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub volume_trace: Vec<(f64, f64)>,
}

impl TrialOutcome {
    /// Every step was solved and the slack premise held throughout.
    pub fn premise_held(&self) -> bool {
        self.infeasible_steps == 0 && self.premise_violations == 0
    }
}

/// Writes trajectory rows as CSV with a header line.
pub fn write_trajectory_csv<W: std::io::Write>(rows: &[TrajectoryRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["t", "p_x", "p_y", "θ", "v", "ω", "ε", "V", "h_min", "status"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Perceived obstacle ellipses, already inflated by `delta`.
pub fn perceive(
    x: &RobotState,
    env: &Environment,
    params: &TrialParams,
    delta: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Ellipsoid<2>> {
    match params.perception {
        Perception::GroundTruth => env.obstacles.iter().map(|o| inflate(o, delta)).collect(),
        Perception::Lidar => {
            let scan = lidar_scan(x, &env.obstacles, &params.sensor, rng);
            scan.clouds
                .iter()
                .filter(|c| c.len() >= params.min_cluster_points)
                .filter_map(|c| match mvee_fit(c, params.mvee_tol) {
                    Ok(e) => Some(inflate(&e, delta)),
                    Err(e) => {
                        log::debug!("skipping cluster of {} points: {e}", c.len());
                        None
                    }
                })
                .collect()
        }
    }
}

struct StepControl {
    sol: ControlSolution,
    volume: f64,
    h_min: f64,
}

fn control_step(
    x: &RobotState,
    u_r: &Vec2,
    obstacles: &[Ellipsoid<2>],
    env: &Environment,
    method: Method,
    params: &TrialParams,
) -> StepControl {
    let barrier = BarrierParams { kappa: params.kappa, gamma0: params.gamma0, second_order: params.second_order };
    let poly = match assemble_polytope(x, &env.robot, obstacles, &params.input_box, &barrier) {
        Ok(p) => p,
        Err(e) => {
            log::debug!("polytope assembly failed: {e}");
            return StepControl { sol: ControlSolution::fallback(), volume: 0.0, h_min: f64::NAN };
        }
    };
    let h_min = poly.barriers.iter().map(|r| r.h).fold(f64::INFINITY, f64::min);
    let mvie = max_inscribed_ellipsoid(&poly, params.mvie_tol);
    let volume = mvie.as_ref().map_or(0.0, |e| volume_of(e, 2));
    let sol = if method.uses_volume_barrier() {
        match &mvie {
            Ok(e) => {
                let v = volume_cbf(x, &poly, e, params.v0, params.kappa_v);
                solve_safety_qp(u_r, &params.weight, &poly, &v)
            }
            Err(e) => {
                log::debug!("no inscribed ellipse: {e}");
                return StepControl { sol: ControlSolution::fallback(), volume, h_min };
            }
        }
    } else {
        solve_plain_qp(u_r, &params.weight, &poly)
    };
    let sol = sol.unwrap_or_else(|e| {
        log::debug!("safety QP failed: {e}");
        ControlSolution::fallback()
    });
    StepControl { sol, volume, h_min }
}

/// Closed-loop run until the goal is reached, a true collision occurs or the
/// horizon elapses. `seed` drives the sensor noise.
pub fn run_trial(
    env: &Environment,
    method: Method,
    params: &TrialParams,
    delta: f64,
    seed: u64,
) -> (TrialOutcome, Vec<TrajectoryRow>) {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inflation = if method == Method::Uninflated { 1.0 } else { delta };
    let n_steps = (params.horizon / params.dt).round() as usize;
    let mut out = TrialOutcome {
        method,
        seed,
        success: false,
        collision: false,
        timeout: false,
        steps: 0,
        min_true_gamma: f64::INFINITY,
        wall_time: 0.0,
        min_volume: f64::INFINITY,
        infeasible_steps: 0,
        degraded_steps: 0,
        premise_violations: 0,
        active_set_switches: 0,
        final_distance: f64::NAN,
        volume_trace: Vec::new(),
    };
    let mut rows = Vec::new();
    let mut x = env.start;
    let mut prev_active: Option<Vec<usize>> = None;
    for step in 0..=n_steps {
        let t = step as f64 * params.dt;
        let gamma = env.min_gamma(&x);
        out.min_true_gamma = out.min_true_gamma.min(gamma);
        let dist = (x.p_x - env.goal[0]).hypot(x.p_y - env.goal[1]);
        out.final_distance = dist;
        if gamma < 1.0 {
            out.collision = true;
            break;
        }
        if dist <= params.success_radius {
            out.success = true;
            break;
        }
        if step == n_steps {
            out.timeout = true;
            break;
        }
        let obstacles = perceive(&x, env, params, inflation, &mut rng);
        let u_r = nominal_control(&x, &env.goal, &params.gains, &params.input_box);
        let ctl = control_step(&x, &u_r, &obstacles, env, method, params);
        let sol = &ctl.sol;
        match sol.status {
            SolveStatus::Infeasible => out.infeasible_steps += 1,
            SolveStatus::Degraded => out.degraded_steps += 1,
            SolveStatus::Solved => {}
        }
        if sol.status != SolveStatus::Infeasible {
            if method.uses_volume_barrier() && !slack_within_bound(sol, params.kappa_v, params.v0) {
                out.premise_violations += 1;
            }
            if prev_active.as_ref().is_some_and(|p| *p != sol.active_set) {
                out.active_set_switches += 1;
            }
            prev_active = Some(sol.active_set.clone());
        }
        out.min_volume = out.min_volume.min(ctl.volume);
        if params.record_trajectory {
            out.volume_trace.push((t, ctl.volume));
            rows.push(TrajectoryRow {
                t,
                p_x: x.p_x,
                p_y: x.p_y,
                theta: x.theta,
                v: sol.u[0],
                omega: sol.u[1],
                epsilon: sol.epsilon,
                volume: ctl.volume,
                h_min: ctl.h_min,
                status: sol.status,
            });
        }
        x = unicycle_step(&x, &sol.u, params.dt);
        out.steps += 1;
    }
    out.wall_time = clock.elapsed().as_secs_f64();
    (out, rows)
}
