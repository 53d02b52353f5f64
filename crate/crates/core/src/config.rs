//! Flat-key run configuration shared by every command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::SecondOrder;
use crate::conformal::CalibrationConfig;
use crate::feasibility::InputBox;
use crate::geometry::{RobotShape, RobotState};
use crate::numerics::Sym2;
use crate::sim::{EnvConfig, Method, NominalGains, Perception, SensorConfig, TrialParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Every tunable of a run. Unknown keys are rejected; missing keys take the
/// defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Calibration
    pub alpha: f64,
    pub n_cal: usize,
    /// Fixed inflation factor; calibrated from `n_cal` records when absent.
    pub delta: Option<f64>,
    pub calibration_seed: u64,

    // Controller
    pub kappa: f64,
    pub kappa_v: f64,
    pub gamma0: f64,
    pub v0: f64,
    pub m_v: f64,
    pub m_omega: f64,
    pub k_p: f64,
    pub k_omega: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub analytic_second_order: bool,

    // Simulation
    pub dt: f64,
    pub horizon: f64,
    pub success_radius: f64,
    pub perception: Perception,

    // Sensor and fitting
    pub eta: f64,
    pub n_rays: usize,
    pub max_range: f64,
    pub fov: f64,
    pub sensor_noise: bool,
    pub drop_beyond_range: bool,
    pub min_cluster_points: usize,
    pub mvee_tol: f64,
    pub mvie_tol: f64,

    // Environment generator
    pub workspace_x: f64,
    pub workspace_y: f64,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    pub min_semi_axis: f64,
    pub max_semi_axis: f64,
    pub start_x: f64,
    pub start_y: f64,
    pub start_theta: f64,
    pub goal_x: f64,
    pub goal_y: f64,
    pub robot_a: f64,
    pub robot_b: f64,
    pub clearance: f64,

    // Runs
    pub seed: u64,
    pub n_trials: usize,
    pub methods: Vec<Method>,
    pub workers: Option<usize>,
    pub out_dir: PathBuf,

    // Gradient checks
    pub gradcheck_instances: usize,
    pub gradcheck_step: f64,
    pub collision_tolerance: f64,
    pub volume_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let env = EnvConfig::default();
        let sensor = SensorConfig::default();
        let trial = TrialParams::default();
        let cal = CalibrationConfig::default();
        Self {
            alpha: cal.alpha,
            n_cal: cal.n_cal,
            delta: None,
            calibration_seed: cal.seed,
            kappa: trial.kappa,
            kappa_v: trial.kappa_v,
            gamma0: trial.gamma0,
            v0: trial.v0,
            m_v: trial.weight.get(0, 0),
            m_omega: trial.weight.get(1, 1),
            k_p: trial.gains.k_p,
            k_omega: trial.gains.k_omega,
            v_max: trial.input_box.upper[0],
            omega_max: trial.input_box.upper[1],
            analytic_second_order: matches!(trial.second_order, SecondOrder::Analytic),
            dt: trial.dt,
            horizon: trial.horizon,
            success_radius: trial.success_radius,
            perception: trial.perception,
            eta: sensor.eta,
            n_rays: sensor.n_rays,
            max_range: sensor.max_range,
            fov: sensor.fov,
            sensor_noise: sensor.noise,
            drop_beyond_range: sensor.drop_beyond_range,
            min_cluster_points: trial.min_cluster_points,
            mvee_tol: trial.mvee_tol,
            mvie_tol: trial.mvie_tol,
            workspace_x: env.workspace[0],
            workspace_y: env.workspace[1],
            min_obstacles: env.min_obstacles,
            max_obstacles: env.max_obstacles,
            min_semi_axis: env.min_semi_axis,
            max_semi_axis: env.max_semi_axis,
            start_x: env.start.p_x,
            start_y: env.start.p_y,
            start_theta: env.start.theta,
            goal_x: env.goal[0],
            goal_y: env.goal[1],
            robot_a: env.robot.semi_axis_a,
            robot_b: env.robot.semi_axis_b,
            clearance: env.clearance,
            seed: 0,
            n_trials: 100,
            methods: Method::ALL.to_vec(),
            workers: None,
            out_dir: PathBuf::from("out"),
            gradcheck_instances: 200,
            gradcheck_step: 1e-5,
            collision_tolerance: 1e-4,
            volume_tolerance: 2e-3,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if let Some(d) = self.delta {
            if !(d >= 1.0 && d.is_finite()) {
                return bad(format!("delta must be finite and at least 1, got {d}"));
            }
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("kappa_v", self.kappa_v),
            ("v0", self.v0),
            ("m_v", self.m_v),
            ("m_omega", self.m_omega),
            ("k_p", self.k_p),
            ("k_omega", self.k_omega),
            ("v_max", self.v_max),
            ("omega_max", self.omega_max),
            ("dt", self.dt),
            ("horizon", self.horizon),
            ("success_radius", self.success_radius),
            ("mvee_tol", self.mvee_tol),
            ("mvie_tol", self.mvie_tol),
            ("robot_a", self.robot_a),
            ("robot_b", self.robot_b),
            ("gradcheck_step", self.gradcheck_step),
            ("collision_tolerance", self.collision_tolerance),
            ("volume_tolerance", self.volume_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.gamma0 >= 1.0) {
            return bad(format!("gamma0 must be at least 1, got {}", self.gamma0));
        }
        if self.robot_b > self.robot_a {
            return bad("robot_b must not exceed robot_a".into());
        }
        if self.min_obstacles > self.max_obstacles {
            return bad("min_obstacles exceeds max_obstacles".into());
        }
        if !(0.0 < self.min_semi_axis && self.min_semi_axis <= self.max_semi_axis) {
            return bad("semi-axis range must satisfy 0 < min <= max".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        self.sensor().validate().map_err(ConfigError::Invalid)
    }

    pub fn sensor(&self) -> SensorConfig {
        SensorConfig {
            n_rays: self.n_rays,
            max_range: self.max_range,
            eta: self.eta,
            fov: self.fov,
            noise: self.sensor_noise,
            drop_beyond_range: self.drop_beyond_range,
        }
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            workspace: [self.workspace_x, self.workspace_y],
            min_obstacles: self.min_obstacles,
            max_obstacles: self.max_obstacles,
            min_semi_axis: self.min_semi_axis,
            max_semi_axis: self.max_semi_axis,
            start: RobotState::new(self.start_x, self.start_y, self.start_theta),
            goal: [self.goal_x, self.goal_y],
            robot: RobotShape { semi_axis_a: self.robot_a, semi_axis_b: self.robot_b },
            clearance: self.clearance,
            ..EnvConfig::default()
        }
    }

    pub fn trial_params(&self) -> TrialParams {
        TrialParams {
            kappa: self.kappa,
            kappa_v: self.kappa_v,
            gamma0: self.gamma0,
            v0: self.v0,
            weight: Sym2::from_diag([self.m_v, self.m_omega]),
            dt: self.dt,
            horizon: self.horizon,
            success_radius: self.success_radius,
            gains: NominalGains { k_p: self.k_p, k_omega: self.k_omega },
            input_box: InputBox {
                lower: [-self.v_max, -self.omega_max],
                upper: [self.v_max, self.omega_max],
            },
            sensor: self.sensor(),
            perception: self.perception,
            min_cluster_points: self.min_cluster_points,
            mvee_tol: self.mvee_tol,
            mvie_tol: self.mvie_tol,
            second_order: if self.analytic_second_order {
                SecondOrder::Analytic
            } else {
                SecondOrder::default()
            },
            record_trajectory: true,
        }
    }

    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            n_cal: self.n_cal,
            alpha: self.alpha,
            seed: self.calibration_seed,
            env: self.env(),
            sensor: self.sensor(),
            min_cluster_points: self.min_cluster_points,
            mvee_tol: self.mvee_tol,
            ..CalibrationConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_gains() {
        let c = RunConfig::default();
        assert_eq!((c.kappa, c.kappa_v, c.gamma0, c.v0), (3.3, 1.1, 1.2, 0.01));
        assert_eq!((c.alpha, c.n_cal), (0.05, 5000));
        assert!((c.eta - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((c.v_max, c.omega_max), (1.0, 0.5));
        assert_eq!(c.trial_params(), TrialParams::default());
        assert_eq!(c.env(), EnvConfig::default());
        assert_eq!(c.calibration(), CalibrationConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn round_trip_is_identity() {
        let mut c = RunConfig::default();
        c.delta = Some(1.4);
        c.methods = vec![Method::Proposed];
        c.workers = Some(2);
        c.perception = Perception::GroundTruth;
        let text = c.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml_str("alpha = 0.1\nmethods = [\"proposed\", \"nofeasibility\"]\n").unwrap();
        assert_eq!(c.alpha, 0.1);
        assert_eq!(c.methods, vec![Method::Proposed, Method::NoFeasibility]);
        assert_eq!(c.kappa, 3.3);
    }

    #[test]
    fn unknown_and_invalid_keys_rejected() {
        assert!(matches!(RunConfig::from_toml_str("kapa = 3.0"), Err(ConfigError::Parse(_))));
        assert!(matches!(RunConfig::from_toml_str("alpha = 1.5"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_toml_str("n_rays = 4"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_toml_str("eta = 0.0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_toml_str("delta = 0.5"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::from_toml_str("alpha = \"x\""), Err(ConfigError::Parse(_))));
    }
}
