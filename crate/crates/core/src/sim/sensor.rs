use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::geometry::{Ellipsoid, RobotState};
use crate::numerics::Vec2;

/// Planar range sensor with additive exponential range noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub n_rays: usize,
    pub max_range: f64,
    /// Rate of the exponential range noise (mean `1/eta`).
    pub eta: f64,
    /// Angular span centered on the heading.
    pub fov: f64,
    pub noise: bool,
    /// Discard returns whose measured range exceeds `max_range`.
    pub drop_beyond_range: bool,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            n_rays: 360,
            max_range: 6.0,
            eta: 2.0 / 3.0,
            fov: 2.0 * std::f64::consts::PI,
            noise: true,
            drop_beyond_range: false,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_rays < 8 {
            return Err(format!("n_rays must be at least 8, got {}", self.n_rays));
        }
        if !(self.eta > 0.0) {
            return Err(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.max_range > 0.0 && self.fov > 0.0) {
            return Err("max_range and fov must be positive".into());
        }
        Ok(())
    }
}

/// Hits grouped by the index of the obstacle each ray struck.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scan {
    pub clouds: Vec<Vec<Vec2>>,
    /// Noiseless intersection for every entry of `clouds`.
    pub truth: Vec<Vec<Vec2>>,
}

/// Casts `n_rays` rays from the robot center, evenly spread over the field of view.
pub fn lidar_scan<R: Rng + ?Sized>(
    x: &RobotState,
    obstacles: &[Ellipsoid<2>],
    cfg: &SensorConfig,
    rng: &mut R,
) -> Scan {
    let mut scan = Scan {
        clouds: vec![Vec::new(); obstacles.len()],
        truth: vec![Vec::new(); obstacles.len()],
    };
    let noise = Exp::new(cfg.eta).expect("eta validated positive");
    let origin = x.position();
    let start = x.theta - 0.5 * cfg.fov;
    let step = cfg.fov / cfg.n_rays as f64;
    for k in 0..cfg.n_rays {
        let ang = start + (k as f64 + 0.5) * step;
        let dir = [ang.cos(), ang.sin()];
        let mut best: Option<(usize, f64)> = None;
        for (i, obs) in obstacles.iter().enumerate() {
            if let Some(t) = obs.ray_hit(&origin, &dir) {
                if t <= cfg.max_range && best.map_or(true, |(_, bt)| t < bt) {
                    best = Some((i, t));
                }
            }
        }
        if let Some((i, r_true)) = best {
            let r = if cfg.noise { r_true + noise.sample(rng) } else { r_true };
            if cfg.drop_beyond_range && r > cfg.max_range {
                continue;
            }
            scan.truth[i].push([origin[0] + r_true * dir[0], origin[1] + r_true * dir[1]]);
            scan.clouds[i].push([origin[0] + r * dir[0], origin[1] + r * dir[1]]);
        }
    }
    scan
}
