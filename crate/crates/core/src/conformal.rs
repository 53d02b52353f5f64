//! Split conformal calibration of fitted obstacle ellipses.
//!
//! The nonconformity score of a record is the smallest factor `γ' ≥ 1` such
//! that the fitted ellipse with shape `Q/γ'` contains the record's true
//! points. The `⌈(1−α)(N+1)⌉`-th smallest score `Δ` then inflates new fits so
//! that they contain their true points with probability at least `1 − α`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{stream_seed, Execution};
use crate::geometry::{mvee_fit, Ellipsoid, RobotState};
use crate::numerics::{reg_inc_beta_inv, NumericsError, Vec2};
use crate::sim::env::{generate_environment, EnvConfig};
use crate::sim::sensor::{lidar_scan, SensorConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConformalError {
    #[error("calibration set too small: quantile index {index} exceeds {n} scores")]
    InsufficientCalibration { index: usize, n: usize },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("no grid value of alpha certifies coverage {target} at confidence {delta_conf}")]
    Unachievable { target: f64, delta_conf: f64 },
    #[error("record {index}: no usable cluster after {attempts} attempts")]
    RecordGeneration { index: usize, attempts: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// True surface points of one obstacle and the ellipse fitted to its noisy scan.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationRecord {
    pub true_points: Vec<Vec2>,
    pub fitted: Ellipsoid<2>,
}

/// `max(1, max_j F(p̄_j))`.
pub fn nonconformity_score(rec: &CalibrationRecord) -> f64 {
    rec.true_points
        .iter()
        .map(|p| rec.fitted.eval_scaling(p))
        .fold(1.0, f64::max)
}

/// 1-based quantile index `⌈(1−α)(n+1)⌉`.
pub fn quantile_index(n: usize, alpha: f64) -> usize {
    // Guard against 0.95 * 101 = 95.95000000000002-style round-off pushing the
    // ceiling up by one.
    let raw = (1.0 - alpha) * (n as f64 + 1.0);
    let r = raw.round();
    if (raw - r).abs() <= 1e-9 * raw.max(1.0) {
        r as usize
    } else {
        raw.ceil() as usize
    }
}

/// The `⌈(1−α)(N+1)⌉`-th smallest score.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64, ConformalError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ConformalError::InvalidAlpha(alpha));
    }
    let n = scores.len();
    let index = quantile_index(n, alpha);
    if index > n || index == 0 {
        return Err(ConformalError::InsufficientCalibration { index, n });
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[index - 1])
}

/// Same center, shape `Q/Δ`.
pub fn inflate(e: &Ellipsoid<2>, delta: f64) -> Ellipsoid<2> {
    debug_assert!(delta >= 1.0, "inflation factor below one shrinks the region");
    e.scaled(delta)
}

/// Largest grid value `α̂ = v/(N+1)` whose coverage, distributed as
/// `Beta(N − v + 1, v)`, exceeds `target` with probability `1 − δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlphaCertificate {
    pub alpha_hat: f64,
    pub v: usize,
    /// `δ`-quantile of the coverage distribution.
    pub certified_coverage: f64,
}

pub fn dataset_conditional_alpha(
    n_cal: usize,
    target_coverage: f64,
    delta_conf: f64,
) -> Result<AlphaCertificate, ConformalError> {
    if n_cal < 10 {
        return Err(ConformalError::InsufficientCalibration { index: 10, n: n_cal });
    }
    for (name, v) in [("target_coverage", target_coverage), ("delta_conf", delta_conf)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(NumericsError::Domain(format!("{name} must lie in (0, 1), got {v}")).into());
        }
    }
    let n = n_cal as f64;
    let coverage = |v: usize| reg_inc_beta_inv(n - v as f64 + 1.0, v as f64, delta_conf);
    // v = 0 is excluded by convention; coverage decreases in v.
    let (mut lo, mut hi) = (1usize, n_cal);
    if coverage(lo)? < target_coverage {
        return Err(ConformalError::Unachievable { target: target_coverage, delta_conf });
    }
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if coverage(mid)? >= target_coverage {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Ok(AlphaCertificate {
        alpha_hat: lo as f64 / (n + 1.0),
        v: lo,
        certified_coverage: coverage(lo)?,
    })
}

/// How calibration records are generated.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationConfig {
    pub n_cal: usize,
    pub alpha: f64,
    pub seed: u64,
    pub env: EnvConfig,
    pub sensor: SensorConfig,
    pub min_cluster_points: usize,
    pub mvee_tol: f64,
    pub max_retries: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_cal: 5000,
            alpha: 0.05,
            seed: 0,
            env: EnvConfig::default(),
            sensor: SensorConfig::default(),
            min_cluster_points: 20,
            mvee_tol: 1e-4,
            max_retries: 10,
        }
    }
}

const RECORD_TAG: u64 = 0xCA11;

/// One record: a benchmark-style environment, a random collision-free pose,
/// one scan, and a random cluster with enough hits.
pub fn sample_record(cfg: &CalibrationConfig, index: usize) -> Result<CalibrationRecord, ConformalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, index as u64, RECORD_TAG));
    let attempts = cfg.max_retries + 1;
    for _ in 0..attempts {
        let env = generate_environment(&cfg.env, &mut rng);
        let x = RobotState::new(
            rng.random_range(0.0..cfg.env.workspace[0]),
            rng.random_range(0.0..cfg.env.workspace[1]),
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        );
        if env.min_gamma(&x) < 1.0 {
            continue;
        }
        let scan = lidar_scan(&x, &env.obstacles, &cfg.sensor, &mut rng);
        let usable: Vec<usize> = (0..scan.clouds.len())
            .filter(|&i| scan.clouds[i].len() >= cfg.min_cluster_points)
            .collect();
        let Some(&pick) = usable.choose(&mut rng) else { continue };
        match mvee_fit(&scan.clouds[pick], cfg.mvee_tol) {
            Ok(fitted) => {
                return Ok(CalibrationRecord { true_points: scan.truth[pick].clone(), fitted });
            }
            Err(e) => log::debug!("record {index}: fit failed ({e}); resampling"),
        }
    }
    Err(ConformalError::RecordGeneration { index, attempts })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationResult {
    pub delta: f64,
    /// Ascending.
    pub scores: Vec<f64>,
    pub alpha: f64,
    pub n_cal: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoresSummary {
    pub min: f64,
    pub max: f64,
    /// `(level, value)` pairs.
    pub quantiles: Vec<(f64, f64)>,
}

/// JSON document written by the calibrate command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub alpha: f64,
    pub n_cal: usize,
    pub delta: f64,
    pub scores_summary: ScoresSummary,
    pub seed: u64,
}

impl CalibrationResult {
    pub fn summary(&self) -> CalibrationSummary {
        let n = self.scores.len();
        let at = |q: f64| self.scores[((q * (n - 1) as f64).round() as usize).min(n - 1)];
        CalibrationSummary {
            alpha: self.alpha,
            n_cal: self.n_cal,
            delta: self.delta,
            scores_summary: ScoresSummary {
                min: self.scores[0],
                max: self.scores[n - 1],
                quantiles: [0.5, 0.9, 0.95, 0.99].iter().map(|&q| (q, at(q))).collect(),
            },
            seed: self.seed,
        }
    }
}

/// Generates `n_cal` independent records and their conformal quantile.
pub fn build_calibration_set(
    cfg: &CalibrationConfig,
    exec: Execution,
) -> Result<(Vec<CalibrationRecord>, CalibrationResult), ConformalError> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(ConformalError::InvalidAlpha(cfg.alpha));
    }
    let index = quantile_index(cfg.n_cal, cfg.alpha);
    if index > cfg.n_cal {
        return Err(ConformalError::InsufficientCalibration { index, n: cfg.n_cal });
    }
    let records = exec
        .map_indexed(cfg.n_cal, |i| sample_record(cfg, i))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut scores: Vec<f64> = records.iter().map(nonconformity_score).collect();
    scores.sort_by(f64::total_cmp);
    let delta = conformal_quantile(&scores, cfg.alpha)?;
    log::info!("calibrated delta = {delta:.4} from {} records (alpha = {})", cfg.n_cal, cfg.alpha);
    Ok((
        records,
        CalibrationResult { delta, scores, alpha: cfg.alpha, n_cal: cfg.n_cal, seed: cfg.seed },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{rotation, Sym2};
    use approx::assert_abs_diff_eq;
    use rand_distr::{Beta, Distribution};

    fn unit() -> Ellipsoid<2> {
        Ellipsoid::ball([0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn score_cases() {
        let inside = CalibrationRecord { true_points: vec![[0.1, 0.2], [-0.5, 0.0]], fitted: unit() };
        assert_eq!(nonconformity_score(&inside), 1.0);
        let one_out = CalibrationRecord {
            true_points: vec![[0.1, 0.2], [2.5f64.sqrt(), 0.0]],
            fitted: unit(),
        };
        assert_abs_diff_eq!(nonconformity_score(&one_out), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn score_matches_per_point_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..20 {
            let q = Sym2::from_diag([rng.random_range(0.2..4.0), rng.random_range(0.2..4.0)])
                .congruence(&rotation(rng.random_range(0.0..3.0)));
            let e = Ellipsoid::new([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], q).unwrap();
            let pts: Vec<Vec2> = (0..100).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
            let mut brute: f64 = 1.0;
            for p in &pts {
                let d = [p[0] - e.center()[0], p[1] - e.center()[1]];
                let f = q.get(0, 0) * d[0] * d[0] + 2.0 * q.get(0, 1) * d[0] * d[1] + q.get(1, 1) * d[1] * d[1];
                brute = brute.max(f);
            }
            let rec = CalibrationRecord { true_points: pts, fitted: e };
            let s = nonconformity_score(&rec);
            assert_abs_diff_eq!(s, brute, epsilon = 1e-12 * brute);
            // Inflating by the record's own score makes containment exact.
            let inflated = inflate(&rec.fitted, s);
            let worst = rec.true_points.iter().map(|p| inflated.eval_scaling(p)).fold(0.0, f64::max);
            assert!(worst <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn quantile_cases() {
        assert_eq!(conformal_quantile(&[1.1, 1.3, 1.2, 1.5], 0.2).unwrap(), 1.5);
        assert_eq!(conformal_quantile(&[1.0, 2.0, 3.0], 0.5).unwrap(), 2.0);
        assert!(matches!(
            conformal_quantile(&[1.0, 1.1, 1.2, 1.3], 0.05),
            Err(ConformalError::InsufficientCalibration { index: 5, n: 4 })
        ));
        assert_eq!(quantile_index(5000, 0.05), 4751);
    }

    #[test]
    fn inflate_cases() {
        let e = inflate(&unit(), 4.0);
        assert_abs_diff_eq!(e.shape().get(0, 0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(e.semi_axes()[0], 2.0, epsilon = 1e-12);
        assert_eq!(inflate(&unit(), 1.0), unit());
        let q = Ellipsoid::new([0.0, 0.0], Sym2::from_diag([0.25, 1.0])).unwrap();
        let e = inflate(&q, 1.346);
        assert_abs_diff_eq!(e.shape().get(0, 0), 0.25 / 1.346, epsilon = 1e-15);
        assert_abs_diff_eq!(e.shape().get(1, 1), 1.0 / 1.346, epsilon = 1e-15);
        assert_abs_diff_eq!(e.shape().get(0, 0), 0.185735, epsilon = 1e-6);
        assert_abs_diff_eq!(e.shape().get(1, 1), 0.742942, epsilon = 1e-6);
    }

    /// Fraction of Beta(a, b) draws below `x`.
    fn beta_mc_cdf(a: f64, b: f64, x: f64, draws: usize, seed: u64) -> f64 {
        let d = Beta::new(a, b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..draws).filter(|_| d.sample(&mut rng) < x).count() as f64 / draws as f64
    }

    #[test]
    fn dataset_conditional_alpha_matches_monte_carlo() {
        let n = 5000;
        let cert = dataset_conditional_alpha(n, 0.95, 0.05).unwrap();
        assert!(cert.alpha_hat < 0.05);
        assert!(cert.certified_coverage >= 0.95);
        let draws = 1_000_000;
        let a = (n - cert.v + 1) as f64;
        let b = cert.v as f64;
        // P(coverage < target) must be at most δ, up to Monte Carlo error.
        let p = beta_mc_cdf(a, b, 0.95, draws, 52);
        let se = (0.05f64 * 0.95 / draws as f64).sqrt();
        assert!(p <= 0.05 + 4.0 * se, "P(coverage < 0.95) = {p}");
        // P(coverage < certified) ≈ δ.
        let p = beta_mc_cdf(a, b, cert.certified_coverage, draws, 53);
        assert!((p - 0.05).abs() <= 4.0 * se, "{p}");
        // One more exclusion would break the certificate.
        let p_next = beta_mc_cdf(a - 1.0, b + 1.0, 0.95, draws, 54);
        assert!(p_next > 0.05 - 4.0 * se, "{p_next}");
    }

    #[test]
    fn dataset_conditional_alpha_concentrates() {
        let cert = dataset_conditional_alpha(1_000_000, 0.5, 0.05).unwrap();
        assert!((cert.alpha_hat - 0.5).abs() < 2e-3, "{cert:?}");
        assert!(cert.alpha_hat < 0.5);
    }

    #[test]
    fn dataset_conditional_alpha_unachievable() {
        assert!(matches!(
            dataset_conditional_alpha(10, 0.999, 0.05),
            Err(ConformalError::Unachievable { .. })
        ));
    }

    #[test]
    fn noiseless_calibration_is_tight() {
        let cfg = CalibrationConfig {
            n_cal: 200,
            sensor: SensorConfig { noise: false, ..SensorConfig::default() },
            ..CalibrationConfig::default()
        };
        let (_, res) = build_calibration_set(&cfg, Execution::Sequential).unwrap();
        assert_abs_diff_eq!(res.delta, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn calibration_is_deterministic_and_mode_independent() {
        let cfg = CalibrationConfig { n_cal: 100, seed: 7, ..CalibrationConfig::default() };
        let (_, a) = build_calibration_set(&cfg, Execution::Sequential).unwrap();
        let (_, b) = build_calibration_set(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.delta >= 1.0);
        assert!(a.scores.windows(2).all(|w| w[0] <= w[1]));
    }

    proptest::proptest! {
        #[test]
        fn delta_nondecreasing_as_alpha_falls(seed in 0u64..1000, a1 in 0.01f64..0.5, a2 in 0.01f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = (0..200).map(|_| 1.0 + rng.random::<f64>()).collect();
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            proptest::prop_assert!(conformal_quantile(&scores, lo).unwrap() >= conformal_quantile(&scores, hi).unwrap());
        }
    }
}
