use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::exec::{stream_seed, Execution};
use crate::numerics::reg_inc_beta;

use super::env::{generate_environment, EnvConfig, Environment};
use super::trial::{run_trial, Method, TrialOutcome, TrialParams};

const ENV_TAG: u64 = 0xE1;

/// Environment of trial `index`; identical for every method.
pub fn trial_environment(cfg: &EnvConfig, master_seed: u64, index: usize) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(master_seed, index as u64, ENV_TAG));
    generate_environment(cfg, &mut rng)
}

/// Sensor-noise seed of trial `index` under `method`.
pub fn trial_seed(master_seed: u64, index: usize, method: Method) -> u64 {
    stream_seed(master_seed, index as u64, method.tag())
}

/// Per-method aggregates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub method: Method,
    pub trials: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    pub mean_wall_time: f64,
    /// Mean over trials of the smallest true scaling factor.
    pub mean_min_margin: f64,
    /// Infeasible QP steps over all control steps.
    pub infeasible_step_rate: f64,
    pub trials_with_infeasible_steps: usize,
    pub premise_violation_steps: usize,
}

/// One-sided paired sign test of `Proposed` success against another method.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignTest {
    pub baseline: Method,
    /// Trials where only `Proposed` succeeded.
    pub wins: usize,
    /// Trials where only the baseline succeeded.
    pub losses: usize,
    /// `P(X ≥ wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub master_seed: u64,
    pub n_trials: usize,
    pub delta: f64,
    pub metrics: Vec<MethodMetrics>,
    pub sign_tests: Vec<SignTest>,
    pub outcomes: Vec<TrialOutcome>,
}

impl BenchmarkReport {
    pub fn metrics_for(&self, m: Method) -> Option<&MethodMetrics> {
        self.metrics.iter().find(|r| r.method == m)
    }

    pub fn outcomes_for(&self, m: Method) -> impl Iterator<Item = &TrialOutcome> {
        self.outcomes.iter().filter(move |o| o.method == m)
    }

    /// One CSV line per method.
    pub fn write_metrics_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for m in &self.metrics {
            w.serialize(m)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<14} {:>7} {:>9} {:>9} {:>9} {:>10} {:>11} {:>11}\n",
            "method", "trials", "success", "collision", "timeout", "wall [s]", "min margin", "infeasible"
        );
        for r in &self.metrics {
            s += &format!(
                "{:<14} {:>7} {:>9.3} {:>9.3} {:>9.3} {:>10.3} {:>11.3} {:>11.4}\n",
                r.method.name(),
                r.trials,
                r.success_rate,
                r.collision_rate,
                r.timeout_rate,
                r.mean_wall_time,
                r.mean_min_margin,
                r.infeasible_step_rate
            );
        }
        for t in &self.sign_tests {
            s += &format!(
                "sign test proposed vs {}: {} wins, {} losses, p = {:.4}\n",
                t.baseline, t.wins, t.losses, t.p_value
            );
        }
        s
    }
}

pub fn sign_test_p_value(wins: usize, losses: usize) -> f64 {
    let n = wins + losses;
    if wins == 0 {
        return 1.0;
    }
    // P(X ≥ k) = I_{1/2}(k, n − k + 1).
    reg_inc_beta(wins as f64, (n - wins + 1) as f64, 0.5).unwrap_or(f64::NAN)
}

fn aggregate(method: Method, outcomes: &[&TrialOutcome]) -> MethodMetrics {
    let n = outcomes.len().max(1) as f64;
    let rate = |f: fn(&TrialOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
    let steps: usize = outcomes.iter().map(|o| o.steps).sum();
    let infeasible: usize = outcomes.iter().map(|o| o.infeasible_steps).sum();
    MethodMetrics {
        method,
        trials: outcomes.len(),
        success_rate: rate(|o| o.success),
        collision_rate: rate(|o| o.collision),
        timeout_rate: rate(|o| o.timeout),
        mean_wall_time: outcomes.iter().map(|o| o.wall_time).sum::<f64>() / n,
        mean_min_margin: outcomes.iter().map(|o| o.min_true_gamma).sum::<f64>() / n,
        infeasible_step_rate: if steps == 0 { 0.0 } else { infeasible as f64 / steps as f64 },
        trials_with_infeasible_steps: outcomes.iter().filter(|o| o.infeasible_steps > 0).count(),
        premise_violation_steps: outcomes.iter().map(|o| o.premise_violations).sum(),
    }
}

/// Runs every method on the same `n_trials` environments. Outcomes are
/// ordered by trial, then by the order of `methods`.
pub fn run_benchmark(
    env_cfg: &EnvConfig,
    params: &TrialParams,
    delta: f64,
    n_trials: usize,
    methods: &[Method],
    master_seed: u64,
    exec: Execution,
) -> BenchmarkReport {
    let params = TrialParams { record_trajectory: false, ..params.clone() };
    let k = methods.len();
    let outcomes = exec.map_indexed(n_trials * k, |job| {
        let (trial, method) = (job / k, methods[job % k]);
        let env = trial_environment(env_cfg, master_seed, trial);
        run_trial(&env, method, &params, delta, trial_seed(master_seed, trial, method)).0
    });
    let metrics = methods
        .iter()
        .map(|&m| aggregate(m, &outcomes.iter().filter(|o| o.method == m).collect::<Vec<_>>()))
        .collect();
    let mut sign_tests = Vec::new();
    if let Some(p) = methods.iter().position(|&m| m == Method::Proposed) {
        for (b, &baseline) in methods.iter().enumerate().filter(|(_, m)| **m != Method::Proposed) {
            let (mut wins, mut losses) = (0, 0);
            for t in 0..n_trials {
                match (outcomes[t * k + p].success, outcomes[t * k + b].success) {
                    (true, false) => wins += 1,
                    (false, true) => losses += 1,
                    _ => {}
                }
            }
            sign_tests.push(SignTest { baseline, wins, losses, p_value: sign_test_p_value(wins, losses) });
        }
    }
    BenchmarkReport { master_seed, n_trials, delta, metrics, sign_tests, outcomes }
}
