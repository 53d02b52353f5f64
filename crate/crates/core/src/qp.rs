//! Safety filter QPs.
//!
//! The controller solves, over `z = (u, ε)`,
//!
//! ```text
//! min (u − u_r)ᵀ M (u − u_r) + ε²
//! s.t. A(x) u ≤ b(x),  ε ≥ 0,  L_f h_v + L_g h_v · u ≥ −κ_v h_v − ε
//! ```
//!
//! with a primal active-set method. Problems have at most three variables,
//! so each iteration is a dense KKT solve.

use serde::Serialize;
use thiserror::Error;

use crate::feasibility::{chebyshev_center, FeasiblePolytope, VolumeCbf};
use crate::numerics::{cholesky, solve_dense, Sym2, Vec2};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("hard constraints are inconsistent (Chebyshev radius {radius:e})")]
    Infeasible { radius: f64 },
    #[error("active-set method exceeded {changes} working-set changes")]
    CycleDetected { changes: usize },
    #[error("weight matrix is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Solved,
    /// Converged but the KKT residual exceeds [`KKT_TOL`].
    Degraded,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlSolution {
    pub u: Vec2,
    pub epsilon: f64,
    pub objective: f64,
    pub kkt_residual: f64,
    pub status: SolveStatus,
    /// Indices of working constraints at the solution, in the solver's
    /// numbering: polytope rows first, then `ε ≥ 0`, then the volume row.
    pub active_set: Vec<usize>,
    pub working_set_changes: usize,
}

impl ControlSolution {
    /// Zero command used when the QP cannot be solved.
    pub fn fallback() -> Self {
        Self {
            u: [0.0; 2],
            epsilon: 0.0,
            objective: f64::NAN,
            kkt_residual: f64::NAN,
            status: SolveStatus::Infeasible,
            active_set: Vec::new(),
            working_set_changes: 0,
        }
    }
}

pub const KKT_TOL: f64 = 1e-8;
pub const MAX_WORKING_SET_CHANGES: usize = 100;
/// Each change is preceded by at most one full step.
const MAX_ITERATIONS: usize = 2 * MAX_WORKING_SET_CHANGES + 2;
const ZERO_STEP: f64 = 1e-13;

/// Slack-augmented QP with the volume barrier row.
pub fn solve_safety_qp(
    u_r: &Vec2,
    m: &Sym2,
    poly: &FeasiblePolytope,
    vcbf: &VolumeCbf,
) -> Result<ControlSolution, QpError> {
    let u0 = phase_one(poly)?;
    let mut qp = DenseQp::new(3);
    set_tracking_cost(&mut qp, u_r, m)?;
    qp.g[2][2] = 2.0;
    for r in &poly.rows {
        qp.push(&[r.a[0], r.a[1], 0.0], r.b);
    }
    qp.push(&[0.0, 0.0, -1.0], 0.0);
    let rhs = vcbf.kappa_v * vcbf.h_v + vcbf.lf_hv;
    qp.push(&[-vcbf.lg_hv[0], -vcbf.lg_hv[1], -1.0], rhs);
    let eps0 = (-vcbf.lg_hv[0] * u0[0] - vcbf.lg_hv[1] * u0[1] - rhs).max(0.0);
    let sol = qp.solve(vec![u0[0], u0[1], eps0])?;
    Ok(finish(&qp, sol, u_r, m))
}

/// Plain barrier QP without the volume row or slack.
pub fn solve_plain_qp(u_r: &Vec2, m: &Sym2, poly: &FeasiblePolytope) -> Result<ControlSolution, QpError> {
    let u0 = phase_one(poly)?;
    let mut qp = DenseQp::new(2);
    set_tracking_cost(&mut qp, u_r, m)?;
    for r in &poly.rows {
        qp.push(&r.a, r.b);
    }
    let sol = qp.solve(u0.to_vec())?;
    Ok(finish(&qp, sol, u_r, m))
}

/// Premise of the feasibility-preservation guarantee: `ε ≤ κ_v V_0`.
pub fn slack_within_bound(sol: &ControlSolution, kappa_v: f64, v0: f64) -> bool {
    let ok = sol.epsilon <= kappa_v * v0;
    if !ok {
        log::warn!(
            "slack premise violated: epsilon {:.3e} > kappa_v * V0 = {:.3e}",
            sol.epsilon,
            kappa_v * v0
        );
    }
    ok
}

/// Per-step log row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QpLogRow {
    pub v: f64,
    pub omega: f64,
    pub epsilon: f64,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub slack_bound_ok: bool,
}

impl QpLogRow {
    pub fn new(sol: &ControlSolution, kappa_v: f64, v0: f64) -> Self {
        Self {
            v: sol.u[0],
            omega: sol.u[1],
            epsilon: sol.epsilon,
            status: sol.status,
            kkt_residual: sol.kkt_residual,
            slack_bound_ok: slack_within_bound(sol, kappa_v, v0),
        }
    }
}

fn phase_one(poly: &FeasiblePolytope) -> Result<Vec2, QpError> {
    let rows: Vec<(Vec2, f64)> = poly.rows.iter().map(|r| (r.a, r.b)).collect();
    match chebyshev_center(&rows) {
        Some((c, r)) if r >= -1e-12 => Ok(c),
        Some((_, r)) => Err(QpError::Infeasible { radius: r }),
        None => Err(QpError::Infeasible { radius: f64::NEG_INFINITY }),
    }
}

fn set_tracking_cost(qp: &mut DenseQp, u_r: &Vec2, m: &Sym2) -> Result<(), QpError> {
    if cholesky(m).is_err() {
        return Err(QpError::NotPositiveDefinite);
    }
    let mu = m.mul_vec(u_r);
    for i in 0..2 {
        for j in 0..2 {
            qp.g[i][j] = 2.0 * m.get(i, j);
        }
        qp.lin[i] = -2.0 * mu[i];
    }
    Ok(())
}

fn finish(qp: &DenseQp, sol: RawSolution, u_r: &Vec2, m: &Sym2) -> ControlSolution {
    let u = [sol.z[0], sol.z[1]];
    let epsilon = if qp.n > 2 { sol.z[2].max(0.0) } else { 0.0 };
    let d = [u[0] - u_r[0], u[1] - u_r[1]];
    let objective = m.quad_form(&d) + epsilon * epsilon;
    ControlSolution {
        u,
        epsilon,
        objective,
        kkt_residual: sol.residual,
        status: if sol.residual <= KKT_TOL { SolveStatus::Solved } else { SolveStatus::Degraded },
        active_set: sol.working,
        working_set_changes: sol.changes,
    }
}

/// `min ½ zᵀ G z + lin·z  s.t.  C z ≤ d`, with `n ≤ 3`.
#[derive(Clone, Debug)]
pub struct DenseQp {
    pub n: usize,
    pub g: [[f64; 3]; 3],
    pub lin: [f64; 3],
    pub c: Vec<[f64; 3]>,
    pub d: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RawSolution {
    pub z: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub working: Vec<usize>,
    pub residual: f64,
    pub changes: usize,
}

impl DenseQp {
    pub fn new(n: usize) -> Self {
        assert!((1..=3).contains(&n));
        Self { n, g: [[0.0; 3]; 3], lin: [0.0; 3], c: Vec::new(), d: Vec::new() }
    }

    pub fn push(&mut self, row: &[f64], rhs: f64) {
        let mut r = [0.0; 3];
        r[..self.n].copy_from_slice(&row[..self.n]);
        self.c.push(r);
        self.d.push(rhs);
    }

    fn row_dot(&self, i: usize, z: &[f64]) -> f64 {
        (0..self.n).map(|k| self.c[i][k] * z[k]).sum()
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        let mut v = 0.0;
        for i in 0..self.n {
            v += self.lin[i] * z[i];
            for j in 0..self.n {
                v += 0.5 * z[i] * self.g[i][j] * z[j];
            }
        }
        v
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.lin[i] + (0..self.n).map(|j| self.g[i][j] * z[j]).sum::<f64>())
            .collect()
    }

    /// Solves `G p + C_Wᵀ λ = −grad`, `C_W p = 0`.
    fn eqp(&self, grad: &[f64], working: &[usize]) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.n;
        let k = working.len();
        let dim = n + k;
        let mut a = vec![0.0; dim * dim];
        let mut rhs = vec![0.0; dim];
        for i in 0..n {
            for j in 0..n {
                a[i * dim + j] = self.g[i][j];
            }
            rhs[i] = -grad[i];
        }
        for (w, &ci) in working.iter().enumerate() {
            for j in 0..n {
                a[j * dim + n + w] = self.c[ci][j];
                a[(n + w) * dim + j] = self.c[ci][j];
            }
        }
        solve_dense(&mut a, &mut rhs, dim).ok()?;
        Some((rhs[..n].to_vec(), rhs[n..].to_vec()))
    }

    /// Primal active-set iterations from a feasible `z0`.
    pub fn solve(&self, z0: Vec<f64>) -> Result<RawSolution, QpError> {
        let mut z = z0;
        let mut working: Vec<usize> = Vec::new();
        let mut changes = 0;
        // Set after an unblocked full step: z already minimizes on the working set.
        let mut at_minimizer = false;
        for _ in 0..MAX_ITERATIONS {
            let grad = self.gradient(&z);
            let (p, lam) = self
                .eqp(&grad, &working)
                .expect("working-set normals stay linearly independent");
            let pnorm = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = 1.0 + z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if at_minimizer || pnorm <= ZERO_STEP * scale {
                at_minimizer = false;
                // Leaving constraint: most negative multiplier, lowest index on ties.
                let mut leave: Option<(usize, f64)> = None;
                for (w, &l) in lam.iter().enumerate() {
                    if l < -1e-12 && leave.map_or(true, |(_, lv)| l < lv) {
                        leave = Some((w, l));
                    }
                }
                match leave {
                    None => {
                        let mut multipliers = vec![0.0; self.c.len()];
                        for (w, &ci) in working.iter().enumerate() {
                            multipliers[ci] = lam[w];
                        }
                        let residual = self.kkt_residual(&z, &multipliers);
                        return Ok(RawSolution { z, multipliers, working, residual, changes });
                    }
                    Some((w, _)) => {
                        working.remove(w);
                    }
                }
            } else {
                // Ratio test; lowest index wins ties.
                let mut alpha = 1.0;
                let mut block = None;
                for i in 0..self.c.len() {
                    if working.contains(&i) {
                        continue;
                    }
                    let cp = self.row_dot(i, &p);
                    if cp > 1e-14 {
                        let slack = (self.d[i] - self.row_dot(i, &z)).max(0.0);
                        let step = slack / cp;
                        if step < alpha {
                            alpha = step;
                            block = Some(i);
                        }
                    }
                }
                for k in 0..self.n {
                    z[k] += alpha * p[k];
                }
                match block {
                    Some(i) => {
                        working.push(i);
                        working.sort_unstable();
                    }
                    None => {
                        at_minimizer = true;
                        continue;
                    }
                }
            }
            changes += 1;
            if changes > MAX_WORKING_SET_CHANGES {
                return Err(QpError::CycleDetected { changes });
            }
        }
        Err(QpError::CycleDetected { changes })
    }

    /// Max of stationarity, primal, dual and complementarity residuals.
    pub fn kkt_residual(&self, z: &[f64], multipliers: &[f64]) -> f64 {
        let mut stat = self.gradient(z);
        let mut res: f64 = 0.0;
        for (i, &l) in multipliers.iter().enumerate() {
            for k in 0..self.n {
                stat[k] += l * self.c[i][k];
            }
            let slack = self.d[i] - self.row_dot(i, z);
            res = res.max((-slack).max(0.0)).max((-l).max(0.0)).max((l * slack).abs());
        }
        stat.iter().fold(res, |m, v| m.max(v.abs()))
    }
}
