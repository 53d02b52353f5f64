//! Feasible input polytope and its largest inscribed ellipse.
//!
//! The admissible inputs at state `x` form the polytope
//! `U_F(x) = {u : A(x) u ≤ b(x)}`: the input box plus one row per obstacle
//! barrier (`a = −L_g h`, `b = κ h + L_f h`). The volume of the largest
//! ellipse `{H s + c : ‖s‖ ≤ 1}` inside it measures how far the safety QP is
//! from infeasibility; its state gradient follows from the multipliers of
//!
//! ```text
//! v* = min −log det H   s.t.   ‖H a_i‖ + a_iᵀ c ≤ b_i
//! ```
//!
//! through `∂v*/∂a_j = λ_j (H² a_j / ‖H a_j‖ + c)ᵀ` and `∂v*/∂b_j = −λ_j`.

use serde::Serialize;
use thiserror::Error;

use crate::collision::{
    min_scaling_hessian, row_from_gradient, CbfRow, CollisionError, ControlAffine, SecondOrder,
    Unicycle,
};
use crate::geometry::{Ellipsoid, RobotShape, RobotState};
use crate::numerics::{dot, norm, solve_dense, unit_ball_volume, Sym2, Vec2, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeasibilityError {
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error("feasible input set has no interior (Chebyshev radius {radius:e})")]
    EmptyInterior { radius: f64 },
    #[error("inscribed-ellipse solver did not converge after {iterations} Newton steps")]
    NoConvergence { iterations: usize },
}

/// Axis-aligned bounds on `(v, ω)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct InputBox {
    pub lower: Vec2,
    pub upper: Vec2,
}

impl Default for InputBox {
    fn default() -> Self {
        Self {
            lower: [-1.0, -0.5],
            upper: [1.0, 0.5],
        }
    }
}

impl InputBox {
    pub fn clamp(&self, u: Vec2) -> Vec2 {
        [
            u[0].clamp(self.lower[0], self.upper[0]),
            u[1].clamp(self.lower[1], self.upper[1]),
        ]
    }

    /// The four half-spaces `A_m u ≤ b_m`.
    pub fn rows(&self) -> [(Vec2, f64); 4] {
        [
            ([1.0, 0.0], self.upper[0]),
            ([-1.0, 0.0], -self.lower[0]),
            ([0.0, 1.0], self.upper[1]),
            ([0.0, -1.0], -self.lower[1]),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RowKind {
    InputBound,
    /// Barrier row of the obstacle with this index.
    Cbf(usize),
}

/// Half-space `aᵀ u ≤ b` together with its state sensitivities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolytopeRow {
    pub a: Vec2,
    pub b: f64,
    pub kind: RowKind,
    /// `da_dx[k][j] = ∂a_k / ∂x_j`.
    pub da_dx: [Vec3; 2],
    pub db_dx: Vec3,
}

impl PolytopeRow {
    pub fn constant(a: Vec2, b: f64) -> Self {
        Self {
            a,
            b,
            kind: RowKind::InputBound,
            da_dx: [[0.0; 3]; 2],
            db_dx: [0.0; 3],
        }
    }

    pub fn slack(&self, u: &Vec2) -> f64 {
        self.b - dot(&self.a, u)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasiblePolytope {
    pub rows: Vec<PolytopeRow>,
    /// Barrier rows in obstacle order (also encoded in `rows`).
    pub barriers: Vec<CbfRow>,
    /// Minimum scaling factor per obstacle.
    pub gammas: Vec<f64>,
}

impl FeasiblePolytope {
    pub fn from_rows(rows: Vec<PolytopeRow>) -> Self {
        Self {
            rows,
            barriers: Vec::new(),
            gammas: Vec::new(),
        }
    }

    pub fn from_box(input_box: &InputBox) -> Self {
        Self::from_rows(
            input_box
                .rows()
                .iter()
                .map(|(a, b)| PolytopeRow::constant(*a, *b))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest violation `max_i (a_iᵀ u − b_i)`, negative when `u` is interior.
    pub fn max_violation(&self, u: &Vec2) -> f64 {
        self.rows
            .iter()
            .map(|r| -r.slack(u))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Barrier gains shared by all obstacle rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierParams {
    pub kappa: f64,
    pub gamma0: f64,
    pub second_order: SecondOrder,
}

/// Stacks the input box and one barrier row per obstacle.
pub fn assemble_polytope(
    x: &RobotState,
    shape: &RobotShape,
    obstacles: &[Ellipsoid<2>],
    input_box: &InputBox,
    params: &BarrierParams,
) -> Result<FeasiblePolytope, FeasibilityError> {
    let kappas = vec![params.kappa; obstacles.len()];
    assemble_polytope_with_gains(x, shape, obstacles, input_box, &kappas, params)
}

/// As [`assemble_polytope`] with a per-obstacle gain `kappas[i]`.
pub fn assemble_polytope_with_gains(
    x: &RobotState,
    shape: &RobotShape,
    obstacles: &[Ellipsoid<2>],
    input_box: &InputBox,
    kappas: &[f64],
    params: &BarrierParams,
) -> Result<FeasiblePolytope, FeasibilityError> {
    assert_eq!(kappas.len(), obstacles.len(), "one gain per obstacle");
    let mut poly = FeasiblePolytope::from_box(input_box);
    let (s, c) = x.theta.sin_cos();
    let cols = Unicycle.input_columns(x);
    for (i, (obs, &kappa)) in obstacles.iter().zip(kappas).enumerate() {
        let (res, hess) = min_scaling_hessian(x, shape, obs, params.second_order)?;
        let row = row_from_gradient(&Unicycle, x, res.gamma_star, &res.grad_x, params.gamma0, kappa);
        // a = −(∇γ·g1, ∇γ·g2); g1 = (cos θ, sin θ, 0) depends on θ, g2 is constant.
        let mut da_dx = [[0.0; 3]; 2];
        for j in 0..3 {
            let mut d1: f64 = (0..3).map(|k| hess[k][j] * cols[0][k]).sum();
            if j == 2 {
                d1 += res.grad_x[0] * (-s) + res.grad_x[1] * c;
            }
            da_dx[0][j] = -d1;
            da_dx[1][j] = -hess[2][j];
        }
        let db_dx = [kappa * res.grad_x[0], kappa * res.grad_x[1], kappa * res.grad_x[2]];
        poly.rows.push(PolytopeRow {
            a: [-row.lg_h[0], -row.lg_h[1]],
            b: kappa * row.h + row.lf_h,
            kind: RowKind::Cbf(i),
            da_dx,
            db_dx,
        });
        poly.barriers.push(row);
        poly.gammas.push(res.gamma_star);
    }
    Ok(poly)
}

/// Largest inscribed ellipse `{H s + c : ‖s‖ ≤ 1}` with its optimality certificate.
#[derive(Clone, Debug, PartialEq)]
pub struct InscribedEllipsoid {
    pub h: Sym2,
    pub c: Vec2,
    /// `−log det H`.
    pub v_star: f64,
    /// One multiplier per polytope row.
    pub multipliers: Vec<f64>,
    pub active_set: Vec<usize>,
    /// Final barrier parameter; the duality gap is `rows / t`.
    pub t: f64,
    pub newton_iterations: usize,
}

impl InscribedEllipsoid {
    pub fn duality_gap(&self) -> f64 {
        self.multipliers.len() as f64 / self.t
    }

    /// Slack `b_i − ‖H a_i‖ − a_iᵀ c` of each row.
    pub fn slacks(&self, poly: &FeasiblePolytope) -> Vec<f64> {
        poly.rows
            .iter()
            .map(|r| r.b - norm(&self.h.mul_vec(&r.a)) - dot(&r.a, &self.c))
            .collect()
    }
}

pub const MVIE_DEFAULT_TOL: f64 = 1e-7;
const ACTIVE_REL: f64 = 1e-5;
const T_INIT: f64 = 1.0;
const T_MIN_FINAL: f64 = 1e8;
const T_FACTOR: f64 = 10.0;
const INNER_MAX: usize = 100;
const TOTAL_NEWTON_MAX: usize = 3000;
const ZERO_ROW: f64 = 1e-12;
const NEWTON_TOL: f64 = 1e-14;

/// Maximum-volume inscribed ellipse by a log-barrier interior-point method
/// over `(H₁₁, H₁₂, H₂₂, c₁, c₂)`.
pub fn max_inscribed_ellipsoid(
    poly: &FeasiblePolytope,
    tol: f64,
) -> Result<InscribedEllipsoid, FeasibilityError> {
    // Rows with a ≈ 0 reduce to 0 ≤ b: they either empty the set or never bind.
    let mut live = Vec::with_capacity(poly.len());
    for (i, r) in poly.rows.iter().enumerate() {
        if norm(&r.a) <= ZERO_ROW {
            if r.b <= 0.0 {
                return Err(FeasibilityError::EmptyInterior { radius: r.b });
            }
        } else {
            live.push(i);
        }
    }
    let rows: Vec<(Vec2, f64)> = live.iter().map(|&i| (poly.rows[i].a, poly.rows[i].b)).collect();
    let (center, radius) = chebyshev_center(&rows).ok_or(FeasibilityError::EmptyInterior {
        radius: f64::NEG_INFINITY,
    })?;
    if !(radius > 1e-9) {
        return Err(FeasibilityError::EmptyInterior { radius });
    }
    let mut w = [0.5 * radius, 0.0, 0.5 * radius, center[0], center[1]];
    let m = rows.len() as f64;
    let t_final = T_MIN_FINAL.max(m / tol);
    let mut t = T_INIT;
    let mut newton_total = 0;
    loop {
        newton_total += center_at(&rows, &mut w, t, newton_total)?;
        if t >= t_final {
            break;
        }
        t = (t * T_FACTOR).min(t_final);
    }
    let h = Sym2::from_rows_symmetrized([[w[0], w[1]], [w[1], w[2]]]);
    let c = [w[3], w[4]];
    let mut multipliers = vec![0.0; poly.len()];
    for (k, &i) in live.iter().enumerate() {
        let (a, b) = rows[k];
        let s = b - norm(&h.mul_vec(&a)) - dot(&a, &c);
        multipliers[i] = 1.0 / (t * s);
    }
    let max_l = multipliers.iter().copied().fold(0.0, f64::max);
    let active_set: Vec<usize> = (0..poly.len())
        .filter(|&i| multipliers[i] >= ACTIVE_REL * max_l && multipliers[i] > 0.0)
        .collect();
    warn_if_near_switch(&multipliers, &active_set);
    Ok(InscribedEllipsoid {
        v_star: -(w[0] * w[2] - w[1] * w[1]).ln(),
        h,
        c,
        multipliers,
        active_set,
        t,
        newton_iterations: newton_total,
    })
}

fn warn_if_near_switch(multipliers: &[f64], active: &[usize]) {
    let mut lam: Vec<f64> = active.iter().map(|&i| multipliers[i]).collect();
    if lam.len() < 2 {
        return;
    }
    lam.sort_by(f64::total_cmp);
    if lam[1] < 10.0 * lam[0] {
        log::warn!(
            "inscribed ellipse: two smallest active multipliers within 10x ({:.3e}, {:.3e}); \
             volume gradient may be near an active-set change",
            lam[0],
            lam[1]
        );
    }
}

/// Barrier value, gradient and Hessian at `w` for parameter `t`.
/// Returns `None` when `w` is outside the domain.
fn barrier(rows: &[(Vec2, f64)], w: &[f64; 5], t: f64) -> Option<(f64, [f64; 5], [[f64; 5]; 5])> {
    let det = w[0] * w[2] - w[1] * w[1];
    if !(w[0] > 0.0 && det > 0.0) {
        return None;
    }
    let mut val = -t * det.ln();
    let mut grad = [0.0; 5];
    let mut hess = [[0.0; 5]; 5];
    // −log det H with det = h1 h3 − h2².
    let dd = [w[2], -2.0 * w[1], w[0]];
    for i in 0..3 {
        grad[i] -= t * dd[i] / det;
        for j in 0..3 {
            hess[i][j] += t * dd[i] * dd[j] / (det * det);
        }
    }
    hess[0][2] -= t / det;
    hess[2][0] -= t / det;
    hess[1][1] += 2.0 * t / det;

    for (a, b) in rows {
        // z = H a = J h with J = [[a1, a2, 0], [0, a1, a2]].
        let z = [w[0] * a[0] + w[1] * a[1], w[1] * a[0] + w[2] * a[1]];
        let nz = norm(&z);
        let s = b - nz - (a[0] * w[3] + a[1] * w[4]);
        if !(s > 0.0) {
            return None;
        }
        val -= s.ln();
        let zh = [z[0] / nz, z[1] / nz];
        let jt_zh = [a[0] * zh[0], a[1] * zh[0] + a[0] * zh[1], a[1] * zh[1]];
        // g = ∂(−s)/∂w
        let g = [jt_zh[0], jt_zh[1], jt_zh[2], a[0], a[1]];
        for i in 0..5 {
            grad[i] += g[i] / s;
            for j in 0..5 {
                hess[i][j] += g[i] * g[j] / (s * s);
            }
        }
        // Curvature of ‖J h‖: Jᵀ (I − ẑẑᵀ) J / ‖z‖, scaled by 1/s.
        let p = [[1.0 - zh[0] * zh[0], -zh[0] * zh[1]], [-zh[0] * zh[1], 1.0 - zh[1] * zh[1]]];
        let jm = [[a[0], a[1], 0.0], [0.0, a[0], a[1]]];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        acc += jm[k][i] * p[k][l] * jm[l][j];
                    }
                }
                hess[i][j] += acc / (nz * s);
            }
        }
    }
    Some((val, grad, hess))
}

/// Damped Newton centering; returns the number of Newton steps taken.
fn center_at(rows: &[(Vec2, f64)], w: &mut [f64; 5], t: f64, used: usize) -> Result<usize, FeasibilityError> {
    let mut steps = 0;
    for _ in 0..INNER_MAX {
        let (val, grad, hess) = barrier(rows, w, t).expect("iterate kept strictly feasible");
        let mut a: Vec<f64> = hess.iter().flatten().copied().collect();
        let mut dx: Vec<f64> = grad.iter().map(|g| -g).collect();
        if solve_dense(&mut a, &mut dx, 5).is_err() {
            break;
        }
        let decrement = -dot5(&grad, &dx);
        if decrement / 2.0 <= NEWTON_TOL {
            break;
        }
        steps += 1;
        if used + steps > TOTAL_NEWTON_MAX {
            return Err(FeasibilityError::NoConvergence { iterations: used + steps });
        }
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial: [f64; 5] = std::array::from_fn(|i| w[i] + alpha * dx[i]);
            if let Some((tv, _, _)) = barrier(rows, &trial, t) {
                if tv <= val - 0.25 * alpha * decrement {
                    *w = trial;
                    moved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(steps)
}

fn dot5(a: &[f64; 5], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Chebyshev center by vertex enumeration of the 3-variable LP
/// `max r s.t. a_iᵀ c + r ‖a_i‖ ≤ b_i, r ≤ R`.
pub fn chebyshev_center(rows: &[(Vec2, f64)]) -> Option<(Vec2, f64)> {
    const R_CAP: f64 = 1e6;
    let mut cons: Vec<[f64; 4]> = rows
        .iter()
        .map(|(a, b)| [a[0], a[1], norm(a), *b])
        .collect();
    cons.push([0.0, 0.0, 1.0, R_CAP]);
    let feas_tol = |b: f64| 1e-9 * (1.0 + b.abs());
    let mut best: Option<(Vec2, f64)> = None;
    let n = cons.len();
    for i in 0..n {
        for j in (i + 1)..n {
            for k in (j + 1)..n {
                let mut a = vec![
                    cons[i][0], cons[i][1], cons[i][2],
                    cons[j][0], cons[j][1], cons[j][2],
                    cons[k][0], cons[k][1], cons[k][2],
                ];
                let mut rhs = vec![cons[i][3], cons[j][3], cons[k][3]];
                if solve_dense(&mut a, &mut rhs, 3).is_err() {
                    continue;
                }
                let (c, r) = ([rhs[0], rhs[1]], rhs[2]);
                if !(c[0].is_finite() && c[1].is_finite() && r.is_finite()) {
                    continue;
                }
                let ok = cons
                    .iter()
                    .all(|q| q[0] * c[0] + q[1] * c[1] + q[2] * r <= q[3] + feas_tol(q[3]));
                if ok && best.map_or(true, |(_, br)| r > br) {
                    best = Some((c, r));
                }
            }
        }
    }
    best
}

/// `π^{m/2}/Γ(m/2+1) · det H`. Only `m = 2` is supported.
pub fn volume_of(e: &InscribedEllipsoid, m: usize) -> f64 {
    assert_eq!(m, 2, "inscribed-ellipse volumes are implemented for two inputs");
    let v = unit_ball_volume(m) * e.h.det();
    debug_assert!((v - unit_ball_volume(m) * (-e.v_star).exp()).abs() <= 1e-6 * v.abs().max(1e-300));
    v
}

/// Volume barrier `h_v = V − V_0` with its Lie derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VolumeCbf {
    pub volume: f64,
    pub h_v: f64,
    pub lf_hv: f64,
    pub lg_hv: Vec2,
    pub kappa_v: f64,
    /// `∂V/∂x`.
    pub dv_dx: Vec3,
}

/// Chain rule from the active multipliers through the row sensitivities to
/// `∂V/∂x`, then Lie derivatives along the unicycle.
pub fn volume_cbf(
    x: &RobotState,
    poly: &FeasiblePolytope,
    e: &InscribedEllipsoid,
    v0: f64,
    kappa_v: f64,
) -> VolumeCbf {
    let volume = volume_of(e, 2);
    let mut dvstar_dx = [0.0; 3];
    for &j in &e.active_set {
        let row = &poly.rows[j];
        let lam = e.multipliers[j];
        let ha = e.h.mul_vec(&row.a);
        let nha = norm(&ha);
        let h2a = e.h.mul_vec(&ha);
        let dv_da = [lam * (h2a[0] / nha + e.c[0]), lam * (h2a[1] / nha + e.c[1])];
        for k in 0..3 {
            dvstar_dx[k] += dv_da[0] * row.da_dx[0][k] + dv_da[1] * row.da_dx[1][k] - lam * row.db_dx[k];
        }
    }
    let factor = -unit_ball_volume(2) * (-e.v_star).exp();
    let dv_dx = [factor * dvstar_dx[0], factor * dvstar_dx[1], factor * dvstar_dx[2]];
    let [g1, g2] = Unicycle.input_columns(x);
    VolumeCbf {
        volume,
        h_v: volume - v0,
        lf_hv: dot(&dv_dx, &Unicycle.drift(x)),
        lg_hv: [dot(&dv_dx, &g1), dot(&dv_dx, &g2)],
        kappa_v,
        dv_dx,
    }
}

/// Per-step diagnostics row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeasibilityDiagnostics {
    pub t: f64,
    #[serde(rename = "V")]
    pub volume: f64,
    pub h_v: f64,
    pub active_set_size: usize,
    pub solver_iters: usize,
}
