//! Ellipsoidal regions, the robot state-to-ellipse map and minimum-volume
//! enclosing ellipsoid fitting.
//!
//! An ellipsoid is described by its scaling function
//! `F(p) = (p − μ)ᵀ Q (p − μ)`, which is zero at the center, one on the
//! boundary and grows quadratically outside. All solvers are implemented for
//! the planar case; the types carry the dimension as a const parameter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{
    self, cholesky, dot, eig_sym, sub, NumericsError, Sym2, Sym3, SymMatrix, Vec2,
    Vec3, Vector,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("shape matrix must be symmetric positive definite: {0}")]
    NotPositiveDefinite(NumericsError),
    #[error("point cloud is degenerate ({points} points, affinely dependent)")]
    DegenerateCloud { points: usize },
    #[error("robot semi-axes must be strictly positive (a={a}, b={b})")]
    InvalidShape { a: f64, b: f64 },
}

/// `{p : (p − μ)ᵀ Q (p − μ) ≤ 1}` with `Q` symmetric positive definite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid<const N: usize = 2> {
    center: Vector<N>,
    shape: SymMatrix<N>,
}

impl<const N: usize> Ellipsoid<N> {
    pub fn new(center: Vector<N>, shape: SymMatrix<N>) -> Result<Self, GeometryError> {
        cholesky(&shape).map_err(GeometryError::NotPositiveDefinite)?;
        if !center.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::NotPositiveDefinite(NumericsError::Domain(
                "non-finite center".into(),
            )));
        }
        Ok(Self { center, shape })
    }

    /// Ball of the given radius.
    pub fn ball(center: Vector<N>, radius: f64) -> Result<Self, GeometryError> {
        Self::new(center, SymMatrix::identity().scale(1.0 / (radius * radius)))
    }

    pub fn center(&self) -> &Vector<N> {
        &self.center
    }

    pub fn shape(&self) -> &SymMatrix<N> {
        &self.shape
    }

    /// Scaling function `F(p)`.
    pub fn eval_scaling(&self, p: &Vector<N>) -> f64 {
        self.shape.quad_form(&sub(p, &self.center))
    }

    pub fn contains(&self, p: &Vector<N>) -> bool {
        self.eval_scaling(p) <= 1.0
    }

    /// Same center, shape `Q / factor`: every semi-axis grows by `√factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            center: self.center,
            shape: self.shape.scale(1.0 / factor),
        }
    }

    /// Semi-axis lengths in ascending order.
    pub fn semi_axes(&self) -> Vector<N> {
        let e = eig_sym(&self.shape);
        let mut axes = [0.0; N];
        for (k, ax) in axes.iter_mut().enumerate() {
            *ax = 1.0 / e.values[N - 1 - k].sqrt();
        }
        axes
    }

    /// Lebesgue measure of the region.
    pub fn volume(&self) -> f64 {
        numerics::unit_ball_volume(N) / self.shape.det().sqrt()
    }
}

impl Ellipsoid<2> {
    /// Applies `p ↦ R p + t` to the region.
    pub fn transformed(&self, rot: &[[f64; 2]; 2], t: &Vec2) -> Self {
        let c = self.center;
        let center = [
            rot[0][0] * c[0] + rot[0][1] * c[1] + t[0],
            rot[1][0] * c[0] + rot[1][1] * c[1] + t[1],
        ];
        Self {
            center,
            shape: self.shape.congruence(rot),
        }
    }

    /// Boundary point at parameter angle `phi` of the unit-circle preimage.
    pub fn boundary_point(&self, phi: f64) -> Vec2 {
        // Q = L Lᵀ, boundary = μ + L⁻ᵀ (cos φ, sin φ).
        let l = *cholesky(&self.shape).expect("validated at construction").factor();
        let (s, c) = phi.sin_cos();
        let y1 = s / l[1][1];
        let y0 = (c - l[1][0] * y1) / l[0][0];
        [self.center[0] + y0, self.center[1] + y1]
    }

    /// Smallest `t > 0` with `F(origin + t·dir) = 1`, if any.
    pub fn ray_hit(&self, origin: &Vec2, dir: &Vec2) -> Option<f64> {
        let d0 = sub(origin, &self.center);
        let qa = self.shape.quad_form(dir);
        let qb = 2.0 * dot(dir, &self.shape.mul_vec(&d0));
        let qc = self.shape.quad_form(&d0) - 1.0;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 || qa <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        // Numerically stable pair of roots.
        let q = -0.5 * (qb + qb.signum() * sq);
        let (r1, r2) = if q != 0.0 { (q / qa, qc / q) } else { (0.0, 0.0) };
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        if lo > 0.0 {
            Some(lo)
        } else if hi > 0.0 {
            Some(hi)
        } else {
            None
        }
    }
}

/// Semi-axes of the elliptical robot footprint: `a` along the heading, `b` lateral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotShape {
    pub semi_axis_a: f64,
    pub semi_axis_b: f64,
}

impl RobotShape {
    pub fn new(semi_axis_a: f64, semi_axis_b: f64) -> Result<Self, GeometryError> {
        if !(semi_axis_a > 0.0 && semi_axis_b > 0.0) {
            return Err(GeometryError::InvalidShape {
                a: semi_axis_a,
                b: semi_axis_b,
            });
        }
        Ok(Self {
            semi_axis_a,
            semi_axis_b,
        })
    }

    pub fn is_circle(&self) -> bool {
        self.semi_axis_a == self.semi_axis_b
    }

    /// Shape matrix `R(θ) diag(1/a², 1/b²) R(θ)ᵀ` and its first two θ-derivatives.
    pub fn shape_and_derivatives(&self, theta: f64) -> (Sym2, Sym2, Sym2) {
        let ia = 1.0 / (self.semi_axis_a * self.semi_axis_a);
        let ib = 1.0 / (self.semi_axis_b * self.semi_axis_b);
        let k = ia - ib;
        let (s2, c2) = (2.0 * theta).sin_cos();
        let (s, c) = theta.sin_cos();
        let q = Sym2::from_rows_symmetrized([
            [ib + k * c * c, k * c * s],
            [k * c * s, ib + k * s * s],
        ]);
        let dq = Sym2::from_rows_symmetrized([[-k * s2, k * c2], [k * c2, k * s2]]);
        let d2q = Sym2::from_rows_symmetrized([
            [-2.0 * k * c2, -2.0 * k * s2],
            [-2.0 * k * s2, 2.0 * k * c2],
        ]);
        (q, dq, d2q)
    }
}

/// Planar unicycle pose. `theta` is stored unwrapped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub p_x: f64,
    pub p_y: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn new(p_x: f64, p_y: f64, theta: f64) -> Self {
        Self { p_x, p_y, theta }
    }

    pub fn position(&self) -> Vec2 {
        [self.p_x, self.p_y]
    }

    pub fn as_array(&self) -> Vec3 {
        [self.p_x, self.p_y, self.theta]
    }

    pub fn from_array(x: Vec3) -> Self {
        Self::new(x[0], x[1], x[2])
    }

    /// Heading wrapped to `(−π, π]`.
    pub fn heading(&self) -> f64 {
        wrap_angle(self.theta)
    }
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Region occupied by the robot at state `x`, centered on its position.
pub fn robot_ellipse(x: &RobotState, s: &RobotShape) -> Ellipsoid<2> {
    let (q, _, _) = s.shape_and_derivatives(x.theta);
    Ellipsoid {
        center: x.position(),
        shape: q,
    }
}

/// Gradient of `F_R(p, θ_R(x))` with respect to `(p_x, p_y, θ)`, holding `p` fixed.
pub fn scaling_state_grad(x: &RobotState, s: &RobotShape, p: &Vec2) -> Vec3 {
    let (q, dq, _) = s.shape_and_derivatives(x.theta);
    let d = sub(p, &x.position());
    let qd = q.mul_vec(&d);
    [-2.0 * qd[0], -2.0 * qd[1], dq.quad_form(&d)]
}

/// Result of an MVEE fit with its convergence diagnostics.
#[derive(Clone, Copy, Debug)]
pub struct MveeFit {
    pub ellipsoid: Ellipsoid<2>,
    pub iterations: usize,
    /// Final `max_i M_i / (n + 1) − 1`; the fit is optimal when this is zero.
    pub gap: f64,
    pub jittered: bool,
}

pub const MVEE_DEFAULT_TOL: f64 = 1e-7;
pub const MVEE_MAX_ITERS: usize = 10_000;
const MVEE_JITTER: f64 = 1e-6;

/// Minimum-volume enclosing ellipse of a planar point cloud.
pub fn mvee_fit(points: &[Vec2], tol: f64) -> Result<Ellipsoid<2>, GeometryError> {
    mvee_fit_report(points, tol).map(|f| f.ellipsoid)
}

/// Khachiyan's first-order method with Todd–Yildirim away steps.
///
/// The returned ellipsoid is rescaled so every input point satisfies
/// `F(p) ≤ 1`. Affinely dependent clouds are retried once after adding a
/// symmetric jitter of `1e-6` m around each point.
pub fn mvee_fit_report(points: &[Vec2], tol: f64) -> Result<MveeFit, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::DegenerateCloud { points: 0 });
    }
    if whitening(points).is_some() {
        return khachiyan(points, tol, false);
    }
    let mut jittered = Vec::with_capacity(points.len() * 5);
    for p in points {
        jittered.push(*p);
        jittered.push([p[0] + MVEE_JITTER, p[1]]);
        jittered.push([p[0] - MVEE_JITTER, p[1]]);
        jittered.push([p[0], p[1] + MVEE_JITTER]);
        jittered.push([p[0], p[1] - MVEE_JITTER]);
    }
    khachiyan(&jittered, tol, true)
}

/// Affine map `y = T (p − mean)` that gives the cloud identity covariance.
struct Whitening {
    mean: Vec2,
    t: [[f64; 2]; 2],
    t_inv: [[f64; 2]; 2],
}

impl Whitening {
    fn apply(&self, p: &Vec2) -> Vec2 {
        let d = sub(p, &self.mean);
        mat2_vec(&self.t, &d)
    }
}

fn mat2_vec(m: &[[f64; 2]; 2], v: &Vec2) -> Vec2 {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// Eigen-ratio below which a cloud counts as affinely dependent. The jitter
/// retry produces ratios around `1e-12`, so this sits below that.
const DEGENERATE_RATIO: f64 = 1e-14;

fn whitening(points: &[Vec2]) -> Option<Whitening> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let mean = points
        .iter()
        .fold([0.0; 2], |acc, p| [acc[0] + p[0] / n, acc[1] + p[1] / n]);
    let mut cov = [[0.0; 2]; 2];
    for p in points {
        let d = sub(p, &mean);
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += d[i] * d[j] / n;
            }
        }
    }
    let e = eig_sym(&Sym2::from_rows_symmetrized(cov));
    if !(e.values[1] > 0.0) || !(e.values[0] > DEGENERATE_RATIO * e.values[1]) {
        return None;
    }
    // T = Λ^{-1/2} Vᵀ, T⁻¹ = V Λ^{1/2}.
    let mut t = [[0.0; 2]; 2];
    let mut t_inv = [[0.0; 2]; 2];
    for k in 0..2 {
        let sd = e.values[k].sqrt();
        for i in 0..2 {
            t[k][i] = e.vectors[i][k] / sd;
            t_inv[i][k] = e.vectors[i][k] * sd;
        }
    }
    Some(Whitening { mean, t, t_inv })
}

fn khachiyan(points: &[Vec2], tol: f64, jittered: bool) -> Result<MveeFit, GeometryError> {
    const D: f64 = 2.0;
    let degenerate = || GeometryError::DegenerateCloud {
        points: points.len(),
    };
    // The iteration is affine-equivariant, so run it on the whitened cloud
    // where the lifted moment matrix is well conditioned.
    let w = whitening(points).ok_or_else(degenerate)?;
    let n = points.len();
    let lifted: Vec<Vec3> = points
        .iter()
        .map(|p| {
            let y = w.apply(p);
            [y[0], y[1], 1.0]
        })
        .collect();
    let mut u = vec![1.0 / n as f64; n];
    let mut m = vec![0.0; n];
    let mut iterations = 0;
    let mut gap;
    loop {
        let mut x = [[0.0; 3]; 3];
        for (q, &wt) in lifted.iter().zip(&u) {
            for i in 0..3 {
                for j in 0..3 {
                    x[i][j] += wt * q[i] * q[j];
                }
            }
        }
        let x_inv = cholesky(&Sym3::from_rows_symmetrized(x))
            .map_err(|_| degenerate())?
            .inverse();
        for (mi, q) in m.iter_mut().zip(&lifted) {
            *mi = x_inv.quad_form(q);
        }
        let (j_max, kappa) = argmax(&m);
        gap = kappa / (D + 1.0) - 1.0;
        if gap <= tol || iterations >= MVEE_MAX_ITERS {
            break;
        }
        iterations += 1;
        let (k_min, m_min) = m
            .iter()
            .enumerate()
            .filter(|(i, _)| u[*i] > 0.0)
            .map(|(i, v)| (i, *v))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("weights sum to one");
        let away_gap = 1.0 - m_min / (D + 1.0);
        if gap >= away_gap {
            let beta = (kappa - D - 1.0) / ((D + 1.0) * (kappa - 1.0));
            u.iter_mut().for_each(|wt| *wt *= 1.0 - beta);
            u[j_max] += beta;
        } else {
            let uk = u[k_min];
            let beta = ((D + 1.0 - m_min) / ((D + 1.0) * (m_min - 1.0))).min(uk / (1.0 - uk));
            u.iter_mut().for_each(|wt| *wt *= 1.0 + beta);
            u[k_min] -= beta;
            if u[k_min] < 1e-300 {
                u[k_min] = 0.0;
            }
        }
    }
    if iterations >= MVEE_MAX_ITERS {
        log::debug!("mvee_fit hit the iteration cap with gap {gap:e}");
    }

    let mut c = [0.0; 2];
    for (q, &wt) in lifted.iter().zip(&u) {
        c[0] += wt * q[0];
        c[1] += wt * q[1];
    }
    let mut cov = [[0.0; 2]; 2];
    for (q, &wt) in lifted.iter().zip(&u) {
        let d = [q[0] - c[0], q[1] - c[1]];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += wt * d[i] * d[j];
            }
        }
    }
    let shape_white = cholesky(&Sym2::from_rows_symmetrized(cov))
        .map_err(|_| degenerate())?
        .inverse()
        .scale(1.0 / D);
    // Back to world coordinates: Q = Tᵀ Q_y T, μ = mean + T⁻¹ c_y.
    let t_transpose = [[w.t[0][0], w.t[1][0]], [w.t[0][1], w.t[1][1]]];
    let shape = shape_white.congruence(&t_transpose);
    let offset = mat2_vec(&w.t_inv, &c);
    let center = [w.mean[0] + offset[0], w.mean[1] + offset[1]];
    let mut ellipsoid = Ellipsoid { center, shape };
    let worst = points
        .iter()
        .map(|p| ellipsoid.eval_scaling(p))
        .fold(0.0, f64::max);
    if worst > 1.0 {
        ellipsoid = ellipsoid.scaled(worst);
    }
    Ok(MveeFit {
        ellipsoid,
        iterations,
        gap,
        jittered,
    })
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty")
}

impl From<NumericsError> for GeometryError {
    fn from(e: NumericsError) -> Self {
        GeometryError::NotPositiveDefinite(e)
    }
}
