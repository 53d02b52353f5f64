//! Fixed-size dense kernels for the 2×2 and 3×3 matrices used throughout the
//! crate, plus a small dynamic Gaussian-elimination solver for KKT systems.

use super::NumericsError;

/// A column vector of compile-time dimension.
pub type Vector<const N: usize> = [f64; N];
pub type Vec2 = Vector<2>;
pub type Vec3 = Vector<3>;

/// Absolute tolerance used when checking symmetry of user-supplied matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative pivot threshold used to declare a matrix not positive definite.
pub const PD_PIVOT_TOL: f64 = 1e-12;

/// A real symmetric matrix stored as a full square array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMatrix<const N: usize> {
    m: [[f64; N]; N],
}

pub type Sym2 = SymMatrix<2>;
pub type Sym3 = SymMatrix<3>;

impl<const N: usize> SymMatrix<N> {
    /// Builds a matrix from row-major entries, rejecting asymmetric input.
    pub fn new(rows: [[f64; N]; N]) -> Result<Self, NumericsError> {
        for i in 0..N {
            for j in 0..N {
                let (a, b) = (rows[i][j], rows[j][i]);
                if !a.is_finite() {
                    return Err(NumericsError::Domain(format!("non-finite entry ({i},{j})")));
                }
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(NumericsError::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self::from_rows_symmetrized(rows))
    }

    /// Builds a matrix from rows and averages the off-diagonal pairs.
    pub fn from_rows_symmetrized(rows: [[f64; N]; N]) -> Self {
        let mut m = rows;
        for i in 0..N {
            for j in (i + 1)..N {
                let avg = 0.5 * (rows[i][j] + rows[j][i]);
                m[i][j] = avg;
                m[j][i] = avg;
            }
        }
        Self { m }
    }

    pub fn zeros() -> Self {
        Self { m: [[0.0; N]; N] }
    }

    pub fn identity() -> Self {
        Self::from_diag([1.0; N])
    }

    pub fn from_diag(d: [f64; N]) -> Self {
        let mut m = [[0.0; N]; N];
        for i in 0..N {
            m[i][i] = d[i];
        }
        Self { m }
    }

    /// `v vᵀ`.
    pub fn outer(v: &Vector<N>) -> Self {
        let mut m = [[0.0; N]; N];
        for i in 0..N {
            for j in 0..N {
                m[i][j] = v[i] * v[j];
            }
        }
        Self { m }
    }

    pub const fn dim(&self) -> usize {
        N
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn rows(&self) -> &[[f64; N]; N] {
        &self.m
    }

    pub fn diag(&self) -> Vector<N> {
        let mut d = [0.0; N];
        for (i, di) in d.iter_mut().enumerate() {
            *di = self.m[i][i];
        }
        d
    }

    pub fn mul_vec(&self, v: &Vector<N>) -> Vector<N> {
        let mut out = [0.0; N];
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(&self.m[i], v);
        }
        out
    }

    /// `vᵀ A v`.
    pub fn quad_form(&self, v: &Vector<N>) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = self.m;
        m.iter_mut().flatten().for_each(|x| *x *= s);
        Self { m }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut m = self.m;
        for i in 0..N {
            for j in 0..N {
                m[i][j] += other.m[i][j];
            }
        }
        Self { m }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn trace(&self) -> f64 {
        (0..N).map(|i| self.m[i][i]).sum()
    }

    /// Determinant for dimensions up to three.
    pub fn det(&self) -> f64 {
        let m = &self.m;
        match N {
            1 => m[0][0],
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            3 => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
            _ => panic!("det only implemented for dim <= 3"),
        }
    }

    /// Largest absolute entry; used for relative tolerances.
    pub fn max_abs(&self) -> f64 {
        self.m.iter().flatten().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    /// `S A Sᵀ` for a general (not necessarily symmetric) square `S`.
    pub fn congruence(&self, s: &[[f64; N]; N]) -> Self {
        let mut tmp = [[0.0; N]; N];
        for i in 0..N {
            for j in 0..N {
                tmp[i][j] = (0..N).map(|k| s[i][k] * self.m[k][j]).sum();
            }
        }
        let mut out = [[0.0; N]; N];
        for i in 0..N {
            for j in 0..N {
                out[i][j] = (0..N).map(|k| tmp[i][k] * s[j][k]).sum();
            }
        }
        Self::from_rows_symmetrized(out)
    }

    /// Matrix product with another symmetric matrix (result generally not symmetric).
    pub fn matmul(&self, other: &Self) -> [[f64; N]; N] {
        let mut out = [[0.0; N]; N];
        for i in 0..N {
            for j in 0..N {
                out[i][j] = (0..N).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|x| x.is_finite())
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cholesky<const N: usize> {
    l: [[f64; N]; N],
}

impl<const N: usize> Cholesky<N> {
    pub fn factor(&self) -> &[[f64; N]; N] {
        &self.l
    }

    /// Solves `L Lᵀ x = b` by forward and back substitution.
    pub fn solve(&self, b: &Vector<N>) -> Vector<N> {
        let l = &self.l;
        let mut y = [0.0; N];
        for i in 0..N {
            let s: f64 = (0..i).map(|k| l[i][k] * y[k]).sum();
            y[i] = (b[i] - s) / l[i][i];
        }
        let mut x = [0.0; N];
        for i in (0..N).rev() {
            let s: f64 = ((i + 1)..N).map(|k| l[k][i] * x[k]).sum();
            x[i] = (y[i] - s) / l[i][i];
        }
        x
    }

    /// `det A = (Π L_ii)²`.
    pub fn det(&self) -> f64 {
        let p: f64 = (0..N).map(|i| self.l[i][i]).product();
        p * p
    }

    /// Explicit inverse of `A`, column by column.
    pub fn inverse(&self) -> SymMatrix<N> {
        let mut inv = [[0.0; N]; N];
        for j in 0..N {
            let mut e = [0.0; N];
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..N {
                inv[i][j] = col[i];
            }
        }
        SymMatrix::from_rows_symmetrized(inv)
    }
}

/// Cholesky factorization. Fails when a pivot drops to `1e-12 · max diag` or below.
pub fn cholesky<const N: usize>(a: &SymMatrix<N>) -> Result<Cholesky<N>, NumericsError> {
    let max_diag = (0..N).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
    let threshold = PD_PIVOT_TOL * max_diag;
    let mut l = [[0.0; N]; N];
    for j in 0..N {
        let s: f64 = (0..j).map(|k| l[j][k] * l[j][k]).sum();
        let pivot = a.get(j, j) - s;
        if !(pivot > threshold) || max_diag == 0.0 {
            return Err(NumericsError::NotPositiveDefinite { pivot, index: j });
        }
        let d = pivot.sqrt();
        l[j][j] = d;
        for i in (j + 1)..N {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = (a.get(i, j) - s) / d;
        }
    }
    Ok(Cholesky { l })
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn solve_spd<const N: usize>(
    a: &SymMatrix<N>,
    b: &Vector<N>,
) -> Result<Vector<N>, NumericsError> {
    Ok(cholesky(a)?.solve(b))
}

/// Eigen-decomposition of a symmetric matrix: ascending eigenvalues and the
/// matching orthonormal eigenvectors stored as columns.
#[derive(Clone, Copy, Debug)]
pub struct SymEigen<const N: usize> {
    pub values: Vector<N>,
    /// `vectors[i][k]` is component `i` of eigenvector `k`.
    pub vectors: [[f64; N]; N],
}

impl<const N: usize> SymEigen<N> {
    pub fn vector(&self, k: usize) -> Vector<N> {
        let mut v = [0.0; N];
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = self.vectors[i][k];
        }
        v
    }

    /// `V Λ Vᵀ`.
    pub fn reconstruct(&self) -> SymMatrix<N> {
        SymMatrix::from_diag(self.values).congruence(&self.vectors)
    }
}

const JACOBI_MAX_SWEEPS: usize = 50;

/// Symmetric eigensolver: closed form for 2×2, cyclic Jacobi otherwise.
pub fn eig_sym<const N: usize>(a: &SymMatrix<N>) -> SymEigen<N> {
    let (values, vectors) = if N == 2 {
        eig2(a)
    } else {
        jacobi(a)
    };
    sort_ascending(values, vectors)
}

fn eig2<const N: usize>(a: &SymMatrix<N>) -> (Vector<N>, [[f64; N]; N]) {
    let (p, q, r) = (a.get(0, 0), a.get(0, 1), a.get(1, 1));
    let mean = 0.5 * (p + r);
    let rad = (0.5 * (p - r)).hypot(q);
    let phi = 0.5 * (2.0 * q).atan2(p - r);
    let (s, c) = phi.sin_cos();
    let mut values = [0.0; N];
    let mut vectors = [[0.0; N]; N];
    // (c, s) spans the larger eigenvalue, (-s, c) the smaller.
    values[0] = mean - rad;
    values[1] = mean + rad;
    vectors[0][0] = -s;
    vectors[1][0] = c;
    vectors[0][1] = c;
    vectors[1][1] = s;
    (values, vectors)
}

fn jacobi<const N: usize>(a: &SymMatrix<N>) -> (Vector<N>, [[f64; N]; N]) {
    let mut m = *a.rows();
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..N)
            .flat_map(|i| ((i + 1)..N).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..N {
            for q in (p + 1)..N {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..N {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut values = [0.0; N];
    for (i, val) in values.iter_mut().enumerate() {
        *val = m[i][i];
    }
    (values, v)
}

fn sort_ascending<const N: usize>(
    values: Vector<N>,
    vectors: [[f64; N]; N],
) -> SymEigen<N> {
    let mut order: [usize; N] = [0; N];
    for (i, o) in order.iter_mut().enumerate() {
        *o = i;
    }
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut sv = [0.0; N];
    let mut svec = [[0.0; N]; N];
    for (k, &src) in order.iter().enumerate() {
        sv[k] = values[src];
        for i in 0..N {
            svec[i][k] = vectors[i][src];
        }
    }
    SymEigen {
        values: sv,
        vectors: svec,
    }
}

#[inline]
pub fn dot<const N: usize>(a: &Vector<N>, b: &Vector<N>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm<const N: usize>(a: &Vector<N>) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn add<const N: usize>(a: &Vector<N>, b: &Vector<N>) -> Vector<N> {
    let mut out = *a;
    out.iter_mut().zip(b).for_each(|(o, y)| *o += y);
    out
}

#[inline]
pub fn sub<const N: usize>(a: &Vector<N>, b: &Vector<N>) -> Vector<N> {
    let mut out = *a;
    out.iter_mut().zip(b).for_each(|(o, y)| *o -= y);
    out
}

#[inline]
pub fn scale<const N: usize>(a: &Vector<N>, s: f64) -> Vector<N> {
    let mut out = *a;
    out.iter_mut().for_each(|o| *o *= s);
    out
}

/// 2D rotation matrix `R(θ)`.
pub fn rotation(theta: f64) -> [[f64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

/// Solves the dense square system `A x = b` in place by Gaussian elimination
/// with partial pivoting. `a` is row-major `n × n`; the solution overwrites `b`.
pub fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<(), NumericsError> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 {
        return Err(NumericsError::Singular);
    }
    for col in 0..n {
        let (piv_row, piv_val) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty pivot range");
        if piv_val <= 1e-14 * scale {
            return Err(NumericsError::Singular);
        }
        if piv_row != col {
            for k in 0..n {
                a.swap(col * n + k, piv_row * n + k);
            }
            b.swap(col, piv_row);
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|k| a[r * n + k] * b[k]).sum();
        b[r] = (b[r] - s) / a[r * n + r];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_spd3(seed: u64) -> Sym3 {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut b = [[0.0; 3]; 3];
        b.iter_mut()
            .flatten()
            .for_each(|x| *x = rng.random_range(-1.0..1.0));
        // B Bᵀ + I
        SymMatrix::identity().congruence(&b).add(&SymMatrix::identity())
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let l = cholesky(&Sym2::identity()).unwrap();
        assert_eq!(*l.factor(), [[1.0, 0.0], [0.0, 1.0]]);
        let l = cholesky(&Sym2::from_diag([4.0, 9.0])).unwrap();
        assert_eq!(*l.factor(), [[2.0, 0.0], [0.0, 3.0]]);
    }

    #[test]
    fn cholesky_multiplies_back() {
        let a = Sym2::new([[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let l = *cholesky(&a).unwrap().factor();
        let back = Sym2::identity().congruence(&l);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(back.get(i, j), a.get(i, j), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Sym2::new([[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&a),
            Err(NumericsError::NotPositiveDefinite { index: 1, .. })
        ));
        assert!(cholesky(&Sym2::zeros()).is_err());
    }

    #[test]
    fn asymmetric_input_rejected() {
        assert!(matches!(
            Sym2::new([[1.0, 0.5], [0.4, 1.0]]),
            Err(NumericsError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn solve_spd_cases() {
        let b = [3.0, -2.0];
        assert_eq!(solve_spd(&Sym2::identity(), &b).unwrap(), b);
        let x = solve_spd(&Sym2::from_diag([2.0, 4.0]), &[2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-15);
        for seed in 0..20 {
            let a = random_spd3(seed);
            let b = [1.0, -0.5, 2.0];
            let x = solve_spd(&a, &b).unwrap();
            let r = sub(&a.mul_vec(&x), &b);
            assert!(norm(&r) <= 1e-10 * norm(&b));
        }
    }

    #[test]
    fn eig_sym_cases() {
        let e = eig_sym(&Sym2::from_diag([1.0, 4.0]));
        assert_eq!(e.values, [1.0, 4.0]);
        assert_abs_diff_eq!(e.vector(0)[0].abs(), 1.0, epsilon = 1e-15);
        let e = eig_sym(&Sym2::new([[2.0, 1.0], [1.0, 2.0]]).unwrap());
        assert_abs_diff_eq!(e.values[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 3.0, epsilon = 1e-14);
        let e = eig_sym(&Sym2::from_diag([4.0, 1.0]));
        assert_eq!(e.values, [1.0, 4.0]);
        assert_abs_diff_eq!(e.vector(0)[1].abs(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn eig_sym_3x3_reconstructs() {
        for seed in 0..50 {
            let a = random_spd3(seed).sub(&Sym3::from_diag([2.0; 3]));
            let e = eig_sym(&a);
            assert!(e.values[0] <= e.values[1] && e.values[1] <= e.values[2]);
            for k in 0..3 {
                let v = e.vector(k);
                let av = a.mul_vec(&v);
                for i in 0..3 {
                    assert_abs_diff_eq!(av[i], e.values[k] * v[i], epsilon = 1e-9);
                }
            }
            let r = e.reconstruct();
            for i in 0..3 {
                for j in 0..3 {
                    assert_abs_diff_eq!(r.get(i, j), a.get(i, j), epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn solve_dense_pivots() {
        let mut a = vec![0.0, 1.0, 1.0, 0.0];
        let mut b = vec![2.0, 3.0];
        solve_dense(&mut a, &mut b, 2).unwrap();
        assert_eq!(b, vec![3.0, 2.0]);
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 1.0];
        assert!(matches!(
            solve_dense(&mut a, &mut b, 2),
            Err(NumericsError::Singular)
        ));
    }

    proptest::proptest! {
        #[test]
        fn cholesky_roundtrip_random_spd(seed in 0u64..10_000) {
            let a = random_spd3(seed);
            let l = *cholesky(&a).unwrap().factor();
            let back = Sym3::identity().congruence(&l);
            let scale = a.max_abs();
            for i in 0..3 {
                for j in 0..3 {
                    proptest::prop_assert!((back.get(i, j) - a.get(i, j)).abs() <= 1e-10 * scale);
                }
            }
        }
    }
}
