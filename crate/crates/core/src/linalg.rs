//! Dense numerical kernels: symmetric eigendecomposition, projectors,
//! orthogonal Procrustes alignment and exact assignment.
//!
//! All routines are deterministic for identical input bits. Eigenpairs are
//! reported in a fixed order with a fixed sign convention so that k-means
//! seeding downstream sees the same embedding on every run.

use std::cmp::Ordering;

use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};

/// Threshold below which an eigenvector coordinate is treated as zero when
/// fixing its sign.
const SIGN_THRESHOLD: f64 = 1e-12;

/// Tolerance for orthonormality checks on embedding bases.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// A dense symmetric matrix.
///
/// Construction either checks exact symmetry or symmetrizes explicitly, so
/// `get(i, j) == get(j, i)` always holds bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    data: Mat<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            data: Mat::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix {
            data: Mat::identity(n, n),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        SymMatrix {
            data: Mat::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 }),
        }
    }

    /// Builds a matrix from the upper triangle `f(i, j)` with `i <= j`,
    /// mirroring it into the lower triangle.
    pub fn from_upper_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Mat::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = f(i, j);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        SymMatrix { data }
    }

    /// Wraps `m`, requiring exact symmetry.
    pub fn from_mat(m: Mat<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension {
                context: "SymMatrix::from_mat (square)",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let n = m.nrows();
        for j in 0..n {
            for i in 0..j {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::input(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(SymMatrix { data: m })
    }

    /// Wraps `m` after replacing it by `(m + mᵀ) / 2`.
    pub fn symmetrized(m: MatRef<'_, f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension {
                context: "SymMatrix::symmetrized (square)",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let n = m.nrows();
        Ok(Self::from_upper_fn(n, |i, j| {
            if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)])
            }
        }))
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn as_ref(&self) -> MatRef<'_, f64> {
        self.data.as_ref()
    }

    pub fn into_inner(self) -> Mat<f64> {
        self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.data[(i, i)]).collect()
    }

    /// Elementwise map preserving symmetry; `f` receives `(i, j, value)`.
    pub fn map(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> SymMatrix {
        Self::from_upper_fn(self.dim(), |i, j| f(i, j, self.data[(i, j)]))
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        self.map(|_, _, v| c * v)
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_same_dim("SymMatrix::sub", self.dim(), other.dim())?;
        Ok(self.map(|i, j, v| v - other.get(i, j)))
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_same_dim("SymMatrix::add", self.dim(), other.dim())?;
        Ok(self.map(|i, j, v| v + other.get(i, j)))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm_l2()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.norm_max()
    }

    pub fn min_entry(&self) -> f64 {
        let n = self.dim();
        let mut m = f64::INFINITY;
        for j in 0..n {
            for i in 0..=j {
                m = m.min(self.data[(i, j)]);
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| self.data[(i, j)].is_finite()))
    }
}

pub(crate) fn check_same_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

/// Ordering used to pick eigenpairs from a symmetric spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigenOrder {
    /// Descending `|value|`; ties by descending signed value.
    ByAbsValue,
    /// Descending signed value.
    ByValue,
    /// Ascending signed value (Laplacian embeddings).
    Smallest,
}

/// Selected eigenpairs of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// `n × r` matrix with orthonormal columns, column `c` paired with `values[c]`.
    pub vectors: Mat<f64>,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn full_eigen(a: &SymMatrix) -> Result<(Vec<f64>, Mat<f64>)> {
    if !a.is_finite() {
        return Err(Error::input("matrix has non-finite entries"));
    }
    let evd = a
        .data
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigendecomposition failed: {e:?}")))?;
    let s = evd.S().column_vector();
    let values: Vec<f64> = (0..a.dim()).map(|i| s[i]).collect();
    Ok((values, evd.U().to_owned()))
}

fn order_indices(values: &[f64], order: EigenOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let (va, vb) = (values[a], values[b]);
        let primary = match order {
            EigenOrder::ByAbsValue => vb
                .abs()
                .partial_cmp(&va.abs())
                .unwrap_or(Ordering::Equal)
                .then(vb.partial_cmp(&va).unwrap_or(Ordering::Equal)),
            EigenOrder::ByValue => vb.partial_cmp(&va).unwrap_or(Ordering::Equal),
            EigenOrder::Smallest => va.partial_cmp(&vb).unwrap_or(Ordering::Equal),
        };
        primary.then(a.cmp(&b))
    });
    idx
}

/// Flips each column so its first coordinate above [`SIGN_THRESHOLD`] is positive.
pub(crate) fn fix_signs(vectors: &mut Mat<f64>) {
    for c in 0..vectors.ncols() {
        let first = (0..vectors.nrows())
            .map(|r| vectors[(r, c)])
            .find(|v| v.abs() > SIGN_THRESHOLD);
        if matches!(first, Some(v) if v < 0.0) {
            for r in 0..vectors.nrows() {
                vectors[(r, c)] = -vectors[(r, c)];
            }
        }
    }
}

/// Returns `k` eigenpairs of `a` in the requested order.
pub fn eig_sym_topk(a: &SymMatrix, k: usize, order: EigenOrder) -> Result<EigenPairs> {
    let n = a.dim();
    if k == 0 || k > n {
        return Err(Error::Dimension {
            context: "eig_sym_topk (1 <= k <= n)",
            expected: n,
            found: k,
        });
    }
    let (values, vectors) = full_eigen(a)?;
    let picked = order_indices(&values, order);
    let picked = &picked[..k];
    let mut out = Mat::from_fn(n, k, |r, c| vectors[(r, picked[c])]);
    fix_signs(&mut out);
    Ok(EigenPairs {
        values: picked.iter().map(|&i| values[i]).collect(),
        vectors: out,
    })
}

/// All eigenvalues of `a` in ascending order.
pub fn eigenvalues(a: &SymMatrix) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(Error::input("matrix has non-finite entries"));
    }
    let mut v = a
        .data
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Numerical(format!("symmetric eigenvalue solve failed: {e:?}")))?;
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(v)
}

/// Operator (spectral) norm of a symmetric matrix.
pub fn spectral_norm(a: &SymMatrix) -> Result<f64> {
    let v = eigenvalues(a)?;
    Ok(v.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// Largest absolute deviation of `uᵀu` from the identity.
pub fn orthonormality_defect(u: MatRef<'_, f64>) -> f64 {
    let g = u.transpose() * u;
    let k = g.nrows();
    let mut worst = 0.0_f64;
    for j in 0..k {
        for i in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// `u·uᵀ` for a column-orthonormal `u`.
pub fn projector(u: MatRef<'_, f64>) -> Result<SymMatrix> {
    let defect = orthonormality_defect(u);
    if !(defect <= ORTHONORMAL_TOL) {
        return Err(Error::input(format!(
            "projector basis is not orthonormal (max |uᵀu - I| = {defect:e})"
        )));
    }
    let p = u * u.transpose();
    Ok(SymMatrix::symmetrized(p.as_ref()).expect("square by construction"))
}

/// Orthonormal `Q` minimizing `‖u_hat − u_star·Q‖_F`.
///
/// Computed as the polar factor `A·Bᵀ` of `u_starᵀ·u_hat = A·Σ·Bᵀ`. Rank
/// deficiency is fine: any completion returned by the SVD is a minimizer.
pub fn procrustes_align(u_hat: MatRef<'_, f64>, u_star: MatRef<'_, f64>) -> Result<Mat<f64>> {
    check_same_dim("procrustes_align rows", u_star.nrows(), u_hat.nrows())?;
    check_same_dim("procrustes_align cols", u_star.ncols(), u_hat.ncols())?;
    let cross = u_star.transpose() * u_hat;
    let svd = cross
        .svd()
        .map_err(|e| Error::Numerical(format!("Procrustes SVD failed: {e:?}")))?;
    Ok(svd.U() * svd.V().transpose())
}

/// Permutation `π` maximizing `Σ_k confusion[k][π(k)]` (Hungarian method).
///
/// `confusion` must be square; the result maps row index to column index.
pub fn best_label_matching(confusion: &[Vec<u64>]) -> Result<Vec<usize>> {
    let k = confusion.len();
    for (r, row) in confusion.iter().enumerate() {
        if row.len() != k {
            return Err(Error::input(format!(
                "confusion matrix row {r} has {} columns, expected {k}",
                row.len()
            )));
        }
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let max = confusion.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| max - confusion[i][j] as i64;

    // Shortest augmenting path with potentials; 1-based with a virtual column 0.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; k + 1];
    let mut v = vec![0i64; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for row in 1..=k {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![inf; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=k {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; k];
    for j in 1..=k {
        perm[owner[j] - 1] = j - 1;
    }
    Ok(perm)
}

#[cfg(test)]
pub(crate) mod test_support {
    use faer::Mat;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Random orthogonal `n × n` matrix by Gram-Schmidt on Gaussian columns.
    pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Mat<f64> {
        let mut q = Mat::<f64>::zeros(n, n);
        let mut c = 0;
        while c < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            for p in 0..c {
                let dot: f64 = (0..n).map(|r| v[r] * q[(r, p)]).sum();
                for r in 0..n {
                    v[r] -= dot * q[(r, p)];
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                continue;
            }
            for r in 0..n {
                q[(r, c)] = v[r] / norm;
            }
            c += 1;
        }
        q
    }

    pub fn random_symmetric(n: usize, rng: &mut impl Rng) -> super::SymMatrix {
        super::SymMatrix::from_upper_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn reconstruct(pairs: &EigenPairs) -> Mat<f64> {
        let n = pairs.vectors.nrows();
        let mut out = Mat::<f64>::zeros(n, n);
        for (c, &lam) in pairs.values.iter().enumerate() {
            for j in 0..n {
                for i in 0..n {
                    out[(i, j)] += lam * pairs.vectors[(i, c)] * pairs.vectors[(j, c)];
                }
            }
        }
        out
    }

    fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
        let mut m = 0.0_f64;
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                m = m.max((a[(i, j)] - b[(i, j)]).abs());
            }
        }
        m
    }

    #[test]
    fn identity_top_two() {
        let pairs = eig_sym_topk(&SymMatrix::identity(3), 2, EigenOrder::ByValue).unwrap();
        assert_eq!(pairs.values, vec![1.0, 1.0]);
        assert!(orthonormality_defect(pairs.vectors.as_ref()) < 1e-12);
    }

    #[test]
    fn diagonal_by_abs_value() {
        let a = SymMatrix::from_diagonal(&[3.0, -5.0, 1.0]);
        let pairs = eig_sym_topk(&a, 2, EigenOrder::ByAbsValue).unwrap();
        assert!((pairs.values[0] + 5.0).abs() < 1e-12);
        assert!((pairs.values[1] - 3.0).abs() < 1e-12);
        // Sign convention: first nonzero coordinate positive.
        assert!((pairs.vectors[(1, 0)] - 1.0).abs() < 1e-12);
        assert!((pairs.vectors[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn abs_ties_prefer_positive_value() {
        let a = SymMatrix::from_diagonal(&[-2.0, 2.0, 1.0]);
        let pairs = eig_sym_topk(&a, 2, EigenOrder::ByAbsValue).unwrap();
        assert_eq!(pairs.values.len(), 2);
        assert!((pairs.values[0] - 2.0).abs() < 1e-12);
        assert!((pairs.values[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn smallest_order() {
        let a = SymMatrix::from_diagonal(&[3.0, -5.0, 1.0]);
        let pairs = eig_sym_topk(&a, 2, EigenOrder::Smallest).unwrap();
        assert!((pairs.values[0] + 5.0).abs() < 1e-12);
        assert!((pairs.values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_4x4_full_reconstruction() {
        let mut rng = rng_from_seed(7);
        let a = random_symmetric(4, &mut rng);
        let pairs = eig_sym_topk(&a, 4, EigenOrder::ByAbsValue).unwrap();
        let r = reconstruct(&pairs);
        assert!(max_abs_diff(r.as_ref(), a.as_ref()) < 1e-6);
    }

    #[test]
    fn residuals_are_small() {
        let mut rng = rng_from_seed(8);
        let a = random_symmetric(30, &mut rng);
        let norm = spectral_norm(&a).unwrap();
        let pairs = eig_sym_topk(&a, 5, EigenOrder::ByAbsValue).unwrap();
        for c in 0..5 {
            let v = pairs.vectors.col(c);
            let av = a.as_ref() * v;
            let mut res = 0.0;
            for r in 0..30 {
                res += (av[r] - pairs.values[c] * v[r]).powi(2);
            }
            assert!(res.sqrt() <= 1e-8 * norm);
        }
        for w in pairs.values.windows(2) {
            assert!(w[0].abs() >= w[1].abs());
        }
    }

    #[test]
    fn rank_errors() {
        let a = SymMatrix::identity(3);
        assert!(matches!(
            eig_sym_topk(&a, 4, EigenOrder::ByValue),
            Err(Error::Dimension { .. })
        ));
        assert!(eig_sym_topk(&a, 0, EigenOrder::ByValue).is_err());
        let bad = SymMatrix::from_diagonal(&[1.0, f64::NAN]);
        assert!(matches!(
            eig_sym_topk(&bad, 1, EigenOrder::ByValue),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn eigen_is_deterministic() {
        let mut rng = rng_from_seed(9);
        let a = random_symmetric(40, &mut rng);
        let p1 = eig_sym_topk(&a, 6, EigenOrder::ByAbsValue).unwrap();
        let p2 = eig_sym_topk(&a, 6, EigenOrder::ByAbsValue).unwrap();
        assert_eq!(p1.values, p2.values);
        assert_eq!(p1.vectors, p2.vectors);
    }

    /// Roots of the characteristic polynomial, computed independently.
    fn char_poly_roots_2x2(a: f64, b: f64, d: f64) -> [f64; 2] {
        let tr = a + d;
        let det = a * d - b * b;
        let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
        [tr / 2.0 - disc, tr / 2.0 + disc]
    }

    /// Trigonometric solution of the depressed cubic for a symmetric 3×3.
    fn char_poly_roots_3x3(m: [[f64; 3]; 3]) -> [f64; 3] {
        let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
        let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
        let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        if p == 0.0 {
            return [q, q, q];
        }
        let mut b = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
            }
        }
        let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det_b / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let e2 = 3.0 * q - e1 - e3;
        let mut out = [e1, e2, e3];
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    #[test]
    fn matches_characteristic_polynomial() {
        let mut rng = rng_from_seed(10);
        for _ in 0..200 {
            let (a, b, d) = (
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let m = SymMatrix::from_upper_fn(2, |i, j| match (i, j) {
                (0, 0) => a,
                (1, 1) => d,
                _ => b,
            });
            let got = eigenvalues(&m).unwrap();
            let want = char_poly_roots_2x2(a, b, d);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-9, "{got:?} vs {want:?}");
            }

            let mut m3 = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in i..3 {
                    let v = rng.random_range(-3.0..3.0);
                    m3[i][j] = v;
                    m3[j][i] = v;
                }
            }
            let s3 = SymMatrix::from_upper_fn(3, |i, j| m3[i][j]);
            let got = eigenvalues(&s3).unwrap();
            let want = char_poly_roots_3x3(m3);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-9, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn projector_examples() {
        let e1 = Mat::from_fn(3, 1, |r, _| if r == 0 { 1.0 } else { 0.0 });
        let p = projector(e1.as_ref()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == 0 && j == 0 { 1.0 } else { 0.0 };
                assert_eq!(p.get(i, j), want);
            }
        }
        let i3 = Mat::<f64>::identity(3, 3);
        assert_eq!(projector(i3.as_ref()).unwrap(), SymMatrix::identity(3));

        let mut rng = rng_from_seed(11);
        let q = random_orthogonal(5, &mut rng);
        let u = q.subcols(0, 2).to_owned();
        let p = projector(u.as_ref()).unwrap();
        let trace: f64 = p.diagonal().iter().sum();
        assert!((trace - 2.0).abs() < 1e-8);
        let pp = p.as_ref() * p.as_ref();
        assert!(max_abs_diff(pp.as_ref(), p.as_ref()) < 1e-8);
    }

    #[test]
    fn projector_rejects_non_orthonormal() {
        let u = Mat::from_fn(3, 1, |_, _| 1.0);
        assert!(matches!(projector(u.as_ref()), Err(Error::Input(_))));
    }

    #[test]
    fn procrustes_identity_and_rotation() {
        let mut rng = rng_from_seed(12);
        let q = random_orthogonal(8, &mut rng);
        let u_star = q.subcols(0, 3).to_owned();
        let q_id = procrustes_align(u_star.as_ref(), u_star.as_ref()).unwrap();
        assert!(max_abs_diff(q_id.as_ref(), Mat::<f64>::identity(3, 3).as_ref()) < 1e-8);

        let r = random_orthogonal(3, &mut rng);
        let u_hat = &u_star * &r;
        let got = procrustes_align(u_hat.as_ref(), u_star.as_ref()).unwrap();
        assert!(max_abs_diff(got.as_ref(), r.as_ref()) < 1e-6);
    }

    #[test]
    fn procrustes_beats_random_probes() {
        let mut rng = rng_from_seed(13);
        let q = random_orthogonal(10, &mut rng);
        let u_star = q.subcols(0, 3).to_owned();
        let noise = Mat::from_fn(10, 3, |_, _| rng.random_range(-0.3..0.3));
        let u_hat = &u_star * random_orthogonal(3, &mut rng) + noise;
        let best = procrustes_align(u_hat.as_ref(), u_star.as_ref()).unwrap();
        let loss = |qq: &Mat<f64>| (&u_hat - &u_star * qq).norm_l2();
        let best_loss = loss(&best);
        for _ in 0..1000 {
            let probe = random_orthogonal(3, &mut rng);
            assert!(best_loss <= loss(&probe) + 1e-12);
        }
    }

    fn brute_force_matching(c: &[Vec<u64>]) -> u64 {
        fn rec(c: &[Vec<u64>], row: usize, used: &mut Vec<bool>) -> u64 {
            if row == c.len() {
                return 0;
            }
            let mut best = 0;
            for j in 0..c.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.max(c[row][j] + rec(c, row + 1, used));
                    used[j] = false;
                }
            }
            best
        }
        rec(c, 0, &mut vec![false; c.len()])
    }

    fn matching_value(c: &[Vec<u64>], perm: &[usize]) -> u64 {
        perm.iter().enumerate().map(|(r, &p)| c[r][p]).sum()
    }

    #[test]
    fn matching_examples() {
        let diag = vec![vec![5, 0, 0], vec![0, 4, 0], vec![0, 0, 3]];
        assert_eq!(best_label_matching(&diag).unwrap(), vec![0, 1, 2]);
        let anti = vec![vec![0, 0, 5], vec![0, 4, 0], vec![3, 0, 0]];
        assert_eq!(best_label_matching(&anti).unwrap(), vec![2, 1, 0]);

        let mut rng = rng_from_seed(14);
        for _ in 0..50 {
            let c: Vec<Vec<u64>> = (0..4)
                .map(|_| (0..4).map(|_| rng.random_range(0..20)).collect())
                .collect();
            let perm = best_label_matching(&c).unwrap();
            assert_eq!(matching_value(&c, &perm), brute_force_matching(&c));
        }
    }

    #[test]
    fn matching_rejects_ragged() {
        assert!(best_label_matching(&[vec![1, 2], vec![3]]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_full_reconstruction(n in 1usize..=12, seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed);
            let a = random_symmetric(n, &mut rng);
            let pairs = eig_sym_topk(&a, n, EigenOrder::ByAbsValue).unwrap();
            let r = reconstruct(&pairs);
            let diff = &r - a.as_ref();
            prop_assert!(diff.norm_l2() < 1e-6);
            prop_assert!(orthonormality_defect(pairs.vectors.as_ref()) < 1e-8);
        }

        #[test]
        fn prop_projector_spectrum(n in 2usize..=10, seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed);
            let k = rng.random_range(1..=n);
            let q = random_orthogonal(n, &mut rng);
            let p = projector(q.subcols(0, k).as_ref()).unwrap();
            for v in eigenvalues(&p).unwrap() {
                prop_assert!(v.abs() < 1e-8 || (v - 1.0).abs() < 1e-8);
            }
        }

        #[test]
        fn prop_matching_is_optimal(k in 1usize..=6, seed in any::<u64>()) {
            let mut rng = rng_from_seed(seed);
            let c: Vec<Vec<u64>> = (0..k)
                .map(|_| (0..k).map(|_| rng.random_range(0..50)).collect())
                .collect();
            let perm = best_label_matching(&c).unwrap();
            let mut seen = perm.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..k).collect::<Vec<_>>());
            prop_assert_eq!(matching_value(&c, &perm), brute_force_matching(&c));
        }
    }
}
