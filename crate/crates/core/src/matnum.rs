//! Dense matrix numerics shared by every other module.
//!
//! Everything here is a pure function of its inputs. Matrices are
//! `nalgebra::DMatrix<f64>`; the solvers iterate the natural recursions
//! (Riccati map, Lyapunov series) rather than using spectral methods, so the
//! Kalman covariance recursion and the solver are literally the same code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative threshold used for every rank decision in the crate.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Stopping rule for the iterative solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual `‖X − map(X)‖ / max(1, ‖X‖)` accepted at exit.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-10,
            max_iterations: 10_000,
        }
    }
}

impl SolverOptions {
    pub fn new(tolerance: f64, max_iterations: usize) -> Result<Self> {
        if !(tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "solver tolerance must be positive, got {tolerance}"
            )));
        }
        if max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations must be at least 1".into(),
            ));
        }
        Ok(SolverOptions {
            tolerance,
            max_iterations,
        })
    }
}

fn check_square(m: &Matrix, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dims(
            context,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn check_shape(m: &Matrix, rows: usize, cols: usize, context: &'static str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::dims(
            context,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Symmetric up to `1e-9 · max(1, max|m|)`.
pub fn is_symmetric(m: &Matrix) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-9 * scale
}

/// Number of singular values above `RANK_TOLERANCE · σ_max`.
pub fn numerical_rank(m: &Matrix) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = svd(m).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * smax).count()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &Matrix, what: &'static str) -> Result<Matrix> {
    let chol = m.clone().cholesky().ok_or(Error::SingularCovariance(what))?;
    Ok(symmetrize(&chol.inverse()))
}

/// One application of the filter-form Riccati map
/// `X ↦ F X Fᵀ − F X Hᵀ (H X Hᵀ + R)⁻¹ H X Fᵀ + Q`.
pub fn riccati_map(x: &Matrix, f: &Matrix, h: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let fx = f * x;
    let fxht = &fx * h.transpose();
    let s = h * x * h.transpose() + r;
    let s_inv = s
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| s.try_inverse())
        .ok_or(Error::SingularCovariance("H X Hᵀ + R"))?;
    let next = &fx * f.transpose() - &fxht * s_inv * fxht.transpose() + q;
    Ok(symmetrize(&next))
}

fn relative_gap(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax() / a.amax().max(1.0)
}

/// Solves `X = F X Fᵀ − F X Hᵀ (H X Hᵀ + R)⁻¹ H X Fᵀ + Q` by iterating the
/// Riccati map from `X₀ = Q`.
///
/// The iteration is the steady-state limit of the Kalman covariance
/// recursion, so it converges whenever `(F, H)` is detectable and the noise is
/// nondegenerate in the unstable directions. Returns a symmetric PSD matrix
/// whose relative residual is at most `opts.tolerance`.
///
/// ```
/// use stealthy::matnum::{solve_dare, Matrix, SolverOptions};
/// let one = Matrix::from_element(1, 1, 1.0);
/// let x = solve_dare(&one, &one, &one, &one, &SolverOptions::default()).unwrap();
/// let golden = (1.0 + 5f64.sqrt()) / 2.0;
/// assert!((x[(0, 0)] - golden).abs() < 1e-10);
/// ```
pub fn solve_dare(
    f: &Matrix,
    h: &Matrix,
    q: &Matrix,
    r: &Matrix,
    opts: &SolverOptions,
) -> Result<Matrix> {
    check_square(f, "solve_dare: F")?;
    let n = f.nrows();
    if h.ncols() != n {
        return Err(Error::dims(
            "solve_dare: H",
            format!("? x {n}"),
            format!("{}x{}", h.nrows(), h.ncols()),
        ));
    }
    let m = h.nrows();
    check_shape(q, n, n, "solve_dare: Q")?;
    check_shape(r, m, m, "solve_dare: R")?;

    let mut x = symmetrize(q);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let next = riccati_map(&x, f, h, q, r)?;
        if !is_finite(&next) {
            break;
        }
        let previous = residual;
        residual = relative_gap(&next, &x);
        x = next;
        // Past the tolerance, keep going only while round-off still allows
        // progress.
        if residual <= 0.1 * opts.tolerance || (residual <= opts.tolerance && residual >= previous) {
            break;
        }
    }
    if !is_finite(&x) {
        return Err(Error::NonConvergence {
            iterations: opts.max_iterations,
            residual: f64::INFINITY,
        });
    }
    // Residual of the returned iterate, not of its predecessor.
    let check = relative_gap(&riccati_map(&x, f, h, q, r)?, &x);
    if !(check <= opts.tolerance) {
        return Err(Error::NonConvergence {
            iterations: opts.max_iterations,
            residual: check.max(residual),
        });
    }
    Ok(x)
}

/// Solves the discrete Lyapunov equation `X = F X Fᵀ + Q` with the doubling
/// iteration `X ← X + Fᵏ X (Fᵏ)ᵀ`, `Fᵏ ← (Fᵏ)²`.
///
/// Fails with `NonConvergence` when the spectral radius of `F` is not below
/// one.
pub fn solve_dlyap(f: &Matrix, q: &Matrix, opts: &SolverOptions) -> Result<Matrix> {
    check_square(f, "solve_dlyap: F")?;
    let n = f.nrows();
    check_shape(q, n, n, "solve_dlyap: Q")?;

    let mut x = symmetrize(q);
    let mut power = f.clone();
    // Each pass doubles the number of series terms; 2^100 terms is plenty.
    let passes = opts.max_iterations.min(100);
    let mut converged = false;
    for _ in 0..passes {
        let increment = &power * &x * power.transpose();
        x += &increment;
        power = &power * &power;
        if !is_finite(&x) || !is_finite(&power) {
            break;
        }
        if increment.norm() <= 1e-3 * opts.tolerance * x.norm().max(1.0) && power.norm() < 1.0 {
            converged = true;
            break;
        }
    }
    let x = symmetrize(&x);
    if !converged || !is_finite(&x) {
        return Err(Error::NonConvergence {
            iterations: passes,
            residual: f64::INFINITY,
        });
    }
    let residual = relative_gap(&(f * &x * f.transpose() + q), &x);
    if residual > opts.tolerance {
        return Err(Error::NonConvergence {
            iterations: passes,
            residual,
        });
    }
    Ok(x)
}

/// Full SVD with a reconstruction check.
///
/// nalgebra's bidiagonal iteration can stall with inaccurate singular vectors
/// on rank-deficient inputs when run at machine-epsilon tolerance, so the
/// tolerance is relaxed until `U Σ Vᵀ` reproduces the input.
pub fn svd(m: &Matrix) -> nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut last = None;
    for eps in [1e-15, 1e-14, 1e-13, 1e-12] {
        let Some(d) = nalgebra::SVD::try_new(m.clone(), true, true, eps, 0) else {
            continue;
        };
        let err = (d.clone().recompose().expect("both factors computed") - m).amax();
        if err <= 1e-12 * scale {
            return d;
        }
        last = Some(d);
    }
    last.unwrap_or_else(|| m.clone().svd(true, true))
}

/// Moore–Penrose pseudoinverse via the SVD.
pub fn pseudoinverse(m: &Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    if m.is_empty() {
        return Matrix::zeros(cols, rows);
    }
    let svd = svd(m);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Matrix::zeros(cols, rows);
    }
    // Round-off in a rank-deficient input leaves spurious singular values a
    // few ulps above zero; treat anything below 1e-10 σ_max as zero.
    let cutoff = 1e-10 * smax;
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut out = Matrix::zeros(cols, rows);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out.ger(1.0 / s, &v_t.row(i).transpose(), &u.column(i), 1.0);
        }
    }
    out
}

/// Projection onto the PSD cone by clamping negative eigenvalues of the
/// symmetrized input to zero. Eigenvectors are left unchanged.
pub fn psd_project(m: &Matrix) -> Matrix {
    if m.is_empty() {
        return m.clone();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * Matrix::from_diagonal(&clamped) * v.transpose()))
}

/// Lower-triangular `G` with `G Gᵀ = Σ`.
///
/// Uses Cholesky when `Σ` is positive definite. For singular `Σ` the
/// eigendecomposition square root `V Λ^{1/2}` is computed and brought to
/// lower-triangular form through a QR factorization of its transpose.
pub fn chol_factor(sigma: &Matrix) -> Result<Matrix> {
    check_square(sigma, "chol_factor")?;
    if !is_finite(sigma) {
        return Err(Error::NonFinite("covariance"));
    }
    if !is_symmetric(sigma) {
        return Err(Error::NotSymmetric("covariance"));
    }
    let n = sigma.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let sym = symmetrize(sigma);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.l());
    }
    let scale = sym.amax().max(f64::MIN_POSITIVE);
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.min() < -1e-9 * scale.max(1.0) {
        return Err(Error::NotPositiveSemidefinite("covariance"));
    }
    let root = &eig.eigenvectors * Matrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let r = root.transpose().qr().r();
    Ok(r.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    /// Scalar Riccati recursion P ← P − P²/(P+1) + 1 run to stationarity.
    fn golden_oracle() -> f64 {
        let mut p = 1.0f64;
        for _ in 0..200 {
            p = p - p * p / (p + 1.0) + 1.0;
        }
        p
    }

    #[test]
    fn dare_scalar_golden_ratio() {
        let x = solve_dare(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0), &SolverOptions::default())
            .unwrap();
        let oracle = golden_oracle();
        assert_relative_eq!(oracle, (1.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(x[(0, 0)], oracle, epsilon = 1e-10);
    }

    #[test]
    fn dare_zero_dynamics_returns_q() {
        let q = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let h = Matrix::from_row_slice(1, 2, &[3.0, -1.0]);
        let x = solve_dare(&Matrix::zeros(2, 2), &h, &q, &scalar(1.0), &SolverOptions::default()).unwrap();
        assert_relative_eq!(x, q, epsilon = 1e-14);
    }

    #[test]
    fn dare_rejects_bad_shapes() {
        let err = solve_dare(
            &Matrix::identity(2, 2),
            &Matrix::zeros(1, 3),
            &Matrix::identity(2, 2),
            &scalar(1.0),
            &SolverOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn dare_undetectable_fails() {
        // Unstable mode invisible to H: the recursion diverges.
        let f = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let h = Matrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let err = solve_dare(&f, &h, &Matrix::identity(2, 2), &scalar(1.0), &SolverOptions::new(1e-10, 500).unwrap())
            .unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn dlyap_examples() {
        let opts = SolverOptions::default();
        let q = Matrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]);
        assert_relative_eq!(solve_dlyap(&Matrix::zeros(2, 2), &q, &opts).unwrap(), q, epsilon = 1e-15);
        // Σ 0.25ᵏ = 4/3
        let x = solve_dlyap(&scalar(0.5), &scalar(1.0), &opts).unwrap();
        assert_relative_eq!(x[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);
        let err = solve_dlyap(&scalar(1.1), &scalar(1.0), &opts).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn pseudoinverse_examples() {
        let i3 = Matrix::identity(3, 3);
        assert_relative_eq!(pseudoinverse(&i3), i3, epsilon = 1e-15);
        let z = Matrix::zeros(2, 3);
        assert_eq!(pseudoinverse(&z), Matrix::zeros(3, 2));
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let p = pseudoinverse(&m);
        assert_relative_eq!(&m * &p * &m, m, epsilon = 1e-12);
        assert_relative_eq!(&p * &m * &p, p.clone(), epsilon = 1e-12);
        assert_relative_eq!(p, m, epsilon = 1e-12);
    }

    #[test]
    fn psd_project_examples() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -2.0]));
        assert_relative_eq!(psd_project(&d), Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0])), epsilon = 1e-12);
        let pd = Matrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert_relative_eq!(psd_project(&pd), pd, epsilon = 1e-9);
    }

    /// Brute force over sign patterns at N = 2: among every candidate built by
    /// zeroing a subset of the eigenvalues (keeping eigenvectors), the one
    /// produced by clamping negatives is PSD and closest in Frobenius norm.
    #[test]
    fn psd_project_matches_sign_pattern_search() {
        let cases = [[1.0, 3.0, -2.0], [-1.0, 0.5, 0.7], [0.3, -4.0, 2.0], [-2.0, 0.0, -1.0]];
        for [a, b, c] in cases {
            let m = Matrix::from_row_slice(2, 2, &[a, b, b, c]);
            let eig = m.clone().symmetric_eigen();
            let mut best: Option<(f64, Matrix)> = None;
            for mask in 0..4u32 {
                let vals: Vec<f64> = (0..2)
                    .map(|i| if mask & (1 << i) != 0 { 0.0 } else { eig.eigenvalues[i] })
                    .collect();
                if vals.iter().any(|&v| v < 0.0) {
                    continue;
                }
                let cand = &eig.eigenvectors * Matrix::from_diagonal(&Vector::from_vec(vals)) * eig.eigenvectors.transpose();
                let dist = (&cand - &m).norm();
                if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                    best = Some((dist, cand));
                }
            }
            assert_relative_eq!(psd_project(&m), best.unwrap().1, epsilon = 1e-12);
        }
    }

    #[test]
    fn chol_examples() {
        let i = Matrix::identity(3, 3);
        assert_relative_eq!(chol_factor(&i).unwrap(), i, epsilon = 1e-15);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![4.0, 9.0]));
        assert_relative_eq!(chol_factor(&d).unwrap(), Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 3.0])), epsilon = 1e-15);
        let asym = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(chol_factor(&asym).unwrap_err(), Error::NotSymmetric("covariance"));
    }

    #[test]
    fn chol_singular_is_lower_triangular() {
        let v = Vector::from_vec(vec![1.0, 2.0, -1.0]);
        let sigma = &v * v.transpose();
        let g = chol_factor(&sigma).unwrap();
        for i in 0..3 {
            for j in (i + 1)..3 {
                assert!(g[(i, j)].abs() < 1e-12);
            }
        }
        assert_relative_eq!(&g * g.transpose(), sigma, epsilon = 1e-9);
    }

    fn matrix_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(-2.0f64..2.0, rows * cols)
            .prop_map(move |v| Matrix::from_row_slice(rows, cols, &v))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dare_fixed_point_is_psd(f in matrix_strategy(3, 3), h in matrix_strategy(2, 3), g in matrix_strategy(3, 3)) {
            let f = &f * (0.9 / spectral_radius(&f).max(0.9));
            let q = &g * g.transpose() + Matrix::identity(3, 3) * 0.1;
            let r = Matrix::identity(2, 2);
            let opts = SolverOptions::default();
            let x = solve_dare(&f, &h, &q, &r, &opts).unwrap();
            let res = (riccati_map(&x, &f, &h, &q, &r).unwrap() - &x).norm() / x.norm().max(1.0);
            prop_assert!(res <= opts.tolerance);
            prop_assert!((&x - x.transpose()).amax() < 1e-12);
            prop_assert!(x.clone().symmetric_eigen().eigenvalues.min() >= -1e-10);
        }

        #[test]
        fn dlyap_matches_truncated_series(f in matrix_strategy(3, 3), g in matrix_strategy(3, 2)) {
            let f = &f * (0.8 / spectral_radius(&f).max(0.8));
            let q = &g * g.transpose();
            let x = solve_dlyap(&f, &q, &SolverOptions::default()).unwrap();
            let mut series = Matrix::zeros(3, 3);
            let mut power = Matrix::identity(3, 3);
            while power.norm() >= 1e-12 {
                series += &power * &q * power.transpose();
                power = &f * power;
            }
            prop_assert!((&x - &series).norm() <= 1e-9 * series.norm().max(1.0));
        }

        #[test]
        fn pseudoinverse_penrose_identities(a in matrix_strategy(4, 2), b in matrix_strategy(2, 3)) {
            // rank ≤ 2 in a 4×3 matrix
            let m = &a * &b;
            let p = pseudoinverse(&m);
            prop_assert!((&m * &p * &m - &m).amax() < 1e-9);
            prop_assert!((&p * &m * &p - &p).amax() < 1e-9);
            let mp = &m * &p;
            let pm = &p * &m;
            prop_assert!((&mp - mp.transpose()).amax() < 1e-9);
            prop_assert!((&pm - pm.transpose()).amax() < 1e-9);
        }

        #[test]
        fn psd_project_idempotent(m in matrix_strategy(4, 4)) {
            let p = psd_project(&m);
            prop_assert!(p.clone().symmetric_eigen().eigenvalues.min() >= -1e-12);
            prop_assert!((psd_project(&p) - &p).amax() < 1e-9);
        }

        #[test]
        fn chol_roundtrip(g in matrix_strategy(3, 2)) {
            let sigma = &g * g.transpose();
            let l = chol_factor(&sigma).unwrap();
            prop_assert!((&l * l.transpose() - &sigma).amax() < 1e-9);
        }
    }
}
