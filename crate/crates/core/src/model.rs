//! The plant `x_{k+1} = A x_k + B u_k + w_k`, `y_k = C x_k + v_k` and its
//! attack-relevant structure: invariant zeros, right-invertibility and
//! Markov parameters.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matnum::{is_finite, is_symmetric, numerical_rank, Matrix};
use crate::textfmt::{parse_matrix, Document};

/// Plant matrices and noise covariances. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    sigma_w: Matrix,
    sigma_v: Matrix,
}

impl StateSpaceModel {
    /// Checks dimensions, finiteness and that both noise covariances are
    /// symmetric positive definite.
    pub fn new(a: Matrix, b: Matrix, c: Matrix, sigma_w: Matrix, sigma_v: Matrix) -> Result<Self> {
        let nx = a.nrows();
        if nx == 0 || a.ncols() != nx {
            return Err(Error::dims("model: A", "nonempty square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != nx || b.ncols() == 0 {
            return Err(Error::dims("model: B", format!("{nx}xN_u"), format!("{}x{}", b.nrows(), b.ncols())));
        }
        if c.ncols() != nx || c.nrows() == 0 {
            return Err(Error::dims("model: C", format!("N_yx{nx}"), format!("{}x{}", c.nrows(), c.ncols())));
        }
        let ny = c.nrows();
        if sigma_w.shape() != (nx, nx) {
            return Err(Error::dims("model: Σ_w", format!("{nx}x{nx}"), format!("{}x{}", sigma_w.nrows(), sigma_w.ncols())));
        }
        if sigma_v.shape() != (ny, ny) {
            return Err(Error::dims("model: Σ_v", format!("{ny}x{ny}"), format!("{}x{}", sigma_v.nrows(), sigma_v.ncols())));
        }
        for (m, what) in [(&a, "A"), (&b, "B"), (&c, "C"), (&sigma_w, "Σ_w"), (&sigma_v, "Σ_v")] {
            if !is_finite(m) {
                return Err(Error::NonFinite(what));
            }
        }
        for (m, what) in [(&sigma_w, "Σ_w"), (&sigma_v, "Σ_v")] {
            if !is_symmetric(m) || m.clone().cholesky().is_none() {
                return Err(Error::NoisePDViolation(what));
            }
        }
        Ok(StateSpaceModel { a, b, c, sigma_w, sigma_v })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn sigma_w(&self) -> &Matrix {
        &self.sigma_w
    }
    pub fn sigma_v(&self) -> &Matrix {
        &self.sigma_v
    }
    pub fn nx(&self) -> usize {
        self.a.nrows()
    }
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }
    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    /// Reads a model file: a `[model]` section whose keys `A`, `B`, `C`,
    /// `sigma_w`, `sigma_v` name matrix files relative to the model file's
    /// directory. A `[matrix NAME]` block in the same file may stand in for
    /// any of them.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_document(&Document::parse(&text)?, base)
    }

    pub fn from_document(doc: &Document, base: &Path) -> Result<Self> {
        let section = doc.section("model");
        let fetch = |key: &str| -> Result<Matrix> {
            if let Some(m) = doc.matrix(key) {
                return Ok(m.clone());
            }
            let rel = section
                .and_then(|s| s.get(key))
                .ok_or_else(|| Error::parse(0, 0, format!("model: no path or [matrix {key}] block for `{key}`")))?;
            let p = base.join(rel);
            let text = std::fs::read_to_string(&p)
                .map_err(|e| Error::InvalidArgument(format!("cannot read {}: {e}", p.display())))?;
            parse_matrix(&text).map_err(|e| match e {
                Error::Parse { line, column, message } => Error::Parse {
                    line,
                    column,
                    message: format!("{}: {message}", p.display()),
                },
                other => other,
            })
        };
        StateSpaceModel::new(fetch("A")?, fetch("B")?, fetch("C")?, fetch("sigma_w")?, fetch("sigma_v")?)
    }

    /// Self-contained text form with every matrix embedded.
    pub fn to_document(&self) -> Document {
        Document {
            sections: vec![],
            matrices: vec![
                ("A".into(), self.a.clone()),
                ("B".into(), self.b.clone()),
                ("C".into(), self.c.clone()),
                ("sigma_w".into(), self.sigma_w.clone()),
                ("sigma_v".into(), self.sigma_v.clone()),
            ],
        }
    }
}

/// Result of [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructureReport {
    pub invariant_zeros: Vec<Complex64>,
    pub right_invertible: bool,
    /// Smallest `d` at which the Markov-parameter map gains full row rank
    /// `N_y`; `None` when the system is not right-invertible.
    pub relative_delay: Option<usize>,
    pub warnings: Vec<String>,
}

impl fmt::Display for StructureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "right-invertible: {}", if self.right_invertible { "yes" } else { "no" })?;
        match self.relative_delay {
            Some(d) => writeln!(f, "relative delay: {d}")?,
            None => writeln!(f, "relative delay: -")?,
        }
        if self.invariant_zeros.is_empty() {
            writeln!(f, "invariant zeros: none")?;
        } else {
            let zs: Vec<String> = self.invariant_zeros.iter().map(format_complex).collect();
            writeln!(f, "invariant zeros: {}", zs.join(", "))?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

pub fn format_complex(z: &Complex64) -> String {
    if z.im.abs() < 1e-12 {
        format!("{:.6}", z.re)
    } else {
        format!("{:.6}{:+.6}i", z.re, z.im)
    }
}

/// Structural checks on the plant. Invariant zeros produce warnings, not
/// errors: the downstream theory assumes there are none, but the attacks
/// still work when they exist (see the preview inverse in `attacks`).
pub fn validate(m: &StateSpaceModel) -> StructureReport {
    let invariant_zeros = invariant_zeros(m);
    let (right_invertible, relative_delay) = is_right_invertible(m.a(), m.b(), m.c());
    let mut warnings = Vec::new();
    if !invariant_zeros.is_empty() {
        warnings.push(format!(
            "{} invariant zero(s) present; results assume a zero-free plant",
            invariant_zeros.len()
        ));
        if invariant_zeros.iter().any(|z| z.norm() >= 1.0 - 1e-9) {
            warnings.push("invariant zeros on or outside the unit circle: exact inversion needs preview".into());
        }
    }
    if m.nu() < m.ny() {
        warnings.push(format!("N_u = {} < N_y = {}: right inversion impossible", m.nu(), m.ny()));
    }
    StructureReport {
        invariant_zeros,
        right_invertible,
        relative_delay,
        warnings,
    }
}

/// Evaluates the Rosenbrock matrix `[[zI − A, −B], [C, 0]]`.
pub fn rosenbrock(a: &Matrix, b: &Matrix, c: &Matrix, z: Complex64) -> DMatrix<Complex64> {
    let (n, m, p) = (a.nrows(), b.ncols(), c.nrows());
    let mut r = DMatrix::<Complex64>::zeros(n + p, n + m);
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] = Complex64::new(-a[(i, j)], 0.0);
        }
        r[(i, i)] += z;
        for j in 0..m {
            r[(i, n + j)] = Complex64::new(-b[(i, j)], 0.0);
        }
    }
    for i in 0..p {
        for j in 0..n {
            r[(n + i, j)] = Complex64::new(c[(i, j)], 0.0);
        }
    }
    r
}

fn sorted_singular_values(m: DMatrix<Complex64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

fn complex_rank(m: &DMatrix<Complex64>) -> usize {
    let sv = sorted_singular_values(m.clone());
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > crate::matnum::RANK_TOLERANCE * smax).count()
}

/// Roots of `Σ coeffs[i] zⁱ` via companion-matrix eigenvalues.
fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let scale = coeffs.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    if scale == 0.0 {
        return vec![];
    }
    let mut degree = coeffs.len() - 1;
    while degree > 0 && coeffs[degree].abs() <= 1e-9 * scale {
        degree -= 1;
    }
    if degree == 0 {
        return vec![];
    }
    let lead = coeffs[degree];
    let mut comp = Matrix::zeros(degree, degree);
    for i in 1..degree {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..degree {
        comp[(i, degree - 1)] = -coeffs[i] / lead;
    }
    comp.complex_eigenvalues().iter().copied().collect()
}

/// Finite invariant zeros of `(A, B, C)`: the points where the Rosenbrock
/// pencil drops below its normal rank.
///
/// The pencil (or, for non-square or rank-deficient pencils, a random real
/// compression of it to normal-rank size) has a determinant that is a
/// polynomial of degree at most `N_x`. It is recovered exactly by
/// interpolation on `N_x + 1` points of a circle, its roots are candidates,
/// and each candidate is confirmed by a rank test on the original pencil.
pub fn invariant_zeros(m: &StateSpaceModel) -> Vec<Complex64> {
    invariant_zeros_of(m.a(), m.b(), m.c())
}

pub fn invariant_zeros_of(a: &Matrix, b: &Matrix, c: &Matrix) -> Vec<Complex64> {
    let (n, mu, p) = (a.nrows(), b.ncols(), c.nrows());
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2e70);
    let radius = 1.0 + a.norm();

    let normal_rank = (0..3)
        .map(|_| {
            let z = Complex64::from_polar(radius * rng.random_range(0.3..0.9), rng.random_range(0.0..std::f64::consts::TAU));
            complex_rank(&rosenbrock(a, b, c, z))
        })
        .max()
        .unwrap_or(0);
    if normal_rank == 0 {
        return vec![];
    }

    let square = n + p == n + mu && normal_rank == n + p;
    let (left, right) = if square {
        (Matrix::identity(n + p, n + p), Matrix::identity(n + mu, n + mu))
    } else {
        let mut gauss = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        (gauss(normal_rank, n + p), gauss(n + mu, normal_rank))
    };
    let left_c = left.map(|x| Complex64::new(x, 0.0));
    let right_c = right.map(|x| Complex64::new(x, 0.0));

    // det is a polynomial of degree ≤ n; interpolate on n + 1 roots of unity
    // scaled by `radius` and undo the scaling on the coefficients.
    let points = n + 1;
    let values: Vec<Complex64> = (0..points)
        .map(|j| {
            let w = Complex64::from_polar(1.0, std::f64::consts::TAU * j as f64 / points as f64);
            (&left_c * rosenbrock(a, b, c, w * radius) * &right_c).determinant()
        })
        .collect();
    let coeffs: Vec<f64> = (0..points)
        .map(|i| {
            let s: Complex64 = values
                .iter()
                .enumerate()
                .map(|(j, v)| v * Complex64::from_polar(1.0, -std::f64::consts::TAU * (i * j) as f64 / points as f64))
                .sum();
            s.re / points as f64
        })
        .collect();

    let mut zeros: Vec<Complex64> = polynomial_roots(&coeffs)
        .into_iter()
        .map(|w| w * radius)
        .filter(|&z| {
            let sv = sorted_singular_values(rosenbrock(a, b, c, z));
            let smax = sv[0];
            sv.get(normal_rank - 1).is_none_or(|&s| s <= 1e-6 * smax)
        })
        .map(|z| if z.im.abs() < 1e-9 * z.norm().max(1.0) { Complex64::new(z.re, 0.0) } else { z })
        .collect();
    zeros.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap().then(x.im.partial_cmp(&y.im).unwrap()));
    zeros
}

/// `[C B, C F B, …, C F^{k−1} B]`.
pub fn markov_params(f: &Matrix, b: &Matrix, c: &Matrix, k: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(k);
    let mut fb = b.clone();
    for _ in 0..k {
        out.push(c * &fb);
        fb = f * fb;
    }
    out
}

/// Lower block-triangular Toeplitz matrix of the first `k` Markov
/// parameters: block `(i, j)` is `C F^{i−j} B` for `i ≥ j`.
pub fn block_toeplitz(markov: &[Matrix], k: usize) -> Matrix {
    let (p, m) = markov[0].shape();
    let mut t = Matrix::zeros(k * p, k * m);
    for i in 0..k {
        for j in 0..=i {
            t.view_mut((i * p, j * m), (p, m)).copy_from(&markov[i - j]);
        }
    }
    t
}

/// Right-invertibility through rank growth of the Markov-parameter Toeplitz
/// maps: the rank increment `rank T_k − rank T_{k−1}` settles at the normal
/// rank of the transfer matrix, and the system is right-invertible iff that
/// is `N_y`. The relative delay is the first `d` whose increment is `N_y`.
pub fn is_right_invertible(f: &Matrix, b: &Matrix, c: &Matrix) -> (bool, Option<usize>) {
    let (n, m, p) = (f.nrows(), b.ncols(), c.nrows());
    if m < p {
        return (false, None);
    }
    let horizon = 2 * n + 2;
    let markov = markov_params(f, b, c, horizon);
    let mut ranks = vec![0usize];
    for k in 1..=horizon {
        ranks.push(numerical_rank(&block_toeplitz(&markov, k)));
    }
    // Increments are nondecreasing in exact arithmetic, so the first one to
    // reach N_y settles the question. Waiting for the last one would let
    // round-off at long horizons mask a poorly conditioned inverse.
    let delay = (1..=horizon).find(|&k| ranks[k].saturating_sub(ranks[k - 1]) == p);
    (delay.is_some(), delay)
}
