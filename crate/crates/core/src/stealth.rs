//! Stealthiness calculus: the `δ̄` function, the converse bound on induced
//! error, and closed-form and empirical Kullback–Leibler divergence rates of
//! innovation sequences against the nominal i.i.d. `N(0, Σ_z)` law.
//!
//! All logarithms are natural; divergences are in nats.

use crate::error::{Error, Result};
use crate::kalman::KalmanDesign;
use crate::matnum::{spd_inverse, symmetrize, Matrix, Vector};

/// Stealthiness level in nats per step.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct StealthBudget(f64);

impl StealthBudget {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidArgument(format!("stealthiness level must be finite and ≥ 0, got {eps}")));
        }
        Ok(StealthBudget(eps))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// The unique `x ≥ 1` with `x = 2γ + 1 + ln x`.
///
/// `δ̄(γ)` is the largest innovation-covariance inflation (relative to `Σ_z`,
/// per output channel) whose divergence rate stays within `γ` nats. Computed
/// by bisection on `g(x) = x − 2γ − 1 − ln x`, which is increasing on
/// `[1, ∞)`, over the bracket `[1, 2γ + 2 + ln(2γ + 2)]`.
///
/// ```
/// use stealthy::stealth::delta_bar;
/// assert_eq!(delta_bar(0.0), 1.0);
/// let x = delta_bar(1.0);
/// assert!((x - 3.0 - x.ln()).abs() < 1e-12);
/// ```
pub fn delta_bar(gamma: f64) -> f64 {
    assert!(gamma >= 0.0 && gamma.is_finite(), "delta_bar needs a finite γ ≥ 0, got {gamma}");
    if gamma == 0.0 {
        return 1.0;
    }
    let g = |x: f64| x - 2.0 * gamma - 1.0 - x.ln();
    let mut lo = 1.0;
    let mut hi = 2.0 * gamma + 2.0 + (2.0 * gamma + 2.0).ln().max(0.0);
    debug_assert!(g(hi) >= 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if g(lo).abs() <= g(hi).abs() {
        lo
    } else {
        hi
    }
}

/// Upper bound on the weighted MSE reachable at a given stealthiness level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverseResult {
    pub bound: f64,
    /// `tr(P W)`.
    pub baseline: f64,
    /// `N_y (δ̄(ε / N_y) − 1)`.
    pub excess: f64,
}

/// `tr(P W) + N_y (δ̄(ε / N_y) − 1)`.
pub fn converse_bound(eps: f64, d: &KalmanDesign, ny: usize) -> ConverseResult {
    let budget = StealthBudget::new(eps).expect("converse_bound needs ε ≥ 0");
    let excess = ny as f64 * (delta_bar(budget.value() / ny as f64) - 1.0);
    ConverseResult {
        bound: d.baseline_mse + excess,
        baseline: d.baseline_mse,
        excess,
    }
}

/// Per-step divergence of i.i.d. `N(0, α Σ_z)` from i.i.d. `N(0, Σ_z)`:
/// `(N_y / 2)(α − 1 − ln α)`.
pub fn kld_rate_iid_scaled(alpha: f64, ny: usize) -> f64 {
    assert!(alpha > 0.0, "covariance scale must be positive, got {alpha}");
    0.5 * ny as f64 * (alpha - 1.0 - alpha.ln())
}

/// A mean-zero Gaussian sequence `z̃₁ᵏ` described by its marginal
/// covariances `E[z̃ₙ z̃ₙᵀ]` and the covariances of the one-step prediction
/// residuals `z̃ₙ − E[z̃ₙ | z̃₁ⁿ⁻¹]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSequence {
    pub marginal: Vec<Matrix>,
    pub residual: Vec<Matrix>,
}

impl GaussianSequence {
    /// i.i.d. with covariance `sigma` for `k` steps.
    pub fn iid(sigma: &Matrix, k: usize) -> Self {
        GaussianSequence {
            marginal: vec![sigma.clone(); k],
            residual: vec![sigma.clone(); k],
        }
    }

    /// Reads marginals and prediction residuals off the joint covariance of
    /// the stacked vector `(z̃₁, …, z̃ₖ)`: residual covariances are the Schur
    /// complements of the leading blocks.
    pub fn from_joint_covariance(joint: &Matrix, ny: usize) -> Result<Self> {
        let n = joint.nrows();
        if joint.ncols() != n || ny == 0 || !n.is_multiple_of(ny) {
            return Err(Error::dims("joint covariance", format!("square, multiple of {ny}"), format!("{}x{}", joint.nrows(), joint.ncols())));
        }
        let k = n / ny;
        let mut marginal = Vec::with_capacity(k);
        let mut residual = Vec::with_capacity(k);
        for step in 0..k {
            let at = step * ny;
            let block = joint.view((at, at), (ny, ny)).into_owned();
            let res = if step == 0 {
                block.clone()
            } else {
                let past = joint.view((0, 0), (at, at)).into_owned();
                let cross = joint.view((0, at), (at, ny)).into_owned();
                let chol = past.cholesky().ok_or(Error::SingularCovariance("joint covariance"))?;
                &block - cross.transpose() * chol.solve(&cross)
            };
            marginal.push(block);
            residual.push(symmetrize(&res));
        }
        Ok(GaussianSequence { marginal, residual })
    }

    pub fn len(&self) -> usize {
        self.marginal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marginal.is_empty()
    }
}

/// Exact `D(z̃₁ᵏ ‖ z₁ᵏ)` of a Gaussian sequence against i.i.d. `N(0, Σ_z)`.
///
/// The entropy of `z̃₁ᵏ` is expanded with the chain rule, one prediction
/// residual per step, giving
/// `Σₙ ½ [tr(Σ̃ₙ Σ_z⁻¹) − N_y − ln det(Rₙ Σ_z⁻¹)]`.
pub fn gaussian_sequence_kld(seq: &GaussianSequence, sigma_z: &Matrix) -> Result<f64> {
    if seq.marginal.len() != seq.residual.len() {
        return Err(Error::dims("gaussian_sequence_kld", seq.marginal.len(), seq.residual.len()));
    }
    let ny = sigma_z.nrows();
    let precision = spd_inverse(sigma_z, "Σ_z")?;
    let log_det_z = log_det_spd(sigma_z, "Σ_z")?;
    let mut total = 0.0;
    for (marg, res) in seq.marginal.iter().zip(&seq.residual) {
        if marg.shape() != (ny, ny) || res.shape() != (ny, ny) {
            return Err(Error::dims("gaussian_sequence_kld", format!("{ny}x{ny}"), format!("{}x{}", marg.nrows(), marg.ncols())));
        }
        let log_det_r = log_det_spd(res, "prediction residual covariance")?;
        total += 0.5 * ((marg * &precision).trace() - ny as f64 - log_det_r + log_det_z);
    }
    Ok(total)
}

pub(crate) fn log_det_spd(m: &Matrix, what: &'static str) -> Result<f64> {
    let chol = symmetrize(m).cholesky().ok_or(Error::SingularCovariance(what))?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Gaussian plug-in estimate of the divergence rate, split into the
/// memory term `I(z̃₁ⁿ⁻¹; z̃ₙ)` and the marginal term `D(z̃ₙ ‖ zₙ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KldDecomposition {
    pub mi_rate: f64,
    pub marginal_rate: f64,
    /// Samples entering the marginal covariance.
    pub samples: usize,
}

impl KldDecomposition {
    pub fn total(&self) -> f64 {
        self.mi_rate + self.marginal_rate
    }
}

/// Estimates the divergence-rate decomposition from stationary segments.
///
/// Each entry of `runs` is an `N_y × T` matrix of innovations, one column per
/// step. The marginal term uses the pooled second-moment matrix `Σ̂`:
/// `½(tr(Σ̂ Σ_z⁻¹) − N_y − ln det(Σ̂ Σ_z⁻¹))`. The memory term fits a linear
/// predictor on `max_lag` past values by pooled least squares and reports
/// `½ ln det(Σ̂ / Σ̂_residual)`.
pub fn empirical_kld_decomposition(runs: &[Matrix], sigma_z: &Matrix, max_lag: usize) -> Result<KldDecomposition> {
    let ny = sigma_z.nrows();
    if runs.is_empty() {
        return Err(Error::InsufficientSamples("no runs".into()));
    }
    if max_lag == 0 {
        return Err(Error::InvalidArgument("max_lag must be at least 1".into()));
    }
    let len = runs.iter().map(|r| r.ncols()).min().unwrap_or(0);
    if len < 10 * max_lag {
        return Err(Error::InsufficientSamples(format!(
            "segments of {len} steps; need at least {} for {max_lag} lags",
            10 * max_lag
        )));
    }
    for r in runs {
        if r.nrows() != ny {
            return Err(Error::dims("empirical_kld_decomposition", ny, r.nrows()));
        }
    }
    let regressors = max_lag * ny;
    let usable: usize = runs.iter().map(|r| r.ncols() - max_lag).sum();
    if usable < 100 * (regressors + 1) {
        return Err(Error::InsufficientSamples(format!(
            "{usable} regression samples for {regressors} regressors"
        )));
    }

    let mut second = Matrix::zeros(ny, ny);
    let mut total = 0usize;
    let mut gram = Matrix::zeros(regressors, regressors);
    let mut cross = Matrix::zeros(ny, regressors);
    let mut target = Matrix::zeros(ny, ny);
    let mut phi = Vector::zeros(regressors);
    for r in runs {
        for t in 0..r.ncols() {
            let z = r.column(t);
            second.ger(1.0, &z, &z, 1.0);
            total += 1;
            if t < max_lag {
                continue;
            }
            for lag in 1..=max_lag {
                phi.rows_mut((lag - 1) * ny, ny).copy_from(&r.column(t - lag));
            }
            gram.ger(1.0, &phi, &phi, 1.0);
            cross.ger(1.0, &z, &phi, 1.0);
            target.ger(1.0, &z, &z, 1.0);
        }
    }
    let sigma_hat = symmetrize(&(second / total as f64));
    let target = symmetrize(&(target / usable as f64));
    let gram = symmetrize(&(gram / usable as f64));
    let cross = cross / usable as f64;
    let chol = gram.cholesky().ok_or(Error::SingularCovariance("lagged regressor Gram matrix"))?;
    let residual = symmetrize(&(&target - &cross * chol.solve(&cross.transpose())));

    let mi_rate = 0.5 * (log_det_spd(&target, "sample covariance")? - log_det_spd(&residual, "residual covariance")?);
    let precision = spd_inverse(sigma_z, "Σ_z")?;
    let marginal_rate = 0.5
        * ((&sigma_hat * &precision).trace() - ny as f64 - log_det_spd(&sigma_hat, "sample covariance")?
            + log_det_spd(sigma_z, "Σ_z")?);
    Ok(KldDecomposition {
        mi_rate,
        marginal_rate,
        samples: total,
    })
}

/// Standard error of the total rate estimate from `batches` disjoint groups
/// of runs.
pub fn empirical_kld_standard_error(runs: &[Matrix], sigma_z: &Matrix, max_lag: usize, batches: usize) -> Result<f64> {
    if batches < 2 || runs.len() < batches {
        return Err(Error::InsufficientSamples(format!("{} runs for {batches} batches", runs.len())));
    }
    let per = runs.len() / batches;
    let estimates = (0..batches)
        .map(|b| empirical_kld_decomposition(&runs[b * per..(b + 1) * per], sigma_z, max_lag).map(|d| d.total()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(crate::stats::mean_and_standard_error(&estimates).1)
}
