//! Small sample-statistics helpers shared by the estimators.

use crate::error::{Error, Result};
use crate::matnum::{symmetrize, Matrix};

/// Sample mean and its standard error (sample standard deviation over `√n`).
pub fn mean_and_standard_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Pooled second-moment matrix `(1/N) Σ zₜ zₜᵀ` of mean-zero segments, one
/// column per step.
pub fn second_moment(runs: &[Matrix]) -> Result<Matrix> {
    let ny = runs.first().map(|r| r.nrows()).ok_or_else(|| Error::InsufficientSamples("no runs".into()))?;
    let mut acc = Matrix::zeros(ny, ny);
    let mut n = 0usize;
    for r in runs {
        if r.nrows() != ny {
            return Err(Error::dims("second_moment", ny, r.nrows()));
        }
        acc.gemm(1.0, r, &r.transpose(), 1.0);
        n += r.ncols();
    }
    if n == 0 {
        return Err(Error::InsufficientSamples("empty segments".into()));
    }
    Ok(symmetrize(&(acc / n as f64)))
}

/// Normalized cross-lag correlations of a vector sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenessReport {
    /// `G⁻¹ R(ℓ) G⁻ᵀ` for `ℓ = 1..=max_lag`, with `G Gᵀ` the lag-0 moment.
    pub lags: Vec<Matrix>,
    /// Largest absolute entry over all lags.
    pub max_abs: f64,
    /// `4 / √N`.
    pub band: f64,
}

impl WhitenessReport {
    pub fn is_white(&self) -> bool {
        self.max_abs <= self.band
    }
}

/// Autocorrelation test pooled across runs.
pub fn whiteness(runs: &[Matrix], max_lag: usize) -> Result<WhitenessReport> {
    let sigma = second_moment(runs)?;
    let ny = sigma.nrows();
    let chol = sigma.cholesky().ok_or(Error::SingularCovariance("sample covariance"))?;
    let g = chol.l();
    let g_inv = g.clone().try_inverse().ok_or(Error::SingularCovariance("sample covariance"))?;
    let mut lags = Vec::with_capacity(max_lag);
    let mut max_abs = 0.0f64;
    for lag in 1..=max_lag {
        let mut acc = Matrix::zeros(ny, ny);
        let mut n = 0usize;
        for r in runs.iter().filter(|r| r.ncols() > lag) {
            let len = r.ncols() - lag;
            acc.gemm(1.0, &r.columns(lag, len), &r.columns(0, len).transpose(), 1.0);
            n += len;
        }
        if n == 0 {
            return Err(Error::InsufficientSamples(format!("no samples at lag {lag}")));
        }
        let normalized = &g_inv * (acc / n as f64) * g_inv.transpose();
        max_abs = max_abs.max(normalized.amax());
        lags.push(normalized);
    }
    let total: usize = runs.iter().map(|r| r.ncols()).sum();
    Ok(WhitenessReport {
        lags,
        max_abs,
        band: 4.0 / (total as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn mean_and_error_of_constants() {
        let (m, se) = mean_and_standard_error(&[2.0; 10]);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
        let (m, se) = mean_and_standard_error(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }

    #[test]
    fn white_noise_passes_and_ar_fails() {
        let mut g = rng::stream(3, 0);
        let mut white = Matrix::zeros(2, 5000);
        rng::fill_standard_normal(&mut g, white.as_mut_slice());
        let rep = whiteness(std::slice::from_ref(&white), 5).unwrap();
        assert!(rep.is_white(), "{} > {}", rep.max_abs, rep.band);

        let mut ar = white.clone();
        for t in 1..ar.ncols() {
            let prev = ar.column(t - 1).into_owned();
            let mut col = ar.column_mut(t);
            col += prev * 0.5;
        }
        assert!(!whiteness(&[ar], 5).unwrap().is_white());
    }
}
