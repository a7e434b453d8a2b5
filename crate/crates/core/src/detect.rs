//! Detectors over innovation windows, empirical ROC at growing horizons, and
//! the false-alarm decay exponent.
//!
//! At each horizon `k` the threshold `λ_k` is set from the attacked trials so
//! that at most a fraction `δ` of them go undetected, and the false-alarm
//! probability `p_F` is measured at that threshold. An `ε`-stealthy attack
//! keeps `−(1/k) ln p_F` from exceeding `ε` in the limit.
//!
//! Two `p_F` estimators are available. [`PfEstimator::Direct`] counts alarms
//! on attack-free trials, which stops resolving `p_F` once it drops below
//! about `10 / trials`. [`PfEstimator::ChangeOfMeasure`] reuses the attacked
//! trials with weight `e^{−L}`, where `L` is the log-likelihood ratio: since
//! `dP₀/dP₁ = e^{−L}`, `p_F = E₁[1{L > λ} e^{−L}]` exactly. That identity
//! only holds when the detector statistic is the true log-likelihood ratio of
//! the simulated processes, which is the case for `𝒜₁`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::attacks::AttackPlan;
use crate::error::{Error, Result};
use crate::kalman::KalmanDesign;
use crate::matnum::{pseudoinverse, spd_inverse, Matrix, Vector};
use crate::model::StateSpaceModel;
use crate::sim::{ExperimentConfig, Simulator};
use crate::stats::mean_and_standard_error;
use crate::stealth::log_det_spd;

/// Fewest false-alarm events a horizon needs to enter the exponent fit.
pub const MIN_EVENTS: usize = 10;

/// Fewest trials for which an exponent is fitted at all.
pub const MIN_TRIALS_FOR_EXPONENT: usize = 1000;

pub const DEFAULT_DELTA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    /// `Σ z̃ᵀ Σ_z⁻¹ z̃` over the window.
    ChiSquare,
    /// Gaussian log-likelihood ratio of i.i.d. `N(0, Σ̃)` against
    /// i.i.d. `N(0, Σ_z)`.
    LogLikelihoodRatio,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::ChiSquare => "chi2",
            DetectorKind::LogLikelihoodRatio => "llr",
        })
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "chi2" | "chi-square" => Ok(DetectorKind::ChiSquare),
            "llr" => Ok(DetectorKind::LogLikelihoodRatio),
            other => Err(Error::InvalidArgument(format!("unknown detector `{other}` (expected chi2 or llr)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    Fixed(f64),
    /// Chosen per horizon so the empirical missed-detection rate is `≤ δ`.
    Calibrated { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfEstimator {
    Direct,
    ChangeOfMeasure,
}

impl fmt::Display for PfEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PfEstimator::Direct => "direct",
            PfEstimator::ChangeOfMeasure => "change-of-measure",
        })
    }
}

impl FromStr for PfEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(PfEstimator::Direct),
            "change-of-measure" | "weighted" => Ok(PfEstimator::ChangeOfMeasure),
            other => Err(Error::InvalidArgument(format!(
                "unknown estimator `{other}` (expected direct or change-of-measure)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    pub kind: DetectorKind,
    /// Most recent samples the statistic looks at; `None` uses all samples
    /// up to the horizon.
    pub window: Option<usize>,
    pub threshold: Threshold,
}

impl DetectorSpec {
    pub fn new(kind: DetectorKind, window: Option<usize>, threshold: Threshold) -> Result<Self> {
        if window == Some(0) {
            return Err(Error::InvalidArgument("detector window must be at least 1".into()));
        }
        match threshold {
            Threshold::Calibrated { delta } if !(delta > 0.0 && delta < 1.0) => {
                return Err(Error::InvalidArgument(format!("δ must lie in (0, 1), got {delta}")));
            }
            Threshold::Fixed(l) if l.is_nan() => {
                return Err(Error::InvalidArgument("threshold is NaN".into()));
            }
            _ => {}
        }
        Ok(DetectorSpec { kind, window, threshold })
    }

    /// Whole-horizon detector calibrated to `δ`.
    pub fn calibrated(kind: DetectorKind, delta: f64) -> Result<Self> {
        Self::new(kind, None, Threshold::Calibrated { delta })
    }
}

/// Per-step quadratic forms `zᵀ M z` for each column.
fn quadratic_forms(window: &Matrix, m: &Matrix) -> Vec<f64> {
    let mz = m * window;
    window
        .column_iter()
        .zip(mz.column_iter())
        .map(|(z, q)| z.dot(&q))
        .collect()
}

/// `Σ z̃ᵀ Σ_z⁻¹ z̃` over the columns of `window`.
pub fn chi2_statistic(window: &Matrix, sigma_z: &Matrix) -> Result<f64> {
    if window.nrows() != sigma_z.nrows() {
        return Err(Error::dims("chi2 window", sigma_z.nrows(), window.nrows()));
    }
    let precision = spd_inverse(sigma_z, "Σ_z")?;
    Ok(quadratic_forms(window, &precision).iter().sum())
}

/// Per-step increments of the Gaussian log-likelihood ratio.
#[derive(Debug, Clone)]
struct LlrTerms {
    constant: f64,
    weight: Matrix,
}

impl LlrTerms {
    fn new(sigma_z: &Matrix, sigma_tilde: &Matrix) -> Result<Self> {
        let pz = spd_inverse(sigma_z, "Σ_z")?;
        let pt = spd_inverse(sigma_tilde, "attacked innovation covariance")?;
        let constant = -0.5 * (log_det_spd(sigma_tilde, "attacked innovation covariance")? - log_det_spd(sigma_z, "Σ_z")?);
        Ok(LlrTerms {
            constant,
            weight: (pz - pt) * 0.5,
        })
    }

    fn per_step(&self, window: &Matrix) -> Vec<f64> {
        quadratic_forms(window, &self.weight)
            .into_iter()
            .map(|q| self.constant + q)
            .collect()
    }
}

/// `ln f₁(z̃₁ⁿ) − ln f₀(z̃₁ⁿ)` with `f₁` i.i.d. `N(0, Σ̃)` and `f₀` i.i.d.
/// `N(0, Σ_z)`:
/// `Σ [−½ ln det(Σ̃ Σ_z⁻¹) + ½ z̃ᵀ(Σ_z⁻¹ − Σ̃⁻¹)z̃]`.
///
/// ```
/// use stealthy::detect::llr_statistic;
/// use stealthy::matnum::Matrix;
/// let z = Matrix::from_element(1, 1, 1.5);
/// let l = llr_statistic(&z, &Matrix::identity(1, 1), &Matrix::from_element(1, 1, 2.0)).unwrap();
/// assert!((l - (-0.5 * 2f64.ln() + 1.5f64.powi(2) / 4.0)).abs() < 1e-12);
/// ```
pub fn llr_statistic(window: &Matrix, sigma_z: &Matrix, sigma_tilde: &Matrix) -> Result<f64> {
    if window.nrows() != sigma_z.nrows() || sigma_tilde.shape() != sigma_z.shape() {
        return Err(Error::dims("llr window", sigma_z.nrows(), window.nrows()));
    }
    Ok(LlrTerms::new(sigma_z, sigma_tilde)?.per_step(window).iter().sum())
}

/// Least-squares fit of `−ln p_F` against the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentFit {
    /// Coefficient of `k`, the decay exponent.
    pub exponent: f64,
    /// Coefficients of `1` and `√k`.
    pub intercept: f64,
    pub sqrt_coefficient: f64,
    /// Horizons that entered the fit.
    pub horizons_used: Vec<usize>,
}

/// Fits `−ln p_F = c₀ + c₁ √k + ε k`.
///
/// The `√k` term is the second-order (Gaussian) correction to the
/// Chernoff–Stein asymptotics at a fixed missed-detection level; without it
/// the slope at moderate horizons is biased well below the limit.
pub fn fit_exponent(horizons: &[usize], p_f: &[f64], events: &[usize]) -> Result<ExponentFit> {
    let usable: Vec<(usize, f64)> = horizons
        .iter()
        .zip(p_f)
        .zip(events)
        .filter(|((_, &p), &n)| p > 0.0 && n >= MIN_EVENTS)
        .map(|((&k, &p), _)| (k, -p.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::ExponentUnfittable(format!(
            "{} horizon(s) with at least {MIN_EVENTS} false-alarm events; need 3",
            usable.len()
        )));
    }
    let x = Matrix::from_fn(usable.len(), 3, |i, j| {
        let k = usable[i].0 as f64;
        [1.0, k.sqrt(), k][j]
    });
    let y = Vector::from_iterator(usable.len(), usable.iter().map(|&(_, v)| v));
    let coef = pseudoinverse(&x) * y;
    Ok(ExponentFit {
        exponent: coef[2],
        intercept: coef[0],
        sqrt_coefficient: coef[1],
        horizons_used: usable.iter().map(|&(k, _)| k).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorReport {
    pub horizons: Vec<usize>,
    pub p_f: Vec<f64>,
    pub p_f_standard_error: Vec<f64>,
    pub p_d: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Trials above threshold that fed each `p_F` estimate.
    pub events: Vec<usize>,
    pub trials: usize,
    pub estimator: PfEstimator,
    pub fit: Option<ExponentFit>,
    /// Why no exponent was fitted, when `fit` is `None`.
    pub fit_failure: Option<String>,
}

impl DetectorReport {
    /// The fitted exponent, or `ExponentUnfittable` with the reason.
    pub fn exponent(&self) -> Result<f64> {
        match &self.fit {
            Some(f) => Ok(f.exponent),
            None => Err(Error::ExponentUnfittable(self.fit_failure.clone().unwrap_or_default())),
        }
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "horizon,p_F,p_D,threshold")?;
        for i in 0..self.horizons.len() {
            writeln!(out, "{},{:?},{:?},{:?}", self.horizons[i], self.p_f[i], self.p_d[i], self.thresholds[i])?;
        }
        Ok(())
    }
}

/// Largest threshold with at most `⌊δ N⌋` samples at or below it.
fn calibrate(sorted: &[f64], delta: f64) -> f64 {
    let allowed = (delta * sorted.len() as f64).floor() as usize;
    let mut j = allowed.min(sorted.len());
    // With ties, back off to the last value strictly below the tied block.
    while j > 0 && j < sorted.len() && sorted[j - 1] == sorted[j] {
        j -= 1;
    }
    if j == 0 {
        f64::NEG_INFINITY
    } else {
        sorted[j - 1]
    }
}

/// Statistic of each trial at each horizon.
fn statistics(
    sim: &Simulator<'_>,
    plan: &AttackPlan,
    offset: u64,
    trials: usize,
    horizons: &[usize],
    per_step: &(dyn Fn(&Matrix) -> Vec<f64> + Sync),
    window: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    let burn_in = sim.config().burn_in;
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let record = sim.run(plan, offset + t)?;
            let terms = per_step(&record.segment(burn_in));
            let mut prefix = Vec::with_capacity(terms.len() + 1);
            prefix.push(0.0);
            for v in &terms {
                prefix.push(prefix.last().unwrap() + v);
            }
            Ok(horizons
                .iter()
                .map(|&k| {
                    let start = window.map_or(0, |w| k.saturating_sub(w));
                    prefix[k] - prefix[start]
                })
                .collect())
        })
        .collect()
}

/// Empirical ROC of a detector separating `h0` (no attack) from `h1`.
///
/// Trials of `h1` use runs `0..trials`; trials of `h0` use runs
/// `trials..2·trials` and are skipped under the change-of-measure estimator.
/// Horizons count samples after the burn-in of `cfg`, whose horizon is
/// overridden to `burn_in + max(horizons)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_roc(
    m: &StateSpaceModel,
    d: &KalmanDesign,
    h0: &AttackPlan,
    h1: &AttackPlan,
    spec: &DetectorSpec,
    horizons: &[usize],
    trials: usize,
    cfg: &ExperimentConfig,
    estimator: PfEstimator,
) -> Result<DetectorReport> {
    if horizons.is_empty() || horizons[0] == 0 || horizons.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument("horizons must be positive and strictly increasing".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let kmax = *horizons.last().unwrap();
    let mut run_cfg = cfg.clone();
    run_cfg.horizon = cfg.burn_in + kmax;
    run_cfg.runs = trials;
    let sim = Simulator::new(m, d, run_cfg)?;

    let sigma_z = &d.innovation_covariance;
    let llr = match spec.kind {
        DetectorKind::LogLikelihoodRatio => {
            let sigma_tilde = h1.iid_innovation_covariance(d).ok_or_else(|| {
                Error::InvalidArgument("the likelihood-ratio detector needs an attack with i.i.d. Gaussian innovations".into())
            })?;
            Some(LlrTerms::new(sigma_z, &sigma_tilde)?)
        }
        DetectorKind::ChiSquare => None,
    };
    if estimator == PfEstimator::ChangeOfMeasure && llr.is_none() {
        return Err(Error::InvalidArgument(
            "the change-of-measure estimator needs the likelihood-ratio detector".into(),
        ));
    }
    let precision = d.innovation_precision.clone();
    let per_step = move |w: &Matrix| match &llr {
        Some(t) => t.per_step(w),
        None => quadratic_forms(w, &precision),
    };

    let h1_stats = statistics(&sim, h1, 0, trials, horizons, &per_step, spec.window)?;
    let h0_stats = match estimator {
        PfEstimator::Direct => Some(statistics(&sim, h0, trials as u64, trials, horizons, &per_step, spec.window)?),
        PfEstimator::ChangeOfMeasure => None,
    };

    let n = trials as f64;
    let mut report = DetectorReport {
        horizons: horizons.to_vec(),
        p_f: Vec::new(),
        p_f_standard_error: Vec::new(),
        p_d: Vec::new(),
        thresholds: Vec::new(),
        events: Vec::new(),
        trials,
        estimator,
        fit: None,
        fit_failure: None,
    };
    for (i, _) in horizons.iter().enumerate() {
        let mut under_h1: Vec<f64> = h1_stats.iter().map(|s| s[i]).collect();
        under_h1.sort_by(|a, b| a.total_cmp(b));
        let lambda = match spec.threshold {
            Threshold::Fixed(l) => l,
            Threshold::Calibrated { delta } => calibrate(&under_h1, delta),
        };
        let detected = under_h1.iter().filter(|&&s| s > lambda).count();
        let (p_f, se, events) = match &h0_stats {
            Some(h0s) => {
                let alarms = h0s.iter().filter(|s| s[i] > lambda).count();
                let p = alarms as f64 / n;
                (p, (p * (1.0 - p) / n).sqrt(), alarms)
            }
            None => {
                let weights: Vec<f64> = h1_stats
                    .iter()
                    .map(|s| if s[i] > lambda { (-s[i]).exp() } else { 0.0 })
                    .collect();
                let (mean, se) = mean_and_standard_error(&weights);
                (mean, se, detected)
            }
        };
        report.p_f.push(p_f);
        report.p_f_standard_error.push(se);
        report.p_d.push(detected as f64 / n);
        report.thresholds.push(lambda);
        report.events.push(events);
    }
    if trials < MIN_TRIALS_FOR_EXPONENT {
        report.fit_failure = Some(format!("{trials} trials; the exponent needs at least {MIN_TRIALS_FOR_EXPONENT}"));
    } else {
        match fit_exponent(horizons, &report.p_f, &report.events) {
            Ok(f) => report.fit = Some(f),
            Err(Error::ExponentUnfittable(why)) => report.fit_failure = Some(why),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::AttackKind;
    use crate::fixtures;
    use crate::kalman::design;
    use crate::stealth::delta_bar;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn llr_examples() {
        let sz = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let w = Matrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.1, 0.0, 3.0]);
        assert!(llr_statistic(&w, &sz, &sz).unwrap().abs() < 1e-12);
        let z = Matrix::from_element(1, 1, 0.7);
        let l = llr_statistic(&z, &Matrix::identity(1, 1), &Matrix::from_element(1, 1, 2.0)).unwrap();
        assert!((l - (-0.5 * 2f64.ln() + 0.49 / 4.0)).abs() < 1e-12);
        assert!(matches!(
            llr_statistic(&z, &Matrix::identity(1, 1), &Matrix::zeros(1, 1)).unwrap_err(),
            Error::SingularCovariance(_)
        ));
    }

    #[test]
    fn llr_mean_under_h1_is_divergence() {
        let a = delta_bar(0.5);
        let sz = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let st = &sz * a;
        let g = st.clone().cholesky().unwrap().l();
        let mut r = crate::rng::stream(1, 0);
        let window = 20;
        let trials = 4000;
        let mut total = 0.0;
        for _ in 0..trials {
            let n = Matrix::from_fn(2, window, |_, _| r.sample::<f64, _>(StandardNormal));
            total += llr_statistic(&(&g * n), &sz, &st).unwrap();
        }
        let mean = total / trials as f64;
        // Per-step divergence is ε = 1.
        assert!((mean - window as f64).abs() < 0.3, "{mean}");
    }

    #[test]
    fn chi2_examples() {
        let sz = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_eq!(chi2_statistic(&Matrix::zeros(2, 7), &sz).unwrap(), 0.0);
        let g = sz.clone().cholesky().unwrap().l();
        let mut r = crate::rng::stream(2, 0);
        let n = Matrix::from_fn(2, 20_000, |_, _| r.sample::<f64, _>(StandardNormal));
        let per_step = chi2_statistic(&(&g * &n), &sz).unwrap() / 20_000.0;
        assert!((per_step - 2.0).abs() < 0.05);
        let inflated = chi2_statistic(&(&g * n * 2f64.sqrt()), &sz).unwrap() / 20_000.0;
        assert!((inflated - 4.0).abs() < 0.1);
    }

    #[test]
    fn calibration_respects_delta_and_ties() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        let l = calibrate(&s, 0.1);
        assert_eq!(l, 10.0);
        assert_eq!(s.iter().filter(|&&v| v <= l).count(), 10);
        assert_eq!(calibrate(&[0.0; 50], 0.1), f64::NEG_INFINITY);
        assert_eq!(calibrate(&s, 0.005), f64::NEG_INFINITY);
    }

    #[test]
    fn spec_validation() {
        assert!(DetectorSpec::new(DetectorKind::ChiSquare, Some(0), Threshold::Fixed(1.0)).is_err());
        assert!(DetectorSpec::calibrated(DetectorKind::ChiSquare, 1.0).is_err());
        assert!(DetectorSpec::calibrated(DetectorKind::ChiSquare, 0.1).is_ok());
    }

    #[test]
    fn fit_recovers_planted_exponent() {
        let hs: Vec<usize> = (1..=12).map(|i| 5 * i).collect();
        let pf: Vec<f64> = hs.iter().map(|&k| (-(0.3 + 0.8 * (k as f64).sqrt() + 0.9 * k as f64)).exp()).collect();
        let fit = fit_exponent(&hs, &pf, &vec![100; hs.len()]).unwrap();
        assert!((fit.exponent - 0.9).abs() < 1e-9);
        let err = fit_exponent(&hs, &vec![0.0; hs.len()], &vec![0; hs.len()]).unwrap_err();
        assert!(matches!(err, Error::ExponentUnfittable(_)));
    }

    #[test]
    fn identical_hypotheses_have_no_exponent() {
        let m = fixtures::example1();
        let d = design(&m).unwrap();
        let none = AttackPlan::None { nx: 4 };
        let cfg = ExperimentConfig::new(200, 1, 5).unwrap().with_burn_in(10).unwrap();
        let spec = DetectorSpec::calibrated(DetectorKind::ChiSquare, 0.1).unwrap();
        let horizons: Vec<usize> = (1..=6).map(|i| 5 * i).collect();
        let r = estimate_roc(&m, &d, &none, &none, &spec, &horizons, 2000, &cfg, PfEstimator::Direct).unwrap();
        for i in 0..horizons.len() {
            assert!(1.0 - r.p_d[i] <= 0.1 + 1e-12);
            assert!((r.p_f[i] - r.p_d[i]).abs() < 0.04, "{} vs {}", r.p_f[i], r.p_d[i]);
        }
        assert!(r.exponent().unwrap().abs() < 0.01);
    }

    #[test]
    fn change_of_measure_agrees_with_direct_where_both_resolve() {
        let m = fixtures::example1();
        let d = design(&m).unwrap();
        let h1 = AttackPlan::design(AttackKind::A1, &m, &d, 0.25, 8).unwrap();
        let none = AttackPlan::None { nx: 4 };
        let cfg = ExperimentConfig::new(200, 1, 6).unwrap();
        let spec = DetectorSpec::calibrated(DetectorKind::LogLikelihoodRatio, 0.1).unwrap();
        let hs = [2, 4, 8];
        let direct = estimate_roc(&m, &d, &none, &h1, &spec, &hs, 4000, &cfg, PfEstimator::Direct).unwrap();
        let weighted = estimate_roc(&m, &d, &none, &h1, &spec, &hs, 4000, &cfg, PfEstimator::ChangeOfMeasure).unwrap();
        assert_eq!(direct.thresholds, weighted.thresholds);
        for i in 0..hs.len() {
            let tol = 3.0 * (direct.p_f_standard_error[i] + weighted.p_f_standard_error[i]);
            assert!((direct.p_f[i] - weighted.p_f[i]).abs() < tol, "k={}: {} vs {}", hs[i], direct.p_f[i], weighted.p_f[i]);
        }
    }

    #[test]
    fn csv_layout() {
        let r = DetectorReport {
            horizons: vec![5],
            p_f: vec![0.25],
            p_f_standard_error: vec![0.01],
            p_d: vec![0.9],
            thresholds: vec![1.5],
            events: vec![10],
            trials: 10,
            estimator: PfEstimator::Direct,
            fit: None,
            fit_failure: Some("few trials".into()),
        };
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "horizon,p_F,p_D,threshold\n5,0.25,0.9,1.5\n");
        assert!(matches!(r.exponent(), Err(Error::ExponentUnfittable(_))));
    }
}
