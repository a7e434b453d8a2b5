//! Seeded Monte Carlo closed loop.
//!
//! The plant, the steady-state Kalman filter and an input attack are run
//! together. The recursion is carried in error coordinates,
//!
//! ```text
//! z̃_k     = C e_k + v_k
//! e_{k+1} = A e_k + B (ũ_k − u_k) + w_k − K z̃_k
//! ```
//!
//! which is exactly what the filter sees, and which stays bounded for
//! open-loop unstable plants where `x_k` does not. The state, measurement and
//! estimate are reconstructed only when a feedback law or full records ask
//! for them.
//!
//! Alongside `e`, every run carries the error `eᵃ` of a filter that sees the
//! same noise but no attack. The gap `e − eᵃ` must equal the attacker's own
//! bookkeeping; the worst mismatch is stored in each record.

use std::io::Write;

use rayon::prelude::*;

use crate::attacks::{AttackKind, AttackPlan};
use crate::error::{Error, Result};
use crate::kalman::KalmanDesign;
use crate::matnum::{chol_factor, Matrix, Vector};
use crate::model::StateSpaceModel;
use crate::rng;
use crate::stats::mean_and_standard_error;
use crate::stealth::{converse_bound, empirical_kld_decomposition};

pub const DEFAULT_BURN_IN: usize = 100;

/// Nominal controller.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlLaw {
    /// `u_k = 0`.
    Zero,
    /// `u_k = G x̂_k` for the given `N_u × N_x` gain.
    Feedback(Matrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recording {
    /// Innovations only.
    Innovations,
    /// Innovations plus states, attacked inputs, measurements and estimates.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub horizon: usize,
    pub runs: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub control: ControlLaw,
    pub recording: Recording,
}

impl ExperimentConfig {
    pub fn new(horizon: usize, runs: usize, seed: u64) -> Result<Self> {
        let cfg = ExperimentConfig {
            horizon,
            runs,
            burn_in: DEFAULT_BURN_IN.min(horizon.saturating_sub(1)),
            seed,
            control: ControlLaw::Zero,
            recording: Recording::Innovations,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Result<Self> {
        self.burn_in = burn_in;
        self.check()?;
        Ok(self)
    }

    pub fn with_control(mut self, control: ControlLaw) -> Self {
        self.control = control;
        self
    }

    pub fn with_recording(mut self, recording: Recording) -> Self {
        self.recording = recording;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs must be at least 1".into()));
        }
        if self.horizon <= self.burn_in {
            return Err(Error::InvalidArgument(format!(
                "horizon {} must exceed burn-in {}",
                self.horizon, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Per-step signals, one column per step.
#[derive(Debug, Clone, PartialEq)]
pub struct FullRecord {
    pub states: Matrix,
    pub inputs: Matrix,
    pub measurements: Matrix,
    pub estimates: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub run: u64,
    /// Controller innovations `z̃_k`, `N_y × horizon`.
    pub innovations: Matrix,
    /// Largest `|(e − eᵃ) − attacker offset|_∞` over the run, relative to
    /// `max(1, |e − eᵃ|_∞)`.
    pub offset_mismatch: f64,
    pub full: Option<FullRecord>,
}

impl TrajectoryRecord {
    /// Innovations from `burn_in` on.
    pub fn segment(&self, burn_in: usize) -> Matrix {
        let n = self.innovations.ncols();
        self.innovations.columns(burn_in.min(n), n - burn_in.min(n)).into_owned()
    }
}

/// Everything needed to run trials of one scenario.
pub struct Simulator<'a> {
    model: &'a StateSpaceModel,
    design: &'a KalmanDesign,
    cfg: ExperimentConfig,
    w_factor: Matrix,
    v_factor: Matrix,
    p_factor: Matrix,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a StateSpaceModel, design: &'a KalmanDesign, cfg: ExperimentConfig) -> Result<Self> {
        cfg.check()?;
        if let ControlLaw::Feedback(g) = &cfg.control {
            if g.shape() != (model.nu(), model.nx()) {
                return Err(Error::dims(
                    "feedback gain",
                    format!("{}x{}", model.nu(), model.nx()),
                    format!("{}x{}", g.nrows(), g.ncols()),
                ));
            }
        }
        Ok(Simulator {
            model,
            design,
            w_factor: chol_factor(model.sigma_w())?,
            v_factor: chol_factor(model.sigma_v())?,
            p_factor: chol_factor(&design.error_covariance)?,
            cfg,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// One run; the plant noise comes from stream `run` of the master seed
    /// and the attacker's randomness from stream `run` of the plan's seed.
    pub fn run(&self, plan: &AttackPlan, run: u64) -> Result<TrajectoryRecord> {
        let m = self.model;
        let (a, b, c, k) = (m.a(), m.b(), m.c(), &self.design.gain);
        let (nx, nu, ny) = (m.nx(), m.nu(), m.ny());
        let horizon = self.cfg.horizon;
        let full = self.cfg.recording == Recording::Full;
        let need_state = full || matches!(self.cfg.control, ControlLaw::Feedback(_));

        let mut g = rng::plant_stream(self.cfg.seed, run);
        let mut scratch_x = Vector::zeros(nx);
        let mut scratch_y = Vector::zeros(ny);
        let mut e = Vector::zeros(nx);
        rng::gaussian_into(&mut g, &self.p_factor, &mut scratch_x, &mut e);
        let mut e_free = e.clone();
        let mut x_hat = Vector::zeros(nx);
        let mut x = &x_hat + &e;
        let mut w = Vector::zeros(nx);
        let mut v = Vector::zeros(ny);
        let mut u = Vector::zeros(nu);

        let mut attack = plan.runtime(run);
        let mut innovations = Matrix::zeros(ny, horizon);
        let mut record = full.then(|| FullRecord {
            states: Matrix::zeros(nx, horizon),
            inputs: Matrix::zeros(nu, horizon),
            measurements: Matrix::zeros(ny, horizon),
            estimates: Matrix::zeros(nx, horizon),
        });
        let mut mismatch = 0.0f64;

        for step in 0..horizon {
            let gap = &e - &e_free;
            let off = (attack.estimation_offset() - &gap).amax() / gap.amax().max(1.0);
            mismatch = mismatch.max(off);

            if let ControlLaw::Feedback(gain) = &self.cfg.control {
                u.gemv(1.0, gain, &x_hat, 0.0);
            }
            let u_attacked = attack.next(&u);
            rng::gaussian_into(&mut g, &self.v_factor, &mut scratch_y, &mut v);
            rng::gaussian_into(&mut g, &self.w_factor, &mut scratch_x, &mut w);

            let z = c * &e + &v;
            let z_free = c * &e_free + &v;
            innovations.set_column(step, &z);

            if let Some(r) = record.as_mut() {
                r.states.set_column(step, &x);
                r.inputs.set_column(step, &u_attacked);
                r.measurements.set_column(step, &(c * &x + &v));
                r.estimates.set_column(step, &x_hat);
            }

            let offset_input = &u_attacked - &u;
            e = a * &e + b * &offset_input + &w - k * &z;
            e_free = a * &e_free + &w - k * &z_free;
            if need_state {
                x = a * &x + b * &u_attacked + &w;
                x_hat = a * &x_hat + k * &z + b * &u;
            }
            if !e.iter().all(|v| v.is_finite()) || (need_state && !x.iter().all(|v| v.is_finite())) {
                return Err(Error::Overflow { run, step });
            }
        }
        Ok(TrajectoryRecord {
            run,
            innovations,
            offset_mismatch: mismatch,
            full: record,
        })
    }

    /// All runs of the configuration, in run order. Runs execute in
    /// parallel; results do not depend on the schedule.
    pub fn run_all(&self, plan: &AttackPlan) -> Result<Vec<TrajectoryRecord>> {
        self.run_range(plan, 0)
    }

    /// Runs `offset .. offset + runs`.
    pub fn run_range(&self, plan: &AttackPlan, offset: u64) -> Result<Vec<TrajectoryRecord>> {
        (0..self.cfg.runs as u64)
            .into_par_iter()
            .map(|r| self.run(plan, offset + r))
            .collect()
    }
}

/// Convenience wrapper around [`Simulator::run`].
pub fn run_closed_loop(
    m: &StateSpaceModel,
    d: &KalmanDesign,
    plan: &AttackPlan,
    cfg: &ExperimentConfig,
    run: u64,
) -> Result<TrajectoryRecord> {
    Simulator::new(m, d, cfg.clone())?.run(plan, run)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub runs: usize,
    pub steps: usize,
}

/// Weighted MSE from innovations: the mean of `z̃ᵀ Σ_z⁻¹ z̃` after burn-in,
/// minus `tr(Σ_v Σ_z⁻¹)`. The standard error comes from the spread of the
/// per-run means.
pub fn estimate_pw(records: &[TrajectoryRecord], d: &KalmanDesign, sigma_v: &Matrix, burn_in: usize) -> Result<PwEstimate> {
    if records.len() < 2 {
        return Err(Error::InsufficientSamples(format!("{} runs; need at least 2", records.len())));
    }
    let offset = (sigma_v * &d.innovation_precision).trace();
    let mut per_run = Vec::with_capacity(records.len());
    let mut steps = 0;
    for r in records {
        let seg = r.segment(burn_in);
        if seg.ncols() == 0 {
            return Err(Error::InsufficientSamples(format!("run {} has no steps after burn-in", r.run)));
        }
        let whitened = &d.innovation_precision * &seg;
        let quad: f64 = seg.iter().zip(whitened.iter()).map(|(a, b)| a * b).sum();
        per_run.push(quad / seg.ncols() as f64 - offset);
        steps += seg.ncols();
    }
    let (value, standard_error) = mean_and_standard_error(&per_run);
    Ok(PwEstimate {
        value,
        standard_error,
        runs: records.len(),
        steps,
    })
}

/// Post-burn-in innovation segments of every run.
pub fn segments(records: &[TrajectoryRecord], burn_in: usize) -> Vec<Matrix> {
    records.iter().map(|r| r.segment(burn_in)).collect()
}

/// One row of an ε sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub eps: f64,
    pub converse_bound: f64,
    pub predicted_pw: f64,
    pub achieved_pw: f64,
    pub achieved_se: f64,
    /// Plug-in divergence-rate estimate; NaN when the runs are too short.
    pub kld_rate_empirical: f64,
}

pub const SWEEP_CSV_HEADER: &str = "eps,converse_bound,predicted_pw,achieved_pw,achieved_se,kld_rate_empirical";

impl SweepRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{:?},{:?}",
            self.eps, self.converse_bound, self.predicted_pw, self.achieved_pw, self.achieved_se, self.kld_rate_empirical
        )
    }
}

/// Lags used by the sweep's divergence estimate.
pub const SWEEP_KLD_LAGS: usize = 10;

/// Designs and simulates one attack per grid point. The attacker's seed is
/// the master seed; its streams are disjoint from the plant's.
pub fn sweep(
    m: &StateSpaceModel,
    d: &KalmanDesign,
    kind: AttackKind,
    grid: &[f64],
    cfg: &ExperimentConfig,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("ε grid is empty".into()));
    }
    if grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument("ε grid must be strictly increasing".into()));
    }
    let sim = Simulator::new(m, d, cfg.clone())?;
    grid.iter()
        .map(|&eps| {
            let plan = AttackPlan::design(kind, m, d, eps, cfg.seed)?;
            let records = sim.run_all(&plan)?;
            let pw = estimate_pw(&records, d, m.sigma_v(), cfg.burn_in)?;
            let kld = match empirical_kld_decomposition(&segments(&records, cfg.burn_in), &d.innovation_covariance, SWEEP_KLD_LAGS) {
                Ok(k) => k.total(),
                Err(Error::InsufficientSamples(_)) => f64::NAN,
                Err(e) => return Err(e),
            };
            Ok(SweepRow {
                eps,
                converse_bound: converse_bound(eps, d, m.ny()).bound,
                predicted_pw: plan.predicted_pw(d, m.ny()),
                achieved_pw: pw.value,
                achieved_se: pw.standard_error,
                kld_rate_empirical: kld,
            })
        })
        .collect()
}

/// Writes `k, z̃_1..z̃_{N_y}, quad` for one run, `k` starting at 1.
pub fn write_trajectory_csv<W: Write>(out: &mut W, record: &TrajectoryRecord, d: &KalmanDesign) -> std::io::Result<()> {
    let ny = record.innovations.nrows();
    let names: Vec<String> = (1..=ny).map(|i| format!("z{i}")).collect();
    writeln!(out, "k,{},quad", names.join(","))?;
    for (k, z) in record.innovations.column_iter().enumerate() {
        let quad = z.dot(&(&d.innovation_precision * z));
        let cols: Vec<String> = z.iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{},{},{:?}", k + 1, cols.join(","), quad)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::kalman::design;
    use crate::stats::{second_moment, whiteness};

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::new(10, 0, 1).is_err());
        assert!(ExperimentConfig::new(100, 2, 1).unwrap().with_burn_in(100).is_err());
        assert_eq!(ExperimentConfig::new(50, 2, 1).unwrap().burn_in, 49);
    }

    #[test]
    fn same_seed_same_record() {
        let m = fixtures::example1();
        let d = design(&m).unwrap();
        let plan = AttackPlan::design(AttackKind::A1, &m, &d, 1.0, 3).unwrap();
        let cfg = ExperimentConfig::new(200, 1, 42).unwrap().with_recording(Recording::Full);
        let a = run_closed_loop(&m, &d, &plan, &cfg, 5).unwrap();
        let b = run_closed_loop(&m, &d, &plan, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = run_closed_loop(&m, &d, &plan, &cfg, 6).unwrap();
        assert_ne!(a.innovations, c.innovations);
    }

    #[test]
    fn full_record_is_consistent() {
        let m = fixtures::example2();
        let d = design(&m).unwrap();
        let plan = AttackPlan::design(AttackKind::A2, &m, &d, 1.0, 3).unwrap();
        let cfg = ExperimentConfig::new(60, 1, 7).unwrap().with_recording(Recording::Full);
        let r = run_closed_loop(&m, &d, &plan, &cfg, 0).unwrap();
        let full = r.full.as_ref().unwrap();
        for step in 0..60 {
            let z = full.measurements.column(step) - m.c() * full.estimates.column(step);
            let scale = full.measurements.column(step).amax().max(1.0);
            assert!((z - r.innovations.column(step)).amax() < 1e-9 * scale);
        }
        assert!(r.offset_mismatch < 1e-10);
    }

    #[test]
    fn attacker_bookkeeping_matches_filter_gap() {
        let m = fixtures::example1();
        let d = design(&m).unwrap();
        let plan = AttackPlan::design(AttackKind::A1, &m, &d, 2.0, 3).unwrap();
        let cfg = ExperimentConfig::new(400, 1, 7).unwrap();
        assert!(run_closed_loop(&m, &d, &plan, &cfg, 0).unwrap().offset_mismatch < 1e-10);
    }

    #[test]
    fn zero_budget_matches_no_attack_bit_for_bit() {
        let m = fixtures::example1();
        let d = design(&m).unwrap();
        let cfg = ExperimentConfig::new(300, 1, 11).unwrap().with_recording(Recording::Full);
        let none = run_closed_loop(&m, &d, &AttackPlan::None { nx: 4 }, &cfg, 0).unwrap();
        let a1 = run_closed_loop(&m, &d, &AttackPlan::design(AttackKind::A1, &m, &d, 0.0, 1).unwrap(), &cfg, 0).unwrap();
        assert_eq!(none, a1);
    }

    #[test]
    fn no_attack_innovations_are_nominal() {
        let m = fixtures::example1();
        let d = design(&m).unwrap();
        let cfg = ExperimentConfig::new(2000, 40, 1).unwrap();
        let records = Simulator::new(&m, &d, cfg.clone()).unwrap().run_all(&AttackPlan::None { nx: 4 }).unwrap();
        let segs = segments(&records, cfg.burn_in);
        let cov = second_moment(&segs).unwrap();
        assert!((&cov - &d.innovation_covariance).norm() < 0.03 * d.innovation_covariance.norm());
        assert!(whiteness(&segs, 5).unwrap().is_white());
        let pw = estimate_pw(&records, &d, m.sigma_v(), cfg.burn_in).unwrap();
        assert!((pw.value - d.baseline_mse).abs() < 3.0 * pw.standard_error, "{pw:?}");
    }

    #[test]
    fn feedback_changes_states_not_innovations() {
        let m = fixtures::example1();
        let d = design(&m).unwrap();
        // Deadbeat-ish gain that stabilizes the unstable modes.
        let g = -crate::matnum::pseudoinverse(m.b()) * m.a();
        let open = ExperimentConfig::new(100, 1, 2).unwrap().with_recording(Recording::Full);
        let closed = open.clone().with_control(ControlLaw::Feedback(g));
        let plan = AttackPlan::None { nx: 4 };
        let a = run_closed_loop(&m, &d, &plan, &open, 0).unwrap();
        let b = run_closed_loop(&m, &d, &plan, &closed, 0).unwrap();
        assert_eq!(a.innovations, b.innovations);
        assert!(b.full.unwrap().states.amax() < a.full.unwrap().states.amax());
    }

    #[test]
    fn overflow_is_reported() {
        // Filter with a gain that cannot stabilize: A − KC unstable.
        let m = fixtures::scalar_random_walk();
        let mut d = design(&m).unwrap();
        d.gain[(0, 0)] = -5.0;
        let cfg = ExperimentConfig::new(2000, 1, 1).unwrap();
        let err = run_closed_loop(&m, &d, &AttackPlan::None { nx: 1 }, &cfg, 3).unwrap_err();
        assert!(matches!(err, Error::Overflow { run: 3, .. }));
    }

    #[test]
    fn sweep_grid_checks() {
        let m = fixtures::example1();
        let d = design(&m).unwrap();
        let cfg = ExperimentConfig::new(200, 2, 1).unwrap();
        assert!(sweep(&m, &d, AttackKind::A1, &[], &cfg).is_err());
        assert!(sweep(&m, &d, AttackKind::A1, &[1.0, 0.5], &cfg).is_err());
        let rows = sweep(&m, &d, AttackKind::A1, &[0.0], &cfg).unwrap();
        assert_eq!(rows[0].converse_bound, d.baseline_mse);
        assert!(rows[0].kld_rate_empirical.is_nan());
    }

    #[test]
    fn trajectory_csv_layout() {
        let m = fixtures::example1();
        let d = design(&m).unwrap();
        let cfg = ExperimentConfig::new(3, 1, 1).unwrap();
        let r = run_closed_loop(&m, &d, &AttackPlan::None { nx: 4 }, &cfg, 0).unwrap();
        let mut out = Vec::new();
        write_trajectory_csv(&mut out, &r, &d).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,z1,z2,quad");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("3,"));
    }
}
