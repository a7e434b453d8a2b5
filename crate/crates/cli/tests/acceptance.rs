//! Acceptance criteria 1-9. Prints one PASS/FAIL line per criterion.
//!
//! Criterion 8 asks for a converse slope in [1.98, 2.0] at ε = 50; the slope
//! of the bound is 2δ̄/(δ̄ − 1) > 2 for every finite ε, so it is reported as a
//! known failure. The process fails only on unexpected failures.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use stealthy::attacks::{predicted_eps_a2, predicted_pw_a2, sigma_zeta, AttackKind, AttackPlan};
use stealthy::detect::{estimate_roc, DetectorKind, DetectorSpec, PfEstimator};
use stealthy::fixtures;
use stealthy::kalman::{design, KalmanDesign};
use stealthy::matnum::{riccati_map, Matrix};
use stealthy::model::StateSpaceModel;
use stealthy::sim::{estimate_pw, segments, ExperimentConfig, PwEstimate, Simulator, TrajectoryRecord};
use stealthy::stats::{second_moment, whiteness};
use stealthy::stealth::{converse_bound, delta_bar, empirical_kld_decomposition, kld_rate_iid_scaled};

const KNOWN_FAILURES: &[u32] = &[8];

const RUNS: usize = 500;
const HORIZON: usize = 2000;
const BURN_IN: usize = 100;
const GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm()
}

fn monte_carlo(m: &StateSpaceModel, d: &KalmanDesign, plan: &AttackPlan, seed: u64) -> (Vec<TrajectoryRecord>, PwEstimate) {
    let cfg = ExperimentConfig::new(HORIZON, RUNS, seed).unwrap().with_burn_in(BURN_IN).unwrap();
    let records = Simulator::new(m, d, cfg).unwrap().run_all(plan).unwrap();
    let pw = estimate_pw(&records, d, m.sigma_v(), BURN_IN).unwrap();
    (records, pw)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let exact_zero = delta_bar(0.0) == 1.0;
    let mut worst_fixed_point = 0.0f64;
    let mut worst_rate = 0.0f64;
    for i in 0..100 {
        let gamma = if i == 0 { 0.0 } else { 1e-6 * 10f64.powf(7.0 * i as f64 / 99.0) };
        let x = delta_bar(gamma);
        worst_fixed_point = worst_fixed_point.max((x - (2.0 * gamma + 1.0 + x.ln())).abs());
        for ny in [1, 2, 3] {
            worst_rate = worst_rate.max((kld_rate_iid_scaled(x, ny) - ny as f64 * gamma).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        exact_zero && worst_fixed_point < 1e-12 && worst_rate < 1e-10 && secs < 1.0,
        format!(
            "delta_bar(0) == 1: {exact_zero}; fixed-point residual {worst_fixed_point:.1e}; rate error {worst_rate:.1e}; {secs:.3}s"
        ),
    )
}

fn dare_residual(m: &StateSpaceModel, d: &KalmanDesign) -> f64 {
    let p = &d.error_covariance;
    let next = riccati_map(p, m.a(), m.c(), m.sigma_w(), m.sigma_v()).unwrap();
    (next - p).amax() / p.amax()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let scalar = design(&fixtures::scalar_random_walk()).unwrap();
    let golden_err = (scalar.error_covariance[(0, 0)] - (1.0 + 5f64.sqrt()) / 2.0).abs();
    let m1 = fixtures::example1();
    let d1 = design(&m1).unwrap();
    let m2 = fixtures::example2();
    let d2 = design(&m2).unwrap();
    let r1 = dare_residual(&m1, &d1);
    let r2 = dare_residual(&m2, &d2);
    let (records, _) = monte_carlo(&m1, &d1, &AttackPlan::None { nx: m1.nx() }, 2);
    let cov = second_moment(&segments(&records, BURN_IN)).unwrap();
    let cov_err = rel_frobenius(&cov, &d1.innovation_covariance);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        golden_err < 1e-10 && r1 < 1e-10 && r2 < 1e-10 && cov_err < 0.03 && secs < 60.0,
        format!(
            "golden error {golden_err:.1e}; DARE residuals {r1:.1e}, {r2:.1e}; innovation covariance off by {:.2}%; {secs:.1}s",
            100.0 * cov_err
        ),
    )
}

/// Criteria 3 and 4 share the Example 1 runs.
fn criteria_3_and_4() -> (Outcome, Outcome) {
    let m = fixtures::example1();
    let d = design(&m).unwrap();
    let mut pass3 = true;
    let mut parts = Vec::new();
    let mut lemma = outcome(false, "ε = 1 not simulated");
    for (i, &eps) in GRID.iter().enumerate() {
        let plan = AttackPlan::design(AttackKind::A1, &m, &d, eps, 30 + i as u64).unwrap();
        let (records, pw) = monte_carlo(&m, &d, &plan, 30 + i as u64);
        let bound = converse_bound(eps, &d, m.ny()).bound;
        let ratio = pw.value / bound;
        pass3 &= (0.97..=1.03).contains(&ratio);
        parts.push(format!("ε={eps}: {:.4}/{bound:.4}", pw.value));
        if eps == 1.0 {
            let segs = segments(&records, BURN_IN);
            let white = whiteness(&segs, 5).unwrap();
            let target = &d.innovation_covariance * delta_bar(0.5);
            let cov_err = rel_frobenius(&second_moment(&segs).unwrap(), &target);
            lemma = outcome(
                white.is_white() && cov_err < 0.03,
                format!(
                    "max lag-1..5 correlation {:.4} (band {:.4}); covariance off δ̄(0.5)Σ_z by {:.2}%",
                    white.max_abs,
                    white.band,
                    100.0 * cov_err
                ),
            );
        }
    }
    (outcome(pass3, format!("achieved/bound {}", parts.join(", "))), lemma)
}

/// Criteria 5 and 6 share the Example 2 runs.
fn criteria_5_and_6() -> (Outcome, Outcome) {
    let m = fixtures::example2();
    let d = design(&m).unwrap();
    let ny = m.ny() as f64;
    let mut pass5 = true;
    let mut parts = Vec::new();
    let mut predicted = Vec::new();
    let mut bounds = Vec::new();
    let mut mc_checks = Vec::new();
    for (i, &eps) in GRID.iter().enumerate() {
        let plan = AttackPlan::design(AttackKind::A2, &m, &d, eps, 50 + i as u64).unwrap();
        let (records, pw) = monte_carlo(&m, &d, &plan, 50 + i as u64);
        let pred = plan.predicted_pw(&d, m.ny());
        let bound = converse_bound(eps, &d, m.ny()).bound;
        let kld = empirical_kld_decomposition(&segments(&records, BURN_IN), &d.innovation_covariance, 10)
            .unwrap()
            .total();
        let within = (pw.value - pred).abs() <= 3.0 * pw.standard_error;
        pass5 &= within && pred <= bound && (kld - eps).abs() <= 0.1 * eps;
        parts.push(format!(
            "ε={eps}: MC {:.3}±{:.3} vs {pred:.3} (bound {bound:.3}), KLD {kld:.3}",
            pw.value, pw.standard_error
        ));
        predicted.push(pred);
        bounds.push(bound);

        let printed_pw = pred - ny;
        let agrees = within;
        let printed_gap = pw.value - printed_pw;
        let disagrees = (printed_gap - ny).abs() <= 3.0 * pw.standard_error && printed_gap > ny / 2.0;
        mc_checks.push((agrees && disagrees, printed_gap));
    }
    let monotone = predicted.windows(2).all(|p| p[1] > p[0]) && bounds.windows(2).all(|p| p[1] > p[0]);
    let gap = predicted.iter().zip(&bounds).all(|(p, b)| b - p > 0.1);
    pass5 &= monotone && gap;

    let AttackPlan::A2(plan) = AttackPlan::design(AttackKind::A2, &m, &d, 1.0, 0).unwrap() else {
        unreachable!()
    };
    let tiny = sigma_zeta(1e-6, &plan.closed_loop, m.b(), m.c(), &d.innovation_covariance);
    let at_tiny = predicted_eps_a2(&plan.closed_loop, m.b(), &tiny, &m, &d).unwrap();
    let zero = Matrix::zeros(m.nu(), m.nu());
    let at_zero = predicted_eps_a2(&plan.closed_loop, m.b(), &zero, &m, &d).unwrap();
    let limit_ok = at_zero.eps == 0.0
        && at_tiny.eps.abs() < 1e-9
        && (predicted_pw_a2(&at_tiny.sigma_e, &d) - d.baseline_mse).abs() < 1e-9
        && predicted_pw_a2(&at_zero.sigma_e, &d) == d.baseline_mse;
    let printed_eps_at_zero = at_zero.eps + ny / 2.0;
    let printed_pw_at_zero = predicted_pw_a2(&at_zero.sigma_e, &d) - ny;
    let mc_ok = mc_checks.iter().all(|c| c.0);
    let gaps: Vec<String> = mc_checks.iter().map(|c| format!("{:.3}", c.1)).collect();
    let six = outcome(
        limit_ok && mc_ok && printed_pw_at_zero < d.baseline_mse,
        format!(
            "Σ_ζ→0: ε {:.1e}, P_W - tr(PW) {:.1e}; printed forms give ε {printed_eps_at_zero:.2} and P_W {printed_pw_at_zero:.3} < tr(PW) {:.3}; MC minus printed P_W = {} (N_y = {ny})",
            at_tiny.eps,
            predicted_pw_a2(&at_tiny.sigma_e, &d) - d.baseline_mse,
            d.baseline_mse,
            gaps.join(", ")
        ),
    );
    (
        outcome(pass5, format!("{}; monotone {monotone}, gap {gap}", parts.join("; "))),
        six,
    )
}

fn criterion_7() -> Outcome {
    let m = fixtures::example1();
    let d = design(&m).unwrap();
    let h1 = AttackPlan::design(AttackKind::A1, &m, &d, 1.0, 70).unwrap();
    let h0 = AttackPlan::None { nx: m.nx() };
    let spec = DetectorSpec::calibrated(DetectorKind::LogLikelihoodRatio, 0.1).unwrap();
    let horizons: Vec<usize> = (1..=12).map(|i| 5 * i).collect();
    let cfg = ExperimentConfig::new(BURN_IN + 60, 1, 70).unwrap().with_burn_in(BURN_IN).unwrap();
    let report = estimate_roc(&m, &d, &h0, &h1, &spec, &horizons, 10_000, &cfg, PfEstimator::ChangeOfMeasure).unwrap();
    match report.exponent() {
        Ok(e) => outcome(
            (0.8..=1.05).contains(&e),
            format!("fitted exponent {e:.4} from horizons 5..=60, p_F(60) = {:.2e}", report.p_f[11]),
        ),
        Err(err) => outcome(false, err.to_string()),
    }
}

fn criterion_8() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m) in [("example 1", fixtures::example1()), ("example 2", fixtures::example2())] {
        let d = design(&m).unwrap();
        let h = 1e-3;
        let slope = (converse_bound(50.0 + h, &d, m.ny()).bound - converse_bound(50.0 - h, &d, m.ny()).bound) / (2.0 * h);
        pass &= (1.98..=2.0).contains(&slope);
        parts.push(format!("{name}: {slope:.4}"));
    }
    outcome(pass, format!("d(bound)/dε at ε=50: {}; required [1.98, 2.0]", parts.join(", ")))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).join("model.txt")
}

fn criterion_9() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_stealthy");
    let dir = tempfile::tempdir().unwrap();
    let sweep = |out: &Path| {
        Command::new(bin)
            .arg("sweep")
            .arg(fixture("example2"))
            .args(["--attack", "a2", "--eps-grid", "0.5,1,2", "--runs", "8", "--horizon", "600", "--seed", "9", "--out"])
            .arg(out)
            .output()
            .unwrap()
    };
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let replayed = dir.path().join("replayed");
    let ok1 = sweep(&first).status.success();
    let ok2 = sweep(&second).status.success();
    let ok3 = Command::new(bin)
        .arg("replay")
        .arg(first.join("manifest.txt"))
        .arg("--out")
        .arg(&replayed)
        .output()
        .unwrap()
        .status
        .success();
    let read = |p: &Path| std::fs::read(p.join("sweep.csv")).unwrap_or_default();
    let a = read(&first);
    let same = !a.is_empty() && a == read(&second) && a == read(&replayed);
    outcome(
        ok1 && ok2 && ok3 && same,
        format!("two sweeps and a manifest replay, {} CSV bytes each, identical: {same}", a.len()),
    )
}

fn main() {
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    results.push((1, criterion_1()));
    results.push((2, criterion_2()));
    let (three, four) = criteria_3_and_4();
    results.push((3, three));
    results.push((4, four));
    let (five, six) = criteria_5_and_6();
    results.push((5, five));
    results.push((6, six));
    results.push((7, criterion_7()));
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));

    let mut unexpected = 0;
    for (n, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_FAILURES.contains(n) { " (known)" } else { "" };
        println!("criterion {n}: {tag}{note}: {}", o.detail);
        if !o.pass && !KNOWN_FAILURES.contains(n) {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criterion(s) failed");
        std::process::exit(1);
    }
}
