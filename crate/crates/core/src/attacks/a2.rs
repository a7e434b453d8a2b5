//! Attack `𝒜₂` for general plants.
//!
//! The attacker runs a private copy `ẽ` of the gap between the attack-free
//! and the attacked estimation errors, and applies `ũ = u + L ẽ − ζ`, which
//! makes `ẽ_{k+1} = (A − KC − BL) ẽ_k + B ζ_k`. The gain `L` comes from a
//! cheap LQG problem that suppresses the memory of the injected noise in the
//! innovations; `Σ_ζ` is shaped so that `C Σ_ẽ Cᵀ` is close to a multiple of
//! `Σ_z`, and the scale `α` is tuned to the stealth budget.

use rand_chacha::ChaCha8Rng;

use super::InputAttack;
use crate::error::{Error, Result};
use crate::kalman::KalmanDesign;
use crate::matnum::{
    chol_factor, pseudoinverse, psd_project, solve_dare, solve_dlyap, spectral_radius, symmetrize, Matrix,
    SolverOptions, Vector,
};
use crate::model::StateSpaceModel;
use crate::rng;
use crate::stealth::StealthBudget;

pub const DEFAULT_ETA_SCHEDULE: [f64; 4] = [1e-2, 1e-4, 1e-6, 1e-8];

/// Cheap-control gain: the limit of `L_η = (BᵀTB + ηI)⁻¹ BᵀTF` as `η → 0`,
/// where `T` solves `T = Fᵀ(T − TB(BᵀTB + ηI)⁻¹BᵀT)F + W`.
///
/// Returns `L_η` at the first `η` whose gain moved by less than `1e-6`
/// (relative) from the previous one, otherwise the gain at the last `η`.
pub fn cheap_lqg_gain(f: &Matrix, b: &Matrix, w: &Matrix, schedule: &[f64]) -> Result<Matrix> {
    if schedule.is_empty() || schedule.iter().any(|&e| !(e > 0.0)) || schedule.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::InvalidArgument("η schedule must be strictly decreasing positive reals".into()));
    }
    let nu = b.ncols();
    let opts = SolverOptions::new(1e-12, 200_000)?;
    let ft = f.transpose();
    let bt = b.transpose();
    let mut previous: Option<Matrix> = None;
    for &eta in schedule {
        let reg = Matrix::identity(nu, nu) * eta;
        let t = solve_dare(&ft, &bt, w, &reg, &opts)?;
        let lhs = &bt * &t * b + &reg;
        let l = lhs
            .clone()
            .cholesky()
            .map(|c| c.solve(&(&bt * &t * f)))
            .ok_or(Error::SingularCovariance("BᵀTB + ηI"))?;
        if let Some(prev) = &previous {
            if (&l - prev).norm() <= 1e-6 * l.norm().max(prev.norm()).max(f64::MIN_POSITIVE) {
                return Ok(l);
            }
        }
        previous = Some(l);
    }
    Ok(previous.expect("schedule is non-empty"))
}

/// `α² B†(C†Σ_zC†ᵀ − F_c C†Σ_zC†ᵀ F_cᵀ)B†ᵀ` after PSD projection, with
/// `F_c = A − KC − BL`. The projection happens at `α = 1`, so the result
/// scales exactly with `α²`.
pub fn sigma_zeta(alpha: f64, fc: &Matrix, b: &Matrix, c: &Matrix, sigma_z: &Matrix) -> Matrix {
    let c_pinv = pseudoinverse(c);
    let b_pinv = pseudoinverse(b);
    let x = &c_pinv * sigma_z * c_pinv.transpose();
    let inner = &x - fc * &x * fc.transpose();
    let base = psd_project(&symmetrize(&(&b_pinv * inner * b_pinv.transpose())));
    base * (alpha * alpha)
}

/// Stationary quantities of `𝒜₂` for a given `Σ_ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct A2Prediction {
    /// Divergence rate `−½ ln det(I + SW) + ½ tr(Σ_ẽ W)`.
    pub eps: f64,
    /// Steady-state prediction covariance of `ẽ` given past innovations.
    pub s: Matrix,
    /// Stationary covariance of `ẽ`.
    pub sigma_e: Matrix,
}

pub fn predicted_eps_a2(fc: &Matrix, b: &Matrix, sigma_zeta: &Matrix, m: &StateSpaceModel, d: &KalmanDesign) -> Result<A2Prediction> {
    if spectral_radius(fc) >= 1.0 {
        return Err(Error::UnstableClosedLoop);
    }
    let opts = SolverOptions::new(1e-12, 100_000)?;
    let q = symmetrize(&(b * sigma_zeta * b.transpose()));
    let sigma_e = solve_dlyap(fc, &q, &opts)?;
    // The entropy Riccati iteration can floor a little above 1e-12 in
    // relative terms; 1e-10 is far inside what the α search needs.
    let s = solve_dare(fc, m.c(), &q, &d.innovation_covariance, &SolverOptions::new(1e-10, 100_000)?)?;
    let n = m.nx();
    let log_det = (Matrix::identity(n, n) + &s * &d.weight)
        .lu()
        .determinant()
        .ln();
    let eps = -0.5 * log_det + 0.5 * (&sigma_e * &d.weight).trace();
    Ok(A2Prediction { eps, s, sigma_e })
}

/// `tr(P W) + tr(Σ_ẽ W)`.
pub fn predicted_pw_a2(sigma_e: &Matrix, d: &KalmanDesign) -> f64 {
    d.baseline_mse + (sigma_e * &d.weight).trace()
}

/// Finds `α` with predicted divergence rate within `1e-6` of `target`, by
/// doubling an upper bracket and bisecting.
pub fn solve_alpha(
    fc: &Matrix,
    b: &Matrix,
    m: &StateSpaceModel,
    d: &KalmanDesign,
    target: f64,
) -> Result<(f64, A2Prediction)> {
    if !(target > 0.0) || !target.is_finite() {
        return Err(Error::InvalidArgument(format!("target stealthiness must be positive, got {target}")));
    }
    let base = sigma_zeta(1.0, fc, b, m.c(), &d.innovation_covariance);
    if base.amax() == 0.0 {
        return Err(Error::NoBracket);
    }
    let eval = |alpha: f64| predicted_eps_a2(fc, b, &(&base * (alpha * alpha)), m, d);

    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut at_hi = eval(hi)?;
    let mut doublings = 0;
    while at_hi.eps < target {
        lo = hi;
        hi *= 2.0;
        at_hi = eval(hi)?;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::NoBracket);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let at_mid = eval(mid)?;
        if (at_mid.eps - target).abs() < 1e-8 {
            return Ok((mid, at_mid));
        }
        if at_mid.eps < target {
            lo = mid;
        } else {
            hi = mid;
            at_hi = at_mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    if (at_hi.eps - target).abs() < 1e-6 {
        Ok((hi, at_hi))
    } else {
        Err(Error::NonConvergence {
            iterations: 200,
            residual: (at_hi.eps - target).abs(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlanA2 {
    pub eps: f64,
    pub gain: Matrix,
    pub sigma_zeta: Matrix,
    zeta_factor: Matrix,
    pub alpha: f64,
    pub s: Matrix,
    pub sigma_e: Matrix,
    pub predicted_eps: f64,
    pub predicted_pw: f64,
    pub eta_schedule: Vec<f64>,
    /// `A − KC − BL`.
    pub closed_loop: Matrix,
    b: Matrix,
    /// `‖C Σ_ẽ Cᵀ − α² Σ_z‖_F / ‖α² Σ_z‖_F`: how far PSD projection moved the
    /// innovation shape from the intended multiple of `Σ_z`.
    pub shaping_mismatch: f64,
    pub seed: u64,
}

pub fn design_a2(m: &StateSpaceModel, d: &KalmanDesign, eps: f64, seed: u64) -> Result<AttackPlanA2> {
    design_a2_with_schedule(m, d, eps, seed, &DEFAULT_ETA_SCHEDULE)
}

pub fn design_a2_with_schedule(
    m: &StateSpaceModel,
    d: &KalmanDesign,
    eps: f64,
    seed: u64,
    schedule: &[f64],
) -> Result<AttackPlanA2> {
    let eps = StealthBudget::new(eps)?.value();
    let gain = cheap_lqg_gain(&d.closed_loop(m), m.b(), &d.weight, schedule)?;
    let fc = d.closed_loop(m) - m.b() * &gain;
    if spectral_radius(&fc) >= 1.0 {
        return Err(Error::UnstableClosedLoop);
    }
    let (alpha, prediction) = if eps == 0.0 {
        let zero = Matrix::zeros(m.nu(), m.nu());
        (0.0, predicted_eps_a2(&fc, m.b(), &zero, m, d)?)
    } else {
        solve_alpha(&fc, m.b(), m, d, eps)?
    };
    let sigma_zeta = sigma_zeta(alpha, &fc, m.b(), m.c(), &d.innovation_covariance);
    assemble(m, d, eps, seed, schedule.to_vec(), gain, fc, alpha, sigma_zeta, prediction)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    m: &StateSpaceModel,
    d: &KalmanDesign,
    eps: f64,
    seed: u64,
    eta_schedule: Vec<f64>,
    gain: Matrix,
    closed_loop: Matrix,
    alpha: f64,
    sigma_zeta: Matrix,
    prediction: A2Prediction,
) -> Result<AttackPlanA2> {
    let zeta_factor = chol_factor(&sigma_zeta)?;
    let target = &d.innovation_covariance * (alpha * alpha);
    let shaping_mismatch = if alpha == 0.0 {
        0.0
    } else {
        (m.c() * &prediction.sigma_e * m.c().transpose() - &target).norm() / target.norm()
    };
    Ok(AttackPlanA2 {
        eps,
        predicted_pw: predicted_pw_a2(&prediction.sigma_e, d),
        predicted_eps: prediction.eps,
        gain,
        sigma_zeta,
        zeta_factor,
        alpha,
        s: prediction.s,
        sigma_e: prediction.sigma_e,
        eta_schedule,
        closed_loop,
        b: m.b().clone(),
        shaping_mismatch,
        seed,
    })
}

impl AttackPlanA2 {
    pub fn runtime(&self, stream: u64) -> A2Runtime<'_> {
        A2Runtime {
            plan: self,
            e_tilde: Vector::zeros(self.closed_loop.nrows()),
            rng: rng::stream(self.seed, stream),
            scratch: Vector::zeros(self.sigma_zeta.nrows()),
            zeta: Vector::zeros(self.sigma_zeta.nrows()),
        }
    }

    /// Rebuilds a plan from its stored gain and scale, recomputing the
    /// stationary quantities.
    pub(crate) fn from_parts(
        m: &StateSpaceModel,
        d: &KalmanDesign,
        eps: f64,
        seed: u64,
        eta_schedule: Vec<f64>,
        gain: Matrix,
        alpha: f64,
    ) -> Result<Self> {
        if gain.shape() != (m.nu(), m.nx()) {
            return Err(Error::dims("plan gain L", format!("{}x{}", m.nu(), m.nx()), format!("{}x{}", gain.nrows(), gain.ncols())));
        }
        let fc = d.closed_loop(m) - m.b() * &gain;
        let sigma_zeta = sigma_zeta(alpha, &fc, m.b(), m.c(), &d.innovation_covariance);
        let prediction = predicted_eps_a2(&fc, m.b(), &sigma_zeta, m, d)?;
        assemble(m, d, eps, seed, eta_schedule, gain, fc, alpha, sigma_zeta, prediction)
    }
}

/// Per-run state of `𝒜₂`: the attacker's own `ẽ` and random stream.
pub struct A2Runtime<'a> {
    plan: &'a AttackPlanA2,
    e_tilde: Vector,
    rng: ChaCha8Rng,
    scratch: Vector,
    zeta: Vector,
}

impl A2Runtime<'_> {
    pub fn e_tilde(&self) -> &Vector {
        &self.e_tilde
    }
}

impl InputAttack for A2Runtime<'_> {
    fn next(&mut self, u: &Vector) -> Vector {
        if self.plan.alpha == 0.0 {
            return u.clone();
        }
        rng::gaussian_into(&mut self.rng, &self.plan.zeta_factor, &mut self.scratch, &mut self.zeta);
        let out = u + &self.plan.gain * &self.e_tilde - &self.zeta;
        self.e_tilde = &self.plan.closed_loop * &self.e_tilde + &self.plan.b * &self.zeta;
        out
    }

    /// `ẽ` is the attack-free error minus the attacked one.
    fn estimation_offset(&self) -> Vector {
        -&self.e_tilde
    }
}
