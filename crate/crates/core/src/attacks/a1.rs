//! Attack `𝒜₁` for right-invertible plants.
//!
//! The attacker draws `ζ_k ~ N(0, (δ̄(ε/N_y) − 1) Σ_z)` and feeds it as the
//! target of the right inverse of `(A − KC, B, C)`. The resulting input
//! offset `φ_k` moves the controller's estimation error so that its
//! innovation becomes `z̃_k = zᵃ_k + ζ_k`, the sum of the attack-free
//! innovation and independent noise. The sign convention `+ζ` is arbitrary
//! since `ζ` is symmetric.

use rand_chacha::ChaCha8Rng;

use super::inverse::{DelayedRightInverse, InverseState, DEFAULT_PREVIEW};
use super::InputAttack;
use crate::error::{Error, Result};
use crate::kalman::KalmanDesign;
use crate::matnum::{chol_factor, Matrix, Vector};
use crate::model::StateSpaceModel;
use crate::rng;
use crate::stealth::{delta_bar, StealthBudget};

#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlanA1 {
    pub eps: f64,
    /// `(δ̄(ε/N_y) − 1) Σ_z`.
    pub zeta_covariance: Matrix,
    zeta_factor: Matrix,
    pub inverse: DelayedRightInverse,
    pub seed: u64,
}

/// Builds the `𝒜₁` plan; fails with `NotRightInvertible` when the plant
/// cannot be inverted.
pub fn design_a1(m: &StateSpaceModel, d: &KalmanDesign, eps: f64, seed: u64) -> Result<AttackPlanA1> {
    design_a1_with_preview(m, d, eps, seed, DEFAULT_PREVIEW)
}

pub fn design_a1_with_preview(
    m: &StateSpaceModel,
    d: &KalmanDesign,
    eps: f64,
    seed: u64,
    preview: usize,
) -> Result<AttackPlanA1> {
    let eps = StealthBudget::new(eps)?.value();
    let inverse = DelayedRightInverse::with_preview(&d.closed_loop(m), m.b(), m.c(), preview)?;
    let scale = delta_bar(eps / m.ny() as f64) - 1.0;
    let zeta_covariance = &d.innovation_covariance * scale;
    let zeta_factor = chol_factor(&zeta_covariance)?;
    Ok(AttackPlanA1 {
        eps,
        zeta_covariance,
        zeta_factor,
        inverse,
        seed,
    })
}

impl AttackPlanA1 {
    /// Runtime for one run; `stream` selects the attacker's random stream.
    pub fn runtime(&self, stream: u64) -> A1Runtime<'_> {
        let mut rng = rng::stream(self.seed, stream);
        let ny = self.inverse.ny();
        let mut scratch = Vector::zeros(ny);
        let initial = (0..self.inverse.preview())
            .map(|_| {
                let mut z = Vector::zeros(ny);
                rng::gaussian_into(&mut rng, &self.zeta_factor, &mut scratch, &mut z);
                z
            })
            .collect();
        let state = InverseState::primed(&self.inverse, initial).expect("priming matches the preview length");
        A1Runtime {
            plan: self,
            state,
            rng,
            scratch,
        }
    }

    pub(crate) fn from_parts(
        m: &StateSpaceModel,
        d: &KalmanDesign,
        eps: f64,
        seed: u64,
        preview: usize,
        zeta_covariance: Matrix,
    ) -> Result<Self> {
        let mut plan = design_a1_with_preview(m, d, eps, seed, preview)?;
        if zeta_covariance.shape() != plan.zeta_covariance.shape() {
            return Err(Error::dims(
                "plan ζ covariance",
                format!("{}x{}", plan.zeta_covariance.nrows(), plan.zeta_covariance.ncols()),
                format!("{}x{}", zeta_covariance.nrows(), zeta_covariance.ncols()),
            ));
        }
        plan.zeta_factor = chol_factor(&zeta_covariance)?;
        plan.zeta_covariance = zeta_covariance;
        Ok(plan)
    }
}

/// Per-run state of `𝒜₁`. It sees the nominal input and nothing else.
pub struct A1Runtime<'a> {
    plan: &'a AttackPlanA1,
    state: InverseState,
    rng: ChaCha8Rng,
    scratch: Vector,
}

impl InputAttack for A1Runtime<'_> {
    fn next(&mut self, u: &Vector) -> Vector {
        if self.plan.eps == 0.0 {
            return u.clone();
        }
        let mut incoming = Vector::zeros(self.plan.inverse.ny());
        rng::gaussian_into(&mut self.rng, &self.plan.zeta_factor, &mut self.scratch, &mut incoming);
        let phi = self.state.step(&self.plan.inverse, incoming);
        u + phi
    }

    fn estimation_offset(&self) -> Vector {
        self.state.e_hat.clone()
    }
}
