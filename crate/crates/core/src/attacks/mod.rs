//! Stealthy input attacks.
//!
//! An attack sits between the controller and the actuator and sees only the
//! nominal input `u_k`. Plans are designed once and are immutable; each
//! simulation run gets its own runtime with a private random stream.

mod a1;
mod a2;
mod inverse;

pub use a1::{design_a1, design_a1_with_preview, A1Runtime, AttackPlanA1};
pub use a2::{
    cheap_lqg_gain, design_a2, design_a2_with_schedule, predicted_eps_a2, predicted_pw_a2, sigma_zeta, solve_alpha,
    A2Prediction, A2Runtime, AttackPlanA2, DEFAULT_ETA_SCHEDULE,
};
pub use inverse::{DelayedRightInverse, InverseState, DEFAULT_PREVIEW};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kalman::KalmanDesign;
use crate::matnum::{Matrix, Vector};
use crate::model::StateSpaceModel;
use crate::stealth::converse_bound;
use crate::textfmt::{Document, Section};

/// Transformation of the nominal input stream.
///
/// The only observation an attack receives is `u_k`; the plant state,
/// measurements and noise are out of reach by construction.
pub trait InputAttack {
    /// Consumes `u_k` and returns `ũ_k`.
    fn next(&mut self, u: &Vector) -> Vector;

    /// The attacker's running value of `e_k − eᵃ_k`, the attacked estimation
    /// error minus the one an attack-free run with the same noise would
    /// have, before `next` is called for step `k`.
    fn estimation_offset(&self) -> Vector;
}

/// Passes the input through unchanged.
#[derive(Debug, Clone)]
pub struct NoAttack {
    nx: usize,
}

impl InputAttack for NoAttack {
    fn next(&mut self, u: &Vector) -> Vector {
        u.clone()
    }

    fn estimation_offset(&self) -> Vector {
        Vector::zeros(self.nx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackKind {
    None,
    A1,
    A2,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::None => "none",
            AttackKind::A1 => "a1",
            AttackKind::A2 => "a2",
        })
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(AttackKind::None),
            "a1" => Ok(AttackKind::A1),
            "a2" => Ok(AttackKind::A2),
            other => Err(Error::InvalidArgument(format!("unknown attack `{other}` (expected none, a1 or a2)"))),
        }
    }
}

/// A designed attack of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackPlan {
    None { nx: usize },
    A1(AttackPlanA1),
    A2(AttackPlanA2),
}

impl AttackPlan {
    pub fn design(kind: AttackKind, m: &StateSpaceModel, d: &KalmanDesign, eps: f64, seed: u64) -> Result<Self> {
        Ok(match kind {
            AttackKind::None => AttackPlan::None { nx: m.nx() },
            AttackKind::A1 => AttackPlan::A1(design_a1(m, d, eps, seed)?),
            AttackKind::A2 => AttackPlan::A2(design_a2(m, d, eps, seed)?),
        })
    }

    pub fn kind(&self) -> AttackKind {
        match self {
            AttackPlan::None { .. } => AttackKind::None,
            AttackPlan::A1(_) => AttackKind::A1,
            AttackPlan::A2(_) => AttackKind::A2,
        }
    }

    /// Requested stealthiness level; zero for no attack.
    pub fn eps(&self) -> f64 {
        match self {
            AttackPlan::None { .. } => 0.0,
            AttackPlan::A1(p) => p.eps,
            AttackPlan::A2(p) => p.eps,
        }
    }

    /// Predicted per-step divergence of the attacked innovations.
    pub fn predicted_eps(&self) -> f64 {
        match self {
            AttackPlan::None { .. } => 0.0,
            AttackPlan::A1(p) => p.eps,
            AttackPlan::A2(p) => p.predicted_eps,
        }
    }

    /// Predicted weighted MSE. `𝒜₁` meets the converse bound.
    pub fn predicted_pw(&self, d: &KalmanDesign, ny: usize) -> f64 {
        match self {
            AttackPlan::None { .. } => d.baseline_mse,
            AttackPlan::A1(p) => converse_bound(p.eps, d, ny).bound,
            AttackPlan::A2(p) => p.predicted_pw,
        }
    }

    /// Stationary covariance of the attacked innovation, when the attack
    /// keeps it i.i.d. Gaussian (`𝒜₁` and no attack).
    pub fn iid_innovation_covariance(&self, d: &KalmanDesign) -> Option<Matrix> {
        match self {
            AttackPlan::None { .. } => Some(d.innovation_covariance.clone()),
            AttackPlan::A1(p) => Some(&d.innovation_covariance + &p.zeta_covariance),
            AttackPlan::A2(_) => None,
        }
    }

    pub fn runtime(&self, stream: u64) -> Box<dyn InputAttack + '_> {
        match self {
            AttackPlan::None { nx } => Box::new(NoAttack { nx: *nx }),
            AttackPlan::A1(p) => Box::new(p.runtime(stream)),
            AttackPlan::A2(p) => Box::new(p.runtime(stream)),
        }
    }

    /// Plan file contents: scalar fields under `[plan]` plus matrix blocks.
    pub fn to_document(&self) -> Document {
        let mut plan = Section::new("plan").with("kind", self.kind()).with("eps", format!("{:?}", self.eps()));
        let mut matrices = Vec::new();
        match self {
            AttackPlan::None { .. } => {}
            AttackPlan::A1(p) => {
                plan = plan
                    .with("seed", p.seed)
                    .with("preview", p.inverse.preview())
                    .with("delay", p.inverse.delay());
                matrices.push(("zeta_covariance".to_string(), p.zeta_covariance.clone()));
            }
            AttackPlan::A2(p) => {
                let schedule: Vec<String> = p.eta_schedule.iter().map(|e| format!("{e:?}")).collect();
                plan = plan
                    .with("seed", p.seed)
                    .with("alpha", format!("{:?}", p.alpha))
                    .with("predicted_eps", format!("{:?}", p.predicted_eps))
                    .with("predicted_pw", format!("{:?}", p.predicted_pw))
                    .with("shaping_mismatch", format!("{:?}", p.shaping_mismatch))
                    .with("eta_schedule", schedule.join(" "));
                matrices.push(("L".to_string(), p.gain.clone()));
                matrices.push(("sigma_zeta".to_string(), p.sigma_zeta.clone()));
                matrices.push(("sigma_e".to_string(), p.sigma_e.clone()));
                matrices.push(("S".to_string(), p.s.clone()));
            }
        }
        Document {
            sections: vec![plan],
            matrices,
        }
    }

    /// Rebuilds a plan for `m`. The stored gain and scale are reused; derived
    /// quantities are recomputed from them.
    pub fn from_document(doc: &Document, m: &StateSpaceModel, d: &KalmanDesign) -> Result<Self> {
        let s = doc.require_section("plan")?;
        let kind: AttackKind = s.require("kind")?.parse()?;
        let eps: f64 = s.parse_value("eps")?;
        Ok(match kind {
            AttackKind::None => AttackPlan::None { nx: m.nx() },
            AttackKind::A1 => {
                let seed = s.parse_value("seed")?;
                let preview = s.parse_value("preview")?;
                let zeta = doc.require_matrix("zeta_covariance")?.clone();
                AttackPlan::A1(AttackPlanA1::from_parts(m, d, eps, seed, preview, zeta)?)
            }
            AttackKind::A2 => {
                let seed = s.parse_value("seed")?;
                let alpha = s.parse_value("alpha")?;
                let schedule = s
                    .require("eta_schedule")?
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::parse(0, 0, format!("invalid η `{t}`"))))
                    .collect::<Result<Vec<_>>>()?;
                let gain = doc.require_matrix("L")?.clone();
                AttackPlan::A2(AttackPlanA2::from_parts(m, d, eps, seed, schedule, gain, alpha)?)
            }
        })
    }
}
