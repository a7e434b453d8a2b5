//! Stealthy actuator attacks on linear plants monitored by a Kalman filter:
//! the converse bound on the damage an `ε`-stealthy attacker can do, the
//! attacks that reach it, Monte Carlo simulation and detectors.
//!
//! Start with [`fixtures`], [`kalman::design`] and [`attacks::AttackPlan`].

pub mod attacks;
pub mod detect;
pub mod error;
pub mod fixtures;
pub mod kalman;
pub mod matnum;
pub mod model;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod stealth;
pub mod textfmt;

pub use error::{Error, Result};

// The guide's snippets run as doctests.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/plants.md")]
    mod plants {}
    #[doc = include_str!("../../../book/src/filter.md")]
    mod filter {}
    #[doc = include_str!("../../../book/src/stealth.md")]
    mod stealth {}
    #[doc = include_str!("../../../book/src/attacks.md")]
    mod attacks {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
