//! Nonparametric KL trust-region policy optimization for demand-response
//! electricity pricing.
//!
//! The library pairs a price-elastic demand-response market simulator with an
//! on-policy actor-critic trainer whose policy update is computed in closed
//! form: advantages exponentially tilt the current policy, with the tilt
//! temperature set by globally solving a one-dimensional dual problem under a
//! KL trust-region constraint. Policies are nonparametric — tabular
//! categorical distributions over a price grid, or weighted particle sets for
//! continuous prices — so the update never projects onto a parametric family.
//!
//! Modules:
//! - [`market`]: the pricing environment (elastic consumption, profit/cost
//!   reward).
//! - [`mdp`]: observations, actions, trajectories, returns.
//! - [`statekey`]: keying of observations for the tabular policy and values.
//! - [`advantage`]: Monte Carlo / n-step / GAE estimation and the value table.
//! - [`dual`]: the trust-region dual objective, gradient, and basin-hopping
//!   solve.
//! - [`policy`]: categorical and particle policies and the tilt update.
//! - [`trainer`]: the outer training loop, evaluation, and metrics.
//! - [`qlearn`]: tabular Q-learning comparator.
//! - [`config`]: run configuration file loading and overrides.

// validation uses `!(x > 0.0)` on purpose: the negation also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advantage;
pub mod config;
pub mod dual;
pub mod error;
pub mod market;
pub mod mdp;
pub mod policy;
pub mod qlearn;
pub mod statekey;
pub mod trainer;

pub use error::{Error, Result};
