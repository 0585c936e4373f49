//! MDP interaction contract shared by the environment, estimators, and trainer:
//! observations, price actions, trajectories, and discounted returns.
//!
//! All types are immutable value records after construction and can be shared
//! freely between concurrent workers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A (critical, curtailable) kWh pair, used for both demand and consumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandPair {
    pub critical: f64,
    pub curtailable: f64,
}

impl DemandPair {
    pub fn new(critical: f64, curtailable: f64) -> Self {
        Self {
            critical,
            curtailable,
        }
    }

    pub fn zero() -> Self {
        Self {
            critical: 0.0,
            curtailable: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.critical + self.curtailable
    }
}

/// Environment observation at the start of hour `t`.
///
/// Carries the hour's base demands and the *previous* hour's realized
/// consumption (zeros at t=1). Consumption of the current hour is only known
/// after the price action is applied, so it is part of the transition output,
/// which keeps the step function causal.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Time step, 1-based, in `1..=horizon`.
    pub t: usize,
    /// Per-customer base demand for hour `t`.
    pub base_demand: Vec<DemandPair>,
    /// Per-customer consumption realized in hour `t-1` (zeros at t=1).
    pub prev_consumption: Vec<DemandPair>,
}

impl Observation {
    pub fn n_customers(&self) -> usize {
        self.base_demand.len()
    }

    /// Total base demand across customers and load classes.
    pub fn total_base_demand(&self) -> f64 {
        self.base_demand.iter().map(|d| d.total()).sum()
    }
}

/// Per-customer retail prices in $/kWh for one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceAction {
    pub prices: Vec<f64>,
}

impl PriceAction {
    pub fn new(prices: Vec<f64>) -> Self {
        Self { prices }
    }

    /// Same price for every customer.
    pub fn uniform(price: f64, n_customers: usize) -> Self {
        Self {
            prices: vec![price; n_customers],
        }
    }
}

/// One collected transition.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub obs: Observation,
    pub action: PriceAction,
    /// Realized per-customer consumption for the hour.
    pub consumption: Vec<DemandPair>,
    pub reward: f64,
    pub per_customer_reward: Vec<f64>,
}

/// A (possibly partial) episode.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// True when the episode ran to the horizon.
    pub complete: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    /// Debug dump: one comma-separated record per step with columns
    /// t, per-customer price, per-customer demand pair, per-customer
    /// consumption pair, reward.
    pub fn write_records<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let n = self.steps.first().map(|s| s.obs.n_customers()).unwrap_or(0);
        let mut header = vec!["t".to_string()];
        for c in 0..n {
            header.push(format!("price_{}", c + 1));
        }
        for c in 0..n {
            header.push(format!("dcrit_{}", c + 1));
            header.push(format!("dcurt_{}", c + 1));
        }
        for c in 0..n {
            header.push(format!("ccrit_{}", c + 1));
            header.push(format!("ccurt_{}", c + 1));
        }
        header.push("reward".to_string());
        writeln!(w, "{}", header.join(","))?;
        for step in &self.steps {
            let mut row = vec![step.obs.t.to_string()];
            for p in &step.action.prices {
                row.push(p.to_string());
            }
            for d in &step.obs.base_demand {
                row.push(d.critical.to_string());
                row.push(d.curtailable.to_string());
            }
            for c in &step.consumption {
                row.push(c.critical.to_string());
                row.push(c.curtailable.to_string());
            }
            row.push(step.reward.to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Discount factor in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountSpec {
    factor: f64,
}

impl DiscountSpec {
    pub fn new(factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::invalid_config(
                "discount",
                format!("must be in (0, 1], got {factor}"),
            ));
        }
        Ok(Self { factor })
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    /// Undiscounted returns.
    pub fn undiscounted() -> Self {
        Self { factor: 1.0 }
    }
}

/// Total discounted return from step `t` (1-based) to the end of a complete
/// trajectory.
pub fn total_return(traj: &Trajectory, disc: DiscountSpec, t: usize) -> Result<f64> {
    if !traj.complete {
        return Err(Error::IncompleteTrajectory);
    }
    if t == 0 || t > traj.len() {
        return Err(Error::StepOutOfRange { t, len: traj.len() });
    }
    let lambda = disc.factor();
    let mut ret = 0.0;
    let mut weight = 1.0;
    for step in &traj.steps[t - 1..] {
        ret += weight * step.reward;
        weight *= lambda;
    }
    Ok(ret)
}

/// Undiscounted sum of step rewards; the learning-curve metric.
pub fn episode_reward(traj: &Trajectory) -> f64 {
    traj.rewards().sum()
}
