//! Return and advantage estimation (Monte Carlo, n-step TD, GAE) and the
//! tabular value-baseline update.
//!
//! The value estimator is a plain table over state keys; the update rule is
//! one exact gradient step on the summed squared return residuals, which is
//! the tabular specialization of the usual value regression.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::mdp::{total_return, DiscountSpec, Trajectory};
use crate::statekey::{key_of, KeyScheme, StateKey};

/// Tabular state-value estimates. Unseen keys read as 0.
#[derive(Debug, Clone)]
pub struct ValueTable {
    values: BTreeMap<StateKey, f64>,
    pub learning_rate: f64,
}

impl ValueTable {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            values: BTreeMap::new(),
            learning_rate,
        }
    }

    pub fn get(&self, key: StateKey) -> f64 {
        self.values.get(&key).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, key: StateKey, value: f64) {
        self.values.insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &f64)> {
        self.values.iter()
    }
}

/// Identifies the action an advantage entry refers to.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionRef {
    /// Index into the per-customer price grid (factored categorical parts).
    GridIndex(usize),
    /// Flattened index into the joint action grid (joint categorical parts).
    JointIndex(usize),
    /// Index into the state's particle set.
    ParticleIndex(usize),
    /// Raw sampled price vector (estimator output batches).
    Prices(Vec<f64>),
}

/// One (action, advantage, old-policy probability-or-weight) triple.
#[derive(Debug, Clone)]
pub struct AdvantageEntry {
    pub action: ActionRef,
    pub advantage: f64,
    pub weight: f64,
}

/// One factor of a state group. Factored categorical batches carry one part
/// per customer; joint and particle batches carry a single part.
#[derive(Debug, Clone, Default)]
pub struct GroupPart {
    pub entries: Vec<AdvantageEntry>,
}

/// Entries for one visited state.
#[derive(Debug, Clone)]
pub struct StateGroup {
    /// Empirical visit weight of the state (count, or discount-weighted count).
    pub visits: f64,
    pub parts: Vec<GroupPart>,
}

/// Sampled (state, action, advantage) triples grouped by state key: the
/// empirical stand-in for expectations over the on-policy state distribution.
#[derive(Debug, Clone, Default)]
pub struct AdvantageBatch {
    groups: BTreeMap<StateKey, StateGroup>,
}

impl AdvantageBatch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_groups(groups: BTreeMap<StateKey, StateGroup>) -> Self {
        Self { groups }
    }

    pub fn groups(&self) -> &BTreeMap<StateKey, StateGroup> {
        &self.groups
    }

    pub fn insert(&mut self, key: StateKey, group: StateGroup) {
        self.groups.insert(key, group);
    }

    pub fn group(&self, key: &StateKey) -> Option<&StateGroup> {
        self.groups.get(key)
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Total number of advantage entries across all groups and parts.
    pub fn total_count(&self) -> usize {
        self.groups
            .values()
            .map(|g| g.parts.iter().map(|p| p.entries.len()).sum::<usize>())
            .sum()
    }

    /// Visit weights per key, as used for expectations over states.
    pub fn visit_weights(&self) -> BTreeMap<StateKey, f64> {
        self.groups.iter().map(|(k, g)| (*k, g.visits)).collect()
    }

    /// Checks the batch invariants: non-empty groups with positive visit
    /// weight, finite advantages, and nonnegative weights with positive mass.
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for (key, group) in &self.groups {
            if group.parts.is_empty() || !(group.visits > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "state group {key} is empty or has nonpositive visit weight"
                )));
            }
            for part in &group.parts {
                if part.entries.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "state group {key} has an empty part"
                    )));
                }
                let mut mass = 0.0;
                for entry in &part.entries {
                    if !entry.advantage.is_finite() {
                        return Err(Error::NonFinite {
                            context: format!("advantage in state group {key}"),
                        });
                    }
                    if !(entry.weight >= 0.0) || !entry.weight.is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "negative or non-finite weight in state group {key}"
                        )));
                    }
                    mass += entry.weight;
                }
                if !(mass > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "state group {key} has zero total weight"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// n-step return: discounted rewards for `n` steps then a bootstrap from the
/// value table; truncates to the Monte-Carlo return at the episode end.
pub fn nstep_return(
    traj: &Trajectory,
    t: usize,
    n: usize,
    values: &ValueTable,
    disc: DiscountSpec,
    scheme: KeyScheme,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n-step requires n >= 1".into()));
    }
    if t == 0 || t > traj.len() {
        return Err(Error::StepOutOfRange { t, len: traj.len() });
    }
    let lambda = disc.factor();
    let mut ret = 0.0;
    let mut weight = 1.0;
    let last = (t + n - 1).min(traj.len());
    for step in &traj.steps[t - 1..last] {
        ret += weight * step.reward;
        weight *= lambda;
    }
    // bootstrap only when the window ends strictly inside the episode
    if t + n <= traj.len() {
        let boot_key = key_of(&traj.steps[t + n - 1].obs, scheme);
        ret += weight * values.get(boot_key);
    }
    Ok(ret)
}

/// Monte-Carlo advantages for each step of a complete trajectory.
pub fn mc_advantage_seq(
    traj: &Trajectory,
    values: &ValueTable,
    disc: DiscountSpec,
    scheme: KeyScheme,
) -> Result<Vec<f64>> {
    if !traj.complete {
        return Err(Error::IncompleteTrajectory);
    }
    let lambda = disc.factor();
    let mut returns = vec![0.0; traj.len()];
    let mut acc = 0.0;
    for (i, step) in traj.steps.iter().enumerate().rev() {
        acc = step.reward + lambda * acc;
        returns[i] = acc;
    }
    Ok(traj
        .steps
        .iter()
        .zip(returns)
        .map(|(step, ret)| ret - values.get(key_of(&step.obs, scheme)))
        .collect())
}

/// GAE advantages for each step of a complete trajectory; the terminal value
/// is 0.
pub fn gae_advantage_seq(
    traj: &Trajectory,
    values: &ValueTable,
    disc: DiscountSpec,
    gae_lambda: f64,
    scheme: KeyScheme,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&gae_lambda) {
        return Err(Error::InvalidArgument(format!(
            "gae_lambda must be in [0, 1], got {gae_lambda}"
        )));
    }
    if !traj.complete {
        return Err(Error::IncompleteTrajectory);
    }
    let lambda = disc.factor();
    let mut advantages = vec![0.0; traj.len()];
    let mut acc = 0.0;
    for i in (0..traj.len()).rev() {
        let v_here = values.get(key_of(&traj.steps[i].obs, scheme));
        let v_next = if i + 1 < traj.len() {
            values.get(key_of(&traj.steps[i + 1].obs, scheme))
        } else {
            0.0
        };
        let delta = traj.steps[i].reward + lambda * v_next - v_here;
        acc = delta + lambda * gae_lambda * acc;
        advantages[i] = acc;
    }
    Ok(advantages)
}

/// n-step TD advantages: n-step return minus the state value.
pub fn nstep_advantage_seq(
    traj: &Trajectory,
    values: &ValueTable,
    disc: DiscountSpec,
    n: usize,
    scheme: KeyScheme,
) -> Result<Vec<f64>> {
    if !traj.complete {
        return Err(Error::IncompleteTrajectory);
    }
    (1..=traj.len())
        .map(|t| {
            let ret = nstep_return(traj, t, n, values, disc, scheme)?;
            Ok(ret - values.get(key_of(&traj.steps[t - 1].obs, scheme)))
        })
        .collect()
}

fn group_sampled(trajs: &[(&Trajectory, Vec<f64>)], scheme: KeyScheme) -> AdvantageBatch {
    let mut groups: BTreeMap<StateKey, StateGroup> = BTreeMap::new();
    for (traj, advantages) in trajs {
        for (step, &a_hat) in traj.steps.iter().zip(advantages) {
            let key = key_of(&step.obs, scheme);
            let group = groups.entry(key).or_insert_with(|| StateGroup {
                visits: 0.0,
                parts: vec![GroupPart::default()],
            });
            group.visits += 1.0;
            group.parts[0].entries.push(AdvantageEntry {
                action: ActionRef::Prices(step.action.prices.clone()),
                advantage: a_hat,
                weight: 1.0,
            });
        }
    }
    AdvantageBatch::from_groups(groups)
}

/// Monte-Carlo advantages grouped by state key.
pub fn mc_advantages(
    traj: &Trajectory,
    values: &ValueTable,
    disc: DiscountSpec,
    scheme: KeyScheme,
) -> Result<AdvantageBatch> {
    let adv = mc_advantage_seq(traj, values, disc, scheme)?;
    Ok(group_sampled(&[(traj, adv)], scheme))
}

/// GAE advantages grouped by state key.
pub fn gae_advantages(
    traj: &Trajectory,
    values: &ValueTable,
    disc: DiscountSpec,
    gae_lambda: f64,
    scheme: KeyScheme,
) -> Result<AdvantageBatch> {
    let adv = gae_advantage_seq(traj, values, disc, gae_lambda, scheme)?;
    Ok(group_sampled(&[(traj, adv)], scheme))
}

/// One gradient step on the summed squared return residuals over a batch of
/// complete trajectories: V <- V + 2a * sum_visits (R_t - V). Returns the mean
/// squared residual before the step.
pub fn value_update(
    values: &mut ValueTable,
    trajs: &[Trajectory],
    disc: DiscountSpec,
    scheme: KeyScheme,
) -> Result<f64> {
    let mut residual_sums: BTreeMap<StateKey, f64> = BTreeMap::new();
    let mut loss = 0.0;
    let mut count = 0usize;
    for traj in trajs {
        if !traj.complete {
            return Err(Error::IncompleteTrajectory);
        }
        for t in 1..=traj.len() {
            let key = key_of(&traj.steps[t - 1].obs, scheme);
            let ret = total_return(traj, disc, t)?;
            let resid = ret - values.get(key);
            *residual_sums.entry(key).or_insert(0.0) += resid;
            loss += resid * resid;
            count += 1;
        }
    }
    let lr = values.learning_rate;
    for (key, sum) in residual_sums {
        let v = values.get(key);
        values.set(key, v + 2.0 * lr * sum);
    }
    Ok(if count > 0 { loss / count as f64 } else { 0.0 })
}
