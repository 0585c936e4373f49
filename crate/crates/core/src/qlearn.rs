//! Tabular Q-learning comparator for the discrete action mode.
//!
//! One Q-table per customer over (state key, grid price), epsilon-greedy
//! behavior with a linearly decaying epsilon, standard one-step update on the
//! per-customer reward attribution. This exists to anchor comparisons on
//! equal environment interactions, not to reproduce any published baseline
//! curve.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::market::{self, MarketConfig};
use crate::mdp::PriceAction;
use crate::policy::{CategoricalDist, CategoricalPolicy};
use crate::statekey::{key_of, StateKey};
use crate::trainer::{ActionMode, MetricsRecord, TrainConfig};

struct QTables {
    /// values[key][customer][grid index]
    values: BTreeMap<StateKey, Vec<Vec<f64>>>,
    n_customers: usize,
    n_actions: usize,
}

impl QTables {
    fn new(n_customers: usize, n_actions: usize) -> Self {
        Self {
            values: BTreeMap::new(),
            n_customers,
            n_actions,
        }
    }

    fn row(&mut self, key: StateKey) -> &mut Vec<Vec<f64>> {
        let (n, a) = (self.n_customers, self.n_actions);
        self.values
            .entry(key)
            .or_insert_with(|| vec![vec![0.0; a]; n])
    }

    fn max_value(&self, key: StateKey, customer: usize) -> f64 {
        self.values
            .get(&key)
            .map(|rows| {
                rows[customer]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .unwrap_or(0.0)
    }
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Train the comparator and return its greedy policy (ties break to the
/// lowest grid index) plus per-iteration metrics on the same episode budget
/// as `train`. The dual columns are zero; `value_loss` carries the mean
/// squared TD error.
pub fn train_qlearning(
    market: &MarketConfig,
    cfg: &TrainConfig,
) -> Result<(CategoricalPolicy, Vec<MetricsRecord>)> {
    market.validate()?;
    cfg.validate(market)?;
    if cfg.action_mode != ActionMode::Discrete {
        return Err(Error::InvalidArgument(
            "the Q-learning comparator requires the discrete action mode".into(),
        ));
    }
    let grid = market
        .price_grid()
        .ok_or_else(|| Error::invalid_config("price_grid_step", "discrete mode requires a grid"))?;
    let n = market.n_customers;
    let lambda = cfg.discount.factor();
    let lr = cfg.qlearn.learning_rate;
    let total_episodes = cfg.iterations * cfg.episodes_per_iteration;

    let mut q = QTables::new(n, grid.len());
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut metrics = Vec::with_capacity(cfg.iterations);
    let mut ep_rewards = Vec::with_capacity(cfg.episodes_per_iteration);
    let mut td_sq_sum = 0.0;
    let mut td_count = 0usize;

    for episode in 0..total_episodes {
        let eps = if total_episodes > 1 {
            let frac = episode as f64 / (total_episodes - 1) as f64;
            cfg.qlearn.epsilon_start + (cfg.qlearn.epsilon_end - cfg.qlearn.epsilon_start) * frac
        } else {
            cfg.qlearn.epsilon_start
        };

        let env_seed = rng.gen::<u64>();
        let (mut obs, mut env_rng) = market::reset(market, env_seed)?;
        let mut total = 0.0;
        loop {
            let key = key_of(&obs, cfg.scheme);
            let indices: Vec<usize> = {
                let rows = q.row(key);
                let mut picks = Vec::with_capacity(n);
                for row in rows.iter() {
                    let pick = if rng.gen::<f64>() < eps {
                        rng.gen_range(0..row.len())
                    } else {
                        argmax_first(row)
                    };
                    picks.push(pick);
                }
                picks
            };
            let action = PriceAction::new(indices.iter().map(|&i| grid[i]).collect());
            let (next, outcome) = market::step(market, &obs, &action, &mut env_rng)?;
            if !outcome.reward.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("reward at t={}", obs.t),
                });
            }
            total += outcome.reward;

            let next_max: Vec<f64> = (0..n)
                .map(|c| match &next {
                    Some(o) => {
                        let m = q.max_value(key_of(o, cfg.scheme), c);
                        if m == f64::NEG_INFINITY {
                            0.0
                        } else {
                            m
                        }
                    }
                    None => 0.0,
                })
                .collect();
            let rows = q.row(key);
            for c in 0..n {
                let current = rows[c][indices[c]];
                let td = outcome.per_customer_reward[c] + lambda * next_max[c] - current;
                rows[c][indices[c]] = current + lr * td;
                td_sq_sum += td * td;
                td_count += 1;
            }

            match next {
                Some(o) => obs = o,
                None => break,
            }
        }
        ep_rewards.push(total);

        if ep_rewards.len() == cfg.episodes_per_iteration {
            let mean = ep_rewards.iter().sum::<f64>() / ep_rewards.len() as f64;
            let std = if ep_rewards.len() > 1 {
                (ep_rewards
                    .iter()
                    .map(|r| (r - mean) * (r - mean))
                    .sum::<f64>()
                    / (ep_rewards.len() - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            metrics.push(MetricsRecord {
                iteration: metrics.len(),
                mean_reward: mean,
                std_reward: std,
                beta_star: 0.0,
                expected_kl: 0.0,
                value_loss: if td_count > 0 {
                    td_sq_sum / td_count as f64
                } else {
                    0.0
                },
                seconds: start.elapsed().as_secs_f64(),
            });
            ep_rewards.clear();
            td_sq_sum = 0.0;
            td_count = 0;
        }
    }

    let mut policy = CategoricalPolicy::new_factored(grid.clone(), n)?;
    for (key, rows) in &q.values {
        let dists = rows
            .iter()
            .map(|row| {
                let mut probs = vec![0.0; row.len()];
                probs[argmax_first(row)] = 1.0;
                probs
            })
            .collect();
        policy.set_dist(*key, CategoricalDist::Factored(dists))?;
    }
    Ok((policy, metrics))
}
