//! The outer training loop — collect, estimate, value-update, tilt — plus
//! evaluation rollouts and metric emission.
//!
//! Each iteration collects complete episodes under the current policy,
//! estimates advantages with the selected estimator, takes one value-table
//! gradient step, solves the trust-region dual for the tilt temperature, and
//! applies the closed-form policy update. Because the reward is a sum of
//! per-customer terms and the exogenous signals are keyed by the state, the
//! advantage of any grid price (or particle) at a visited state can be
//! evaluated counterfactually from the observed demands; profiles are
//! anchored to the estimator's sampled-action advantages so the estimator
//! choice flows through the reported dual objective. Per-state constants do
//! not change the tilt or the optimal temperature.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::advantage::{
    gae_advantage_seq, mc_advantage_seq, nstep_advantage_seq, value_update, ActionRef,
    AdvantageBatch, AdvantageEntry, GroupPart, StateGroup, ValueTable,
};
use crate::dual::{solve_beta, TrustRegionSpec};
use crate::error::{Error, Result};
use crate::market::{self, customer_terms, MarketConfig};
use crate::mdp::{episode_reward, DiscountSpec, PriceAction, Trajectory, TrajectoryStep};
use crate::policy::{
    expected_advantage, expected_kl, mix64, tilt_categorical, tilt_particles, CategoricalPolicy,
    ParticlePolicy, PolicyKind,
};
use crate::statekey::{key_of, KeyScheme, StateKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMode {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    None,
    Random,
    QLearning,
}

/// Advantage estimator selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    MonteCarlo,
    Gae { lambda: f64 },
    NStep { n: usize },
}

impl EstimatorKind {
    pub fn advantage_seq(
        &self,
        traj: &Trajectory,
        values: &ValueTable,
        disc: DiscountSpec,
        scheme: KeyScheme,
    ) -> Result<Vec<f64>> {
        match *self {
            EstimatorKind::MonteCarlo => mc_advantage_seq(traj, values, disc, scheme),
            EstimatorKind::Gae { lambda } => gae_advantage_seq(traj, values, disc, lambda, scheme),
            EstimatorKind::NStep { n } => nstep_advantage_seq(traj, values, disc, n, scheme),
        }
    }
}

/// Particle-policy hyperparameters (continuous action mode).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleParams {
    pub per_state: usize,
    pub bandwidth: f64,
    pub resample_threshold: f64,
}

impl Default for ParticleParams {
    fn default() -> Self {
        Self {
            per_state: 25,
            bandwidth: 0.25,
            resample_threshold: 0.5,
        }
    }
}

/// Q-learning comparator hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLearnParams {
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
}

impl Default for QLearnParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
        }
    }
}

/// Everything the training loop needs besides the market itself.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub seed: u64,
    pub trust: TrustRegionSpec,
    pub discount: DiscountSpec,
    pub estimator: EstimatorKind,
    pub value_lr: f64,
    pub scheme: KeyScheme,
    pub action_mode: ActionMode,
    pub baseline: BaselineKind,
    pub particle: ParticleParams,
    pub qlearn: QLearnParams,
    /// Weight state visits by the discount when approximating the discounted
    /// visitation distribution; plain visit counts otherwise.
    pub rho_weighted_states: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            episodes_per_iteration: 8,
            seed: 1,
            trust: TrustRegionSpec::default(),
            discount: DiscountSpec::undiscounted(),
            estimator: EstimatorKind::MonteCarlo,
            value_lr: 0.05,
            scheme: KeyScheme::TimeOnly,
            action_mode: ActionMode::Discrete,
            baseline: BaselineKind::None,
            particle: ParticleParams::default(),
            qlearn: QLearnParams::default(),
            rho_weighted_states: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, market: &MarketConfig) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid_config("iterations", "must be >= 1"));
        }
        if self.episodes_per_iteration == 0 {
            return Err(Error::invalid_config(
                "episodes_per_iteration",
                "must be >= 1",
            ));
        }
        if !(self.value_lr > 0.0) {
            return Err(Error::invalid_config("value_lr", "must be > 0"));
        }
        self.trust.validate()?;
        self.scheme.validate()?;
        match self.action_mode {
            ActionMode::Discrete => {
                if market.price_grid_step.is_none() {
                    return Err(Error::invalid_config(
                        "price_grid_step",
                        "discrete action mode requires a configured price grid",
                    ));
                }
            }
            ActionMode::Continuous => {
                if market.price_grid_step.is_some() {
                    return Err(Error::invalid_config(
                        "price_grid_step",
                        "continuous action mode must not configure a price grid",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub beta_star: f64,
    pub expected_kl: f64,
    pub value_loss: f64,
    pub seconds: f64,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "iteration,mean_reward,std_reward,beta_star,expected_kl,value_loss,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.iteration,
            self.mean_reward,
            self.std_reward,
            self.beta_star,
            self.expected_kl,
            self.value_loss,
            self.seconds
        )
    }

    pub fn is_finite(&self) -> bool {
        self.mean_reward.is_finite()
            && self.std_reward.is_finite()
            && self.beta_star.is_finite()
            && self.expected_kl.is_finite()
            && self.value_loss.is_finite()
            && self.seconds.is_finite()
    }
}

/// The metrics table in its CSV wire format.
pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(MetricsRecord::CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Roll one complete episode under the policy.
pub fn collect_episode(
    market: &MarketConfig,
    policy: &PolicyKind,
    scheme: KeyScheme,
    env_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let (mut obs, mut env_rng) = market::reset(market, env_seed)?;
    let mut traj = Trajectory::default();
    loop {
        let key = key_of(&obs, scheme);
        let action = policy.sample_action(key, rng);
        let (next, outcome) = market::step(market, &obs, &action, &mut env_rng)?;
        if !outcome.reward.is_finite() {
            return Err(Error::NonFinite {
                context: format!("reward at t={}", obs.t),
            });
        }
        traj.steps.push(TrajectoryStep {
            obs: obs.clone(),
            action,
            consumption: outcome.consumption,
            reward: outcome.reward,
            per_customer_reward: outcome.per_customer_reward,
        });
        match next {
            Some(o) => obs = o,
            None => break,
        }
    }
    traj.complete = true;
    Ok(traj)
}

struct KeyAccumulator {
    visits: f64,
    count: f64,
    /// Per part (customer, or the single particle part), per action: summed
    /// centered advantage contributions.
    sums: Vec<Vec<f64>>,
}

/// Exhaustive per-customer advantage profiles over the price grid for every
/// visited key, anchored to the estimator's sampled-action advantages.
fn build_categorical_batch(
    market: &MarketConfig,
    policy: &CategoricalPolicy,
    estimated: &[(Trajectory, Vec<f64>)],
    scheme: KeyScheme,
    disc: DiscountSpec,
    rho_weighted: bool,
) -> Result<AdvantageBatch> {
    let grid = policy.grid().to_vec();
    let n = policy.n_customers();
    let mut accs: BTreeMap<StateKey, KeyAccumulator> = BTreeMap::new();
    for (traj, est_advs) in estimated {
        for (step, &est) in traj.steps.iter().zip(est_advs) {
            let key = key_of(&step.obs, scheme);
            let probs = policy.factored_probs(key)?;
            let acc = accs.entry(key).or_insert_with(|| KeyAccumulator {
                visits: 0.0,
                count: 0.0,
                sums: vec![vec![0.0; grid.len()]; n],
            });
            acc.visits += if rho_weighted {
                disc.factor().powi(step.obs.t as i32 - 1)
            } else {
                1.0
            };
            acc.count += 1.0;

            // counterfactual one-step reward profile per customer
            let mut centered = vec![vec![0.0; grid.len()]; n];
            let mut mean_total = 0.0;
            for c in 0..n {
                let demand = step.obs.base_demand[c];
                let mut mean = 0.0;
                for (g, &price) in grid.iter().enumerate() {
                    let u = customer_terms(market, step.obs.t, c, demand, price).reward;
                    centered[c][g] = u;
                    mean += probs[c][g] * u;
                }
                for v in &mut centered[c] {
                    *v -= mean;
                }
                mean_total += mean;
            }
            // action-independent residual of the estimated advantage
            let residual = est - (step.reward - mean_total);
            for (sums_row, centered_row) in acc.sums.iter_mut().zip(&centered) {
                for (s, v) in sums_row.iter_mut().zip(centered_row) {
                    *s += v + residual / n as f64;
                }
            }
        }
    }

    let mut batch = AdvantageBatch::new();
    for (key, acc) in accs {
        let probs = policy.factored_probs(key)?;
        let parts = (0..n)
            .map(|c| GroupPart {
                entries: (0..grid.len())
                    .map(|g| AdvantageEntry {
                        action: ActionRef::GridIndex(g),
                        advantage: acc.sums[c][g] / acc.count,
                        weight: probs[c][g],
                    })
                    .collect(),
            })
            .collect();
        batch.insert(
            key,
            StateGroup {
                visits: acc.visits,
                parts,
            },
        );
    }
    Ok(batch)
}

/// Per-particle advantage profiles for every visited key, anchored the same
/// way as the categorical batch.
fn build_particle_batch(
    market: &MarketConfig,
    policy: &ParticlePolicy,
    estimated: &[(Trajectory, Vec<f64>)],
    scheme: KeyScheme,
    disc: DiscountSpec,
    rho_weighted: bool,
) -> Result<AdvantageBatch> {
    let n = policy.n_customers();
    let mut accs: BTreeMap<StateKey, KeyAccumulator> = BTreeMap::new();
    for (traj, est_advs) in estimated {
        for (step, &est) in traj.steps.iter().zip(est_advs) {
            let key = key_of(&step.obs, scheme);
            let particles = policy.particles(key);
            let acc = accs.entry(key).or_insert_with(|| KeyAccumulator {
                visits: 0.0,
                count: 0.0,
                sums: vec![vec![0.0; particles.len()]],
            });
            acc.visits += if rho_weighted {
                disc.factor().powi(step.obs.t as i32 - 1)
            } else {
                1.0
            };
            acc.count += 1.0;

            let mut utilities = vec![0.0; particles.len()];
            let mut mean = 0.0;
            for (i, particle) in particles.iter().enumerate() {
                let mut u = 0.0;
                for c in 0..n {
                    u += customer_terms(
                        market,
                        step.obs.t,
                        c,
                        step.obs.base_demand[c],
                        particle.prices[c],
                    )
                    .reward;
                }
                utilities[i] = u;
                mean += particle.weight * u;
            }
            let residual = est - (step.reward - mean);
            for (i, u) in utilities.iter().enumerate() {
                acc.sums[0][i] += u - mean + residual;
            }
        }
    }

    let mut batch = AdvantageBatch::new();
    for (key, acc) in accs {
        let particles = policy.particles(key);
        let entries = (0..particles.len())
            .map(|i| AdvantageEntry {
                action: ActionRef::ParticleIndex(i),
                advantage: acc.sums[0][i] / acc.count,
                weight: particles[i].weight,
            })
            .collect();
        batch.insert(
            key,
            StateGroup {
                visits: acc.visits,
                parts: vec![GroupPart { entries }],
            },
        );
    }
    Ok(batch)
}

fn initial_policy(market: &MarketConfig, cfg: &TrainConfig) -> Result<PolicyKind> {
    match cfg.action_mode {
        ActionMode::Discrete => {
            let grid = market.price_grid().ok_or_else(|| {
                Error::invalid_config("price_grid_step", "discrete mode requires a grid")
            })?;
            Ok(PolicyKind::Categorical(CategoricalPolicy::new_factored(
                grid,
                market.n_customers,
            )?))
        }
        ActionMode::Continuous => Ok(PolicyKind::Particle(ParticlePolicy::new(
            market.n_customers,
            cfg.particle.per_state,
            cfg.particle.bandwidth,
            market.price_min,
            market.price_max,
            cfg.particle.resample_threshold,
            cfg.seed,
        )?)),
    }
}

fn train_iteration(
    market: &MarketConfig,
    cfg: &TrainConfig,
    k: usize,
    policy: &mut PolicyKind,
    values: &mut ValueTable,
    rng: &mut ChaCha8Rng,
    start: Instant,
) -> Result<MetricsRecord> {
    let mut trajs = Vec::with_capacity(cfg.episodes_per_iteration);
    let mut ep_rewards = Vec::with_capacity(cfg.episodes_per_iteration);
    for _ in 0..cfg.episodes_per_iteration {
        let env_seed = rng.gen::<u64>();
        let traj = collect_episode(market, policy, cfg.scheme, env_seed, rng)?;
        ep_rewards.push(episode_reward(&traj));
        trajs.push(traj);
    }

    let estimated: Vec<(Trajectory, Vec<f64>)> = trajs
        .iter()
        .map(|t| {
            let advs = cfg
                .estimator
                .advantage_seq(t, values, cfg.discount, cfg.scheme)?;
            Ok((t.clone(), advs))
        })
        .collect::<Result<_>>()?;

    let batch = match &*policy {
        PolicyKind::Categorical(p) => build_categorical_batch(
            market,
            p,
            &estimated,
            cfg.scheme,
            cfg.discount,
            cfg.rho_weighted_states,
        )?,
        PolicyKind::Particle(p) => build_particle_batch(
            market,
            p,
            &estimated,
            cfg.scheme,
            cfg.discount,
            cfg.rho_weighted_states,
        )?,
    };

    let value_loss = value_update(values, &trajs, cfg.discount, cfg.scheme)?;

    let trust = TrustRegionSpec {
        seed: mix64(cfg.seed ^ mix64(k as u64)),
        ..cfg.trust
    };
    let sol = solve_beta(&batch, &trust)?;

    let visits = batch.visit_weights();
    let surrogate_before = expected_advantage(policy, &batch)?;
    let (new_policy, kl, surrogate_after) = match &*policy {
        PolicyKind::Categorical(p) => {
            let tilted = tilt_categorical(p, &batch, sol.beta_star)?;
            let wrapped = PolicyKind::Categorical(tilted);
            let kl = expected_kl(&wrapped, policy, &visits)?;
            let after = expected_advantage(&wrapped, &batch)?;
            (wrapped, kl, after)
        }
        PolicyKind::Particle(p) => {
            let outcome = tilt_particles(p, &batch, sol.beta_star)?;
            let reweighted = PolicyKind::Particle(outcome.tilted);
            let kl = expected_kl(&reweighted, policy, &visits)?;
            let after = expected_advantage(&reweighted, &batch)?;
            (PolicyKind::Particle(outcome.updated), kl, after)
        }
    };
    debug_assert!(
        surrogate_after >= surrogate_before - 1e-9,
        "tilt must not decrease the surrogate ({surrogate_before} -> {surrogate_after})"
    );
    debug_assert!(
        kl <= cfg.trust.delta + 1e-6,
        "trust region violated: kl {kl} > delta {}",
        cfg.trust.delta
    );
    *policy = new_policy;

    let (mean, std) = mean_std(&ep_rewards);
    let record = MetricsRecord {
        iteration: k,
        mean_reward: mean,
        std_reward: std,
        beta_star: sol.beta_star,
        expected_kl: kl,
        value_loss,
        seconds: start.elapsed().as_secs_f64(),
    };
    if !record.is_finite() {
        return Err(Error::NonFinite {
            context: format!("metrics at iteration {k}"),
        });
    }
    Ok(record)
}

/// Run the full training loop. Deterministic given the seed (the wall-clock
/// column aside).
pub fn train(market: &MarketConfig, cfg: &TrainConfig) -> Result<(PolicyKind, Vec<MetricsRecord>)> {
    market.validate()?;
    cfg.validate(market)?;
    let mut policy = initial_policy(market, cfg)?;
    let mut values = ValueTable::new(cfg.value_lr);
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let mut metrics = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        match train_iteration(market, cfg, k, &mut policy, &mut values, &mut rng, start) {
            Ok(record) => metrics.push(record),
            Err(e) => {
                return Err(Error::TrainAbort {
                    iteration: k,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok((policy, metrics))
}

/// Episode rewards of the uniform-random comparator policy, using the same
/// episode budget rules as `train`.
pub fn random_episode_rewards(
    market: &MarketConfig,
    mode: ActionMode,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    market.validate()?;
    let grid = market.price_grid();
    if mode == ActionMode::Discrete && grid.is_none() {
        return Err(Error::invalid_config(
            "price_grid_step",
            "discrete mode requires a grid",
        ));
    }
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut rewards = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let env_seed = rng.gen::<u64>();
        let (mut obs, mut env_rng) = market::reset(market, env_seed)?;
        let mut total = 0.0;
        loop {
            let prices: Vec<f64> = (0..market.n_customers)
                .map(|_| match (mode, &grid) {
                    (ActionMode::Discrete, Some(g)) => g[rng.gen_range(0..g.len())],
                    _ => rng.gen_range(market.price_min..=market.price_max),
                })
                .collect();
            let (next, outcome) =
                market::step(market, &obs, &PriceAction::new(prices), &mut env_rng)?;
            total += outcome.reward;
            match next {
                Some(o) => obs = o,
                None => break,
            }
        }
        rewards.push(total);
    }
    Ok(rewards)
}

/// Metrics for the random baseline, shaped like the training log (the dual
/// and value columns are zero).
pub fn train_random(market: &MarketConfig, cfg: &TrainConfig) -> Result<Vec<MetricsRecord>> {
    let rewards = random_episode_rewards(
        market,
        cfg.action_mode,
        cfg.iterations * cfg.episodes_per_iteration,
        cfg.seed,
    )?;
    let start = Instant::now();
    Ok(rewards
        .chunks(cfg.episodes_per_iteration)
        .enumerate()
        .map(|(k, chunk)| {
            let (mean, std) = mean_std(chunk);
            MetricsRecord {
                iteration: k,
                mean_reward: mean,
                std_reward: std,
                beta_star: 0.0,
                expected_kl: 0.0,
                value_loss: 0.0,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect())
}

/// Per-hour aggregates of an evaluation run.
#[derive(Debug, Clone)]
pub struct HourStats {
    pub hour: usize,
    /// Policy-expected price per customer, averaged over visited states.
    pub mean_price: Vec<f64>,
    /// Mean realized load reduction per customer under the rollout actions.
    pub load_reduction: Vec<f64>,
    /// Mean unit profit (retail minus wholesale) per customer.
    pub unit_profit: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub mean_reward: f64,
    pub hours: Vec<HourStats>,
}

impl EvalSummary {
    /// `hour,customer,mean_price` rows.
    pub fn pricing_csv(&self) -> String {
        let mut out = String::from("hour,customer,mean_price\n");
        for h in &self.hours {
            for (c, p) in h.mean_price.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", h.hour, c + 1, p));
            }
        }
        out
    }

    /// `hour,customer,load_reduction,unit_profit` rows.
    pub fn response_csv(&self) -> String {
        let mut out = String::from("hour,customer,load_reduction,unit_profit\n");
        for h in &self.hours {
            for c in 0..h.load_reduction.len() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    h.hour,
                    c + 1,
                    h.load_reduction[c],
                    h.unit_profit[c]
                ));
            }
        }
        out
    }

    /// Mean over the given hours (1-based) of the per-customer average of a
    /// column.
    pub fn mean_over_hours(&self, hours: &[usize], column: impl Fn(&HourStats) -> &[f64]) -> f64 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for h in &self.hours {
            if hours.contains(&h.hour) {
                for v in column(h) {
                    acc += v;
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            acc / count as f64
        }
    }
}

/// One deterministic evaluation episode (argmax / weighted-mean actions),
/// e.g. for trajectory dumps.
pub fn greedy_episode(
    market: &MarketConfig,
    policy: &PolicyKind,
    scheme: KeyScheme,
    seed: u64,
) -> Result<Trajectory> {
    check_policy_compat(policy, market, scheme)?;
    let (mut obs, mut env_rng) = market::reset(market, seed)?;
    let mut traj = Trajectory::default();
    loop {
        let key = key_of(&obs, scheme);
        let action = policy.eval_action(key);
        let (next, outcome) = market::step(market, &obs, &action, &mut env_rng)?;
        traj.steps.push(TrajectoryStep {
            obs: obs.clone(),
            action,
            consumption: outcome.consumption,
            reward: outcome.reward,
            per_customer_reward: outcome.per_customer_reward,
        });
        match next {
            Some(o) => obs = o,
            None => break,
        }
    }
    traj.complete = true;
    Ok(traj)
}

/// Compatibility of a dumped policy with a market config and key scheme,
/// checked before evaluation.
pub fn check_policy_compat(
    policy: &PolicyKind,
    market: &MarketConfig,
    scheme: KeyScheme,
) -> Result<()> {
    policy.validate()?;
    if policy.n_customers() != market.n_customers {
        return Err(Error::SupportMismatch(format!(
            "policy has {} customers, config has {}",
            policy.n_customers(),
            market.n_customers
        )));
    }
    // keys written under one scheme are unreachable under the other
    let binned = matches!(scheme, KeyScheme::TimePlusDemandBins { .. });
    if let Some(key) = policy.visited_keys().first() {
        if key.demand_bin().is_some() != binned {
            return Err(Error::SupportMismatch(format!(
                "policy keys ({key}) do not match the configured key scheme"
            )));
        }
    }
    match policy {
        PolicyKind::Categorical(p) => {
            if let Some(grid) = market.price_grid() {
                if p.grid().len() != grid.len()
                    || p.grid()
                        .iter()
                        .zip(&grid)
                        .any(|(a, b)| (a - b).abs() > 1e-9)
                {
                    return Err(Error::SupportMismatch(
                        "policy grid differs from the configured price grid".into(),
                    ));
                }
            }
            if p.grid()
                .iter()
                .any(|&g| g < market.price_min - 1e-9 || g > market.price_max + 1e-9)
            {
                return Err(Error::SupportMismatch(
                    "policy grid leaves the configured price bounds".into(),
                ));
            }
        }
        PolicyKind::Particle(p) => {
            if market.price_grid_step.is_some() {
                return Err(Error::SupportMismatch(
                    "particle policies take off-grid actions; the config restricts prices to a grid"
                        .into(),
                ));
            }
            let (lo, hi) = p.bounds();
            if (lo - market.price_min).abs() > 1e-9 || (hi - market.price_max).abs() > 1e-9 {
                return Err(Error::SupportMismatch(
                    "particle policy bounds differ from the configured price bounds".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Deterministic evaluation rollouts: argmax actions for categorical
/// policies, weighted-mean actions for particle policies. The price column
/// reports the policy's expected price at the visited states; load reduction
/// and unit profit come from the rollout actions, aggregated by hour.
pub fn evaluate(
    policy: &PolicyKind,
    market: &MarketConfig,
    episodes: usize,
    seed: u64,
    scheme: KeyScheme,
) -> Result<EvalSummary> {
    market.validate()?;
    check_policy_compat(policy, market, scheme)?;
    if episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be >= 1".into()));
    }
    let n = market.n_customers;
    let t = market.horizon;
    let mut price_acc = vec![vec![0.0; n]; t];
    let mut reduction_acc = vec![vec![0.0; n]; t];
    let mut profit_acc = vec![vec![0.0; n]; t];
    let mut reward_acc = 0.0;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    for _ in 0..episodes {
        let env_seed = rng.gen::<u64>();
        let (mut obs, mut env_rng) = market::reset(market, env_seed)?;
        loop {
            let key = key_of(&obs, scheme);
            let action = policy.eval_action(key);
            let mean_prices = policy.mean_prices(key);
            let (next, outcome) = market::step(market, &obs, &action, &mut env_rng)?;
            let hour = obs.t - 1;
            let reductions = market::load_reduction(&outcome, &obs);
            for c in 0..n {
                price_acc[hour][c] += mean_prices.prices[c];
                reduction_acc[hour][c] += reductions[c];
                profit_acc[hour][c] += action.prices[c] - market.wholesale[hour];
            }
            reward_acc += outcome.reward;
            match next {
                Some(o) => obs = o,
                None => break,
            }
        }
    }
    let scale = 1.0 / episodes as f64;
    let hours = (0..t)
        .map(|h| HourStats {
            hour: h + 1,
            mean_price: price_acc[h].iter().map(|v| v * scale).collect(),
            load_reduction: reduction_acc[h].iter().map(|v| v * scale).collect(),
            unit_profit: profit_acc[h].iter().map(|v| v * scale).collect(),
        })
        .collect();
    Ok(EvalSummary {
        mean_reward: reward_acc * scale,
        hours,
    })
}
