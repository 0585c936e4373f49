//! Nonparametric policy representations and the closed-form tilted update,
//! with exact KL accounting.
//!
//! Policies are tables over state keys. Discrete actions use per-key
//! probability vectors over a price grid, either one joint vector over all
//! price combinations or one per-customer vector (factored mode). Because the
//! market reward is a sum of per-customer terms, a separable advantage makes
//! the per-customer tilt of a product policy exact for the joint update; joint
//! mode is kept for oracle tests. Continuous actions use a per-key weighted
//! particle set with kernel-smoothed sampling and systematic resampling; the
//! kernel noise is accounted as part of the policy.
//!
//! The update itself multiplies each probability (or particle weight) by
//! `exp(advantage / beta*)` and renormalizes, computed in max-shifted form.

use std::collections::BTreeMap;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::advantage::{ActionRef, AdvantageBatch, GroupPart};
use crate::error::{Error, Result};
use crate::mdp::PriceAction;
use crate::statekey::StateKey;

/// Per-key distribution of a categorical policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CategoricalDist {
    /// One probability vector over all joint price assignments.
    Joint(Vec<f64>),
    /// One probability vector over the grid per customer.
    Factored(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalMode {
    Joint,
    Factored,
}

/// Tabular policy over a discrete price grid. Unseen keys lazily read as
/// uniform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategoricalPolicy {
    grid: Vec<f64>,
    n_customers: usize,
    mode: CategoricalMode,
    table: BTreeMap<StateKey, CategoricalDist>,
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("price grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "price grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

impl CategoricalPolicy {
    pub fn new_factored(grid: Vec<f64>, n_customers: usize) -> Result<Self> {
        validate_grid(&grid)?;
        if n_customers == 0 {
            return Err(Error::InvalidArgument("need at least one customer".into()));
        }
        Ok(Self {
            grid,
            n_customers,
            mode: CategoricalMode::Factored,
            table: BTreeMap::new(),
        })
    }

    pub fn new_joint(grid: Vec<f64>, n_customers: usize) -> Result<Self> {
        validate_grid(&grid)?;
        if n_customers == 0 {
            return Err(Error::InvalidArgument("need at least one customer".into()));
        }
        let count = (grid.len() as f64).powi(n_customers as i32);
        if count > 1e6 {
            return Err(Error::InvalidArgument(format!(
                "joint mode with {count:.0} actions is intractable; use factored mode"
            )));
        }
        Ok(Self {
            grid,
            n_customers,
            mode: CategoricalMode::Joint,
            table: BTreeMap::new(),
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_customers(&self) -> usize {
        self.n_customers
    }

    pub fn mode(&self) -> CategoricalMode {
        self.mode
    }

    pub fn joint_action_count(&self) -> usize {
        self.grid.len().pow(self.n_customers as u32)
    }

    pub fn visited_keys(&self) -> impl Iterator<Item = &StateKey> {
        self.table.keys()
    }

    /// Per-customer grid indices of a flattened joint action; customer 0 is
    /// the fastest-varying digit.
    pub fn decode_joint(&self, mut index: usize) -> Vec<usize> {
        let g = self.grid.len();
        (0..self.n_customers)
            .map(|_| {
                let i = index % g;
                index /= g;
                i
            })
            .collect()
    }

    pub fn encode_joint(&self, indices: &[usize]) -> usize {
        let g = self.grid.len();
        indices.iter().rev().fold(0, |acc, &i| acc * g + i)
    }

    /// The key's distribution, lazily uniform for unseen keys.
    pub fn dist(&self, key: StateKey) -> CategoricalDist {
        if let Some(d) = self.table.get(&key) {
            return d.clone();
        }
        match self.mode {
            CategoricalMode::Factored => {
                let g = self.grid.len();
                CategoricalDist::Factored(vec![vec![1.0 / g as f64; g]; self.n_customers])
            }
            CategoricalMode::Joint => {
                let count = self.joint_action_count();
                CategoricalDist::Joint(vec![1.0 / count as f64; count])
            }
        }
    }

    /// Per-customer probability vectors (factored mode only).
    pub fn factored_probs(&self, key: StateKey) -> Result<Vec<Vec<f64>>> {
        match self.dist(key) {
            CategoricalDist::Factored(v) => Ok(v),
            CategoricalDist::Joint(_) => {
                Err(Error::SupportMismatch("expected a factored policy".into()))
            }
        }
    }

    /// Joint probability vector (joint mode only).
    pub fn joint_probs(&self, key: StateKey) -> Result<Vec<f64>> {
        match self.dist(key) {
            CategoricalDist::Joint(v) => Ok(v),
            CategoricalDist::Factored(_) => {
                Err(Error::SupportMismatch("expected a joint policy".into()))
            }
        }
    }

    /// Install a distribution for one key; it must match the policy's mode
    /// and support and be normalized within 1e-9.
    pub fn set_dist(&mut self, key: StateKey, dist: CategoricalDist) -> Result<()> {
        let check = |probs: &[f64], len: usize| -> Result<()> {
            if probs.len() != len {
                return Err(Error::SupportMismatch(format!(
                    "key {key}: expected {len} probabilities, got {}",
                    probs.len()
                )));
            }
            let sum: f64 = probs.iter().sum();
            if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "key {key}: probabilities must be nonnegative and sum to 1"
                )));
            }
            Ok(())
        };
        match (&dist, self.mode) {
            (CategoricalDist::Factored(rows), CategoricalMode::Factored) => {
                if rows.len() != self.n_customers {
                    return Err(Error::SupportMismatch(format!(
                        "key {key}: expected {} customer vectors, got {}",
                        self.n_customers,
                        rows.len()
                    )));
                }
                for row in rows {
                    check(row, self.grid.len())?;
                }
            }
            (CategoricalDist::Joint(probs), CategoricalMode::Joint) => {
                check(probs, self.joint_action_count())?;
            }
            _ => {
                return Err(Error::SupportMismatch(format!(
                    "key {key}: distribution shape does not match the policy mode"
                )))
            }
        }
        self.table.insert(key, dist);
        Ok(())
    }

    pub fn sample_action(&self, key: StateKey, rng: &mut ChaCha8Rng) -> PriceAction {
        match self.dist(key) {
            CategoricalDist::Factored(per_customer) => PriceAction::new(
                per_customer
                    .iter()
                    .map(|probs| {
                        let idx = WeightedIndex::new(probs).expect("valid probabilities");
                        self.grid[idx.sample(rng)]
                    })
                    .collect(),
            ),
            CategoricalDist::Joint(probs) => {
                let idx = WeightedIndex::new(&probs).expect("valid probabilities");
                let indices = self.decode_joint(idx.sample(rng));
                PriceAction::new(indices.into_iter().map(|i| self.grid[i]).collect())
            }
        }
    }

    /// Argmax action; ties break to the lowest grid index.
    pub fn greedy_prices(&self, key: StateKey) -> PriceAction {
        fn argmax(probs: &[f64]) -> usize {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            best
        }
        match self.dist(key) {
            CategoricalDist::Factored(per_customer) => PriceAction::new(
                per_customer
                    .iter()
                    .map(|probs| self.grid[argmax(probs)])
                    .collect(),
            ),
            CategoricalDist::Joint(probs) => {
                let indices = self.decode_joint(argmax(&probs));
                PriceAction::new(indices.into_iter().map(|i| self.grid[i]).collect())
            }
        }
    }

    /// Probability-weighted mean price per customer.
    pub fn mean_prices(&self, key: StateKey) -> PriceAction {
        match self.dist(key) {
            CategoricalDist::Factored(per_customer) => PriceAction::new(
                per_customer
                    .iter()
                    .map(|probs| probs.iter().zip(&self.grid).map(|(p, g)| p * g).sum())
                    .collect(),
            ),
            CategoricalDist::Joint(probs) => {
                let mut means = vec![0.0; self.n_customers];
                for (a, &p) in probs.iter().enumerate() {
                    for (n, i) in self.decode_joint(a).into_iter().enumerate() {
                        means[n] += p * self.grid[i];
                    }
                }
                PriceAction::new(means)
            }
        }
    }

    /// Checks the stored distributions: nonnegative entries summing to one.
    pub fn validate(&self) -> Result<()> {
        let check = |probs: &[f64], len: usize, key: &StateKey| -> Result<()> {
            if probs.len() != len {
                return Err(Error::SupportMismatch(format!(
                    "key {key}: expected {len} probabilities, got {}",
                    probs.len()
                )));
            }
            let sum: f64 = probs.iter().sum();
            if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "key {key}: probabilities must be nonnegative and sum to 1"
                )));
            }
            Ok(())
        };
        for (key, dist) in &self.table {
            match dist {
                CategoricalDist::Joint(probs) => check(probs, self.joint_action_count(), key)?,
                CategoricalDist::Factored(per_customer) => {
                    if per_customer.len() != self.n_customers {
                        return Err(Error::SupportMismatch(format!(
                            "key {key}: expected {} customer vectors",
                            self.n_customers
                        )));
                    }
                    for probs in per_customer {
                        check(probs, self.grid.len(), key)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// One weighted action sample of a particle policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub prices: Vec<f64>,
    pub weight: f64,
}

/// Per-key weighted particle measure over the continuous price box, with a
/// Gaussian sampling kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticlePolicy {
    n_customers: usize,
    particles_per_state: usize,
    /// Sampling kernel std in $/kWh.
    bandwidth: f64,
    price_min: f64,
    price_max: f64,
    /// Resample when the effective sample size falls below this fraction of
    /// the particle count.
    resample_threshold: f64,
    init_seed: u64,
    table: BTreeMap<StateKey, Vec<Particle>>,
}

pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl ParticlePolicy {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_customers: usize,
        particles_per_state: usize,
        bandwidth: f64,
        price_min: f64,
        price_max: f64,
        resample_threshold: f64,
        init_seed: u64,
    ) -> Result<Self> {
        if n_customers == 0 {
            return Err(Error::InvalidArgument("need at least one customer".into()));
        }
        if particles_per_state == 0 {
            return Err(Error::InvalidArgument(
                "need at least one particle per state".into(),
            ));
        }
        if !(bandwidth >= 0.0) {
            return Err(Error::InvalidArgument("bandwidth must be >= 0".into()));
        }
        if !(price_min < price_max) {
            return Err(Error::InvalidArgument(
                "price_min must be < price_max".into(),
            ));
        }
        if !(0.0..=1.0).contains(&resample_threshold) {
            return Err(Error::InvalidArgument(
                "resample_threshold must be in [0, 1]".into(),
            ));
        }
        Ok(Self {
            n_customers,
            particles_per_state,
            bandwidth,
            price_min,
            price_max,
            resample_threshold,
            init_seed,
            table: BTreeMap::new(),
        })
    }

    pub fn n_customers(&self) -> usize {
        self.n_customers
    }

    pub fn particles_per_state(&self) -> usize {
        self.particles_per_state
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.price_min, self.price_max)
    }

    pub fn visited_keys(&self) -> impl Iterator<Item = &StateKey> {
        self.table.keys()
    }

    /// Deterministic maximally-spread initialization for an unseen key:
    /// per-customer stratified positions with an independent shuffle per
    /// customer (a latin hypercube over the price box).
    fn default_particles(&self, key: StateKey) -> Vec<Particle> {
        let m = self.particles_per_state;
        let span = self.price_max - self.price_min;
        let mut coords: Vec<Vec<f64>> = Vec::with_capacity(self.n_customers);
        for c in 0..self.n_customers {
            let bin = key.demand_bin().map(|b| b as u64 + 1).unwrap_or(0);
            let seed = mix64(
                self.init_seed
                    ^ mix64(key.hour() as u64)
                    ^ mix64(bin.rotate_left(17))
                    ^ mix64((c as u64).rotate_left(43)),
            );
            let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let mut vals: Vec<f64> = (0..m)
                .map(|i| {
                    let u: f64 = rng.gen();
                    self.price_min + (i as f64 + u) * span / m as f64
                })
                .collect();
            // independent shuffle per customer keeps the per-dimension strata
            // while decorrelating dimensions
            for i in (1..m).rev() {
                let j = rng.gen_range(0..=i);
                vals.swap(i, j);
            }
            coords.push(vals);
        }
        (0..m)
            .map(|i| Particle {
                prices: (0..self.n_customers).map(|c| coords[c][i]).collect(),
                weight: 1.0 / m as f64,
            })
            .collect()
    }

    /// The key's particles, lazily initialized for unseen keys.
    pub fn particles(&self, key: StateKey) -> Vec<Particle> {
        self.table
            .get(&key)
            .cloned()
            .unwrap_or_else(|| self.default_particles(key))
    }

    /// Install a particle set for one key; count, price bounds, and weight
    /// normalization are enforced.
    pub fn set_particles(&mut self, key: StateKey, particles: Vec<Particle>) -> Result<()> {
        if particles.len() != self.particles_per_state {
            return Err(Error::SupportMismatch(format!(
                "key {key}: expected {} particles, got {}",
                self.particles_per_state,
                particles.len()
            )));
        }
        let mut sum = 0.0;
        for p in &particles {
            if p.prices.len() != self.n_customers {
                return Err(Error::SupportMismatch(format!(
                    "key {key}: particle has {} prices, expected {}",
                    p.prices.len(),
                    self.n_customers
                )));
            }
            if p.prices
                .iter()
                .any(|x| *x < self.price_min - 1e-9 || *x > self.price_max + 1e-9 || !x.is_finite())
            {
                return Err(Error::InvalidArgument(format!(
                    "key {key}: particle price outside bounds"
                )));
            }
            if !(p.weight >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "key {key}: negative particle weight"
                )));
            }
            sum += p.weight;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "key {key}: particle weights sum to {sum}, expected 1"
            )));
        }
        self.table.insert(key, particles);
        Ok(())
    }

    /// Sample a particle by weight and smooth with the Gaussian kernel,
    /// clipped to the price box.
    pub fn sample_action(&self, key: StateKey, rng: &mut ChaCha8Rng) -> PriceAction {
        let particles = self.particles(key);
        let idx =
            WeightedIndex::new(particles.iter().map(|p| p.weight)).expect("valid particle weights");
        let base = &particles[idx.sample(rng)].prices;
        if self.bandwidth == 0.0 {
            return PriceAction::new(base.clone());
        }
        let kernel = Normal::new(0.0, self.bandwidth).expect("valid bandwidth");
        PriceAction::new(
            base.iter()
                .map(|p| (p + kernel.sample(rng)).clamp(self.price_min, self.price_max))
                .collect(),
        )
    }

    /// Weight-weighted mean prices, clipped to the box.
    pub fn mean_prices(&self, key: StateKey) -> PriceAction {
        let particles = self.particles(key);
        let mut means = vec![0.0; self.n_customers];
        for p in &particles {
            for (m, &x) in means.iter_mut().zip(&p.prices) {
                *m += p.weight * x;
            }
        }
        PriceAction::new(
            means
                .into_iter()
                .map(|m| m.clamp(self.price_min, self.price_max))
                .collect(),
        )
    }

    /// KL between this policy's weights and `old`'s at one key; the supports
    /// (particle locations) must coincide.
    pub fn weight_kl_from(&self, old: &ParticlePolicy, key: StateKey) -> Result<f64> {
        let new_p = self.particles(key);
        let old_p = old.particles(key);
        if new_p.len() != old_p.len() {
            return Err(Error::SupportMismatch(format!(
                "key {key}: particle counts differ"
            )));
        }
        let mut kl = 0.0;
        for (a, b) in new_p.iter().zip(&old_p) {
            if a.prices
                .iter()
                .zip(&b.prices)
                .any(|(x, y)| (x - y).abs() > 1e-12)
            {
                return Err(Error::SupportMismatch(format!(
                    "key {key}: particle locations differ"
                )));
            }
            if a.weight > 0.0 {
                if b.weight <= 0.0 {
                    return Err(Error::SupportMismatch(format!(
                        "key {key}: new weight outside old support"
                    )));
                }
                kl += a.weight * (a.weight / b.weight).ln();
            }
        }
        Ok(kl)
    }

    pub fn validate(&self) -> Result<()> {
        for (key, particles) in &self.table {
            if particles.len() != self.particles_per_state {
                return Err(Error::SupportMismatch(format!(
                    "key {key}: expected {} particles, got {}",
                    self.particles_per_state,
                    particles.len()
                )));
            }
            let mut sum = 0.0;
            for p in particles {
                if p.prices.len() != self.n_customers {
                    return Err(Error::SupportMismatch(format!(
                        "key {key}: particle has {} prices, expected {}",
                        p.prices.len(),
                        self.n_customers
                    )));
                }
                if p.prices
                    .iter()
                    .any(|x| *x < self.price_min - 1e-9 || *x > self.price_max + 1e-9)
                {
                    return Err(Error::InvalidArgument(format!(
                        "key {key}: particle price outside bounds"
                    )));
                }
                if !(p.weight >= 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "key {key}: negative particle weight"
                    )));
                }
                sum += p.weight;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "key {key}: particle weights sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Multiply probabilities by exp(advantage / beta) and renormalize,
/// max-shifted over the current support.
fn tilt_vector(probs: &[f64], advantages: &[f64], beta: f64) -> Result<Vec<f64>> {
    let m = probs
        .iter()
        .zip(advantages)
        .filter(|(p, _)| **p > 0.0)
        .map(|(_, a)| *a)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(
            "distribution has no support to tilt".into(),
        ));
    }
    let mut out = vec![0.0; probs.len()];
    let mut z = 0.0;
    for i in 0..probs.len() {
        if probs[i] > 0.0 {
            let v = probs[i] * ((advantages[i] - m) / beta).exp();
            out[i] = v;
            z += v;
        }
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::NonFinite {
            context: "tilted normalizer".into(),
        });
    }
    for v in &mut out {
        *v /= z;
    }
    Ok(out)
}

fn part_advantages(
    part: &GroupPart,
    expect_len: usize,
    expect: impl Fn(usize, &ActionRef) -> bool,
    what: &str,
    key: &StateKey,
) -> Result<Vec<f64>> {
    if part.entries.len() != expect_len {
        return Err(Error::CoverageGap(format!(
            "key {key}: expected {expect_len} {what} entries, got {}",
            part.entries.len()
        )));
    }
    part.entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if !expect(i, &e.action) {
                return Err(Error::CoverageGap(format!(
                    "key {key}: entry {i} does not address {what} {i}"
                )));
            }
            if !e.advantage.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("advantage at key {key}"),
                });
            }
            Ok(e.advantage)
        })
        .collect()
}

/// Closed-form trust-region update of a categorical policy at the optimal
/// dual variable. In joint mode every grid action must carry an advantage at
/// each visited key (exhaustive evaluation); factored mode tilts each
/// customer with its own advantage component and the shared beta. Unvisited
/// keys are unchanged.
pub fn tilt_categorical(
    pi: &CategoricalPolicy,
    batch: &AdvantageBatch,
    beta_star: f64,
) -> Result<CategoricalPolicy> {
    if !(beta_star > 0.0) || !beta_star.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "beta_star must be positive and finite, got {beta_star}"
        )));
    }
    let mut out = pi.clone();
    for (key, group) in batch.groups() {
        match pi.mode {
            CategoricalMode::Factored => {
                if group.parts.len() != pi.n_customers {
                    return Err(Error::CoverageGap(format!(
                        "key {key}: expected {} customer parts, got {}",
                        pi.n_customers,
                        group.parts.len()
                    )));
                }
                let mut dists = pi.factored_probs(*key)?;
                for (n, part) in group.parts.iter().enumerate() {
                    let advantages = part_advantages(
                        part,
                        pi.grid.len(),
                        |i, a| matches!(a, ActionRef::GridIndex(g) if *g == i),
                        "grid",
                        key,
                    )?;
                    dists[n] = tilt_vector(&dists[n], &advantages, beta_star)?;
                }
                out.set_dist(*key, CategoricalDist::Factored(dists))?;
            }
            CategoricalMode::Joint => {
                if group.parts.len() != 1 {
                    return Err(Error::CoverageGap(format!(
                        "key {key}: joint mode expects a single part"
                    )));
                }
                let advantages = part_advantages(
                    &group.parts[0],
                    pi.joint_action_count(),
                    |i, a| matches!(a, ActionRef::JointIndex(j) if *j == i),
                    "joint action",
                    key,
                )?;
                let probs = pi.joint_probs(*key)?;
                out.set_dist(
                    *key,
                    CategoricalDist::Joint(tilt_vector(&probs, &advantages, beta_star)?),
                )?;
            }
        }
    }
    Ok(out)
}

/// Result of a particle tilt: the reweighted policy before resampling (the
/// distribution whose KL against the old policy is the trust-region
/// quantity) and the policy to carry forward, with systematic resampling
/// applied wherever the effective sample size dropped below threshold.
#[derive(Debug, Clone)]
pub struct ParticleTiltOutcome {
    pub tilted: ParticlePolicy,
    pub updated: ParticlePolicy,
    pub resampled_keys: Vec<StateKey>,
}

/// Deterministic systematic resampling (midpoint offsets).
fn systematic_resample(particles: &[Particle]) -> Vec<Particle> {
    let m = particles.len();
    let uniform = 1.0 / m as f64;
    let mut out = Vec::with_capacity(m);
    let mut cum = particles[0].weight;
    let mut i = 0;
    for k in 0..m {
        let u = (k as f64 + 0.5) * uniform;
        while u > cum && i + 1 < m {
            i += 1;
            cum += particles[i].weight;
        }
        out.push(Particle {
            prices: particles[i].prices.clone(),
            weight: uniform,
        });
    }
    out
}

/// Tilt the particle weights at every visited key; batch entries must list
/// exactly the key's particles, in order, with an advantage per particle.
pub fn tilt_particles(
    pi: &ParticlePolicy,
    batch: &AdvantageBatch,
    beta_star: f64,
) -> Result<ParticleTiltOutcome> {
    if !(beta_star > 0.0) || !beta_star.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "beta_star must be positive and finite, got {beta_star}"
        )));
    }
    let mut tilted = pi.clone();
    let mut updated = pi.clone();
    let mut resampled_keys = Vec::new();
    for (key, group) in batch.groups() {
        if group.parts.len() != 1 {
            return Err(Error::CoverageGap(format!(
                "key {key}: particle batches expect a single part"
            )));
        }
        let particles = pi.particles(*key);
        let advantages = part_advantages(
            &group.parts[0],
            particles.len(),
            |i, a| matches!(a, ActionRef::ParticleIndex(p) if *p == i),
            "particle",
            key,
        )?;
        let weights: Vec<f64> = particles.iter().map(|p| p.weight).collect();
        let new_weights = tilt_vector(&weights, &advantages, beta_star)?;
        let reweighted: Vec<Particle> = particles
            .iter()
            .zip(&new_weights)
            .map(|(p, &w)| Particle {
                prices: p.prices.clone(),
                weight: w,
            })
            .collect();
        tilted.set_particles(*key, reweighted.clone())?;

        let ess = 1.0 / new_weights.iter().map(|w| w * w).sum::<f64>();
        if ess < pi.resample_threshold * particles.len() as f64 {
            updated.set_particles(*key, systematic_resample(&reweighted))?;
            resampled_keys.push(*key);
        } else {
            updated.set_particles(*key, reweighted)?;
        }
    }
    Ok(ParticleTiltOutcome {
        tilted,
        updated,
        resampled_keys,
    })
}

/// Either policy representation; what the trainer carries and dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Categorical(CategoricalPolicy),
    Particle(ParticlePolicy),
}

impl PolicyKind {
    pub fn n_customers(&self) -> usize {
        match self {
            PolicyKind::Categorical(p) => p.n_customers(),
            PolicyKind::Particle(p) => p.n_customers(),
        }
    }

    pub fn sample_action(&self, key: StateKey, rng: &mut ChaCha8Rng) -> PriceAction {
        match self {
            PolicyKind::Categorical(p) => p.sample_action(key, rng),
            PolicyKind::Particle(p) => p.sample_action(key, rng),
        }
    }

    /// Deterministic evaluation action: argmax for categorical policies,
    /// weighted particle mean for particle policies.
    pub fn eval_action(&self, key: StateKey) -> PriceAction {
        match self {
            PolicyKind::Categorical(p) => p.greedy_prices(key),
            PolicyKind::Particle(p) => p.mean_prices(key),
        }
    }

    /// The policy's expected price per customer at a key.
    pub fn mean_prices(&self, key: StateKey) -> PriceAction {
        match self {
            PolicyKind::Categorical(p) => p.mean_prices(key),
            PolicyKind::Particle(p) => p.mean_prices(key),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PolicyKind::Categorical(p) => p.validate(),
            PolicyKind::Particle(p) => p.validate(),
        }
    }

    pub fn visited_keys(&self) -> Vec<StateKey> {
        match self {
            PolicyKind::Categorical(p) => p.visited_keys().copied().collect(),
            PolicyKind::Particle(p) => p.visited_keys().copied().collect(),
        }
    }
}

fn categorical_kl(new: &[f64], old: &[f64], key: &StateKey) -> Result<f64> {
    if new.len() != old.len() {
        return Err(Error::SupportMismatch(format!(
            "key {key}: probability vector lengths differ"
        )));
    }
    let mut kl = 0.0;
    for (&p, &q) in new.iter().zip(old) {
        if p > 0.0 {
            if q <= 0.0 {
                return Err(Error::SupportMismatch(format!(
                    "key {key}: new policy leaves the old support"
                )));
            }
            kl += p * (p / q).ln();
        }
    }
    Ok(kl)
}

/// Visit-weighted expected KL divergence of `new` from `old` over the given
/// keys. For factored policies the per-state KL of the joint product
/// distribution is the sum of the per-customer KLs; for particle policies it
/// is the weight KL at matching locations (pre-resampling weights).
pub fn expected_kl(
    new: &PolicyKind,
    old: &PolicyKind,
    visits: &BTreeMap<StateKey, f64>,
) -> Result<f64> {
    if visits.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    let mut total = 0.0;
    for (&key, &weight) in visits {
        let kl = match (new, old) {
            (PolicyKind::Categorical(n), PolicyKind::Categorical(o)) => {
                match (n.dist(key), o.dist(key)) {
                    (CategoricalDist::Factored(np), CategoricalDist::Factored(op)) => {
                        if np.len() != op.len() {
                            return Err(Error::SupportMismatch(format!(
                                "key {key}: customer counts differ"
                            )));
                        }
                        let mut kl = 0.0;
                        for (a, b) in np.iter().zip(&op) {
                            kl += categorical_kl(a, b, &key)?;
                        }
                        kl
                    }
                    (CategoricalDist::Joint(np), CategoricalDist::Joint(op)) => {
                        categorical_kl(&np, &op, &key)?
                    }
                    _ => {
                        return Err(Error::SupportMismatch(format!(
                            "key {key}: policy modes differ"
                        )))
                    }
                }
            }
            (PolicyKind::Particle(n), PolicyKind::Particle(o)) => n.weight_kl_from(o, key)?,
            _ => {
                return Err(Error::SupportMismatch(
                    "cannot compare categorical and particle policies".into(),
                ))
            }
        };
        acc += weight * kl;
        total += weight;
    }
    Ok(acc / total)
}

/// Visit-weighted mean of the policy's expected advantage over the batch.
pub fn expected_advantage(policy: &PolicyKind, batch: &AdvantageBatch) -> Result<f64> {
    batch.validate()?;
    let mut acc = 0.0;
    let mut total = 0.0;
    for (key, group) in batch.groups() {
        let mut state_value = 0.0;
        match policy {
            PolicyKind::Categorical(p) => match p.mode() {
                CategoricalMode::Factored => {
                    if group.parts.len() != p.n_customers() {
                        return Err(Error::CoverageGap(format!(
                            "key {key}: expected {} customer parts",
                            p.n_customers()
                        )));
                    }
                    let dists = p.factored_probs(*key)?;
                    for (n, part) in group.parts.iter().enumerate() {
                        let advantages = part_advantages(
                            part,
                            p.grid().len(),
                            |i, a| matches!(a, ActionRef::GridIndex(g) if *g == i),
                            "grid",
                            key,
                        )?;
                        state_value += dists[n]
                            .iter()
                            .zip(&advantages)
                            .map(|(pr, a)| pr * a)
                            .sum::<f64>();
                    }
                }
                CategoricalMode::Joint => {
                    if group.parts.len() != 1 {
                        return Err(Error::CoverageGap(format!(
                            "key {key}: joint mode expects a single part"
                        )));
                    }
                    let advantages = part_advantages(
                        &group.parts[0],
                        p.joint_action_count(),
                        |i, a| matches!(a, ActionRef::JointIndex(j) if *j == i),
                        "joint action",
                        key,
                    )?;
                    let probs = p.joint_probs(*key)?;
                    state_value += probs
                        .iter()
                        .zip(&advantages)
                        .map(|(pr, a)| pr * a)
                        .sum::<f64>();
                }
            },
            PolicyKind::Particle(p) => {
                if group.parts.len() != 1 {
                    return Err(Error::CoverageGap(format!(
                        "key {key}: particle batches expect a single part"
                    )));
                }
                let particles = p.particles(*key);
                let advantages = part_advantages(
                    &group.parts[0],
                    particles.len(),
                    |i, a| matches!(a, ActionRef::ParticleIndex(idx) if *idx == i),
                    "particle",
                    key,
                )?;
                state_value += particles
                    .iter()
                    .zip(&advantages)
                    .map(|(pt, a)| pt.weight * a)
                    .sum::<f64>();
            }
        }
        acc += group.visits * state_value;
        total += group.visits;
    }
    Ok(acc / total)
}

/// Importance ratios new/old over one key's support, grouped by independent
/// factor (one per customer for factored policies). Zero-probability old
/// entries are excluded from the ratios; after a tilt the new probability is
/// necessarily zero there too.
#[derive(Debug, Clone)]
pub struct LikelihoodRatio {
    /// Per factor: (old probability-or-weight, ratio) pairs.
    pub factors: Vec<Vec<(f64, f64)>>,
}

impl LikelihoodRatio {
    /// E over the old distribution of the ratio, per factor; 1 for any pair
    /// of normalized distributions on a shared support.
    pub fn old_expectations(&self) -> Vec<f64> {
        self.factors
            .iter()
            .map(|f| f.iter().map(|(old, ratio)| old * ratio).sum())
            .collect()
    }
}

/// Importance ratios of `new` against `old` at one key.
pub fn likelihood_ratio(
    new: &PolicyKind,
    old: &PolicyKind,
    key: StateKey,
) -> Result<LikelihoodRatio> {
    let factors = support_pairs(new, old, key)?
        .into_iter()
        .map(|pairs| {
            pairs
                .into_iter()
                .filter(|(old_p, _)| *old_p > 0.0)
                .map(|(old_p, new_p)| (old_p, new_p / old_p))
                .collect()
        })
        .collect();
    Ok(LikelihoodRatio { factors })
}

/// Per-factor (old probability, new probability) support pairs at one key,
/// from which importance ratios L(a) = new/old are formed. Factored policies
/// return one factor per customer; joint and particle policies return one.
pub fn support_pairs(
    new: &PolicyKind,
    old: &PolicyKind,
    key: StateKey,
) -> Result<Vec<Vec<(f64, f64)>>> {
    match (new, old) {
        (PolicyKind::Categorical(n), PolicyKind::Categorical(o)) => {
            match (n.dist(key), o.dist(key)) {
                (CategoricalDist::Factored(np), CategoricalDist::Factored(op)) => Ok(np
                    .into_iter()
                    .zip(op)
                    .map(|(a, b)| b.into_iter().zip(a).collect())
                    .collect()),
                (CategoricalDist::Joint(np), CategoricalDist::Joint(op)) => {
                    Ok(vec![op.into_iter().zip(np).collect()])
                }
                _ => Err(Error::SupportMismatch("policy modes differ".into())),
            }
        }
        (PolicyKind::Particle(n), PolicyKind::Particle(o)) => {
            let np = n.particles(key);
            let op = o.particles(key);
            if np.len() != op.len() {
                return Err(Error::SupportMismatch("particle counts differ".into()));
            }
            Ok(vec![op
                .into_iter()
                .zip(np)
                .map(|(a, b)| (a.weight, b.weight))
                .collect()])
        }
        _ => Err(Error::SupportMismatch(
            "cannot compare categorical and particle policies".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::advantage::{AdvantageEntry, StateGroup};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn key(s: &str) -> StateKey {
        s.parse().unwrap()
    }

    fn factored_batch(keyname: &str, per_customer: Vec<Vec<f64>>) -> AdvantageBatch {
        let parts = per_customer
            .into_iter()
            .map(|advs| GroupPart {
                entries: advs
                    .into_iter()
                    .enumerate()
                    .map(|(i, a)| AdvantageEntry {
                        action: ActionRef::GridIndex(i),
                        advantage: a,
                        weight: 1.0,
                    })
                    .collect(),
            })
            .collect();
        let mut batch = AdvantageBatch::new();
        batch.insert(key(keyname), StateGroup { visits: 1.0, parts });
        batch
    }

    fn joint_batch(keyname: &str, advs: Vec<f64>) -> AdvantageBatch {
        let entries = advs
            .into_iter()
            .enumerate()
            .map(|(i, a)| AdvantageEntry {
                action: ActionRef::JointIndex(i),
                advantage: a,
                weight: 1.0,
            })
            .collect();
        let mut batch = AdvantageBatch::new();
        batch.insert(
            key(keyname),
            StateGroup {
                visits: 1.0,
                parts: vec![GroupPart { entries }],
            },
        );
        batch
    }

    fn particle_batch(keyname: &str, advs: Vec<f64>) -> AdvantageBatch {
        let entries = advs
            .into_iter()
            .enumerate()
            .map(|(i, a)| AdvantageEntry {
                action: ActionRef::ParticleIndex(i),
                advantage: a,
                weight: 1.0,
            })
            .collect();
        let mut batch = AdvantageBatch::new();
        batch.insert(
            key(keyname),
            StateGroup {
                visits: 1.0,
                parts: vec![GroupPart { entries }],
            },
        );
        batch
    }

    #[test]
    fn tilt_two_action_example() {
        // uniform over 2 actions, A = (beta ln 2, 0) -> (2/3, 1/3)
        let pi = CategoricalPolicy::new_factored(vec![1.0, 2.0], 1).unwrap();
        for beta in [0.5, 1.0, 3.0] {
            let batch = factored_batch("t=1", vec![vec![beta * 2.0f64.ln(), 0.0]]);
            let new = tilt_categorical(&pi, &batch, beta).unwrap();
            let probs = new.factored_probs(key("t=1")).unwrap();
            assert!((probs[0][0] - 2.0 / 3.0).abs() < 1e-12);
            assert!((probs[0][1] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_advantage_is_identity() {
        let pi = CategoricalPolicy::new_factored(vec![1.0, 2.0, 3.0], 2).unwrap();
        let batch = factored_batch("t=3", vec![vec![4.2; 3], vec![4.2; 3]]);
        let new = tilt_categorical(&pi, &batch, 0.7).unwrap();
        let old = pi.factored_probs(key("t=3")).unwrap();
        let got = new.factored_probs(key("t=3")).unwrap();
        for (a, b) in old.iter().flatten().zip(got.iter().flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tilt_is_shift_invariant() {
        let pi = CategoricalPolicy::new_factored(vec![0.0, 0.5, 1.0], 1).unwrap();
        let base = factored_batch("t=2", vec![vec![0.3, -0.8, 0.1]]);
        let shifted = factored_batch("t=2", vec![vec![0.3 + 11.0, -0.8 + 11.0, 0.1 + 11.0]]);
        let a = tilt_categorical(&pi, &base, 0.4).unwrap();
        let b = tilt_categorical(&pi, &shifted, 0.4).unwrap();
        let pa = a.factored_probs(key("t=2")).unwrap();
        let pb = b.factored_probs(key("t=2")).unwrap();
        for (x, y) in pa.iter().flatten().zip(pb.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tilt_leaves_unvisited_keys_uniform() {
        let pi = CategoricalPolicy::new_factored(vec![1.0, 2.0], 1).unwrap();
        let batch = factored_batch("t=1", vec![vec![1.0, 0.0]]);
        let new = tilt_categorical(&pi, &batch, 1.0).unwrap();
        let other = new.factored_probs(key("t=9")).unwrap();
        assert_eq!(other[0], vec![0.5, 0.5]);
    }

    #[test]
    fn tilt_rejects_missing_coverage_and_nonfinite() {
        let pi = CategoricalPolicy::new_factored(vec![1.0, 2.0, 3.0], 1).unwrap();
        let short = factored_batch("t=1", vec![vec![1.0, 0.0]]);
        assert!(matches!(
            tilt_categorical(&pi, &short, 1.0),
            Err(Error::CoverageGap(_))
        ));
        let mut bad = factored_batch("t=1", vec![vec![1.0, 0.0, f64::INFINITY]]);
        // validate() inside expected_advantage rejects it too
        assert!(expected_advantage(&PolicyKind::Categorical(pi.clone()), &bad).is_err());
        bad = factored_batch("t=1", vec![vec![1.0, 0.0, f64::NAN]]);
        assert!(tilt_categorical(&pi, &bad, 1.0).is_err());
    }

    #[test]
    fn particle_tilt_example() {
        // 2 equal-weight particles, A = (beta ln 3, 0) -> (0.75, 0.25)
        let pi = ParticlePolicy::new(1, 2, 0.0, 0.0, 12.0, 0.0, 7).unwrap();
        let beta = 0.9;
        let batch = particle_batch("t=1", vec![beta * 3.0f64.ln(), 0.0]);
        let out = tilt_particles(&pi, &batch, beta).unwrap();
        let particles = out.tilted.particles(key("t=1"));
        assert!((particles[0].weight - 0.75).abs() < 1e-12);
        assert!((particles[1].weight - 0.25).abs() < 1e-12);
        assert!(out.resampled_keys.is_empty());
    }

    #[test]
    fn particle_tilt_constant_is_identity_and_monotone_otherwise() {
        let pi = ParticlePolicy::new(2, 4, 0.1, 0.0, 12.0, 0.0, 3).unwrap();
        let batch = particle_batch("t=2", vec![1.5; 4]);
        let out = tilt_particles(&pi, &batch, 0.5).unwrap();
        for p in out.tilted.particles(key("t=2")) {
            assert!((p.weight - 0.25).abs() < 1e-12);
        }
        // higher advantage -> strictly higher posterior weight ratio
        let batch = particle_batch("t=2", vec![0.1, 0.9, 0.5, 0.3]);
        let out = tilt_particles(&pi, &batch, 0.5).unwrap();
        let w = out.tilted.particles(key("t=2"));
        assert!(
            w[1].weight > w[2].weight && w[2].weight > w[3].weight && w[3].weight > w[0].weight
        );
    }

    #[test]
    fn particle_resampling_triggers_on_degenerate_weights() {
        let pi = ParticlePolicy::new(1, 8, 0.0, 0.0, 12.0, 0.5, 11).unwrap();
        // one particle dominates -> ESS collapses below 0.5 * 8
        let mut advs = vec![0.0; 8];
        advs[3] = 50.0;
        let batch = particle_batch("t=1", advs);
        let out = tilt_particles(&pi, &batch, 1.0).unwrap();
        assert_eq!(out.resampled_keys, vec![key("t=1")]);
        let resampled = out.updated.particles(key("t=1"));
        let winner = pi.particles(key("t=1"))[3].prices.clone();
        for p in &resampled {
            assert!((p.weight - 0.125).abs() < 1e-12);
            assert_eq!(p.prices, winner);
        }
        // pre-resample weights kept for KL accounting
        assert!(out.tilted.particles(key("t=1"))[3].weight > 0.999);
    }

    #[test]
    fn sampling_degenerate_and_bandwidth_zero() {
        let mut pi = CategoricalPolicy::new_factored(vec![2.0, 4.0, 8.0], 1).unwrap();
        pi.set_dist(
            key("t=1"),
            CategoricalDist::Factored(vec![vec![0.0, 1.0, 0.0]]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(pi.sample_action(key("t=1"), &mut rng).prices, vec![4.0]);
        }

        let part = ParticlePolicy::new(1, 3, 0.0, 0.0, 12.0, 0.0, 5).unwrap();
        let particles = part.particles(key("t=4"));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = part.sample_action(key("t=4"), &mut rng);
            assert!(particles.iter().any(|p| p.prices == a.prices));
        }
    }

    #[test]
    fn sampling_frequency_matches_distribution() {
        let mut pi = CategoricalPolicy::new_factored(vec![1.0, 2.0], 1).unwrap();
        pi.set_dist(
            key("t=1"),
            CategoricalDist::Factored(vec![vec![2.0 / 3.0, 1.0 / 3.0]]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws = 100_000;
        let mut low = 0usize;
        for _ in 0..draws {
            if pi.sample_action(key("t=1"), &mut rng).prices[0] == 1.0 {
                low += 1;
            }
        }
        let freq = low as f64 / draws as f64;
        assert!((freq - 2.0 / 3.0).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn expected_kl_examples() {
        let pi = CategoricalPolicy::new_factored(vec![1.0, 2.0], 1).unwrap();
        let mut tilted = pi.clone();
        tilted
            .set_dist(
                key("t=1"),
                CategoricalDist::Factored(vec![vec![2.0 / 3.0, 1.0 / 3.0]]),
            )
            .unwrap();
        let visits: BTreeMap<StateKey, f64> = [(key("t=1"), 1.0)].into_iter().collect();
        let same = expected_kl(
            &PolicyKind::Categorical(pi.clone()),
            &PolicyKind::Categorical(pi.clone()),
            &visits,
        )
        .unwrap();
        assert_eq!(same, 0.0);
        let kl = expected_kl(
            &PolicyKind::Categorical(tilted),
            &PolicyKind::Categorical(pi),
            &visits,
        )
        .unwrap();
        let want = (2.0 / 3.0) * (4.0f64 / 3.0).ln() + (1.0 / 3.0) * (2.0f64 / 3.0).ln();
        assert!((kl - want).abs() < 1e-12);
        assert!((kl - 0.05663).abs() < 1e-5);
    }

    #[test]
    fn expected_advantage_examples() {
        let pi = CategoricalPolicy::new_factored(vec![1.0, 2.0], 1).unwrap();
        let batch = factored_batch("t=1", vec![vec![1.0, -1.0]]);
        let got = expected_advantage(&PolicyKind::Categorical(pi.clone()), &batch).unwrap();
        assert!(got.abs() < 1e-12);

        let mut skewed = pi.clone();
        skewed
            .set_dist(
                key("t=1"),
                CategoricalDist::Factored(vec![vec![2.0 / 3.0, 1.0 / 3.0]]),
            )
            .unwrap();
        let batch = factored_batch("t=1", vec![vec![1.0, 0.0]]);
        let got = expected_advantage(&PolicyKind::Categorical(skewed), &batch).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tilt_improves_expected_advantage() {
        let pi = CategoricalPolicy::new_factored(vec![0.0, 6.0, 12.0], 2).unwrap();
        let batch = factored_batch("t=5", vec![vec![0.4, -0.1, 0.9], vec![-0.3, 0.2, 0.0]]);
        let before = expected_advantage(&PolicyKind::Categorical(pi.clone()), &batch).unwrap();
        let new = tilt_categorical(&pi, &batch, 0.8).unwrap();
        let after = expected_advantage(&PolicyKind::Categorical(new), &batch).unwrap();
        assert!(after > before);
    }

    #[test]
    fn factored_tilt_equals_joint_tilt_on_separable_advantages() {
        // 2 customers, 3 prices: joint advantage = sum of per-customer parts
        let grid = vec![0.0, 1.0, 2.0];
        let a1 = [0.7, -0.2, 0.4];
        let a2 = [-0.5, 0.3, 0.1];
        let factored = CategoricalPolicy::new_factored(grid.clone(), 2).unwrap();
        let joint = CategoricalPolicy::new_joint(grid, 2).unwrap();
        let beta = 0.6;

        let fb = factored_batch("t=1", vec![a1.to_vec(), a2.to_vec()]);
        let mut joint_advs = vec![0.0; joint.joint_action_count()];
        for (j, adv) in joint_advs.iter_mut().enumerate() {
            let idx = joint.decode_joint(j);
            *adv = a1[idx[0]] + a2[idx[1]];
        }
        let jb = joint_batch("t=1", joint_advs);

        let f_new = tilt_categorical(&factored, &fb, beta).unwrap();
        let j_new = tilt_categorical(&joint, &jb, beta).unwrap();

        let fp = f_new.factored_probs(key("t=1")).unwrap();
        let jp = j_new.joint_probs(key("t=1")).unwrap();
        let mut tv = 0.0;
        for (j, &pj) in jp.iter().enumerate() {
            let idx = j_new.decode_joint(j);
            let product = fp[0][idx[0]] * fp[1][idx[1]];
            tv += 0.5 * (pj - product).abs();
        }
        assert!(tv < 1e-9, "total variation {tv}");
    }

    #[test]
    fn importance_ratio_mean_is_one() {
        let pi = CategoricalPolicy::new_factored(vec![0.0, 1.0, 2.0, 3.0], 2).unwrap();
        let batch = factored_batch(
            "t=1",
            vec![vec![0.2, -0.4, 0.9, 0.0], vec![0.1, 0.3, -0.2, 0.5]],
        );
        let new = tilt_categorical(&pi, &batch, 0.5).unwrap();
        let ratios = likelihood_ratio(
            &PolicyKind::Categorical(new),
            &PolicyKind::Categorical(pi),
            key("t=1"),
        )
        .unwrap();
        assert_eq!(ratios.factors.len(), 2);
        for factor in &ratios.factors {
            assert!(factor.iter().all(|(_, r)| *r >= 0.0));
        }
        for mean in ratios.old_expectations() {
            assert!((mean - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ratio_law_log_difference_constant() {
        let pi = CategoricalPolicy::new_factored(vec![0.0, 1.0, 2.0], 1).unwrap();
        let advs = [0.25, -0.6, 0.8];
        let beta = 0.7;
        let batch = factored_batch("t=1", vec![advs.to_vec()]);
        let new = tilt_categorical(&pi, &batch, beta).unwrap();
        let np = new.factored_probs(key("t=1")).unwrap();
        let op = pi.factored_probs(key("t=1")).unwrap();
        let consts: Vec<f64> = (0..3)
            .map(|i| np[0][i].ln() - op[0][i].ln() - advs[i] / beta)
            .collect();
        for c in &consts[1..] {
            assert!((c - consts[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn policy_dump_roundtrips_through_json() {
        let mut pi = CategoricalPolicy::new_factored(vec![0.0, 6.0, 12.0], 2).unwrap();
        pi.set_dist(
            key("t=1"),
            CategoricalDist::Factored(vec![vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]]),
        )
        .unwrap();
        let dump = serde_json::to_string(&PolicyKind::Categorical(pi.clone())).unwrap();
        let back: PolicyKind = serde_json::from_str(&dump).unwrap();
        match &back {
            PolicyKind::Categorical(p) => {
                assert_eq!(p.grid(), pi.grid());
                assert_eq!(
                    p.factored_probs(key("t=1")).unwrap(),
                    pi.factored_probs(key("t=1")).unwrap()
                );
            }
            _ => panic!("wrong kind"),
        }
        back.validate().unwrap();

        let pp = ParticlePolicy::new(2, 4, 0.25, 0.0, 12.0, 0.5, 9).unwrap();
        let mut pp2 = pp.clone();
        pp2.set_particles(key("t=2"), pp.particles(key("t=2")))
            .unwrap();
        let dump = serde_json::to_string(&PolicyKind::Particle(pp2.clone())).unwrap();
        let back: PolicyKind = serde_json::from_str(&dump).unwrap();
        back.validate().unwrap();
        match back {
            PolicyKind::Particle(p) => {
                assert_eq!(p.particles(key("t=2")), pp2.particles(key("t=2")));
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn lazy_particles_are_stratified_and_deterministic() {
        let pi = ParticlePolicy::new(3, 10, 0.2, 0.0, 12.0, 0.5, 42).unwrap();
        let a = pi.particles(key("t=7"));
        let b = pi.particles(key("t=7"));
        assert_eq!(a, b);
        // one particle per stratum per customer
        for c in 0..3 {
            let mut strata: Vec<usize> = a
                .iter()
                .map(|p| ((p.prices[c] / 12.0) * 10.0).floor() as usize)
                .collect();
            strata.sort_unstable();
            assert_eq!(strata, (0..10).collect::<Vec<_>>());
        }
        assert!((a.iter().map(|p| p.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn tilt_normalizes_and_improves(
            advs in proptest::collection::vec(-1.0f64..1.0, 4),
            beta in 0.05f64..5.0,
        ) {
            let pi = CategoricalPolicy::new_factored(vec![0.0, 1.0, 2.0, 3.0], 1).unwrap();
            let batch = factored_batch("t=1", vec![advs.clone()]);
            let new = tilt_categorical(&pi, &batch, beta).unwrap();
            let probs = new.factored_probs(key("t=1")).unwrap();
            let sum: f64 = probs[0].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(probs[0].iter().all(|p| *p >= 0.0));

            let before = expected_advantage(&PolicyKind::Categorical(pi), &batch).unwrap();
            let after = expected_advantage(&PolicyKind::Categorical(new), &batch).unwrap();
            prop_assert!(after >= before - 1e-12);
        }
    }
}
