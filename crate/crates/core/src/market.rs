//! Demand-response electricity market simulator.
//!
//! The environment is a pure transition function over immutable inputs plus an
//! explicit per-episode random stream: curtailable consumption responds to the
//! retail/wholesale price gap through the hour's elasticity coefficient, and
//! the reward is a weighted combination of service-provider profit and total
//! consumer cost (bill plus dissatisfaction).

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DemandPair, Observation, PriceAction};

/// All environment parameters. Loaded from the `[market]` section of the
/// run configuration file; every field is addressable by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub n_customers: usize,
    /// Episode length T in hours.
    pub horizon: usize,
    /// Per-hour wholesale price, $/kWh, length T.
    pub wholesale: Vec<f64>,
    /// Per-hour elasticity coefficient, dimensionless, all < 0, length T.
    pub elasticity: Vec<f64>,
    /// Per-customer per-hour critical demand, kWh, `n_customers` rows of length T.
    pub crit_demand: Vec<Vec<f64>>,
    /// Per-customer per-hour curtailable demand, kWh.
    pub curt_demand: Vec<Vec<f64>>,
    /// Per-customer dissatisfaction curvature, $/kWh^2, all > 0.
    pub alpha: Vec<f64>,
    /// Per-customer dissatisfaction slope, $/kWh, all >= 0.
    pub beta: Vec<f64>,
    /// Reward weight between profit and consumer cost, in [0, 1].
    pub rho: f64,
    pub price_min: f64,
    pub price_max: f64,
    /// Grid spacing for the discrete action mode; omit for continuous mode.
    #[serde(default)]
    pub price_grid_step: Option<f64>,
    /// Multiplicative Gaussian demand noise level for the stochastic scale-up.
    #[serde(default)]
    pub demand_noise_std: Option<f64>,
    /// Hours (1-based) treated as peak in evaluation summaries. Defaults to
    /// the hours whose wholesale price is above the daily mean.
    #[serde(default)]
    pub peak_hours: Option<Vec<usize>>,
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_customers == 0 {
            return Err(Error::invalid_config("n_customers", "must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid_config("horizon", "must be >= 1"));
        }
        Self::check_profile(
            "wholesale",
            &self.wholesale,
            self.horizon,
            |v| v > 0.0,
            "> 0",
        )?;
        Self::check_profile(
            "elasticity",
            &self.elasticity,
            self.horizon,
            |v| v < 0.0,
            "< 0",
        )?;
        Self::check_rows(
            "crit_demand",
            &self.crit_demand,
            self.n_customers,
            self.horizon,
        )?;
        Self::check_rows(
            "curt_demand",
            &self.curt_demand,
            self.n_customers,
            self.horizon,
        )?;
        Self::check_profile("alpha", &self.alpha, self.n_customers, |v| v > 0.0, "> 0")?;
        Self::check_profile("beta", &self.beta, self.n_customers, |v| v >= 0.0, ">= 0")?;
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid_config(
                "rho",
                format!("must be in [0, 1], got {}", self.rho),
            ));
        }
        if !(self.price_min < self.price_max) {
            return Err(Error::invalid_config(
                "price_min",
                format!(
                    "price_min ({}) must be < price_max ({})",
                    self.price_min, self.price_max
                ),
            ));
        }
        if let Some(step) = self.price_grid_step {
            if !(step > 0.0) {
                return Err(Error::invalid_config("price_grid_step", "must be > 0"));
            }
            let span = self.price_max - self.price_min;
            let n = (span / step).round();
            if n < 1.0 || ((span - n * step).abs() > 1e-9 * span.max(1.0)) {
                return Err(Error::invalid_config(
                    "price_grid_step",
                    "price range must be an integer number of grid steps",
                ));
            }
        }
        if let Some(std) = self.demand_noise_std {
            if !(std >= 0.0) {
                return Err(Error::invalid_config("demand_noise_std", "must be >= 0"));
            }
        }
        if let Some(hours) = &self.peak_hours {
            for &h in hours {
                if h == 0 || h > self.horizon {
                    return Err(Error::invalid_config(
                        "peak_hours",
                        format!("hour {h} outside 1..={}", self.horizon),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_profile(
        field: &str,
        values: &[f64],
        expect_len: usize,
        pred: impl Fn(f64) -> bool,
        desc: &str,
    ) -> Result<()> {
        if values.len() != expect_len {
            return Err(Error::invalid_config(
                field,
                format!("expected {expect_len} entries, got {}", values.len()),
            ));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !pred(v) {
                return Err(Error::invalid_config(
                    field,
                    format!("entry {i} must be {desc}, got {v}"),
                ));
            }
        }
        Ok(())
    }

    fn check_rows(field: &str, rows: &[Vec<f64>], n: usize, t: usize) -> Result<()> {
        if rows.len() != n {
            return Err(Error::invalid_config(
                field,
                format!("expected {n} customer rows, got {}", rows.len()),
            ));
        }
        for (c, row) in rows.iter().enumerate() {
            if row.len() != t {
                return Err(Error::invalid_config(
                    field,
                    format!(
                        "customer {c}: expected {t} hourly entries, got {}",
                        row.len()
                    ),
                ));
            }
            for (i, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid_config(
                        field,
                        format!("customer {c} hour {} must be >= 0, got {v}", i + 1),
                    ));
                }
            }
        }
        Ok(())
    }

    /// The discrete price grid, when `price_grid_step` is configured.
    pub fn price_grid(&self) -> Option<Vec<f64>> {
        self.price_grid_step.map(|step| {
            let n = ((self.price_max - self.price_min) / step).round() as usize;
            (0..=n).map(|i| self.price_min + i as f64 * step).collect()
        })
    }

    /// Peak hours for evaluation summaries: the configured list, or the hours
    /// whose wholesale price is above the daily mean.
    pub fn peak_hours_resolved(&self) -> Vec<usize> {
        if let Some(hours) = &self.peak_hours {
            let mut hours = hours.clone();
            hours.sort_unstable();
            hours.dedup();
            return hours;
        }
        let mean = self.wholesale.iter().sum::<f64>() / self.wholesale.len() as f64;
        (1..=self.horizon)
            .filter(|&h| self.wholesale[h - 1] > mean)
            .collect()
    }

    /// Base demand pair of customer `n` at hour `t` (1-based), before noise.
    pub fn profile_demand(&self, t: usize, n: usize) -> DemandPair {
        DemandPair::new(self.crit_demand[n][t - 1], self.curt_demand[n][t - 1])
    }
}

/// Everything computed by one transition.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Per-customer realized (critical, curtailable) consumption, kWh.
    pub consumption: Vec<DemandPair>,
    /// Service-provider profit P(t), $.
    pub profit: f64,
    /// Total consumer cost C(t) = bills + dissatisfaction, $.
    pub cost: f64,
    /// Per-customer dissatisfaction, $.
    pub dissatisfaction: Vec<f64>,
    /// rho * P(t) - (1 - rho) * C(t), $.
    pub reward: f64,
    /// Per-customer attribution of the reward; sums to `reward`.
    pub per_customer_reward: Vec<f64>,
}

/// Per-customer pieces of one transition, also used to evaluate counterfactual
/// prices when building exhaustive advantage profiles.
#[derive(Debug, Clone, Copy)]
pub struct CustomerTerms {
    pub consumption: DemandPair,
    pub dissatisfaction: f64,
    /// (price - wholesale) * consumption.
    pub profit: f64,
    /// price * consumption + dissatisfaction.
    pub cost: f64,
    /// rho * profit - (1 - rho) * cost.
    pub reward: f64,
}

/// Evaluate customer `n`'s response and reward terms at hour `t` for a given
/// realized base demand and retail price.
pub fn customer_terms(
    cfg: &MarketConfig,
    t: usize,
    n: usize,
    demand: DemandPair,
    price: f64,
) -> CustomerTerms {
    let wholesale = cfg.wholesale[t - 1];
    let xi = cfg.elasticity[t - 1];
    let raw_curt = demand.curtailable * (1.0 + xi * (price - wholesale) / wholesale);
    // Eq-literal response clamped at zero: negative kWh is physically
    // meaningless; dissatisfaction uses the clamped value.
    let curt = raw_curt.max(0.0);
    let consumption = DemandPair::new(demand.critical, curt);
    let shed = demand.curtailable - curt;
    let dissatisfaction = 0.5 * cfg.alpha[n] * shed * shed + cfg.beta[n] * shed;
    let total = consumption.total();
    let profit = (price - wholesale) * total;
    let cost = price * total + dissatisfaction;
    let reward = cfg.rho * profit - (1.0 - cfg.rho) * cost;
    CustomerTerms {
        consumption,
        dissatisfaction,
        profit,
        cost,
        reward,
    }
}

fn sample_base_demand(cfg: &MarketConfig, t: usize, rng: &mut ChaCha8Rng) -> Vec<DemandPair> {
    let noise = cfg.demand_noise_std.unwrap_or(0.0);
    (0..cfg.n_customers)
        .map(|n| {
            let base = cfg.profile_demand(t, n);
            if noise > 0.0 {
                let normal = Normal::new(0.0, noise).expect("validated std");
                let fc: f64 = 1.0 + normal.sample(rng);
                let fu: f64 = 1.0 + normal.sample(rng);
                DemandPair::new(
                    (base.critical * fc).max(0.0),
                    (base.curtailable * fu).max(0.0),
                )
            } else {
                base
            }
        })
        .collect()
}

/// Start an episode: the observation at t=1 plus the episode's random stream.
pub fn reset(cfg: &MarketConfig, seed: u64) -> Result<(Observation, ChaCha8Rng)> {
    cfg.validate()?;
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let base_demand = sample_base_demand(cfg, 1, &mut rng);
    let obs = Observation {
        t: 1,
        base_demand,
        prev_consumption: vec![DemandPair::zero(); cfg.n_customers],
    };
    Ok((obs, rng))
}

fn validate_action(cfg: &MarketConfig, act: &PriceAction) -> Result<()> {
    if act.prices.len() != cfg.n_customers {
        return Err(Error::InvalidArgument(format!(
            "expected {} prices, got {}",
            cfg.n_customers,
            act.prices.len()
        )));
    }
    for (n, &p) in act.prices.iter().enumerate() {
        if !p.is_finite() || p < cfg.price_min - 1e-12 || p > cfg.price_max + 1e-12 {
            return Err(Error::PriceOutOfBounds {
                customer: n,
                price: p,
                min: cfg.price_min,
                max: cfg.price_max,
            });
        }
        if let Some(step) = cfg.price_grid_step {
            let pos = (p - cfg.price_min) / step;
            if (pos - pos.round()).abs() > 1e-6 {
                return Err(Error::PriceOffGrid {
                    customer: n,
                    price: p,
                });
            }
        }
    }
    Ok(())
}

/// Apply a price action: consumption responds to the price, the reward is
/// realized, and the next observation (or `None` at the horizon) carries this
/// hour's consumption.
pub fn step(
    cfg: &MarketConfig,
    obs: &Observation,
    act: &PriceAction,
    rng: &mut ChaCha8Rng,
) -> Result<(Option<Observation>, StepOutcome)> {
    if obs.t > cfg.horizon {
        return Err(Error::TerminalStep {
            t: obs.t,
            horizon: cfg.horizon,
        });
    }
    validate_action(cfg, act)?;

    let mut consumption = Vec::with_capacity(cfg.n_customers);
    let mut dissatisfaction = Vec::with_capacity(cfg.n_customers);
    let mut per_customer_reward = Vec::with_capacity(cfg.n_customers);
    let mut profit = 0.0;
    let mut cost = 0.0;
    for n in 0..cfg.n_customers {
        let terms = customer_terms(cfg, obs.t, n, obs.base_demand[n], act.prices[n]);
        profit += terms.profit;
        cost += terms.cost;
        consumption.push(terms.consumption);
        dissatisfaction.push(terms.dissatisfaction);
        per_customer_reward.push(terms.reward);
    }
    let reward = cfg.rho * profit - (1.0 - cfg.rho) * cost;

    let next = if obs.t == cfg.horizon {
        None
    } else {
        Some(Observation {
            t: obs.t + 1,
            base_demand: sample_base_demand(cfg, obs.t + 1, rng),
            prev_consumption: consumption.clone(),
        })
    };

    Ok((
        next,
        StepOutcome {
            consumption,
            profit,
            cost,
            dissatisfaction,
            reward,
            per_customer_reward,
        },
    ))
}

/// Per-customer load reduction for the realized hour: demand minus consumption,
/// which reduces to curtailable demand minus curtailable consumption.
pub fn load_reduction(outcome: &StepOutcome, obs: &Observation) -> Vec<f64> {
    obs.base_demand
        .iter()
        .zip(&outcome.consumption)
        .map(|(d, c)| d.total() - c.total())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn single_customer_cfg() -> MarketConfig {
        MarketConfig {
            n_customers: 1,
            horizon: 1,
            wholesale: vec![4.0],
            elasticity: vec![-0.5],
            crit_demand: vec![vec![5.0]],
            curt_demand: vec![vec![10.0]],
            alpha: vec![0.1],
            beta: vec![0.2],
            rho: 0.5,
            price_min: 0.0,
            price_max: 12.0,
            price_grid_step: None,
            demand_noise_std: None,
            peak_hours: None,
        }
    }

    fn two_hour_cfg() -> MarketConfig {
        MarketConfig {
            n_customers: 2,
            horizon: 2,
            wholesale: vec![4.0, 5.0],
            elasticity: vec![-0.5, -0.4],
            crit_demand: vec![vec![5.0, 4.0], vec![3.0, 2.0]],
            curt_demand: vec![vec![10.0, 8.0], vec![6.0, 5.0]],
            alpha: vec![0.1, 0.2],
            beta: vec![0.2, 0.1],
            rho: 0.5,
            price_min: 0.0,
            price_max: 12.0,
            price_grid_step: None,
            demand_noise_std: None,
            peak_hours: None,
        }
    }

    #[test]
    fn hand_derived_step_example() {
        // Hand-evaluated beforehand: c_curt = 10 * (1 - 0.5 * 2/4) = 7.5,
        // c = 12.5, P = 2 * 12.5 = 25, delta = 0.05 * 6.25 + 0.2 * 2.5 = 0.8125,
        // C = 6 * 12.5 + 0.8125 = 75.8125, r = 0.5 * 25 - 0.5 * 75.8125.
        let cfg = single_customer_cfg();
        let (obs, mut rng) = reset(&cfg, 0).unwrap();
        let (next, out) = step(&cfg, &obs, &PriceAction::uniform(6.0, 1), &mut rng).unwrap();
        assert!(next.is_none());
        assert!((out.consumption[0].curtailable - 7.5).abs() < 1e-9);
        assert!((out.profit - 25.0).abs() < 1e-9);
        assert!((out.dissatisfaction[0] - 0.8125).abs() < 1e-9);
        assert!((out.cost - 75.8125).abs() < 1e-9);
        assert!((out.reward - (-25.40625)).abs() < 1e-9);
        let red = load_reduction(&out, &obs);
        assert!((red[0] - 2.5).abs() < 1e-9);
    }

    #[test]
    fn neutral_price_identities() {
        // Retail equal to wholesale: elasticity term vanishes, consumption
        // equals demand, zero dissatisfaction and profit.
        let cfg = two_hour_cfg();
        let (obs, mut rng) = reset(&cfg, 0).unwrap();
        let act = PriceAction::uniform(4.0, 2);
        let (_, out) = step(&cfg, &obs, &act, &mut rng).unwrap();
        assert!(out.profit.abs() < 1e-9);
        for n in 0..2 {
            assert!((out.consumption[n].curtailable - cfg.curt_demand[n][0]).abs() < 1e-9);
            assert!(out.dissatisfaction[n].abs() < 1e-9);
        }
        let expected_cost: f64 = (0..2)
            .map(|n| 4.0 * (cfg.crit_demand[n][0] + cfg.curt_demand[n][0]))
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        assert!((out.reward - (-(1.0 - cfg.rho) * expected_cost)).abs() < 1e-9);
        for r in load_reduction(&out, &obs) {
            assert!(r.abs() < 1e-9);
        }
    }

    #[test]
    fn consumption_clamps_at_zero() {
        // raw elasticity response 10 * (1 - 2 * 2) = -30, clamped to 0
        let mut cfg = single_customer_cfg();
        cfg.elasticity = vec![-2.0];
        let (obs, mut rng) = reset(&cfg, 0).unwrap();
        let (_, out) = step(&cfg, &obs, &PriceAction::uniform(12.0, 1), &mut rng).unwrap();
        assert_eq!(out.consumption[0].curtailable, 0.0);
        let red = load_reduction(&out, &obs);
        assert!((red[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn reward_decomposition_matches_termwise() {
        let cfg = two_hour_cfg();
        let (obs, mut rng) = reset(&cfg, 7).unwrap();
        let act = PriceAction::new(vec![5.5, 3.2]);
        let (_, out) = step(&cfg, &obs, &act, &mut rng).unwrap();
        // independent termwise evaluation
        let mut total = 0.0;
        for n in 0..2 {
            let w = cfg.wholesale[0];
            let xi = cfg.elasticity[0];
            let d = cfg.curt_demand[n][0];
            let c_curt = (d * (1.0 + xi * (act.prices[n] - w) / w)).max(0.0);
            let c = cfg.crit_demand[n][0] + c_curt;
            let shed = d - c_curt;
            let delta = 0.5 * cfg.alpha[n] * shed * shed + cfg.beta[n] * shed;
            let term =
                cfg.rho * (act.prices[n] - w) * c - (1.0 - cfg.rho) * (act.prices[n] * c + delta);
            assert!((out.per_customer_reward[n] - term).abs() < 1e-9);
            total += term;
        }
        assert!((out.reward - total).abs() < 1e-9);
        assert!((out.reward - (cfg.rho * out.profit - (1.0 - cfg.rho) * out.cost)).abs() < 1e-9);
    }

    #[test]
    fn raising_price_lowers_only_that_customer() {
        let cfg = two_hour_cfg();
        let (obs, _) = reset(&cfg, 0).unwrap();
        let mut rng_a = reset(&cfg, 0).unwrap().1;
        let mut rng_b = reset(&cfg, 0).unwrap().1;
        let (_, low) = step(&cfg, &obs, &PriceAction::new(vec![5.0, 5.0]), &mut rng_a).unwrap();
        let (_, high) = step(&cfg, &obs, &PriceAction::new(vec![6.0, 5.0]), &mut rng_b).unwrap();
        assert!(high.consumption[0].curtailable < low.consumption[0].curtailable);
        assert!((high.consumption[1].curtailable - low.consumption[1].curtailable).abs() < 1e-12);
    }

    #[test]
    fn vanishing_elasticity_keeps_demand() {
        let mut cfg = single_customer_cfg();
        cfg.elasticity = vec![-1e-12];
        let (obs, mut rng) = reset(&cfg, 0).unwrap();
        for price in [0.0, 3.0, 12.0] {
            let (_, out) = step(&cfg, &obs, &PriceAction::uniform(price, 1), &mut rng).unwrap();
            assert!((out.consumption[0].curtailable - 10.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dissatisfaction_zero_iff_no_curtailment() {
        let cfg = single_customer_cfg();
        let (obs, mut rng) = reset(&cfg, 0).unwrap();
        // no deviation -> zero dissatisfaction
        let (_, neutral) = step(&cfg, &obs, &PriceAction::uniform(4.0, 1), &mut rng).unwrap();
        assert_eq!(neutral.dissatisfaction[0], 0.0);
        // any curtailment (alpha > 0, beta >= 0, shed > 0) -> strictly positive
        let (_, shed) = step(&cfg, &obs, &PriceAction::uniform(8.0, 1), &mut rng).unwrap();
        assert!(shed.dissatisfaction[0] > 0.0);
    }

    #[test]
    fn reset_is_deterministic_without_noise() {
        let cfg = two_hour_cfg();
        let (a, _) = reset(&cfg, 42).unwrap();
        let (b, _) = reset(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.t, 1);
        assert_eq!(a.base_demand.len(), 2);
        assert!(a.prev_consumption.iter().all(|p| p.total() == 0.0));
    }

    #[test]
    fn noisy_reset_is_seed_deterministic() {
        let mut cfg = two_hour_cfg();
        cfg.demand_noise_std = Some(0.1);
        let (a, _) = reset(&cfg, 42).unwrap();
        let (b, _) = reset(&cfg, 42).unwrap();
        let (c, _) = reset(&cfg, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a
            .base_demand
            .iter()
            .all(|d| d.critical >= 0.0 && d.curtailable >= 0.0));
    }

    #[test]
    fn episode_terminates_at_horizon() {
        let cfg = two_hour_cfg();
        let (obs1, mut rng) = reset(&cfg, 0).unwrap();
        let act = PriceAction::uniform(4.0, 2);
        let (next, out1) = step(&cfg, &obs1, &act, &mut rng).unwrap();
        let obs2 = next.expect("one more hour");
        assert_eq!(obs2.t, 2);
        // next observation carries this hour's consumption
        for n in 0..2 {
            assert!(
                (obs2.prev_consumption[n].critical - out1.consumption[n].critical).abs() < 1e-12
            );
            assert!(
                (obs2.prev_consumption[n].curtailable - out1.consumption[n].curtailable).abs()
                    < 1e-12
            );
        }
        let (next2, _) = step(&cfg, &obs2, &act, &mut rng).unwrap();
        assert!(next2.is_none());
        let mut terminal = obs2.clone();
        terminal.t = 3;
        assert!(matches!(
            step(&cfg, &terminal, &act, &mut rng),
            Err(Error::TerminalStep { .. })
        ));
    }

    #[test]
    fn rejects_out_of_bounds_and_off_grid_prices() {
        let mut cfg = single_customer_cfg();
        let (obs, mut rng) = reset(&cfg, 0).unwrap();
        assert!(matches!(
            step(&cfg, &obs, &PriceAction::uniform(12.5, 1), &mut rng),
            Err(Error::PriceOutOfBounds { .. })
        ));
        cfg.price_grid_step = Some(0.5);
        let (obs, mut rng) = reset(&cfg, 0).unwrap();
        assert!(matches!(
            step(&cfg, &obs, &PriceAction::uniform(3.25, 1), &mut rng),
            Err(Error::PriceOffGrid { .. })
        ));
        assert!(step(&cfg, &obs, &PriceAction::uniform(3.5, 1), &mut rng).is_ok());
    }

    #[test]
    fn config_validation_reports_fields() {
        let mut cfg = single_customer_cfg();
        cfg.elasticity = vec![0.1];
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "elasticity"),
            other => panic!("expected config error, got {other:?}"),
        }
        let mut cfg = single_customer_cfg();
        cfg.rho = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = single_customer_cfg();
        cfg.curt_demand = vec![vec![10.0, 1.0]];
        assert!(cfg.validate().is_err());
        let mut cfg = single_customer_cfg();
        cfg.price_grid_step = Some(0.7);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn price_grid_spans_bounds() {
        let mut cfg = single_customer_cfg();
        cfg.price_grid_step = Some(0.5);
        let grid = cfg.price_grid().unwrap();
        assert_eq!(grid.len(), 25);
        assert_eq!(grid[0], 0.0);
        assert_eq!(*grid.last().unwrap(), 12.0);
    }

    #[test]
    fn peak_hours_default_to_above_mean_wholesale() {
        let cfg = two_hour_cfg();
        // wholesale [4, 5], mean 4.5 -> hour 2 is peak
        assert_eq!(cfg.peak_hours_resolved(), vec![2]);
        let mut cfg = cfg;
        cfg.peak_hours = Some(vec![1]);
        assert_eq!(cfg.peak_hours_resolved(), vec![1]);
    }
}
