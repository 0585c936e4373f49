//! Run configuration: TOML loading, key overrides, and resolution into the
//! domain config types.
//!
//! The file has five sections — `[market]`, `[keys]`, `[advantage]`,
//! `[trust]`, `[train]` — and every field is addressable by name for
//! overrides, either as a dotted path (`trust.delta`) or as a bare field name
//! (`delta`) when it is unambiguous.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dual::TrustRegionSpec;
use crate::error::{Error, Result};
use crate::market::MarketConfig;
use crate::mdp::DiscountSpec;
use crate::statekey::KeyScheme;
use crate::trainer::{
    ActionMode, BaselineKind, EstimatorKind, ParticleParams, QLearnParams, TrainConfig,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KeysSection {
    pub key_scheme: String,
    pub bin_width: f64,
}

impl Default for KeysSection {
    fn default() -> Self {
        Self {
            key_scheme: "time_only".to_string(),
            bin_width: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdvantageSection {
    pub advantage_estimator: String,
    pub gae_lambda: f64,
    pub td_n: usize,
    pub value_lr: f64,
}

impl Default for AdvantageSection {
    fn default() -> Self {
        Self {
            advantage_estimator: "mc".to_string(),
            gae_lambda: 0.95,
            td_n: 4,
            value_lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustSection {
    pub delta: f64,
    pub beta_min: f64,
    pub basin_hops: usize,
    pub local_tol: f64,
    pub beta_init: f64,
    pub rho_weighted_states: bool,
}

impl Default for TrustSection {
    fn default() -> Self {
        let spec = TrustRegionSpec::default();
        Self {
            delta: spec.delta,
            beta_min: spec.beta_min,
            basin_hops: spec.hops,
            local_tol: spec.local_tol,
            beta_init: spec.beta_init,
            rho_weighted_states: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub seed: u64,
    pub discount: f64,
    pub action_mode: String,
    pub baseline: String,
    pub particles_per_state: usize,
    pub bandwidth: f64,
    pub resample_threshold: f64,
    pub q_learning_rate: f64,
    pub q_epsilon_start: f64,
    pub q_epsilon_end: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let particle = ParticleParams::default();
        let qlearn = QLearnParams::default();
        Self {
            iterations: 200,
            episodes_per_iteration: 8,
            seed: 1,
            discount: 1.0,
            action_mode: "discrete".to_string(),
            baseline: "none".to_string(),
            particles_per_state: particle.per_state,
            bandwidth: particle.bandwidth,
            resample_threshold: particle.resample_threshold,
            q_learning_rate: qlearn.learning_rate,
            q_epsilon_start: qlearn.epsilon_start,
            q_epsilon_end: qlearn.epsilon_end,
        }
    }
}

/// The whole run configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketConfig,
    #[serde(default)]
    pub keys: KeysSection,
    #[serde(default)]
    pub advantage: AdvantageSection,
    #[serde(default)]
    pub trust: TrustSection,
    #[serde(default)]
    pub train: TrainSection,
}

/// Field registry used to resolve bare override names to their section.
const SECTIONS: &[(&str, &[&str])] = &[
    (
        "market",
        &[
            "n_customers",
            "horizon",
            "wholesale",
            "elasticity",
            "crit_demand",
            "curt_demand",
            "alpha",
            "beta",
            "rho",
            "price_min",
            "price_max",
            "price_grid_step",
            "demand_noise_std",
            "peak_hours",
        ],
    ),
    ("keys", &["key_scheme", "bin_width"]),
    (
        "advantage",
        &["advantage_estimator", "gae_lambda", "td_n", "value_lr"],
    ),
    (
        "trust",
        &[
            "delta",
            "beta_min",
            "basin_hops",
            "local_tol",
            "beta_init",
            "rho_weighted_states",
        ],
    ),
    (
        "train",
        &[
            "iterations",
            "episodes_per_iteration",
            "seed",
            "discount",
            "action_mode",
            "baseline",
            "particles_per_state",
            "bandwidth",
            "resample_threshold",
            "q_learning_rate",
            "q_epsilon_start",
            "q_epsilon_end",
        ],
    ),
];

fn parse_override_value(raw: &str) -> toml::Value {
    // wrap as a document so numbers, bools, arrays, and quoted strings all
    // parse; fall back to a bare string
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").expect("key v just inserted"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Apply one `key=value` override to a parsed config document. `key` is
/// either `section.field` or a bare field name unique across sections.
pub fn apply_override(doc: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let (section, field) = if let Some((section, field)) = key.split_once('.') {
        let known = SECTIONS
            .iter()
            .find(|(s, _)| *s == section)
            .ok_or_else(|| Error::ConfigParse(format!("unknown config section '{section}'")))?;
        if !known.1.contains(&field) {
            return Err(Error::ConfigParse(format!(
                "unknown config key '{field}' in section '{section}'"
            )));
        }
        (section, field)
    } else {
        let mut matches = SECTIONS
            .iter()
            .filter(|(_, fields)| fields.contains(&key))
            .map(|(s, _)| *s);
        let section = matches
            .next()
            .ok_or_else(|| Error::ConfigParse(format!("unknown config key '{key}'")))?;
        if matches.next().is_some() {
            return Err(Error::ConfigParse(format!(
                "ambiguous config key '{key}'; qualify it as section.{key}"
            )));
        }
        (section, key)
    };
    let entry = doc
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let table = entry
        .as_table_mut()
        .ok_or_else(|| Error::ConfigParse(format!("config section '{section}' is not a table")))?;
    table.insert(field.to_string(), parse_override_value(value));
    Ok(())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_str_with_overrides(text, &[])
    }

    /// Parse a config document and apply `key=value` overrides before
    /// deserializing.
    pub fn from_toml_str_with_overrides(
        text: &str,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        for (key, value) in overrides {
            apply_override(&mut doc, key, value)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))?;
        cfg.market.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    pub fn load_with_overrides(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::ConfigParse(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::from_toml_str_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn key_scheme(&self) -> Result<KeyScheme> {
        let scheme = match self.keys.key_scheme.as_str() {
            "time_only" => KeyScheme::TimeOnly,
            "time_plus_demand_bins" => KeyScheme::TimePlusDemandBins {
                bin_width: self.keys.bin_width,
            },
            other => {
                return Err(Error::invalid_config(
                    "key_scheme",
                    format!("unknown scheme '{other}'"),
                ))
            }
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn estimator(&self) -> Result<EstimatorKind> {
        match self.advantage.advantage_estimator.as_str() {
            "mc" => Ok(EstimatorKind::MonteCarlo),
            "gae" => Ok(EstimatorKind::Gae {
                lambda: self.advantage.gae_lambda,
            }),
            "nstep" => Ok(EstimatorKind::NStep {
                n: self.advantage.td_n,
            }),
            other => Err(Error::invalid_config(
                "advantage_estimator",
                format!("unknown estimator '{other}' (expected mc, gae, or nstep)"),
            )),
        }
    }

    pub fn action_mode(&self) -> Result<ActionMode> {
        match self.train.action_mode.as_str() {
            "discrete" => Ok(ActionMode::Discrete),
            "continuous" => Ok(ActionMode::Continuous),
            other => Err(Error::invalid_config(
                "action_mode",
                format!("unknown mode '{other}' (expected discrete or continuous)"),
            )),
        }
    }

    pub fn baseline(&self) -> Result<BaselineKind> {
        match self.train.baseline.as_str() {
            "none" => Ok(BaselineKind::None),
            "random" => Ok(BaselineKind::Random),
            "qlearning" => Ok(BaselineKind::QLearning),
            other => Err(Error::invalid_config(
                "baseline",
                format!("unknown baseline '{other}' (expected none, random, or qlearning)"),
            )),
        }
    }

    /// Resolve the training sections into a validated `TrainConfig`.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            iterations: self.train.iterations,
            episodes_per_iteration: self.train.episodes_per_iteration,
            seed: self.train.seed,
            trust: TrustRegionSpec {
                delta: self.trust.delta,
                beta_min: self.trust.beta_min,
                hops: self.trust.basin_hops,
                local_tol: self.trust.local_tol,
                beta_init: self.trust.beta_init,
                seed: 0,
            },
            discount: DiscountSpec::new(self.train.discount)?,
            estimator: self.estimator()?,
            value_lr: self.advantage.value_lr,
            scheme: self.key_scheme()?,
            action_mode: self.action_mode()?,
            baseline: self.baseline()?,
            particle: ParticleParams {
                per_state: self.train.particles_per_state,
                bandwidth: self.train.bandwidth,
                resample_threshold: self.train.resample_threshold,
            },
            qlearn: QLearnParams {
                learning_rate: self.train.q_learning_rate,
                epsilon_start: self.train.q_epsilon_start,
                epsilon_end: self.train.q_epsilon_end,
            },
            rho_weighted_states: self.trust.rho_weighted_states,
        };
        cfg.validate(&self.market)?;
        Ok(cfg)
    }
}
