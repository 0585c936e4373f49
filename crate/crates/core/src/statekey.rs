//! Discretization of observations into the keys that index the tabular
//! policy and value estimator.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mdp::Observation;

/// Opaque hashable token derived from an observation. Identical observations
/// always map to identical keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey {
    t: u32,
    bin: Option<u32>,
}

impl StateKey {
    pub fn hour(&self) -> usize {
        self.t as usize
    }

    pub fn demand_bin(&self) -> Option<u32> {
        self.bin
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.bin {
            None => write!(f, "t={}", self.t),
            Some(b) => write!(f, "t={},b={}", self.t, b),
        }
    }
}

impl FromStr for StateKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = || Error::InvalidArgument(format!("malformed state key '{s}'"));
        let mut t = None;
        let mut bin = None;
        for part in s.split(',') {
            let (name, value) = part.split_once('=').ok_or_else(err)?;
            match name {
                "t" => t = Some(value.parse::<u32>().map_err(|_| err())?),
                "b" => bin = Some(value.parse::<u32>().map_err(|_| err())?),
                _ => return Err(err()),
            }
        }
        Ok(StateKey {
            t: t.ok_or_else(err)?,
            bin,
        })
    }
}

impl Serialize for StateKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// How observations are keyed.
///
/// `TimeOnly` is exact for the deterministic small case where every exogenous
/// signal is a function of the hour; the binned mode adds a coarse total-demand
/// bin for the noisy scale-up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KeyScheme {
    TimeOnly,
    TimePlusDemandBins { bin_width: f64 },
}

impl KeyScheme {
    pub fn validate(&self) -> Result<()> {
        if let KeyScheme::TimePlusDemandBins { bin_width } = self {
            if !(*bin_width > 0.0) {
                return Err(Error::invalid_config(
                    "bin_width",
                    format!("must be > 0, got {bin_width}"),
                ));
            }
        }
        Ok(())
    }
}

/// Pure mapping from observation to key.
pub fn key_of(obs: &Observation, scheme: KeyScheme) -> StateKey {
    match scheme {
        KeyScheme::TimeOnly => StateKey {
            t: obs.t as u32,
            bin: None,
        },
        KeyScheme::TimePlusDemandBins { bin_width } => StateKey {
            t: obs.t as u32,
            bin: Some((obs.total_base_demand() / bin_width).floor() as u32),
        },
    }
}
