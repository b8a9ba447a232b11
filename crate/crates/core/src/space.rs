//! The joint search space: a categorical learning rule plus four log-scaled
//! continuous parameters shared by all rules.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plasticity::{RuleId, RuleParams};

/// Closed interval sampled on a log10 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRange {
    pub low: f64,
    pub high: f64,
}

impl LogRange {
    pub const fn new(low: f64, high: f64) -> Self {
        Self { low, high }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = (self.low.log10(), self.high.log10());
        let v = 10f64.powf(lo + (hi - lo) * rng.gen::<f64>());
        v.clamp(self.low, self.high)
    }
}

/// One point of the search space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub rule: RuleId,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl Configuration {
    pub fn params(&self) -> RuleParams {
        RuleParams::new(self.alpha, self.beta1, self.beta2, self.beta3)
    }

    pub(crate) fn continuous(&self) -> [f64; 4] {
        [self.alpha, self.beta1, self.beta2, self.beta3]
    }

    /// Bitwise identity, used to keep identical proposals out of flight.
    pub fn same_as(&self, other: &Configuration) -> bool {
        self.rule == other.rule
            && self
                .continuous()
                .iter()
                .zip(other.continuous())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub const CONTINUOUS_NAMES: [&str; 4] = ["alpha", "beta1", "beta2", "beta3"];

/// Length of an encoded configuration: one indicator per rule plus the four
/// log10-scaled continuous values.
pub const ENCODED_DIM: usize = RuleId::ALL.len() + 4;

pub type EncodedConfig = [f64; ENCODED_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpaceDef {
    pub rules: Vec<RuleId>,
    pub alpha: LogRange,
    pub beta1: LogRange,
    pub beta2: LogRange,
    pub beta3: LogRange,
}

impl Default for SearchSpaceDef {
    fn default() -> Self {
        Self {
            rules: RuleId::ALL.to_vec(),
            alpha: LogRange::new(1e-3, 1.0),
            beta1: LogRange::new(1e-5, 1.0),
            beta2: LogRange::new(1e-5, 1.0),
            beta3: LogRange::new(1e-5, 1.0),
        }
    }
}

impl SearchSpaceDef {
    fn ranges(&self) -> [LogRange; 4] {
        [self.alpha, self.beta1, self.beta2, self.beta3]
    }

    pub fn validate(&self) -> Result<()> {
        if self.rules.is_empty() {
            return Err(Error::config(
                "space.rules",
                "at least one rule is required",
            ));
        }
        for (name, r) in CONTINUOUS_NAMES.iter().zip(self.ranges()) {
            if !(r.low > 0.0 && r.low < r.high && r.high.is_finite()) {
                return Err(Error::config(
                    format!("space.{name}"),
                    format!("need 0 < low < high, got [{}, {}]", r.low, r.high),
                ));
            }
        }
        Ok(())
    }

    /// Checks a configuration against the rule set and every bound.
    pub fn check(&self, c: &Configuration) -> Result<()> {
        if !self.rules.contains(&c.rule) {
            return Err(Error::config(
                "rule",
                format!("{} is not part of the search space", c.rule),
            ));
        }
        for ((name, r), v) in CONTINUOUS_NAMES
            .iter()
            .zip(self.ranges())
            .zip(c.continuous())
        {
            if !r.contains(v) {
                return Err(Error::config(
                    *name,
                    format!("{v} is outside [{}, {}]", r.low, r.high),
                ));
            }
        }
        Ok(())
    }

    pub fn random_config<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let rule = self.rules[rng.gen_range(0..self.rules.len())];
        Configuration {
            rule,
            alpha: self.alpha.sample(rng),
            beta1: self.beta1.sample(rng),
            beta2: self.beta2.sample(rng),
            beta3: self.beta3.sample(rng),
        }
    }

    /// One-hot rule indicators followed by log10 of the continuous values.
    pub fn encode(&self, c: &Configuration) -> Result<EncodedConfig> {
        self.check(c)?;
        Ok(encode_unchecked(c))
    }

    pub fn decode(&self, x: &EncodedConfig) -> Result<Configuration> {
        let hot: Vec<usize> = (0..RuleId::ALL.len()).filter(|&k| x[k] == 1.0).collect();
        if hot.len() != 1 || (0..RuleId::ALL.len()).any(|k| x[k] != 0.0 && x[k] != 1.0) {
            return Err(Error::Argument(
                "rule block must hold exactly one indicator".into(),
            ));
        }
        let n = RuleId::ALL.len();
        let r = self.ranges();
        let c = Configuration {
            rule: RuleId::ALL[hot[0]],
            alpha: undo_log(x[n], r[0]),
            beta1: undo_log(x[n + 1], r[1]),
            beta2: undo_log(x[n + 2], r[2]),
            beta3: undo_log(x[n + 3], r[3]),
        };
        self.check(&c)?;
        Ok(c)
    }
}

// 10^x, snapping values a rounding error past a bound back onto it
fn undo_log(x: f64, range: LogRange) -> f64 {
    let v = 10f64.powf(x);
    let tol = 1e-12;
    if v < range.low && v >= range.low * (1.0 - tol) {
        range.low
    } else if v > range.high && v <= range.high * (1.0 + tol) {
        range.high
    } else {
        v
    }
}

pub(crate) fn encode_unchecked(c: &Configuration) -> EncodedConfig {
    let mut x = [0.0; ENCODED_DIM];
    x[c.rule.index()] = 1.0;
    let n = RuleId::ALL.len();
    for (k, v) in c.continuous().iter().enumerate() {
        x[n + k] = v.log10();
    }
    x
}

/// Uniform draw over the rules and log-uniform over each continuous range.
pub fn random_config<R: Rng + ?Sized>(space: &SearchSpaceDef, rng: &mut R) -> Configuration {
    space.random_config(rng)
}

pub fn encode_config(c: &Configuration, space: &SearchSpaceDef) -> Result<EncodedConfig> {
    space.encode(c)
}
