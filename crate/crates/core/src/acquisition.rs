//! Acquisition functions for a minimized objective, the hedge (multi-armed
//! bandit) selector over them, and pool-based candidate proposal.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{encode_unchecked, Configuration, SearchSpaceDef};
use crate::surrogate::ForestModel;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `f_best`.
pub fn ei(mean: f64, spread: f64, f_best: f64) -> f64 {
    let gap = f_best - mean;
    if spread <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / spread;
    (gap * norm_cdf(z) + spread * norm_pdf(z)).max(0.0)
}

/// Probability of improving on `f_best`.
pub fn pi(mean: f64, spread: f64, f_best: f64) -> f64 {
    if spread <= 0.0 {
        return if mean < f_best { 1.0 } else { 0.0 };
    }
    norm_cdf((f_best - mean) / spread)
}

/// Lower confidence bound; smaller is more promising.
pub fn lcb(mean: f64, spread: f64, kappa: f64) -> f64 {
    mean - kappa * spread
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Acquisition {
    #[serde(rename = "EI")]
    Ei,
    #[serde(rename = "PI")]
    Pi,
    #[serde(rename = "LCB")]
    Lcb,
}

impl Acquisition {
    pub const ALL: [Acquisition; 3] = [Acquisition::Ei, Acquisition::Pi, Acquisition::Lcb];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Acquisition::Ei => "EI",
            Acquisition::Pi => "PI",
            Acquisition::Lcb => "LCB",
        }
    }

    /// Score oriented so that larger is better.
    pub fn utility(self, mean: f64, spread: f64, f_best: f64, kappa: f64) -> f64 {
        match self {
            Acquisition::Ei => ei(mean, spread, f_best),
            Acquisition::Pi => pi(mean, spread, f_best),
            Acquisition::Lcb => -lcb(mean, spread, kappa),
        }
    }
}

impl fmt::Display for Acquisition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Gains and sampling state of the portfolio selector.
#[derive(Debug, Clone)]
pub struct HedgeState {
    gains: [f64; 3],
    eta: f64,
    rng: ChaCha8Rng,
}

impl HedgeState {
    pub fn new(eta: f64, seed: u64) -> Result<Self> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::config("search.eta", "must be finite and > 0"));
        }
        Ok(Self {
            gains: [0.0; 3],
            eta,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn with_gains(gains: [f64; 3], eta: f64, seed: u64) -> Result<Self> {
        let mut s = Self::new(eta, seed)?;
        s.gains = gains;
        Ok(s)
    }

    pub fn gains(&self) -> [f64; 3] {
        self.gains
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `softmax(eta * gains)`, shifted by the maximum so large gains stay finite.
    pub fn probabilities(&self) -> [f64; 3] {
        let scaled = self.gains.map(|g| self.eta * g);
        let top = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w = scaled.map(|s| (s - top).exp());
        let total: f64 = w.iter().sum();
        w.map(|v| v / total)
    }
}

/// Sample an acquisition function from the hedge distribution; advances the state's generator.
pub fn hedge_select(state: &mut HedgeState) -> Acquisition {
    let p = state.probabilities();
    let u: f64 = state.rng.gen();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return Acquisition::ALL[k];
        }
    }
    *Acquisition::ALL
        .iter()
        .rev()
        .find(|a| p[a.index()] > 0.0)
        .unwrap_or(&Acquisition::Lcb)
}

/// Credit `reward` to the chosen arm.
pub fn hedge_update(state: &mut HedgeState, chosen: Acquisition, reward: f64) -> Result<()> {
    if !reward.is_finite() {
        return Err(Error::Numeric(format!("non-finite hedge reward {reward}")));
    }
    state.gains[chosen.index()] += reward;
    Ok(())
}

/// Hedge-selected candidate from a uniformly drawn pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub config: Configuration,
    pub acquisition: Acquisition,
    pub predicted_mean: f64,
    pub predicted_spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalSettings {
    pub pool_size: usize,
    pub kappa: f64,
}

impl Default for ProposalSettings {
    fn default() -> Self {
        Self {
            pool_size: 10_000,
            kappa: 1.96,
        }
    }
}

/// Score `pool` with `acq` and return the index of the best candidate (first on ties),
/// skipping any index for which `exclude` is true.
pub fn best_in_pool(
    model: &ForestModel,
    pool: &[Configuration],
    acq: Acquisition,
    f_best: f64,
    kappa: f64,
    exclude: impl Fn(&Configuration) -> bool + Sync,
) -> Option<(usize, f64, f64)> {
    let scored: Vec<Option<(f64, f64, f64)>> = pool
        .par_iter()
        .map(|c| {
            if exclude(c) {
                return None;
            }
            let (mean, spread) = model.predict_unchecked(&encode_unchecked(c));
            Some((acq.utility(mean, spread, f_best, kappa), mean, spread))
        })
        .collect();
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for (k, s) in scored.into_iter().enumerate() {
        if let Some((u, m, sd)) = s {
            if best.is_none_or(|(_, bu, _, _)| u > bu) {
                best = Some((k, u, m, sd));
            }
        }
    }
    best.map(|(k, _, m, sd)| (k, m, sd))
}

/// Draw `pool_size` random configurations, pick an acquisition with the hedge and
/// return the candidate it rates best. Candidates for which `exclude` holds are
/// skipped unless nothing else remains.
pub fn propose<R: Rng + ?Sized>(
    model: &ForestModel,
    space: &SearchSpaceDef,
    f_best: f64,
    hedge: &mut HedgeState,
    settings: &ProposalSettings,
    rng: &mut R,
    exclude: impl Fn(&Configuration) -> bool + Sync,
) -> Result<Proposal> {
    if settings.pool_size == 0 {
        return Err(Error::config("search.pool_size", "must be at least 1"));
    }
    let pool: Vec<Configuration> = (0..settings.pool_size)
        .map(|_| space.random_config(rng))
        .collect();
    let acquisition = hedge_select(hedge);
    let pick = best_in_pool(model, &pool, acquisition, f_best, settings.kappa, &exclude)
        .or_else(|| best_in_pool(model, &pool, acquisition, f_best, settings.kappa, |_| false))
        .expect("pool is non-empty");
    Ok(Proposal {
        config: pool[pick.0],
        acquisition,
        predicted_mean: pick.1,
        predicted_spread: pick.2,
    })
}
