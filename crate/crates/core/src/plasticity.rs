//! Modulated local learning rules for the readout weights.
//!
//! Every rule maps the presynaptic Kenyon code `x_e` (length `n_hidden`), the
//! output activity `x_o` and the modulatory signal `x_m` (both length `n_out`)
//! plus the current weights to new weights. Synapse `(i, j)` pairs presynaptic
//! unit `i` with output/modulatory unit `j`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Weights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RuleId {
    /// General modulated rule.
    #[serde(rename = "GMR")]
    Gmr,
    /// Modulated covariance rule.
    #[serde(rename = "MCR")]
    Mcr,
    /// Nonlocal, stabilized covariance rule.
    #[serde(rename = "NSCR")]
    Nscr,
    /// Least mean square rule.
    #[serde(rename = "LMSR")]
    Lmsr,
    /// Self-limited rule.
    #[serde(rename = "SLR")]
    Slr,
    /// General unsupervised rule.
    #[serde(rename = "GUR")]
    Gur,
    /// Nonlocal, stabilized correlation rule.
    #[serde(rename = "NSCoR")]
    Nscor,
    /// Modulated Oja's rule.
    #[serde(rename = "MOR")]
    Mor,
}

impl RuleId {
    /// All rules, in their canonical order (also the one-hot order of the surrogate encoding).
    pub const ALL: [RuleId; 8] = [
        RuleId::Gmr,
        RuleId::Mcr,
        RuleId::Nscr,
        RuleId::Lmsr,
        RuleId::Slr,
        RuleId::Gur,
        RuleId::Nscor,
        RuleId::Mor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleId::Gmr => "GMR",
            RuleId::Mcr => "MCR",
            RuleId::Nscr => "NSCR",
            RuleId::Lmsr => "LMSR",
            RuleId::Slr => "SLR",
            RuleId::Gur => "GUR",
            RuleId::Nscor => "NSCoR",
            RuleId::Mor => "MOR",
        }
    }

    pub fn index(self) -> usize {
        RuleId::ALL.iter().position(|&r| r == self).unwrap()
    }

    /// Whether every update is multiplied by `ReLU(x_m - x_o)`, so a closed gate leaves `W` as is.
    pub fn is_gated(self) -> bool {
        matches!(
            self,
            RuleId::Mcr | RuleId::Nscr | RuleId::Nscor | RuleId::Mor | RuleId::Slr
        )
    }

    /// Whether the rule adds an increment to `W` (all but SLR, which replaces it).
    pub fn is_additive(self) -> bool {
        self != RuleId::Slr
    }

    /// Which of `beta1..beta3` the rule reads.
    pub fn active_betas(self) -> usize {
        match self {
            RuleId::Lmsr => 0,
            RuleId::Gmr | RuleId::Gur => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RuleId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RuleId::ALL
            .iter()
            .copied()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = RuleId::ALL.iter().map(|r| r.name()).collect();
                Error::config(
                    "rule",
                    format!("unknown rule {s:?}; valid rules are {}", names.join(", ")),
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Ceiling of the self-limited rule.
    #[serde(default = "default_w0")]
    pub w0: f64,
}

fn default_w0() -> f64 {
    1.0
}

impl RuleParams {
    pub fn new(alpha: f64, beta1: f64, beta2: f64, beta3: f64) -> Self {
        Self {
            alpha,
            beta1,
            beta2,
            beta3,
            w0: 1.0,
        }
    }
}

/// Activity seen by the plastic layer for one presented sample.
#[derive(Debug, Clone, Copy)]
pub struct SynapticInputs<'a> {
    pub x_e: &'a [f64],
    pub x_o: &'a [f64],
    pub x_m: &'a [f64],
}

impl<'a> SynapticInputs<'a> {
    pub fn new(x_e: &'a [f64], x_o: &'a [f64], x_m: &'a [f64]) -> Self {
        Self { x_e, x_o, x_m }
    }

    fn check(&self, w: &Weights) -> Result<()> {
        let (rows, cols) = w.shape();
        if self.x_e.len() != rows || self.x_o.len() != cols || self.x_m.len() != cols {
            return Err(Error::Shape(format!(
                "x_e {}, x_o {}, x_m {} against weights {rows}x{cols}",
                self.x_e.len(),
                self.x_o.len(),
                self.x_m.len()
            )));
        }
        Ok(())
    }

    fn gates(&self) -> Vec<f64> {
        self.x_m
            .iter()
            .zip(self.x_o)
            .map(|(&m, &o)| relu(m - o))
            .collect()
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Update `w` in place under `rule`. Parameters a rule does not use are ignored.
pub fn update_in_place(
    rule: RuleId,
    s: &SynapticInputs<'_>,
    p: &RuleParams,
    w: &mut Weights,
) -> Result<()> {
    s.check(w)?;
    let cols = w.cols();
    let x_e = s.x_e;
    let x_o = s.x_o;
    let x_m = s.x_m;
    let alpha = p.alpha;
    let data = w.as_mut_slice();
    match rule {
        RuleId::Mcr => {
            let coef: Vec<f64> = s
                .gates()
                .iter()
                .zip(x_m)
                .map(|(&g, &m)| alpha * g * (m - p.beta1))
                .collect();
            for (i, row) in data.chunks_exact_mut(cols).enumerate() {
                let e = x_e[i];
                if e == 0.0 {
                    continue;
                }
                for (wij, &c) in row.iter_mut().zip(&coef) {
                    *wij += c * e;
                }
            }
        }
        RuleId::Nscr => {
            let g: f64 = s.gates().iter().sum();
            let ag = alpha * g;
            if ag == 0.0 {
                return Ok(());
            }
            for (i, row) in data.chunks_exact_mut(cols).enumerate() {
                let e = x_e[i];
                if e == 0.0 {
                    continue;
                }
                for (wij, &m) in row.iter_mut().zip(x_m) {
                    *wij += ag * e * (m - p.beta1 * *wij);
                }
            }
        }
        RuleId::Nscor => {
            let g: f64 = s.gates().iter().sum();
            let ag = alpha * g;
            if ag == 0.0 {
                return Ok(());
            }
            for (i, row) in data.chunks_exact_mut(cols).enumerate() {
                let e = x_e[i];
                for (wij, &m) in row.iter_mut().zip(x_m) {
                    *wij += ag * (e * m - p.beta1 * *wij);
                }
            }
        }
        RuleId::Mor => {
            let ag: Vec<f64> = s.gates().iter().map(|&g| alpha * g).collect();
            let decay: Vec<f64> = x_o.iter().map(|&o| p.beta1 * o * o).collect();
            for (i, row) in data.chunks_exact_mut(cols).enumerate() {
                let e = x_e[i];
                for j in 0..cols {
                    if ag[j] != 0.0 {
                        row[j] += ag[j] * (e * x_m[j] - decay[j] * row[j]);
                    }
                }
            }
        }
        RuleId::Lmsr => {
            let err: Vec<f64> = x_m.iter().zip(x_o).map(|(&m, &o)| m - o).collect();
            for (i, row) in data.chunks_exact_mut(cols).enumerate() {
                let e = x_e[i];
                if e == 0.0 {
                    continue;
                }
                let ae = alpha * e;
                for (wij, &d) in row.iter_mut().zip(&err) {
                    *wij += ae * d;
                }
            }
        }
        RuleId::Slr => {
            let ag: Vec<f64> = s.gates().iter().map(|&g| alpha * g).collect();
            for (i, row) in data.chunks_exact_mut(cols).enumerate() {
                let e = x_e[i];
                for j in 0..cols {
                    let a = ag[j];
                    if a != 0.0 {
                        row[j] = (row[j] + p.w0 * (a * e)) / (1.0 + a * (p.beta1 + e));
                    }
                }
            }
        }
        RuleId::Gmr => {
            for (i, row) in data.chunks_exact_mut(cols).enumerate() {
                let e = x_e[i];
                for j in 0..cols {
                    let o = x_o[j];
                    row[j] += alpha * x_m[j] * (p.beta1 * o + p.beta2 * (o - e) + p.beta3);
                }
            }
        }
        RuleId::Gur => {
            for (i, row) in data.chunks_exact_mut(cols).enumerate() {
                let e = x_e[i];
                for j in 0..cols {
                    let o = x_o[j];
                    row[j] += alpha * (p.beta1 * o + p.beta2 * (o - e) + p.beta3);
                }
            }
        }
    }
    Ok(())
}

/// Pure form of [`update_in_place`]: returns the updated weights.
pub fn apply_rule(
    rule: RuleId,
    s: &SynapticInputs<'_>,
    p: &RuleParams,
    w: &Weights,
) -> Result<Weights> {
    let mut out = w.clone();
    update_in_place(rule, s, p, &mut out)?;
    Ok(out)
}

pub fn mcr(s: &SynapticInputs<'_>, p: &RuleParams, w: &Weights) -> Result<Weights> {
    apply_rule(RuleId::Mcr, s, p, w)
}

pub fn nscr(s: &SynapticInputs<'_>, p: &RuleParams, w: &Weights) -> Result<Weights> {
    apply_rule(RuleId::Nscr, s, p, w)
}

pub fn nscor(s: &SynapticInputs<'_>, p: &RuleParams, w: &Weights) -> Result<Weights> {
    apply_rule(RuleId::Nscor, s, p, w)
}

pub fn mor(s: &SynapticInputs<'_>, p: &RuleParams, w: &Weights) -> Result<Weights> {
    apply_rule(RuleId::Mor, s, p, w)
}

pub fn lmsr(s: &SynapticInputs<'_>, p: &RuleParams, w: &Weights) -> Result<Weights> {
    apply_rule(RuleId::Lmsr, s, p, w)
}

pub fn slr(s: &SynapticInputs<'_>, p: &RuleParams, w: &Weights) -> Result<Weights> {
    apply_rule(RuleId::Slr, s, p, w)
}

pub fn gmr(s: &SynapticInputs<'_>, p: &RuleParams, w: &Weights) -> Result<Weights> {
    apply_rule(RuleId::Gmr, s, p, w)
}

pub fn gur(s: &SynapticInputs<'_>, p: &RuleParams, w: &Weights) -> Result<Weights> {
    apply_rule(RuleId::Gur, s, p, w)
}
