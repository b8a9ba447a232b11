//! The fixed part of the mushroom-body network: a sparse random fan-out from the
//! input (antennal lobe) into the Kenyon layer, a k-winners-take-all code, and the
//! dense plastic readout into a handful of output neurons.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub fan_in: usize,
    pub k_active: usize,
    /// Strength of the one-step subtractive lateral inhibition among outputs.
    pub gamma: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_in: 784,
            n_hidden: 1000,
            n_out: 10,
            fan_in: 32,
            k_active: 50,
            gamma: 0.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("net.n_in", self.n_in),
            ("net.n_hidden", self.n_hidden),
            ("net.n_out", self.n_out),
            ("net.fan_in", self.fan_in),
            ("net.k_active", self.k_active),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if self.fan_in > self.n_in {
            return Err(Error::config(
                "net.fan_in",
                format!("fan_in {} exceeds n_in {}", self.fan_in, self.n_in),
            ));
        }
        if self.k_active > self.n_hidden {
            return Err(Error::config(
                "net.k_active",
                format!(
                    "k_active {} exceeds n_hidden {}",
                    self.k_active, self.n_hidden
                ),
            ));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::config("net.gamma", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Sparse random connectivity from inputs to Kenyon cells; every hidden unit
/// reads exactly `fan_in` distinct inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Projection {
    n_in: usize,
    n_hidden: usize,
    fan_in: usize,
    // row-major, `fan_in` sorted input indices per hidden unit
    connections: Vec<u32>,
}

impl Projection {
    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn fan_in(&self) -> usize {
        self.fan_in
    }

    pub fn connections(&self, hidden: usize) -> &[u32] {
        &self.connections[hidden * self.fan_in..(hidden + 1) * self.fan_in]
    }

    /// Pre-activations `h_j = sum of u_i over the inputs of unit j`.
    pub fn drive(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.n_in {
            return Err(Error::Shape(format!(
                "input has {} values, projection expects {}",
                u.len(),
                self.n_in
            )));
        }
        Ok(self
            .connections
            .chunks_exact(self.fan_in)
            .map(|c| c.iter().map(|&i| u[i as usize]).sum())
            .collect())
    }

    /// Same as [`drive`](Self::drive) on raw 8-bit intensities; integer sums are
    /// exact, so ties are decided exactly.
    pub fn drive_bytes(&self, u: &[u8]) -> Result<Vec<u32>> {
        if u.len() != self.n_in {
            return Err(Error::Shape(format!(
                "input has {} values, projection expects {}",
                u.len(),
                self.n_in
            )));
        }
        Ok(self
            .connections
            .chunks_exact(self.fan_in)
            .map(|c| c.iter().map(|&i| u32::from(u[i as usize])).sum())
            .collect())
    }
}

pub fn build_projection(cfg: &NetConfig, seed: u64) -> Result<Projection> {
    if cfg.fan_in > cfg.n_in {
        return Err(Error::Argument(format!(
            "fan_in {} exceeds n_in {}",
            cfg.fan_in, cfg.n_in
        )));
    }
    if cfg.fan_in == 0 {
        return Err(Error::Argument("fan_in must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut connections = Vec::with_capacity(cfg.n_hidden * cfg.fan_in);
    for _ in 0..cfg.n_hidden {
        let mut picks: Vec<u32> = rand::seq::index::sample(&mut rng, cfg.n_in, cfg.fan_in)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        picks.sort_unstable();
        connections.extend(picks);
    }
    Ok(Projection {
        n_in: cfg.n_in,
        n_hidden: cfg.n_hidden,
        fan_in: cfg.fan_in,
        connections,
    })
}

/// Binary Kenyon-cell code, stored as the sorted indices of the active units.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SparseCode {
    n_hidden: usize,
    active: Vec<u32>,
}

impl SparseCode {
    pub fn from_active(n_hidden: usize, mut active: Vec<u32>) -> Result<Self> {
        active.sort_unstable();
        active.dedup();
        if active.last().is_some_and(|&a| a as usize >= n_hidden) {
            return Err(Error::Shape(format!(
                "active unit out of range for {n_hidden} hidden units"
            )));
        }
        Ok(Self { n_hidden, active })
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn active(&self) -> &[u32] {
        &self.active
    }

    pub fn k(&self) -> usize {
        self.active.len()
    }

    /// The code as a 0/1 vector of length `n_hidden`.
    pub fn dense(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.n_hidden];
        for &a in &self.active {
            x[a as usize] = 1.0;
        }
        x
    }
}

/// Indices of the `k` largest values, ties going to the lower index.
fn top_k<T, F>(values: &[T], k: usize, cmp: F) -> Vec<u32>
where
    F: Fn(&T, &T) -> std::cmp::Ordering,
{
    let mut idx: Vec<u32> = (0..values.len() as u32).collect();
    if k < idx.len() {
        let order =
            |a: &u32, b: &u32| cmp(&values[*b as usize], &values[*a as usize]).then(a.cmp(b));
        if k > 0 {
            idx.select_nth_unstable_by(k - 1, order);
        }
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}

/// k-winners-take-all code of input `u`.
pub fn encode(u: &[f64], proj: &Projection, k: usize) -> Result<SparseCode> {
    if k > proj.n_hidden {
        return Err(Error::Argument(format!(
            "k = {k} exceeds {} hidden units",
            proj.n_hidden
        )));
    }
    let h = proj.drive(u)?;
    Ok(SparseCode {
        n_hidden: proj.n_hidden,
        active: top_k(&h, k, |a, b| a.total_cmp(b)),
    })
}

/// [`encode`] for raw 8-bit images (intensity `byte / 255`). Drives are summed as
/// integers, so tied units are detected exactly before the lower-index rule applies.
pub fn encode_bytes(u: &[u8], proj: &Projection, k: usize) -> Result<SparseCode> {
    if k > proj.n_hidden {
        return Err(Error::Argument(format!(
            "k = {k} exceeds {} hidden units",
            proj.n_hidden
        )));
    }
    let h = proj.drive_bytes(u)?;
    Ok(SparseCode {
        n_hidden: proj.n_hidden,
        active: top_k(&h, k, |a, b| a.cmp(b)),
    })
}

/// Activity-independent k-WTA over an explicit pre-activation vector.
pub fn k_winners(h: &[f64], k: usize) -> Result<SparseCode> {
    if k > h.len() {
        return Err(Error::Argument(format!(
            "k = {k} exceeds {} units",
            h.len()
        )));
    }
    Ok(SparseCode {
        n_hidden: h.len(),
        active: top_k(h, k, |a, b| a.total_cmp(b)),
    })
}

/// The plastic readout matrix, `n_hidden x n_out`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Weights {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Weights {
        Weights {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }
}

/// Output-layer activity `x_o`; entries are non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputActivity(pub Vec<f64>);

impl OutputActivity {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Normalized linear drive `z_j = (1/k_active) * sum_i W_ij x_e,i` for a dense presynaptic vector.
pub fn linear_drive(x_e: &[f64], w: &Weights, k_active: usize) -> Result<Vec<f64>> {
    if x_e.len() != w.rows {
        return Err(Error::Shape(format!(
            "presynaptic vector of length {} against {} weight rows",
            x_e.len(),
            w.rows
        )));
    }
    let mut z = vec![0.0; w.cols];
    for (i, &x) in x_e.iter().enumerate() {
        if x != 0.0 {
            for (zj, &wij) in z.iter_mut().zip(w.row(i)) {
                *zj += wij * x;
            }
        }
    }
    let scale = 1.0 / k_active as f64;
    z.iter_mut().for_each(|v| *v *= scale);
    Ok(z)
}

/// Subtractive lateral inhibition followed by rectification.
pub fn inhibit(z: &[f64], gamma: f64) -> Vec<f64> {
    let shift = if gamma == 0.0 || z.is_empty() {
        0.0
    } else {
        gamma * z.iter().sum::<f64>() / z.len() as f64
    };
    z.iter().map(|&v| (v - shift).max(0.0)).collect()
}

/// Drive and activity for a sparse code without the full-matrix finiteness scan;
/// non-finite drive is reported instead.
pub(crate) fn forward_active(active: &[u32], w: &Weights, cfg: &NetConfig) -> Result<Vec<f64>> {
    let mut z = vec![0.0; w.cols];
    for &a in active {
        for (zj, &wij) in z.iter_mut().zip(w.row(a as usize)) {
            *zj += wij;
        }
    }
    let scale = 1.0 / cfg.k_active as f64;
    z.iter_mut().for_each(|v| *v *= scale);
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite output drive".into()));
    }
    Ok(inhibit(&z, cfg.gamma))
}

pub fn forward(x_e: &SparseCode, w: &Weights, cfg: &NetConfig) -> Result<OutputActivity> {
    if x_e.n_hidden != w.rows || w.cols != cfg.n_out {
        return Err(Error::Shape(format!(
            "code over {} units and {} outputs against a {}x{} weight matrix",
            x_e.n_hidden, cfg.n_out, w.rows, w.cols
        )));
    }
    if !w.is_finite() {
        return Err(Error::Numeric(
            "weight matrix contains non-finite values".into(),
        ));
    }
    forward_active(&x_e.active, w, cfg).map(OutputActivity)
}

/// Index of the largest activity, lowest index on ties.
pub fn predict(x_o: &[f64]) -> Result<usize> {
    if x_o.is_empty() {
        return Err(Error::Argument("empty output activity".into()));
    }
    let mut best = 0;
    for (j, &v) in x_o.iter().enumerate().skip(1) {
        if v > x_o[best] {
            best = j;
        }
    }
    Ok(best)
}
