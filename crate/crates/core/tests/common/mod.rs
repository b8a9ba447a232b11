#![allow(dead_code)]

use std::path::PathBuf;

use mushroom_core::plasticity::{RuleId, RuleParams};

/// Straight per-synapse transcription of each rule, indexed `w[i][j]`.
pub fn naive_rule(
    rule: RuleId,
    x_e: &[f64],
    x_o: &[f64],
    x_m: &[f64],
    p: &RuleParams,
    w: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let relu = |v: f64| if v > 0.0 { v } else { 0.0 };
    let g_sum: f64 = (0..x_o.len()).map(|j| relu(x_m[j] - x_o[j])).sum();
    let mut out = w.to_vec();
    for i in 0..x_e.len() {
        for j in 0..x_o.len() {
            let (e, o, m, wij) = (x_e[i], x_o[j], x_m[j], w[i][j]);
            let gj = relu(m - o);
            let (a, b1, b2, b3) = (p.alpha, p.beta1, p.beta2, p.beta3);
            out[i][j] = match rule {
                RuleId::Mcr => wij + a * gj * e * (m - b1),
                RuleId::Nscr => wij + a * g_sum * e * (m - b1 * wij),
                RuleId::Nscor => wij + a * g_sum * (e * m - b1 * wij),
                RuleId::Mor => wij + a * gj * (e * m - b1 * o * o * wij),
                RuleId::Lmsr => wij + a * e * (m - o),
                RuleId::Slr => (wij + p.w0 * a * gj * e) / (1.0 + a * gj * (b1 + e)),
                RuleId::Gmr => wij + a * m * (b1 * o + b2 * (o - e) + b3),
                RuleId::Gur => wij + a * (b1 * o + b2 * (o - e) + b3),
            };
        }
    }
    out
}

/// Best single split of 1-D data by brute force: every midpoint between
/// distinct sorted neighbours, cost = summed squared deviation of both children
/// computed from scratch. The earliest (smallest) threshold wins ties.
pub fn split_oracle(xs: &[f64], ys: &[f64], min_leaf: usize) -> Option<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let sse = |s: &[(f64, f64)]| {
        let mean = s.iter().map(|p| p.1).sum::<f64>() / s.len() as f64;
        s.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>()
    };
    let mut best: Option<(f64, f64)> = None;
    for k in 1..pts.len() {
        if pts[k - 1].0 == pts[k].0 || k < min_leaf || pts.len() - k < min_leaf {
            continue;
        }
        let thr = (pts[k - 1].0 + pts[k].0) / 2.0;
        let cost = sse(&pts[..k]) + sse(&pts[k..]);
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((thr, cost));
        }
    }
    best
}

/// Root holding `mnist/` and `fashion-mnist/`, if the test data is present.
pub fn data_root() -> Option<PathBuf> {
    let root = std::env::var_os("MUSHROOM_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("/root/data"));
    root.join("mnist")
        .join("t10k-labels-idx1-ubyte")
        .is_file()
        .then_some(root)
}
