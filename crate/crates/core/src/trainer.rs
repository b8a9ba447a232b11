//! Online training of the plastic readout and test-set scoring.
//!
//! The weights are part of the network state: each presented sample is encoded,
//! propagated, paired with its one-hot modulatory signal and then fed to the
//! selected rule, which produces the weights seen by the next sample.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{subsample_indices, Dataset, DatasetId, LabeledSet};
use crate::error::{Error, Result};
use crate::net::{self, build_projection, NetConfig, Projection, Weights};
use crate::plasticity::{update_in_place, RuleId, RuleParams, SynapticInputs};
use crate::space::Configuration;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainProtocol {
    /// Size of the random training subset.
    pub n_train: usize,
    /// Passes over the subset; fractional values stop part-way through.
    pub passes: f64,
    pub train_seed: u64,
    pub net_seed: u64,
}

impl Default for TrainProtocol {
    fn default() -> Self {
        Self {
            n_train: 20_000,
            passes: 1.0,
            train_seed: 0,
            net_seed: 0,
        }
    }
}

impl TrainProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.passes.is_finite() && self.passes >= 0.0) {
            return Err(Error::config("protocol.passes", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Number of rule applications: `round(n_train * passes)`.
    pub fn total_updates(&self) -> usize {
        (self.n_train as f64 * self.passes).round() as usize
    }
}

/// One-hot modulatory signal for `label`.
pub fn make_modulatory(label: usize, n_out: usize) -> Result<Vec<f64>> {
    if label >= n_out {
        return Err(Error::Argument(format!("label {label} outside 0..{n_out}")));
    }
    let mut x_m = vec![0.0; n_out];
    x_m[label] = 1.0;
    Ok(x_m)
}

/// Kenyon codes of a labeled split, computed once and shared by all evaluations.
#[derive(Debug, Clone)]
pub struct EncodedSplit {
    n_hidden: usize,
    k: usize,
    active: Vec<u32>,
    labels: Vec<u8>,
}

impl EncodedSplit {
    pub fn encode(set: &LabeledSet, proj: &Projection, k: usize) -> Result<Self> {
        if set.images.image_len() != proj.n_in() {
            return Err(Error::Shape(format!(
                "images have {} pixels, projection expects {}",
                set.images.image_len(),
                proj.n_in()
            )));
        }
        let codes: Vec<Vec<u32>> = (0..set.len())
            .into_par_iter()
            .map(|i| {
                net::encode_bytes(set.images.image_bytes(i), proj, k).map(|c| c.active().to_vec())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            n_hidden: proj.n_hidden(),
            k,
            active: codes.concat(),
            labels: set.labels.labels().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn code(&self, i: usize) -> &[u32] {
        &self.active[i * self.k..(i + 1) * self.k]
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// A dataset pushed through a fixed projection.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub dataset: DatasetId,
    pub net: NetConfig,
    pub net_seed: u64,
    pub projection: Projection,
    pub train: EncodedSplit,
    pub test: EncodedSplit,
}

impl PreparedData {
    pub fn new(data: &Dataset, net: NetConfig, net_seed: u64) -> Result<Self> {
        Self::from_splits(data.id, &data.train, &data.test, net, net_seed)
    }

    pub fn from_splits(
        dataset: DatasetId,
        train: &LabeledSet,
        test: &LabeledSet,
        net: NetConfig,
        net_seed: u64,
    ) -> Result<Self> {
        net.validate()?;
        for set in [train, test] {
            if set.n_classes() > net.n_out {
                return Err(Error::Shape(format!(
                    "{} classes but only {} output neurons",
                    set.n_classes(),
                    net.n_out
                )));
            }
        }
        let projection = build_projection(&net, net_seed)?;
        Ok(Self {
            dataset,
            net,
            net_seed,
            train: EncodedSplit::encode(train, &projection, net.k_active)?,
            test: EncodedSplit::encode(test, &projection, net.k_active)?,
            projection,
        })
    }
}

/// Trained readout plus the online (predict-then-update) accuracy over the stream.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Weights,
    pub train_accuracy: f64,
    pub updates: usize,
}

/// Present the `order`-selected samples of `split` once each (cycling for extra
/// passes), updating `W` after every sample.
pub fn train_on_codes(
    split: &EncodedSplit,
    order: &[usize],
    total_updates: usize,
    rule: RuleId,
    params: &RuleParams,
    net: &NetConfig,
) -> Result<TrainOutcome> {
    if split.n_hidden() != net.n_hidden {
        return Err(Error::Shape(format!(
            "codes over {} units, network has {}",
            split.n_hidden(),
            net.n_hidden
        )));
    }
    let mut w = Weights::zeros(net.n_hidden, net.n_out);
    let mut x_e = vec![0.0; net.n_hidden];
    let mut x_m = vec![0.0; net.n_out];
    let mut correct = 0usize;
    if total_updates > 0 && order.is_empty() {
        return Err(Error::Argument("no training samples".into()));
    }
    for t in 0..total_updates {
        let idx = order[t % order.len()];
        let code = split.code(idx);
        let label = split.label(idx);
        let x_o = net::forward_active(code, &w, net)?;
        if net::predict(&x_o)? == label {
            correct += 1;
        }
        x_m.iter_mut().for_each(|v| *v = 0.0);
        x_m[label] = 1.0;
        for &a in code {
            x_e[a as usize] = 1.0;
        }
        update_in_place(rule, &SynapticInputs::new(&x_e, &x_o, &x_m), params, &mut w)?;
        for &a in code {
            x_e[a as usize] = 0.0;
        }
    }
    if !w.is_finite() {
        return Err(Error::Numeric("weights diverged during training".into()));
    }
    let train_accuracy = if total_updates == 0 {
        0.0
    } else {
        correct as f64 / total_updates as f64
    };
    Ok(TrainOutcome {
        weights: w,
        train_accuracy,
        updates: total_updates,
    })
}

/// Train a fresh readout on a seeded subsample of `data`.
pub fn train_online(
    data: &LabeledSet,
    rule: RuleId,
    params: &RuleParams,
    net: &NetConfig,
    proto: &TrainProtocol,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    net.validate()?;
    proto.validate()?;
    let proj = build_projection(net, proto.net_seed)?;
    let order = subsample_indices(data.len(), proto.n_train, proto.train_seed)?;
    let subset = LabeledSet::new(
        data.images.select(&order),
        data.labels.select(&order),
        data.n_classes(),
    )?;
    let split = EncodedSplit::encode(&subset, &proj, net.k_active)?;
    let identity: Vec<usize> = (0..split.len()).collect();
    train_on_codes(&split, &identity, proto.total_updates(), rule, params, net)
}

/// Fraction of encoded samples whose argmax readout equals the label.
pub fn evaluate_codes(w: &Weights, split: &EncodedSplit, net: &NetConfig) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    if w.shape() != (net.n_hidden, net.n_out) || split.n_hidden() != net.n_hidden {
        return Err(Error::Shape(format!(
            "weights {:?} against network {}x{}",
            w.shape(),
            net.n_hidden,
            net.n_out
        )));
    }
    if !w.is_finite() {
        return Err(Error::Numeric(
            "weight matrix contains non-finite values".into(),
        ));
    }
    let correct = (0..split.len())
        .into_par_iter()
        .map(|i| {
            let x_o = net::forward_active(split.code(i), w, net)?;
            Ok(usize::from(net::predict(&x_o)? == split.label(i)))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / split.len() as f64)
}

/// Test accuracy of `w` on raw images pushed through `proj`.
pub fn evaluate(
    w: &Weights,
    testset: &LabeledSet,
    net: &NetConfig,
    proj: &Projection,
) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    let split = EncodedSplit::encode(testset, proj, net.k_active)?;
    evaluate_codes(w, &split, net)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub train: u64,
    pub net: u64,
}

/// Result of evaluating one configuration; one JSON object per line in logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub rule: RuleId,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub seeds: Seeds,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub wall_time: f64,
    pub status: Status,
}

impl EvaluationRecord {
    pub fn config(&self) -> Configuration {
        Configuration {
            rule: self.rule,
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
            beta3: self.beta3,
        }
    }

    /// Minimized objective `1 - test_accuracy`.
    pub fn objective(&self) -> f64 {
        1.0 - self.test_accuracy
    }

    pub fn failed(config: &Configuration, seeds: Seeds, wall_time: f64) -> Self {
        Self::new(config, seeds, 0.0, 0.0, wall_time, Status::Failed)
    }

    pub fn new(
        config: &Configuration,
        seeds: Seeds,
        test_accuracy: f64,
        train_accuracy: f64,
        wall_time: f64,
        status: Status,
    ) -> Self {
        Self {
            rule: config.rule,
            alpha: config.alpha,
            beta1: config.beta1,
            beta2: config.beta2,
            beta3: config.beta3,
            seeds,
            test_accuracy,
            train_accuracy,
            wall_time,
            status,
        }
    }
}

/// Train on `proto.n_train` seeded samples and score on the full test split.
/// Never fails: any error (including divergence) yields a `failed` record with accuracy 0.
pub fn evaluate_config(
    config: &Configuration,
    data: &PreparedData,
    proto: &TrainProtocol,
) -> EvaluationRecord {
    let start = Instant::now();
    let seeds = Seeds {
        train: proto.train_seed,
        net: data.net_seed,
    };
    let run = || -> Result<(f64, f64)> {
        proto.validate()?;
        let order = subsample_indices(data.train.len(), proto.n_train, proto.train_seed)?;
        let trained = train_on_codes(
            &data.train,
            &order,
            proto.total_updates(),
            config.rule,
            &config.params(),
            &data.net,
        )?;
        let acc = evaluate_codes(&trained.weights, &data.test, &data.net)?;
        Ok((acc, trained.train_accuracy))
    };
    let outcome = run();
    let wall_time = start.elapsed().as_secs_f64();
    match outcome {
        Ok((test, train)) => {
            EvaluationRecord::new(config, seeds, test, train, wall_time, Status::Ok)
        }
        Err(e) => {
            log::debug!("evaluation of {config:?} failed: {e}");
            EvaluationRecord::failed(config, seeds, wall_time)
        }
    }
}

/// Shared handle used by the search workers.
#[derive(Debug, Clone)]
pub struct TrainerObjective {
    pub data: Arc<PreparedData>,
    pub protocol: TrainProtocol,
}

impl TrainerObjective {
    pub fn new(data: Arc<PreparedData>, protocol: TrainProtocol) -> Self {
        Self { data, protocol }
    }

    pub fn evaluate(&self, config: &Configuration, train_seed: u64) -> EvaluationRecord {
        let proto = TrainProtocol {
            train_seed,
            net_seed: self.data.net_seed,
            ..self.protocol
        };
        evaluate_config(config, &self.data, &proto)
    }
}
