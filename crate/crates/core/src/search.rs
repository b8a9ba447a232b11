//! Asynchronous model-based search: a single coordinator owns the search state,
//! refits the forest surrogate on every completion and keeps a thread pool busy.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use crossbeam_channel::unbounded;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{hedge_update, propose, Acquisition, HedgeState, ProposalSettings};
use crate::error::{Error, Result};
use crate::plasticity::RuleId;
use crate::seeding::derive_seed;
use crate::space::{encode_unchecked, Configuration, SearchSpaceDef};
use crate::surrogate::{fit, ForestModel, ForestParams};
use crate::trainer::{EvaluationRecord, Seeds, Status, TrainerObjective};

// stream ids for the coordinator's generators, far away from dispatch counters
const STREAM_CONFIGS: u64 = u64::MAX;
const STREAM_HEDGE: u64 = u64::MAX - 1;
const STREAM_FOREST: u64 = u64::MAX - 2;

/// Something the search can evaluate. `eval_seed` controls all training randomness.
pub trait Objective: Send + Sync {
    fn evaluate(&self, config: &Configuration, eval_seed: u64) -> EvaluationRecord;

    /// Seed recorded for the fixed network part when an evaluation panics.
    fn net_seed(&self) -> u64 {
        0
    }
}

impl Objective for TrainerObjective {
    fn evaluate(&self, config: &Configuration, eval_seed: u64) -> EvaluationRecord {
        TrainerObjective::evaluate(self, config, eval_seed)
    }

    fn net_seed(&self) -> u64 {
        self.data.net_seed
    }
}

/// Wraps a plain function returning test accuracy.
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: Fn(&Configuration, u64) -> f64 + Send + Sync,
{
    fn evaluate(&self, config: &Configuration, eval_seed: u64) -> EvaluationRecord {
        let start = Instant::now();
        let acc = (self.0)(config, eval_seed);
        let seeds = Seeds {
            train: eval_seed,
            net: 0,
        };
        let wall = start.elapsed().as_secs_f64();
        if acc.is_finite() {
            EvaluationRecord::new(config, seeds, acc, acc, wall, Status::Ok)
        } else {
            EvaluationRecord::failed(config, seeds, wall)
        }
    }
}

/// Cheap deterministic test function. Under `rule` the accuracy has a single
/// Gaussian basin centred at `center` (log10 coordinates scaled to [0, 1]);
/// every other rule sits on a flat plateau at 0.1.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticObjective {
    pub space: SearchSpaceDef,
    pub rule: RuleId,
    pub center: [f64; 4],
    pub width: f64,
}

impl SyntheticObjective {
    pub fn new(rule: RuleId) -> Self {
        Self {
            space: SearchSpaceDef::default(),
            rule,
            center: [0.7, 0.25, 0.5, 0.8],
            width: 0.15,
        }
    }

    fn unit(&self, c: &Configuration) -> [f64; 4] {
        let r = [
            self.space.alpha,
            self.space.beta1,
            self.space.beta2,
            self.space.beta3,
        ];
        let v = [c.alpha, c.beta1, c.beta2, c.beta3];
        std::array::from_fn(|k| {
            let (lo, hi) = (r[k].low.log10(), r[k].high.log10());
            (v[k].log10() - lo) / (hi - lo)
        })
    }

    pub fn accuracy(&self, c: &Configuration) -> f64 {
        if c.rule != self.rule {
            return 0.1;
        }
        let d2: f64 = self
            .unit(c)
            .iter()
            .zip(self.center)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        0.1 + 0.9 * (-d2 / (2.0 * self.width * self.width)).exp()
    }
}

impl Objective for SyntheticObjective {
    fn evaluate(&self, config: &Configuration, eval_seed: u64) -> EvaluationRecord {
        let acc = self.accuracy(config);
        let seeds = Seeds {
            train: eval_seed,
            net: 0,
        };
        EvaluationRecord::new(config, seeds, acc, acc, 0.0, Status::Ok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSettings {
    pub budget: usize,
    pub n_workers: usize,
    /// Random configurations dispatched before the surrogate takes over;
    /// `None` means `max(10, n_workers)`, capped at the budget.
    pub n_init: Option<usize>,
    pub pool_size: usize,
    pub eta: f64,
    pub kappa: f64,
    pub seed: u64,
    pub forest: ForestParams,
    /// When false, wall times are logged as 0 so logs are byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            budget: 200,
            n_workers: 1,
            n_init: None,
            pool_size: 10_000,
            eta: 1.0,
            kappa: 1.96,
            seed: 0,
            forest: ForestParams::default(),
            record_wall_time: true,
        }
    }
}

impl SearchSettings {
    pub fn n_init(&self) -> usize {
        self.n_init
            .unwrap_or_else(|| self.n_workers.max(10).min(self.budget))
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::config("search.budget", "must be at least 1"));
        }
        if self.n_workers == 0 {
            return Err(Error::config("search.n_workers", "must be at least 1"));
        }
        let n_init = self.n_init();
        if n_init == 0 || n_init > self.budget {
            return Err(Error::config(
                "search.n_init",
                format!("need 1 <= n_init <= budget ({}), got {n_init}", self.budget),
            ));
        }
        if self.pool_size == 0 {
            return Err(Error::config("search.pool_size", "must be at least 1"));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::config("search.eta", "must be finite and > 0"));
        }
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::config("search.kappa", "must be finite and >= 0"));
        }
        if self.forest.n_trees == 0 || self.forest.min_leaf == 0 {
            return Err(Error::config(
                "search.forest",
                "n_trees and min_leaf must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    Random,
    Model,
}

/// One line of the search log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    #[serde(flatten)]
    pub record: EvaluationRecord,
    pub completion_index: usize,
    pub proposal_kind: ProposalKind,
    pub acquisition_used: Option<Acquisition>,
    /// Constant-liar value in force when the configuration was dispatched.
    pub liar_value: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationLog {
    pub entries: Vec<LogEntry>,
}

impl EvaluationLog {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest test accuracy; the earliest completion wins ties.
    pub fn best(&self) -> Option<&LogEntry> {
        self.entries
            .iter()
            .fold(None, |best: Option<&LogEntry>, e| match best {
                Some(b) if b.record.test_accuracy >= e.record.test_accuracy => Some(b),
                _ => Some(e),
            })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: LogEntry = serde_json::from_str(line).map_err(|err| Error::Log {
                line: k + 1,
                message: err.to_string(),
            })?;
            entries.push(e);
        }
        Ok(Self { entries })
    }
}

pub fn persist_log(log: &EvaluationLog, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in &log.entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_log(path: &Path) -> Result<EvaluationLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: LogEntry = serde_json::from_str(&line).map_err(|err| Error::Log {
            line: k + 1,
            message: err.to_string(),
        })?;
        entries.push(e);
    }
    Ok(EvaluationLog { entries })
}

struct Pending {
    dispatch: u64,
    config: Configuration,
    kind: ProposalKind,
    acquisition: Option<Acquisition>,
    liar: Option<f64>,
}

struct Done {
    dispatch: u64,
    record: EvaluationRecord,
}

fn best_objective(completed: &[LogEntry]) -> Option<f64> {
    completed
        .iter()
        .map(|e| e.record.objective())
        .fold(None, |b, f| Some(b.map_or(f, |b: f64| b.min(f))))
}

/// Run the asynchronous search until `settings.budget` evaluations complete.
/// Entries come back in completion order.
pub fn run_search(
    space: &SearchSpaceDef,
    objective: &dyn Objective,
    settings: &SearchSettings,
) -> Result<EvaluationLog> {
    settings.validate()?;
    space.validate()?;
    let budget = settings.budget;
    let n_init = settings.n_init();
    let seed = settings.seed;
    let mut config_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_CONFIGS));
    let mut hedge = HedgeState::new(settings.eta, derive_seed(seed, STREAM_HEDGE))?;
    let proposal = ProposalSettings {
        pool_size: settings.pool_size,
        kappa: settings.kappa,
    };

    let (job_tx, job_rx) = unbounded::<(u64, Configuration)>();
    let (done_tx, done_rx) = unbounded::<Done>();

    std::thread::scope(|scope| -> Result<EvaluationLog> {
        for _ in 0..settings.n_workers.min(budget) {
            let job_rx = job_rx.clone();
            let done_tx = done_tx.clone();
            scope.spawn(move || {
                for (dispatch, config) in job_rx.iter() {
                    let eval_seed = derive_seed(seed, dispatch);
                    let start = Instant::now();
                    let record =
                        catch_unwind(AssertUnwindSafe(|| objective.evaluate(&config, eval_seed)))
                            .unwrap_or_else(|_| {
                                let seeds = Seeds {
                                    train: eval_seed,
                                    net: objective.net_seed(),
                                };
                                EvaluationRecord::failed(
                                    &config,
                                    seeds,
                                    start.elapsed().as_secs_f64(),
                                )
                            });
                    if done_tx.send(Done { dispatch, record }).is_err() {
                        break;
                    }
                }
            });
        }
        drop(done_tx);
        drop(job_rx);

        let mut completed: Vec<LogEntry> = Vec::with_capacity(budget);
        let mut in_flight: Vec<Pending> = Vec::new();
        let mut dispatched: u64 = 0;

        let dispatch = |p: Pending, in_flight: &mut Vec<Pending>| -> Result<()> {
            job_tx
                .send((p.dispatch, p.config))
                .map_err(|_| Error::Numeric("worker pool shut down early".into()))?;
            in_flight.push(p);
            Ok(())
        };

        // every worker starts on a random draw, even if that exceeds n_init
        while (dispatched as usize) < settings.n_workers.min(budget) {
            let config = space.random_config(&mut config_rng);
            dispatch(
                Pending {
                    dispatch: dispatched,
                    config,
                    kind: ProposalKind::Random,
                    acquisition: None,
                    liar: None,
                },
                &mut in_flight,
            )?;
            dispatched += 1;
        }

        while completed.len() < budget {
            let done = done_rx
                .recv()
                .map_err(|_| Error::Numeric("worker pool terminated unexpectedly".into()))?;
            let slot = in_flight
                .iter()
                .position(|p| p.dispatch == done.dispatch)
                .expect("completion for a dispatched job");
            let pending = in_flight.remove(slot);
            let mut record = done.record;
            if !settings.record_wall_time {
                record.wall_time = 0.0;
            }
            completed.push(LogEntry {
                record,
                completion_index: completed.len(),
                proposal_kind: pending.kind,
                acquisition_used: pending.acquisition,
                liar_value: pending.liar,
            });
            log::info!(
                "completed {}/{budget}: {} acc={:.4}",
                completed.len(),
                pending.config.rule,
                completed.last().unwrap().record.test_accuracy
            );

            if dispatched as usize >= budget {
                continue;
            }
            let f_best = best_objective(&completed).expect("at least one completion");
            let next = if (dispatched as usize) < n_init {
                Pending {
                    dispatch: dispatched,
                    config: space.random_config(&mut config_rng),
                    kind: ProposalKind::Random,
                    acquisition: None,
                    liar: Some(f_best),
                }
            } else {
                let model = refit(&completed, &in_flight, f_best, settings, dispatched)?;
                if let Some(acq) = pending.acquisition {
                    let (mean, _) = model.predict(&encode_unchecked(&pending.config))?;
                    hedge_update(&mut hedge, acq, -mean)?;
                }
                let flying: Vec<Configuration> = in_flight.iter().map(|p| p.config).collect();
                let prop = propose(
                    &model,
                    space,
                    f_best,
                    &mut hedge,
                    &proposal,
                    &mut config_rng,
                    |c| flying.iter().any(|f| f.same_as(c)),
                )?;
                Pending {
                    dispatch: dispatched,
                    config: prop.config,
                    kind: ProposalKind::Model,
                    acquisition: Some(prop.acquisition),
                    liar: Some(f_best),
                }
            };
            dispatch(next, &mut in_flight)?;
            dispatched += 1;
        }
        drop(job_tx);
        Ok(EvaluationLog { entries: completed })
    })
}

fn refit(
    completed: &[LogEntry],
    in_flight: &[Pending],
    liar: f64,
    settings: &SearchSettings,
    dispatched: u64,
) -> Result<ForestModel> {
    let mut data: Vec<(Vec<f64>, f64)> = completed
        .iter()
        .map(|e| {
            (
                encode_unchecked(&e.record.config()).to_vec(),
                e.record.objective(),
            )
        })
        .collect();
    data.extend(
        in_flight
            .iter()
            .map(|p| (encode_unchecked(&p.config).to_vec(), liar)),
    );
    let seed = derive_seed(derive_seed(settings.seed, STREAM_FOREST), dispatched);
    fit(&data, &settings.forest, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(budget: usize, workers: usize, seed: u64) -> SearchSettings {
        SearchSettings {
            budget,
            n_workers: workers,
            pool_size: 200,
            seed,
            forest: ForestParams {
                n_trees: 10,
                ..ForestParams::default()
            },
            record_wall_time: false,
            ..SearchSettings::default()
        }
    }

    #[test]
    fn budget_one_is_a_single_random_draw() {
        let obj = SyntheticObjective::new(RuleId::Lmsr);
        let log = run_search(&SearchSpaceDef::default(), &obj, &quick(1, 1, 3)).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.entries[0].proposal_kind, ProposalKind::Random);
        assert_eq!(log.entries[0].liar_value, None);
    }

    #[test]
    fn completion_indices_are_sequential() {
        let obj = SyntheticObjective::new(RuleId::Gmr);
        let log = run_search(&SearchSpaceDef::default(), &obj, &quick(15, 1, 1)).unwrap();
        let idx: Vec<usize> = log.entries.iter().map(|e| e.completion_index).collect();
        assert_eq!(idx, (0..15).collect::<Vec<_>>());
        assert!(log.entries[..10]
            .iter()
            .all(|e| e.proposal_kind == ProposalKind::Random));
        assert!(log.entries[10..]
            .iter()
            .all(|e| e.proposal_kind == ProposalKind::Model && e.acquisition_used.is_some()));
    }

    #[test]
    fn panics_become_failed_records() {
        let obj = FnObjective(|c: &Configuration, _| {
            if c.rule == RuleId::Slr {
                panic!("boom");
            }
            0.5
        });
        let log = run_search(&SearchSpaceDef::default(), &obj, &quick(30, 2, 4)).unwrap();
        assert_eq!(log.len(), 30);
        for e in &log.entries {
            let failed = e.record.status == Status::Failed;
            assert_eq!(failed, e.record.rule == RuleId::Slr);
        }
    }

    #[test]
    fn invalid_settings_rejected() {
        let obj = SyntheticObjective::new(RuleId::Gmr);
        let space = SearchSpaceDef::default();
        assert!(run_search(&space, &obj, &quick(0, 1, 0)).is_err());
        assert!(run_search(&space, &obj, &quick(5, 0, 0)).is_err());
        let s = SearchSettings {
            n_init: Some(6),
            ..quick(5, 1, 0)
        };
        assert!(run_search(&space, &obj, &s).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let obj = SyntheticObjective::new(RuleId::Mor);
        let log = run_search(&SearchSpaceDef::default(), &obj, &quick(12, 1, 8)).unwrap();
        let text = log.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 12);
        assert_eq!(EvaluationLog::from_jsonl(&text).unwrap(), log);
        assert!(EvaluationLog::from_jsonl("").unwrap().is_empty());
    }

    #[test]
    fn bad_line_reports_its_number() {
        let obj = SyntheticObjective::new(RuleId::Mor);
        let log = run_search(&SearchSpaceDef::default(), &obj, &quick(2, 1, 8)).unwrap();
        let text = format!("{}{{oops\n", log.to_jsonl().unwrap());
        match EvaluationLog::from_jsonl(&text) {
            Err(Error::Log { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
