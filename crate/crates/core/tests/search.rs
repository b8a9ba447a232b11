use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use mushroom_core::plasticity::RuleId;
use mushroom_core::search::{
    load_log, persist_log, run_search, EvaluationLog, FnObjective, Objective, ProposalKind,
    SearchSettings, SyntheticObjective,
};
use mushroom_core::space::{Configuration, SearchSpaceDef};
use mushroom_core::surrogate::ForestParams;
use mushroom_core::trainer::EvaluationRecord;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn settings(budget: usize, workers: usize, seed: u64) -> SearchSettings {
    SearchSettings {
        budget,
        n_workers: workers,
        pool_size: 500,
        seed,
        forest: ForestParams {
            n_trees: 20,
            ..ForestParams::default()
        },
        record_wall_time: false,
        ..SearchSettings::default()
    }
}

#[test]
fn single_worker_logs_are_byte_identical() {
    let obj = SyntheticObjective::new(RuleId::Nscr);
    let space = SearchSpaceDef::default();
    let a = run_search(&space, &obj, &settings(40, 1, 77)).unwrap();
    let b = run_search(&space, &obj, &settings(40, 1, 77)).unwrap();
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    let c = run_search(&space, &obj, &settings(40, 1, 78)).unwrap();
    assert_ne!(a.to_jsonl().unwrap(), c.to_jsonl().unwrap());
}

#[test]
fn measured_wall_time_is_the_only_difference() {
    let obj = FnObjective(|c: &Configuration, _| 1.0 - c.alpha / 2.0);
    let space = SearchSpaceDef::default();
    let s = SearchSettings {
        record_wall_time: true,
        ..settings(25, 1, 5)
    };
    let mut a = run_search(&space, &obj, &s).unwrap();
    let mut b = run_search(&space, &obj, &s).unwrap();
    for e in a.entries.iter_mut().chain(b.entries.iter_mut()) {
        e.record.wall_time = 0.0;
    }
    assert_eq!(a, b);
}

/// Tracks what is running concurrently.
struct Watched {
    running: Mutex<Vec<Configuration>>,
    peak: AtomicUsize,
    duplicates: AtomicUsize,
}

impl Objective for Watched {
    fn evaluate(&self, config: &Configuration, eval_seed: u64) -> EvaluationRecord {
        {
            let mut r = self.running.lock().unwrap();
            if r.iter().any(|c| c.same_as(config)) {
                self.duplicates.fetch_add(1, Ordering::SeqCst);
            }
            r.push(*config);
            self.peak.fetch_max(r.len(), Ordering::SeqCst);
        }
        std::thread::sleep(Duration::from_millis(1 + eval_seed % 4));
        let rec = SyntheticObjective::new(RuleId::Mcr).evaluate(config, eval_seed);
        let mut r = self.running.lock().unwrap();
        let at = r.iter().position(|c| c.same_as(config)).unwrap();
        r.remove(at);
        rec
    }
}

#[test]
fn parallel_search_respects_budget_and_liar() {
    let obj = Watched {
        running: Mutex::new(Vec::new()),
        peak: AtomicUsize::new(0),
        duplicates: AtomicUsize::new(0),
    };
    let log = run_search(&SearchSpaceDef::default(), &obj, &settings(60, 4, 9)).unwrap();
    assert_eq!(log.len(), 60);
    assert!(obj.peak.load(Ordering::SeqCst) <= 4);
    assert_eq!(obj.duplicates.load(Ordering::SeqCst), 0);
    let idx: Vec<usize> = log.entries.iter().map(|e| e.completion_index).collect();
    assert_eq!(idx, (0..60).collect::<Vec<_>>());
    let seeds: HashSet<u64> = log.entries.iter().map(|e| e.record.seeds.train).collect();
    assert_eq!(seeds.len(), 60);
    let randoms = log
        .entries
        .iter()
        .filter(|e| e.proposal_kind == ProposalKind::Random)
        .count();
    assert_eq!(randoms, 10);
}

#[test]
fn slow_evaluation_does_not_stall_others() {
    let first = Mutex::new(None::<Configuration>);
    let obj = FnObjective(|c: &Configuration, _| {
        let slow = {
            let mut f = first.lock().unwrap();
            if f.is_none() {
                *f = Some(*c);
            }
            f.unwrap().same_as(c)
        };
        if slow {
            std::thread::sleep(Duration::from_millis(1500));
        }
        0.5 + c.alpha / 4.0
    });
    let log = run_search(&SearchSpaceDef::default(), &obj, &settings(30, 2, 3)).unwrap();
    let slow = first.lock().unwrap().unwrap();
    let at = log
        .entries
        .iter()
        .position(|e| e.record.config().same_as(&slow))
        .unwrap();
    assert!(at >= 20, "slow job completed at {at}");
}

#[test]
fn best_so_far_never_worsens() {
    let obj = SyntheticObjective::new(RuleId::Slr);
    let log = run_search(&SearchSpaceDef::default(), &obj, &settings(50, 1, 2)).unwrap();
    let mut best = f64::INFINITY;
    for e in &log.entries {
        let next = best.min(e.record.objective());
        assert!(next <= best);
        best = next;
    }
    assert_eq!(log.best().unwrap().record.objective(), best);
}

#[test]
fn explicit_initial_design_size() {
    let obj = SyntheticObjective::new(RuleId::Gur);
    let s = SearchSettings {
        n_init: Some(25),
        ..settings(30, 1, 1)
    };
    let log = run_search(&SearchSpaceDef::default(), &obj, &s).unwrap();
    assert!(log.entries[..25]
        .iter()
        .all(|e| e.proposal_kind == ProposalKind::Random));
    assert!(log.entries[25..]
        .iter()
        .all(|e| e.proposal_kind == ProposalKind::Model));
}

#[test]
fn random_draws_cover_every_rule() {
    let space = SearchSpaceDef::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut counts = [0usize; 8];
    for _ in 0..10_000 {
        let c = space.random_config(&mut rng);
        assert!(space.check(&c).is_ok());
        counts[c.rule.index()] += 1;
    }
    // binomial(10^4, 1/8): sd ~ 33
    for n in counts {
        assert!((n as f64 - 1250.0).abs() < 165.0, "{counts:?}");
    }
}

#[test]
fn log_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.jsonl");
    let obj = SyntheticObjective::new(RuleId::Mor);
    let log = run_search(&SearchSpaceDef::default(), &obj, &settings(3, 1, 0)).unwrap();
    persist_log(&log, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);
    let back = load_log(&path).unwrap();
    assert_eq!(back, log);
    let idx: Vec<usize> = back.entries.iter().map(|e| e.completion_index).collect();
    assert_eq!(idx, vec![0, 1, 2]);

    persist_log(&EvaluationLog::default(), &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "");
    assert!(load_log(&path).unwrap().is_empty());
}

#[test]
fn log_lines_carry_search_fields() {
    let obj = SyntheticObjective::new(RuleId::Mor);
    let log = run_search(&SearchSpaceDef::default(), &obj, &settings(12, 1, 0)).unwrap();
    let last: serde_json::Value =
        serde_json::from_str(log.to_jsonl().unwrap().lines().last().unwrap()).unwrap();
    for key in [
        "rule",
        "alpha",
        "beta1",
        "beta2",
        "beta3",
        "seeds",
        "test_accuracy",
        "train_accuracy",
        "wall_time",
        "status",
        "completion_index",
        "proposal_kind",
        "acquisition_used",
        "liar_value",
    ] {
        assert!(last.get(key).is_some(), "missing {key}");
    }
    assert_eq!(last["proposal_kind"], "model");
}
