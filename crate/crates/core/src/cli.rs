//! Command-line driver: `data`, `eval`, `search` and `report`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{dataset_dir, verify_dir, Dataset, DatasetId, DigestSource};
use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::plasticity::RuleId;
use crate::search::{load_log, persist_log, run_search, EvaluationLog, SearchSettings};
use crate::space::{Configuration, SearchSpaceDef};
use crate::trainer::{evaluate_config, PreparedData, Status, TrainProtocol, TrainerObjective};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    /// JSONL search log.
    pub log: PathBuf,
    /// Optional CSV written by `search` in addition to the log.
    pub report: Option<PathBuf>,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self {
            log: PathBuf::from("search.jsonl"),
            report: None,
        }
    }
}

/// Experiment definition read from a JSON file. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetId,
    /// Root holding one directory per dataset; falls back to `MUSHROOM_DATA_DIR`.
    pub data_dir: Option<PathBuf>,
    pub net: NetConfig,
    pub protocol: TrainProtocol,
    pub search: SearchSettings,
    pub space: SearchSpaceDef,
    /// The point scored by `eval`.
    pub eval: Option<Configuration>,
    pub output: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetId::Mnist,
            data_dir: None,
            net: NetConfig::default(),
            protocol: TrainProtocol::default(),
            search: SearchSettings::default(),
            space: SearchSpaceDef::default(),
            eval: None,
            output: OutputPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config { message, .. } => Error::config(path.display().to_string(), message),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.protocol.validate()?;
        self.search.validate()?;
        self.space.validate()?;
        if self.net.n_in != 784 {
            return Err(Error::config(
                "net.n_in",
                format!("image datasets have 784 pixels, got {}", self.net.n_in),
            ));
        }
        if let Some(c) = &self.eval {
            self.space.check(c)?;
        }
        Ok(())
    }

    pub fn dataset_dir(&self) -> Result<PathBuf> {
        dataset_dir(self.data_dir.as_deref(), self.dataset)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mushroom",
    version,
    about = "Plastic mushroom-body readout and model-based rule search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// JSON run configuration
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// mnist or fashion-mnist
    #[arg(long)]
    pub dataset: Option<DatasetId>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Verify (and optionally download) a dataset
    Data {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fetch: bool,
    },
    /// Train and score one configuration
    Eval {
        #[command(flatten)]
        common: Common,
        /// Training seed
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the record as JSON here
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Run the asynchronous model-based search
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSONL log destination
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Summarize a search log per rule and write the scatter CSV
    Report {
        /// JSONL search log
        log: PathBuf,
        /// CSV destination
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = common.dataset {
        cfg.dataset = d;
    }
    Ok(cfg)
}

fn load_checked(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.dataset_dir()?;
    verify_dir(&dir, cfg.dataset)?;
    Dataset::load(&dir, cfg.dataset)
}

pub fn cmd_data(cfg: &RunConfig, fetch: bool, out: &mut dyn Write) -> Result<()> {
    let dir = cfg.dataset_dir()?;
    if fetch {
        fetch_into(&dir, cfg.dataset, out)?;
    }
    for check in verify_dir(&dir, cfg.dataset)? {
        let how = match check.verified_by {
            Some(DigestSource::Manifest) => "ok (manifest)",
            Some(DigestSource::Builtin) => "ok",
            None => "unverified",
        };
        writeln!(out, "{}  {}  {how}", check.sha256, check.path.display()).map_err(stdout_err)?;
    }
    let data = Dataset::load(&dir, cfg.dataset)?;
    writeln!(out, "{} train, {} test", data.train.len(), data.test.len()).map_err(stdout_err)?;
    Ok(())
}

#[cfg(feature = "fetch")]
fn fetch_into(dir: &Path, id: DatasetId, out: &mut dyn Write) -> Result<()> {
    for f in crate::fetch::fetch_missing(dir, id)? {
        writeln!(out, "fetched {}", f.file_name()).map_err(stdout_err)?;
    }
    Ok(())
}

#[cfg(not(feature = "fetch"))]
fn fetch_into(_dir: &Path, _id: DatasetId, _out: &mut dyn Write) -> Result<()> {
    Err(Error::Argument(
        "this build has no download support (enable the `fetch` feature)".into(),
    ))
}

/// Returns whether the evaluation succeeded.
pub fn cmd_eval(cfg: &RunConfig, record_path: Option<&Path>, out: &mut dyn Write) -> Result<bool> {
    cfg.validate()?;
    let config = cfg
        .eval
        .ok_or_else(|| Error::config("eval", "the configuration file needs an `eval` point"))?;
    let data = load_checked(cfg)?;
    let prepared = PreparedData::new(&data, cfg.net, cfg.protocol.net_seed)?;
    let record = evaluate_config(&config, &prepared, &cfg.protocol);
    let json = serde_json::to_string(&record)?;
    writeln!(out, "{json}").map_err(stdout_err)?;
    if let Some(p) = record_path {
        fs::write(p, format!("{json}\n")).map_err(|e| Error::io(p, e))?;
    }
    Ok(record.status == Status::Ok)
}

pub fn cmd_search(cfg: &RunConfig, out: &mut dyn Write) -> Result<EvaluationLog> {
    cfg.validate()?;
    let data = load_checked(cfg)?;
    let prepared = Arc::new(PreparedData::new(&data, cfg.net, cfg.protocol.net_seed)?);
    let objective = TrainerObjective::new(prepared, cfg.protocol);
    let log = run_search(&cfg.space, &objective, &cfg.search)?;
    persist_log(&log, &cfg.output.log)?;
    if let Some(best) = log.best() {
        let r = &best.record;
        writeln!(
            out,
            "best: {} alpha={:.6e} beta1={:.6e} beta2={:.6e} beta3={:.6e} test_accuracy={:.4}",
            r.rule, r.alpha, r.beta1, r.beta2, r.beta3, r.test_accuracy
        )
        .map_err(stdout_err)?;
    }
    writeln!(
        out,
        "{} evaluations written to {}",
        log.len(),
        cfg.output.log.display()
    )
    .map_err(stdout_err)?;
    if let Some(csv) = &cfg.output.report {
        let report = build_report(&log)?;
        fs::write(csv, &report.csv).map_err(|e| Error::io(csv, e))?;
    }
    Ok(log)
}

/// Per-rule table and scatter CSV for a search log.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub table: String,
    pub csv: String,
    pub best_rule: RuleId,
    pub best_accuracy: f64,
}

pub fn build_report(log: &EvaluationLog) -> Result<Report> {
    let ok: Vec<_> = log
        .entries
        .iter()
        .map(|e| &e.record)
        .filter(|r| r.status == Status::Ok)
        .collect();
    if ok.is_empty() {
        return Err(Error::Argument(
            "log holds no successful evaluations".into(),
        ));
    }
    let mut per_rule: BTreeMap<usize, (usize, &crate::trainer::EvaluationRecord)> = BTreeMap::new();
    for r in &ok {
        let slot = per_rule.entry(r.rule.index()).or_insert((0, r));
        slot.0 += 1;
        if r.test_accuracy > slot.1.test_accuracy {
            slot.1 = r;
        }
    }
    let (best_rule, best_accuracy) = per_rule
        .values()
        .map(|(_, r)| (r.rule, r.test_accuracy))
        .fold(None, |b: Option<(RuleId, f64)>, (rule, acc)| match b {
            Some((_, ba)) if ba >= acc => b,
            _ => Some((rule, acc)),
        })
        .expect("non-empty");

    let mut table = String::new();
    let _ = writeln!(
        table,
        "  {:<6} {:>5} {:>9} {:>12} {:>12} {:>12} {:>12}",
        "rule", "evals", "best_acc", "alpha", "beta1", "beta2", "beta3"
    );
    for rule in RuleId::ALL {
        let mark = if rule == best_rule { '*' } else { ' ' };
        match per_rule.get(&rule.index()) {
            Some((n, r)) => {
                let _ = writeln!(
                    table,
                    "{mark} {:<6} {:>5} {:>9.4} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
                    rule.name(),
                    n,
                    r.test_accuracy,
                    r.alpha,
                    r.beta1,
                    r.beta2,
                    r.beta3
                );
            }
            None => {
                let _ = writeln!(table, "{mark} {:<6} {:>5} {:>9}", rule.name(), 0, "-");
            }
        }
    }

    let mut csv = String::from("rule,alpha,beta1,beta2,beta3,test_accuracy,best_rule_flag\n");
    for r in &ok {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.rule.name(),
            r.alpha,
            r.beta1,
            r.beta2,
            r.beta3,
            r.test_accuracy,
            u8::from(r.rule == best_rule)
        );
    }
    Ok(Report {
        table,
        csv,
        best_rule,
        best_accuracy,
    })
}

pub fn cmd_report(log_path: &Path, csv_path: Option<&Path>, out: &mut dyn Write) -> Result<Report> {
    let log = load_log(log_path)?;
    if log.is_empty() {
        return Err(Error::Argument(format!("{} is empty", log_path.display())));
    }
    let report = build_report(&log)?;
    write!(out, "{}", report.table).map_err(stdout_err)?;
    let csv_path = csv_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| log_path.with_extension("csv"));
    fs::write(&csv_path, &report.csv).map_err(|e| Error::io(&csv_path, e))?;
    writeln!(out, "scatter data written to {}", csv_path.display()).map_err(stdout_err)?;
    Ok(report)
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<i32>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = e.print();
                return Ok(2);
            }
            write!(out, "{e}").map_err(stdout_err)?;
            return Ok(0);
        }
    };
    match cli.command {
        Command::Data { common, fetch } => {
            let cfg = base_config(&common)?;
            cmd_data(&cfg, fetch, out)?;
            Ok(0)
        }
        Command::Eval {
            common,
            seed,
            out: path,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(s) = seed {
                cfg.protocol.train_seed = s;
            }
            Ok(if cmd_eval(&cfg, path.as_deref(), out)? {
                0
            } else {
                1
            })
        }
        Command::Search {
            common,
            budget,
            workers,
            seed,
            out: path,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(b) = budget {
                cfg.search.budget = b;
            }
            if let Some(w) = workers {
                cfg.search.n_workers = w;
            }
            if let Some(s) = seed {
                cfg.search.seed = s;
            }
            if let Some(p) = path {
                cfg.output.log = p;
            }
            cmd_search(&cfg, out)?;
            Ok(0)
        }
        Command::Report { log, out: path } => {
            cmd_report(&log, path.as_deref(), out)?;
            Ok(0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.protocol.n_train, 20_000);
        assert_eq!(cfg.net.k_active, 50);
    }

    #[test]
    fn unknown_rule_lists_valid_names() {
        let text =
            r#"{"eval": {"rule": "XYZ", "alpha": 0.1, "beta1": 0.1, "beta2": 0.1, "beta3": 0.1}}"#;
        let msg = RunConfig::from_json(text).unwrap_err().to_string();
        for r in RuleId::ALL {
            assert!(msg.contains(r.name()), "{msg}");
        }
    }

    #[test]
    fn alpha_bound_enforced() {
        let text =
            r#"{"eval": {"rule": "LMSR", "alpha": 2.0, "beta1": 0.1, "beta2": 0.1, "beta3": 0.1}}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.starts_with("alpha"), "{msg}");
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(RunConfig::from_json(r#"{"budget": 3}"#).is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"space": {"rules": ["LMSR", "GMR"]}, "search": {"budget": 7}}"#,
        )
        .unwrap();
        assert_eq!(cfg.space.rules, vec![RuleId::Lmsr, RuleId::Gmr]);
        assert_eq!(cfg.space.alpha, SearchSpaceDef::default().alpha);
        assert_eq!(cfg.search.budget, 7);
        assert_eq!(cfg.search.pool_size, 10_000);
        cfg.validate().unwrap();
    }
}
