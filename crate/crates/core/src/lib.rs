//! Mushroom-body inspired sparse network with a plastic readout, and an
//! asynchronous model-based search over its plasticity rules.

pub mod acquisition;
pub mod cli;
pub mod dataset;
pub mod error;
#[cfg(feature = "fetch")]
pub mod fetch;
pub mod net;
pub mod plasticity;
pub mod search;
pub mod seeding;
pub mod space;
pub mod surrogate;
pub mod trainer;

pub use acquisition::{ei, hedge_select, hedge_update, lcb, pi, propose, Acquisition, HedgeState};
pub use dataset::{Dataset, DatasetId, ImageSet, LabelSet, LabeledSet};
pub use error::{Error, Result};
pub use net::{
    encode, forward, predict, NetConfig, OutputActivity, Projection, SparseCode, Weights,
};
pub use plasticity::{apply_rule, RuleId, RuleParams, SynapticInputs};
pub use search::{
    load_log, persist_log, run_search, EvaluationLog, LogEntry, Objective, SearchSettings,
    SyntheticObjective,
};
pub use space::{encode_config, random_config, Configuration, SearchSpaceDef};
pub use surrogate::{fit, ForestModel, ForestParams};
pub use trainer::{evaluate, train_online, EvaluationRecord, PreparedData, Status, TrainProtocol};
