//! Tabular reinforcement-learning engine and the joint agent-kind ×
//! hyperparameter search over it.

mod agents;
mod candidates;
pub mod dataset;
pub mod protocol;
mod search;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agents::{
    evaluate, evaluate_offline, train, DataSource, Discretizer, Policy, QTable, StateKeying, TrainOutput,
    TrainedAgent,
};
pub use candidates::enumerate_candidates;
pub use dataset::TupleDataset;
pub use protocol::{EvaluationProtocol, ProtocolStep};
pub use search::{
    rank, search, summary, CandidateEntry, CandidateOutcome, CandidateStatus, CollectingSink, EngineEvent, EventSink, NullSink,
    SearchDocument, SearchResult,
};

use crate::gymspec::StepError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    QLearning,
    Sarsa,
    FittedQ,
    DynaQ,
    RandomPolicy,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::QLearning,
        AgentKind::Sarsa,
        AgentKind::FittedQ,
        AgentKind::DynaQ,
        AgentKind::RandomPolicy,
    ];

    pub fn is_offline(self) -> bool {
        self == AgentKind::FittedQ
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::QLearning => "q_learning",
            AgentKind::Sarsa => "sarsa",
            AgentKind::FittedQ => "fitted_q",
            AgentKind::DynaQ => "dyna_q",
            AgentKind::RandomPolicy => "random_policy",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A concrete hyperparameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            ParamValue::Bool(_) | ParamValue::Text(_) => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(v) => write!(f, "{v}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Text(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamDomain {
    Discrete { values: Vec<ParamValue> },
    Continuous { lo: f64, hi: f64 },
    Integer { lo: i64, hi: i64 },
}

impl ParamDomain {
    pub fn contains(&self, v: &ParamValue) -> bool {
        match (self, v) {
            (ParamDomain::Discrete { values }, v) => values.contains(v),
            (ParamDomain::Continuous { lo, hi }, v) => v.as_f64().is_some_and(|x| *lo <= x && x <= *hi),
            (ParamDomain::Integer { lo, hi }, ParamValue::Int(x)) => lo <= x && x <= hi,
            _ => false,
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            ParamDomain::Discrete { values } => values.is_empty(),
            ParamDomain::Continuous { lo, hi } => !(lo <= hi),
            ParamDomain::Integer { lo, hi } => lo > hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub domain: ParamDomain,
    pub default: ParamValue,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperparamSchema {
    pub params: Vec<ParamSpec>,
}

impl HyperparamSchema {
    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Checks defaults lie in their domains and discrete lists are nonempty.
    pub fn check(&self) -> Result<(), ConfigError> {
        for p in &self.params {
            if p.domain.is_empty() {
                return Err(ConfigError::Invalid(format!("parameter `{}` has an empty domain", p.name)));
            }
            if !p.domain.contains(&p.default) {
                return Err(ConfigError::Invalid(format!(
                    "default {} of `{}` is outside its domain",
                    p.default, p.name
                )));
            }
        }
        Ok(())
    }
}

fn continuous(name: &str, lo: f64, hi: f64, default: f64) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        domain: ParamDomain::Continuous { lo, hi },
        default: ParamValue::Float(default),
    }
}

fn integer(name: &str, lo: i64, hi: i64, default: i64) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        domain: ParamDomain::Integer { lo, hi },
        default: ParamValue::Int(default),
    }
}

/// Built-in schema of each agent kind.
pub fn default_schema(kind: AgentKind) -> HyperparamSchema {
    let online = || {
        vec![
            continuous("gamma", 0.5, 0.999, 0.95),
            continuous("alpha", 0.01, 1.0, 0.1),
            continuous("epsilon", 0.0, 0.5, 0.1),
            integer("bins", 2, 50, 10),
        ]
    };
    let params = match kind {
        AgentKind::QLearning | AgentKind::Sarsa => online(),
        AgentKind::DynaQ => {
            let mut p = online();
            p.push(integer("planning_steps", 0, 50, 10));
            p
        }
        AgentKind::FittedQ => vec![
            continuous("gamma", 0.5, 0.999, 0.95),
            integer("max_iterations", 10, 5000, 2000),
        ],
        AgentKind::RandomPolicy => Vec::new(),
    };
    HyperparamSchema { params }
}

pub fn default_schemas() -> BTreeMap<AgentKind, HyperparamSchema> {
    AgentKind::ALL.iter().map(|k| (*k, default_schema(*k))).collect()
}

/// Restriction of one schema parameter inside a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Constraint {
    Values { values: Vec<ParamValue> },
    Range { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    Random,
    DiscrepancyGrid,
}

fn default_offline_horizon() -> u32 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub enabled_agents: Vec<AgentKind>,
    #[serde(default)]
    pub constraints: BTreeMap<AgentKind, BTreeMap<String, Constraint>>,
    pub search_strategy: SearchStrategy,
    pub candidate_budget: usize,
    pub optimization_workers: usize,
    pub episodes_train: usize,
    pub episodes_eval: usize,
    pub top_k: usize,
    pub seed: u64,
    /// Rollout horizon when evaluating on a tuple dataset's empirical model.
    #[serde(default = "default_offline_horizon")]
    pub offline_horizon: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            enabled_agents: vec![AgentKind::QLearning, AgentKind::RandomPolicy],
            constraints: BTreeMap::new(),
            search_strategy: SearchStrategy::DiscrepancyGrid,
            candidate_budget: 6,
            optimization_workers: 2,
            episodes_train: 300,
            episodes_eval: 3,
            top_k: 3,
            seed: 0,
            offline_horizon: default_offline_horizon(),
        }
    }
}

impl EngineConfig {
    /// Enabled agents in canonical order, deduplicated.
    pub fn agents(&self) -> Vec<AgentKind> {
        let mut a = self.enabled_agents.clone();
        a.sort();
        a.dedup();
        a
    }

    pub fn validate(&self, schemas: &BTreeMap<AgentKind, HyperparamSchema>) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.enabled_agents.is_empty() {
            return invalid("enabled_agents must not be empty");
        }
        if self.candidate_budget == 0 {
            return invalid("candidate_budget must be positive");
        }
        if self.optimization_workers == 0 {
            return invalid("optimization_workers must be positive");
        }
        if self.episodes_train == 0 || self.episodes_eval == 0 {
            return invalid("episode counts must be positive");
        }
        if self.top_k == 0 || self.top_k > self.candidate_budget {
            return invalid("top_k must be in 1..=candidate_budget");
        }
        for kind in self.agents() {
            let schema = schemas
                .get(&kind)
                .ok_or_else(|| ConfigError::Invalid(format!("no schema for agent `{kind}`")))?;
            schema.check()?;
        }
        for (kind, params) in &self.constraints {
            let schema = schemas
                .get(kind)
                .ok_or_else(|| ConfigError::Invalid(format!("no schema for agent `{kind}`")))?;
            for (name, c) in params {
                let spec = schema.param(name).ok_or_else(|| {
                    ConfigError::Invalid(format!("`{kind}` has no hyperparameter `{name}`"))
                })?;
                let subset = match (c, &spec.domain) {
                    (Constraint::Values { values }, domain) => values.iter().all(|v| domain.contains(v)),
                    (Constraint::Range { lo, hi }, ParamDomain::Continuous { lo: a, hi: b }) => {
                        a <= lo && hi <= b
                    }
                    (Constraint::Range { lo, hi }, ParamDomain::Integer { lo: a, hi: b }) => {
                        *a as f64 <= *lo && *hi <= *b as f64
                    }
                    (Constraint::Range { .. }, ParamDomain::Discrete { .. }) => false,
                };
                if !subset {
                    return Err(ConfigError::Invalid(format!(
                        "constraint on `{kind}.{name}` is not a subset of its schema"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineCandidate {
    pub candidate_id: u32,
    pub agent: AgentKind,
    pub hyperparams: BTreeMap<String, ParamValue>,
    /// Mean evaluation episode reward; `None` before evaluation.
    pub rank_score: Option<f64>,
    pub train_steps: u64,
}

impl PipelineCandidate {
    pub fn float(&self, name: &str, default: f64) -> f64 {
        self.hyperparams.get(name).and_then(ParamValue::as_f64).unwrap_or(default)
    }

    pub fn int(&self, name: &str, default: i64) -> i64 {
        match self.hyperparams.get(name) {
            Some(ParamValue::Int(v)) => *v,
            Some(ParamValue::Float(v)) => v.round() as i64,
            _ => default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid engine config: {0}")]
    Invalid(String),
    #[error("search space is empty: {0}")]
    EmptySearchSpace(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("agent `{agent}` cannot train on {source_kind}")]
    IncompatibleDataSource {
        agent: AgentKind,
        source_kind: &'static str,
    },
    #[error("state variable `{0}` cannot be discretized")]
    NonDiscretizableState(String),
    #[error("spec is invalid: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Step(#[from] StepError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("every candidate failed")]
    AllCandidatesFailed,
    #[error("search cancelled")]
    Cancelled,
}

/// SplitMix64 finaliser used to derive independent seeds.
pub(crate) fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn online_defaults() {
        for kind in [AgentKind::QLearning, AgentKind::Sarsa, AgentKind::DynaQ] {
            let s = default_schema(kind);
            assert_eq!(s.param("gamma").unwrap().default, ParamValue::Float(0.95));
            assert_eq!(s.param("alpha").unwrap().default, ParamValue::Float(0.1));
            assert_eq!(s.param("epsilon").unwrap().default, ParamValue::Float(0.1));
            s.check().unwrap();
        }
    }

    #[test]
    fn config_validation() {
        let schemas = default_schemas();
        let ok = EngineConfig::default();
        ok.validate(&schemas).unwrap();
        let bad = EngineConfig {
            top_k: 7,
            ..ok.clone()
        };
        assert!(bad.validate(&schemas).is_err());
        let mut c = ok.clone();
        c.constraints.insert(
            AgentKind::QLearning,
            [("alpha".to_string(), Constraint::Range { lo: 0.0, hi: 0.5 })].into(),
        );
        assert!(c.validate(&schemas).is_err(), "0.0 is below the schema range");
        c.constraints.insert(
            AgentKind::QLearning,
            [("alpha".to_string(), Constraint::Range { lo: 0.2, hi: 0.5 })].into(),
        );
        c.validate(&schemas).unwrap();
        let empty = EngineConfig {
            enabled_agents: vec![],
            ..ok
        };
        assert!(empty.validate(&schemas).is_err());
    }

    #[test]
    fn config_json_shape() {
        let text = r#"{
            "enabled_agents": ["q_learning", "random_policy"],
            "constraints": {"q_learning": {"alpha": {"lo": 0.1, "hi": 0.5}, "bins": {"values": [5, 10]}}},
            "search_strategy": "random",
            "candidate_budget": 4, "optimization_workers": 1,
            "episodes_train": 10, "episodes_eval": 1, "top_k": 2, "seed": 3
        }"#;
        let c: EngineConfig = serde_json::from_str(text).unwrap();
        assert_eq!(c.offline_horizon, 100);
        c.validate(&default_schemas()).unwrap();
    }
}
