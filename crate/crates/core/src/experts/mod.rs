//! The expert library: one small policy network per utility, a mapping
//! layer that makes every output feasible, training, and persistence.

pub mod features;
pub mod loss;
pub mod mapping;
pub mod mlp;
pub mod persist;
pub mod train;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{build_features, input_dim, output_dim};
pub use mapping::{map_backward, map_outputs};
pub use mlp::{param_count, Mlp, MlpArchitecture};
pub use persist::{
    load_expert, load_manifest, load_registry, save_expert, save_manifest, save_registry,
    RegistryManifest,
};
pub use train::{train_expert, LossTrace, Optimizer, TrainConfig};

use crate::config::SystemConfig;
use crate::netmodel::{Allocation, NetworkState, StateError};
use crate::objectives::{
    constraint_tags, objective_expression, variables_for, ConstraintTag, Domain, Family,
    UtilitySpec, Variable,
};

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("{what} has length {got}, expected {expected}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("mapping produced an invalid allocation: {0}")]
    Mapping(String),
    #[error("expert {0} has no trained parameters")]
    Untrained(String),
    #[error("training of {expert} diverged in epoch {epoch}: {detail}")]
    Divergence {
        expert: String,
        epoch: usize,
        detail: String,
    },
    #[error("invalid training configuration: {0}")]
    TrainConfig(String),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("model trained for {model} users, configuration has {config}")]
    UserMismatch { model: usize, config: usize },
    #[error("unknown expert {0}")]
    UnknownExpert(String),
}

/// Where an expert sits on the trade-off axes of the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Impact {
    Throughput,
    Fairness,
    Balanced,
    Responsiveness,
    Latency,
}

impl Impact {
    pub fn of(family: Family) -> Self {
        match family {
            Family::SumR => Impact::Throughput,
            Family::MinR => Impact::Fairness,
            Family::LogR => Impact::Balanced,
            Family::MaxT => Impact::Responsiveness,
            Family::SumT => Impact::Latency,
        }
    }
}

impl fmt::Display for Impact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Rate,
    Delay,
}

/// Characterization tags of an expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertTags {
    pub robust: bool,
    pub comm: bool,
    pub comp: bool,
    pub metric: MetricKind,
    pub throughput: bool,
    pub fairness: bool,
}

impl ExpertTags {
    pub fn of(spec: &UtilitySpec) -> Self {
        let (throughput, fairness) = match spec.family {
            Family::SumR | Family::SumT => (true, false),
            Family::MinR | Family::MaxT => (false, true),
            Family::LogR => (true, true),
        };
        Self {
            robust: spec.robust,
            comm: matches!(spec.domain, Domain::Comm | Domain::Joint),
            comp: matches!(spec.domain, Domain::Comp | Domain::Joint),
            metric: if spec.family.is_delay() {
                MetricKind::Delay
            } else {
                MetricKind::Rate
            },
            throughput,
            fairness,
        }
    }
}

/// Trained-run bookkeeping stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub minibatches: usize,
    pub batch_size: usize,
    pub m_samples: usize,
    pub num_users: usize,
    pub trace: LossTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub net: Mlp,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertRecord {
    pub index: usize,
    pub name: String,
    pub role: String,
    pub impact: Impact,
    pub tags: ExpertTags,
    pub spec: UtilitySpec,
    pub variables: Vec<Variable>,
    pub objective: String,
    pub constraints: Vec<ConstraintTag>,
    pub architecture: MlpArchitecture,
    #[serde(skip)]
    pub parameters: Option<PolicyParameters>,
}

fn role(spec: &UtilitySpec) -> String {
    let prefix = match spec.domain {
        Domain::Comm => "Comm. ",
        Domain::Comp => "Comp. ",
        Domain::Joint => "",
    };
    let what = match spec.family {
        Family::SumR => "sum rate max.",
        Family::MinR => "min rate max.",
        Family::LogR => "log rate max.",
        Family::MaxT => "max delay min.",
        Family::SumT => "sum delay min.",
    };
    let mut s = format!("{prefix}{what}");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

impl ExpertRecord {
    pub fn new(spec: UtilitySpec, architecture: MlpArchitecture) -> Self {
        let (_, variables) = variables_for(&spec);
        Self {
            index: spec.index(),
            name: spec.name(),
            role: role(&spec),
            impact: Impact::of(spec.family),
            tags: ExpertTags::of(&spec),
            spec,
            variables,
            objective: objective_expression(spec.family, spec.domain),
            constraints: constraint_tags(&spec),
            architecture,
            parameters: None,
        }
    }

    /// One-paragraph description used in the gate's system prompt.
    pub fn description(&self) -> String {
        let dom = match self.spec.domain {
            Domain::Comm => "communication",
            Domain::Comp => "computing",
            Domain::Joint => "communication-and-computing",
        };
        let goal = match self.spec.family {
            Family::SumR => format!("maximization of sum-{dom}-rates of all users in network"),
            Family::MinR => {
                format!("maximization of the minimum {dom} rate among all users in network")
            }
            Family::LogR => format!(
                "maximization of the sum of logarithmic {dom} rates of all users in network"
            ),
            Family::MaxT => {
                format!("minimization of the maximum {dom} delay among all users in network")
            }
            Family::SumT => {
                format!("minimization of the sum of {dom} delays of all users in network")
            }
        };
        let focus = match self.spec.domain {
            Domain::Comm => "Communication",
            Domain::Comp => "Computing",
            Domain::Joint => "Joint communication and computing",
        };
        let emphasis = match self.impact {
            Impact::Throughput => "throughput focused",
            Impact::Fairness => "fairness focused",
            Impact::Balanced => "balanced between throughput and fairness",
            Impact::Responsiveness => "worst-case latency focused",
            Impact::Latency => "total latency focused",
        };
        let conditions = if self.spec.robust {
            match self.spec.domain {
                Domain::Comm => "uncertain conditions, with imperfect channel estimations and channel estimation errors",
                Domain::Comp => "uncertain conditions, with estimation errors in the computing requirements of the users",
                Domain::Joint => {
                    "uncertain conditions, with channel estimation errors and estimation errors in the computing requirements"
                }
            }
        } else {
            "regular conditions, with accurate channel estimations and perfectly known channel state information"
        };
        format!(
            "Expert for {goal}. {focus} {emphasis}. Optimized solution accounts for {conditions}."
        )
    }

    pub fn is_trained(&self) -> bool {
        self.parameters.is_some()
    }

    /// Allocation of this expert for `state`; always feasible.
    pub fn infer(
        &self,
        state: &NetworkState,
        config: &SystemConfig,
    ) -> Result<Allocation, ExpertError> {
        let params = self
            .parameters
            .as_ref()
            .ok_or_else(|| ExpertError::Untrained(self.name.clone()))?;
        let k = state.num_users();
        if params.meta.num_users != k || config.num_users != k {
            return Err(ExpertError::UserMismatch {
                model: params.meta.num_users,
                config: k,
            });
        }
        let x = build_features(self.spec.domain, state);
        let z = params.net.forward(&x)?;
        map_outputs(&z, self.spec.domain, k, config)
    }
}

/// Free function form of [`ExpertRecord::infer`].
pub fn infer(
    record: &ExpertRecord,
    state: &NetworkState,
    config: &SystemConfig,
) -> Result<Allocation, ExpertError> {
    record.infer(state, config)
}

/// Equal split of every budget: the mapping layer applied to zero logits.
pub fn uniform_allocation(domain: Domain, k: usize, config: &SystemConfig) -> Allocation {
    map_outputs(&vec![0.0; output_dim(domain, k)], domain, k, config)
        .expect("zero logits map to a valid allocation")
}

/// The 30 experts in index order, sized for `tc`'s architecture.
pub fn registry_build_with(config: &SystemConfig, tc: &TrainConfig) -> Vec<ExpertRecord> {
    UtilitySpec::all()
        .into_iter()
        .map(|spec| ExpertRecord::new(spec, tc.architecture(&spec, config.num_users)))
        .collect()
}

/// The 30 experts at desk-scale architecture.
pub fn registry_build(config: &SystemConfig) -> Vec<ExpertRecord> {
    registry_build_with(config, &TrainConfig::desk())
}

/// Looks up a record by its name.
pub fn find<'a>(registry: &'a [ExpertRecord], name: &str) -> Result<&'a ExpertRecord, ExpertError> {
    registry
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| ExpertError::UnknownExpert(name.to_string()))
}
