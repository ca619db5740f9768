//! The gate: turns an operator's request into a weighted selection of
//! experts and composes their allocations.
//!
//! A backend receives the system prompt (general setup, expert cards, tool
//! descriptions) and the query, and answers with one tool call. Three
//! backends exist: a chat-completions client, a deterministic keyword
//! router, and a replay store of recorded answers.

pub mod accuracy;
pub mod combine;
pub mod http;
pub mod parse;
pub mod prompt;
pub mod replay;
pub mod rules;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use accuracy::{evaluate_gate_accuracy, load_fixtures, AccuracyReport, Fixture, Verdict};
pub use combine::{combine, combine_weighted};
pub use http::HttpBackend;
pub use parse::parse_tool_call;
pub use prompt::{build_system_prompt, tool_declarations, ExpertCard};
pub use replay::{ReplayBackend, ReplayStore};
pub use rules::RuleBackend;

use crate::experts::ExpertRecord;

#[derive(Debug, Error)]
pub enum GateError {
    #[error("expert {0} is not in the active library")]
    UnknownExpert(String),
    #[error("malformed tool call: {0}")]
    Malformed(String),
    #[error("weight {0} outside [0, 1]")]
    WeightRange(f64),
    #[error("weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("query needs clarification: {0}")]
    Clarification(String),
    #[error("gate unavailable: {0}")]
    Unavailable(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("replay store: {0}")]
    Store(String),
    #[error("{0} allocations for {1} selected experts")]
    Misaligned(usize, usize),
    #[error("empty expert library")]
    EmptyLibrary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Rule,
    Replay,
}

/// What a backend is asked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRequest {
    pub system_prompt: String,
    pub query: String,
    pub tools: Value,
    /// Names of the active library in index order.
    pub library: Vec<String>,
}

impl GateRequest {
    pub fn new(library: &[ExpertRecord], query: &str) -> Result<Self, GateError> {
        if library.is_empty() {
            return Err(GateError::EmptyLibrary);
        }
        let cards: Vec<ExpertCard> = library.iter().map(ExpertCard::from_record).collect();
        Ok(Self {
            system_prompt: build_system_prompt(&cards),
            query: query.to_string(),
            tools: tool_declarations(),
            library: library.iter().map(|r| r.name.clone()).collect(),
        })
    }

    /// Content address of the request: SHA-256 over the prompt, the query
    /// and the tool declarations.
    pub fn digest(&self) -> String {
        let canonical = serde_json::json!({
            "system": self.system_prompt,
            "query": self.query,
            "tools": self.tools,
        });
        let mut h = Sha256::new();
        h.update(canonical.to_string().as_bytes());
        hex::encode(h.finalize())
    }
}

pub trait GateBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Raw response text containing one tool call.
    fn respond(&self, request: &GateRequest) -> Result<String, GateError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub request_digest: String,
    pub query: String,
    pub response: String,
}

/// Selection and weights over the active library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    /// Library names in index order.
    pub library: Vec<String>,
    pub selection: Vec<bool>,
    pub weights: Vec<f64>,
    pub interpretation: String,
    pub transcript: Option<Transcript>,
    /// Backend latency; zero for decisions parsed outside [`decide`].
    #[serde(skip)]
    pub latency: Duration,
}

impl GateDecision {
    /// Selected experts and their weights, in library order.
    pub fn selected(&self) -> Vec<(&str, f64)> {
        self.library
            .iter()
            .zip(&self.selection)
            .zip(&self.weights)
            .filter(|((_, s), _)| **s)
            .map(|((n, _), w)| (n.as_str(), *w))
            .collect()
    }

    pub fn selected_names(&self) -> Vec<&str> {
        self.selected().into_iter().map(|(n, _)| n).collect()
    }

    /// Checks the simplex and selection/weight consistency.
    pub fn validate(&self) -> Result<(), GateError> {
        let n = self.library.len();
        if self.selection.len() != n || self.weights.len() != n {
            return Err(GateError::Malformed(
                "selection and weights must cover the library".into(),
            ));
        }
        if !self.selection.iter().any(|&s| s) {
            return Err(GateError::Malformed("no expert selected".into()));
        }
        for (s, w) in self.selection.iter().zip(&self.weights) {
            if !(0.0..=1.0).contains(w) {
                return Err(GateError::WeightRange(*w));
            }
            if *s != (*w > 0.0) {
                return Err(GateError::Malformed(
                    "weight must be positive exactly for selected experts".into(),
                ));
            }
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(GateError::WeightSum(sum));
        }
        Ok(())
    }
}

/// Asks `backend` about `query` over `library` and parses the answer.
pub fn decide(
    backend: &dyn GateBackend,
    library: &[ExpertRecord],
    query: &str,
) -> Result<GateDecision, GateError> {
    let request = GateRequest::new(library, query)?;
    let start = Instant::now();
    let raw = backend.respond(&request)?;
    let latency = start.elapsed();
    let mut decision = parse_tool_call(&raw, &request.library)?;
    decision.transcript = Some(Transcript {
        request_digest: request.digest(),
        query: query.to_string(),
        response: raw,
    });
    decision.latency = latency;
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemConfig;
    use crate::experts::registry_build;

    #[test]
    fn decision_validation() {
        let lib = vec!["A".to_string(), "B".to_string()];
        let ok = GateDecision {
            library: lib.clone(),
            selection: vec![true, true],
            weights: vec![0.5, 0.5],
            interpretation: String::new(),
            transcript: None,
            latency: Duration::ZERO,
        };
        assert!(ok.validate().is_ok());
        assert_eq!(ok.selected(), vec![("A", 0.5), ("B", 0.5)]);
        let bad = GateDecision {
            weights: vec![1.0, 0.0],
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let none = GateDecision {
            selection: vec![false, false],
            weights: vec![0.0, 0.0],
            ..ok
        };
        assert!(none.validate().is_err());
    }

    #[test]
    fn digest_depends_on_query_and_library() {
        let reg = registry_build(&SystemConfig::default());
        let a = GateRequest::new(&reg, "q").unwrap();
        let b = GateRequest::new(&reg, "q").unwrap();
        let c = GateRequest::new(&reg, "r").unwrap();
        let d = GateRequest::new(&reg[..12], "q").unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_ne!(a.digest(), d.digest());
        assert!(matches!(
            GateRequest::new(&[], "q"),
            Err(GateError::EmptyLibrary)
        ));
    }
}
