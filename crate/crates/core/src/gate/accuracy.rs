//! Scoring a gate against reference decisions.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::replay::library_subset;
use super::{decide, GateBackend, GateError};
use crate::experts::ExpertRecord;

pub const BUNDLED_FIXTURES_JSON: &str = include_str!("../../data/fixtures/corpus.json");

/// Weight tolerance of a full match.
pub const WEIGHT_TOL: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedName {
    pub name: String,
    pub alpha: f64,
}

/// A query and the reference selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub id: String,
    #[serde(default)]
    pub group: String,
    pub query: String,
    /// 1-based indices of the active library; all experts when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<Vec<usize>>,
    pub experts: Vec<WeightedName>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Same experts, every weight within [`WEIGHT_TOL`].
    FullMatch,
    /// Same experts, some weight off.
    SelectionExact,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureResult {
    pub id: String,
    pub verdict: Verdict,
    pub decided: Vec<WeightedName>,
    pub error: Option<String>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub results: Vec<FixtureResult>,
    pub total: usize,
    /// Fixtures with the reference expert set, full matches included.
    pub selection_exact: usize,
    pub full_match: usize,
    pub failures: usize,
    pub selection_rate: f64,
    pub full_match_rate: f64,
    pub mean_latency_ms: f64,
}

pub fn parse_fixtures(text: &str) -> Result<Vec<Fixture>, GateError> {
    serde_json::from_str(text).map_err(|e| GateError::Store(format!("fixtures: {e}")))
}

pub fn load_fixtures(path: &Path) -> Result<Vec<Fixture>, GateError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GateError::Store(format!("{}: {e}", path.display())))?;
    parse_fixtures(&text)
}

pub fn bundled_fixtures() -> Vec<Fixture> {
    parse_fixtures(BUNDLED_FIXTURES_JSON).expect("bundled fixtures parse")
}

/// Compares a decided selection with the reference.
pub fn verdict(decided: &[WeightedName], reference: &[WeightedName]) -> Verdict {
    let mut a: Vec<&WeightedName> = decided.iter().collect();
    let mut b: Vec<&WeightedName> = reference.iter().collect();
    a.sort_by(|x, y| x.name.cmp(&y.name));
    b.sort_by(|x, y| x.name.cmp(&y.name));
    if a.len() != b.len() || a.iter().zip(&b).any(|(x, y)| x.name != y.name) {
        return Verdict::Failure;
    }
    if a.iter()
        .zip(&b)
        .all(|(x, y)| (x.alpha - y.alpha).abs() <= WEIGHT_TOL + 1e-12)
    {
        Verdict::FullMatch
    } else {
        Verdict::SelectionExact
    }
}

/// Runs every fixture through `backend`. Backend and parse errors count as
/// failures.
pub fn evaluate_gate_accuracy(
    backend: &dyn GateBackend,
    registry: &[ExpertRecord],
    fixtures: &[Fixture],
) -> Result<AccuracyReport, GateError> {
    if fixtures.is_empty() {
        return Err(GateError::Store("no fixtures".into()));
    }
    let mut results = Vec::with_capacity(fixtures.len());
    for f in fixtures {
        let lib = match &f.library {
            Some(idx) => library_subset(registry, idx)?,
            None => registry.to_vec(),
        };
        let (decided, error, latency) = match decide(backend, &lib, &f.query) {
            Ok(d) => {
                let picked = d
                    .selected()
                    .into_iter()
                    .map(|(n, w)| WeightedName {
                        name: n.to_string(),
                        alpha: w,
                    })
                    .collect();
                (picked, None, d.latency)
            }
            Err(e) => (Vec::new(), Some(e.to_string()), Duration::ZERO),
        };
        let v = if error.is_some() {
            Verdict::Failure
        } else {
            verdict(&decided, &f.experts)
        };
        results.push(FixtureResult {
            id: f.id.clone(),
            verdict: v,
            decided,
            error,
            latency_ms: latency.as_secs_f64() * 1e3,
        });
    }
    let total = results.len();
    let full_match = results
        .iter()
        .filter(|r| r.verdict == Verdict::FullMatch)
        .count();
    let selection_exact = full_match
        + results
            .iter()
            .filter(|r| r.verdict == Verdict::SelectionExact)
            .count();
    let mean_latency_ms = results.iter().map(|r| r.latency_ms).sum::<f64>() / total as f64;
    Ok(AccuracyReport {
        results,
        total,
        selection_exact,
        full_match,
        failures: total - selection_exact,
        selection_rate: selection_exact as f64 / total as f64,
        full_match_rate: full_match as f64 / total as f64,
        mean_latency_ms,
    })
}
