//! Simulation sets: library scoping, agentic runs, exhaustive pairwise
//! search and plot-ready exports.
//!
//! Every trial draws fresh test states, asks the gate once, and evaluates
//! each candidate (a library expert, a held-out benchmark expert, a pair of
//! library experts at 0.5/0.5, or the gate's mixture) on all states. Robust
//! metrics share one set of error realizations per state across all
//! candidates. Per-state values are aggregated by median; means are kept
//! alongside.

pub mod export;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{
    export_accuracy, export_exhaustive, export_results, read_scatter_csv, render_results,
    sha256_hex, write_artifacts, RunManifest, ScatterRow,
};

use crate::config::SystemConfig;
use crate::experts::{ExpertError, ExpertRecord};
use crate::gate::{
    combine_weighted, decide, evaluate_gate_accuracy, load_fixtures, AccuracyReport, GateBackend,
    GateDecision, GateError,
};
use crate::netmodel::{
    check_feasibility, generate_state, joint_metrics, metrics_from_parts, Allocation, NetworkState,
};
use crate::objectives::{evaluate_utility, Family, UtilitySpec};
use crate::seeding::{derive_seed, rng_from, stream};
use crate::uncertainty::{empirical_quantile, realizations, ErrorModel, Realization, DEFAULT_M};

/// Delays are saturated here (seconds) before aggregation and export.
pub const DELAY_SENTINEL_S: f64 = 1e3;

pub const SET1_JSON: &str = include_str!("../../data/sets/set1.json");
pub const SET2_JSON: &str = include_str!("../../data/sets/set2.json");
pub const SET3_JSON: &str = include_str!("../../data/sets/set3.json");
pub const SET4_JSON: &str = include_str!("../../data/sets/set4.json");

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid set spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("test state generation failed: {0}")]
    State(String),
}

/// A scatter or bar axis: the utility of one expert objective, robust when
/// the objective is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Metric(pub UtilitySpec);

impl TryFrom<String> for Metric {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse::<UtilitySpec>()
            .map(Metric)
            .map_err(|e| e.to_string())
    }
}

impl From<Metric> for String {
    fn from(m: Metric) -> String {
        m.0.name()
    }
}

impl Metric {
    pub fn unit(&self) -> &'static str {
        match self.0.family {
            Family::SumR | Family::MinR => "Mbps",
            Family::LogR => "ln(bit/s)",
            Family::MaxT | Family::SumT => "log10 s",
        }
    }

    fn saturate(&self, raw: f64) -> f64 {
        if self.0.family.is_delay() {
            raw.min(DELAY_SENTINEL_S)
        } else {
            raw
        }
    }

    /// Plot units: rates in Mbps, delays as log10 seconds.
    pub fn display(&self, raw: f64) -> f64 {
        match self.0.family {
            Family::SumR | Family::MinR => raw / 1e6,
            Family::LogR => raw,
            Family::MaxT | Family::SumT => raw.log10(),
        }
    }
}

fn default_test_states() -> usize {
    256
}

fn default_trials() -> usize {
    3
}

fn default_m() -> usize {
    DEFAULT_M
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSetSpec {
    pub id: u32,
    pub name: String,
    /// 1-based expert indices available to the gate.
    pub library: Vec<usize>,
    /// Held-out experts optimal for the plotted objectives.
    #[serde(default)]
    pub benchmarks: Vec<usize>,
    pub query: String,
    pub x_metric: Metric,
    pub y_metric: Metric,
    #[serde(default)]
    pub bar_metrics: Vec<Metric>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_test_states")]
    pub test_states: usize,
    /// Error realizations per state for robust metrics.
    #[serde(default = "default_m")]
    pub m_samples: usize,
    /// Run the pairwise search on the first trial.
    #[serde(default = "default_true")]
    pub exhaustive: bool,
    /// Also search pair weights 0.1..0.9 instead of 0.5 only.
    #[serde(default)]
    pub weight_grid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracySetSpec {
    pub id: u32,
    pub name: String,
    /// `"bundled"` or a path relative to the set file.
    pub fixtures: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SetSpec {
    Simulation(SimSetSpec),
    Accuracy(AccuracySetSpec),
}

impl SetSpec {
    pub fn from_json_str(text: &str) -> Result<Self, BenchError> {
        let s: SetSpec = serde_json::from_str(text).map_err(|e| BenchError::Spec(e.to_string()))?;
        if let SetSpec::Simulation(sim) = &s {
            sim.validate()?;
        }
        Ok(s)
    }

    pub fn bundled(id: u32) -> Result<Self, BenchError> {
        let text = match id {
            1 => SET1_JSON,
            2 => SET2_JSON,
            3 => SET3_JSON,
            4 => SET4_JSON,
            _ => return Err(BenchError::Spec(format!("no bundled set {id}"))),
        };
        Self::from_json_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn id(&self) -> u32 {
        match self {
            SetSpec::Simulation(s) => s.id,
            SetSpec::Accuracy(a) => a.id,
        }
    }
}

impl SimSetSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Spec(m));
        if self.library.is_empty() {
            return bad("empty library".into());
        }
        for &i in self.library.iter().chain(&self.benchmarks) {
            if UtilitySpec::from_index(i).is_none() {
                return bad(format!("expert index {i} out of range"));
            }
        }
        if let Some(i) = self.benchmarks.iter().find(|i| self.library.contains(i)) {
            return bad(format!("expert {i} is both in the library and a benchmark"));
        }
        let mut l = self.library.clone();
        l.sort_unstable();
        l.dedup();
        if l.len() != self.library.len() {
            return bad("duplicate library entries".into());
        }
        if self.trials == 0 || self.test_states == 0 || self.m_samples == 0 {
            return bad("trials, test_states and m_samples must be positive".into());
        }
        Ok(())
    }

    pub fn metrics(&self) -> Vec<Metric> {
        let mut m = vec![self.x_metric, self.y_metric];
        m.extend(self.bar_metrics.iter().copied());
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Library,
    Benchmark,
    Pair,
    Agentic,
}

/// An expert index and its weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub index: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub role: Role,
    pub members: Vec<Member>,
}

impl Candidate {
    fn single(index: usize, role: Role) -> Self {
        Self {
            id: format!("E{index}"),
            role,
            members: vec![Member { index, weight: 1.0 }],
        }
    }

    fn pair(a: usize, b: usize, wa: f64) -> Self {
        let id = if wa == 0.5 {
            format!("E{a}+E{b}")
        } else {
            format!("E{a}@{wa:.1}+E{b}")
        };
        Self {
            id,
            role: Role::Pair,
            members: vec![
                Member {
                    index: a,
                    weight: wa,
                },
                Member {
                    index: b,
                    weight: 1.0 - wa,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub median: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate: Candidate,
    /// One aggregate per metric, in [`SimSetSpec::metrics`] order, in
    /// display units.
    pub values: Vec<Aggregate>,
    /// All combined allocations satisfy the hard constraints.
    pub constraints_ok: bool,
    /// Constraints hold and no plotted median delay exceeds `t_feas`.
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub gate_ms: f64,
    pub inference_ms: f64,
    pub end_to_end_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub decision: Option<GateDecision>,
    pub gate_error: Option<String>,
    pub agentic: Option<CandidateResult>,
    /// Library singles and benchmarks.
    pub candidates: Vec<CandidateResult>,
    pub feasible: bool,
    #[serde(skip)]
    pub timings: Option<Timings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub spec: SimSetSpec,
    pub seed: u64,
    pub trials: Vec<TrialResult>,
    /// Pairwise search on the first trial's states; empty when disabled.
    pub exhaustive: Vec<CandidateResult>,
    pub feasibility_accuracy: f64,
}

/// Test states and, when robust metrics are plotted, their shared error
/// realizations.
pub struct TestSet {
    pub states: Vec<NetworkState>,
    pub realizations: Vec<Vec<Realization>>,
}

pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    derive_seed(seed, &[stream::TRIAL, trial as u64])
}

pub fn test_set(
    config: &SystemConfig,
    spec: &SimSetSpec,
    seed: u64,
) -> Result<TestSet, BenchError> {
    let states = (0..spec.test_states)
        .map(|i| {
            generate_state(
                config,
                &mut rng_from(seed, &[stream::TEST_STATES, i as u64]),
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| BenchError::State(e.to_string()))?;
    let robust = spec.metrics().iter().any(|m| m.0.robust);
    let realizations = if robust {
        let model = ErrorModel::from_config(config, spec.m_samples);
        states
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                realizations(
                    s,
                    &model,
                    config.omega_floor,
                    derive_seed(seed, &[stream::PERTURB, i as u64]),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(TestSet {
        states,
        realizations,
    })
}

/// Allocations of every listed expert on every state, in list order.
pub struct AllocTable {
    pub indices: Vec<usize>,
    pub allocs: Vec<Vec<Allocation>>,
}

impl AllocTable {
    pub fn build(
        registry: &[ExpertRecord],
        indices: &[usize],
        states: &[NetworkState],
        config: &SystemConfig,
    ) -> Result<Self, BenchError> {
        let records: Vec<&ExpertRecord> = indices
            .iter()
            .map(|&i| {
                registry
                    .iter()
                    .find(|r| r.index == i)
                    .ok_or_else(|| BenchError::Spec(format!("no expert {i}")))
            })
            .collect::<Result<_, _>>()?;
        if let Some(r) = records.iter().find(|r| !r.is_trained()) {
            return Err(ExpertError::Untrained(r.name.clone()).into());
        }
        let allocs = records
            .par_iter()
            .map(|r| {
                states
                    .iter()
                    .map(|s| r.infer(s, config))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            indices: indices.to_vec(),
            allocs,
        })
    }

    fn get(&self, index: usize) -> Option<&[Allocation]> {
        self.indices
            .iter()
            .position(|&i| i == index)
            .map(|p| self.allocs[p].as_slice())
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Raw per-state values of each metric for one allocation.
fn metric_values(
    alloc: &Allocation,
    state: &NetworkState,
    reals: Option<&[Realization]>,
    metrics: &[Metric],
    config: &SystemConfig,
    model: &ErrorModel,
) -> Vec<f64> {
    let nominal = joint_metrics(state, alloc, config, true);
    let mut robust: Vec<Vec<f64>> = vec![Vec::new(); metrics.len()];
    if let Some(reals) = reals {
        if metrics.iter().any(|m| m.0.robust) {
            for r in reals {
                let pm = metrics_from_parts(&r.gains, &r.omega, alloc, config);
                for (j, m) in metrics.iter().enumerate().filter(|(_, m)| m.0.robust) {
                    robust[j].push(evaluate_utility(&m.0, &pm));
                }
            }
        }
    }
    metrics
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let raw = if m.0.robust {
                empirical_quantile(&robust[j], config.gamma, model.tail_for(m.0.family))
                    .unwrap_or(f64::NAN)
            } else {
                evaluate_utility(&m.0, &nominal)
            };
            m.saturate(raw)
        })
        .collect()
}

/// Evaluates one candidate on every state of `set`.
pub fn evaluate_candidate(
    candidate: &Candidate,
    table: &AllocTable,
    set: &TestSet,
    metrics: &[Metric],
    config: &SystemConfig,
    m_samples: usize,
) -> Result<CandidateResult, BenchError> {
    let model = ErrorModel::from_config(config, m_samples);
    let weights: Vec<f64> = candidate.members.iter().map(|m| m.weight).collect();
    let member_allocs: Vec<&[Allocation]> = candidate
        .members
        .iter()
        .map(|m| {
            table
                .get(m.index)
                .ok_or_else(|| BenchError::Spec(format!("expert {} not evaluated", m.index)))
        })
        .collect::<Result<_, _>>()?;
    let mut per_metric: Vec<Vec<f64>> = vec![Vec::with_capacity(set.states.len()); metrics.len()];
    let mut constraints_ok = true;
    for (s, state) in set.states.iter().enumerate() {
        let allocs: Vec<Allocation> = member_allocs.iter().map(|a| a[s].clone()).collect();
        let combined = combine_weighted(&weights, &allocs, config)?;
        constraints_ok &= check_feasibility(&combined, config).feasible();
        let reals = set.realizations.get(s).map(Vec::as_slice);
        for (j, v) in metric_values(&combined, state, reals, metrics, config, &model)
            .into_iter()
            .enumerate()
        {
            per_metric[j].push(v);
        }
    }
    let mut delay_ok = true;
    let values = metrics
        .iter()
        .zip(per_metric.iter_mut())
        .map(|(m, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let med = median(v);
            if m.0.family.is_delay() && !(med <= config.t_feas) {
                delay_ok = false;
            }
            Aggregate {
                median: m.display(med),
                mean: m.display(mean),
            }
        })
        .collect();
    Ok(CandidateResult {
        candidate: candidate.clone(),
        values,
        constraints_ok,
        feasible: constraints_ok && delay_ok,
    })
}

/// Every library expert alone and every unordered pair at 0.5/0.5 (or on
/// the weight grid), singles first, then pairs in index order.
pub fn pairwise_candidates(library: &[usize], weight_grid: bool) -> Vec<Candidate> {
    let mut lib = library.to_vec();
    lib.sort_unstable();
    let mut out: Vec<Candidate> = lib
        .iter()
        .map(|&i| Candidate::single(i, Role::Library))
        .collect();
    let grid: Vec<f64> = if weight_grid {
        (1..=9).map(|k| k as f64 / 10.0).collect()
    } else {
        vec![0.5]
    };
    for (a_pos, &a) in lib.iter().enumerate() {
        for &b in &lib[a_pos + 1..] {
            for &w in &grid {
                out.push(Candidate::pair(a, b, w));
            }
        }
    }
    out
}

pub fn evaluate_all(
    candidates: &[Candidate],
    table: &AllocTable,
    set: &TestSet,
    metrics: &[Metric],
    config: &SystemConfig,
    m_samples: usize,
) -> Result<Vec<CandidateResult>, BenchError> {
    candidates
        .par_iter()
        .map(|c| evaluate_candidate(c, table, set, metrics, config, m_samples))
        .collect()
}

/// Exhaustive pairwise table over `spec.library` on the states of `set`.
pub fn exhaustive_pairwise(
    registry: &[ExpertRecord],
    set: &TestSet,
    spec: &SimSetSpec,
    config: &SystemConfig,
) -> Result<Vec<CandidateResult>, BenchError> {
    let table = AllocTable::build(registry, &spec.library, &set.states, config)?;
    let cands = pairwise_candidates(&spec.library, spec.weight_grid);
    evaluate_all(&cands, &table, set, &spec.metrics(), config, spec.m_samples)
}

fn agentic_candidate(decision: &GateDecision, library: &[ExpertRecord]) -> Candidate {
    let members = decision
        .selected()
        .into_iter()
        .map(|(name, w)| Member {
            index: library
                .iter()
                .find(|r| r.name == name)
                .map_or(0, |r| r.index),
            weight: w,
        })
        .collect();
    Candidate {
        id: "agentic".into(),
        role: Role::Agentic,
        members,
    }
}

/// Runs all trials of `spec`. `registry` must hold trained models for the
/// library and the benchmarks.
pub fn run_simulation_set(
    spec: &SimSetSpec,
    registry: &[ExpertRecord],
    backend: &dyn GateBackend,
    config: &SystemConfig,
    seed: u64,
) -> Result<RunResult, BenchError> {
    spec.validate()?;
    let library = crate::gate::replay::library_subset(registry, &spec.library)?;
    let mut evaluated: Vec<usize> = spec
        .library
        .iter()
        .chain(&spec.benchmarks)
        .copied()
        .collect();
    evaluated.sort_unstable();
    for &i in &evaluated {
        let r = &registry[i - 1];
        if !r.is_trained() {
            return Err(ExpertError::Untrained(r.name.clone()).into());
        }
    }
    let metrics = spec.metrics();
    let mut trials = Vec::with_capacity(spec.trials);
    let mut exhaustive = Vec::new();

    for t in 0..spec.trials {
        let start = Instant::now();
        let tseed = trial_seed(seed, t);
        let set = test_set(config, spec, tseed)?;

        let gate_start = Instant::now();
        let decided = decide(backend, &library, &spec.query);
        let gate_time = gate_start.elapsed();

        let inf_start = Instant::now();
        let table = AllocTable::build(registry, &evaluated, &set.states, config)?;
        let inference_time = inf_start.elapsed();

        let mut singles: Vec<Candidate> = Vec::new();
        let pairs_here = t == 0 && spec.exhaustive;
        if pairs_here {
            let all = evaluate_all(
                &pairwise_candidates(&spec.library, spec.weight_grid),
                &table,
                &set,
                &metrics,
                config,
                spec.m_samples,
            )?;
            exhaustive = all;
        } else {
            let mut lib = spec.library.clone();
            lib.sort_unstable();
            singles.extend(lib.iter().map(|&i| Candidate::single(i, Role::Library)));
        }
        let mut bench = spec.benchmarks.clone();
        bench.sort_unstable();
        singles.extend(bench.iter().map(|&i| Candidate::single(i, Role::Benchmark)));

        let mut candidates = if pairs_here {
            exhaustive
                .iter()
                .filter(|c| c.candidate.role == Role::Library)
                .cloned()
                .collect()
        } else {
            Vec::new()
        };
        candidates.extend(evaluate_all(
            &singles,
            &table,
            &set,
            &metrics,
            config,
            spec.m_samples,
        )?);

        let (decision, gate_error, agentic) = match decided {
            Ok(d) => {
                let c = agentic_candidate(&d, &library);
                let r = evaluate_candidate(&c, &table, &set, &metrics, config, spec.m_samples)?;
                (Some(d), None, Some(r))
            }
            Err(e) => (None, Some(e.to_string()), None),
        };
        let feasible = agentic.as_ref().is_some_and(|a| a.feasible);
        let end_to_end = start.elapsed();
        trials.push(TrialResult {
            trial: t,
            seed: tseed,
            decision,
            gate_error,
            agentic,
            candidates,
            feasible,
            timings: Some(Timings {
                gate_ms: ms(gate_time),
                inference_ms: ms(inference_time),
                end_to_end_ms: ms(end_to_end),
            }),
        });
    }
    let feasibility_accuracy =
        trials.iter().filter(|t| t.feasible).count() as f64 / trials.len() as f64;
    Ok(RunResult {
        spec: spec.clone(),
        seed,
        trials,
        exhaustive,
        feasibility_accuracy,
    })
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Runs the fixture corpus of an accuracy set.
pub fn run_accuracy_set(
    spec: &AccuracySetSpec,
    base_dir: Option<&Path>,
    registry: &[ExpertRecord],
    backend: &dyn GateBackend,
) -> Result<AccuracyReport, BenchError> {
    let fixtures = if spec.fixtures == "bundled" {
        crate::gate::accuracy::bundled_fixtures()
    } else {
        let p = base_dir.map_or_else(|| PathBuf::from(&spec.fixtures), |d| d.join(&spec.fixtures));
        load_fixtures(&p)?
    };
    Ok(evaluate_gate_accuracy(backend, registry, &fixtures)?)
}
