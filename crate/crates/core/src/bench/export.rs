//! CSV and JSON artifacts of a run.
//!
//! * `scatter.csv`: `trial,candidate,role,x,y,x_mean,y_mean,feasible`, one
//!   row per library expert, benchmark and agentic mixture of each trial.
//! * `bars_<metric>.csv`: `trial,candidate,role,value,value_mean,feasible`.
//! * `exhaustive.csv`: `candidate,role,members,weights,x,y,x_mean,y_mean,feasible`
//!   for the pairwise search (members and weights `;`-separated).
//! * `summary.json`: decisions, agentic values and feasibility accuracy.
//! * `manifest.json`: seed, configuration digest, versions and a SHA-256
//!   per artifact.
//! * `timings.json`: wall-clock breakdown per trial, only on request since
//!   it differs between runs.
//!
//! Values use the metric's plot units (Mbps, log10 s). All files of one
//! export are staged and moved into place together.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{BenchError, CandidateResult, Metric, Role, RunResult};
use crate::gate::AccuracyReport;

fn role_str(r: Role) -> &'static str {
    match r {
        Role::Library => "library",
        Role::Benchmark => "benchmark",
        Role::Pair => "pair",
        Role::Agentic => "agentic",
    }
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

/// Run metadata recorded next to the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub desk_scale: bool,
    pub backend: String,
    /// Digest of every model file used, by expert name.
    pub models: BTreeMap<String, String>,
    /// Artifact name → SHA-256.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        seed: u64,
        config_json: &str,
        desk_scale: bool,
        backend: &str,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_sha256: sha256_hex(config_json.as_bytes()),
            desk_scale,
            backend: backend.into(),
            models: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `files` into `out` with a manifest. Files are written to a
/// staging directory first, so a failure leaves no partial artifacts.
pub fn write_artifacts(
    out: &Path,
    mut files: Vec<(String, Vec<u8>)>,
    mut manifest: RunManifest,
) -> Result<Vec<PathBuf>, BenchError> {
    for (name, bytes) in &files {
        manifest.files.insert(name.clone(), sha256_hex(bytes));
    }
    let mut m = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    m.push(b'\n');
    files.push(("manifest.json".into(), m));

    fs::create_dir_all(out).map_err(io(out))?;
    let staging = out.join(format!(".staging-{}", std::process::id()));
    let result = (|| {
        fs::create_dir_all(&staging).map_err(io(&staging))?;
        for (name, bytes) in &files {
            let p = staging.join(name);
            fs::write(&p, bytes).map_err(io(&p))?;
        }
        let mut written = Vec::new();
        for (name, _) in &files {
            let dst = out.join(name);
            fs::rename(staging.join(name), &dst).map_err(io(&dst))?;
            written.push(dst);
        }
        Ok(written)
    })();
    let _ = fs::remove_dir_all(&staging);
    result
}

fn scatter_csv(run: &RunResult) -> String {
    let mut s = String::from("trial,candidate,role,x,y,x_mean,y_mean,feasible\n");
    for t in &run.trials {
        for c in t.candidates.iter().chain(t.agentic.as_ref()) {
            let (x, y) = (c.values[0], c.values[1]);
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                t.trial,
                c.candidate.id,
                role_str(c.candidate.role),
                x.median,
                y.median,
                x.mean,
                y.mean,
                flag(c.feasible)
            );
        }
    }
    s
}

fn bars_csv(run: &RunResult, j: usize) -> String {
    let mut s = String::from("trial,candidate,role,value,value_mean,feasible\n");
    for t in &run.trials {
        for c in t.candidates.iter().chain(t.agentic.as_ref()) {
            let v = c.values[j];
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                t.trial,
                c.candidate.id,
                role_str(c.candidate.role),
                v.median,
                v.mean,
                flag(c.feasible)
            );
        }
    }
    s
}

fn exhaustive_csv(rows: &[CandidateResult]) -> String {
    let mut s = String::from("candidate,role,members,weights,x,y,x_mean,y_mean,feasible\n");
    for c in rows {
        let members: Vec<String> = c
            .candidate
            .members
            .iter()
            .map(|m| m.index.to_string())
            .collect();
        let weights: Vec<String> = c
            .candidate
            .members
            .iter()
            .map(|m| m.weight.to_string())
            .collect();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            c.candidate.id,
            role_str(c.candidate.role),
            members.join(";"),
            weights.join(";"),
            c.values[0].median,
            c.values[1].median,
            c.values[0].mean,
            c.values[1].mean,
            flag(c.feasible)
        );
    }
    s
}

fn metric_json(m: &Metric) -> serde_json::Value {
    json!({"name": m.0.name(), "unit": m.unit(), "robust": m.0.robust})
}

fn summary_json(run: &RunResult) -> String {
    let trials: Vec<_> = run
        .trials
        .iter()
        .map(|t| {
            let decision = t.decision.as_ref().map(|d| {
                json!({
                    "selected": d.selected().into_iter().map(|(n, w)| json!({"name": n, "alpha": w})).collect::<Vec<_>>(),
                    "interpretation": d.interpretation,
                    "transcript": d.transcript,
                })
            });
            json!({
                "trial": t.trial,
                "seed": t.seed,
                "decision": decision,
                "gate_error": t.gate_error,
                "agentic": t.agentic.as_ref().map(|a| json!({"values": a.values, "feasible": a.feasible, "constraints_ok": a.constraints_ok})),
                "feasible": t.feasible,
            })
        })
        .collect();
    let spec = &run.spec;
    let v = json!({
        "set": spec.id,
        "name": spec.name,
        "query": spec.query,
        "seed": run.seed,
        "library": spec.library,
        "benchmarks": spec.benchmarks,
        "test_states": spec.test_states,
        "m_samples": spec.m_samples,
        "metrics": {
            "x": metric_json(&spec.x_metric),
            "y": metric_json(&spec.y_metric),
            "bars": spec.bar_metrics.iter().map(metric_json).collect::<Vec<_>>(),
        },
        "aggregate": "median over test states; *_mean columns hold the mean",
        "trials": trials,
        "exhaustive_candidates": run.exhaustive.len(),
        "feasibility_accuracy": run.feasibility_accuracy,
    });
    let mut s = serde_json::to_string_pretty(&v).expect("summary serializes");
    s.push('\n');
    s
}

fn timings_json(run: &RunResult) -> String {
    let rows: Vec<_> = run
        .trials
        .iter()
        .map(|t| json!({"trial": t.trial, "timings": t.timings}))
        .collect();
    let mut s = serde_json::to_string_pretty(&rows).expect("timings serialize");
    s.push('\n');
    s
}

/// File contents of a run, in a fixed order.
pub fn render_results(run: &RunResult, timings: bool) -> Vec<(String, Vec<u8>)> {
    let mut files = vec![("scatter.csv".to_string(), scatter_csv(run).into_bytes())];
    for (k, m) in run.spec.bar_metrics.iter().enumerate() {
        files.push((
            format!("bars_{}.csv", m.0.name()),
            bars_csv(run, 2 + k).into_bytes(),
        ));
    }
    if !run.exhaustive.is_empty() {
        files.push((
            "exhaustive.csv".into(),
            exhaustive_csv(&run.exhaustive).into_bytes(),
        ));
    }
    files.push(("summary.json".into(), summary_json(run).into_bytes()));
    if timings {
        files.push(("timings.json".into(), timings_json(run).into_bytes()));
    }
    files
}

pub fn export_results(
    run: &RunResult,
    out: &Path,
    manifest: RunManifest,
    timings: bool,
) -> Result<Vec<PathBuf>, BenchError> {
    if run.trials.is_empty() {
        return Err(BenchError::Spec("nothing to export".into()));
    }
    write_artifacts(out, render_results(run, timings), manifest)
}

pub fn export_exhaustive(
    rows: &[CandidateResult],
    out: &Path,
    manifest: RunManifest,
) -> Result<Vec<PathBuf>, BenchError> {
    write_artifacts(
        out,
        vec![("exhaustive.csv".into(), exhaustive_csv(rows).into_bytes())],
        manifest,
    )
}

pub fn export_accuracy(
    report: &AccuracyReport,
    out: &Path,
    manifest: RunManifest,
) -> Result<Vec<PathBuf>, BenchError> {
    let mut csv = String::from("id,verdict,decided,error\n");
    for r in &report.results {
        let decided: Vec<String> = r
            .decided
            .iter()
            .map(|d| format!("{}:{}", d.name, d.alpha))
            .collect();
        let verdict = serde_json::to_value(r.verdict).expect("verdict serializes");
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.id,
            verdict.as_str().unwrap_or(""),
            decided.join(";"),
            err
        );
    }
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    write_artifacts(
        out,
        vec![
            ("accuracy.csv".into(), csv.into_bytes()),
            ("accuracy.json".into(), json.into_bytes()),
        ],
        manifest,
    )
}

/// A parsed `scatter.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub trial: usize,
    pub candidate: String,
    pub role: String,
    pub x: f64,
    pub y: f64,
    pub x_mean: f64,
    pub y_mean: f64,
    pub feasible: bool,
}

pub fn read_scatter_csv(text: &str) -> Result<Vec<ScatterRow>, BenchError> {
    let bad = |line: usize| BenchError::Spec(format!("scatter.csv line {line} is malformed"));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(bad(n + 1));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n + 1));
            Ok(ScatterRow {
                trial: f[0].parse().map_err(|_| bad(n + 1))?,
                candidate: f[1].into(),
                role: f[2].into(),
                x: num(f[3])?,
                y: num(f[4])?,
                x_mean: num(f[5])?,
                y_mean: num(f[6])?,
                feasible: f[7] == "1",
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::tests::untrained_but_loaded;
    use crate::bench::{run_simulation_set, SetSpec};
    use crate::config::SystemConfig;
    use crate::gate::ReplayBackend;

    fn tiny_run(set: u32) -> RunResult {
        let cfg = SystemConfig::default();
        let reg = untrained_but_loaded(&cfg);
        let SetSpec::Simulation(mut s) = SetSpec::bundled(set).unwrap() else {
            panic!()
        };
        s.test_states = 6;
        s.trials = 2;
        s.m_samples = 10;
        run_simulation_set(&s, &reg, &ReplayBackend::bundled(), &cfg, 11).unwrap()
    }

    #[test]
    fn scatter_round_trip() {
        let run = tiny_run(2);
        let rows = read_scatter_csv(&scatter_csv(&run)).unwrap();
        let mut k = 0;
        for t in &run.trials {
            for c in t.candidates.iter().chain(t.agentic.as_ref()) {
                let r = &rows[k];
                assert_eq!(r.candidate, c.candidate.id);
                assert!(
                    (r.x - c.values[0].median).abs() <= 1e-9 * c.values[0].median.abs().max(1.0)
                );
                assert!(
                    (r.y_mean - c.values[1].mean).abs() <= 1e-9 * c.values[1].mean.abs().max(1.0)
                );
                assert_eq!(r.feasible, c.feasible);
                k += 1;
            }
        }
        assert_eq!(k, rows.len());
    }

    #[test]
    fn no_benchmark_rows_without_benchmarks() {
        let run = tiny_run(3);
        let rows = read_scatter_csv(&scatter_csv(&run)).unwrap();
        assert!(rows.iter().all(|r| r.role != "benchmark"));
        assert!(rows.iter().any(|r| r.role == "agentic"));
    }

    #[test]
    fn infeasible_singles_saturate_delays() {
        let run = tiny_run(1);
        // Communication-only experts never compute: delay at the sentinel.
        let comm = run.trials[0]
            .candidates
            .iter()
            .find(|c| c.candidate.id == "E1")
            .unwrap();
        assert!(!comm.feasible);
        assert_eq!(
            comm.values[1].median,
            crate::bench::DELAY_SENTINEL_S.log10()
        );
    }

    #[test]
    fn unwritable_output_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let run = tiny_run(2);
        let m = RunManifest::new("bench", 11, "{}", true, "replay");
        assert!(export_results(&run, &blocker.join("out"), m, false).is_err());
        assert_eq!(fs::read(&blocker).unwrap(), b"x");
    }

    #[test]
    fn export_writes_manifest_with_digests() {
        let dir = tempfile::tempdir().unwrap();
        let run = tiny_run(2);
        let m = RunManifest::new("bench", 11, "{}", true, "replay");
        let files = export_results(&run, dir.path(), m, false).unwrap();
        assert!(files.iter().any(|p| p.ends_with("manifest.json")));
        assert!(!dir.path().join("timings.json").exists());
        let man: RunManifest =
            serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        let scatter = fs::read(dir.path().join("scatter.csv")).unwrap();
        assert_eq!(man.files["scatter.csv"], sha256_hex(&scatter));
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with(".staging"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
