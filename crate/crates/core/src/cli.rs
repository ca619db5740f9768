//! Command-line entry point.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::bench::{
    self, export_accuracy, export_exhaustive, export_results, run_accuracy_set, run_simulation_set,
    sha256_hex, test_set, trial_seed, write_artifacts, BenchError, RunManifest, SetSpec,
};
use crate::config::{ConfigError, SystemConfig, DEFAULT_CONFIG_JSON};
use crate::experts::persist::{encode_expert, MANIFEST_FILE};
use crate::experts::{
    find, load_registry, registry_build_with, save_registry, train_expert, ExpertError,
    ExpertRecord, PolicyParameters, TrainConfig,
};
use crate::gate::accuracy::bundled_fixtures;
use crate::gate::http::GateConfig;
use crate::gate::{
    decide, evaluate_gate_accuracy, load_fixtures, GateBackend, GateError, HttpBackend,
    ReplayBackend, ReplayStore, RuleBackend,
};
use crate::netmodel::{check_feasibility, generate_state, joint_metrics};
use crate::seeding::{rng_from, stream};

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const GATE: i32 = 4;
    pub const TRAINING: i32 = 5;
    pub const UNKNOWN_EXPERT: i32 = 6;
    pub const MISSING_CREDENTIAL: i32 = 7;
    pub const OUTPUT: i32 = 8;
    pub const BENCH: i32 = 9;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Rule,
    Replay,
    Http,
}

#[derive(Debug, Parser)]
#[command(
    name = "netmoe",
    version,
    about = "Mixture-of-experts resource allocation with a natural-language gate"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Configuration file (JSON). The bundled defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; required by train, bench and search.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Desk-scale network sizes and test sets; false selects full scale.
    #[arg(long, global = true, default_value_t = true, action = clap::ArgAction::Set)]
    pub desk_scale: bool,
    #[arg(long, global = true, value_enum, default_value_t = BackendArg::Rule)]
    pub backend: BackendArg,
    /// Replay store used by the replay backend; the bundled one by default.
    #[arg(long, global = true)]
    pub replay_store: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Directory with trained models and their manifest.
    #[arg(long, global = true)]
    pub models: Option<PathBuf>,
    /// Worker threads; all logical cores by default.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Also write wall-clock timings (not reproducible between runs).
    #[arg(long, global = true)]
    pub timings: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train experts and write model files and loss traces.
    Train {
        /// Expert name or "all".
        #[arg(long, default_value = "all")]
        expert: String,
    },
    /// Print an expert's allocation and metrics on a seeded state.
    Infer {
        #[arg(long)]
        expert: String,
    },
    /// Print the gate's decision for a query.
    Gate {
        query: Option<String>,
        #[arg(long, conflicts_with = "query")]
        query_file: Option<PathBuf>,
        /// Restrict the library to that of a bundled set.
        #[arg(long)]
        set: Option<u32>,
    },
    /// Run a simulation set and export CSV/JSON artifacts.
    Bench {
        #[arg(long, conflicts_with = "spec")]
        set: Option<u32>,
        /// Set spec file.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Exhaustive pairwise table of a set's library.
    Search {
        #[arg(long, conflicts_with = "spec")]
        set: Option<u32>,
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Gate accuracy on a fixture corpus.
    Accuracy {
        /// Fixture file; the bundled corpus by default.
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Write the expert metadata of the registry as JSON.
    ExportRegistry,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(exit::CONFIG, e.to_string())
    }
}

impl From<ExpertError> for Failure {
    fn from(e: ExpertError) -> Self {
        let code = match e {
            ExpertError::UnknownExpert(_) => exit::UNKNOWN_EXPERT,
            ExpertError::Io { .. } => exit::OUTPUT,
            _ => exit::TRAINING,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<GateError> for Failure {
    fn from(e: GateError) -> Self {
        let code = match e {
            GateError::MissingCredential(_) => exit::MISSING_CREDENTIAL,
            _ => exit::GATE,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Expert(e) => e.into(),
            BenchError::Gate(e) => e.into(),
            BenchError::Io { .. } => Failure::new(exit::OUTPUT, e.to_string()),
            _ => Failure::new(exit::BENCH, e.to_string()),
        }
    }
}

struct Ctx {
    global: GlobalArgs,
    config: SystemConfig,
    config_text: String,
    tc: TrainConfig,
}

impl Ctx {
    fn seed(&self) -> Result<u64, Failure> {
        self.global
            .seed
            .ok_or_else(|| Failure::new(exit::USAGE, "--seed is required for this command"))
    }

    fn registry(&self) -> Vec<ExpertRecord> {
        registry_build_with(&self.config, &self.tc)
    }

    fn manifest(&self, command: &str, seed: u64) -> RunManifest {
        let backend = match self.global.backend {
            BackendArg::Rule => "rule",
            BackendArg::Replay => "replay",
            BackendArg::Http => "http",
        };
        RunManifest::new(
            command,
            seed,
            &self.config_text,
            self.global.desk_scale,
            backend,
        )
    }

    fn backend(&self) -> Result<Box<dyn GateBackend>, Failure> {
        Ok(match self.global.backend {
            BackendArg::Rule => Box::new(RuleBackend),
            BackendArg::Replay => match &self.global.replay_store {
                Some(p) => Box::new(ReplayBackend::new(ReplayStore::load(p)?)),
                None => Box::new(ReplayBackend::bundled()),
            },
            BackendArg::Http => {
                let gc = GateConfig::from_json_str(&self.config_text)
                    .map_err(|e| Failure::new(exit::CONFIG, e.to_string()))?;
                Box::new(HttpBackend::from_env(gc)?)
            }
        })
    }

    fn models_dir(&self) -> PathBuf {
        self.global
            .models
            .clone()
            .unwrap_or_else(|| self.global.out.join("models"))
    }

    /// Registry with the models for `needed` loaded. Without `--models`,
    /// missing experts are trained into `<out>/models`.
    fn trained_registry(
        &self,
        needed: &[usize],
        seed: Option<u64>,
        log: &mut dyn Write,
    ) -> Result<Vec<ExpertRecord>, Failure> {
        let base = self.registry();
        let dir = self.models_dir();
        let mut reg = if dir.join(MANIFEST_FILE).exists() {
            load_registry(&dir, &base, &self.config)?
        } else {
            base
        };
        let missing: Vec<usize> = needed
            .iter()
            .copied()
            .filter(|&i| !reg[i - 1].is_trained())
            .collect();
        if missing.is_empty() {
            return Ok(reg);
        }
        if self.global.models.is_some() {
            let names: Vec<&str> = missing.iter().map(|&i| reg[i - 1].name.as_str()).collect();
            return Err(Failure::new(
                exit::TRAINING,
                format!("no model for {} in {}", names.join(", "), dir.display()),
            ));
        }
        let seed = seed.ok_or_else(|| {
            Failure::new(exit::USAGE, "--seed is required to train missing experts")
        })?;
        let trained = train_many(&reg, &missing, &self.tc, &self.config, seed)?;
        for (i, p) in missing.into_iter().zip(trained) {
            let _ = writeln!(log, "trained {}", reg[i - 1].name);
            reg[i - 1].parameters = Some(p);
        }
        save_registry(&dir, &reg, &self.config)?;
        Ok(reg)
    }
}

/// Trains `indices` in parallel; each expert's seed depends only on its index.
fn train_many(
    reg: &[ExpertRecord],
    indices: &[usize],
    tc: &TrainConfig,
    config: &SystemConfig,
    seed: u64,
) -> Result<Vec<PolicyParameters>, ExpertError> {
    indices
        .par_iter()
        .map(|&i| train_expert(&reg[i - 1], tc, config, seed))
        .collect()
}

fn load_config(path: Option<&Path>) -> Result<(SystemConfig, String), Failure> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Failure::new(exit::CONFIG, format!("{}: {e}", p.display())))?,
        None => DEFAULT_CONFIG_JSON.to_string(),
    };
    let cfg = SystemConfig::from_json_str(&text)?;
    Ok((cfg, text))
}

/// `uncertainty.m_samples` of the configuration document, if present.
fn config_m_samples(text: &str) -> Option<usize> {
    let v: serde_json::Value = serde_json::from_str(text).ok()?;
    v.get("uncertainty")?
        .get("m_samples")?
        .as_u64()
        .map(|m| m as usize)
}

fn set_spec(set: Option<u32>, spec: Option<&Path>) -> Result<(SetSpec, Option<PathBuf>), Failure> {
    match (set, spec) {
        (_, Some(p)) => Ok((SetSpec::load(p)?, p.parent().map(Path::to_path_buf))),
        (Some(id), None) => Ok((SetSpec::bundled(id)?, None)),
        (None, None) => Err(Failure::new(exit::USAGE, "give --set or --spec")),
    }
}

fn model_digests(
    reg: &[ExpertRecord],
    indices: &[usize],
) -> std::collections::BTreeMap<String, String> {
    indices
        .iter()
        .filter_map(|&i| {
            encode_expert(&reg[i - 1])
                .ok()
                .map(|b| (reg[i - 1].name.clone(), sha256_hex(&b)))
        })
        .collect()
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json serializes")
}

fn dispatch(ctx: &Ctx, command: &Command, out: &mut dyn Write) -> Result<(), Failure> {
    match command {
        Command::Train { expert } => {
            let seed = ctx.seed()?;
            let mut reg = ctx.registry();
            let targets: Vec<usize> = if expert == "all" {
                (1..=reg.len()).collect()
            } else {
                vec![find(&reg, expert)?.index]
            };
            let mut traces = Vec::new();
            let trained = train_many(&reg, &targets, &ctx.tc, &ctx.config, seed)?;
            for (&i, p) in targets.iter().zip(trained) {
                let v = &p.meta.trace.validation;
                let _ = writeln!(
                    out,
                    "{}: validation loss {:.6} -> {:.6}",
                    reg[i - 1].name,
                    v[0],
                    v[v.len() - 1]
                );
                traces.push(json!({"expert": reg[i - 1].name, "train": p.meta.trace.train, "validation": p.meta.trace.validation}));
                reg[i - 1].parameters = Some(p);
            }
            let dir = ctx.models_dir();
            save_registry(&dir, &reg, &ctx.config)?;
            let mut m = ctx.manifest("train", seed);
            m.models = model_digests(&reg, &targets);
            let body =
                pretty(&json!({"seed": seed, "train_config": ctx.tc, "traces": traces})) + "\n";
            write_artifacts(
                &ctx.global.out,
                vec![("loss_traces.json".into(), body.into_bytes())],
                m,
            )?;
            Ok(())
        }
        Command::Infer { expert } => {
            let seed = ctx.global.seed.unwrap_or(0);
            let idx = find(&ctx.registry(), expert)?.index;
            let reg = ctx.trained_registry(&[idx], ctx.global.seed, out)?;
            let rec = &reg[idx - 1];
            let state = generate_state(&ctx.config, &mut rng_from(seed, &[stream::TEST_STATES, 0]))
                .map_err(ExpertError::from)?;
            let alloc = rec.infer(&state, &ctx.config)?;
            let est = joint_metrics(&state, &alloc, &ctx.config, false);
            let tru = joint_metrics(&state, &alloc, &ctx.config, true);
            let report = json!({
                "expert": rec.name,
                "seed": seed,
                "allocation": alloc,
                "feasibility": check_feasibility(&alloc, &ctx.config),
                "metrics_estimated": {"r_tx": est.r_tx, "r_co": est.r_co, "t_tx": est.t_tx, "t_co": est.t_co},
                "metrics_true": {"r_tx": tru.r_tx, "r_co": tru.r_co, "t_tx": tru.t_tx, "t_co": tru.t_co},
            });
            let _ = writeln!(out, "{}", pretty(&report));
            Ok(())
        }
        Command::Gate {
            query,
            query_file,
            set,
        } => {
            let q = match (query, query_file) {
                (Some(q), _) => q.clone(),
                (None, Some(p)) => std::fs::read_to_string(p)
                    .map_err(|e| Failure::new(exit::USAGE, format!("{}: {e}", p.display())))?,
                (None, None) => {
                    return Err(Failure::new(exit::USAGE, "give a query or --query-file"))
                }
            };
            let reg = ctx.registry();
            let lib = match set {
                Some(id) => match SetSpec::bundled(*id)? {
                    SetSpec::Simulation(s) => {
                        crate::gate::replay::library_subset(&reg, &s.library)?
                    }
                    SetSpec::Accuracy(_) => reg.clone(),
                },
                None => reg.clone(),
            };
            let backend = ctx.backend()?;
            let d = decide(backend.as_ref(), &lib, q.trim())?;
            for (name, w) in d.selected() {
                let index = find(&reg, name).map(|r| r.index).unwrap_or(0);
                let _ = writeln!(out, "expert {index:>2} {name:<14} alpha = {w}");
            }
            let _ = writeln!(out, "interpretation: {}", d.interpretation);
            Ok(())
        }
        Command::Bench { set, spec } => {
            let seed = ctx.seed()?;
            let (spec, base) = set_spec(*set, spec.as_deref())?;
            let backend = ctx.backend()?;
            match spec {
                SetSpec::Simulation(mut s) => {
                    if let Some(m) = config_m_samples(&ctx.config_text) {
                        s.m_samples = m;
                    }
                    if !ctx.global.desk_scale {
                        s.test_states = ctx.tc.test_size;
                    }
                    let needed: Vec<usize> =
                        s.library.iter().chain(&s.benchmarks).copied().collect();
                    let reg = ctx.trained_registry(&needed, Some(seed), out)?;
                    let run = run_simulation_set(&s, &reg, backend.as_ref(), &ctx.config, seed)?;
                    let mut m = ctx.manifest("bench", seed);
                    m.models = model_digests(&reg, &needed);
                    export_results(&run, &ctx.global.out, m, ctx.global.timings)?;
                    for t in &run.trials {
                        match (&t.decision, &t.gate_error) {
                            (Some(d), _) => {
                                let sel: Vec<String> = d
                                    .selected()
                                    .iter()
                                    .map(|(n, w)| format!("{n}={w}"))
                                    .collect();
                                let _ = writeln!(
                                    out,
                                    "trial {}: {} feasible={}",
                                    t.trial,
                                    sel.join(" "),
                                    t.feasible
                                );
                            }
                            (None, e) => {
                                let _ = writeln!(
                                    out,
                                    "trial {}: gate failed: {}",
                                    t.trial,
                                    e.as_deref().unwrap_or("")
                                );
                            }
                        }
                    }
                    let _ = writeln!(out, "feasibility accuracy {:.2}", run.feasibility_accuracy);
                }
                SetSpec::Accuracy(a) => {
                    let reg = ctx.registry();
                    let rep = run_accuracy_set(&a, base.as_deref(), &reg, backend.as_ref())?;
                    export_accuracy(&rep, &ctx.global.out, ctx.manifest("bench", seed))?;
                    let _ = writeln!(
                        out,
                        "selection-exact {}/{} full-match {}/{}",
                        rep.selection_exact, rep.total, rep.full_match, rep.total
                    );
                }
            }
            Ok(())
        }
        Command::Search { set, spec } => {
            let seed = ctx.seed()?;
            let (spec, _) = set_spec(*set, spec.as_deref())?;
            let SetSpec::Simulation(mut s) = spec else {
                return Err(Failure::new(exit::USAGE, "search needs a simulation set"));
            };
            if let Some(m) = config_m_samples(&ctx.config_text) {
                s.m_samples = m;
            }
            let reg = ctx.trained_registry(&s.library, Some(seed), out)?;
            let states = test_set(&ctx.config, &s, trial_seed(seed, 0))?;
            let rows = bench::exhaustive_pairwise(&reg, &states, &s, &ctx.config)?;
            let mut m = ctx.manifest("search", seed);
            m.models = model_digests(&reg, &s.library);
            export_exhaustive(&rows, &ctx.global.out, m)?;
            let _ = writeln!(out, "{} candidates written", rows.len());
            Ok(())
        }
        Command::Accuracy { fixtures } => {
            let fx = match fixtures {
                Some(p) => load_fixtures(p)?,
                None => bundled_fixtures(),
            };
            let backend = ctx.backend()?;
            let rep = evaluate_gate_accuracy(backend.as_ref(), &ctx.registry(), &fx)?;
            export_accuracy(
                &rep,
                &ctx.global.out,
                ctx.manifest("accuracy", ctx.global.seed.unwrap_or(0)),
            )?;
            for r in &rep.results {
                let v = serde_json::to_value(r.verdict).expect("verdict serializes");
                let _ = writeln!(out, "{:<8} {}", r.id, v.as_str().unwrap_or(""));
            }
            let _ = writeln!(
                out,
                "selection-exact {}/{} ({:.0}%), full-match {}/{}, mean latency {:.1} ms",
                rep.selection_exact,
                rep.total,
                100.0 * rep.selection_rate,
                rep.full_match,
                rep.total,
                rep.mean_latency_ms
            );
            Ok(())
        }
        Command::ExportRegistry => {
            let reg = ctx.registry();
            let body = registry_json(&reg);
            write_artifacts(
                &ctx.global.out,
                vec![("registry.json".into(), body.into_bytes())],
                ctx.manifest("export-registry", 0),
            )?;
            let _ = writeln!(
                out,
                "{} experts written to {}",
                reg.len(),
                ctx.global.out.join("registry.json").display()
            );
            Ok(())
        }
    }
}

/// Expert metadata of `registry`, one object per expert.
pub fn registry_json(registry: &[ExpertRecord]) -> String {
    let rows: Vec<_> = registry
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(r).expect("record serializes");
            v["description"] = json!(r.description());
            v["param_count"] = json!(crate::experts::param_count(&r.architecture));
            v
        })
        .collect();
    pretty(&json!(rows)) + "\n"
}

/// Parses `args` and runs the command, writing reports to `out` and
/// errors to stderr. Returns the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::USAGE
            } else {
                exit::OK
            };
        }
    };
    if let Some(n) = cli.global.workers {
        // A second call in one process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let result = load_config(cli.global.config.as_deref()).and_then(|(config, config_text)| {
        let tc = TrainConfig::for_scale(cli.global.desk_scale);
        let ctx = Ctx {
            global: cli.global,
            config,
            config_text,
            tc,
        };
        dispatch(&ctx, &cli.command, out)
    });
    match result {
        Ok(()) => exit::OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
