//! Content-addressed store of recorded gate responses.
//!
//! The store maps the digest of a [`GateRequest`] to the raw response text.
//! It is generated from a sources file listing, for each recording, the
//! active library (expert indices), the query and the response.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendKind, GateBackend, GateError, GateRequest};
use crate::experts::ExpertRecord;

pub const STORE_VERSION: u32 = 1;

/// Bundled recordings for the shipped simulation sets and gate fixtures.
pub const BUNDLED_STORE_JSON: &str = include_str!("../../data/replay/store.json");
pub const BUNDLED_SOURCES_JSON: &str = include_str!("../../data/replay/sources.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub query: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStore {
    pub version: u32,
    pub entries: BTreeMap<String, ReplayEntry>,
}

impl Default for ReplayStore {
    fn default() -> Self {
        Self {
            version: STORE_VERSION,
            entries: BTreeMap::new(),
        }
    }
}

/// One recording before it is addressed by digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplaySource {
    /// 1-based expert indices of the active library.
    pub library: Vec<usize>,
    pub query: String,
    pub response: Value,
}

fn store_err(e: impl ToString) -> GateError {
    GateError::Store(e.to_string())
}

/// Records of `registry` with the given 1-based indices.
pub fn library_subset(
    registry: &[ExpertRecord],
    indices: &[usize],
) -> Result<Vec<ExpertRecord>, GateError> {
    indices
        .iter()
        .map(|&i| {
            registry
                .iter()
                .find(|r| r.index == i)
                .cloned()
                .ok_or_else(|| GateError::UnknownExpert(format!("#{i}")))
        })
        .collect()
}

impl ReplayStore {
    pub fn from_json_str(text: &str) -> Result<Self, GateError> {
        let s: Self = serde_json::from_str(text).map_err(store_err)?;
        if s.version != STORE_VERSION {
            return Err(GateError::Store(format!(
                "unsupported store version {}",
                s.version
            )));
        }
        Ok(s)
    }

    pub fn bundled() -> Self {
        Self::from_json_str(BUNDLED_STORE_JSON).expect("bundled replay store parses")
    }

    pub fn load(path: &Path) -> Result<Self, GateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GateError::Store(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("store serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), GateError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()).map_err(store_err)?;
        std::fs::rename(&tmp, path).map_err(store_err)
    }

    pub fn insert(&mut self, request: &GateRequest, response: String) {
        self.entries.insert(
            request.digest(),
            ReplayEntry {
                query: request.query.clone(),
                response,
            },
        );
    }

    pub fn get(&self, request: &GateRequest) -> Option<&ReplayEntry> {
        self.entries.get(&request.digest())
    }

    /// The entry recorded for `request`, or failing that the only entry with
    /// the same query text (recorded against a different library).
    pub fn lookup(&self, request: &GateRequest) -> Option<&ReplayEntry> {
        self.get(request).or_else(|| {
            let mut same = self.entries.values().filter(|e| e.query == request.query);
            match (same.next(), same.next()) {
                (Some(e), None) => {
                    log::warn!("replay: no exact recording, using the one recorded for the same query on another library");
                    Some(e)
                }
                _ => None,
            }
        })
    }

    /// Addresses every source against the prompts built from `registry`.
    pub fn from_sources(
        sources: &[ReplaySource],
        registry: &[ExpertRecord],
    ) -> Result<Self, GateError> {
        let mut store = Self::default();
        for s in sources {
            let lib = library_subset(registry, &s.library)?;
            let request = GateRequest::new(&lib, &s.query)?;
            store.insert(&request, s.response.to_string());
        }
        Ok(store)
    }

    pub fn bundled_sources() -> Vec<ReplaySource> {
        serde_json::from_str(BUNDLED_SOURCES_JSON).expect("bundled replay sources parse")
    }
}

/// Answers from a [`ReplayStore`]; unknown requests are an error.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    store: ReplayStore,
}

impl ReplayBackend {
    pub fn new(store: ReplayStore) -> Self {
        Self { store }
    }

    pub fn bundled() -> Self {
        Self::new(ReplayStore::bundled())
    }
}

impl GateBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn respond(&self, request: &GateRequest) -> Result<String, GateError> {
        self.store
            .lookup(request)
            .map(|e| e.response.clone())
            .ok_or_else(|| GateError::ReplayMiss(request.digest()))
    }
}

/// Passes requests to `inner` and keeps every successful response.
pub struct RecordingBackend<B> {
    inner: B,
    store: Mutex<ReplayStore>,
}

impl<B: GateBackend> RecordingBackend<B> {
    pub fn new(inner: B, store: ReplayStore) -> Self {
        Self {
            inner,
            store: Mutex::new(store),
        }
    }

    pub fn into_store(self) -> ReplayStore {
        self.store.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl<B: GateBackend> GateBackend for RecordingBackend<B> {
    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn respond(&self, request: &GateRequest) -> Result<String, GateError> {
        let raw = self.inner.respond(request)?;
        self.store
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(request, raw.clone());
        Ok(raw)
    }
}
