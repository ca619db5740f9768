//! Model files and the registry manifest.
//!
//! A model file is `NMOEXPRT`, a little-endian `u32` version, a `u32`
//! header length, a JSON header (expert name, architecture, training
//! metadata), a `u64` parameter count, the parameters as little-endian
//! `f64`, and a SHA-256 digest of everything before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExpertError, ExpertRecord, Mlp, MlpArchitecture, PolicyParameters, TrainingMeta};
use crate::config::SystemConfig;

const MAGIC: &[u8; 8] = b"NMOEXPRT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    name: String,
    index: usize,
    architecture: MlpArchitecture,
    meta: TrainingMeta,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ExpertError + '_ {
    move |source| ExpertError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes the record's trained parameters.
pub fn encode_expert(record: &ExpertRecord) -> Result<Vec<u8>, ExpertError> {
    let params = record
        .parameters
        .as_ref()
        .ok_or_else(|| ExpertError::Untrained(record.name.clone()))?;
    let header = Header {
        name: record.name.clone(),
        index: record.index,
        architecture: params.net.arch,
        meta: params.meta.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| ExpertError::Corrupt(e.to_string()))?;
    let flat = params.net.flat();
    let mut out = Vec::with_capacity(8 + 8 + header.len() + 8 + 8 * flat.len() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ExpertError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ExpertError::Corrupt("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ExpertError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ExpertError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a model file and attaches the parameters to the matching record
/// of `registry`. Rejects models trained for a different number of users.
pub fn decode_expert(
    bytes: &[u8],
    registry: &[ExpertRecord],
    config: &SystemConfig,
) -> Result<ExpertRecord, ExpertError> {
    if bytes.len() < 8 + 32 || &bytes[..8] != MAGIC {
        return Err(ExpertError::Corrupt("bad magic".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ExpertError::Version(version));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(ExpertError::Corrupt("checksum mismatch".into()));
    }
    let hlen = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| ExpertError::Corrupt(e.to_string()))?;
    let n = r.u64()? as usize;
    let raw = r.take(
        n.checked_mul(8)
            .ok_or_else(|| ExpertError::Corrupt("parameter count".into()))?,
    )?;
    if r.pos != body.len() {
        return Err(ExpertError::Corrupt("trailing bytes".into()));
    }
    let flat: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(ExpertError::NonFinite("stored parameters"));
    }
    let net = Mlp::from_flat(header.architecture, &flat)?;

    if header.meta.num_users != config.num_users {
        return Err(ExpertError::UserMismatch {
            model: header.meta.num_users,
            config: config.num_users,
        });
    }
    let base = super::find(registry, &header.name)?;
    if base.index != header.index {
        return Err(ExpertError::Corrupt(format!(
            "{} stored with index {}",
            header.name, header.index
        )));
    }
    let a = header.architecture;
    let b = base.architecture;
    if (a.input_dim, a.output_dim) != (b.input_dim, b.output_dim) {
        return Err(ExpertError::UserMismatch {
            model: header.meta.num_users,
            config: config.num_users,
        });
    }
    let mut rec = base.clone();
    rec.architecture = a;
    rec.parameters = Some(PolicyParameters {
        net,
        meta: header.meta,
    });
    Ok(rec)
}

/// Writes the model file for a trained record.
pub fn save_expert(record: &ExpertRecord, path: &Path) -> Result<(), ExpertError> {
    let bytes = encode_expert(record)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn load_expert(
    path: &Path,
    registry: &[ExpertRecord],
    config: &SystemConfig,
) -> Result<ExpertRecord, ExpertError> {
    let bytes = fs::read(path).map_err(io(path))?;
    decode_expert(&bytes, registry, config)
}

/// Expert name → model file, relative to the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegistryManifest {
    pub version: u32,
    pub num_users: usize,
    pub models: BTreeMap<String, PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn model_file_name(record: &ExpertRecord) -> String {
    format!("{:02}_{}.nmoe", record.index, record.name)
}

pub fn save_manifest(dir: &Path, manifest: &RegistryManifest) -> Result<(), ExpertError> {
    let path = dir.join(MANIFEST_FILE);
    let mut text =
        serde_json::to_string_pretty(manifest).map_err(|e| ExpertError::Corrupt(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(io(&path))
}

pub fn load_manifest(dir: &Path) -> Result<RegistryManifest, ExpertError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    serde_json::from_str(&text)
        .map_err(|e| ExpertError::Corrupt(format!("{}: {e}", path.display())))
}

/// Loads every model listed in `dir`'s manifest into a copy of `registry`.
/// Experts without a model stay untrained.
pub fn load_registry(
    dir: &Path,
    registry: &[ExpertRecord],
    config: &SystemConfig,
) -> Result<Vec<ExpertRecord>, ExpertError> {
    let manifest = load_manifest(dir)?;
    if manifest.num_users != config.num_users {
        return Err(ExpertError::UserMismatch {
            model: manifest.num_users,
            config: config.num_users,
        });
    }
    let mut out = registry.to_vec();
    for (name, file) in &manifest.models {
        let rec = load_expert(&dir.join(file), registry, config)?;
        if &rec.name != name {
            return Err(ExpertError::Corrupt(format!(
                "manifest entry {name} points at {}",
                rec.name
            )));
        }
        let i = rec.index - 1;
        out[i] = rec;
    }
    Ok(out)
}

/// Saves every trained record and a manifest listing them.
pub fn save_registry(
    dir: &Path,
    registry: &[ExpertRecord],
    config: &SystemConfig,
) -> Result<RegistryManifest, ExpertError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut manifest = RegistryManifest {
        version: FORMAT_VERSION,
        num_users: config.num_users,
        models: BTreeMap::new(),
    };
    if let Ok(existing) = load_manifest(dir) {
        if existing.num_users == config.num_users {
            manifest.models = existing.models;
        }
    }
    for rec in registry.iter().filter(|r| r.is_trained()) {
        let file = PathBuf::from(model_file_name(rec));
        save_expert(rec, &dir.join(&file))?;
        manifest.models.insert(rec.name.clone(), file);
    }
    save_manifest(dir, &manifest)?;
    Ok(manifest)
}
