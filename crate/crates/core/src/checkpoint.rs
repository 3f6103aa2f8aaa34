//! On-disk parameter snapshots.
//!
//! A checkpoint is a directory holding `manifest.json` (format version, network
//! configuration, parameter table) and `tensors.bin` (little-endian `f32`
//! values concatenated in table order).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tbnet_tensor::{Float, ParamStore, Tensor};

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, TbNet};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSORS_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into `tensors.bin`, in elements.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: NetworkConfig,
    #[serde(default)]
    pub step: u64,
    pub params: Vec<ParamRecord>,
}

pub fn save<T: Float>(dir: &Path, config: &NetworkConfig, store: &ParamStore<T>, step: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut params = Vec::with_capacity(store.len());
    let mut out = BufWriter::new(fs::File::create(dir.join(TENSORS_FILE))?);
    let mut offset = 0;
    for (_, entry) in store.iter() {
        let t = entry.value();
        for v in t.data() {
            out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        params.push(ParamRecord { name: entry.name().to_owned(), shape: t.shape().to_vec(), offset, trainable: entry.trainable() });
        offset += t.len();
    }
    out.flush()?;
    let manifest = Manifest { format_version: FORMAT_VERSION, config: config.clone(), step, params };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {FORMAT_VERSION})",
            m.format_version
        )));
    }
    Ok(m)
}

/// Copies checkpoint values into `store`. Every parameter of the store must be
/// present with the same shape, and the saved config must equal `config`.
pub fn load_into<T: Float>(dir: &Path, config: &NetworkConfig, store: &mut ParamStore<T>) -> Result<Manifest> {
    let manifest = read_manifest(dir)?;
    if manifest.config != *config {
        return Err(Error::Checkpoint(format!(
            "checkpoint was written for a different network configuration\n  saved:    {}\n  expected: {}",
            serde_json::to_string(&manifest.config)?,
            serde_json::to_string(config)?
        )));
    }
    let bytes = fs::read(dir.join(TENSORS_FILE))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint("tensor file is truncated".into()));
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if manifest.params.len() != store.len() {
        return Err(Error::Checkpoint(format!("{} saved parameters, model has {}", manifest.params.len(), store.len())));
    }
    for rec in &manifest.params {
        let id = store.id(&rec.name).map_err(|_| Error::Checkpoint(format!("unknown parameter {}", rec.name)))?;
        let len: usize = rec.shape.iter().product();
        let slice = values
            .get(rec.offset..rec.offset + len)
            .ok_or_else(|| Error::Checkpoint(format!("{} lies outside the tensor file", rec.name)))?;
        let t = Tensor::new(&rec.shape, slice.iter().map(|&v| T::of(v as f64)).collect())?;
        store.set(id, t).map_err(|e| Error::Checkpoint(format!("{}: {e}", rec.name)))?;
    }
    Ok(manifest)
}

/// Rebuilds the network recorded in the checkpoint and loads its parameters.
pub fn load<T: Float>(dir: &Path) -> Result<(TbNet, ParamStore<T>, Manifest)> {
    let manifest = read_manifest(dir)?;
    let mut store = ParamStore::new();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let net = TbNet::new(manifest.config.clone(), &mut store, &mut rng)?;
    let manifest = load_into(dir, &manifest.config, &mut store)?;
    Ok((net, store, manifest))
}
