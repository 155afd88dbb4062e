//! Single-file checkpoint: a tar archive holding `params.json` and one raw
//! little-endian f32 blob per parameter, buffer and optimizer moment.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::clap::{ClapModel, ModelConfig};
use crate::error::{Error, Result};

const META: &str = "params.json";
const FORMAT: &str = "clap-lab-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub step: u64,
    pub params: BTreeMap<String, Vec<usize>>,
    pub buffers: BTreeMap<String, Vec<usize>>,
    /// Free-form trainer state (training config, RNG bookkeeping).
    #[serde(default)]
    pub extra: serde_json::Value,
    #[serde(default)]
    pub has_optimizer: bool,
    #[serde(default)]
    pub optimizer_step: u64,
}

/// Adam first and second moments keyed by parameter path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f32>>,
    pub v: BTreeMap<String, Vec<f32>>,
}

fn f32_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let vals = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok(vals.iter().flat_map(|v| v.to_le_bytes()).collect())
}

fn bytes_f32(b: &[u8]) -> Vec<f32> {
    b.chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn append(builder: &mut tar::Builder<File>, name: &str, data: &[u8], path: &Path) -> Result<()> {
    let mut h = tar::Header::new_gnu();
    h.set_size(data.len() as u64);
    h.set_mode(0o644);
    h.set_mtime(0);
    h.set_cksum();
    builder
        .append_data(&mut h, name, data)
        .map_err(|e| Error::io(path, e))
}

/// Writes `model` (and optionally optimizer moments) to `path`.
pub fn save_checkpoint(
    path: &Path,
    model: &ClapModel,
    step: u64,
    optimizer: Option<&OptimizerState>,
    extra: serde_json::Value,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut b = tar::Builder::new(file);
    let meta = Checkpoint {
        format: FORMAT.into(),
        config: model.config.clone(),
        step,
        params: model
            .store
            .vars()
            .map(|(p, v)| (p.clone(), v.dims().to_vec()))
            .collect(),
        buffers: model
            .store
            .buffers()
            .map(|(p, t)| (p.clone(), t.dims().to_vec()))
            .collect(),
        extra,
        has_optimizer: optimizer.is_some(),
        optimizer_step: optimizer.map_or(0, |o| o.step),
    };
    append(&mut b, META, &serde_json::to_vec_pretty(&meta)?, path)?;
    for (p, v) in model.store.vars() {
        append(
            &mut b,
            &format!("weights/{p}.f32"),
            &f32_bytes(v.as_tensor())?,
            path,
        )?;
    }
    for (p, t) in model.store.buffers() {
        append(&mut b, &format!("buffers/{p}.f32"), &f32_bytes(t)?, path)?;
    }
    if let Some(o) = optimizer {
        for (kind, map) in [("adam_m", &o.m), ("adam_v", &o.v)] {
            for (p, vals) in map {
                let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
                append(&mut b, &format!("{kind}/{p}.f32"), &bytes, path)?;
            }
        }
    }
    let mut f = b.into_inner().map_err(|e| Error::io(path, e))?;
    f.flush().map_err(|e| Error::io(path, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_entries(path: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let corrupt = |reason: String| Error::CorruptArchive {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ar = tar::Archive::new(file);
    let mut out = BTreeMap::new();
    for entry in ar.entries().map_err(|e| corrupt(e.to_string()))? {
        let mut entry = entry.map_err(|e| corrupt(e.to_string()))?;
        let name = entry
            .path()
            .map_err(|e| corrupt(e.to_string()))?
            .to_string_lossy()
            .into_owned();
        let mut buf = Vec::new();
        entry
            .read_to_end(&mut buf)
            .map_err(|e| corrupt(e.to_string()))?;
        out.insert(name, buf);
    }
    if out.is_empty() {
        return Err(corrupt("empty archive".into()));
    }
    Ok(out)
}

/// Reads the metadata only.
pub fn read_checkpoint_meta(path: &Path) -> Result<Checkpoint> {
    let entries = read_entries(path)?;
    parse_meta(path, &entries)
}

fn parse_meta(path: &Path, entries: &BTreeMap<String, Vec<u8>>) -> Result<Checkpoint> {
    let corrupt = |reason: String| Error::CorruptArchive {
        path: path.to_path_buf(),
        reason,
    };
    let raw = entries
        .get(META)
        .ok_or_else(|| corrupt(format!("missing {META}")))?;
    let meta: Checkpoint = serde_json::from_slice(raw).map_err(|e| corrupt(e.to_string()))?;
    if meta.format != FORMAT {
        return Err(corrupt(format!("unknown format {}", meta.format)));
    }
    Ok(meta)
}

/// Rebuilds a model from `path` with the stored config, then overwrites every
/// parameter and buffer with the archived values.
pub fn load_checkpoint(
    path: &Path,
    dtype: DType,
) -> Result<(ClapModel, Checkpoint, Option<OptimizerState>)> {
    let entries = read_entries(path)?;
    let meta = parse_meta(path, &entries)?;
    let mut model = ClapModel::new(meta.config.clone(), dtype)?;
    let opt = restore_into(path, &entries, &meta, &mut model)?;
    Ok((model, meta, opt))
}

/// Loads archived values into an existing model whose dims must match.
pub fn load_into(
    path: &Path,
    model: &mut ClapModel,
) -> Result<(Checkpoint, Option<OptimizerState>)> {
    let entries = read_entries(path)?;
    let meta = parse_meta(path, &entries)?;
    if meta.config.dims != model.config.dims {
        return Err(Error::DimMismatch(format!(
            "checkpoint dims {:?} differ from model dims {:?}",
            meta.config.dims, model.config.dims
        )));
    }
    let opt = restore_into(path, &entries, &meta, model)?;
    Ok((meta, opt))
}

fn restore_into(
    path: &Path,
    entries: &BTreeMap<String, Vec<u8>>,
    meta: &Checkpoint,
    model: &mut ClapModel,
) -> Result<Option<OptimizerState>> {
    let corrupt = |reason: String| Error::CorruptArchive {
        path: path.to_path_buf(),
        reason,
    };
    let blob = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let raw = entries
            .get(name)
            .ok_or_else(|| corrupt(format!("missing {name}")))?;
        let vals = bytes_f32(raw);
        if raw.len() % 4 != 0 || vals.len() != shape.iter().product::<usize>() {
            return Err(corrupt(format!(
                "{name} has {} bytes for shape {shape:?}",
                raw.len()
            )));
        }
        Ok(vals)
    };
    let model_paths: Vec<String> = model.store.vars().map(|(p, _)| p.clone()).collect();
    for p in &model_paths {
        let shape = meta
            .params
            .get(p)
            .ok_or_else(|| Error::DimMismatch(format!("checkpoint lacks parameter {p}")))?;
        let vals = blob(&format!("weights/{p}.f32"), shape)?;
        let t = Tensor::from_vec(vals, shape.as_slice(), model.device())?;
        model.store.assign(p, &t)?;
    }
    if meta.params.len() != model_paths.len() {
        return Err(Error::DimMismatch(
            "checkpoint has parameters the model lacks".into(),
        ));
    }
    for (p, shape) in &meta.buffers {
        let vals = blob(&format!("buffers/{p}.f32"), shape)?;
        model
            .store
            .set_buffer(p, Tensor::from_vec(vals, shape.as_slice(), model.device())?)?;
    }
    model.sync_buffers();
    if !meta.has_optimizer {
        return Ok(None);
    }
    let mut st = OptimizerState {
        step: meta.optimizer_step,
        ..Default::default()
    };
    for (p, shape) in &meta.params {
        for (kind, map) in [("adam_m", &mut st.m), ("adam_v", &mut st.v)] {
            let name = format!("{kind}/{p}.f32");
            if entries.contains_key(&name) {
                map.insert(p.clone(), blob(&name, shape)?);
            }
        }
    }
    Ok(Some(st))
}
