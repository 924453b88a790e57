//! Versioned binary checkpoint.
//!
//! ```text
//! b"CIRCKPT\0"      magic
//! u32               format version
//! u64               manifest length L
//! L bytes           manifest JSON (configs, step, tensor table)
//! f64 LE values     each tensor of the table in order, row-major
//! 32 bytes          SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OptimizerState, TrainConfig, Trainer};
use crate::data::ByteReader;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CIRCKPT\0";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorKind {
    Param,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub decay: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub optimizer_t: u64,
    pub fingerprint: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<S: Scalar>(tr: &Trainer<S>, path: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut values: Vec<&Tensor<S>> = Vec::new();
    for (kind, pick) in [
        (TensorKind::Param, 0usize),
        (TensorKind::AdamM, 1),
        (TensorKind::AdamV, 2),
    ] {
        for (id, p) in tr.model.params.iter() {
            let v = match pick {
                0 => &p.value,
                1 => &tr.opt.m[id.index()],
                _ => &tr.opt.v[id.index()],
            };
            entries.push(TensorEntry {
                name: p.name.clone(),
                kind: kind.clone(),
                shape: v.shape().to_vec(),
                frozen: p.frozen,
                decay: p.decay,
            });
            values.push(v);
        }
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        model: tr.model.config.clone(),
        train: tr.cfg.clone(),
        step: tr.step,
        optimizer_t: tr.opt.t,
        fingerprint: tr.model.fingerprint(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut buf = Vec::with_capacity(json.len() + 8 * tr.model.params.numel() * 3 + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in values {
        for x in v.data() {
            buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_verified(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 4 + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}",
            path.display()
        )));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Format(format!(
            "{}: checksum mismatch (corrupt checkpoint)",
            path.display()
        )));
    }
    Ok(body.to_vec())
}

/// Reads only the manifest (after verifying the checksum).
pub fn read_manifest(path: &Path) -> Result<CheckpointManifest> {
    let body = read_verified(path)?;
    let mut r = ByteReader::new(&body, path);
    r.take(12)?;
    let len = r.u64()? as usize;
    serde_json::from_slice(r.take(len)?).map_err(|e| Error::Format(format!("{}: manifest: {e}", path.display())))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(Trainer<S>, CheckpointManifest)> {
    let body = read_verified(path)?;
    let mut r = ByteReader::new(&body, path);
    r.take(12)?;
    let len = r.u64()? as usize;
    let manifest: CheckpointManifest = serde_json::from_slice(r.take(len)?)
        .map_err(|e| Error::Format(format!("{}: manifest: {e}", path.display())))?;

    let mut model = Model::<S>::new(manifest.model.clone())?;
    let mut opt = OptimizerState::new(&model.params);
    let n = model.params.len();
    if manifest.tensors.len() != 3 * n {
        return Err(Error::Format(format!(
            "{}: {} tensors for a model with {n} parameters",
            path.display(),
            manifest.tensors.len()
        )));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for (k, e) in manifest.tensors.iter().enumerate() {
        let id = ids[k % n];
        let p = model.params.get(id);
        if p.name != e.name || p.value.shape() != e.shape.as_slice() {
            return Err(Error::Format(format!(
                "{}: entry {} {:?} does not match parameter {} {:?}",
                path.display(),
                e.name,
                e.shape,
                p.name,
                p.value.shape()
            )));
        }
        let numel: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(S::lit(r.f64()?));
        }
        let t = Tensor::new(e.shape.clone(), data)?;
        match e.kind {
            TensorKind::Param => {
                let p = model.params.get_mut(id);
                p.value = t;
                p.frozen = e.frozen;
            }
            TensorKind::AdamM => opt.m[id.index()] = t,
            TensorKind::AdamV => opt.v[id.index()] = t,
        }
    }
    if !r.rest().is_empty() {
        return Err(Error::Format(format!("{}: trailing bytes", path.display())));
    }
    opt.t = manifest.optimizer_t;
    let tr = Trainer {
        model,
        opt,
        cfg: manifest.train.clone(),
        step: manifest.step,
    };
    Ok((tr, manifest))
}
