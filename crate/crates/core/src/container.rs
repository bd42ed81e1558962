//! On-disk model containers.
//!
//! Layout: an 8-byte magic, a little-endian u64 header length, a JSON
//! header, then the tensor blobs as little-endian f32 values in header
//! index order. One file holds a single model or a whole ensemble; the
//! feature schema travels inside so a saved model can score raw rows
//! without any side files.
//!
//! Parameters are stored at f32 precision. Models produced by `init` or
//! `train` are already snapped to f32-representable values, so for them a
//! save/load round trip reproduces predictions bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::pipeline::FeatureSchema;
use crate::model::{Ensemble, ModelConfig, WmlffModel};
use crate::numerics::matrix::Matrix;
use crate::numerics::params::ParamSet;
use crate::training::TrainConfig;

const MAGIC: &[u8; 8] = b"WMLFF\0v1";

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Stable hex digest of a model configuration, recorded in containers and
/// reports so runs can be matched to the exact architecture they used.
pub fn config_hash(config: &ModelConfig) -> String {
    let json = serde_json::to_string(config).expect("plain struct serializes");
    format!("{:016x}", fnv1a64(json.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// Seed the run was launched with, when there was a run.
    pub seed: Option<u64>,
    pub train: Option<TrainConfig>,
    /// [`config_hash`] of the model config in this container.
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
    /// Byte offset into the blob region.
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: u32,
    model: ModelConfig,
    schema: FeatureSchema,
    n_members: usize,
    tensors: Vec<TensorEntry>,
    provenance: Provenance,
}

/// Contents of a container: one model or an ensemble of them.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Single(WmlffModel),
    Ensemble(Ensemble),
}

impl LoadedModel {
    pub fn config(&self) -> &ModelConfig {
        match self {
            LoadedModel::Single(m) => m.config(),
            LoadedModel::Ensemble(e) => e.config(),
        }
    }

    pub fn predict(&self, x_c: &[u32], x_n: &[f64]) -> Result<Vec<f64>> {
        match self {
            LoadedModel::Single(m) => m.predict(x_c, x_n),
            LoadedModel::Ensemble(e) => e.predict(x_c, x_n),
        }
    }

    pub fn predict_dataset(
        &self,
        data: &crate::features::dataset::EncodedDataset,
    ) -> Result<Vec<Vec<f64>>> {
        match self {
            LoadedModel::Single(m) => m.predict_dataset(data),
            LoadedModel::Ensemble(e) => e.predict_dataset(data),
        }
    }

    pub fn n_members(&self) -> usize {
        match self {
            LoadedModel::Single(_) => 1,
            LoadedModel::Ensemble(e) => e.members().len(),
        }
    }
}

fn write_container(
    path: &Path,
    members: &[&WmlffModel],
    schema: &FeatureSchema,
    provenance: &Provenance,
) -> Result<()> {
    let first = members
        .first()
        .ok_or_else(|| Error::usage("cannot save an empty ensemble"))?;
    for m in members {
        if m.config() != first.config() {
            return Err(Error::format(
                "ensemble members disagree on model configuration",
            ));
        }
    }

    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for (j, m) in members.iter().enumerate() {
        for (name, t) in m.params().iter() {
            tensors.push(TensorEntry {
                name: format!("member{j}/{name}"),
                rows: t.rows(),
                cols: t.cols(),
                offset: blob.len() as u64,
            });
            for &v in t.as_slice() {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }

    let header = Header {
        format: 1,
        model: first.config().clone(),
        schema: schema.clone(),
        n_members: members.len(),
        tensors,
        provenance: provenance.clone(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::format(format!("header: {e}")))?;

    let mut out = Vec::with_capacity(16 + header_json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&blob);
    fs::write(path, out)?;
    Ok(())
}

pub fn save_model(
    path: &Path,
    model: &WmlffModel,
    schema: &FeatureSchema,
    provenance: &Provenance,
) -> Result<()> {
    write_container(path, &[model], schema, provenance)
}

pub fn save_ensemble(
    path: &Path,
    ensemble: &Ensemble,
    schema: &FeatureSchema,
    provenance: &Provenance,
) -> Result<()> {
    let members: Vec<&WmlffModel> = ensemble.members().iter().collect();
    write_container(path, &members, schema, provenance)
}

pub fn load(path: &Path) -> Result<(LoadedModel, FeatureSchema, Provenance)> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::format(format!(
            "{} is not a model container",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let blob_start = 16 + header_len;
    if bytes.len() < blob_start {
        return Err(Error::format("container header is truncated"));
    }
    let header: Header = serde_json::from_slice(&bytes[16..blob_start])
        .map_err(|e| Error::format(format!("container header: {e}")))?;
    if header.format != 1 {
        return Err(Error::format(format!(
            "unsupported container format {}",
            header.format
        )));
    }
    if header.n_members == 0 {
        return Err(Error::format("container holds no models"));
    }
    let blob = &bytes[blob_start..];

    let per_member = header.tensors.len() / header.n_members;
    if per_member * header.n_members != header.tensors.len() {
        return Err(Error::format("tensor count does not divide into members"));
    }
    let mut members = Vec::with_capacity(header.n_members);
    for j in 0..header.n_members {
        let mut params = ParamSet::new();
        let prefix = format!("member{j}/");
        for entry in &header.tensors[j * per_member..(j + 1) * per_member] {
            let name = entry.name.strip_prefix(&prefix).ok_or_else(|| {
                Error::format(format!(
                    "tensor {} does not belong to member {j}",
                    entry.name
                ))
            })?;
            let n = entry.rows * entry.cols;
            let start = entry.offset as usize;
            let end = start + 4 * n;
            if end > blob.len() {
                return Err(Error::format(format!(
                    "tensor {} extends past the end of the file",
                    entry.name
                )));
            }
            let data: Vec<f64> = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            params.add(name, Matrix::from_vec(entry.rows, entry.cols, data)?);
        }
        members.push(WmlffModel::from_params(header.model.clone(), params)?);
    }

    let loaded = if members.len() == 1 {
        LoadedModel::Single(members.into_iter().next().unwrap())
    } else {
        LoadedModel::Ensemble(Ensemble::new(members)?)
    };
    Ok((loaded, header.schema, header.provenance))
}
