//! Weight container: an 8-byte magic, a little-endian u64 header length, a
//! JSON header, then the raw little-endian f32 blobs in header order.
//!
//! Two kinds share the format: full training checkpoints (config + epoch +
//! seed + every layer) and reference weight files carrying only the backbone
//! and head layers under the publicly distributed SuperPoint naming.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layer, ModelConfig, SuperPointNet, SuperPointWeights};
use crate::dataset::write_atomic;
use crate::model::tensor::ConvParams;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"PPCKPT01";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    /// (c_out, c_in, k, k) for weights, (c_out,) for biases; row-major.
    shape: Vec<usize>,
    /// Element count; equals the shape product.
    len: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_config: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epoch: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    master_seed: Option<u64>,
    blobs: Vec<BlobEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub master_seed: u64,
}

fn weight_entry(name: &str, p: &ConvParams) -> BlobEntry {
    BlobEntry {
        name: format!("{name}.weight"),
        shape: vec![p.c_out, p.c_in, p.kernel, p.kernel],
        len: p.w.len(),
    }
}

fn bias_entry(name: &str, p: &ConvParams) -> BlobEntry {
    BlobEntry {
        name: format!("{name}.bias"),
        shape: vec![p.c_out],
        len: p.b.len(),
    }
}

fn push_f32s(buf: &mut Vec<u8>, values: impl Iterator<Item = f32>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_container(path: &Path, header: &Header, payload: &[u8]) -> Result<()> {
    let header_json = serde_json::to_vec(header)?;
    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    bytes.extend_from_slice(payload);
    write_atomic(path, &bytes)
}

/// Writes a full training checkpoint.
pub fn save_checkpoint(path: &Path, net: &SuperPointNet, epoch: u32, master_seed: u64) -> Result<()> {
    let params = net.weights().params();
    let mut blobs = Vec::with_capacity(layer::COUNT * 2);
    let mut payload = Vec::new();
    for (i, p) in params.iter().enumerate() {
        blobs.push(weight_entry(layer::NAMES[i], p));
        push_f32s(&mut payload, p.w.iter().copied());
        blobs.push(bias_entry(layer::NAMES[i], p));
        push_f32s(&mut payload, p.b.iter().copied());
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: "checkpoint".into(),
        model_config: Some(net.config().clone()),
        epoch: Some(epoch),
        master_seed: Some(master_seed),
        blobs,
    };
    write_container(path, &header, &payload)
}

/// Writes only the backbone and head layers (no adaptation layers) under the
/// public SuperPoint naming, usable as a pretraining source.
pub fn export_reference_weights(path: &Path, net: &SuperPointNet) -> Result<()> {
    let params = net.weights().params();
    let mut blobs = Vec::new();
    let mut payload = Vec::new();
    for (i, p) in params.iter().enumerate() {
        if layer::ADAPTATION.contains(&i) {
            continue;
        }
        blobs.push(weight_entry(layer::NAMES[i], p));
        push_f32s(&mut payload, p.w.iter().copied());
        blobs.push(bias_entry(layer::NAMES[i], p));
        push_f32s(&mut payload, p.b.iter().copied());
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: "reference_weights".into(),
        model_config: None,
        epoch: None,
        master_seed: None,
        blobs,
    };
    write_container(path, &header, &payload)
}

struct Container {
    header: Header,
    payload: Vec<u8>,
}

impl Container {
    /// Offset table aligned with `header.blobs`.
    fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.header.blobs.len());
        let mut at = 0;
        for blob in &self.header.blobs {
            offsets.push(at);
            at += blob.len * 4;
        }
        offsets
    }

    fn read_blob(&self, index: usize) -> Result<Vec<f32>> {
        let blob = &self.header.blobs[index];
        let start = self.offsets()[index];
        let end = start + blob.len * 4;
        if end > self.payload.len() {
            return Err(Error::WeightMismatch(format!(
                "blob {} is truncated: needs bytes {}..{} of {}",
                blob.name,
                start,
                end,
                self.payload.len()
            )));
        }
        if blob.len != blob.shape.iter().product::<usize>() {
            return Err(Error::WeightMismatch(format!(
                "blob {}: len {} does not match shape {:?}",
                blob.name, blob.len, blob.shape
            )));
        }
        let mut out = Vec::with_capacity(blob.len);
        for chunk in self.payload[start..end].chunks_exact(4) {
            out.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        Ok(out)
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.header.blobs.iter().position(|b| b.name == name)
    }
}

fn read_container(path: &Path) -> Result<Container> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::UnsupportedFormat(format!(
            "{} is not a weight container",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if 16 + header_len > bytes.len() {
        return Err(Error::UnsupportedFormat(format!(
            "{}: header length {} exceeds file size",
            path.display(),
            header_len
        )));
    }
    let value: serde_json::Value = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::UnsupportedFormat(format!("{}: bad header: {e}", path.display())))?;
    let version = value.get("format_version").and_then(|v| v.as_u64());
    if version != Some(FORMAT_VERSION as u64) {
        return Err(Error::UnsupportedFormat(format!(
            "{}: format version {:?} is not supported (expected {})",
            path.display(),
            version,
            FORMAT_VERSION
        )));
    }
    let header: Header = serde_json::from_value(value)
        .map_err(|e| Error::UnsupportedFormat(format!("{}: bad header: {e}", path.display())))?;
    let payload = bytes[16 + header_len..].to_vec();
    Ok(Container { header, payload })
}

/// Loads one layer's weight and bias blobs into `params`.
fn fill_layer(
    container: &Container,
    name: &str,
    params: &mut ConvParams,
    strict: bool,
) -> Result<bool> {
    let (w_name, b_name) = (format!("{name}.weight"), format!("{name}.bias"));
    let (wi, bi) = match (container.find(&w_name), container.find(&b_name)) {
        (Some(w), Some(b)) => (w, b),
        _ if strict => {
            return Err(Error::WeightMismatch(format!(
                "missing blobs for layer {name}"
            )))
        }
        _ => return Ok(false),
    };
    let w = container.read_blob(wi)?;
    let b = container.read_blob(bi)?;
    params.check_shapes(w.len(), b.len(), name)?;
    let expect_shape = [params.c_out, params.c_in, params.kernel, params.kernel];
    if container.header.blobs[wi].shape != expect_shape {
        return Err(Error::WeightMismatch(format!(
            "layer {name}: weight shape {:?}, expected {:?}",
            container.header.blobs[wi].shape, expect_shape
        )));
    }
    for (dst, src) in params.w.iter_mut().zip(&w) {
        *dst = *src;
    }
    for (dst, src) in params.b.iter_mut().zip(&b) {
        *dst = *src;
    }
    Ok(true)
}

/// Restores a full checkpoint: config, all weights, and run metadata.
pub fn load_checkpoint(path: &Path) -> Result<(SuperPointNet, CheckpointMeta)> {
    let container = read_container(path)?;
    if container.header.kind != "checkpoint" {
        return Err(Error::UnsupportedFormat(format!(
            "{}: kind {:?} is not a checkpoint",
            path.display(),
            container.header.kind
        )));
    }
    let cfg = container.header.model_config.clone().ok_or_else(|| {
        Error::UnsupportedFormat(format!("{}: checkpoint lacks model_config", path.display()))
    })?;
    cfg.validate()?;
    let mut weights = SuperPointWeights::seeded(&cfg, 0);
    {
        let params = weights.params_mut();
        for (i, name) in layer::NAMES.iter().enumerate() {
            fill_layer(&container, name, &mut params[i], true)?;
        }
    }
    let meta = CheckpointMeta {
        epoch: container.header.epoch.unwrap_or(0),
        master_seed: container.header.master_seed.unwrap_or(0),
    };
    Ok((SuperPointNet::from_parts(cfg, weights)?, meta))
}

/// Copies pretrained backbone and head weights into `net` by public name and
/// freshly re-initializes the two adaptation layers from `reinit_seed`.
///
/// In strict mode every backbone layer must be present; otherwise absent
/// layers keep their current values. Extra blob names are ignored.
pub fn load_pretrained(
    net: &mut SuperPointNet,
    path: &Path,
    strict: bool,
    reinit_seed: u64,
) -> Result<()> {
    let container = read_container(path)?;
    let cfg = net.config().clone();
    let fresh = SuperPointWeights::seeded(&cfg, reinit_seed);
    let params = net.weights_mut().params_mut();
    for (i, name) in layer::NAMES.iter().enumerate() {
        if layer::ADAPTATION.contains(&i) {
            continue;
        }
        fill_layer(&container, name, &mut params[i], strict)?;
    }
    for i in layer::ADAPTATION {
        params[i] = fresh.params()[i].clone();
    }
    Ok(())
}
