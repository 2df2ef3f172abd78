//! Model checkpoint container.
//!
//! Layout, integers little-endian:
//!
//! | field         | size | content                                        |
//! |---------------|------|------------------------------------------------|
//! | magic         | 8    | `IFLOWCKP`                                     |
//! | version       | 4    | currently 1                                    |
//! | manifest size | 4    | byte length `m` of the manifest                |
//! | manifest      | m    | UTF-8 JSON: model configuration and layer list |
//! | tensors       | ...  | every listed tensor in the raw tensor format   |
//!
//! The manifest records, per step, its kind and the names and shapes of its
//! tensors in file order. Frozen state (signs, actnorm initialization) is
//! stored alongside the trainable parameters, so loading restores the model
//! exactly and re-saving reproduces the same bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Conv2d, FlowModel, InitMode, ModelConfig, Step};
use crate::io::{decode_tensor, encode_tensor};
use crate::rng::seeded;
use crate::{Error, Real, Result, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IFLOWCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    levels: usize,
    depth: usize,
    height: usize,
    width: usize,
    channels: usize,
    config: ModelConfig,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initialized: Option<bool>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn vec_tensor(v: &[Real]) -> Tensor {
    Tensor::new(&[v.len()], v.to_vec()).unwrap()
}

fn conv_tensors(prefix: &str, c: &Conv2d, out: &mut Vec<(String, Tensor)>) {
    out.push((
        format!("{prefix}.weight"),
        Tensor::new(&[c.k, c.k, c.cin, c.cout], c.weight.clone()).unwrap(),
    ));
    out.push((format!("{prefix}.bias"), vec_tensor(&c.bias)));
}

fn step_tensors(step: &Step) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    match step {
        Step::Squeeze => {}
        Step::ActNorm(a) => {
            out.push(("log_scale".into(), vec_tensor(&a.log_scale)));
            out.push(("sign".into(), vec_tensor(&a.sign)));
            out.push(("bias".into(), vec_tensor(&a.bias)));
        }
        Step::InvConv(l) => {
            out.push(("free".into(), vec_tensor(&l.params.free)));
            out.push(("signs".into(), vec_tensor(&l.params.signs)));
            out.push(("log_diag".into(), vec_tensor(&l.params.log_diag)));
        }
        Step::Conv1x1(l) => out.push((
            "weight".into(),
            Tensor::new(&[l.channels, l.channels], l.weight.clone()).unwrap(),
        )),
        Step::Coupling(l) => {
            for (i, net) in l.nets.iter().enumerate() {
                for (j, conv) in net.layers.iter().enumerate() {
                    conv_tensors(&format!("net{i}.conv{j}"), conv, &mut out);
                }
            }
        }
        Step::Split(s) => conv_tensors("prior", &s.prior, &mut out),
    }
    out
}

/// Visits every tensor slot of a step in file order.
fn step_slots(step: &mut Step) -> Vec<&mut Vec<Real>> {
    match step {
        Step::Squeeze => Vec::new(),
        Step::ActNorm(a) => vec![&mut a.log_scale, &mut a.sign, &mut a.bias],
        Step::InvConv(l) => vec![&mut l.params.free, &mut l.params.signs, &mut l.params.log_diag],
        Step::Conv1x1(l) => vec![&mut l.weight],
        Step::Coupling(l) => l
            .nets
            .iter_mut()
            .flat_map(|n| n.layers.iter_mut().flat_map(|c| [&mut c.weight, &mut c.bias]))
            .collect(),
        Step::Split(s) => vec![&mut s.prior.weight, &mut s.prior.bias],
    }
}

pub fn write_checkpoint(model: &FlowModel) -> Result<Vec<u8>> {
    let cfg = model.config().clone();
    let mut layers = Vec::with_capacity(model.steps().len());
    let mut tensors = Vec::new();
    for step in model.steps() {
        let ts = step_tensors(step);
        layers.push(LayerEntry {
            kind: step.name().into(),
            initialized: match step {
                Step::ActNorm(a) => Some(a.is_initialized()),
                _ => None,
            },
            tensors: ts
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        });
        tensors.extend(ts.into_iter().map(|(_, t)| t));
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        levels: cfg.levels,
        depth: cfg.depth,
        height: cfg.height,
        width: cfg.width,
        channels: cfg.channels,
        config: cfg,
        layers,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::Invalid(format!("manifest: {e}")))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &tensors {
        encode_tensor(t, &mut out);
    }
    Ok(out)
}

/// Parses a checkpoint; `source` names it in error messages.
pub fn read_checkpoint(bytes: &[u8], source: &Path) -> Result<FlowModel> {
    let bad = |reason: String| Error::format(source, reason);
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let mlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let json = bytes.get(16..16 + mlen).ok_or_else(|| bad("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
    let mut model = FlowModel::new(manifest.config.clone(), InitMode::Identity, &mut seeded(0))
        .map_err(|e| bad(format!("configuration: {e}")))?;
    if manifest.layers.len() != model.steps().len() {
        return Err(bad(format!(
            "manifest lists {} layers, configuration implies {}",
            manifest.layers.len(),
            model.steps().len()
        )));
    }
    let mut pos = 16 + mlen;
    for (i, (entry, step)) in manifest.layers.iter().zip(model.steps_mut()).enumerate() {
        if entry.kind != step.name() {
            return Err(bad(format!("layer {i} is {}, expected {}", entry.kind, step.name())));
        }
        let expected: Vec<(String, Vec<usize>)> = step_tensors(step)
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != entry.tensors.len() {
            return Err(bad(format!("layer {i} lists the wrong number of tensors")));
        }
        let mut loaded = Vec::with_capacity(expected.len());
        for ((name, shape), te) in expected.iter().zip(&entry.tensors) {
            if &te.name != name || &te.shape != shape {
                return Err(bad(format!("layer {i} tensor {} has an unexpected name or shape", te.name)));
            }
            let t = decode_tensor(bytes, &mut pos).map_err(|e| bad(format!("layer {i} tensor {name}: {e}")))?;
            if t.shape() != shape.as_slice() {
                return Err(bad(format!("layer {i} tensor {name} has shape {:?}", t.shape())));
            }
            loaded.push(t.into_data());
        }
        for (slot, data) in step_slots(step).into_iter().zip(loaded) {
            *slot = data;
        }
        if let Step::ActNorm(a) = step {
            a.initialized = entry.initialized.unwrap_or(true);
            if a.scale().iter().any(|&s| s == 0.0) {
                return Err(bad(format!("layer {i} has a zero actnorm scale")));
            }
        }
    }
    if pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &FlowModel, path: &Path) -> Result<()> {
    let bytes = write_checkpoint(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<FlowModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}
