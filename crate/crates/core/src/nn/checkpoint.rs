//! Checkpoints: `NAME.json` holds layer specs, tensor names and dims, the
//! seed and provenance; `NAME.params/` holds one TSIM file per tensor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::layer::{Layer, LayerSpec};
use super::model::{infer_stack, Branch, Model};
use crate::imageio::{read_tensor, write_tensor};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a checkpoint came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Identifier of the training data, e.g. `wisdm` or `synthetic-gaf-texture`.
    pub source_dataset: String,
    pub seed: u64,
    /// `git describe` of the build that wrote the checkpoint.
    pub build: String,
    /// Checkpoint this one was transferred from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

impl Provenance {
    pub fn new(source_dataset: impl Into<String>, seed: u64) -> Self {
        Self {
            source_dataset: source_dataset.into(),
            seed,
            build: crate::build_version().to_string(),
            parent: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BranchEntry {
    input_dims: Vec<usize>,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dims: Vec<usize>,
    file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    seed: u64,
    step: u64,
    branches: Vec<BranchEntry>,
    junction: Option<String>,
    head: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
    provenance: Provenance,
}

/// Sibling directory holding the tensor files of checkpoint `path`.
pub fn params_dir(path: &Path) -> PathBuf {
    path.with_extension("params")
}

pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>, provenance: &Provenance) -> Result<()> {
    let path = path.as_ref();
    let dir = params_dir(path);
    fs::create_dir_all(&dir).map_err(|e| Error::io_at(&dir, e))?;
    let mut tensors = Vec::new();
    for (name, t) in model.params().into_iter().chain(model.buffers()) {
        let file = format!("{name}.tsim");
        write_tensor(t, dir.join(&file))?;
        tensors.push(TensorEntry {
            name,
            dims: t.dims().to_vec(),
            file,
        });
    }
    let specs = |ls: &[Layer<f32>]| ls.iter().map(|l| l.spec.clone()).collect::<Vec<_>>();
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        seed: model.seed(),
        step: model.step(),
        branches: model
            .branches()
            .iter()
            .map(|b| BranchEntry {
                input_dims: b.input_dims.clone(),
                layers: specs(&b.layers),
            })
            .collect(),
        junction: model.junction().map(str::to_string),
        head: specs(model.head()),
        tensors,
        provenance: provenance.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io_at(path, e))
}

/// Loads and validates every spec and tensor shape.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, Provenance)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} (expected {CHECKPOINT_VERSION})",
            m.format_version
        )));
    }
    let dir = params_dir(path);
    let mut entries = m.tensors.iter().map(|e| (e.name.as_str(), e)).collect::<std::collections::BTreeMap<_, _>>();

    let mut load_layers = |specs: &[LayerSpec], input: Option<&[usize]>| -> Result<Vec<Layer<f32>>> {
        if let Some(input) = input {
            let (inferred, _) = infer_stack(input, specs)?;
            if inferred != specs {
                return Err(Error::Format("layer sizes do not match the recorded input shape".into()));
            }
        }
        specs
            .iter()
            .map(|s| {
                let mut take = |suffix: &str, dims: &[usize]| -> Result<_> {
                    let name = format!("{}.{suffix}", s.name);
                    let e = entries
                        .remove(name.as_str())
                        .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor `{name}`")))?;
                    let t = read_tensor(dir.join(&e.file))?;
                    if t.dims() != dims || e.dims != dims {
                        return Err(Error::Shape(format!(
                            "tensor `{name}`: spec needs {dims:?}, file has {:?}",
                            t.dims()
                        )));
                    }
                    Ok(t)
                };
                let params = s
                    .kind
                    .param_shapes()
                    .iter()
                    .map(|(n, d)| take(n, d))
                    .collect::<Result<Vec<_>>>()?;
                let buffers = s
                    .kind
                    .buffer_shapes()
                    .iter()
                    .map(|(n, d)| take(n, d))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Layer {
                    spec: s.clone(),
                    params,
                    buffers,
                })
            })
            .collect()
    };

    let mut branches = Vec::new();
    for b in &m.branches {
        branches.push(Branch {
            input_dims: b.input_dims.clone(),
            layers: load_layers(&b.layers, Some(&b.input_dims))?,
        });
    }
    let head = load_layers(&m.head, None)?;
    if let Some((name, _)) = entries.into_iter().next() {
        return Err(Error::Format(format!("checkpoint tensor `{name}` belongs to no layer")));
    }
    let mut model = Model::from_parts(branches, m.junction, head, m.seed)?;
    for _ in 0..m.step {
        model.advance_step();
    }
    Ok((model, m.provenance))
}
