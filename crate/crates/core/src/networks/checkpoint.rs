//! One safetensors file per network: parameters, optional Adam moments, and a JSON
//! manifest in the header metadata.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::{Discriminator, DiscriminatorArch, DiscriminatorRole, Generator, GeneratorArch};
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetworkSpec {
    Generator { arch: GeneratorArch },
    Discriminator {
        arch: DiscriminatorArch,
        role: DiscriminatorRole,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: u32,
    /// Bundle name, e.g. `G_P` or `D_F`.
    pub name: String,
    pub network: NetworkSpec,
    pub seed: u64,
    pub epoch: usize,
    pub optimizer: Option<OptimizerState>,
}

const MANIFEST_KEY: &str = "manifest";

fn f32_bytes(t: &Tensor<f32>) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write(
    path: &Path,
    store: &ParamStore<f32>,
    adam: Option<&Adam<f32>>,
    manifest: &CheckpointManifest,
) -> Result<()> {
    let mut entries: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    for id in store.ids() {
        let t = store.get(id);
        entries.push((format!("param/{}", store.name(id)), t.shape().to_vec(), f32_bytes(t)));
    }
    if let Some(adam) = adam {
        let (m, v) = adam.moments();
        for id in store.ids() {
            let name = store.name(id);
            let i = id.index();
            entries.push((format!("adam_m/{name}"), m[i].shape().to_vec(), f32_bytes(&m[i])));
            entries.push((format!("adam_v/{name}"), v[i].shape().to_vec(), f32_bytes(&v[i])));
        }
    }
    let views = entries
        .iter()
        .map(|(n, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (n.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut meta = HashMap::new();
    meta.insert(MANIFEST_KEY.to_string(), serde_json::to_string(manifest)?);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    safetensors::serialize_to_file(views, Some(meta), path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

struct Loaded {
    manifest: CheckpointManifest,
    tensors: HashMap<String, Tensor<f32>>,
}

fn read(path: &Path) -> Result<Loaded> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let bad = |e: safetensors::SafeTensorError| Error::Checkpoint(format!("{}: {e}", path.display()));
    let (_, meta) = SafeTensors::read_metadata(&bytes).map_err(bad)?;
    let manifest_json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(MANIFEST_KEY))
        .ok_or_else(|| Error::Checkpoint(format!("{}: no manifest", path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(manifest_json)?;
    if manifest.format != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: format {} unsupported",
            path.display(),
            manifest.format
        )));
    }
    let st = SafeTensors::deserialize(&bytes).map_err(bad)?;
    let mut tensors = HashMap::new();
    for (name, view) in st.iter() {
        if view.dtype() != Dtype::F32 {
            return Err(Error::Checkpoint(format!("{name}: expected f32")));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.insert(name.to_string(), Tensor::from_vec(view.shape(), data));
    }
    Ok(Loaded { manifest, tensors })
}

fn fill(store: &mut ParamStore<f32>, loaded: &mut Loaded) -> Result<Option<Adam<f32>>> {
    let ids: Vec<_> = store.ids().collect();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for id in ids {
        let name = store.name(id).to_string();
        let t = loaded
            .tensors
            .remove(&format!("param/{name}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if t.shape() != store.get(id).shape() {
            return Err(Error::Checkpoint(format!(
                "{name}: stored shape {:?}, expected {:?}",
                t.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = t;
        if loaded.manifest.optimizer.is_some() {
            let take = |key: String, tensors: &mut HashMap<String, Tensor<f32>>| {
                tensors
                    .remove(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor {key}")))
            };
            m.push(take(format!("adam_m/{name}"), &mut loaded.tensors)?);
            v.push(take(format!("adam_v/{name}"), &mut loaded.tensors)?);
        }
    }
    if let Some(extra) = loaded.tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(loaded
        .manifest
        .optimizer
        .as_ref()
        .map(|o| Adam::restore(o.beta1, o.beta2, o.step, m, v)))
}

fn optimizer_state(adam: Option<&Adam<f32>>) -> Option<OptimizerState> {
    adam.map(|a| OptimizerState {
        beta1: a.beta1,
        beta2: a.beta2,
        step: a.steps_taken(),
    })
}

pub fn save_generator(
    path: &Path,
    name: &str,
    gen: &Generator<f32>,
    adam: Option<&Adam<f32>>,
    seed: u64,
    epoch: usize,
) -> Result<()> {
    let manifest = CheckpointManifest {
        format: FORMAT_VERSION,
        name: name.to_string(),
        network: NetworkSpec::Generator {
            arch: gen.arch.clone(),
        },
        seed,
        epoch,
        optimizer: optimizer_state(adam),
    };
    write(path, &gen.params, adam, &manifest)
}

pub fn save_discriminator(
    path: &Path,
    name: &str,
    disc: &Discriminator<f32>,
    adam: Option<&Adam<f32>>,
    seed: u64,
    epoch: usize,
) -> Result<()> {
    let manifest = CheckpointManifest {
        format: FORMAT_VERSION,
        name: name.to_string(),
        network: NetworkSpec::Discriminator {
            arch: disc.arch.clone(),
            role: disc.role,
        },
        seed,
        epoch,
        optimizer: optimizer_state(adam),
    };
    write(path, &disc.params, adam, &manifest)
}

pub fn load_generator(
    path: &Path,
) -> Result<(Generator<f32>, Option<Adam<f32>>, CheckpointManifest)> {
    let mut loaded = read(path)?;
    let NetworkSpec::Generator { arch } = loaded.manifest.network.clone() else {
        return Err(Error::Checkpoint(format!(
            "{} holds a discriminator",
            path.display()
        )));
    };
    let mut gen = Generator::new(arch, 0.0, &mut crate::rng::rng_for(0, &[]))?;
    let adam = fill(&mut gen.params, &mut loaded)?;
    Ok((gen, adam, loaded.manifest))
}

pub fn load_discriminator(
    path: &Path,
) -> Result<(Discriminator<f32>, Option<Adam<f32>>, CheckpointManifest)> {
    let mut loaded = read(path)?;
    let NetworkSpec::Discriminator { arch, role } = loaded.manifest.network.clone() else {
        return Err(Error::Checkpoint(format!(
            "{} holds a generator",
            path.display()
        )));
    };
    let mut disc = Discriminator::new(arch, role, 0.0, &mut crate::rng::rng_for(0, &[]))?;
    let adam = fill(&mut disc.params, &mut loaded)?;
    Ok((disc, adam, loaded.manifest))
}
