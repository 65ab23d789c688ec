//! Minimal dense-tensor library: reverse-mode autodiff, the layers the
//! decoder and generator need, AdamW, and a binary checkpoint format.

mod checkpoint;
mod graph;
mod layers;
mod optim;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use graph::{Gradients, Graph, Var};
pub use layers::{
    CausalSelfAttention, Conv1d, LayerNorm, Linear, Module, PositionalEncoding, Relu,
    ResidualUpsampleBlock, Sigmoid, TransformerBlock,
};
pub use optim::AdamW;
pub use tensor::Tensor;

use thiserror::Error;

use crate::rng::XorShift64Star;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("tensors are limited to 3 dimensions, got {0:?}")]
    Rank(Vec<usize>),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("missing parameter `{0}` in checkpoint")]
    MissingParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
}

/// Named trainable parameters and their gradient accumulators.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param { name: name.into(), value, grad });
        ParamId(self.params.len() - 1)
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut XorShift64Star) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.add_uniform_bound(name, shape, bound, rng)
    }

    pub fn add_uniform_bound(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut XorShift64Star) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Add a backward pass's gradients into the accumulators.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.params {
            self.params[id.0].grad.add_assign(g);
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Round every value to single precision (for compact inference snapshots).
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn records(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }

    /// Overwrite values by name; every parameter must be present with its shape.
    pub fn load_records(&mut self, records: &[(String, Tensor)]) -> Result<(), NnError> {
        for p in &mut self.params {
            let (_, t) = records
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| NnError::MissingParam(p.name.clone()))?;
            if t.shape() != p.value.shape() {
                return Err(NnError::ShapeMismatch { op: "load", left: p.value.shape().to_vec(), right: t.shape().to_vec() });
            }
            p.value = t.clone();
        }
        Ok(())
    }
}

/// Model metadata travels as scalar `meta.<key>` records next to the parameters.
pub fn save_model(
    path: impl AsRef<std::path::Path>,
    store: &ParamStore,
    meta: &[(&str, f64)],
) -> Result<(), NnError> {
    let mut records: Vec<(String, Tensor)> = meta
        .iter()
        .map(|(k, v)| (format!("meta.{k}"), Tensor::new(vec![1], vec![*v]).expect("shape")))
        .collect();
    records.extend(store.records());
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
    write_checkpoint(std::io::BufWriter::new(file), &records)
}

pub struct LoadedModel {
    pub meta: std::collections::BTreeMap<String, f64>,
    pub params: Vec<(String, Tensor)>,
}

impl LoadedModel {
    pub fn meta(&self, key: &str) -> Result<f64, NnError> {
        self.meta
            .get(key)
            .copied()
            .ok_or_else(|| NnError::MissingParam(format!("meta.{key}")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize, NnError> {
        let v = self.meta(key)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(NnError::Checkpoint(format!("meta.{key} = {v} is not a count")));
        }
        Ok(v as usize)
    }
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<LoadedModel, NnError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut meta = std::collections::BTreeMap::new();
    let mut params = Vec::new();
    for (name, t) in read_checkpoint(std::io::BufReader::new(file))? {
        match name.strip_prefix("meta.") {
            Some(key) => {
                meta.insert(key.to_string(), t.data().first().copied().unwrap_or(f64::NAN));
            }
            None => params.push((name, t)),
        }
    }
    Ok(LoadedModel { meta, params })
}
