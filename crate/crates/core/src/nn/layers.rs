use super::{Graph, NnError, ParamId, ParamStore, Tensor, Var};
use crate::rng::XorShift64Star;

/// A layer with a single input and output.
pub trait Module {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError>;
}

/// `y = x W + b` on row vectors; `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut XorShift64Star) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[in_dim, out_dim], in_dim, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self { weight, bias, in_dim, out_dim }
    }
}

impl Module for Linear {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Convolution over `[channels, time]` with "same"-style padding `kernel / 2`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut XorShift64Star,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[channels_out, channels_in, kernel], channels_in * kernel, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[channels_out]));
        Self { weight, bias, stride, padding: kernel / 2 }
    }
}

impl Module for Conv1d {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv1d(x, w, b, self.stride, self.padding)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Relu;

impl Module for Relu {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        Ok(g.relu(x))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Sigmoid;

impl Module for Sigmoid {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        Ok(g.sigmoid(x))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }
}

impl Module for LayerNorm {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Multi-head self-attention over rows of `[t, dim]`; row `i` attends to rows `0..=i`.
#[derive(Debug, Clone)]
pub struct CausalSelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl CausalSelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut XorShift64Star) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, rng),
            heads,
        }
    }
}

impl Module for CausalSelfAttention {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let dim = self.query.out_dim;
        let dh = dim / self.heads;
        let q = self.query.forward(g, x)?;
        let k = self.key.forward(g, x)?;
        let v = self.value.forward(g, x)?;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let attn = g.causal_softmax(scores)?;
            outs.push(g.matmul(attn, vh)?);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        self.out.forward(g, cat)
    }
}

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: CausalSelfAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl TransformerBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut XorShift64Star) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: CausalSelfAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, 4 * dim, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), 4 * dim, dim, rng),
        }
    }
}

impl Module for TransformerBlock {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let h = self.norm1.forward(g, x)?;
        let h = self.attn.forward(g, h)?;
        let x = g.add(x, h)?;
        let h = self.norm2.forward(g, x)?;
        let h = self.fc1.forward(g, h)?;
        let h = g.relu(h);
        let h = self.fc2.forward(g, h)?;
        g.add(x, h)
    }
}

/// Nearest-neighbour ×2 upsampling followed by a residual conv branch:
/// `u + conv_b(relu(conv_a(u)))` with `u = upsample(x)`.
#[derive(Debug, Clone)]
pub struct ResidualUpsampleBlock {
    pub conv_a: Conv1d,
    pub conv_b: Conv1d,
}

impl ResidualUpsampleBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut XorShift64Star) -> Self {
        Self {
            conv_a: Conv1d::new(store, &format!("{name}.conv_a"), dim, dim, 3, 1, rng),
            conv_b: Conv1d::new(store, &format!("{name}.conv_b"), dim, dim, 3, 1, rng),
        }
    }
}

impl Module for ResidualUpsampleBlock {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let u = g.upsample2(x)?;
        let h = self.conv_a.forward(g, u)?;
        let h = g.relu(h);
        let h = self.conv_b.forward(g, h)?;
        g.add(u, h)
    }
}

/// Fixed sinusoidal encoding added to the rows of `[t, dim]`.
#[derive(Debug, Clone)]
pub struct PositionalEncoding {
    table: Tensor,
}

impl PositionalEncoding {
    pub fn new(dim: usize, max_len: usize) -> Self {
        let mut data = vec![0.0; max_len * dim];
        for pos in 0..max_len {
            for i in 0..dim {
                let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
                let a = pos as f64 * freq;
                data[pos * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
            }
        }
        Self { table: Tensor::matrix(max_len, dim, data).expect("shape") }
    }

    pub fn max_len(&self) -> usize {
        self.table.shape()[0]
    }
}

impl Module for PositionalEncoding {
    fn forward(&self, g: &mut Graph, x: Var) -> Result<Var, NnError> {
        let (t, d) = g.value(x).dims2().ok_or(NnError::ShapeMismatch {
            op: "positional_encoding",
            left: g.value(x).shape().to_vec(),
            right: self.table.shape().to_vec(),
        })?;
        if t > self.max_len() || d != self.table.shape()[1] {
            return Err(NnError::ShapeMismatch {
                op: "positional_encoding",
                left: vec![t, d],
                right: self.table.shape().to_vec(),
            });
        }
        let pe = g.constant(Tensor::matrix(t, d, self.table.data()[..t * d].to_vec())?);
        g.add(x, pe)
    }
}
