//! Autoregressive multi-label generator over K-hot steps, conditioned on a
//! description embedding plus eleven keyword embeddings.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::encoder::{CodeSequence, CodeStep, DEFAULT_DOWNSAMPLE};
use crate::nn::{
    load_model, save_model, AdamW, Gradients, Graph, LayerNorm, Linear, Module, NnError, ParamId,
    ParamStore, PositionalEncoding, Tensor, TransformerBlock, Var,
};
use crate::rng::XorShift64Star;

pub const MAX_LEN: usize = 50;
pub const DEFAULT_END_THRESHOLD: f64 = 0.5;
pub const DEFAULT_P_CORRUPT: f64 = 0.05;
pub const DEFAULT_P_MASK_KEYWORD: f64 = 0.15;
pub const NUM_KEYWORDS: usize = 11;
/// Description token plus the keyword tokens.
pub const NUM_CONDITION_TOKENS: usize = 1 + NUM_KEYWORDS;

/// Keyword slots in conditioning order: ten body parts, then mood.
pub const KEYWORD_SLOTS: [&str; NUM_KEYWORDS] = [
    "Head", "Torso", "L-Arm", "R-Arm", "L-Hand", "R-Hand", "L-Leg", "R-Leg", "L-Feet", "R-Feet", "Mood",
];

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("prefix of length {len} reaches the maximum length {max}")]
    PrefixTooLong { len: usize, max: usize },
    #[error("target of length {len} is empty or exceeds the maximum length {max}")]
    TargetLength { len: usize, max: usize },
    #[error("step {step} does not fit the code layout: {message}")]
    InvalidStep { step: usize, message: String },
    #[error("probability {name} = {value} outside [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("empty training batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Per-category code counts; the end indicator follows the last code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeLayout {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl CodeLayout {
    pub fn new(sizes: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in &sizes {
            offsets.push(acc);
            acc += s;
        }
        Self { sizes, offsets }
    }

    pub fn from_codebook(cb: &Codebook) -> Self {
        Self::new(cb.categories().iter().map(|c| c.code_count).collect())
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_categories(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_codes(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn end_bit(&self) -> usize {
        self.num_codes()
    }

    pub fn width(&self) -> usize {
        self.num_codes() + 1
    }

    pub fn global_id(&self, category: usize, local: usize) -> usize {
        self.offsets[category] + local
    }

    pub fn check(&self, step: &CodeStep) -> Result<(), String> {
        if step.assignment.len() != self.sizes.len() {
            return Err(format!("{} assignments for {} categories", step.assignment.len(), self.sizes.len()));
        }
        for (c, (&a, &n)) in step.assignment.iter().zip(&self.sizes).enumerate() {
            if a as usize >= n {
                return Err(format!("code {a} out of range for category {c} ({n} codes)"));
            }
        }
        Ok(())
    }

    pub fn khot(&self, step: &CodeStep) -> Vec<f64> {
        let mut v = vec![0.0; self.width()];
        for (c, &a) in step.assignment.iter().enumerate() {
            v[self.global_id(c, a as usize)] = 1.0;
        }
        if step.is_end {
            v[self.end_bit()] = 1.0;
        }
        v
    }
}

/// Maps text to a fixed-width vector. Implementations must be deterministic.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Bag of lowercase alphanumeric tokens hashed (FNV-1a) into `bins` counts, L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub bins: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { bins: 64 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl TextEmbedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.bins
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.bins];
        for tok in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let h = fnv1a(tok.to_lowercase().as_bytes());
            v[(h % self.bins as u64) as usize] += 1.0;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

/// Eleven keyword strings in [`KEYWORD_SLOTS`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keywords(pub Vec<String>);

impl Keywords {
    pub fn new(words: Vec<String>) -> Result<Self, String> {
        if words.len() != NUM_KEYWORDS {
            return Err(format!("expected {NUM_KEYWORDS} keywords, got {}", words.len()));
        }
        Ok(Self(words))
    }

    pub fn get(&self, slot: &str) -> Option<&str> {
        KEYWORD_SLOTS.iter().position(|s| s.eq_ignore_ascii_case(slot)).map(|i| self.0[i].as_str())
    }

    /// `Slot: text` lines, the same shape the keyword prompt asks for.
    pub fn to_text(&self) -> String {
        KEYWORD_SLOTS.iter().zip(&self.0).map(|(s, w)| format!("{s}: {w}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut words: Vec<Option<String>> = vec![None; NUM_KEYWORDS];
        for line in text.lines() {
            let Some((k, v)) = line.split_once(':') else { continue };
            let key = k.trim().trim_matches(|c: char| c == '*' || c == '-' || c == '"').trim();
            if let Some(i) = KEYWORD_SLOTS.iter().position(|s| s.eq_ignore_ascii_case(key)) {
                words[i] = Some(v.trim().trim_end_matches(',').trim_matches('"').trim().to_string());
            }
        }
        let mut out = Vec::with_capacity(NUM_KEYWORDS);
        for (slot, w) in KEYWORD_SLOTS.iter().zip(words) {
            match w {
                Some(w) if !w.is_empty() => out.push(w),
                _ => return Err(slot.to_lowercase()),
            }
        }
        Ok(Self(out))
    }
}

/// Several keyword sets for one description; training draws one uniformly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordBank {
    pub sets: Vec<Keywords>,
}

impl KeywordBank {
    pub fn pick(&self, rng: &mut XorShift64Star) -> Option<&Keywords> {
        if self.sets.is_empty() {
            None
        } else {
            Some(&self.sets[rng.below(self.sets.len())])
        }
    }
}

/// Embedded conditions: the description plus one optional vector per keyword
/// slot. `None` marks a masked keyword, replaced by the learned mask vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTokens {
    pub description: Vec<f64>,
    pub keywords: Vec<Option<Vec<f64>>>,
}

impl ConditionTokens {
    pub fn new(embedder: &dyn TextEmbedder, description: &str, keywords: Option<&Keywords>) -> Self {
        Self {
            description: embedder.embed(description),
            keywords: (0..NUM_KEYWORDS).map(|i| keywords.map(|k| embedder.embed(&k.0[i]))).collect(),
        }
    }

    /// Mask each keyword independently; the description is never masked.
    pub fn masked(&self, p: f64, rng: &mut XorShift64Star) -> Self {
        Self {
            description: self.description.clone(),
            keywords: self.keywords.iter().map(|k| if rng.bernoulli(p) { None } else { k.clone() }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub p_corrupt: f64,
    pub p_mask_keyword: f64,
    pub seed: u64,
    pub downsample: usize,
    pub fps: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            heads: 4,
            layers: 4,
            lr: 1e-4,
            weight_decay: 0.0,
            p_corrupt: DEFAULT_P_CORRUPT,
            p_mask_keyword: DEFAULT_P_MASK_KEYWORD,
            seed: 0,
            downsample: DEFAULT_DOWNSAMPLE,
            fps: 20.0,
        }
    }
}

/// Causal transformer: condition tokens first, then projected K-hot steps with
/// positional encoding, and a sigmoid head of layout width.
pub struct GeneratorNet {
    pub config: GeneratorConfig,
    pub layout: CodeLayout,
    pub store: ParamStore,
    embedder: Arc<dyn TextEmbedder>,
    cond_proj: Linear,
    mask_token: ParamId,
    input_proj: Linear,
    pos: PositionalEncoding,
    blocks: Vec<TransformerBlock>,
    final_norm: LayerNorm,
    pub head: Linear,
}

/// A training pair.
#[derive(Debug, Clone)]
pub struct GeneratorSample {
    pub cond: ConditionTokens,
    pub target: CodeSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SamplingMode {
    Argmax,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub mode: SamplingMode,
    pub temperature: f64,
    pub seed: u64,
    pub max_len: usize,
    pub end_threshold: f64,
}

impl SamplingPolicy {
    pub fn argmax() -> Self {
        Self { mode: SamplingMode::Argmax, temperature: 1.0, seed: 0, max_len: MAX_LEN, end_threshold: DEFAULT_END_THRESHOLD }
    }

    pub fn sample(temperature: f64, seed: u64) -> Self {
        Self { mode: SamplingMode::Sample, temperature, seed, ..Self::argmax() }
    }
}

/// Within-category distribution `q_c ∝ p_c^(1/T)`.
pub fn renormalize(probs: &[f64], temperature: f64) -> Vec<f64> {
    let logs: Vec<f64> = probs.iter().map(|p| p.max(f64::MIN_POSITIVE).ln() / temperature).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Replace each (step, category) input code with a uniform same-category code
/// with probability `p`; end flags are left alone.
pub fn corrupt_steps(steps: &[CodeStep], layout: &CodeLayout, p: f64, rng: &mut XorShift64Star) -> Vec<CodeStep> {
    steps
        .iter()
        .map(|s| CodeStep {
            assignment: s
                .assignment
                .iter()
                .zip(layout.sizes())
                .map(|(&a, &n)| if rng.bernoulli(p) { rng.below(n) as u8 } else { a })
                .collect(),
            is_end: s.is_end,
        })
        .collect()
}

fn bce(p: f64, z: f64) -> f64 {
    -(z * p.ln() + (1.0 - z) * (1.0 - p).ln())
}

impl GeneratorNet {
    pub fn new(config: GeneratorConfig, layout: CodeLayout) -> Self {
        Self::with_embedder(config, layout, Arc::new(HashingEmbedder::default()))
    }

    pub fn with_embedder(config: GeneratorConfig, layout: CodeLayout, embedder: Arc<dyn TextEmbedder>) -> Self {
        let mut rng = XorShift64Star::new(config.seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let cond_proj = Linear::new(&mut store, "gen.cond_proj", embedder.dim(), d, &mut rng);
        let mask_token = store.add_uniform_bound("gen.mask_token", &[1, d], 0.1, &mut rng);
        let input_proj = Linear::new(&mut store, "gen.input_proj", layout.width(), d, &mut rng);
        let blocks = (0..config.layers)
            .map(|i| TransformerBlock::new(&mut store, &format!("gen.block{i}"), d, config.heads, &mut rng))
            .collect();
        let final_norm = LayerNorm::new(&mut store, "gen.final_norm", d);
        let head = Linear::new(&mut store, "gen.head", d, layout.width(), &mut rng);
        Self {
            pos: PositionalEncoding::new(d, MAX_LEN),
            config,
            layout,
            store,
            embedder,
            cond_proj,
            mask_token,
            input_proj,
            blocks,
            final_norm,
            head,
        }
    }

    pub fn embedder(&self) -> &dyn TextEmbedder {
        self.embedder.as_ref()
    }

    pub fn condition(&self, description: &str, keywords: Option<&Keywords>) -> ConditionTokens {
        ConditionTokens::new(self.embedder.as_ref(), description, keywords)
    }

    fn check_steps(&self, steps: &[CodeStep]) -> Result<(), GenerateError> {
        for (i, s) in steps.iter().enumerate() {
            self.layout.check(s).map_err(|message| GenerateError::InvalidStep { step: i, message })?;
        }
        Ok(())
    }

    /// Logits for the step following each of `inputs.len() + 1` prefixes:
    /// row 0 predicts step 0 from the conditions alone, row `j` predicts step
    /// `j` after seeing `inputs[..j]`.
    fn logits(&self, g: &mut Graph, cond: &ConditionTokens, inputs: &[CodeStep]) -> Result<Var, GenerateError> {
        let e = self.embedder.dim();
        let mut present = Vec::new();
        let mut rows = Vec::with_capacity(NUM_CONDITION_TOKENS);
        for v in std::iter::once(Some(&cond.description)).chain(cond.keywords.iter().map(|k| k.as_ref())) {
            match v {
                Some(v) => {
                    present.extend_from_slice(v);
                    rows.push(true);
                }
                None => rows.push(false),
            }
        }
        let n_present = rows.iter().filter(|r| **r).count();
        let projected = if n_present > 0 {
            let x = g.constant(Tensor::matrix(n_present, e, present)?);
            Some(self.cond_proj.forward(g, x)?)
        } else {
            None
        };
        let mask = g.param(self.mask_token);
        let mut tokens = Vec::with_capacity(NUM_CONDITION_TOKENS + 1);
        let mut next = 0;
        for r in rows {
            if r {
                tokens.push(g.slice_rows(projected.expect("present rows"), next, 1)?);
                next += 1;
            } else {
                tokens.push(mask);
            }
        }
        if !inputs.is_empty() {
            let khot: Vec<f64> = inputs.iter().flat_map(|s| self.layout.khot(s)).collect();
            let x = g.constant(Tensor::matrix(inputs.len(), self.layout.width(), khot)?);
            let h = self.input_proj.forward(g, x)?;
            tokens.push(self.pos.forward(g, h)?);
        }
        let mut h = g.concat_rows(&tokens)?;
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        let h = g.slice_rows(h, NUM_CONDITION_TOKENS - 1, inputs.len() + 1)?;
        let h = self.final_norm.forward(g, h)?;
        Ok(self.head.forward(g, h)?)
    }

    /// Bernoulli probabilities for the step after `prefix`.
    pub fn step_probabilities(&self, cond: &ConditionTokens, prefix: &[CodeStep]) -> Result<Vec<f64>, GenerateError> {
        if prefix.len() >= MAX_LEN {
            return Err(GenerateError::PrefixTooLong { len: prefix.len(), max: MAX_LEN });
        }
        self.check_steps(prefix)?;
        let mut g = Graph::new(&self.store);
        let logits = self.logits(&mut g, cond, prefix)?;
        let p = g.sigmoid(logits);
        Ok(g.value(p).row(prefix.len()).to_vec())
    }

    /// Probabilities for every target step in one causal pass: row `i` is
    /// conditioned on steps `0..i`.
    pub fn teacher_forced_probabilities(&self, cond: &ConditionTokens, target: &[CodeStep]) -> Result<Tensor, GenerateError> {
        self.check_target(target)?;
        let mut g = Graph::new(&self.store);
        let logits = self.logits(&mut g, cond, &target[..target.len() - 1])?;
        let p = g.sigmoid(logits);
        Ok(g.value(p).clone())
    }

    fn check_target(&self, target: &[CodeStep]) -> Result<(), GenerateError> {
        if target.is_empty() || target.len() > MAX_LEN {
            return Err(GenerateError::TargetLength { len: target.len(), max: MAX_LEN });
        }
        self.check_steps(target)
    }

    /// Mean BCE of each step's `N + 1` indicators.
    pub fn step_nlls(&self, cond: &ConditionTokens, target: &[CodeStep]) -> Result<Vec<f64>, GenerateError> {
        let probs = self.teacher_forced_probabilities(cond, target)?;
        let w = self.layout.width();
        Ok(target
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let z = self.layout.khot(s);
                probs.row(i).iter().zip(&z).map(|(&p, &z)| bce(p, z)).sum::<f64>() / w as f64
            })
            .collect())
    }

    /// Mean binary cross-entropy over all `L · (N + 1)` indicators.
    pub fn sequence_nll(&self, cond: &ConditionTokens, target: &[CodeStep]) -> Result<f64, GenerateError> {
        self.check_target(target)?;
        let mut g = Graph::new(&self.store);
        let logits = self.logits(&mut g, cond, &target[..target.len() - 1])?;
        let z: Vec<f64> = target.iter().flat_map(|s| self.layout.khot(s)).collect();
        let loss = g.bce_with_logits(logits, Tensor::matrix(target.len(), self.layout.width(), z)?)?;
        Ok(g.value(loss).item())
    }

    fn sample_grads(&self, cond: &ConditionTokens, inputs: &[CodeStep], target: &[CodeStep], weight: f64) -> Result<(f64, Gradients), GenerateError> {
        let mut g = Graph::new(&self.store);
        let logits = self.logits(&mut g, cond, inputs)?;
        let z: Vec<f64> = target.iter().flat_map(|s| self.layout.khot(s)).collect();
        let loss = g.bce_with_logits(logits, Tensor::matrix(target.len(), self.layout.width(), z)?)?;
        let value = g.value(loss).item();
        let scaled = g.scale(loss, weight);
        Ok((value, g.backward(scaled)?))
    }

    /// One optimizer step on the mean sequence loss of `batch`, after input
    /// corruption and keyword masking. Returns the pre-update loss.
    pub fn train_step(
        &mut self,
        opt: &mut AdamW,
        batch: &[GeneratorSample],
        p_corrupt: f64,
        p_mask_keyword: f64,
        rng: &mut XorShift64Star,
    ) -> Result<f64, GenerateError> {
        for (name, value) in [("p_corrupt", p_corrupt), ("p_mask_keyword", p_mask_keyword)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(GenerateError::BadProbability { name, value });
            }
        }
        if batch.is_empty() {
            return Err(GenerateError::EmptyBatch);
        }
        let prepared = batch
            .iter()
            .map(|s| {
                self.check_target(&s.target.steps)?;
                let steps = &s.target.steps;
                let inputs = corrupt_steps(&steps[..steps.len() - 1], &self.layout, p_corrupt, rng);
                Ok((s.cond.masked(p_mask_keyword, rng), inputs))
            })
            .collect::<Result<Vec<_>, GenerateError>>()?;
        let weight = 1.0 / batch.len() as f64;
        let results: Vec<Result<(f64, Gradients), GenerateError>> = std::thread::scope(|scope| {
            let this = &*self;
            let handles: Vec<_> = prepared
                .iter()
                .zip(batch)
                .map(|((cond, inputs), s)| scope.spawn(move || this.sample_grads(cond, inputs, &s.target.steps, weight)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let mut total = 0.0;
        for r in results {
            let (l, grads) = r?;
            total += l;
            self.store.accumulate(&grads);
        }
        opt.step(&mut self.store);
        Ok(total * weight)
    }

    /// Autoregressive rollout with exactly one code per category at each step.
    pub fn generate(&self, cond: &ConditionTokens, policy: &SamplingPolicy) -> Result<CodeSequence, GenerateError> {
        if policy.mode == SamplingMode::Sample && !(policy.temperature > 0.0) {
            return Err(GenerateError::BadTemperature(policy.temperature));
        }
        let max_len = policy.max_len.clamp(1, MAX_LEN);
        let mut rng = XorShift64Star::new(policy.seed);
        let mut steps: Vec<CodeStep> = Vec::new();
        loop {
            let probs = self.step_probabilities(cond, &steps)?;
            let mut assignment = Vec::with_capacity(self.layout.num_categories());
            for (c, &n) in self.layout.sizes().iter().enumerate() {
                let base = self.layout.global_id(c, 0);
                let p = &probs[base..base + n];
                let local = match policy.mode {
                    SamplingMode::Argmax => {
                        let mut best = 0;
                        for (i, &v) in p.iter().enumerate() {
                            if v > p[best] {
                                best = i;
                            }
                        }
                        best
                    }
                    SamplingMode::Sample => {
                        let q = renormalize(p, policy.temperature);
                        let u = rng.next_f64();
                        let mut acc = 0.0;
                        let mut pick = n - 1;
                        for (i, &v) in q.iter().enumerate() {
                            acc += v;
                            if u < acc {
                                pick = i;
                                break;
                            }
                        }
                        pick
                    }
                };
                assignment.push(local as u8);
            }
            let stop = probs[self.layout.end_bit()] > policy.end_threshold || steps.len() + 1 >= max_len;
            steps.push(CodeStep { assignment, is_end: stop });
            if stop {
                break;
            }
        }
        Ok(CodeSequence { steps, downsample: self.config.downsample, source_fps: self.config.fps })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GenerateError> {
        let c = &self.config;
        let mut store = self.store.clone();
        let sizes = self.layout.sizes().iter().map(|&s| s as f64).collect();
        store.add("layout.sizes", Tensor::new(vec![self.layout.num_categories()], sizes)?);
        save_model(
            path,
            &store,
            &[
                ("model", 2.0),
                ("dim", c.dim as f64),
                ("heads", c.heads as f64),
                ("layers", c.layers as f64),
                ("embed_dim", self.embedder.dim() as f64),
                ("downsample", c.downsample as f64),
                ("fps", c.fps),
            ],
        )?;
        Ok(())
    }

    /// Load with the default hashing embedder of the stored width.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GenerateError> {
        let m = load_model(path)?;
        if m.meta("model")? != 2.0 {
            return Err(NnError::Checkpoint("not a generator checkpoint".into()).into());
        }
        let sizes = m
            .params
            .iter()
            .find(|(n, _)| n == "layout.sizes")
            .ok_or_else(|| NnError::MissingParam("layout.sizes".into()))?
            .1
            .data()
            .iter()
            .map(|&v| v as usize)
            .collect();
        let config = GeneratorConfig {
            dim: m.meta_usize("dim")?,
            heads: m.meta_usize("heads")?,
            layers: m.meta_usize("layers")?,
            downsample: m.meta_usize("downsample")?,
            fps: m.meta("fps")?,
            ..GeneratorConfig::default()
        };
        let embedder = Arc::new(HashingEmbedder { bins: m.meta_usize("embed_dim")? });
        let mut net = Self::with_embedder(config, CodeLayout::new(sizes), embedder);
        net.store.load_records(&m.params)?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTrainReport {
    pub losses: Vec<f64>,
}

/// Seeded minibatch training over `data` for `steps` updates.
pub fn train_generator(
    net: &mut GeneratorNet,
    data: &[GeneratorSample],
    steps: usize,
    batch: usize,
) -> Result<GeneratorTrainReport, GenerateError> {
    if data.is_empty() {
        return Err(GenerateError::EmptyBatch);
    }
    let mut opt = AdamW::new(net.config.lr).with_weight_decay(net.config.weight_decay);
    let mut rng = XorShift64Star::new(net.config.seed ^ 0x6e4e_7a70);
    let mut losses = Vec::with_capacity(steps);
    let (pc, pm) = (net.config.p_corrupt, net.config.p_mask_keyword);
    for _ in 0..steps {
        let picks: Vec<GeneratorSample> = (0..batch.max(1)).map(|_| data[rng.below(data.len())].clone()).collect();
        losses.push(net.train_step(&mut opt, &picks, pc, pm, &mut rng)?);
    }
    Ok(GeneratorTrainReport { losses })
}

/// A description with its keyword sets and target codes.
#[derive(Debug, Clone, PartialEq)]
pub struct TextMotionPair {
    pub description: String,
    pub keywords: KeywordBank,
    pub target: CodeSequence,
}

/// Like [`train_generator`], but every time a pair is drawn one of its
/// keyword sets is picked uniformly (none when the bank is empty).
pub fn train_generator_on_pairs(
    net: &mut GeneratorNet,
    pairs: &[TextMotionPair],
    steps: usize,
    batch: usize,
) -> Result<GeneratorTrainReport, GenerateError> {
    if pairs.is_empty() {
        return Err(GenerateError::EmptyBatch);
    }
    let mut opt = AdamW::new(net.config.lr).with_weight_decay(net.config.weight_decay);
    let mut rng = XorShift64Star::new(net.config.seed ^ 0x6e4e_7a70);
    let mut losses = Vec::with_capacity(steps);
    let (pc, pm) = (net.config.p_corrupt, net.config.p_mask_keyword);
    for _ in 0..steps {
        let picks: Vec<GeneratorSample> = (0..batch.max(1))
            .map(|_| {
                let p = &pairs[rng.below(pairs.len())];
                let cond = net.condition(&p.description, p.keywords.pick(&mut rng));
                GeneratorSample { cond, target: p.target.clone() }
            })
            .collect();
        losses.push(net.train_step(&mut opt, &picks, pc, pm, &mut rng)?);
    }
    Ok(GeneratorTrainReport { losses })
}
