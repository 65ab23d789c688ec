//! Learnable code embeddings and the convolutional decoder back to joint positions.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::encoder::{encode_motion, CodeSequence, EncodeError};
use crate::motion::{MotionError, MotionSequence, Pose, NUM_JOINTS};
use crate::nn::{
    load_model, save_model, AdamW, Conv1d, Graph, Module, NnError, ParamId, ParamStore,
    ResidualUpsampleBlock, Tensor, Var,
};
use crate::rng::XorShift64Star;

/// Output width: 22 joints × xyz.
pub const OUTPUT_DIM: usize = NUM_JOINTS * 3;
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("frame counts differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("loss needs at least 2 frames, got {0}")]
    TooShort(usize),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("downsampling rate {0} is not a power of two")]
    UnsupportedDownsample(usize),
    #[error("code sequence uses downsampling {got}, decoder expects {expected}")]
    DownsampleMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub downsample: usize,
    pub lambda: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden: 64,
            kernel: 3,
            downsample: crate::encoder::DEFAULT_DOWNSAMPLE,
            lambda: DEFAULT_LAMBDA,
            lr: 1e-3,
            steps: 2000,
            batch: 4,
            seed: 0,
        }
    }
}

/// `392 × d_c` table; row `n` belongs to global code id `n`.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub weight: ParamId,
    pub num_codes: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(store: &mut ParamStore, num_codes: usize, dim: usize, rng: &mut XorShift64Star) -> Self {
        let weight = store.add_uniform_bound("embedding", &[num_codes, dim], 0.1, rng);
        Self { weight, num_codes, dim }
    }
}

/// Sum of the active embedding rows per step, as a graph node of shape `[L, d_c]`.
/// The end indicator has no embedding row and never contributes.
pub fn latent_from_codes(g: &mut Graph, seq: &CodeSequence, cb: &Codebook, emb: &EmbeddingTable) -> Result<Var, NnError> {
    let mask: Vec<f64> = seq
        .steps
        .iter()
        .flat_map(|s| {
            let mut row = vec![0.0; emb.num_codes];
            for id in s.global_ids(cb) {
                row[id] = 1.0;
            }
            row
        })
        .collect();
    let m = g.constant(Tensor::matrix(seq.len(), emb.num_codes, mask)?);
    let w = g.param(emb.weight);
    g.matmul(m, w)
}

/// Conv stem, `log2(l)` residual ×2 upsampling blocks and a conv head to 66 outputs.
#[derive(Debug, Clone)]
pub struct DecoderNet {
    pub stem: Conv1d,
    pub blocks: Vec<ResidualUpsampleBlock>,
    pub head: Conv1d,
}

impl DecoderNet {
    fn new(store: &mut ParamStore, cfg: &DecoderConfig, rng: &mut XorShift64Star) -> Result<Self, DecodeError> {
        let l = cfg.downsample;
        if l == 0 || !l.is_power_of_two() {
            return Err(DecodeError::UnsupportedDownsample(l));
        }
        let n_blocks = l.trailing_zeros() as usize;
        let stem = Conv1d::new(store, "dec.stem", cfg.embed_dim, cfg.hidden, cfg.kernel, 1, rng);
        let blocks = (0..n_blocks)
            .map(|i| ResidualUpsampleBlock::new(store, &format!("dec.up{i}"), cfg.hidden, rng))
            .collect();
        let head = Conv1d::new(store, "dec.head", cfg.hidden, OUTPUT_DIM, cfg.kernel, 1, rng);
        Ok(Self { stem, blocks, head })
    }

    /// `[L, d_c]` latent in, `[L·l, 66]` positions out.
    pub fn forward(&self, g: &mut Graph, latent: Var) -> Result<Var, NnError> {
        let x = g.transpose(latent)?;
        let mut h = self.stem.forward(g, x)?;
        h = g.relu(h);
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        let out = self.head.forward(g, h)?;
        g.transpose(out)
    }
}

/// Embedding table plus decoder network with their shared parameter store.
#[derive(Debug, Clone)]
pub struct MotionDecoder {
    pub config: DecoderConfig,
    pub store: ParamStore,
    pub embedding: EmbeddingTable,
    pub net: DecoderNet,
}

fn motion_matrix(m: &MotionSequence) -> Tensor {
    let data: Vec<f64> = m.frames().iter().flat_map(|p| p.to_flat()).collect();
    Tensor::matrix(m.len(), OUTPUT_DIM, data).expect("pose width")
}

fn smooth_l1_mean(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y).abs();
            if d < 1.0 {
                0.5 * d * d
            } else {
                d - 0.5
            }
        })
        .sum();
    sum / a.len() as f64
}

fn velocities(m: &MotionSequence) -> Vec<f64> {
    let f: Vec<Vec<f64>> = m.frames().iter().map(|p| p.to_flat()).collect();
    f.windows(2).flat_map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect::<Vec<_>>()).collect()
}

/// Smooth-L1 on positions plus `lambda` times smooth-L1 on frame-to-frame velocities,
/// both with transition point 1 and mean reduction.
pub fn recon_loss(x: &MotionSequence, x_rec: &MotionSequence, lambda: f64) -> Result<f64, DecodeError> {
    if x.len() != x_rec.len() {
        return Err(DecodeError::LengthMismatch(x.len(), x_rec.len()));
    }
    if x.len() < 2 {
        return Err(DecodeError::TooShort(x.len()));
    }
    let a: Vec<f64> = x.frames().iter().flat_map(|p| p.to_flat()).collect();
    let b: Vec<f64> = x_rec.frames().iter().flat_map(|p| p.to_flat()).collect();
    Ok(smooth_l1_mean(&a, &b) + lambda * smooth_l1_mean(&velocities(x), &velocities(x_rec)))
}

/// Mean Euclidean distance between corresponding joints, in metres.
pub fn mean_joint_error(x: &MotionSequence, x_rec: &MotionSequence) -> Result<f64, DecodeError> {
    if x.len() != x_rec.len() {
        return Err(DecodeError::LengthMismatch(x.len(), x_rec.len()));
    }
    let mut total = 0.0;
    for (p, q) in x.frames().iter().zip(x_rec.frames()) {
        for (a, b) in p.positions().iter().zip(q.positions()) {
            total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        }
    }
    Ok(total / (x.len() * NUM_JOINTS) as f64)
}

fn graph_recon_loss(g: &mut Graph, rec: Var, target: &Tensor, lambda: f64) -> Result<Var, NnError> {
    let t = g.constant(target.clone());
    let pos = g.smooth_l1(rec, t)?;
    if lambda == 0.0 {
        return Ok(pos);
    }
    let vr = g.row_diff(rec)?;
    let vt = g.row_diff(t)?;
    let vel = g.smooth_l1(vr, vt)?;
    let vel = g.scale(vel, lambda);
    g.add(pos, vel)
}

/// A training pair: encoded codes and the frames they should reproduce.
#[derive(Debug, Clone)]
pub struct DecoderSample {
    pub codes: CodeSequence,
    pub target: MotionSequence,
}

impl DecoderSample {
    /// Truncate to a multiple of `l` frames and encode.
    pub fn from_motion(m: &MotionSequence, cb: &Codebook, l: usize) -> Result<Self, DecodeError> {
        let codes = encode_motion(m, cb, l)?;
        let target = m.truncated(codes.len() * l);
        Ok(Self { codes, target })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial(&self) -> f64 {
        self.losses.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

impl MotionDecoder {
    pub fn new(config: DecoderConfig, cb: &Codebook) -> Result<Self, DecodeError> {
        let mut rng = XorShift64Star::new(config.seed);
        let mut store = ParamStore::new();
        let embedding = EmbeddingTable::new(&mut store, cb.num_codes(), config.embed_dim, &mut rng);
        let net = DecoderNet::new(&mut store, &config, &mut rng)?;
        Ok(Self { config, store, embedding, net })
    }

    fn forward(&self, g: &mut Graph, codes: &CodeSequence, cb: &Codebook) -> Result<Var, DecodeError> {
        if codes.downsample != self.config.downsample {
            return Err(DecodeError::DownsampleMismatch { expected: self.config.downsample, got: codes.downsample });
        }
        let z = latent_from_codes(g, codes, cb, &self.embedding)?;
        Ok(self.net.forward(g, z)?)
    }

    /// Reconstruct `L · l` frames from a code sequence.
    pub fn decode(&self, codes: &CodeSequence, cb: &Codebook) -> Result<MotionSequence, DecodeError> {
        codes.validate(cb)?;
        let mut g = Graph::new(&self.store);
        let out = self.forward(&mut g, codes, cb)?;
        let t = g.value(out);
        let frames = (0..t.shape()[0]).map(|r| Pose::from_flat(t.row(r))).collect::<Result<Vec<_>, _>>()?;
        Ok(MotionSequence::new(frames, codes.source_fps)?)
    }

    /// Reconstruction loss of the current model on one sample, without gradients.
    pub fn sample_loss(&self, s: &DecoderSample, cb: &Codebook) -> Result<f64, DecodeError> {
        let rec = self.decode(&s.codes, cb)?;
        recon_loss(&s.target, &rec, self.config.lambda)
    }

    fn sample_grads(&self, s: &DecoderSample, target: &Tensor, cb: &Codebook, weight: f64) -> Result<(f64, crate::nn::Gradients), DecodeError> {
        let mut g = Graph::new(&self.store);
        let rec = self.forward(&mut g, &s.codes, cb)?;
        let loss = graph_recon_loss(&mut g, rec, target, self.config.lambda)?;
        let value = g.value(loss).item();
        let scaled = g.scale(loss, weight);
        Ok((value, g.backward(scaled)?))
    }

    /// Minibatch AdamW on the reconstruction loss. The curve records the mean
    /// batch loss before each update.
    pub fn train(&mut self, data: &[DecoderSample], cb: &Codebook) -> Result<TrainReport, DecodeError> {
        if data.is_empty() {
            return Err(DecodeError::EmptyDataset);
        }
        let targets: Vec<Tensor> = data.iter().map(|s| motion_matrix(&s.target)).collect();
        let mut opt = AdamW::new(self.config.lr);
        let mut rng = XorShift64Star::new(self.config.seed ^ 0x5eed_dec0);
        let batch = self.config.batch.max(1);
        let mut losses = Vec::with_capacity(self.config.steps);
        for _ in 0..self.config.steps {
            let picks: Vec<usize> = if batch >= data.len() {
                (0..data.len()).collect()
            } else {
                (0..batch).map(|_| rng.below(data.len())).collect()
            };
            let weight = 1.0 / picks.len() as f64;
            let results: Vec<Result<(f64, crate::nn::Gradients), DecodeError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = picks
                    .iter()
                    .map(|&i| {
                        let (s, t) = (&data[i], &targets[i]);
                        let this = &*self;
                        scope.spawn(move || this.sample_grads(s, t, cb, weight))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
            });
            let mut total = 0.0;
            for r in results {
                let (l, grads) = r?;
                total += l;
                self.store.accumulate(&grads);
            }
            losses.push(total * weight);
            opt.step(&mut self.store);
        }
        Ok(TrainReport { losses })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DecodeError> {
        let c = &self.config;
        save_model(
            path,
            &self.store,
            &[
                ("model", 1.0),
                ("embed_dim", c.embed_dim as f64),
                ("hidden", c.hidden as f64),
                ("kernel", c.kernel as f64),
                ("downsample", c.downsample as f64),
                ("lambda", c.lambda),
                ("num_codes", self.embedding.num_codes as f64),
            ],
        )?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, cb: &Codebook) -> Result<Self, DecodeError> {
        let m = load_model(path)?;
        if m.meta("model")? != 1.0 {
            return Err(NnError::Checkpoint("not a decoder checkpoint".into()).into());
        }
        if m.meta_usize("num_codes")? != cb.num_codes() {
            return Err(NnError::Checkpoint("codebook size differs from checkpoint".into()).into());
        }
        let config = DecoderConfig {
            embed_dim: m.meta_usize("embed_dim")?,
            hidden: m.meta_usize("hidden")?,
            kernel: m.meta_usize("kernel")?,
            downsample: m.meta_usize("downsample")?,
            lambda: m.meta("lambda")?,
            ..DecoderConfig::default()
        };
        let mut dec = Self::new(config, cb)?;
        dec.store.load_records(&m.params)?;
        Ok(dec)
    }
}

/// Encode each motion and train a fresh decoder on the result.
pub fn train_decoder(
    motions: &[MotionSequence],
    cfg: DecoderConfig,
    cb: &Codebook,
) -> Result<(MotionDecoder, TrainReport), DecodeError> {
    if motions.is_empty() {
        return Err(DecodeError::EmptyDataset);
    }
    let data = motions
        .iter()
        .map(|m| DecoderSample::from_motion(m, cb, cfg.downsample))
        .collect::<Result<Vec<_>, _>>()?;
    let mut dec = MotionDecoder::new(cfg, cb)?;
    let report = dec.train(&data, cb)?;
    Ok((dec, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::default_codebook;
    use crate::motion::{synthesize, MotionKind, SyntheticSpec};

    fn small_cfg() -> DecoderConfig {
        DecoderConfig { embed_dim: 8, hidden: 8, steps: 5, ..DecoderConfig::default() }
    }

    fn motion(kind: MotionKind, n: usize) -> MotionSequence {
        synthesize(&SyntheticSpec::new(kind, n, 3)).unwrap()
    }

    #[test]
    fn identical_motion_has_zero_loss() {
        let m = motion(MotionKind::Wave, 12);
        assert_eq!(recon_loss(&m, &m, DEFAULT_LAMBDA).unwrap(), 0.0);
    }

    #[test]
    fn loss_rejects_mismatched_lengths() {
        let m = motion(MotionKind::Wave, 12);
        assert!(matches!(recon_loss(&m, &m.truncated(8), 0.1), Err(DecodeError::LengthMismatch(12, 8))));
        assert!(matches!(recon_loss(&m.truncated(1), &m.truncated(1), 0.1), Err(DecodeError::TooShort(1))));
    }

    #[test]
    fn decoded_length_is_steps_times_rate() {
        let cb = default_codebook();
        let m = motion(MotionKind::Walk, 43);
        let dec = MotionDecoder::new(small_cfg(), cb).unwrap();
        let codes = encode_motion(&m, cb, 4).unwrap();
        assert_eq!(dec.decode(&codes, cb).unwrap().len(), 40);
    }

    #[test]
    fn zero_learning_rate_keeps_loss_flat() {
        let cb = default_codebook();
        let cfg = DecoderConfig { lr: 0.0, ..small_cfg() };
        let (_, report) = train_decoder(&[motion(MotionKind::Squat, 16)], cfg, cb).unwrap();
        assert!(report.losses.windows(2).all(|w| w[0] == w[1]), "{:?}", report.losses);
    }

    #[test]
    fn training_is_deterministic() {
        let cb = default_codebook();
        let data = [motion(MotionKind::Squat, 16), motion(MotionKind::Wave, 16)];
        let cfg = DecoderConfig { batch: 1, ..small_cfg() };
        let (_, a) = train_decoder(&data, cfg.clone(), cb).unwrap();
        let (_, b) = train_decoder(&data, cfg, cb).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cb = default_codebook();
        assert!(matches!(train_decoder(&[], small_cfg(), cb), Err(DecodeError::EmptyDataset)));
    }

    #[test]
    fn non_power_of_two_rate_is_rejected() {
        let cfg = DecoderConfig { downsample: 3, ..small_cfg() };
        assert!(matches!(MotionDecoder::new(cfg, default_codebook()), Err(DecodeError::UnsupportedDownsample(3))));
    }

    #[test]
    fn checkpoint_round_trip_decodes_identically() {
        let cb = default_codebook();
        let (dec, _) = train_decoder(&[motion(MotionKind::Wave, 16)], small_cfg(), cb).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dec.ckpt");
        dec.save(&path).unwrap();
        let back = MotionDecoder::load(&path, cb).unwrap();
        let codes = encode_motion(&motion(MotionKind::Walk, 16), cb, 4).unwrap();
        assert_eq!(dec.decode(&codes, cb).unwrap(), back.decode(&codes, cb).unwrap());
    }
}
