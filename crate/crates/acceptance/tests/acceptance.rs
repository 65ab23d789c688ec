//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Each criterion runs under `catch_unwind` with its wall-clock budget; a
//! criterion that is correct but over budget is reported as a failure.
//! Pass criterion numbers as arguments to run a subset, e.g. `-- 6 8`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use posecodec::codebook::{classify, default_codebook, ThresholdKind};
use posecodec::decoder::{
    latent_from_codes, mean_joint_error, recon_loss, DecoderConfig, DecoderSample, EmbeddingTable, MotionDecoder,
};
use posecodec::editor::{run_edit, splice, EditOptions, EditRequest, EditSession, ScriptedBackend};
use posecodec::encoder::{encode_motion, format_codes, parse_codes, parse_pose, CodeSequence, CodeStep};
use posecodec::eval::{aits, diversity_exhaustive, frechet_distance, mmodality_exhaustive, EvalError};
use posecodec::generator::{
    train_generator, CodeLayout, GeneratorConfig, GeneratorNet, GeneratorSample, HashingEmbedder, KeywordBank,
    Keywords, SamplingPolicy, MAX_LEN, NUM_KEYWORDS,
};
use posecodec::motion::{format_motion, parse_motion, synthesize, MotionKind, MotionSequence, Pose, SyntheticSpec, NUM_JOINTS};
use posecodec::nn::{
    CausalSelfAttention, Conv1d, Graph, LayerNorm, Linear, Module, NnError, ParamId, ParamStore, PositionalEncoding,
    ResidualUpsampleBlock, Tensor, TransformerBlock, Var,
};
use posecodec::rng::XorShift64Star;
use posecodec_service::{serve, AppState, ServiceConfig};
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

struct Criterion {
    id: u32,
    title: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, title: "codebook census", budget: Duration::from_secs(1), run: codebook_census },
    Criterion { id: 2, title: "threshold bins vs interval oracle", budget: Duration::from_secs(5), run: threshold_bins },
    Criterion { id: 3, title: "K-hot invariants on random poses", budget: Duration::from_secs(5), run: khot_invariants },
    Criterion { id: 4, title: "finite-difference gradient checks", budget: Duration::from_secs(60), run: gradient_checks },
    Criterion { id: 5, title: "latent sum and reconstruction loss", budget: Duration::from_secs(5), run: latent_and_loss },
    Criterion { id: 6, title: "decoder overfits four motions", budget: Duration::from_secs(600), run: decoder_overfit },
    Criterion { id: 7, title: "sequence likelihood factorization", budget: Duration::from_secs(1), run: likelihood_factorization },
    Criterion { id: 8, title: "generator toy grammar", budget: Duration::from_secs(900), run: toy_grammar },
    Criterion { id: 9, title: "editor locality and atomicity", budget: Duration::from_secs(10), run: editor_locality },
    Criterion { id: 10, title: "prompt format strings", budget: Duration::from_secs(1), run: prompt_fidelity },
    Criterion { id: 11, title: "metric identities and oracles", budget: Duration::from_secs(30), run: metrics },
    Criterion { id: 12, title: "service transparency and restart", budget: Duration::from_secs(60), run: service },
];

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > c.budget => Err(format!("over budget ({detail})")),
            other => other,
        };
        let timing = format!("{:.2}s of {}s", elapsed.as_secs_f64(), c.budget.as_secs());
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {} [{timing}] {detail}", c.id, c.title),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {} [{timing}] {why}", c.id, c.title);
            }
        }
    }
    std::panic::set_hook(default_hook);
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------- 1

fn codebook_census() -> Outcome {
    let cb = default_codebook();
    ensure!(cb.num_categories() == 70, "{} categories", cb.num_categories());
    ensure!(cb.codes().len() == 392 && cb.num_codes() == 392, "{} codes", cb.codes().len());
    // (kind, categories of that kind, codes per category)
    let census = [
        (ThresholdKind::Angle, 4, 18),
        (ThresholdKind::Distance, 18, 10),
        (ThresholdKind::RelPosX, 6, 3),
        (ThresholdKind::RelPosY, 16, 3),
        (ThresholdKind::RelPosZ, 9, 3),
        (ThresholdKind::RelOrientation, 13, 3),
        (ThresholdKind::GroundContact, 4, 2),
    ];
    let mut total = 0;
    for (kind, count, width) in census {
        let cats: Vec<_> = cb.categories().iter().filter(|c| c.kind == kind).collect();
        ensure!(cats.len() == count, "{kind:?}: {} categories, want {count}", cats.len());
        ensure!(cats.iter().all(|c| c.code_count == width), "{kind:?}: a category is not {width} codes wide");
        total += count * width;
    }
    ensure!(total == 392, "census multiplies out to {total}");
    let mut next = 0;
    for c in cb.categories() {
        ensure!(c.code_offset == next, "category {} starts at {} not {next}", c.category_id, c.code_offset);
        next += c.code_count;
    }
    ensure!(cb.dump().lines().count() == 393, "dump is not header plus 392 rows");
    Ok("70 categories, 392 codes".into())
}

// ---------------------------------------------------------------- 2

/// Bin edges written out by hand. Bin `k` is `edges[k-1] < x <= edges[k]`.
fn oracle_edges(kind: ThresholdKind) -> Vec<f64> {
    match kind {
        ThresholdKind::Angle => vec![
            10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0, 130.0, 140.0, 150.0, 160.0, 170.0,
        ],
        ThresholdKind::Distance => vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        ThresholdKind::RelPosX | ThresholdKind::RelPosY | ThresholdKind::RelPosZ => vec![-0.15, 0.15],
        ThresholdKind::RelOrientation => vec![10.0, 80.0],
        ThresholdKind::GroundContact => vec![0.1],
    }
}

fn oracle_bins(kind: ThresholdKind) -> Vec<(f64, f64)> {
    let e = oracle_edges(kind);
    let mut bins = vec![(f64::NEG_INFINITY, e[0])];
    bins.extend(e.windows(2).map(|w| (w[0], w[1])));
    bins.push((e[e.len() - 1], f64::INFINITY));
    bins
}

fn domain(kind: ThresholdKind) -> (f64, f64) {
    match kind {
        ThresholdKind::Angle | ThresholdKind::RelOrientation => (0.0, 180.0),
        ThresholdKind::Distance => (0.0, 3.0),
        ThresholdKind::RelPosX | ThresholdKind::RelPosY | ThresholdKind::RelPosZ => (-2.0, 2.0),
        ThresholdKind::GroundContact => (-0.5, 2.5),
    }
}

fn threshold_bins() -> Outcome {
    const SWEEP: usize = 100_000;
    let mut rng = XorShift64Star::new(2);
    for kind in ThresholdKind::ALL {
        let bins = oracle_bins(kind);
        ensure!(bins.len() == kind.code_count(), "{kind:?}: {} bins vs {} codes", bins.len(), kind.code_count());
        let (lo, hi) = domain(kind);
        let mut values: Vec<f64> = (0..SWEEP / 2).map(|i| lo + (hi - lo) * i as f64 / (SWEEP / 2 - 1) as f64).collect();
        values.extend((0..SWEEP / 2).map(|_| rng.uniform(lo, hi)));
        for &e in &oracle_edges(kind) {
            values.extend([e, e.next_up(), e.next_down()]);
        }
        values.extend([lo, hi]);
        for &x in &values {
            let members: Vec<usize> = bins.iter().enumerate().filter(|(_, &(a, b))| a < x && x <= b).map(|(k, _)| k).collect();
            ensure!(members.len() == 1, "{kind:?}: {x} lies in {} bins", members.len());
            let got = classify(kind, x).map_err(fail)?;
            ensure!(got == members[0], "{kind:?}: classify({x}) = {got}, oracle {}", members[0]);
        }
    }
    Ok(format!("{} kinds x {}+ values", ThresholdKind::ALL.len(), SWEEP))
}

// ---------------------------------------------------------------- 3

fn random_pose(rng: &mut XorShift64Star) -> Pose {
    let mut p = [[0.0; 3]; NUM_JOINTS];
    for j in &mut p {
        *j = [rng.uniform(-1.0, 1.0), rng.uniform(0.0, 2.0), rng.uniform(-1.0, 1.0)];
    }
    Pose::new(p).unwrap()
}

fn khot_invariants() -> Outcome {
    let cb = default_codebook();
    let mut rng = XorShift64Star::new(3);
    for trial in 0..1000 {
        let mut step = parse_pose(&random_pose(&mut rng), cb).map_err(fail)?;
        ensure!(step.assignment.len() == 70, "trial {trial}: {} assignments", step.assignment.len());
        step.is_end = trial % 2 == 1;
        let bits = step.to_khot(cb);
        ensure!(bits.len() == 393, "K-hot width {}", bits.len());
        for c in cb.categories() {
            let on = bits[c.code_offset..c.code_offset + c.code_count].iter().filter(|&&b| b).count();
            ensure!(on == 1, "trial {trial}: category {} has {on} active codes", c.category_id);
        }
        ensure!(bits[392] == step.is_end, "trial {trial}: end bit");
        let back = CodeStep::from_khot(&bits, cb).map_err(fail)?;
        ensure!(back == step, "trial {trial}: from_khot differs");
        ensure!(back.to_khot(cb) == bits, "trial {trial}: K-hot round trip differs");
    }
    Ok("1000 poses".into())
}

// ---------------------------------------------------------------- 4

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-6;
/// Elementwise relative error uses `max(|a|, |n|, GRAD_FLOOR)` as denominator,
/// so gradients below 1e-3 are compared in absolute terms (1e-9).
const GRAD_FLOOR: f64 = 1e-3;

fn random_tensor(shape: &[usize], rng: &mut XorShift64Star) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.5, 1.5)).collect()).unwrap()
}

fn projected(g: &mut Graph, out: Var, proj: &Tensor) -> Var {
    let p = g.constant(proj.clone());
    let prod = g.mul(out, p).unwrap();
    g.sum(prod)
}

fn eval_loss<F>(store: &ParamStore, inputs: &[ParamId], build: &F, proj: &Tensor) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|&id| g.param(id)).collect();
    let out = build(&mut g, &vars).unwrap();
    let l = projected(&mut g, out, proj);
    g.value(l).item()
}

/// Largest elementwise relative error between analytic and central-difference
/// gradients over every parameter in the store.
fn max_grad_error<F>(store: &mut ParamStore, inputs: &[ParamId], build: F, rng: &mut XorShift64Star) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NnError>,
{
    let (analytic, proj) = {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|&id| g.param(id)).collect();
        let out = build(&mut g, &vars).unwrap();
        let proj = random_tensor(g.value(out).shape(), rng);
        let l = projected(&mut g, out, &proj);
        let grads = g.backward(l).unwrap();
        let all: Vec<(ParamId, Tensor)> = store
            .ids()
            .map(|id| (id, grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.value(id).shape()))))
            .collect();
        (all, proj)
    };
    let mut worst: f64 = 0.0;
    for (id, ga) in &analytic {
        for i in 0..ga.len() {
            let orig = store.value(*id).data()[i];
            store.value_mut(*id).data_mut()[i] = orig + FD_STEP;
            let up = eval_loss(store, inputs, &build, &proj);
            store.value_mut(*id).data_mut()[i] = orig - FD_STEP;
            let down = eval_loss(store, inputs, &build, &proj);
            store.value_mut(*id).data_mut()[i] = orig;
            let num = (up - down) / (2.0 * FD_STEP);
            let a = ga.data()[i];
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(GRAD_FLOOR));
        }
    }
    worst
}

fn gradient_checks() -> Outcome {
    let mut rng = XorShift64Star::new(4);
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    let mut record = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name, e)),
    };
    let dims = |rng: &mut XorShift64Star, lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
    let cb = default_codebook();
    for _ in 0..20 {
        let (m, n, k) = (dims(&mut rng, 1, 5), dims(&mut rng, 2, 6), dims(&mut rng, 1, 5));
        let mut store = ParamStore::new();
        let a = store.add("a", random_tensor(&[m, n], &mut rng));
        let b = store.add("b", random_tensor(&[m, n], &mut rng));
        let r = store.add("r", random_tensor(&[n], &mut rng));
        let w = store.add("w", random_tensor(&[n, k], &mut rng));
        let e = max_grad_error(&mut store, &[a, b, r], |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[1])?;
            let p = g.mul(d, v[1])?;
            let q = g.add_row(p, v[2])?;
            Ok(g.scale(q, -0.7))
        }, &mut rng);
        record("add/sub/mul/add_row/scale", e);
        record("relu/sigmoid", max_grad_error(&mut store, &[a, b], |g, v| {
            let r = g.relu(v[0]);
            let s = g.sigmoid(v[1]);
            g.add(r, s)
        }, &mut rng));
        record("matmul/transpose", max_grad_error(&mut store, &[a, w], |g, v| {
            let p = g.matmul(v[0], v[1])?;
            g.transpose(p)
        }, &mut rng));
        let cut = dims(&mut rng, 1, n - 1);
        record("slice/concat", max_grad_error(&mut store, &[a], move |g, v| {
            let l = g.slice_cols(v[0], 0, cut)?;
            let rr = g.slice_cols(v[0], cut, n - cut)?;
            let rr = g.relu(rr);
            let c = g.concat_cols(&[rr, l])?;
            let first = g.slice_rows(c, 0, 1)?;
            g.concat_rows(&[c, first])
        }, &mut rng));
        let ln = LayerNorm::new(&mut store, "ln", n);
        *store.value_mut(ln.gamma) = random_tensor(&[n], &mut rng);
        *store.value_mut(ln.beta) = random_tensor(&[n], &mut rng);
        record("layer_norm", max_grad_error(&mut store, &[a], |g, v| ln.forward(g, v[0]), &mut rng));
        let sq = store.add("sq", random_tensor(&[m, m], &mut rng));
        record("causal_softmax", max_grad_error(&mut store, &[sq], |g, v| g.causal_softmax(v[0]), &mut rng));

        let (cin, cout, t) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 3), dims(&mut rng, 2, 7));
        let kernel = [1, 3, 5][rng.below(3)];
        let stride = dims(&mut rng, 1, 2);
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(&[cin, t], &mut rng));
        let y = store.add("y", random_tensor(&[cin, t], &mut rng));
        let conv = Conv1d::new(&mut store, "conv", cin, cout, kernel, stride, &mut rng);
        *store.value_mut(conv.bias) = random_tensor(&[cout], &mut rng);
        record("conv1d", max_grad_error(&mut store, &[x], |g, v| conv.forward(g, v[0]), &mut rng));
        record("upsample2/row_diff", max_grad_error(&mut store, &[x], |g, v| {
            let u = g.upsample2(v[0])?;
            let tr = g.transpose(u)?;
            g.row_diff(tr)
        }, &mut rng));
        record("smooth_l1", max_grad_error(&mut store, &[x, y], |g, v| {
            let s = g.scale(v[0], 2.0);
            g.smooth_l1(s, v[1])
        }, &mut rng));
        let target = Tensor::new(vec![cin, t], (0..cin * t).map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 }).collect()).unwrap();
        record("bce_with_logits/mean", max_grad_error(&mut store, &[x], move |g, v| {
            let l = g.bce_with_logits(v[0], target.clone())?;
            let m = g.mean(v[0]);
            g.add(l, m)
        }, &mut rng));

        let heads = dims(&mut rng, 1, 2);
        let dim = heads * dims(&mut rng, 2, 3);
        let t = dims(&mut rng, 1, 5);
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(&[t, dim], &mut rng));
        let lin = Linear::new(&mut store, "lin", dim, dim + 1, &mut rng);
        *store.value_mut(lin.bias) = random_tensor(&[dim + 1], &mut rng);
        record("linear", max_grad_error(&mut store, &[x], |g, v| lin.forward(g, v[0]), &mut rng));
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(&[t, dim], &mut rng));
        let attn = CausalSelfAttention::new(&mut store, "attn", dim, heads, &mut rng);
        record("causal_self_attention", max_grad_error(&mut store, &[x], |g, v| attn.forward(g, v[0]), &mut rng));
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(&[t, dim], &mut rng));
        let block = TransformerBlock::new(&mut store, "blk", dim, heads, &mut rng);
        let pe = PositionalEncoding::new(dim, 8);
        record("positional+transformer_block", max_grad_error(&mut store, &[x], |g, v| {
            let h = pe.forward(g, v[0])?;
            block.forward(g, h)
        }, &mut rng));
        let mut store = ParamStore::new();
        let x = store.add("x", random_tensor(&[dim, t], &mut rng));
        let up = ResidualUpsampleBlock::new(&mut store, "up", dim, &mut rng);
        record("residual_upsample_block", max_grad_error(&mut store, &[x], |g, v| up.forward(g, v[0]), &mut rng));

        // The code embedding table, through the latent sum.
        let dec = MotionDecoder::new(DecoderConfig { embed_dim: 2, hidden: 2, ..DecoderConfig::default() }, cb).unwrap();
        let codes = random_codes(t, &mut rng);
        let mut small = ParamStore::new();
        let id = small.add("emb", dec.store.value(dec.embedding.weight).clone());
        let emb = EmbeddingTable { weight: id, ..dec.embedding };
        record("code_embedding_sum", max_grad_error(&mut small, &[id], |g, _| latent_from_codes(g, &codes, cb, &emb), &mut rng));
    }
    let (name, e) = worst.iter().cloned().fold(("", 0.0), |acc, (n, e)| if e > acc.1 { (n, e) } else { acc });
    for (n, e) in &worst {
        ensure!(*e < GRAD_TOL, "{n}: max relative error {e:e}");
    }
    Ok(format!("{} ops x 20 shapes, worst {name} {e:.1e}", worst.len()))
}

// ---------------------------------------------------------------- 5

fn random_codes(len: usize, rng: &mut XorShift64Star) -> CodeSequence {
    let cb = default_codebook();
    let steps = (0..len)
        .map(|i| CodeStep {
            assignment: cb.categories().iter().map(|c| rng.below(c.code_count) as u8).collect(),
            is_end: i + 1 == len,
        })
        .collect();
    CodeSequence { steps, downsample: 4, source_fps: 20.0 }
}

fn shifted(m: &MotionSequence, off: f64) -> MotionSequence {
    MotionSequence::new(m.frames().iter().map(|p| p.translated([off, off, off])).collect(), m.fps()).unwrap()
}

fn latent_and_loss() -> Outcome {
    let cb = default_codebook();
    let dec = MotionDecoder::new(DecoderConfig { embed_dim: 16, hidden: 8, ..DecoderConfig::default() }, cb).map_err(fail)?;
    let table = dec.store.value(dec.embedding.weight).clone();
    let mut rng = XorShift64Star::new(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let codes = random_codes(1 + rng.below(6), &mut rng);
        let mut g = Graph::new(&dec.store);
        let z = latent_from_codes(&mut g, &codes, cb, &dec.embedding).map_err(fail)?;
        let z = g.value(z);
        for (i, step) in codes.steps.iter().enumerate() {
            let mask = step.to_khot(cb);
            for d in 0..16 {
                let brute: f64 = (0..392).map(|n| if mask[n] { table.at2(n, d) } else { 0.0 }).sum();
                worst = worst.max((z.at2(i, d) - brute).abs());
            }
        }
    }
    ensure!(worst <= 1e-12, "latent differs from masked sum by {worst:e}");
    for kind in [MotionKind::Walk, MotionKind::Wave, MotionKind::Squat] {
        let m = synthesize(&SyntheticSpec::new(kind, 16, 1)).map_err(fail)?;
        let same = recon_loss(&m, &m, 0.1).map_err(fail)?;
        ensure!(same == 0.0, "{kind:?}: recon_loss(x, x) = {same}");
        let off = shifted(&m, 0.5);
        let with_velocity = recon_loss(&m, &off, 0.1).map_err(fail)?;
        let positions_only = recon_loss(&m, &off, 0.0).map_err(fail)?;
        ensure!((with_velocity - 0.125).abs() <= 1e-12, "{kind:?}: offset loss {with_velocity}");
        ensure!((with_velocity - positions_only).abs() <= 1e-12, "{kind:?}: velocity term {}", with_velocity - positions_only);
    }
    Ok(format!("latent max diff {worst:.1e}, offset loss 0.125"))
}

// ---------------------------------------------------------------- 6

fn decoder_overfit() -> Outcome {
    let cb = default_codebook();
    let cfg = DecoderConfig::default();
    ensure!(cfg.steps <= 5000, "default schedule has {} steps", cfg.steps);
    let data: Vec<DecoderSample> = [MotionKind::Walk, MotionKind::Wave, MotionKind::Squat, MotionKind::Idle]
        .iter()
        .enumerate()
        .map(|(i, &k)| DecoderSample::from_motion(&synthesize(&SyntheticSpec::new(k, 40, i as u64)).unwrap(), cb, cfg.downsample))
        .collect::<Result<_, _>>()
        .map_err(fail)?;
    let mut dec = MotionDecoder::new(cfg, cb).map_err(fail)?;
    let dataset_loss = |d: &MotionDecoder| -> Result<f64, String> {
        let mut s = 0.0;
        for x in &data {
            s += d.sample_loss(x, cb).map_err(fail)?;
        }
        Ok(s / data.len() as f64)
    };
    let before = dataset_loss(&dec)?;
    dec.train(&data, cb).map_err(fail)?;
    let after = dataset_loss(&dec)?;
    let mut err = 0.0;
    for x in &data {
        err += mean_joint_error(&x.target, &dec.decode(&x.codes, cb).map_err(fail)?).map_err(fail)?;
    }
    let err = err / data.len() as f64;
    let reduction = 1.0 - after / before;
    ensure!(reduction >= 0.95, "loss {before:.4} -> {after:.4} is a {:.1}% reduction", 100.0 * reduction);
    ensure!(err < 0.05, "mean per-joint error {err:.4} m");
    Ok(format!("loss {before:.4} -> {after:.5} ({:.1}%), joint error {err:.4} m", 100.0 * reduction))
}

// ---------------------------------------------------------------- 7

fn likelihood_factorization() -> Outcome {
    let mut rng = XorShift64Star::new(7);
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let cfg = GeneratorConfig { dim: 16, heads: 2, layers: 2, seed, ..GeneratorConfig::default() };
        let net = GeneratorNet::with_embedder(cfg, CodeLayout::new(vec![2, 2, 2]), Arc::new(HashingEmbedder { bins: 16 }));
        let kw = Keywords((0..NUM_KEYWORDS).map(|i| format!("slot {i} seed {seed}")).collect());
        let cond = net.condition("a person jumps", Some(&kw));
        let target: Vec<CodeStep> = (0..2)
            .map(|i| CodeStep { assignment: (0..3).map(|_| rng.below(2) as u8).collect(), is_end: i == 1 })
            .collect();
        let nll = net.sequence_nll(&cond, &target).map_err(fail)?;
        let mut product = 1.0;
        for i in 0..target.len() {
            let p = net.step_probabilities(&cond, &target[..i]).map_err(fail)?;
            ensure!(p.len() == 7, "width {}", p.len());
            // Indicator order: the three categories' two codes each, then the end bit.
            let mut z = vec![0.0; 7];
            for (c, &a) in target[i].assignment.iter().enumerate() {
                z[2 * c + a as usize] = 1.0;
            }
            z[6] = if target[i].is_end { 1.0 } else { 0.0 };
            for (p, z) in p.iter().zip(&z) {
                product *= if *z == 1.0 { *p } else { 1.0 - *p };
            }
        }
        let lhs = (-(2.0 * 7.0) * nll).exp();
        worst = worst.max((lhs - product).abs());
    }
    ensure!(worst <= 1e-12, "largest difference {worst:e}");
    Ok(format!("10 models, max difference {worst:.1e}"))
}

// ---------------------------------------------------------------- 8

const TOY_TEXT: &str = "a person stands still and then squats down";

fn toy_grammar() -> Outcome {
    let cb = default_codebook();
    let knee = cb.category_by_name("L-knee angle").ok_or("no L-knee angle category")?.category_id;
    let cfg = GeneratorConfig { dim: 32, heads: 2, layers: 2, lr: 2e-3, seed: 1, ..GeneratorConfig::default() };
    let mut net = GeneratorNet::new(cfg, CodeLayout::from_codebook(cb));
    let bank = KeywordBank {
        sets: (0..5)
            .map(|i| Keywords((0..NUM_KEYWORDS).map(|k| format!("variant {i} slot {k} bend knees stand")).collect()))
            .collect(),
    };
    let mut rng = XorShift64Star::new(5);
    let mut data = Vec::with_capacity(200);
    for i in 0..200u64 {
        let idle = encode_motion(&synthesize(&SyntheticSpec::new(MotionKind::Idle, 40, i)).unwrap(), cb, 4).map_err(fail)?;
        let squat_spec = SyntheticSpec { amplitude: rng.uniform(0.8, 1.2), ..SyntheticSpec::new(MotionKind::Squat, 40, i) };
        let squat = encode_motion(&synthesize(&squat_spec).unwrap(), cb, 4).map_err(fail)?;
        let k = 2 + rng.below(3);
        let mut steps: Vec<CodeStep> = idle.steps[..k].to_vec();
        steps.extend(squat.steps[1..9].iter().cloned());
        for s in &mut steps {
            s.is_end = false;
        }
        steps.last_mut().unwrap().is_end = true;
        let cond = net.condition(TOY_TEXT, bank.pick(&mut rng));
        data.push(GeneratorSample { cond, target: CodeSequence { steps, downsample: 4, source_fps: 20.0 } });
    }
    ensure!(
        data.iter().all(|s| s.target.steps[0].assignment[knee] == 17 && s.target.steps.iter().any(|t| t.assignment[knee] <= 12)),
        "training data does not show the idle-to-squat transition"
    );
    train_generator(&mut net, &data, 300, 16).map_err(fail)?;

    let mut reproduced = 0;
    for seed in 0..100u64 {
        let mut r = XorShift64Star::new(seed);
        let cond = net.condition(TOY_TEXT, bank.pick(&mut r)).masked(0.15, &mut r);
        let out = net.generate(&cond, &SamplingPolicy::argmax()).map_err(fail)?;
        let ks: Vec<u8> = out.steps.iter().map(|s| s.assignment[knee]).collect();
        if ks.first() == Some(&17) && ks.iter().skip(1).any(|&k| k <= 12) {
            reproduced += 1;
        }
    }
    ensure!(reproduced >= 90, "argmax reproduced the transition in {reproduced}/100 runs");

    let layout = &net.layout;
    for seed in 0..1000u64 {
        let mut r = XorShift64Star::new(1_000_000 + seed);
        let cond = net.condition(TOY_TEXT, bank.pick(&mut r)).masked(0.15, &mut r);
        let out = net.generate(&cond, &SamplingPolicy::sample(1.0, seed)).map_err(fail)?;
        ensure!(!out.is_empty() && out.len() <= MAX_LEN, "sample {seed}: length {}", out.len());
        for (t, step) in out.steps.iter().enumerate() {
            layout.check(step).map_err(|e| format!("sample {seed} step {t}: {e}"))?;
            let bits = layout.khot(step);
            let mut offset = 0;
            for (c, &n) in layout.sizes().iter().enumerate() {
                let on = bits[offset..offset + n].iter().filter(|&&b| b == 1.0).count();
                ensure!(on == 1, "sample {seed} step {t}: category {c} has {on} codes");
                offset += n;
            }
            ensure!(!step.is_end || t + 1 == out.len(), "sample {seed}: end flag before the last step");
        }
    }
    Ok(format!("{reproduced}/100 argmax transitions, 1000 valid samples"))
}

// ---------------------------------------------------------------- 9

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn splice_oracle(input: &CodeSequence, s: usize, e: usize, edits: &[(usize, Vec<u8>)]) -> CodeSequence {
    let mut out = input.clone();
    for (t, step) in out.steps.iter_mut().enumerate() {
        for (c, code) in step.assignment.iter_mut().enumerate() {
            if (s..=e).contains(&t) {
                if let Some((_, v)) = edits.iter().find(|(ec, _)| *ec == c) {
                    *code = v[t - s];
                }
            }
        }
    }
    out
}

fn editor_locality() -> Outcome {
    let cb = default_codebook();
    let mut rng = XorShift64Star::new(9);
    let req = |codes: CodeSequence, range| EditRequest {
        description: "a person moves".into(),
        instruction: "change it".into(),
        codes,
        explicit_range: range,
    };
    for trial in 0..100 {
        let len = 3 + rng.below(12);
        let input = {
            let mut c = random_codes(len, &mut rng);
            c.steps.iter_mut().for_each(|s| s.is_end = false);
            c
        };
        let s = rng.below(len);
        let e = s + rng.below(len - s);
        let k = 1 + rng.below(5);
        let mut cats = rng.sample_without_replacement(cb.num_categories(), k);
        cats.sort_unstable();
        let edits: Vec<(usize, Vec<u8>)> = cats
            .iter()
            .map(|&c| (c, (s..=e).map(|_| rng.below(cb.categories()[c].code_count) as u8).collect()))
            .collect();
        let user_range = trial % 3 == 0;
        let mut responses = if user_range { vec![] } else { vec![join(&cats[..1]), format!("{s};{e}")] };
        responses.push(join(&cats));
        responses.extend(edits.iter().map(|(_, v)| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")));
        let backend = ScriptedBackend::from_responses(responses);
        let (out, _) = run_edit(&req(input.clone(), user_range.then_some((s, e))), &backend, cb, EditOptions::default())
            .map_err(|e| format!("trial {trial}: {e}"))?;
        backend.finish().map_err(fail)?;
        let want = splice_oracle(&input, s, e, &edits);
        ensure!(out == want, "trial {trial}: output differs from the splice oracle");
        ensure!(splice(&input, (s, e), &edits) == want, "trial {trial}: library splice differs from the oracle");
    }

    let input = random_codes(10, &mut rng);
    let mut session = EditSession::new("s", "a person moves", input, None);
    session
        .apply("first", Some((0, 2)), &ScriptedBackend::from_responses(["3", "0;0;0"]), cb, EditOptions::default())
        .map_err(fail)?;
    let malformed: [(&[&str], Option<(usize, usize)>, bool); 6] = [
        (&["not a list"], None, false),
        (&["0", "frames one to three"], None, false),
        (&["0", "4;99"], None, false),
        (&["0", "2;4", "head and arms"], None, false),
        (&["999"], Some((0, 1)), false),
        (&["3", "0;0;0;0;0"], Some((0, 1)), true),
    ];
    for (i, (responses, range, strict)) in malformed.iter().enumerate() {
        let before = session.clone();
        let r = session.apply("broken", *range, &ScriptedBackend::from_responses(responses.iter().copied()), cb, EditOptions { strict: *strict });
        ensure!(r.is_err(), "malformed case {i} was accepted");
        ensure!(session == before, "malformed case {i} changed the session");
    }
    Ok("100 edits cell-exact, 6 malformed replies rejected atomically".into())
}

// ---------------------------------------------------------------- 10

fn prompt_fidelity() -> Outcome {
    let cb = default_codebook();
    let input = random_codes(4, &mut XorShift64Star::new(10));
    let backend = ScriptedBackend::from_responses(["0", "0;3", "0", "0;0;0;0"]);
    let req = EditRequest { description: "a person moves".into(), instruction: "raise the left hand".into(), codes: input, explicit_range: None };
    let (_, trace) = run_edit(&req, &backend, cb, EditOptions::default()).map_err(fail)?;
    let all: String = trace.entries.iter().map(|e| e.prompt.as_str()).collect::<Vec<_>>().join("\n");
    for needle in ["Format example: 0;19", "Format example: 0;1;5;9", "Format example: 1;2;3;4", "smaller angles indicates more bending"] {
        ensure!(all.contains(needle), "no rendered prompt contains `{needle}`");
    }
    ensure!(!all.contains('{') && !all.contains('}'), "an unfilled slot remains");
    Ok(format!("{} prompts rendered", trace.entries.len()))
}

// ---------------------------------------------------------------- 11

fn pair_mean(f: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, a) in f.iter().enumerate() {
        for (j, b) in f.iter().enumerate() {
            if i != j {
                sum += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                n += 1;
            }
        }
    }
    sum / n as f64
}

fn metrics() -> Outcome {
    let mut rng = XorShift64Star::new(11);
    for n in [1, 2, 8, 32] {
        let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
        let mu = DVector::from_fn(n, |_, _| rng.normal());
        let d = frechet_distance(&mu, &cov, &mu, &cov).map_err(fail)?;
        ensure!(d.abs() <= 1e-10, "identity at n={n} gives {d:e}");
    }
    let one = DMatrix::from_element(1, 1, 1.0);
    let d = frechet_distance(&DVector::from_element(1, 0.0), &one, &DVector::from_element(1, 3.0), &one).map_err(fail)?;
    ensure!(d == 9.0, "1-d case gives {d}");

    for _ in 0..20 {
        let groups: Vec<Vec<Vec<f64>>> = (0..2 + rng.below(5))
            .map(|_| (0..2 + rng.below(6)).map(|_| (0..4).map(|_| rng.normal()).collect()).collect())
            .collect();
        let all: Vec<Vec<f64>> = groups.concat();
        let div = diversity_exhaustive(&all).map_err(fail)?;
        ensure!((div - pair_mean(&all)).abs() <= 1e-12, "diversity {div} vs {}", pair_mean(&all));
        let want = groups.iter().map(|g| pair_mean(g)).sum::<f64>() / groups.len() as f64;
        let mm = mmodality_exhaustive(&groups).map_err(fail)?;
        ensure!((mm - want).abs() <= 1e-12, "mmodality {mm} vs {want}");
    }

    let interval = Duration::from_millis(25);
    let report = aits(12, |_| -> Result<(), EvalError> {
        std::thread::sleep(interval);
        Ok(())
    })
    .map_err(fail)?;
    let ratio = report.seconds_per_sentence / interval.as_secs_f64();
    ensure!((0.9..=1.1).contains(&ratio), "AITS is {ratio:.3} times the stub's sleep");
    Ok(format!("AITS ratio {ratio:.3}"))
}

// ---------------------------------------------------------------- 12

struct InProcessServer {
    addr: std::net::SocketAddr,
    rt: Option<tokio::runtime::Runtime>,
}

impl InProcessServer {
    fn start(config: ServiceConfig) -> Result<Self, String> {
        let state = Arc::new(AppState::new(config).map_err(fail)?);
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().map_err(fail)?;
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).map_err(fail)?;
        let addr = listener.local_addr().map_err(fail)?;
        rt.spawn(async move { serve(listener, state).await });
        Ok(Self { addr, rt: Some(rt) })
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Stop every task without any graceful shutdown.
    fn kill(mut self) {
        if let Some(rt) = self.rt.take() {
            rt.shutdown_background();
        }
    }
}

impl Drop for InProcessServer {
    fn drop(&mut self) {
        if let Some(rt) = self.rt.take() {
            rt.shutdown_background();
        }
    }
}

fn http() -> ureq::Agent {
    ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(Duration::from_secs(30))).build().into()
}

fn post(url: &str, body: &Value) -> Result<(u16, String), String> {
    let mut r = http().post(url).send_json(body).map_err(fail)?;
    Ok((r.status().as_u16(), r.body_mut().read_to_string().map_err(fail)?))
}

fn get(url: &str) -> Result<(u16, String), String> {
    let mut r = http().get(url).call().map_err(fail)?;
    Ok((r.status().as_u16(), r.body_mut().read_to_string().map_err(fail)?))
}

fn service() -> Outcome {
    let cb = default_codebook();
    let tmp = tempfile::tempdir().map_err(fail)?;
    let ckpt = tmp.path().join("dec.ckpt");
    MotionDecoder::new(DecoderConfig { embed_dim: 8, hidden: 8, seed: 12, ..DecoderConfig::default() }, cb)
        .and_then(|d| d.save(&ckpt))
        .map_err(fail)?;
    let data = tmp.path().join("data");
    let config = |responses: Vec<&str>| ServiceConfig {
        data_dir: data.clone(),
        decoders: vec![("d".into(), ckpt.clone())],
        generator: None,
        backend: Arc::new(ScriptedBackend::from_responses(responses)),
    };
    let local_dec = MotionDecoder::load(&ckpt, cb).map_err(fail)?;

    let server = InProcessServer::start(config(vec!["4", "0;1;0;1;0;1;0;1;0;1"]))?;
    let kinds = [MotionKind::Walk, MotionKind::Wave, MotionKind::Squat, MotionKind::Reach, MotionKind::Idle];
    for (i, kind) in kinds.iter().enumerate() {
        let motion_text = format_motion(&synthesize(&SyntheticSpec::new(*kind, 40, i as u64)).map_err(fail)?);
        let mut r = http().post(&server.url("/v1/encode")).send(&motion_text).map_err(fail)?;
        ensure!(r.status() == 200, "encode returned {}", r.status());
        let codes_text = r.body_mut().read_to_string().map_err(fail)?;
        let local = encode_motion(&parse_motion(&motion_text).map_err(fail)?, cb, 4).map_err(fail)?;
        ensure!(codes_text == format_codes(&local), "{kind:?}: encode differs from the library");
        let (status, motion_back) = post(&server.url("/v1/decode"), &json!({"codes": codes_text, "checkpoint": "d"}))?;
        ensure!(status == 200, "decode returned {status}");
        let want = format_motion(&local_dec.decode(&parse_codes(&codes_text, cb).map_err(fail)?, cb).map_err(fail)?);
        ensure!(motion_back == want, "{kind:?}: decode differs from the library");
    }

    let walk = format_motion(&synthesize(&SyntheticSpec::new(MotionKind::Walk, 40, 7)).map_err(fail)?);
    let (status, body) = post(&server.url("/v1/sessions"), &json!({"motion": walk, "description": "a person walks"}))?;
    ensure!(status == 200, "session create returned {status}: {body}");
    let id = serde_json::from_str::<Value>(&body).map_err(fail)?["session_id"].as_str().ok_or("no session id")?.to_string();
    let (status, body) = post(&server.url(&format!("/v1/sessions/{id}/edit")), &json!({"instruction": "flip", "range": [0, 9]}))?;
    ensure!(status == 200, "edit returned {status}: {body}");
    let (_, committed) = get(&server.url(&format!("/v1/sessions/{id}")))?;
    server.kill();

    // Leftovers of an edit that never reached its manifest.
    let dir = data.join("sessions").join(&id);
    std::fs::write(dir.join("step-002.codes"), "torn").map_err(fail)?;
    std::fs::write(dir.join("edit.lock"), "1").map_err(fail)?;

    let server = InProcessServer::start(config(vec![""]))?;
    let (status, after) = get(&server.url(&format!("/v1/sessions/{id}")))?;
    ensure!(status == 200, "after restart GET returned {status}");
    ensure!(after == committed, "history changed across the restart");
    let history = serde_json::from_str::<Value>(&after).map_err(fail)?["history"].as_array().map(|h| h.len());
    ensure!(history == Some(2), "restored history has {history:?} entries");
    let (status, _) = post(&server.url(&format!("/v1/sessions/{id}/edit")), &json!({"instruction": "keep", "range": [0, 0]}))?;
    ensure!(status == 200, "edit after restart returned {status}");
    Ok(format!("{} motions bit-exact, edit survived restart", kinds.len()))
}
