use std::sync::Arc;

use posecodec::codebook::default_codebook;
use posecodec::encoder::CodeStep;
use posecodec::generator::{
    corrupt_steps, CodeLayout, GeneratorConfig, GeneratorNet, GeneratorSample, HashingEmbedder,
    Keywords, SamplingPolicy, MAX_LEN, NUM_KEYWORDS,
};
use posecodec::nn::AdamW;
use posecodec::rng::XorShift64Star;

fn net(sizes: Vec<usize>, seed: u64) -> GeneratorNet {
    let cfg = GeneratorConfig { dim: 16, heads: 2, layers: 2, seed, ..GeneratorConfig::default() };
    GeneratorNet::with_embedder(cfg, CodeLayout::new(sizes), Arc::new(HashingEmbedder { bins: 16 }))
}

fn random_steps(layout: &CodeLayout, len: usize, rng: &mut XorShift64Star) -> Vec<CodeStep> {
    (0..len)
        .map(|i| CodeStep {
            assignment: layout.sizes().iter().map(|&n| rng.below(n) as u8).collect(),
            is_end: i + 1 == len,
        })
        .collect()
}

fn keywords(tag: &str) -> Keywords {
    Keywords((0..NUM_KEYWORDS).map(|i| format!("{tag} part {i}")).collect())
}

#[test]
fn sequence_likelihood_factorizes_over_indicators() {
    let mut rng = XorShift64Star::new(31);
    for seed in 0..10 {
        let g = net(vec![2, 2, 2], seed);
        let cond = g.condition("a person jumps", Some(&keywords("jump")));
        let target = random_steps(&g.layout, 2, &mut rng);
        let nll = g.sequence_nll(&cond, &target).unwrap();
        let mut product = 1.0;
        for i in 0..target.len() {
            let p = g.step_probabilities(&cond, &target[..i]).unwrap();
            let z = g.layout.khot(&target[i]);
            for (p, z) in p.iter().zip(&z) {
                product *= if *z == 1.0 { *p } else { 1.0 - *p };
            }
        }
        let count = (target.len() * g.layout.width()) as f64;
        let lhs = (-count * nll).exp();
        assert!((lhs - product).abs() <= 1e-12 * product.max(1e-300), "{lhs} vs {product}");
    }
}

#[test]
fn incremental_probabilities_match_teacher_forcing() {
    let mut rng = XorShift64Star::new(32);
    let g = net(vec![3, 2, 4], 5);
    let cond = g.condition("walk", None);
    let target = random_steps(&g.layout, 6, &mut rng);
    let all = g.teacher_forced_probabilities(&cond, &target).unwrap();
    for i in 0..target.len() {
        let p = g.step_probabilities(&cond, &target[..i]).unwrap();
        for (a, b) in p.iter().zip(all.row(i)) {
            assert!((a - b).abs() < 1e-12);
            assert!(*a > 0.0 && *a < 1.0);
        }
    }
}

#[test]
fn future_steps_never_change_earlier_losses() {
    let mut rng = XorShift64Star::new(33);
    let g = net(vec![3, 2, 4], 6);
    let cond = g.condition("kick", Some(&keywords("kick")));
    let target = random_steps(&g.layout, 7, &mut rng);
    let base = g.step_nlls(&cond, &target).unwrap();
    for j in 0..target.len() {
        let mut changed = target.clone();
        changed[j] = random_steps(&g.layout, 1, &mut rng).remove(0);
        changed[j].is_end = target[j].is_end;
        let other = g.step_nlls(&cond, &changed).unwrap();
        assert_eq!(&base[..j], &other[..j], "step {j}");
    }
    let p = g.step_probabilities(&cond, &target[..3]).unwrap();
    let p_longer = g.teacher_forced_probabilities(&cond, &target).unwrap();
    assert_eq!(p, p_longer.row(3));
}

#[test]
fn clean_train_step_reports_clean_loss() {
    let mut rng = XorShift64Star::new(34);
    let mut g = net(vec![3, 2, 4], 7);
    let batch: Vec<GeneratorSample> = (0..3)
        .map(|i| {
            let cond = g.condition(&format!("motion {i}"), Some(&keywords("x")));
            let target = random_steps(&g.layout, 2 + i, &mut rng);
            GeneratorSample { cond, target: posecodec::encoder::CodeSequence { steps: target, downsample: 4, source_fps: 20.0 } }
        })
        .collect();
    let expected: f64 = batch.iter().map(|s| g.sequence_nll(&s.cond, &s.target.steps).unwrap()).sum::<f64>() / 3.0;
    let mut opt = AdamW::new(1e-3);
    let loss = g.train_step(&mut opt, &batch, 0.0, 0.0, &mut rng).unwrap();
    assert!((loss - expected).abs() < 1e-12);
    let after: f64 = batch.iter().map(|s| g.sequence_nll(&s.cond, &s.target.steps).unwrap()).sum::<f64>() / 3.0;
    assert!(after < expected);
    assert!(g.train_step(&mut opt, &batch, 1.5, 0.0, &mut rng).is_err());
}

#[test]
fn corruption_keeps_one_code_per_category() {
    let cb = default_codebook();
    let layout = CodeLayout::from_codebook(cb);
    let mut rng = XorShift64Star::new(35);
    let steps = random_steps(&layout, 5, &mut rng);
    for _ in 0..1000 {
        for s in corrupt_steps(&steps, &layout, 0.05, &mut rng) {
            s.validate(cb).unwrap();
            let khot = s.to_khot(cb);
            assert_eq!(khot[..cb.num_codes()].iter().filter(|b| **b).count(), cb.num_categories());
        }
    }
}

#[test]
fn rollouts_are_valid_and_argmax_is_deterministic() {
    let cb = default_codebook();
    let cfg = GeneratorConfig { dim: 16, heads: 2, layers: 1, seed: 3, ..GeneratorConfig::default() };
    let g = GeneratorNet::new(cfg, CodeLayout::from_codebook(cb));
    let cond = g.condition("a person waves", Some(&keywords("wave")));
    let a = g.generate(&cond, &SamplingPolicy::argmax()).unwrap();
    assert_eq!(a, g.generate(&cond, &SamplingPolicy::argmax()).unwrap());
    for seed in 0..20 {
        let s = g.generate(&cond, &SamplingPolicy::sample(1.0, seed)).unwrap();
        assert!(s.len() <= MAX_LEN && !s.is_empty());
        s.validate(cb).unwrap();
        assert!(s.steps.last().unwrap().is_end);
    }
}

#[test]
fn checkpoint_round_trip_preserves_probabilities() {
    let g = net(vec![2, 3], 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.ckpt");
    g.save(&path).unwrap();
    let back = GeneratorNet::load(&path).unwrap();
    let cond = g.condition("turn around", None);
    let steps = vec![CodeStep { assignment: vec![1, 2], is_end: false }];
    assert_eq!(g.step_probabilities(&cond, &steps).unwrap(), back.step_probabilities(&back.condition("turn around", None), &steps).unwrap());
}
