//! Property tests for the cross-module invariants.

use posecodec::codebook::{classify, default_codebook, Measure, ThresholdKind};
use posecodec::decoder::{recon_loss, DecoderConfig, MotionDecoder};
use posecodec::editor::splice;
use posecodec::encoder::{encode_motion, format_codes, parse_codes, parse_pose, CodeSequence, CodeStep};
use posecodec::generator::renormalize;
use posecodec::motion::{
    axis_offset, format_motion, joint_angle, joint_distance, segment_vertical_angle, synthesize, Axis, JointId,
    MotionKind, MotionSequence, Pose, SyntheticSpec, NUM_JOINTS,
};
use posecodec::rng::XorShift64Star;
use proptest::prelude::*;

fn pose_from(seed: u64) -> Pose {
    let mut rng = XorShift64Star::new(seed);
    let mut p = [[0.0; 3]; NUM_JOINTS];
    for j in &mut p {
        *j = [rng.uniform(-1.0, 1.0), rng.uniform(0.0, 2.0), rng.uniform(-1.0, 1.0)];
    }
    Pose::new(p).unwrap()
}

fn joint(i: usize) -> JointId {
    JointId::ALL[i % NUM_JOINTS]
}

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

fn kind_strategy() -> impl Strategy<Value = MotionKind> {
    prop_oneof![
        Just(MotionKind::Walk),
        Just(MotionKind::Wave),
        Just(MotionKind::Squat),
        Just(MotionKind::Reach),
        Just(MotionKind::Idle),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn geometry_symmetries(seed in any::<u64>(), a in 0usize..22, b in 0usize..22, c in 0usize..22) {
        let p = pose_from(seed);
        let (a, b, c) = (joint(a), joint(b), joint(c));
        if a != b && b != c {
            let fwd = joint_angle(&p, a, b, c).unwrap();
            let back = joint_angle(&p, c, b, a).unwrap();
            prop_assert!((fwd - back).abs() <= 1e-12);
        }
        let (ab, bc, ac) = (joint_distance(&p, a, b), joint_distance(&p, b, c), joint_distance(&p, a, c));
        prop_assert!(ac <= ab + bc + 1e-12);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            prop_assert_eq!(axis_offset(&p, a, b, axis), -axis_offset(&p, b, a, axis));
        }
    }

    #[test]
    fn vertical_angle_ignores_yaw(seed in any::<u64>(), a in 0usize..22, b in 0usize..22, yaw in -7.0f64..7.0) {
        prop_assume!(a % NUM_JOINTS != b % NUM_JOINTS);
        let p = pose_from(seed);
        let before = segment_vertical_angle(&p, joint(a), joint(b)).unwrap();
        let after = segment_vertical_angle(&p.rotated_about_y(yaw), joint(a), joint(b)).unwrap();
        prop_assert!((before - after).abs() <= 1e-9, "{} vs {}", before, after);
    }

    #[test]
    fn synthesis_is_pure(kind in kind_strategy(), frames in 1usize..60, seed in any::<u64>()) {
        let spec = SyntheticSpec::new(kind, frames, seed);
        prop_assert_eq!(format_motion(&synthesize(&spec).unwrap()), format_motion(&synthesize(&spec).unwrap()));
    }

    #[test]
    fn classify_has_exactly_one_bin(x in -1e3f64..1e3) {
        for kind in ThresholdKind::ALL {
            if kind == ThresholdKind::Angle && !(0.0..=180.0).contains(&x) {
                prop_assert!(classify(kind, x).is_err());
                continue;
            }
            let cuts = kind.cutoffs();
            let members = (0..kind.code_count())
                .filter(|&k| (k == 0 || x > cuts[k - 1]) && (k == cuts.len() || x <= cuts[k]))
                .count();
            prop_assert_eq!(members, 1);
            prop_assert_eq!(classify(kind, x).unwrap(), classify(kind, x).unwrap());
        }
    }

    #[test]
    fn classify_is_monotone(x in 0.0f64..180.0, dx in 0.0f64..50.0) {
        for kind in [ThresholdKind::Angle, ThresholdKind::Distance] {
            let y = if kind == ThresholdKind::Angle { (x + dx).min(180.0) } else { x + dx };
            prop_assert!(classify(kind, x).unwrap() <= classify(kind, y).unwrap());
        }
    }

    #[test]
    fn encoding_is_frame_local_and_exclusive(kind in kind_strategy(), frames in 4usize..48, seed in any::<u64>()) {
        let cb = default_codebook();
        let m = synthesize(&SyntheticSpec::new(kind, frames, seed)).unwrap();
        let seq = encode_motion(&m, cb, 4).unwrap();
        prop_assert_eq!(seq.len(), frames / 4);
        for (i, step) in seq.steps.iter().enumerate() {
            let mut alone = parse_pose(&m.frames()[i * 4], cb).unwrap();
            alone.is_end = i + 1 == seq.len();
            prop_assert_eq!(step, &alone);
            let bits = step.to_khot(cb);
            for c in cb.categories() {
                prop_assert_eq!(bits[c.code_offset..c.code_offset + c.code_count].iter().filter(|&&b| b).count(), 1);
            }
        }
        prop_assert_eq!(parse_codes(&format_codes(&seq), cb).unwrap(), seq);
    }

    #[test]
    fn vertical_shift_only_moves_ground_codes(seed in any::<u64>(), dy in -3.0f64..3.0) {
        let cb = default_codebook();
        let p = pose_from(seed);
        let a = parse_pose(&p, cb).unwrap();
        let b = parse_pose(&p.translated([0.0, dy, 0.0]), cb).unwrap();
        for c in cb.categories() {
            if !matches!(c.measure, Measure::Ground(_)) && a.assignment[c.category_id] != b.assignment[c.category_id] {
                // A relative offset may sit within rounding of a cutoff.
                let near = c.kind.cutoffs().iter().any(|cut| {
                    let v = posecodec::encoder::measure(&p, c.measure).unwrap();
                    (v - cut).abs() < 1e-9
                });
                prop_assert!(near, "category {} changed", c.name);
            }
        }
    }

    #[test]
    fn decoded_length_is_whole_steps(steps in 1usize..8, seed in 0u64..4) {
        let cb = default_codebook();
        let dec = MotionDecoder::new(DecoderConfig { embed_dim: 4, hidden: 4, seed, ..DecoderConfig::default() }, cb).unwrap();
        let codes = random_codes(steps, &mut XorShift64Star::new(seed));
        prop_assert_eq!(dec.decode(&codes, cb).unwrap().len(), steps * 4);
    }

    #[test]
    fn loss_is_zero_only_on_identical_motion(kind in kind_strategy(), seed in any::<u64>(), off in -1.0f64..1.0, lambda in 0.0f64..2.0) {
        let m = synthesize(&SyntheticSpec::new(kind, 12, seed)).unwrap();
        prop_assert_eq!(recon_loss(&m, &m, lambda).unwrap(), 0.0);
        let moved = MotionSequence::new(m.frames().iter().map(|p| p.translated([off, 0.0, 0.0])).collect(), m.fps()).unwrap();
        let loss = recon_loss(&m, &moved, lambda).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert_eq!(loss == 0.0, off == 0.0);
    }

    #[test]
    fn renormalized_probabilities_sum_to_one(probs in proptest::collection::vec(1e-9f64..1.0, 1..20), temp in 0.05f64..5.0) {
        let q = renormalize(&probs, temp);
        prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(q.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn splice_touches_only_selected_cells(seed in any::<u64>(), len in 1usize..12) {
        let cb = default_codebook();
        let mut rng = XorShift64Star::new(seed);
        let input = random_codes(len, &mut rng);
        let s = rng.below(len);
        let e = s + rng.below(len - s);
        let k = 1 + rng.below(6);
        let cats = rng.sample_without_replacement(cb.num_categories(), k);
        let edits: Vec<(usize, Vec<u8>)> = cats
            .iter()
            .map(|&c| (c, (s..=e).map(|_| rng.below(cb.categories()[c].code_count) as u8).collect()))
            .collect();
        let out = splice(&input, (s, e), &edits);
        out.validate(cb).unwrap();
        for t in 0..len {
            prop_assert_eq!(out.steps[t].is_end, input.steps[t].is_end);
            for c in 0..cb.num_categories() {
                let want = match edits.iter().find(|(ec, _)| *ec == c) {
                    Some((_, v)) if (s..=e).contains(&t) => v[t - s],
                    _ => input.steps[t].assignment[c],
                };
                prop_assert_eq!(out.steps[t].assignment[c], want);
            }
        }
    }
}
