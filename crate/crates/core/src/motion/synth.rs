//! Parametric synthetic motions used in place of a mocap corpus.
//!
//! Poses are assembled directly from a handful of segment directions; the
//! generator never solves kinematics. Every sequence is shifted per frame so
//! the lowest foot joint touches Y = 0 and then rounded to the on-disk
//! precision, so `load_motion(save_motion(m)) == m` for synthetic output.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{JointId, MotionError, MotionSequence, Pose, Vec3, NUM_JOINTS};
use crate::rng::XorShift64Star;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Walk,
    Wave,
    Squat,
    Reach,
    Idle,
}

impl MotionKind {
    pub const ALL: [MotionKind; 5] = [
        MotionKind::Walk,
        MotionKind::Wave,
        MotionKind::Squat,
        MotionKind::Reach,
        MotionKind::Idle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionKind::Walk => "walk",
            MotionKind::Wave => "wave",
            MotionKind::Squat => "squat",
            MotionKind::Reach => "reach",
            MotionKind::Idle => "idle",
        }
    }
}

impl FromStr for MotionKind {
    type Err = MotionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MotionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| MotionError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: MotionKind,
    pub duration_frames: usize,
    pub seed: u64,
    /// Scale on the kind's characteristic joint excursion.
    pub amplitude: f64,
    /// Phase offset in radians for periodic kinds.
    pub phase: f64,
    pub fps: f64,
}

impl SyntheticSpec {
    pub fn new(kind: MotionKind, duration_frames: usize, seed: u64) -> Self {
        Self {
            kind,
            duration_frames,
            seed,
            amplitude: 1.0,
            phase: 0.0,
            fps: 20.0,
        }
    }
}

const THIGH: f64 = 0.40;
const SHIN: f64 = 0.42;
const UPPER_ARM: f64 = 0.28;
const FOREARM: f64 = 0.25;

#[derive(Debug, Clone, Copy)]
struct Leg {
    pitch: f64,
    knee_flex: f64,
}

#[derive(Debug, Clone, Copy)]
struct Arm {
    upper: Vec3,
    fore: Vec3,
}

#[derive(Debug, Clone, Copy)]
struct Posture {
    torso_pitch: f64,
    left_leg: Leg,
    right_leg: Leg,
    left_arm: Arm,
    right_arm: Arm,
}

fn normalize(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn add_scaled(a: Vec3, d: Vec3, s: f64) -> Vec3 {
    [a[0] + d[0] * s, a[1] + d[1] * s, a[2] + d[2] * s]
}

/// Arm hanging at the side; `side` is +1 for left, -1 for right.
fn hanging_arm(side: f64) -> Arm {
    let d = normalize([0.12 * side, -1.0, 0.02]);
    Arm { upper: d, fore: normalize([0.08 * side, -1.0, 0.12]) }
}

/// Arm raised forward by `pitch` radians from hanging.
fn pitched_arm(side: f64, pitch: f64, elbow: f64) -> Arm {
    let upper = normalize([0.12 * side, -pitch.cos(), pitch.sin()]);
    let fp = pitch + elbow;
    let fore = normalize([0.08 * side, -fp.cos(), fp.sin()]);
    Arm { upper, fore }
}

fn standing() -> Posture {
    let leg = Leg { pitch: 0.0, knee_flex: 0.0 };
    Posture {
        torso_pitch: 0.0,
        left_leg: leg,
        right_leg: leg,
        left_arm: hanging_arm(1.0),
        right_arm: hanging_arm(-1.0),
    }
}

fn assemble(p: &Posture) -> [Vec3; NUM_JOINTS] {
    use JointId::*;
    let mut out = [[0.0; 3]; NUM_JOINTS];
    let set = |out: &mut [Vec3; NUM_JOINTS], j: JointId, v: Vec3| out[j.index()] = v;

    let pelvis = [0.0, 0.0, 0.0];
    let up = [0.0, p.torso_pitch.cos(), p.torso_pitch.sin()];
    set(&mut out, Pelvis, pelvis);
    set(&mut out, Spine1, add_scaled(pelvis, up, 0.10));
    set(&mut out, Spine2, add_scaled(pelvis, up, 0.23));
    set(&mut out, Spine3, add_scaled(pelvis, up, 0.35));
    set(&mut out, Neck, add_scaled(pelvis, up, 0.55));
    set(&mut out, Head, add_scaled(add_scaled(pelvis, up, 0.70), [0.0, 0.0, 1.0], 0.03));
    let shoulder_line = add_scaled(pelvis, up, 0.47);

    for (side, leg, hip_j, knee_j, ankle_j, foot_j) in [
        (1.0, p.left_leg, LeftHip, LeftKnee, LeftAnkle, LeftFoot),
        (-1.0, p.right_leg, RightHip, RightKnee, RightAnkle, RightFoot),
    ] {
        let hip = [0.09 * side, -0.07, 0.0];
        let thigh = [0.0, -leg.pitch.cos(), leg.pitch.sin()];
        let knee = add_scaled(hip, thigh, THIGH);
        let shin_pitch = leg.pitch - leg.knee_flex;
        let shin = [0.0, -shin_pitch.cos(), shin_pitch.sin()];
        let ankle = add_scaled(knee, shin, SHIN);
        let foot = [ankle[0], ankle[1] - 0.07, ankle[2] + 0.12];
        set(&mut out, hip_j, hip);
        set(&mut out, knee_j, knee);
        set(&mut out, ankle_j, ankle);
        set(&mut out, foot_j, foot);
    }

    for (side, arm, collar_j, shoulder_j, elbow_j, wrist_j) in [
        (1.0, p.left_arm, LeftCollar, LeftShoulder, LeftElbow, LeftWrist),
        (-1.0, p.right_arm, RightCollar, RightShoulder, RightElbow, RightWrist),
    ] {
        let collar = add_scaled(shoulder_line, [side, 0.0, 0.0], 0.07);
        let shoulder = add_scaled(shoulder_line, [side, 0.0, 0.0], 0.18);
        let elbow = add_scaled(shoulder, arm.upper, UPPER_ARM);
        let wrist = add_scaled(elbow, arm.fore, FOREARM);
        set(&mut out, collar_j, collar);
        set(&mut out, shoulder_j, shoulder);
        set(&mut out, elbow_j, elbow);
        set(&mut out, wrist_j, wrist);
    }
    out
}

fn grounded(mut positions: [Vec3; NUM_JOINTS]) -> [Vec3; NUM_JOINTS] {
    let lowest = positions[JointId::LeftFoot.index()][1].min(positions[JointId::RightFoot.index()][1]);
    for p in positions.iter_mut() {
        p[1] -= lowest;
    }
    positions
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

pub fn synthesize(spec: &SyntheticSpec) -> Result<MotionSequence, MotionError> {
    if spec.duration_frames == 0 {
        return Err(MotionError::Invalid("duration_frames must be at least 1".into()));
    }
    if !(spec.fps.is_finite() && spec.fps > 0.0) {
        return Err(MotionError::Invalid(format!("fps must be positive, got {}", spec.fps)));
    }
    let mut rng = XorShift64Star::new(spec.seed);
    // ±10% amplitude and frequency jitter, small phase jitter.
    let amp = spec.amplitude * (1.0 + 0.2 * (rng.next_f64() - 0.5));
    let freq_scale = 1.0 + 0.2 * (rng.next_f64() - 0.5);
    let phase = spec.phase + 0.3 * (rng.next_f64() - 0.5);

    let n = spec.duration_frames;
    let span = (n.max(2) - 1) as f64;
    let frames = (0..n)
        .map(|i| {
            let t = i as f64 / spec.fps;
            let mut p = standing();
            match spec.kind {
                MotionKind::Idle => {}
                MotionKind::Walk => {
                    let phi = 2.0 * PI * 1.0 * freq_scale * t + phase;
                    let swing = 0.45 * amp * phi.sin();
                    p.left_leg = Leg { pitch: swing, knee_flex: 0.3 * amp * (1.0 - phi.cos()) };
                    p.right_leg = Leg { pitch: -swing, knee_flex: 0.3 * amp * (1.0 + phi.cos()) };
                    p.left_arm = pitched_arm(1.0, -0.35 * amp * phi.sin(), 0.25);
                    p.right_arm = pitched_arm(-1.0, 0.35 * amp * phi.sin(), 0.25);
                    p.torso_pitch = 0.05;
                }
                MotionKind::Wave => {
                    let w = 0.6 * amp * (2.0 * PI * 1.5 * freq_scale * t + phase).sin();
                    p.right_arm = Arm {
                        upper: normalize([-0.7, 0.7, 0.1]),
                        fore: normalize([-w.sin(), w.cos(), 0.1]),
                    };
                }
                MotionKind::Squat => {
                    let s = amp * (1.0 - (2.0 * PI * i as f64 / span).cos()) / 2.0;
                    let leg = Leg { pitch: 1.6 * s, knee_flex: 1.9 * s };
                    p.left_leg = leg;
                    p.right_leg = leg;
                    p.torso_pitch = 0.5 * s;
                    p.left_arm = pitched_arm(1.0, 1.2 * s, 0.1);
                    p.right_arm = pitched_arm(-1.0, 1.2 * s, 0.1);
                }
                MotionKind::Reach => {
                    let r = smoothstep(i as f64 / span);
                    p.left_arm = pitched_arm(1.0, 1.5 * amp * r, 0.0);
                    p.torso_pitch = 0.2 * r;
                }
            }
            Pose::new(grounded(assemble(&p)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MotionSequence::new(frames, spec.fps)?.canonicalized())
}
