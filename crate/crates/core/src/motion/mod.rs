//! Skeleton conventions, geometric measurements, synthetic motion and the
//! motion text format.
//!
//! Coordinates are meters with X toward the subject's left, Y up and Z
//! forward. The floor is the plane Y = 0.

mod io;
mod synth;

pub use io::{format_motion, load_motion, parse_motion, save_motion, MOTION_HEADER};
pub(crate) use io::format_decimal;
pub use synth::{synthesize, MotionKind, SyntheticSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_JOINTS: usize = 22;

/// Segments shorter than this are treated as degenerate.
pub const MIN_SEGMENT_LENGTH: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unknown motion kind `{0}`")]
    UnknownKind(String),
    #[error("invalid motion: {0}")]
    Invalid(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

macro_rules! joints {
    ($($variant:ident => $name:literal),* $(,)?) => {
        /// The 22 SMPL body joints in canonical index order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[repr(u8)]
        pub enum JointId {
            $($variant),*
        }

        impl JointId {
            pub const ALL: [JointId; NUM_JOINTS] = [$(JointId::$variant),*];

            pub fn name(self) -> &'static str {
                match self {
                    $(JointId::$variant => $name),*
                }
            }

            pub fn from_name(name: &str) -> Option<JointId> {
                match name {
                    $($name => Some(JointId::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

joints! {
    Pelvis => "pelvis",
    LeftHip => "left_hip",
    RightHip => "right_hip",
    Spine1 => "spine1",
    LeftKnee => "left_knee",
    RightKnee => "right_knee",
    Spine2 => "spine2",
    LeftAnkle => "left_ankle",
    RightAnkle => "right_ankle",
    Spine3 => "spine3",
    LeftFoot => "left_foot",
    RightFoot => "right_foot",
    Neck => "neck",
    LeftCollar => "left_collar",
    RightCollar => "right_collar",
    Head => "head",
    LeftShoulder => "left_shoulder",
    RightShoulder => "right_shoulder",
    LeftElbow => "left_elbow",
    RightElbow => "right_elbow",
    LeftWrist => "left_wrist",
    RightWrist => "right_wrist",
}

impl JointId {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<JointId> {
        Self::ALL.get(i).copied()
    }
}

impl std::fmt::Display for JointId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Axis::X => 'X',
            Axis::Y => 'Y',
            Axis::Z => 'Z',
        }
    }
}

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// One skeleton frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    positions: [Vec3; NUM_JOINTS],
}

impl Pose {
    pub fn new(positions: [Vec3; NUM_JOINTS]) -> Result<Self, MotionError> {
        if let Some((j, _)) = positions
            .iter()
            .enumerate()
            .find(|(_, p)| p.iter().any(|c| !c.is_finite()))
        {
            return Err(MotionError::Invalid(format!(
                "non-finite coordinate on joint {}",
                JointId::ALL[j]
            )));
        }
        Ok(Self { positions })
    }

    pub fn position(&self, j: JointId) -> Vec3 {
        self.positions[j.index()]
    }

    pub fn positions(&self) -> &[Vec3; NUM_JOINTS] {
        &self.positions
    }

    /// Flattened `x y z` per joint in canonical order (66 values).
    pub fn to_flat(&self) -> Vec<f64> {
        self.positions.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self, MotionError> {
        if values.len() != NUM_JOINTS * 3 {
            return Err(MotionError::SchemaMismatch(format!(
                "expected {} coordinates, got {}",
                NUM_JOINTS * 3,
                values.len()
            )));
        }
        let mut positions = [[0.0; 3]; NUM_JOINTS];
        for (j, p) in positions.iter_mut().enumerate() {
            p.copy_from_slice(&values[3 * j..3 * j + 3]);
        }
        Pose::new(positions)
    }

    pub fn translated(&self, offset: Vec3) -> Pose {
        let mut positions = self.positions;
        for p in positions.iter_mut() {
            for k in 0..3 {
                p[k] += offset[k];
            }
        }
        Pose { positions }
    }

    /// Rotation about the vertical axis through the origin.
    pub fn rotated_about_y(&self, radians: f64) -> Pose {
        let (s, c) = radians.sin_cos();
        let mut positions = self.positions;
        for p in positions.iter_mut() {
            let (x, z) = (p[0], p[2]);
            p[0] = c * x + s * z;
            p[2] = -s * x + c * z;
        }
        Pose { positions }
    }
}

/// Interior angle at `b` between `b→a` and `b→c`, in degrees.
pub fn joint_angle(pose: &Pose, a: JointId, b: JointId, c: JointId) -> Result<f64, MotionError> {
    let u = sub(pose.position(a), pose.position(b));
    let v = sub(pose.position(c), pose.position(b));
    let (nu, nv) = (norm(u), norm(v));
    if nu < MIN_SEGMENT_LENGTH || nv < MIN_SEGMENT_LENGTH {
        return Err(MotionError::DegenerateGeometry(format!(
            "zero-length segment in angle {a}-{b}-{c}"
        )));
    }
    let cos = (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

pub fn joint_distance(pose: &Pose, a: JointId, b: JointId) -> f64 {
    norm(sub(pose.position(a), pose.position(b)))
}

/// Coordinate of `a` minus coordinate of `b` along `axis`.
pub fn axis_offset(pose: &Pose, a: JointId, b: JointId, axis: Axis) -> f64 {
    pose.position(a)[axis.index()] - pose.position(b)[axis.index()]
}

/// Acute angle in degrees between segment `a→b` and the vertical axis:
/// 0 for a vertical segment, 90 for a horizontal one.
pub fn segment_vertical_angle(pose: &Pose, a: JointId, b: JointId) -> Result<f64, MotionError> {
    let d = sub(pose.position(b), pose.position(a));
    let n = norm(d);
    if n < MIN_SEGMENT_LENGTH {
        return Err(MotionError::DegenerateGeometry(format!(
            "zero-length segment {a}-{b}"
        )));
    }
    let cos = (d[1].abs() / n).min(1.0);
    Ok(cos.acos().to_degrees())
}

pub fn ground_height(pose: &Pose, j: JointId) -> f64 {
    pose.position(j)[1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSequence {
    frames: Vec<Pose>,
    fps: f64,
}

impl MotionSequence {
    pub fn new(frames: Vec<Pose>, fps: f64) -> Result<Self, MotionError> {
        if frames.is_empty() {
            return Err(MotionError::Invalid("motion has no frames".into()));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(MotionError::Invalid(format!("fps must be positive, got {fps}")));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[Pose] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// First `n` frames (at least one).
    pub fn truncated(&self, n: usize) -> MotionSequence {
        let n = n.clamp(1, self.frames.len());
        MotionSequence {
            frames: self.frames[..n].to_vec(),
            fps: self.fps,
        }
    }

    /// Shift vertically so the lowest foot joint over the whole sequence sits on Y = 0.
    pub fn ground_normalized(&self) -> MotionSequence {
        let min_foot = self
            .frames
            .iter()
            .flat_map(|p| [JointId::LeftFoot, JointId::RightFoot].map(|j| ground_height(p, j)))
            .fold(f64::INFINITY, f64::min);
        MotionSequence {
            frames: self
                .frames
                .iter()
                .map(|p| p.translated([0.0, -min_foot, 0.0]))
                .collect(),
            fps: self.fps,
        }
    }

    /// Round every coordinate to the 9-significant-digit form used on disk.
    pub fn canonicalized(&self) -> MotionSequence {
        let frames = self
            .frames
            .iter()
            .map(|p| {
                let mut positions = *p.positions();
                for c in positions.iter_mut().flat_map(|v| v.iter_mut()) {
                    *c = io::round_sig9(*c);
                }
                Pose { positions }
            })
            .collect();
        MotionSequence {
            frames,
            fps: io::round_sig9(self.fps),
        }
    }
}
