//! Deterministic factorization of motion into K-hot pose-code sequences.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{classify, Codebook, CodebookError, Measure, NUM_CATEGORIES, NUM_CODES};
use crate::motion::{
    axis_offset, ground_height, joint_angle, joint_distance, segment_vertical_angle, MotionError,
    MotionSequence, Pose,
};

pub const CODES_HEADER: &str = "POSECODEC-CODES v1";
/// Width of a K-hot step vector: every code plus the end indicator.
pub const KHOT_WIDTH: usize = NUM_CODES + 1;
pub const END_BIT: usize = NUM_CODES;
pub const DEFAULT_DOWNSAMPLE: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("category `{category}`: {source}")]
    Geometry {
        category: String,
        #[source]
        source: MotionError,
    },
    #[error("category `{category}`: {source}")]
    Classify {
        category: String,
        #[source]
        source: CodebookError,
    },
    #[error("motion has {frames} frames, fewer than the downsampling rate {l}")]
    TooShort { frames: usize, l: usize },
    #[error("downsampling rate must be at least 1")]
    ZeroDownsample,
    #[error("mutual exclusivity violated in category {category}: {active} active codes")]
    MutualExclusivityViolation { category: usize, active: usize },
    #[error("invalid code {local} for category {category} ({count} codes)")]
    InvalidCode { category: usize, local: usize, count: usize },
    #[error("k-hot vector has width {0}, expected {KHOT_WIDTH}")]
    WrongWidth(usize),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid code sequence: {0}")]
    Invalid(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// One encoded time step: a local code index per category plus the end flag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeStep {
    pub assignment: Vec<u8>,
    pub is_end: bool,
}

impl CodeStep {
    pub fn new(assignment: Vec<u8>, is_end: bool, cb: &Codebook) -> Result<Self, EncodeError> {
        let step = Self { assignment, is_end };
        step.validate(cb)?;
        Ok(step)
    }

    pub fn validate(&self, cb: &Codebook) -> Result<(), EncodeError> {
        if self.assignment.len() != cb.num_categories() {
            return Err(EncodeError::Invalid(format!(
                "step has {} assignments, expected {}",
                self.assignment.len(),
                cb.num_categories()
            )));
        }
        for (cat, &local) in cb.categories().iter().zip(&self.assignment) {
            if local as usize >= cat.code_count {
                return Err(EncodeError::InvalidCode {
                    category: cat.category_id,
                    local: local as usize,
                    count: cat.code_count,
                });
            }
        }
        Ok(())
    }

    /// Global ids of the active codes, one per category.
    pub fn global_ids(&self, cb: &Codebook) -> Vec<usize> {
        cb.categories()
            .iter()
            .zip(&self.assignment)
            .map(|(c, &l)| c.global_id(l as usize))
            .collect()
    }

    pub fn to_khot(&self, cb: &Codebook) -> Vec<bool> {
        let mut bits = vec![false; KHOT_WIDTH];
        for g in self.global_ids(cb) {
            bits[g] = true;
        }
        bits[END_BIT] = self.is_end;
        bits
    }

    pub fn to_khot_f64(&self, cb: &Codebook) -> Vec<f64> {
        self.to_khot(cb).into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn from_khot(bits: &[bool], cb: &Codebook) -> Result<Self, EncodeError> {
        if bits.len() != KHOT_WIDTH {
            return Err(EncodeError::WrongWidth(bits.len()));
        }
        let mut assignment = Vec::with_capacity(cb.num_categories());
        for cat in cb.categories() {
            let active: Vec<usize> = (0..cat.code_count).filter(|&l| bits[cat.global_id(l)]).collect();
            if active.len() != 1 {
                return Err(EncodeError::MutualExclusivityViolation {
                    category: cat.category_id,
                    active: active.len(),
                });
            }
            assignment.push(active[0] as u8);
        }
        Ok(Self { assignment, is_end: bits[END_BIT] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSequence {
    pub steps: Vec<CodeStep>,
    pub downsample: usize,
    pub source_fps: f64,
}

impl CodeSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, cb: &Codebook) -> Result<(), EncodeError> {
        for (i, s) in self.steps.iter().enumerate() {
            s.validate(cb)?;
            if s.is_end && i + 1 != self.steps.len() {
                return Err(EncodeError::Invalid(format!("end flag on non-final step {i}")));
            }
        }
        Ok(())
    }

    /// `L x 393` K-hot matrix in row-major order.
    pub fn khot_matrix(&self, cb: &Codebook) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.to_khot_f64(cb)).collect()
    }
}

/// Measure one category's quantity on a pose.
pub fn measure(pose: &Pose, m: Measure) -> Result<f64, MotionError> {
    Ok(match m {
        Measure::Angle(a, b, c) => joint_angle(pose, a, b, c)?,
        Measure::Distance(a, b) => joint_distance(pose, a, b),
        Measure::RelPos(a, b, axis) => axis_offset(pose, a, b, axis),
        Measure::Orientation(a, b) => segment_vertical_angle(pose, a, b)?,
        Measure::Ground(j) => ground_height(pose, j),
    })
}

/// Raw measured value per category, in category order.
pub fn measure_pose(pose: &Pose, cb: &Codebook) -> Result<Vec<f64>, EncodeError> {
    cb.categories()
        .iter()
        .map(|cat| {
            measure(pose, cat.measure).map_err(|source| EncodeError::Geometry {
                category: cat.name.clone(),
                source,
            })
        })
        .collect()
}

pub fn parse_pose(pose: &Pose, cb: &Codebook) -> Result<CodeStep, EncodeError> {
    let values = measure_pose(pose, cb)?;
    let assignment = cb
        .categories()
        .iter()
        .zip(values)
        .map(|(cat, v)| {
            classify(cat.kind, v)
                .map(|b| b as u8)
                .map_err(|source| EncodeError::Classify { category: cat.name.clone(), source })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CodeStep { assignment, is_end: false })
}

/// Encode every `l`-th frame starting at frame 0; trailing frames beyond
/// `floor(T / l) * l` are dropped and the last step carries the end flag.
pub fn encode_motion(motion: &MotionSequence, cb: &Codebook, l: usize) -> Result<CodeSequence, EncodeError> {
    if l == 0 {
        return Err(EncodeError::ZeroDownsample);
    }
    let t = motion.len();
    if t < l {
        return Err(EncodeError::TooShort { frames: t, l });
    }
    let steps_len = t / l;
    let mut steps = (0..steps_len)
        .map(|i| parse_pose(&motion.frames()[i * l], cb))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(last) = steps.last_mut() {
        last.is_end = true;
    }
    Ok(CodeSequence {
        steps,
        downsample: l,
        source_fps: motion.fps(),
    })
}

pub fn format_codes(seq: &CodeSequence) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CODES_HEADER}");
    let _ = writeln!(out, "l={}", seq.downsample);
    let _ = writeln!(out, "fps={}", crate::motion::format_decimal(seq.source_fps));
    for s in &seq.steps {
        let mut line: Vec<String> = s.assignment.iter().map(|a| a.to_string()).collect();
        line.push(if s.is_end { "E".into() } else { "-".into() });
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_codes(text: &str, cb: &Codebook) -> Result<CodeSequence, EncodeError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let perr = |line: usize, message: String| EncodeError::Parse { line, message };
    match lines.next() {
        Some((_, l)) if l == CODES_HEADER => {}
        Some((n, l)) => return Err(perr(n, format!("expected header `{CODES_HEADER}`, got `{l}`"))),
        None => return Err(perr(1, "empty file".into())),
    }
    let (n, l_line) = lines.next().ok_or_else(|| perr(2, "missing l line".into()))?;
    let downsample: usize = l_line
        .strip_prefix("l=")
        .and_then(|v| v.trim().parse().ok())
        .filter(|&v| v >= 1)
        .ok_or_else(|| perr(n, format!("expected `l=<positive int>`, got `{l_line}`")))?;
    let (n, fps_line) = lines.next().ok_or_else(|| perr(3, "missing fps line".into()))?;
    let source_fps: f64 = fps_line
        .strip_prefix("fps=")
        .and_then(|v| v.trim().parse().ok())
        .filter(|v: &f64| v.is_finite() && *v > 0.0)
        .ok_or_else(|| perr(n, format!("expected `fps=<positive float>`, got `{fps_line}`")))?;

    let mut steps = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != NUM_CATEGORIES + 1 {
            return Err(perr(
                n,
                format!("step {} has {} fields, expected {}", steps.len(), fields.len(), NUM_CATEGORIES + 1),
            ));
        }
        let is_end = match fields[NUM_CATEGORIES] {
            "E" => true,
            "-" => false,
            other => return Err(perr(n, format!("end flag must be `E` or `-`, got `{other}`"))),
        };
        let assignment = fields[..NUM_CATEGORIES]
            .iter()
            .enumerate()
            .map(|(k, f)| {
                f.parse::<u8>()
                    .map_err(|_| perr(n, format!("step {}, category {k}: invalid index `{f}`", steps.len())))
            })
            .collect::<Result<Vec<_>, _>>()?;
        steps.push(CodeStep { assignment, is_end });
    }
    let seq = CodeSequence { steps, downsample, source_fps };
    seq.validate(cb)?;
    Ok(seq)
}

pub fn save_codes(seq: &CodeSequence, path: impl AsRef<Path>) -> Result<(), EncodeError> {
    let path = path.as_ref();
    std::fs::write(path, format_codes(seq)).map_err(|e| EncodeError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_codes(path: impl AsRef<Path>, cb: &Codebook) -> Result<CodeSequence, EncodeError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EncodeError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_codes(&text, cb)
}
