//! The fixed pose codebook: 70 categories, 392 codes.
//!
//! Each category measures one geometric quantity on a pose (an angle, a
//! distance, a signed axis offset, a segment's tilt from vertical, or a
//! joint's height) and bins it with the thresholds of its [`ThresholdKind`].
//! Codes inside a category are mutually exclusive; a pose activates exactly
//! one code per category.

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::{Axis, JointId};

pub const NUM_CATEGORIES: usize = 70;
pub const NUM_CODES: usize = 392;
/// Width of the learnable code embeddings at full scale.
pub const DEFAULT_EMBED_DIM: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodebookError {
    #[error("value {value} out of domain for {kind:?}")]
    OutOfDomain { kind: ThresholdKind, value: f64 },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ThresholdKind {
    Angle,
    Distance,
    RelPosX,
    RelPosY,
    RelPosZ,
    RelOrientation,
    GroundContact,
}

const ANGLE_CUTS: [f64; 17] = [
    10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 110.0, 120.0, 130.0, 140.0,
    150.0, 160.0, 170.0,
];
const ANGLE_LABELS: [&str; 18] = [
    "bent to almost 10 degrees",
    "bent to almost 20 degrees",
    "bent to almost 30 degrees",
    "bent to almost 40 degrees",
    "bent to almost 50 degrees",
    "bent to almost 60 degrees",
    "bent to almost 70 degrees",
    "bent to almost 80 degrees",
    "bent to almost 90 degrees",
    "bent to almost 100 degrees",
    "bent to almost 110 degrees",
    "bent to almost 120 degrees",
    "bent to almost 130 degrees",
    "bent to almost 140 degrees",
    "bent to almost 150 degrees",
    "bent to almost 160 degrees",
    "bent to almost 170 degrees",
    "straight",
];
const DISTANCE_CUTS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
const DISTANCE_LABELS: [&str; 10] = [
    "very close",
    "slightly close",
    "close",
    "almost shoulder width apart",
    "shoulder width apart",
    "almost spread",
    "spread",
    "slightly wide",
    "wide",
    "very wide",
];
const RELPOS_CUTS: [f64; 2] = [-0.15, 0.15];
const RELPOS_X_LABELS: [&str; 3] = ["at the right of", "ignored", "at the left of"];
const RELPOS_Y_LABELS: [&str; 3] = ["below", "ignored", "above"];
const RELPOS_Z_LABELS: [&str; 3] = ["behind", "ignored", "in front of"];
const ORIENT_CUTS: [f64; 2] = [10.0, 80.0];
const ORIENT_LABELS: [&str; 3] = ["vertical", "ignored", "horizontal"];
const GROUND_CUTS: [f64; 1] = [0.1];
const GROUND_LABELS: [&str; 2] = ["on the ground", "ground-ignored"];

impl ThresholdKind {
    pub const ALL: [ThresholdKind; 7] = [
        ThresholdKind::Angle,
        ThresholdKind::Distance,
        ThresholdKind::RelPosX,
        ThresholdKind::RelPosY,
        ThresholdKind::RelPosZ,
        ThresholdKind::RelOrientation,
        ThresholdKind::GroundContact,
    ];

    /// Ascending bin cutoffs. Bin `k` is `cuts[k-1] < x <= cuts[k]`, with the
    /// first bin open below and the last open above.
    pub fn cutoffs(self) -> &'static [f64] {
        match self {
            ThresholdKind::Angle => &ANGLE_CUTS,
            ThresholdKind::Distance => &DISTANCE_CUTS,
            ThresholdKind::RelPosX | ThresholdKind::RelPosY | ThresholdKind::RelPosZ => &RELPOS_CUTS,
            ThresholdKind::RelOrientation => &ORIENT_CUTS,
            ThresholdKind::GroundContact => &GROUND_CUTS,
        }
    }

    pub fn labels(self) -> &'static [&'static str] {
        match self {
            ThresholdKind::Angle => &ANGLE_LABELS,
            ThresholdKind::Distance => &DISTANCE_LABELS,
            ThresholdKind::RelPosX => &RELPOS_X_LABELS,
            ThresholdKind::RelPosY => &RELPOS_Y_LABELS,
            ThresholdKind::RelPosZ => &RELPOS_Z_LABELS,
            ThresholdKind::RelOrientation => &ORIENT_LABELS,
            ThresholdKind::GroundContact => &GROUND_LABELS,
        }
    }

    pub fn code_count(self) -> usize {
        self.cutoffs().len() + 1
    }

    /// Human-readable threshold rule for bin `local`, e.g. `10 < x <= 20`.
    pub fn rule(self, local: usize) -> String {
        let cuts = self.cutoffs();
        if local == 0 {
            format!("x <= {}", cuts[0])
        } else if local == cuts.len() {
            format!("x > {}", cuts[cuts.len() - 1])
        } else {
            format!("{} < x <= {}", cuts[local - 1], cuts[local])
        }
    }
}

/// Bin a measured quantity. Angles must lie in `[0, 180]`.
pub fn classify(kind: ThresholdKind, value: f64) -> Result<usize, CodebookError> {
    if !value.is_finite() || (kind == ThresholdKind::Angle && !(0.0..=180.0).contains(&value)) {
        return Err(CodebookError::OutOfDomain { kind, value });
    }
    Ok(kind.cutoffs().iter().take_while(|&&c| value > c).count())
}

/// What a category measures and on which joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    /// Interior angle at the middle joint.
    Angle(JointId, JointId, JointId),
    Distance(JointId, JointId),
    /// First joint minus second along the axis.
    RelPos(JointId, JointId, Axis),
    /// Tilt of the segment from vertical, degrees.
    Orientation(JointId, JointId),
    Ground(JointId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub category_id: usize,
    pub name: String,
    pub kind: ThresholdKind,
    pub measure: Measure,
    pub code_offset: usize,
    pub code_count: usize,
    /// Body-part words as they appear in the name, used to build code semantics.
    subject: String,
    object: Option<String>,
}

impl CategorySpec {
    pub fn joints(&self) -> Vec<JointId> {
        match self.measure {
            Measure::Angle(a, b, c) => vec![a, b, c],
            Measure::Distance(a, b) | Measure::RelPos(a, b, _) | Measure::Orientation(a, b) => {
                vec![a, b]
            }
            Measure::Ground(a) => vec![a],
        }
    }

    pub fn global_id(&self, local: usize) -> usize {
        debug_assert!(local < self.code_count);
        self.code_offset + local
    }

    fn code_semantics(&self, local: usize) -> String {
        let label = self.kind.labels()[local];
        let s = &self.subject;
        match (self.kind, &self.object) {
            (ThresholdKind::Angle, _) | (ThresholdKind::GroundContact, _) => format!("{s} {label}"),
            (ThresholdKind::Distance, Some(o)) => format!("{s} and {o} {label}"),
            (ThresholdKind::RelPosX | ThresholdKind::RelPosY | ThresholdKind::RelPosZ, Some(o)) => {
                if label == "ignored" {
                    format!("{} ignored", self.name)
                } else {
                    format!("{s} {label} {o}")
                }
            }
            (ThresholdKind::RelOrientation, Some(o)) => {
                if label == "ignored" {
                    format!("{s} vs {o} orientation ignored")
                } else {
                    format!("{s} vs {o} {label}")
                }
            }
            _ => unreachable!("pairwise category without object"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseCode {
    pub global_id: usize,
    pub category_id: usize,
    pub local_id: usize,
    pub semantics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    categories: Vec<CategorySpec>,
    codes: Vec<PoseCode>,
    embed_dim: usize,
}

/// Body-part word to skeleton joint. Hands are wrists and the torso is spine2.
pub fn body_word_joint(word: &str) -> Option<JointId> {
    use JointId::*;
    Some(match word {
        "L-knee" => LeftKnee,
        "R-knee" => RightKnee,
        "L-elbow" => LeftElbow,
        "R-elbow" => RightElbow,
        "L-hand" | "L-wrist" => LeftWrist,
        "R-hand" | "R-wrist" => RightWrist,
        "L-foot" => LeftFoot,
        "R-foot" => RightFoot,
        "L-shoulder" => LeftShoulder,
        "R-shoulder" => RightShoulder,
        "L-hip" => LeftHip,
        "R-hip" => RightHip,
        "L-ankle" => LeftAnkle,
        "R-ankle" => RightAnkle,
        "neck" => Neck,
        "pelvis" => Pelvis,
        "torso" => Spine2,
        _ => return None,
    })
}

const ANGLE_ROWS: [&str; 4] = ["L-knee", "R-knee", "L-elbow", "R-elbow"];

const DISTANCE_ROWS: [(&str, &str); 18] = [
    ("L-elbow", "R-elbow"),
    ("L-hand", "R-hand"),
    ("L-knee", "R-knee"),
    ("L-foot", "R-foot"),
    ("L-hand", "L-shoulder"),
    ("L-hand", "R-shoulder"),
    ("R-hand", "L-shoulder"),
    ("R-hand", "R-shoulder"),
    ("L-hand", "R-elbow"),
    ("R-hand", "L-elbow"),
    ("L-hand", "L-knee"),
    ("L-hand", "R-knee"),
    ("R-hand", "L-knee"),
    ("R-hand", "R-knee"),
    ("L-hand", "L-foot"),
    ("L-hand", "R-foot"),
    ("R-hand", "L-foot"),
    ("R-hand", "R-foot"),
];

/// Multi-axis rows expand to one category per listed axis.
const RELPOS_ROWS: [(&str, &str, &str); 21] = [
    ("L-shoulder", "R-shoulder", "YZ"),
    ("L-elbow", "R-elbow", "YZ"),
    ("L-hand", "R-hand", "XYZ"),
    ("neck", "pelvis", "XZ"),
    ("L-ankle", "neck", "Y"),
    ("R-ankle", "neck", "Y"),
    ("L-hip", "L-knee", "Y"),
    ("R-hip", "R-knee", "Y"),
    ("L-hand", "L-shoulder", "XY"),
    ("R-hand", "R-shoulder", "XY"),
    ("L-foot", "L-hip", "XY"),
    ("R-foot", "R-hip", "XY"),
    ("L-wrist", "neck", "Y"),
    ("R-wrist", "neck", "Y"),
    ("L-hand", "L-hip", "Y"),
    ("R-hand", "R-hip", "Y"),
    ("L-hand", "torso", "Z"),
    ("R-hand", "torso", "Z"),
    ("L-foot", "torso", "Z"),
    ("R-foot", "torso", "Z"),
    ("L-knee", "R-knee", "YZ"),
];

const ORIENT_ROWS: [(&str, &str); 13] = [
    ("L-hip", "L-knee"),
    ("R-hip", "R-knee"),
    ("L-knee", "L-ankle"),
    ("R-knee", "R-ankle"),
    ("L-shoulder", "L-elbow"),
    ("R-shoulder", "R-elbow"),
    ("L-elbow", "L-wrist"),
    ("R-elbow", "R-wrist"),
    ("pelvis", "L-shoulder"),
    ("pelvis", "R-shoulder"),
    ("pelvis", "neck"),
    ("L-hand", "R-hand"),
    ("L-foot", "R-foot"),
];

const GROUND_ROWS: [&str; 4] = ["L-knee", "R-knee", "L-foot", "R-foot"];

fn angle_triple(word: &str) -> (JointId, JointId, JointId) {
    use JointId::*;
    match word {
        "L-knee" => (LeftHip, LeftKnee, LeftAnkle),
        "R-knee" => (RightHip, RightKnee, RightAnkle),
        "L-elbow" => (LeftShoulder, LeftElbow, LeftWrist),
        "R-elbow" => (RightShoulder, RightElbow, RightWrist),
        _ => unreachable!("no angle triple for {word}"),
    }
}

fn joint(word: &str) -> JointId {
    body_word_joint(word).unwrap_or_else(|| panic!("unmapped body word {word}"))
}

fn build() -> Codebook {
    let mut categories = Vec::with_capacity(NUM_CATEGORIES);
    let mut push = |name: String, kind: ThresholdKind, measure: Measure, subject: &str, object: Option<&str>| {
        let code_offset = categories
            .last()
            .map(|c: &CategorySpec| c.code_offset + c.code_count)
            .unwrap_or(0);
        categories.push(CategorySpec {
            category_id: categories.len(),
            name,
            kind,
            measure,
            code_offset,
            code_count: kind.code_count(),
            subject: subject.to_string(),
            object: object.map(str::to_string),
        });
    };

    for w in ANGLE_ROWS {
        let (a, b, c) = angle_triple(w);
        push(format!("{w} angle"), ThresholdKind::Angle, Measure::Angle(a, b, c), w, None);
    }
    for (a, b) in DISTANCE_ROWS {
        push(
            format!("{a} vs {b} distance"),
            ThresholdKind::Distance,
            Measure::Distance(joint(a), joint(b)),
            a,
            Some(b),
        );
    }
    for (a, b, axes) in RELPOS_ROWS {
        for ax in axes.chars() {
            let (axis, kind) = match ax {
                'X' => (Axis::X, ThresholdKind::RelPosX),
                'Y' => (Axis::Y, ThresholdKind::RelPosY),
                'Z' => (Axis::Z, ThresholdKind::RelPosZ),
                _ => unreachable!(),
            };
            push(
                format!("{a} vs {b} ({ax})"),
                kind,
                Measure::RelPos(joint(a), joint(b), axis),
                a,
                Some(b),
            );
        }
    }
    for (a, b) in ORIENT_ROWS {
        push(
            format!("{a} vs {b} orientation"),
            ThresholdKind::RelOrientation,
            Measure::Orientation(joint(a), joint(b)),
            a,
            Some(b),
        );
    }
    for w in GROUND_ROWS {
        push(
            format!("{w} ground contact"),
            ThresholdKind::GroundContact,
            Measure::Ground(joint(w)),
            w,
            None,
        );
    }

    let codes = categories
        .iter()
        .flat_map(|c| {
            (0..c.code_count).map(move |local| PoseCode {
                global_id: c.code_offset + local,
                category_id: c.category_id,
                local_id: local,
                semantics: c.code_semantics(local),
            })
        })
        .collect();

    Codebook {
        categories,
        codes,
        embed_dim: DEFAULT_EMBED_DIM,
    }
}

/// The fixed 70-category / 392-code codebook.
pub fn build_default_codebook() -> Codebook {
    default_codebook().clone()
}

/// Shared instance of [`build_default_codebook`].
pub fn default_codebook() -> &'static Codebook {
    static CB: OnceLock<Codebook> = OnceLock::new();
    CB.get_or_init(build)
}

impl Codebook {
    pub fn categories(&self) -> &[CategorySpec] {
        &self.categories
    }

    pub fn codes(&self) -> &[PoseCode] {
        &self.codes
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_codes(&self) -> usize {
        self.codes.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn category(&self, id: usize) -> Result<&CategorySpec, CodebookError> {
        self.categories.get(id).ok_or(CodebookError::IndexOutOfRange {
            index: id,
            limit: self.categories.len(),
        })
    }

    pub fn code(&self, global_id: usize) -> Result<&PoseCode, CodebookError> {
        self.codes.get(global_id).ok_or(CodebookError::IndexOutOfRange {
            index: global_id,
            limit: self.codes.len(),
        })
    }

    pub fn semantics(&self, global_id: usize) -> Result<&str, CodebookError> {
        self.code(global_id).map(|c| c.semantics.as_str())
    }

    pub fn category_by_name(&self, name: &str) -> Option<&CategorySpec> {
        self.categories.iter().find(|c| c.name == name)
    }

    /// Full code table as tab-separated text with a header row.
    pub fn dump(&self) -> String {
        let mut out = String::from("global_id\tcategory\tsemantics\trule\n");
        for code in &self.codes {
            let cat = &self.categories[code.category_id];
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                code.global_id,
                cat.name,
                code.semantics,
                cat.kind.rule(code.local_id)
            );
        }
        out
    }

    /// Category table (index and name) as tab-separated text with a header row.
    pub fn category_table(&self) -> String {
        let mut out = String::from("category_id\tcategory\n");
        for c in &self.categories {
            let _ = writeln!(out, "{}\t{}", c.category_id, c.name);
        }
        out
    }

    /// Codes usable in one category, keyed by local id.
    pub fn category_code_table(&self, category_id: usize) -> Result<String, CodebookError> {
        let cat = self.category(category_id)?;
        let mut out = String::from("code_id\tsemantics\n");
        for local in 0..cat.code_count {
            let _ = writeln!(out, "{}\t{}", local, self.codes[cat.global_id(local)].semantics);
        }
        Ok(out)
    }
}
