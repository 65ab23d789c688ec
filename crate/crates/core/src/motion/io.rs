use std::fmt::Write as _;
use std::path::Path;

use super::{JointId, MotionError, MotionSequence, Pose, NUM_JOINTS};

pub const MOTION_HEADER: &str = "POSECODEC-MOTION v1";

/// Round to 9 significant decimal digits.
pub(crate) fn round_sig9(v: f64) -> f64 {
    format!("{v:.8e}").parse().expect("formatted float parses")
}

/// Canonical text for a decimal: the shortest representation of the value
/// rounded to 9 significant digits.
pub(crate) fn format_decimal(v: f64) -> String {
    format!("{}", round_sig9(v))
}

pub fn format_motion(motion: &MotionSequence) -> String {
    let mut out = String::new();
    out.push_str(MOTION_HEADER);
    out.push('\n');
    let _ = writeln!(out, "fps={}", format_decimal(motion.fps()));
    let names: Vec<&str> = JointId::ALL.iter().map(|j| j.name()).collect();
    let _ = writeln!(out, "joints={}", names.join(","));
    for pose in motion.frames() {
        let line: Vec<String> = pose.to_flat().into_iter().map(format_decimal).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_motion(text: &str) -> Result<MotionSequence, MotionError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let perr = |line: usize, message: String| MotionError::ParseError { line, message };

    match lines.next() {
        Some((_, l)) if l == MOTION_HEADER => {}
        Some((n, l)) => return Err(perr(n, format!("expected header `{MOTION_HEADER}`, got `{l}`"))),
        None => return Err(perr(1, "empty file".into())),
    }

    let (n, fps_line) = lines.next().ok_or_else(|| perr(2, "missing fps line".into()))?;
    let fps: f64 = fps_line
        .strip_prefix("fps=")
        .ok_or_else(|| perr(n, format!("expected `fps=<float>`, got `{fps_line}`")))?
        .trim()
        .parse()
        .map_err(|e| perr(n, format!("bad fps: {e}")))?;

    let (n, joints_line) = lines.next().ok_or_else(|| perr(3, "missing joints line".into()))?;
    let names = joints_line
        .strip_prefix("joints=")
        .ok_or_else(|| perr(n, format!("expected `joints=<names>`, got `{joints_line}`")))?;
    let names: Vec<&str> = names.split(',').map(str::trim).collect();
    if names.len() != NUM_JOINTS {
        return Err(MotionError::SchemaMismatch(format!(
            "header lists {} joints, expected {NUM_JOINTS}",
            names.len()
        )));
    }
    for (i, name) in names.iter().enumerate() {
        if JointId::from_name(name) != Some(JointId::ALL[i]) {
            return Err(MotionError::SchemaMismatch(format!(
                "joint {i} is `{name}`, expected `{}`",
                JointId::ALL[i]
            )));
        }
    }

    let mut frames = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let frame = frames.len();
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != NUM_JOINTS * 3 {
            return Err(MotionError::SchemaMismatch(format!(
                "frame {frame} (line {n}) has {} values, expected {} ({} joints)",
                fields.len(),
                NUM_JOINTS * 3,
                NUM_JOINTS
            )));
        }
        let values = fields
            .iter()
            .enumerate()
            .map(|(k, f)| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| perr(n, format!("frame {frame}, field {k}: invalid number `{f}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        frames.push(Pose::from_flat(&values)?);
    }
    MotionSequence::new(frames, fps)
}

pub fn save_motion(motion: &MotionSequence, path: impl AsRef<Path>) -> Result<(), MotionError> {
    let path = path.as_ref();
    std::fs::write(path, format_motion(motion)).map_err(|e| MotionError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<MotionSequence, MotionError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| MotionError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_motion(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_motion() -> MotionSequence {
        let frames = (0..3)
            .map(|t| {
                let mut p = [[0.0; 3]; NUM_JOINTS];
                for (j, v) in p.iter_mut().enumerate() {
                    *v = [0.125 * j as f64, 1.5 - 0.0625 * t as f64, -0.25 + j as f64 / 64.0];
                }
                Pose::new(p).unwrap()
            })
            .collect();
        MotionSequence::new(frames, 20.0).unwrap()
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.motion");
        let m = small_motion();
        save_motion(&m, &path).unwrap();
        assert_eq!(load_motion(&path).unwrap(), m);
    }

    #[test]
    fn wrong_joint_count_is_schema_mismatch() {
        let text = format_motion(&small_motion());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let truncated: Vec<&str> = lines[3].split(' ').take(63).collect();
        lines[3] = truncated.join(" ");
        let err = parse_motion(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, MotionError::SchemaMismatch(_)), "{err}");

        let names: Vec<&str> = JointId::ALL.iter().take(21).map(|j| j.name()).collect();
        let header = format!("{MOTION_HEADER}\nfps=20\njoints={}\n", names.join(","));
        assert!(matches!(parse_motion(&header), Err(MotionError::SchemaMismatch(_))));
    }

    #[test]
    fn malformed_number_names_frame() {
        let text = format_motion(&small_motion());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[4] = lines[4].replacen("0.125", "0.1x5", 1);
        let err = parse_motion(&lines.join("\n")).unwrap_err();
        match err {
            MotionError::ParseError { line, message } => {
                assert_eq!(line, 5);
                assert!(message.contains("frame 1"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_header() {
        assert!(matches!(
            parse_motion("POSECODEC-MOTION v2\n"),
            Err(MotionError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_decimal(0.1234567891234), "0.123456789");
        assert_eq!(format_decimal(1234.56789123), "1234.56789");
        assert_eq!(format_decimal(0.5), "0.5");
    }

    proptest! {
        #[test]
        fn canonical_motions_round_trip(values in proptest::collection::vec(-3.0f64..3.0, 66 * 2), fps in 1.0f64..120.0) {
            let frames = values.chunks(66).map(|c| Pose::from_flat(c).unwrap()).collect();
            let m = MotionSequence::new(frames, fps).unwrap().canonicalized();
            prop_assert_eq!(parse_motion(&format_motion(&m)).unwrap(), m);
        }
    }
}
