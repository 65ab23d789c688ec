//! Evaluation metrics over pluggable feature extractors.
//!
//! Frechet distance, R-Precision, MM-Dist, Diversity, MModality and AITS.
//! Sampled metrics take an explicit seed. Diversity and MModality also have
//! exhaustive-pair variants.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{HashingEmbedder, TextEmbedder};
use crate::motion::{joint_angle, joint_distance, segment_vertical_angle, JointId, MotionError, MotionSequence};
use crate::rng::XorShift64Star;

/// Largest tolerated `|A - A^T|` entry for covariance inputs.
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_POOL_SIZE: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    NonSymmetricInput(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pool size {pool} exceeds corpus size {corpus}")]
    PoolTooLarge { pool: usize, corpus: usize },
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

/// Motion and text mapped into the same `dim()`-sized space.
pub trait FeatureExtractor: Send + Sync {
    /// Identifier that must match for two metric values to be comparable.
    fn version(&self) -> &str;
    fn dim(&self) -> usize;
    fn motion_features(&self, motion: &MotionSequence) -> Result<Vec<f64>, EvalError>;
    fn text_features(&self, text: &str) -> Vec<f64>;
}

pub const GEOMETRIC_DIM: usize = 32;
const GEOMETRIC_SIGNALS: usize = GEOMETRIC_DIM / 2;

/// Mean and standard deviation over time of 16 per-frame geometric signals.
///
/// Signals, in order: left and right knee angle, left and right elbow angle,
/// left and right thigh inclination, left and right upper-arm inclination
/// (all in radians), pelvis height, head height, left and right wrist height
/// above the pelvis, wrist-to-wrist distance, foot-to-foot distance, left
/// wrist to left foot distance, and horizontal pelvis speed (m/s). The text
/// side is a 32-bin hashed bag of words.
#[derive(Debug, Clone, Default)]
pub struct GeometricExtractor;

impl GeometricExtractor {
    pub const VERSION: &'static str = "geometric-v1";

    fn frame_signals(motion: &MotionSequence) -> Result<Vec<[f64; GEOMETRIC_SIGNALS]>, EvalError> {
        use JointId::*;
        let frames = motion.frames();
        let mut out = Vec::with_capacity(frames.len());
        for (t, p) in frames.iter().enumerate() {
            let rad = |deg: f64| deg.to_radians();
            let pelvis_y = p.position(Pelvis)[1];
            let (a, b) = if frames.len() < 2 {
                (t, t)
            } else if t == 0 {
                (0, 1)
            } else {
                (t - 1, t)
            };
            let (pa, pb) = (frames[a].position(Pelvis), frames[b].position(Pelvis));
            let speed = ((pb[0] - pa[0]).powi(2) + (pb[2] - pa[2]).powi(2)).sqrt() * motion.fps();
            out.push([
                rad(joint_angle(p, LeftHip, LeftKnee, LeftAnkle)?),
                rad(joint_angle(p, RightHip, RightKnee, RightAnkle)?),
                rad(joint_angle(p, LeftShoulder, LeftElbow, LeftWrist)?),
                rad(joint_angle(p, RightShoulder, RightElbow, RightWrist)?),
                rad(segment_vertical_angle(p, LeftHip, LeftKnee)?),
                rad(segment_vertical_angle(p, RightHip, RightKnee)?),
                rad(segment_vertical_angle(p, LeftShoulder, LeftElbow)?),
                rad(segment_vertical_angle(p, RightShoulder, RightElbow)?),
                pelvis_y,
                p.position(Head)[1],
                p.position(LeftWrist)[1] - pelvis_y,
                p.position(RightWrist)[1] - pelvis_y,
                joint_distance(p, LeftWrist, RightWrist),
                joint_distance(p, LeftFoot, RightFoot),
                joint_distance(p, LeftWrist, LeftFoot),
                speed,
            ]);
        }
        Ok(out)
    }
}

impl FeatureExtractor for GeometricExtractor {
    fn version(&self) -> &str {
        Self::VERSION
    }

    fn dim(&self) -> usize {
        GEOMETRIC_DIM
    }

    fn motion_features(&self, motion: &MotionSequence) -> Result<Vec<f64>, EvalError> {
        if motion.is_empty() {
            return Err(EvalError::InsufficientSamples("motion has no frames".into()));
        }
        let sig = Self::frame_signals(motion)?;
        let n = sig.len() as f64;
        let mut out = vec![0.0; GEOMETRIC_DIM];
        for k in 0..GEOMETRIC_SIGNALS {
            let mean = sig.iter().map(|s| s[k]).sum::<f64>() / n;
            let var = sig.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / n;
            out[k] = mean;
            out[GEOMETRIC_SIGNALS + k] = var.sqrt();
        }
        Ok(out)
    }

    fn text_features(&self, text: &str) -> Vec<f64> {
        HashingEmbedder { bins: GEOMETRIC_DIM }.embed(text)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check_dims(rows: &[Vec<f64>], what: &str) -> Result<usize, EvalError> {
    let d = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != d) {
        return Err(EvalError::DimensionMismatch(format!("{what} row {i} has {} values, expected {d}", rows[i].len())));
    }
    Ok(d)
}

/// Sample mean and unbiased covariance of feature rows.
pub fn mean_and_covariance(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>), EvalError> {
    if features.len() < 2 {
        return Err(EvalError::InsufficientSamples(format!("covariance needs 2 rows, got {}", features.len())));
    }
    let d = check_dims(features, "feature")?;
    let n = features.len();
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mu = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mu, cov))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), EvalError> {
    if !m.is_square() {
        return Err(EvalError::DimensionMismatch(format!("covariance is {}x{}", m.nrows(), m.ncols())));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE {
        return Err(EvalError::NonSymmetricInput(asym));
    }
    Ok(())
}

/// Square root of a symmetric PSD matrix; negative eigenvalues are clamped to 0.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))`.
///
/// The trace of `(S1 S2)^(1/2)` is taken as the trace of the square root of
/// the symmetric matrix `S1^(1/2) S2 S1^(1/2)`, which has the same spectrum.
pub fn frechet_distance(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64, EvalError> {
    check_symmetric(cov1)?;
    check_symmetric(cov2)?;
    let d = mu1.len();
    if mu2.len() != d || cov1.nrows() != d || cov2.nrows() != d {
        return Err(EvalError::DimensionMismatch(format!(
            "means {} and {}, covariances {} and {}",
            d,
            mu2.len(),
            cov1.nrows(),
            cov2.nrows()
        )));
    }
    let s1 = sqrtm_psd(cov1);
    let inner = &s1 * cov2 * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let diff = (mu1 - mu2).norm_squared();
    Ok((diff + cov1.trace() + cov2.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Frechet distance between Gaussians fitted to two feature sets.
pub fn fid(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64, EvalError> {
    let (m1, c1) = mean_and_covariance(real)?;
    let (m2, c2) = mean_and_covariance(generated)?;
    frechet_distance(&m1, &c1, &m2, &c2)
}

/// Top-k retrieval accuracy of the true text among `pool_size` candidates.
///
/// For query `i` the pool is text `i` plus `pool_size - 1` other texts drawn
/// without replacement. Candidates are ranked by Euclidean distance to motion
/// `i`; equal distances are ordered by corpus index.
pub fn r_precision(motion: &[Vec<f64>], text: &[Vec<f64>], pool_size: usize, k: usize, seed: u64) -> Result<f64, EvalError> {
    let n = motion.len();
    if text.len() != n {
        return Err(EvalError::DimensionMismatch(format!("{n} motion rows but {} text rows", text.len())));
    }
    if n == 0 || pool_size == 0 || k == 0 {
        return Err(EvalError::InsufficientSamples("r-precision needs a non-empty corpus, pool and k".into()));
    }
    if pool_size > n {
        return Err(EvalError::PoolTooLarge { pool: pool_size, corpus: n });
    }
    let mut rng = XorShift64Star::new(seed);
    let mut hits = 0usize;
    for i in 0..n {
        let mut pool: Vec<usize> = rng
            .sample_without_replacement(n - 1, pool_size - 1)
            .into_iter()
            .map(|j| if j >= i { j + 1 } else { j })
            .collect();
        pool.push(i);
        let d_true = euclidean(&motion[i], &text[i]);
        let rank = 1 + pool
            .iter()
            .filter(|&&j| j != i)
            .filter(|&&j| {
                let d = euclidean(&motion[i], &text[j]);
                d < d_true || (d == d_true && j < i)
            })
            .count();
        if rank <= k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Mean distance between each text feature and its paired motion feature.
pub fn mm_dist(motion: &[Vec<f64>], text: &[Vec<f64>]) -> Result<f64, EvalError> {
    if motion.len() != text.len() {
        return Err(EvalError::DimensionMismatch(format!("{} motion rows but {} text rows", motion.len(), text.len())));
    }
    if motion.is_empty() {
        return Err(EvalError::InsufficientSamples("mm-dist needs at least one pair".into()));
    }
    Ok(motion.iter().zip(text).map(|(m, t)| euclidean(m, t)).sum::<f64>() / motion.len() as f64)
}

fn sampled_pair_mean(features: &[Vec<f64>], pairs: usize, rng: &mut XorShift64Star) -> f64 {
    let n = features.len();
    let total: f64 = (0..pairs)
        .map(|_| {
            let i = rng.below(n);
            let j = (i + 1 + rng.below(n - 1)) % n;
            euclidean(&features[i], &features[j])
        })
        .sum();
    total / pairs as f64
}

/// Sum in ascending order, so the result depends only on the multiset of terms.
fn sorted_mean(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>() / terms.len() as f64
}

fn exhaustive_pair_mean(features: &[Vec<f64>]) -> f64 {
    let n = features.len();
    let mut terms = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            terms.push(euclidean(&features[i], &features[j]));
        }
    }
    sorted_mean(terms)
}

/// Mean distance over `pairs` random pairs of distinct samples.
pub fn diversity(features: &[Vec<f64>], pairs: usize, seed: u64) -> Result<f64, EvalError> {
    if features.len() < 2 || pairs == 0 {
        return Err(EvalError::InsufficientSamples(format!("diversity needs 2 features and 1 pair, got {} and {pairs}", features.len())));
    }
    check_dims(features, "feature")?;
    Ok(sampled_pair_mean(features, pairs, &mut XorShift64Star::new(seed)))
}

/// Mean distance over every unordered pair of distinct samples.
pub fn diversity_exhaustive(features: &[Vec<f64>]) -> Result<f64, EvalError> {
    if features.len() < 2 {
        return Err(EvalError::InsufficientSamples(format!("diversity needs 2 features, got {}", features.len())));
    }
    check_dims(features, "feature")?;
    Ok(exhaustive_pair_mean(features))
}

fn check_groups(groups: &[Vec<Vec<f64>>]) -> Result<(), EvalError> {
    if groups.is_empty() {
        return Err(EvalError::InsufficientSamples("mmodality needs at least one text".into()));
    }
    if let Some(i) = groups.iter().position(|g| g.len() < 2) {
        return Err(EvalError::InsufficientSamples(format!("text {i} has {} generations, need 2", groups[i].len())));
    }
    for g in groups {
        check_dims(g, "generation")?;
    }
    Ok(())
}

/// Per text, mean distance over `pairs_per_text` random pairs of its
/// generations; averaged over texts.
pub fn mmodality(per_text: &[Vec<Vec<f64>>], pairs_per_text: usize, seed: u64) -> Result<f64, EvalError> {
    check_groups(per_text)?;
    if pairs_per_text == 0 {
        return Err(EvalError::InsufficientSamples("mmodality needs at least one pair per text".into()));
    }
    let mut rng = XorShift64Star::new(seed);
    Ok(per_text.iter().map(|g| sampled_pair_mean(g, pairs_per_text, &mut rng)).sum::<f64>() / per_text.len() as f64)
}

pub fn mmodality_exhaustive(per_text: &[Vec<Vec<f64>>]) -> Result<f64, EvalError> {
    check_groups(per_text)?;
    Ok(sorted_mean(per_text.iter().map(|g| exhaustive_pair_mean(g)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AitsReport {
    pub seconds_per_sentence: f64,
    pub sentences: usize,
    pub environment: String,
}

/// Short description of the machine and build the timing was taken on.
pub fn environment_descriptor() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    format!("{}-{} threads={threads} build={profile}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Average wall-clock time of `n` calls to `run`. Anything the caller loads
/// before this call is excluded from the measurement.
pub fn aits<T, E>(n: usize, mut run: impl FnMut(usize) -> Result<T, E>) -> Result<AitsReport, E>
where
    E: From<EvalError>,
{
    if n == 0 {
        return Err(EvalError::InsufficientSamples("aits needs at least one sentence".into()).into());
    }
    let start = Instant::now();
    for i in 0..n {
        std::hint::black_box(run(i)?);
    }
    Ok(AitsReport {
        seconds_per_sentence: start.elapsed().as_secs_f64() / n as f64,
        sentences: n,
        environment: environment_descriptor(),
    })
}

/// Metric report with a provenance block, as tab-separated lines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<(String, f64)>,
    pub provenance: Vec<(String, String)>,
}

impl MetricReport {
    pub fn push(&mut self, name: &str, value: f64) {
        self.metrics.push((name.to_string(), value));
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.provenance.push((key.to_string(), value.to_string()));
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        for (k, v) in &self.metrics {
            out.push_str(&format!("{k}\t{v:.6}\n"));
        }
        out.push_str("# provenance\n");
        for (k, v) in &self.provenance {
            out.push_str(&format!("# {k}\t{v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_case() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let d = frechet_distance(&DVector::from_element(1, 0.0), &one, &DVector::from_element(1, 3.0), &one).unwrap();
        assert_eq!(d, 9.0);
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let mut c = DMatrix::identity(2, 2);
        c[(0, 1)] = 1e-6;
        let mu = DVector::zeros(2);
        assert!(matches!(frechet_distance(&mu, &c, &mu, &DMatrix::identity(2, 2)), Err(EvalError::NonSymmetricInput(_))));
    }

    #[test]
    fn two_at_distance_two() {
        let f = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        assert_eq!(diversity_exhaustive(&f).unwrap(), 2.0);
        assert_eq!(diversity(&f, 7, 1).unwrap(), 2.0);
    }
}
