//! Frame- and video-level scores.

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::view::{ReferenceSet, ViewLabel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub frame_index: usize,
    pub estimated_view: ViewLabel,
    /// 1 when the subject matches its reference in this frame.
    pub body_verdict: u8,
    /// Unit-norm identity embedding, absent when no face was detected.
    #[serde(default)]
    pub face_embedding: Option<Vec<f64>>,
}

/// Fraction of frames judged identity-consistent: k / T.
pub fn score_body(verdicts: &[u8]) -> Result<f64> {
    fraction(verdicts, "body score over zero frames")
}

/// Fraction of videos judged faithful to their prompt: k / N.
pub fn score_alignment(verdicts: &[u8]) -> Result<f64> {
    fraction(verdicts, "alignment score over zero videos")
}

fn fraction(bits: &[u8], what: &str) -> Result<f64> {
    if bits.is_empty() {
        return Err(BenchError::UndefinedMetric(what.into()));
    }
    if let Some(b) = bits.iter().find(|&&b| b > 1) {
        return Err(BenchError::Invalid(format!(
            "verdicts must be 0 or 1, got {b}"
        )));
    }
    let k = bits.iter().map(|&b| b as u64).sum::<u64>();
    Ok(k as f64 / bits.len() as f64)
}

/// Cosine similarity clamped to [−1, 1]. Identical nonzero vectors give
/// exactly 1.0: sqrt of a correctly rounded square returns the operand.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(BenchError::Invalid(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return Err(BenchError::Invalid("cosine of a zero vector".into()));
    }
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// Mean cosine between each face-bearing frame and the face reference that
/// matches its estimated view. Frames without a face are left out.
pub fn score_face_identity(observations: &[FrameObservation], faces: &ReferenceSet) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for obs in observations {
        let Some(emb) = &obs.face_embedding else {
            continue;
        };
        let reference = faces.match_reference(obs.estimated_view);
        let target = reference.embedding.as_ref().ok_or_else(|| {
            BenchError::Invalid(format!(
                "face reference for view {} has no embedding",
                reference.view
            ))
        })?;
        sum += cosine(emb, target)?;
        n += 1;
    }
    if n == 0 {
        return Err(BenchError::UndefinedMetric(
            "face identity with no face-bearing frames".into(),
        ));
    }
    Ok(sum / n as f64)
}
