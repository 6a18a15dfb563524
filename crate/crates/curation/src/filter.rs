//! Coarse-to-fine filter cascade.
//!
//! The coarse stage reads only the 1 fps identity similarities. The fine
//! stage reads tracking quality and the 8 fps appearance similarities, and
//! only for records the coarse stage kept.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{CurationError, Result};
use crate::record::VideoRecord;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipAggregate {
    #[default]
    Mean,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterThresholds {
    /// Coarse stage discards when the mean identity similarity is strictly below this.
    pub tau_face: f64,
    /// Fine stage keeps only when the aggregated clip similarity is strictly above this.
    pub tau_clip: f64,
    /// Fine stage discards when tracking quality is strictly below this.
    pub tau_track: f64,
    pub clip_aggregate: ClipAggregate,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            tau_face: 0.4,
            tau_clip: 0.45,
            tau_track: 0.5,
            clip_aggregate: ClipAggregate::Mean,
        }
    }
}

impl FilterThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau_face", self.tau_face),
            ("tau_clip", self.tau_clip),
            ("tau_track", self.tau_track),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(CurationError::Config(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    CoarseIdentity,
    Tracking,
    ClipConsistency,
    ScorerError,
    Malformed,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reason::CoarseIdentity => "coarse_identity",
            Reason::Tracking => "tracking",
            Reason::ClipConsistency => "clip_consistency",
            Reason::ScorerError => "scorer_error",
            Reason::Malformed => "malformed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Verdict {
    Keep,
    Discard { reason: Reason, value: f64 },
}

/// Mean of deviations from the first element, summed with Neumaier
/// compensation. A constant list averages to exactly its value, so
/// threshold boundaries behave as written.
pub fn mean(xs: &[f64]) -> f64 {
    let Some(&pivot) = xs.first() else {
        return f64::NAN;
    };
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in xs {
        let d = x - pivot;
        let t = sum + d;
        if sum.abs() >= d.abs() {
            comp += (sum - t) + d;
        } else {
            comp += (d - t) + sum;
        }
        sum = t;
    }
    pivot + (sum + comp) / xs.len() as f64
}

fn aggregate(xs: &[f64], how: ClipAggregate) -> f64 {
    match how {
        ClipAggregate::Mean => mean(xs),
        ClipAggregate::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

fn malformed(rec: &VideoRecord, detail: &str) -> CurationError {
    CurationError::Malformed {
        id: rec.id.clone(),
        detail: detail.to_string(),
    }
}

fn coarse_verdict(face_sims: &[f64], th: &FilterThresholds) -> Verdict {
    let m = mean(face_sims);
    if m < th.tau_face {
        Verdict::Discard {
            reason: Reason::CoarseIdentity,
            value: m,
        }
    } else {
        Verdict::Keep
    }
}

fn fine_verdict(track: f64, clip_sims: &[f64], th: &FilterThresholds) -> Verdict {
    if track < th.tau_track {
        return Verdict::Discard {
            reason: Reason::Tracking,
            value: track,
        };
    }
    let c = aggregate(clip_sims, th.clip_aggregate);
    if c <= th.tau_clip {
        Verdict::Discard {
            reason: Reason::ClipConsistency,
            value: c,
        }
    } else {
        Verdict::Keep
    }
}

/// Identity-stability check on the record's own 1 fps similarities.
pub fn coarse_filter(rec: &VideoRecord, th: &FilterThresholds) -> Result<Verdict> {
    if rec.face_sims_1fps.is_empty() {
        return Err(malformed(rec, "face_sims_1fps is empty"));
    }
    Ok(coarse_verdict(&rec.face_sims_1fps, th))
}

/// Motion and appearance-consistency check on the record's own 8 fps data.
pub fn fine_filter(rec: &VideoRecord, th: &FilterThresholds) -> Result<Verdict> {
    if rec.clip_sims_8fps.is_empty() {
        return Err(malformed(rec, "clip_sims_8fps is missing"));
    }
    Ok(fine_verdict(rec.track_quality, &rec.clip_sims_8fps, th))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    /// The record has no data for this score.
    #[error("missing: {0}")]
    Missing(String),
    /// The scorer itself failed.
    #[error("scorer failure: {0}")]
    Failed(String),
}

/// Source of per-record scores. Implementations must be pure in the record.
pub trait Scorer: Sync {
    fn face_similarities(&self, rec: &VideoRecord) -> std::result::Result<Vec<f64>, ScoreError>;
    fn clip_similarities(&self, rec: &VideoRecord) -> std::result::Result<Vec<f64>, ScoreError>;
    fn track_quality(&self, rec: &VideoRecord) -> std::result::Result<f64, ScoreError>;
}

/// Reads the precomputed score fields carried by each record.
#[derive(Clone, Copy, Debug, Default)]
pub struct RecordScorer;

impl Scorer for RecordScorer {
    fn face_similarities(&self, rec: &VideoRecord) -> std::result::Result<Vec<f64>, ScoreError> {
        if rec.face_sims_1fps.is_empty() {
            return Err(ScoreError::Missing("face_sims_1fps is empty".into()));
        }
        Ok(rec.face_sims_1fps.clone())
    }

    fn clip_similarities(&self, rec: &VideoRecord) -> std::result::Result<Vec<f64>, ScoreError> {
        if rec.clip_sims_8fps.is_empty() {
            return Err(ScoreError::Missing("clip_sims_8fps is missing".into()));
        }
        Ok(rec.clip_sims_8fps.clone())
    }

    fn track_quality(&self, rec: &VideoRecord) -> std::result::Result<f64, ScoreError> {
        Ok(rec.track_quality)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub id: String,
    pub stage: Stage,
    pub reason: Reason,
    /// The score that failed its threshold; null for scorer errors and malformed records.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CascadeOutput {
    pub kept: Vec<VideoRecord>,
    /// One entry per discarded record, in input order.
    pub audit: Vec<AuditEntry>,
}

impl CascadeOutput {
    pub fn write_audit(&self, writer: impl std::io::Write) -> Result<()> {
        crate::jsonl::write(writer, &self.audit)
    }
}

fn entry(rec: &VideoRecord, stage: Stage, reason: Reason, value: Option<f64>) -> AuditEntry {
    AuditEntry {
        id: rec.id.clone(),
        stage,
        reason,
        value,
    }
}

fn score_failure(rec: &VideoRecord, stage: Stage, err: ScoreError) -> AuditEntry {
    match err {
        ScoreError::Missing(_) => entry(rec, stage, Reason::Malformed, None),
        ScoreError::Failed(_) => entry(rec, stage, Reason::ScorerError, None),
    }
}

fn discard(rec: &VideoRecord, stage: Stage, verdict: Verdict) -> Option<AuditEntry> {
    match verdict {
        Verdict::Keep => None,
        Verdict::Discard { reason, value } => Some(entry(rec, stage, reason, Some(value))),
    }
}

fn coarse_decision(
    rec: &VideoRecord,
    th: &FilterThresholds,
    scorer: &dyn Scorer,
) -> Option<AuditEntry> {
    match scorer.face_similarities(rec) {
        Err(e) => Some(score_failure(rec, Stage::Coarse, e)),
        Ok(sims) if sims.is_empty() => Some(entry(rec, Stage::Coarse, Reason::Malformed, None)),
        Ok(sims) => discard(rec, Stage::Coarse, coarse_verdict(&sims, th)),
    }
}

fn fine_decision(
    rec: &VideoRecord,
    th: &FilterThresholds,
    scorer: &dyn Scorer,
) -> Option<AuditEntry> {
    let track = match scorer.track_quality(rec) {
        Ok(t) => t,
        Err(e) => return Some(score_failure(rec, Stage::Fine, e)),
    };
    let clip = match scorer.clip_similarities(rec) {
        Ok(c) if c.is_empty() => return Some(entry(rec, Stage::Fine, Reason::Malformed, None)),
        Ok(c) => c,
        Err(e) => return Some(score_failure(rec, Stage::Fine, e)),
    };
    discard(rec, Stage::Fine, fine_verdict(track, &clip, th))
}

fn collect(records: &[VideoRecord], decisions: Vec<Option<AuditEntry>>) -> CascadeOutput {
    let mut out = CascadeOutput::default();
    for (rec, decision) in records.iter().zip(decisions) {
        match decision {
            None => out.kept.push(rec.clone()),
            Some(e) => out.audit.push(e),
        }
    }
    out
}

/// Runs both stages. Records are scored in parallel; kept records and audit
/// entries come back in input order.
pub fn run_cascade(
    records: &[VideoRecord],
    th: &FilterThresholds,
    scorer: &dyn Scorer,
) -> Result<CascadeOutput> {
    th.validate()?;
    let decisions = records
        .par_iter()
        .map(|rec| coarse_decision(rec, th, scorer).or_else(|| fine_decision(rec, th, scorer)))
        .collect();
    Ok(collect(records, decisions))
}

/// Runs only the coarse stage.
pub fn run_coarse(
    records: &[VideoRecord],
    th: &FilterThresholds,
    scorer: &dyn Scorer,
) -> Result<CascadeOutput> {
    th.validate()?;
    let decisions = records
        .par_iter()
        .map(|rec| coarse_decision(rec, th, scorer))
        .collect();
    Ok(collect(records, decisions))
}
