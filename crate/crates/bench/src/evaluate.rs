//! Per-video evaluation and report assembly.

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::judge::{Embedder, Judge, VideoHandle};
use crate::metrics::{cosine, score_face_identity, FrameObservation};
use crate::report::{BenchReport, VideoReport};
use crate::view::ReferenceBank;

/// How a frame whose judge call failed enters Score_Body.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JudgeErrorPolicy {
    /// Scored as an inconsistent frame.
    #[default]
    CountAsZero,
    /// Dropped from the frame count.
    Exclude,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub policy: JudgeErrorPolicy,
    /// Videos evaluated concurrently.
    pub max_concurrency: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            policy: JudgeErrorPolicy::CountAsZero,
            max_concurrency: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeTask {
    View,
    Body,
    Prompt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeErrorRecord {
    pub frame_index: Option<usize>,
    pub task: JudgeTask,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchInput {
    pub video: VideoHandle,
    pub bank: ReferenceBank,
}

/// View estimation, reference matching and a body verdict per frame, then
/// face identity, feature alignment and the clip-level prompt verdict.
pub fn evaluate_video(
    video: &VideoHandle,
    bank: &ReferenceBank,
    judge: &dyn Judge,
    embedder: &dyn Embedder,
    cfg: &EvalConfig,
) -> Result<VideoReport> {
    if video.frames == 0 {
        return Err(BenchError::Invalid(format!(
            "video {} has no frames",
            video.video_id
        )));
    }
    let mut observations = Vec::with_capacity(video.frames);
    let mut body_verdicts = Vec::with_capacity(video.frames);
    let mut judge_errors = Vec::new();
    let mut failed = |frame, task, message: String, verdicts: &mut Vec<u8>| {
        judge_errors.push(JudgeErrorRecord {
            frame_index: frame,
            task,
            message,
        });
        if cfg.policy == JudgeErrorPolicy::CountAsZero {
            verdicts.push(0);
        }
    };
    for frame in 0..video.frames {
        let view = match judge.estimate_view(video, frame) {
            Ok(v) => v,
            Err(e) => {
                failed(
                    Some(frame),
                    JudgeTask::View,
                    e.to_string(),
                    &mut body_verdicts,
                );
                continue;
            }
        };
        let reference = bank.body.match_reference(view);
        let verdict = match judge.body_verdict(video, frame, reference) {
            Ok(v) => v as u8,
            Err(e) => {
                failed(
                    Some(frame),
                    JudgeTask::Body,
                    e.to_string(),
                    &mut body_verdicts,
                );
                continue;
            }
        };
        body_verdicts.push(verdict);
        observations.push(FrameObservation {
            frame_index: frame,
            estimated_view: view,
            body_verdict: verdict,
            face_embedding: embedder.face_embedding(video, frame),
        });
    }
    let vlm_align = match judge.prompt_verdict(video) {
        Ok(v) => Some(v as u8),
        Err(e) => {
            judge_errors.push(JudgeErrorRecord {
                frame_index: None,
                task: JudgeTask::Prompt,
                message: e.to_string(),
            });
            (cfg.policy == JudgeErrorPolicy::CountAsZero).then_some(0)
        }
    };
    let face_id = match score_face_identity(&observations, &bank.face) {
        Ok(s) => Some(s),
        Err(BenchError::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    let feat_align = cosine(
        &embedder.video_features(video)?,
        &embedder.text_features(&video.prompt)?,
    )?;
    let body_positive = body_verdicts.iter().map(|&v| v as u64).sum();
    Ok(VideoReport {
        subject_id: video.subject_id.clone(),
        video_id: video.video_id.clone(),
        setting: video.setting,
        body_positive,
        body_frames: body_verdicts.len() as u64,
        score_body: (!body_verdicts.is_empty())
            .then(|| body_positive as f64 / body_verdicts.len() as f64),
        face_id,
        feat_align,
        vlm_align,
        embedder: embedder.id().to_string(),
        observations,
        judge_errors,
    })
}

/// Evaluates every input with at most `max_concurrency` videos in flight.
/// Rows are ordered by subject id, then video id.
pub fn evaluate_all(
    inputs: &[BenchInput],
    judge: &dyn Judge,
    embedder: &dyn Embedder,
    cfg: &EvalConfig,
) -> Result<BenchReport> {
    if cfg.max_concurrency == 0 {
        return Err(BenchError::Config(
            "max_concurrency must be at least 1".into(),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.max_concurrency)
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let rows: Result<Vec<VideoReport>> = pool.install(|| {
        use rayon::prelude::*;
        inputs
            .par_iter()
            .map(|i| evaluate_video(&i.video, &i.bank, judge, embedder, cfg))
            .collect()
    });
    let mut rows = rows?;
    rows.sort_by(|a, b| (&a.subject_id, &a.video_id).cmp(&(&b.subject_id, &b.video_id)));
    Ok(BenchReport::new(embedder.id(), rows))
}
