//! Per-video rows and per-setting aggregates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evaluate::JudgeErrorRecord;
use crate::judge::Setting;
use crate::metrics::FrameObservation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub subject_id: String,
    pub video_id: String,
    pub setting: Setting,
    /// Frames judged consistent.
    pub body_positive: u64,
    /// Frames counted in the body score denominator.
    pub body_frames: u64,
    /// None when every frame was excluded.
    pub score_body: Option<f64>,
    /// None when no frame had a face.
    pub face_id: Option<f64>,
    pub feat_align: f64,
    /// None when the prompt verdict failed and failures are excluded.
    pub vlm_align: Option<u8>,
    pub embedder: String,
    pub observations: Vec<FrameObservation>,
    pub judge_errors: Vec<JudgeErrorRecord>,
}

/// One column group of the aggregate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// None aggregates every setting.
    pub setting: Option<Setting>,
    pub videos: usize,
    /// Consistent frames over counted frames across all videos.
    pub body_consistency: Option<f64>,
    /// Mean over videos with a face score.
    pub face_id: Option<f64>,
    pub feature_alignment: Option<f64>,
    /// Positive prompt verdicts over videos with a verdict.
    pub vlm_alignment: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub embedder: String,
    pub rows: Vec<VideoReport>,
    pub aggregate: Vec<AggregateRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn aggregate(setting: Option<Setting>, rows: &[&VideoReport]) -> AggregateRow {
    let positive: u64 = rows.iter().map(|r| r.body_positive).sum();
    let frames: u64 = rows.iter().map(|r| r.body_frames).sum();
    let verdicts: Vec<u8> = rows.iter().filter_map(|r| r.vlm_align).collect();
    AggregateRow {
        setting,
        videos: rows.len(),
        body_consistency: (frames > 0).then(|| positive as f64 / frames as f64),
        face_id: mean(rows.iter().filter_map(|r| r.face_id)),
        feature_alignment: mean(rows.iter().map(|r| r.feat_align)),
        vlm_alignment: (!verdicts.is_empty()).then(|| {
            verdicts.iter().map(|&v| v as u64).sum::<u64>() as f64 / verdicts.len() as f64
        }),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

impl BenchReport {
    pub fn new(embedder: &str, rows: Vec<VideoReport>) -> Self {
        let mut agg = Vec::new();
        for setting in Setting::ALL {
            let group: Vec<&VideoReport> = rows.iter().filter(|r| r.setting == setting).collect();
            if !group.is_empty() {
                agg.push(aggregate(Some(setting), &group));
            }
        }
        agg.push(aggregate(None, &rows.iter().collect::<Vec<_>>()));
        BenchReport {
            embedder: embedder.to_string(),
            rows,
            aggregate: agg,
        }
    }

    /// `subject_id,setting,score_body,face_id,feat_align,vlm_align`, one
    /// row per video. Undefined scores are empty fields.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "subject_id",
            "setting",
            "score_body",
            "face_id",
            "feat_align",
            "vlm_align",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.subject_id.clone(),
                r.setting.as_str().to_string(),
                opt(r.score_body),
                opt(r.face_id),
                r.feat_align.to_string(),
                r.vlm_align.map_or_else(String::new, |v| v.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
