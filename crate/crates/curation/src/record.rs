//! Per-video metadata records and their view labels.

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{CurationError, Result};
use crate::jsonl;

pub const FACE_FPS: f64 = 1.0;
pub const CLIP_FPS: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FaceView {
    F,
    L,
    R,
    U,
    D,
}

impl FaceView {
    pub const ALL: [FaceView; 5] = [
        FaceView::F,
        FaceView::L,
        FaceView::R,
        FaceView::U,
        FaceView::D,
    ];

    pub fn parse(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == label)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FaceView::F => "F",
            FaceView::L => "L",
            FaceView::R => "R",
            FaceView::U => "U",
            FaceView::D => "D",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BodyView {
    F,
    S,
    B,
}

impl BodyView {
    pub const ALL: [BodyView; 3] = [BodyView::F, BodyView::S, BodyView::B];

    pub fn parse(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == label)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BodyView::F => "F",
            BodyView::S => "S",
            BodyView::B => "B",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subset {
    A,
    B,
    C,
}

impl Subset {
    pub fn parse(label: &str) -> Option<Self> {
        match label {
            "A" => Some(Subset::A),
            "B" => Some(Subset::B),
            "C" => Some(Subset::C),
            _ => None,
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::A => "A",
            Subset::B => "B",
            Subset::C => "C",
        })
    }
}

/// Whether a reference was cropped from the source video or synthesized.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum SourceClass {
    #[default]
    #[serde(rename = "Self-Crop", alias = "self-crop")]
    SelfCrop,
    #[serde(rename = "Generated", alias = "generated")]
    Generated,
}

impl fmt::Display for SourceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceClass::SelfCrop => "Self-Crop",
            SourceClass::Generated => "Generated",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct VideoRecord {
    pub id: String,
    pub duration_s: f64,
    /// First-frame identity similarities sampled at 1 fps.
    #[serde(default)]
    pub face_sims_1fps: Vec<f64>,
    /// Frame-to-frame appearance similarities sampled at 8 fps.
    #[serde(default)]
    pub clip_sims_8fps: Vec<f64>,
    pub track_quality: f64,
    pub face_view: FaceView,
    pub body_view: BodyView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<Subset>,
    #[serde(default)]
    pub source: SourceClass,
}

/// Wire form with labels left as strings so an unknown label can be
/// reported against the record that carries it.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    duration_s: f64,
    #[serde(default)]
    face_sims_1fps: Vec<f64>,
    #[serde(default)]
    clip_sims_8fps: Vec<f64>,
    track_quality: f64,
    face_view: String,
    body_view: String,
    #[serde(default)]
    subset: Option<String>,
    #[serde(default)]
    source: SourceClass,
}

impl TryFrom<RawRecord> for VideoRecord {
    type Error = CurationError;

    fn try_from(raw: RawRecord) -> Result<Self> {
        let invalid = |detail: String| CurationError::Validation {
            id: raw.id.clone(),
            detail,
        };
        let face_view = FaceView::parse(&raw.face_view)
            .ok_or_else(|| invalid(format!("unknown face_view label {:?}", raw.face_view)))?;
        let body_view = BodyView::parse(&raw.body_view)
            .ok_or_else(|| invalid(format!("unknown body_view label {:?}", raw.body_view)))?;
        let subset = match raw.subset.as_deref() {
            None => None,
            Some(s) => {
                Some(Subset::parse(s).ok_or_else(|| invalid(format!("unknown subset {s:?}")))?)
            }
        };
        Ok(VideoRecord {
            id: raw.id,
            duration_s: raw.duration_s,
            face_sims_1fps: raw.face_sims_1fps,
            clip_sims_8fps: raw.clip_sims_8fps,
            track_quality: raw.track_quality,
            face_view,
            body_view,
            subset,
            source: raw.source,
        })
    }
}

impl VideoRecord {
    /// Range and sampling-rate checks. Empty similarity lists are allowed
    /// here; the cascade treats them as malformed when it needs them.
    pub fn validate(&self) -> Result<()> {
        let invalid = |detail: String| {
            Err(CurationError::Validation {
                id: self.id.clone(),
                detail,
            })
        };
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return invalid(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            ));
        }
        if !(0.0..=1.0).contains(&self.track_quality) {
            return invalid(format!(
                "track_quality {} outside [0, 1]",
                self.track_quality
            ));
        }
        for (name, sims, fps) in [
            ("face_sims_1fps", &self.face_sims_1fps, FACE_FPS),
            ("clip_sims_8fps", &self.clip_sims_8fps, CLIP_FPS),
        ] {
            if let Some(bad) = sims.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
                return invalid(format!("{name} value {bad} outside [-1, 1]"));
            }
            let expected = self.duration_s * fps;
            if !sims.is_empty() && (sims.len() as f64 - expected).abs() > 1.0 {
                return invalid(format!(
                    "{name} has {} samples, expected {expected:.1} ± 1",
                    sims.len()
                ));
            }
        }
        Ok(())
    }
}

/// Reads and validates a JSONL record stream.
pub fn read_records(reader: impl BufRead) -> Result<Vec<VideoRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CurationError::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?;
        let rec = VideoRecord::try_from(raw)?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(writer: impl std::io::Write, records: &[VideoRecord]) -> Result<()> {
    jsonl::write(writer, records)
}
