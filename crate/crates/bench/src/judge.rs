//! Judge and embedder contracts, with fixture-backed implementations.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{BenchError, Result};
use crate::view::{Reference, ViewLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    ThreeView,
    Arbitrary,
    InTheWild,
}

impl Setting {
    /// Report order.
    pub const ALL: [Setting; 3] = [Setting::ThreeView, Setting::Arbitrary, Setting::InTheWild];

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::ThreeView => "three-view",
            Setting::Arbitrary => "arbitrary",
            Setting::InTheWild => "in-the-wild",
        }
    }
}

/// A generated clip as seen by the benchmark. Pixels stay with the judge
/// and embedder; the harness only passes identifiers around.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoHandle {
    pub video_id: String,
    pub subject_id: String,
    pub setting: Setting,
    pub frames: usize,
    pub prompt: String,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unusable response: {0}")]
    Protocol(String),
    #[error("no verdict for {0}")]
    Missing(String),
}

/// Binary-verdict oracle.
pub trait Judge: Sync {
    /// Dominant viewpoint of the subject in one frame.
    fn estimate_view(
        &self,
        video: &VideoHandle,
        frame: usize,
    ) -> std::result::Result<ViewLabel, JudgeError>;
    /// Whether the subject in this frame is the subject in `reference`.
    fn body_verdict(
        &self,
        video: &VideoHandle,
        frame: usize,
        reference: &Reference,
    ) -> std::result::Result<bool, JudgeError>;
    /// Whether the whole clip follows its prompt.
    fn prompt_verdict(&self, video: &VideoHandle) -> std::result::Result<bool, JudgeError>;
}

/// One fixture line. A missing `frame_index` makes it the clip-level prompt
/// verdict; a null `verdict` scripts a transport failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    pub video_id: String,
    #[serde(default)]
    pub frame_index: Option<usize>,
    #[serde(default)]
    pub view: Option<ViewLabel>,
    pub verdict: Option<u8>,
}

#[derive(Clone, Debug, Default)]
pub struct MockJudge {
    frames: HashMap<(String, usize), VerdictRecord>,
    prompts: HashMap<String, Option<u8>>,
}

impl MockJudge {
    pub fn from_records(records: Vec<VerdictRecord>) -> Result<Self> {
        let mut judge = MockJudge::default();
        for r in records {
            if let Some(v) = r.verdict.filter(|&v| v > 1) {
                return Err(BenchError::Invalid(format!(
                    "verdict for {} must be 0 or 1, got {v}",
                    r.video_id
                )));
            }
            match r.frame_index {
                Some(i) => {
                    judge.frames.insert((r.video_id.clone(), i), r);
                }
                None => {
                    judge.prompts.insert(r.video_id, r.verdict);
                }
            }
        }
        Ok(judge)
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|e| BenchError::Parse {
                line: i + 1,
                detail: e.to_string(),
            })?);
        }
        Self::from_records(records)
    }

    fn frame(
        &self,
        video: &VideoHandle,
        frame: usize,
    ) -> std::result::Result<&VerdictRecord, JudgeError> {
        self.frames
            .get(&(video.video_id.clone(), frame))
            .ok_or_else(|| JudgeError::Missing(format!("{} frame {frame}", video.video_id)))
    }
}

fn scripted(verdict: Option<u8>) -> std::result::Result<bool, JudgeError> {
    verdict
        .map(|v| v == 1)
        .ok_or_else(|| JudgeError::Transport("scripted failure".into()))
}

impl Judge for MockJudge {
    fn estimate_view(
        &self,
        video: &VideoHandle,
        frame: usize,
    ) -> std::result::Result<ViewLabel, JudgeError> {
        let r = self.frame(video, frame)?;
        r.view
            .ok_or_else(|| JudgeError::Missing(format!("{} frame {frame} view", video.video_id)))
    }

    fn body_verdict(
        &self,
        video: &VideoHandle,
        frame: usize,
        _: &Reference,
    ) -> std::result::Result<bool, JudgeError> {
        scripted(self.frame(video, frame)?.verdict)
    }

    fn prompt_verdict(&self, video: &VideoHandle) -> std::result::Result<bool, JudgeError> {
        let v = self
            .prompts
            .get(&video.video_id)
            .ok_or_else(|| JudgeError::Missing(video.video_id.clone()))?;
        scripted(*v)
    }
}

/// Feature extractor contract for identity and text-video alignment.
pub trait Embedder: Sync {
    /// Recorded in reports; scores are comparable only within one embedder.
    fn id(&self) -> &str;
    /// Identity embedding of the face in one frame, if a face is present.
    fn face_embedding(&self, video: &VideoHandle, frame: usize) -> Option<Vec<f64>>;
    fn video_features(&self, video: &VideoHandle) -> Result<Vec<f64>>;
    fn text_features(&self, prompt: &str) -> Result<Vec<f64>>;
}

/// Embeddings read from a JSON fixture.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEmbedder {
    pub id: String,
    /// video id → frame index → face embedding.
    #[serde(default)]
    pub faces: HashMap<String, BTreeMap<usize, Vec<f64>>>,
    #[serde(default)]
    pub videos: HashMap<String, Vec<f64>>,
    #[serde(default)]
    pub texts: HashMap<String, Vec<f64>>,
}

impl Embedder for FixtureEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn face_embedding(&self, video: &VideoHandle, frame: usize) -> Option<Vec<f64>> {
        self.faces.get(&video.video_id)?.get(&frame).cloned()
    }

    fn video_features(&self, video: &VideoHandle) -> Result<Vec<f64>> {
        self.videos
            .get(&video.video_id)
            .cloned()
            .ok_or_else(|| BenchError::Invalid(format!("no video features for {}", video.video_id)))
    }

    fn text_features(&self, prompt: &str) -> Result<Vec<f64>> {
        self.texts
            .get(prompt)
            .cloned()
            .ok_or_else(|| BenchError::Invalid(format!("no text features for {prompt:?}")))
    }
}
