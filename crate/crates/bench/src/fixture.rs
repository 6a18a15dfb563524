//! Loading of benchmark input files.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::error::Result;
use crate::evaluate::BenchInput;
use crate::judge::{FixtureEmbedder, MockJudge};

/// A JSON array of videos with their reference banks.
pub fn load_inputs(path: &Path) -> Result<Vec<BenchInput>> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn load_embedder(path: &Path) -> Result<FixtureEmbedder> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Verdict lines `{"video_id", "frame_index", "view", "verdict"}`.
pub fn load_judge(path: &Path) -> Result<MockJudge> {
    MockJudge::from_jsonl(BufReader::new(File::open(path)?))
}
