//! The experiment configuration: one JSON document. Keys missing from a
//! file take their defaults; unknown keys are rejected with their path.

use std::path::{Path, PathBuf};

use refvid_bench::EvalConfig;
use refvid_core::model::DitConfig;
use refvid_core::rectified_flow::RfConfig;
use refvid_core::view_sampler::SamplerConfig;
use refvid_curation::FilterThresholds;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::experiment::{toy_model_config, TrainConfig};
use crate::synth::CAPTIONS;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Subjects generated from the seed, ids `s000`, `s001`, ….
    pub subjects: usize,
    /// The last `held_out` subjects are never trained on.
    pub held_out: usize,
    /// Frames per corpus video.
    pub frames: usize,
    pub videos_per_subject: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            subjects: 32,
            held_out: 8,
            frames: 8,
            videos_per_subject: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: DitConfig,
    pub rf: RfConfig,
    pub sampler: SamplerConfig,
    pub thresholds: FilterThresholds,
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
    pub bench: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            out_dir: PathBuf::from("out"),
            model: toy_model_config(),
            rf: RfConfig::default(),
            sampler: SamplerConfig::default(),
            thresholds: FilterThresholds::default(),
            corpus: CorpusConfig::default(),
            train: TrainConfig::default(),
            bench: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config document. `schema_version` must be present and pinned.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?;
        match value.get("schema_version") {
            None => return Err(CliError::Config("schema_version: missing".into())),
            Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
                return Err(CliError::Config(format!(
                    "schema_version: expected {SCHEMA_VERSION}, got {v}"
                )));
            }
            Some(_) => {}
        }
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(CliError::Config(format!("{key}: {msg}")));
        self.model
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.sampler
            .validate()
            .map_err(|e| CliError::Config(format!("sampler: {e}")))?;
        self.thresholds
            .validate()
            .map_err(|e| CliError::Config(format!("thresholds: {e}")))?;
        if self.model.captions < CAPTIONS {
            return bad(
                "model.captions",
                format!("the synthetic corpus uses {CAPTIONS} captions"),
            );
        }
        if self.model.channels != 3 {
            return bad(
                "model.channels",
                "synthetic subjects render 3 channels".into(),
            );
        }
        if self.rf.sampler_steps == 0 {
            return bad("rf.sampler_steps", "must be at least 1".into());
        }
        let c = &self.corpus;
        if c.subjects == 0 {
            return bad("corpus.subjects", "must be at least 1".into());
        }
        if c.frames == 0 {
            return bad("corpus.frames", "must be at least 1".into());
        }
        let t = &self.train;
        if t.steps == 0 {
            return bad("train.steps", "must be at least 1".into());
        }
        if t.batch == 0 {
            return bad("train.batch", "must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&t.frontal_share) {
            return bad(
                "train.frontal_share",
                format!("must lie in [0, 1], got {}", t.frontal_share),
            );
        }
        if !(t.adam.lr > 0.0 && t.adam.lr.is_finite()) {
            return bad(
                "train.adam.lr",
                format!("must be positive, got {}", t.adam.lr),
            );
        }
        if self.bench.max_concurrency == 0 {
            return bad("bench.max_concurrency", "must be at least 1".into());
        }
        Ok(())
    }

    /// Number of subjects used for training; the rest are held out.
    pub fn train_subjects(&self) -> Result<usize> {
        let c = &self.corpus;
        if c.held_out >= c.subjects {
            return Err(CliError::Config(format!(
                "corpus.held_out: must be below corpus.subjects ({}) to leave training subjects",
                c.subjects
            )));
        }
        Ok(c.subjects - c.held_out)
    }
}

/// Flag values that override the file. `None` leaves the file's value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub steps: Option<usize>,
    pub subjects: Option<usize>,
}

/// Resolves defaults, then the file, then flags.
pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match file {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out_dir {
        cfg.out_dir = out.clone();
    }
    if let Some(steps) = overrides.steps {
        cfg.train.steps = steps;
    }
    if let Some(n) = overrides.subjects {
        cfg.corpus.subjects = n;
    }
    cfg.validate()?;
    Ok(cfg)
}
