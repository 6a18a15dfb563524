//! Metadata-level data curation: a coarse-to-fine identity/consistency
//! filter cascade with an audit trail, viewpoint distribution tables, and
//! planning of generative augmentation jobs.

pub mod augment;
pub mod error;
pub mod filter;
pub mod jsonl;
pub mod record;
pub mod stats;

pub use error::{CurationError, Result};
pub use filter::{run_cascade, CascadeOutput, FilterThresholds, RecordScorer, Scorer};
pub use record::{BodyView, FaceView, SourceClass, Subset, VideoRecord};
