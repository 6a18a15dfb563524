//! Benchmark scoring for identity-conditioned video generation: per-frame
//! body consistency against the closest-view reference, face identity,
//! text-video feature alignment and a clip-level prompt verdict.

pub mod error;
pub mod evaluate;
pub mod fixture;
pub mod judge;
pub mod metrics;
pub mod remote;
pub mod report;
pub mod view;

pub use error::{BenchError, Result};
pub use evaluate::{evaluate_all, evaluate_video, BenchInput, EvalConfig, JudgeErrorPolicy};
pub use judge::{Embedder, FixtureEmbedder, Judge, JudgeError, MockJudge, Setting, VideoHandle};
pub use metrics::{score_alignment, score_body, score_face_identity, FrameObservation};
pub use report::{BenchReport, VideoReport};
pub use view::{Reference, ReferenceBank, ReferenceSet, ViewLabel};
