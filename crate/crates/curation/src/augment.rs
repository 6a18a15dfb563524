//! Generative augmentation requests and ingestion of their results.
//!
//! Image editing runs elsewhere. This module only plans jobs as JSONL and
//! joins completed results back onto them.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CurationError, Result};
use crate::record::{SourceClass, Subset, VideoRecord};
use crate::stats::{Region, ViewSample};

const INDOOR: [&str; 20] = [
    "library",
    "bedroom",
    "kitchen",
    "living room",
    "office",
    "cafe",
    "classroom",
    "gym",
    "museum hall",
    "art studio",
    "restaurant",
    "bookstore",
    "hotel lobby",
    "train station",
    "subway car",
    "laboratory",
    "theater",
    "warehouse",
    "greenhouse",
    "music studio",
];
const INDOOR_STYLES: [&str; 5] = ["cozy", "modern", "dimly lit", "sunlit", "vintage"];
const OUTDOOR: [&str; 20] = [
    "market",
    "beach",
    "forest",
    "mountain trail",
    "city street",
    "park",
    "harbor",
    "desert",
    "meadow",
    "rooftop",
    "riverside",
    "village square",
    "vineyard",
    "campus lawn",
    "lakeshore",
    "canyon",
    "bridge",
    "garden",
    "plaza",
    "countryside road",
];
const OUTDOOR_STYLES: [&str; 5] = ["crowded", "quiet", "snowy", "rainy", "misty"];

pub const EXPRESSIONS: [&str; 8] = [
    "happiness",
    "sadness",
    "surprise",
    "fear",
    "anger",
    "disgust",
    "contempt",
    "neutral",
];
pub const LIGHTING: [&str; 10] = [
    "sunny day",
    "overcast sky",
    "golden hour",
    "blue hour",
    "studio softbox",
    "hard spotlight",
    "neon light",
    "candlelight",
    "firelight",
    "cinematic rim light",
];
pub const MOTIONS: [&str; 30] = [
    "walking",
    "running",
    "sitting",
    "standing",
    "reading",
    "drinking",
    "eating",
    "talking",
    "phone calling",
    "waving",
    "jumping",
    "dancing",
    "cycling",
    "yoga",
    "stretching",
    "boxing",
    "swimming",
    "playing basketball",
    "playing football",
    "hiking",
    "singing",
    "playing guitar",
    "playing piano",
    "painting",
    "photography",
    "laughing",
    "crying",
    "arguing",
    "hugging",
    "shaking hands",
];
/// Target camera angles for viewpoint jobs.
pub const TARGET_VIEWS: [&str; 6] = [
    "Front",
    "Left-Side",
    "Right-Side",
    "Back",
    "Top-Down",
    "Bottom-Up",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributePool {
    pub environments: Vec<String>,
    pub expressions: Vec<String>,
    pub lighting: Vec<String>,
    pub motions: Vec<String>,
}

impl Default for AttributePool {
    /// 200 environments, 8 expressions, 10 lighting conditions, 30 motions.
    fn default() -> Self {
        let mut environments = Vec::with_capacity(200);
        for (places, styles) in [(&INDOOR, &INDOOR_STYLES), (&OUTDOOR, &OUTDOOR_STYLES)] {
            for place in places {
                for style in styles {
                    environments.push(format!("{style} {place}"));
                }
            }
        }
        let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        AttributePool {
            environments,
            expressions: owned(&EXPRESSIONS),
            lighting: owned(&LIGHTING),
            motions: owned(&MOTIONS),
        }
    }
}

impl AttributePool {
    pub fn validate(&self) -> Result<()> {
        for (name, xs) in [
            ("environments", &self.environments),
            ("expressions", &self.expressions),
            ("lighting", &self.lighting),
            ("motions", &self.motions),
        ] {
            if xs.is_empty() {
                return Err(CurationError::Config(format!(
                    "attribute pool has no {name}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationJob {
    pub id: String,
    pub subset: Subset,
    pub instruction: String,
    pub source_ref: String,
}

fn region_slug(region: Region) -> &'static str {
    match region {
        Region::Face => "face",
        Region::Body => "body",
    }
}

fn viewpoint_instruction(view: &str, region: Region) -> String {
    format!(
        "Re-render this {} crop of the person as seen from a {view} camera angle. \
         Keep identity, hairstyle and clothing unchanged; change only the viewpoint.",
        region_slug(region)
    )
}

fn attribute_instruction(env: &str, motion: &str, expression: &str, light: &str) -> String {
    format!(
        "Edit the image so the same person appears in a {env}. Action: {motion}. Expression: {expression}. \
         Lighting: {light}. Keep the face, hairstyle and clothing identical to the reference."
    )
}

const SHEET_INSTRUCTION: &str = "Arrange the three anchor frames (front, side, back) into a single orthographic \
     character sheet on a plain background, with matching clothing and proportions across all three views.";

/// Jobs for every record tagged with a subset, in record order.
///
/// Subset A: one job per region and target view. Subset B: one job per
/// region with an attribute combination drawn from the pool. Subset C: one
/// three-view sheet per record.
pub fn plan_jobs(
    records: &[VideoRecord],
    pool: &AttributePool,
    seed: u64,
) -> Result<Vec<AugmentationJob>> {
    pool.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    for rec in records {
        let Some(subset) = rec.subset else { continue };
        for region in [Region::Face, Region::Body] {
            let source_ref = format!("{}#{}", rec.id, region_slug(region));
            match subset {
                Subset::A => {
                    for view in TARGET_VIEWS {
                        jobs.push(AugmentationJob {
                            id: format!(
                                "{}:A:{}:{}",
                                rec.id,
                                region_slug(region),
                                view.to_lowercase()
                            ),
                            subset,
                            instruction: viewpoint_instruction(view, region),
                            source_ref: source_ref.clone(),
                        });
                    }
                }
                Subset::B => {
                    let pick = |xs: &[String], rng: &mut ChaCha8Rng| {
                        xs.choose(rng).expect("pool validated").clone()
                    };
                    let env = pick(&pool.environments, &mut rng);
                    let motion = pick(&pool.motions, &mut rng);
                    let expression = pick(&pool.expressions, &mut rng);
                    let light = pick(&pool.lighting, &mut rng);
                    jobs.push(AugmentationJob {
                        id: format!("{}:B:{}", rec.id, region_slug(region)),
                        subset,
                        instruction: attribute_instruction(&env, &motion, &expression, &light),
                        source_ref,
                    });
                }
                Subset::C => {}
            }
        }
        if subset == Subset::C {
            jobs.push(AugmentationJob {
                id: format!("{}:C:sheet", rec.id),
                subset,
                instruction: SHEET_INSTRUCTION.to_string(),
                source_ref: format!("{}#anchors", rec.id),
            });
        }
    }
    Ok(jobs)
}

/// A finished job as reported by the external generator and verifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletedJob {
    pub id: String,
    pub output_ref: String,
    /// Whether the output passed identity verification.
    pub verified: bool,
    /// Annotated view of the output, for single-region outputs.
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default)]
    pub view: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedReference {
    pub job_id: String,
    pub subset: Subset,
    pub source_ref: String,
    pub output_ref: String,
    pub region: Option<Region>,
    pub view: Option<String>,
}

impl GeneratedReference {
    pub fn view_sample(&self) -> Option<ViewSample> {
        Some(ViewSample {
            id: self.job_id.clone(),
            subset: Some(self.subset),
            region: self.region?,
            source: SourceClass::Generated,
            label: self.view.clone()?,
        })
    }
}

/// Joins completed results onto their jobs, dropping unverified outputs.
/// Results are returned in job order; an unknown job id or view label is
/// an error naming the result.
pub fn ingest_completed(
    jobs: &[AugmentationJob],
    completed: &[CompletedJob],
) -> Result<Vec<GeneratedReference>> {
    let order: HashMap<&str, usize> = jobs
        .iter()
        .enumerate()
        .map(|(i, j)| (j.id.as_str(), i))
        .collect();
    let mut out = Vec::new();
    for c in completed {
        let &idx = order
            .get(c.id.as_str())
            .ok_or_else(|| CurationError::Validation {
                id: c.id.clone(),
                detail: "no augmentation job with this id".into(),
            })?;
        if let (Some(region), Some(view)) = (c.region, c.view.as_deref()) {
            region.check_label(&c.id, view)?;
        }
        if !c.verified {
            continue;
        }
        let job = &jobs[idx];
        out.push((
            idx,
            GeneratedReference {
                job_id: job.id.clone(),
                subset: job.subset,
                source_ref: job.source_ref.clone(),
                output_ref: c.output_ref.clone(),
                region: c.region,
                view: c.view.clone(),
            },
        ));
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out.into_iter().map(|(_, r)| r).collect())
}
