//! Toy training runs on synthetic subjects and the fixed evaluation sets
//! used to compare reference strategies.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use refvid_core::model::{DitConfig, ToyDit};
use refvid_core::optim::{Adam, AdamConfig};
use refvid_core::rectified_flow::{
    euler_sample, rf_loss, train_step, ConditionContext, LatentVideo, RefImage, RfConfig,
    TrainExample,
};
use refvid_core::view_sampler::{draw_references, Candidate, SamplerConfig};
use refvid_core::{Result, SplitRng};
use serde::{Deserialize, Serialize};

use crate::synth::{caption_for, frame_angles, random_light, SyntheticSubject, CAPTIONS};

/// How training references are drawn from a subject's candidate pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefStrategy {
    /// No references.
    None,
    /// Crops of the training clip's own frames, so references always
    /// match the target's view.
    RawCrop,
    /// Uniform over the whole pool.
    Random,
    /// Weighted draws with angular-neighbour suppression.
    #[default]
    ViewpointAdaptive,
}

impl RefStrategy {
    pub fn label(self) -> &'static str {
        match self {
            RefStrategy::None => "No-Reference",
            RefStrategy::RawCrop => "Raw-Crop",
            RefStrategy::Random => "Random Sampling",
            RefStrategy::ViewpointAdaptive => "Viewpoint-Adaptive",
        }
    }
}

/// Learning-rate schedule over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the configured rate to zero at the last step.
    #[default]
    Cosine,
}

impl LrSchedule {
    /// Rate for 1-based `step` of `steps`.
    pub fn rate(self, base: f64, step: usize, steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                0.5 * base * (1.0 + (PI * (step - 1) as f64 / steps as f64).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Body references per example.
    pub refs: usize,
    pub strategy: RefStrategy,
    pub adam: AdamConfig,
    /// Train the attention projections as well as embeddings, head and adapters.
    pub train_backbone: bool,
    pub schedule: LrSchedule,
    /// Share of clips that start near the front; the rest start at a
    /// uniform angle.
    pub frontal_share: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 8,
            refs: 3,
            strategy: RefStrategy::ViewpointAdaptive,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            train_backbone: true,
            frontal_share: 0.8,
            schedule: LrSchedule::Cosine,
        }
    }
}

/// Model size used for the toy experiments: one block, width 64.
pub fn toy_model_config() -> DitConfig {
    DitConfig {
        d_model: 64,
        heads: 4,
        layers: 1,
        lora_rank: 8,
        head_hidden: 64,
        time_dim: 8,
        captions: CAPTIONS,
        ..DitConfig::default()
    }
}

/// Dimensions shared by every rendered tensor of a run.
#[derive(Clone, Copy, Debug)]
struct Dims {
    frames: usize,
    channels: usize,
    h: usize,
    w: usize,
}

impl From<&DitConfig> for Dims {
    fn from(c: &DitConfig) -> Self {
        Dims {
            frames: c.frames,
            channels: c.channels,
            h: c.height,
            w: c.width,
        }
    }
}

fn uniform_without_replacement(
    pool: &[Candidate],
    k: usize,
    rng: &mut SplitRng,
) -> Result<Vec<Candidate>> {
    let uniform = SamplerConfig {
        delta: 0.0,
        gamma: 1.0,
        draws: k.min(pool.len()),
    };
    draw_references(pool, &uniform, rng)
}

/// One rendered view: azimuth and lighting gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shot {
    pub theta: f64,
    pub light: f64,
}

/// A clip to render: start angle, caption and lighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipSpec {
    pub theta0: f64,
    pub caption: usize,
    pub light: f64,
}

impl ClipSpec {
    /// A clip as found in raw footage: start angle from `frontal_share`,
    /// random turn and lighting.
    pub fn random(frontal_share: f64, rng: &mut SplitRng) -> Self {
        let theta0 = start_angle(frontal_share, rng);
        let caption = caption_for(theta0, rng.below(2));
        ClipSpec {
            theta0,
            caption,
            light: random_light(rng),
        }
    }
}

/// References for one example. Raw crops are frames of the clip itself and
/// share its lighting; pool references are separate shots with their own.
pub fn reference_shots(
    subject: &SyntheticSubject,
    clip: &ClipSpec,
    frames: usize,
    strategy: RefStrategy,
    k: usize,
    sampler: &SamplerConfig,
    rng: &mut SplitRng,
) -> Result<Vec<Shot>> {
    let pool = subject.body_candidates();
    let picked = match strategy {
        RefStrategy::None => Vec::new(),
        RefStrategy::RawCrop => {
            let angles = frame_angles(clip.theta0, clip.caption, frames);
            return Ok((0..k)
                .map(|_| Shot {
                    theta: angles[rng.below(angles.len())],
                    light: clip.light,
                })
                .collect());
        }
        RefStrategy::Random => uniform_without_replacement(&pool, k, rng)?,
        RefStrategy::ViewpointAdaptive => draw_references(
            &pool,
            &SamplerConfig {
                draws: k.min(pool.len()),
                ..*sampler
            },
            rng,
        )?,
    };
    Ok(picked
        .iter()
        .map(|c| Shot {
            theta: c.theta,
            light: random_light(rng),
        })
        .collect())
}

fn example(
    subject: &SyntheticSubject,
    clip: &ClipSpec,
    refs: &[Shot],
    dims: Dims,
) -> Result<TrainExample> {
    let Dims {
        frames,
        channels,
        h,
        w,
    } = dims;
    let z0 = LatentVideo::new(subject.clip(
        clip.theta0,
        clip.caption,
        clip.light,
        frames,
        channels,
        h,
        w,
    ))?;
    let body_refs = refs
        .iter()
        .map(|s| RefImage {
            pixels: subject.render(s.theta, s.light, channels, h, w),
            theta: s.theta,
        })
        .collect();
    Ok(TrainExample {
        z0,
        ctx: ConditionContext {
            caption: Some(clip.caption),
            face_refs: Vec::new(),
            body_refs,
        },
    })
}

/// The example for `clip` with references `refs`, rendered at the size
/// `cfg` expects.
pub fn render_example(
    subject: &SyntheticSubject,
    clip: &ClipSpec,
    refs: &[Shot],
    cfg: &DitConfig,
) -> Result<TrainExample> {
    example(subject, clip, refs, Dims::from(cfg))
}

/// Clip start angle: near-frontal with probability `frontal_share`, like
/// cropped footage, otherwise uniform so every view is seen.
pub fn start_angle(frontal_share: f64, rng: &mut SplitRng) -> f64 {
    if rng.uniform() < frontal_share {
        FRONTAL_SPREAD * rng.normal()
    } else {
        TAU * rng.uniform()
    }
}

/// Standard deviation of near-frontal start angles, in radians.
pub const FRONTAL_SPREAD: f64 = 0.35;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
    pub seed: u64,
}

/// Builds a model for `cfg` with weights drawn from `seed`.
pub fn build_model(cfg: &DitConfig, train: &TrainConfig, seed: u64) -> Result<ToyDit> {
    let mut model = ToyDit::new(cfg.clone(), &mut SplitRng::new(seed).derive(0))?;
    model.set_backbone_trainable(train.train_backbone);
    Ok(model)
}

/// Trains on random clips of `subjects`: uniform start angle and caption,
/// references drawn by `cfg.strategy`. Returns one row per step.
pub fn train(
    model: &mut ToyDit,
    subjects: &[SyntheticSubject],
    cfg: &TrainConfig,
    sampler: &SamplerConfig,
    rf: &RfConfig,
    seed: u64,
) -> Result<Vec<LossRow>> {
    if subjects.is_empty() {
        return Err(refvid_core::Error::Contract(
            "training needs at least one subject".into(),
        ));
    }
    let dims = Dims::from(model.config());
    let root = SplitRng::new(seed);
    let mut data_rng = root.derive(1);
    let mut noise_rng = root.derive(2);
    let mut opt = Adam::new(cfg.adam.clone());
    let mut rows = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let batch = (0..cfg.batch)
            .map(|_| {
                let subject = &subjects[data_rng.below(subjects.len())];
                let clip = ClipSpec::random(cfg.frontal_share, &mut data_rng);
                let refs = reference_shots(
                    subject,
                    &clip,
                    dims.frames,
                    cfg.strategy,
                    cfg.refs,
                    sampler,
                    &mut data_rng,
                )?;
                example(subject, &clip, &refs, dims)
            })
            .collect::<Result<Vec<_>>>()?;
        opt.cfg.lr = cfg.schedule.rate(cfg.adam.lr, step, cfg.steps);
        let loss = train_step(model, &batch, &mut opt, &mut noise_rng, rf)?;
        rows.push(LossRow { step, loss, seed });
    }
    Ok(rows)
}

/// Examples with their noise and time fixed, so different models are
/// scored on identical inputs.
pub struct EvalSet {
    items: Vec<(TrainExample, LatentVideo, f64)>,
}

impl EvalSet {
    fn build(examples: Vec<TrainExample>, draws_per_example: usize, seed: u64) -> Self {
        let mut rng = SplitRng::new(seed);
        let mut items = Vec::with_capacity(examples.len() * draws_per_example);
        for ex in examples {
            for k in 0..draws_per_example {
                // Stratified times cover [0, 1] evenly.
                let t = (k as f64 + rng.uniform()) / draws_per_example as f64;
                let eps = LatentVideo::randn(ex.z0.dims(), &mut rng);
                items.push((ex.clone(), eps, t));
            }
        }
        EvalSet { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Mean rectified-flow loss over the set.
    pub fn loss(&self, model: &ToyDit, rf: &RfConfig) -> Result<f64> {
        let mut total = 0.0;
        for (ex, eps, t) in &self.items {
            total += rf_loss(model, &ex.z0, eps, *t, &ex.ctx, rf)?.item()?;
        }
        Ok(total / self.items.len() as f64)
    }

    /// Mean squared error between clips generated from each item's noise
    /// and the true clips.
    pub fn sample_error(&self, model: &ToyDit, steps: usize) -> Result<f64> {
        let mut total = 0.0;
        for (ex, eps, _) in &self.items {
            let z = euler_sample(model, eps, &ex.ctx, steps)?;
            let diff = z.tensor().sub(ex.z0.tensor())?;
            total += diff.data().iter().map(|d| d * d).sum::<f64>() / diff.numel() as f64;
        }
        Ok(total / self.items.len() as f64)
    }

    /// The same set with each caption's turn direction reversed.
    pub fn with_reversed_turns(&self) -> Self {
        let items = self
            .items
            .iter()
            .map(|(ex, eps, t)| {
                let ctx = ConditionContext {
                    caption: ex.ctx.caption.map(|c| c ^ 1),
                    ..ex.ctx.clone()
                };
                (
                    TrainExample {
                        z0: ex.z0.clone(),
                        ctx,
                    },
                    eps.clone(),
                    *t,
                )
            })
            .collect();
        EvalSet { items }
    }

    /// The same set with references removed.
    pub fn without_references(&self) -> Self {
        let items = self
            .items
            .iter()
            .map(|(ex, eps, t)| {
                let ctx = ConditionContext {
                    face_refs: Vec::new(),
                    body_refs: Vec::new(),
                    ..ex.ctx.clone()
                };
                (
                    TrainExample {
                        z0: ex.z0.clone(),
                        ctx,
                    },
                    eps.clone(),
                    *t,
                )
            })
            .collect();
        EvalSet { items }
    }
}

/// Held-out clips of `subjects`, 16 per subject, with start angles and
/// references drawn as in training under `train`.
pub fn validation_set(
    subjects: &[SyntheticSubject],
    cfg: &DitConfig,
    train: &TrainConfig,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<EvalSet> {
    let dims = Dims::from(cfg);
    let mut rng = SplitRng::new(seed).derive(3);
    let mut examples = Vec::new();
    for s in subjects {
        for _ in 0..16 {
            let clip = ClipSpec::random(train.frontal_share, &mut rng);
            let refs = reference_shots(
                s,
                &clip,
                dims.frames,
                train.strategy,
                train.refs,
                sampler,
                &mut rng,
            )?;
            examples.push(example(s, &clip, &refs, dims)?);
        }
    }
    Ok(EvalSet::build(examples, 4, seed))
}

/// Reference angles given at evaluation time: front, side and back.
pub const THREE_VIEW: [f64; 3] = [0.0, FRAC_PI_2, PI];

/// Clips of held-out subjects starting within 0.2 rad of `centre`, with
/// references at `ref_angles`. Clips and references are lit independently.
pub fn view_set(
    subjects: &[SyntheticSubject],
    cfg: &DitConfig,
    centre: f64,
    ref_angles: &[f64],
    seed: u64,
) -> Result<EvalSet> {
    let dims = Dims::from(cfg);
    let mut rng = SplitRng::new(seed).derive(4);
    let mut examples = Vec::new();
    for s in subjects {
        for offset in [-0.2, 0.0, 0.2] {
            for turn in 0..2 {
                let theta0 = centre + offset;
                let clip = ClipSpec {
                    theta0,
                    caption: caption_for(theta0, turn),
                    light: random_light(&mut rng),
                };
                let refs: Vec<Shot> = ref_angles
                    .iter()
                    .map(|&theta| Shot {
                        theta,
                        light: random_light(&mut rng),
                    })
                    .collect();
                examples.push(example(s, &clip, &refs, dims)?);
            }
        }
    }
    Ok(EvalSet::build(examples, 4, seed))
}

/// Back-facing clips with three-view references.
pub fn back_view_set(subjects: &[SyntheticSubject], cfg: &DitConfig, seed: u64) -> Result<EvalSet> {
    view_set(subjects, cfg, PI, &THREE_VIEW, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::subjects;

    #[test]
    fn raw_crops_come_from_the_clip() {
        let s = &subjects(1, 0)[0];
        let clip = ClipSpec {
            theta0: 2.0,
            caption: 1,
            light: 0.7,
        };
        let frames = frame_angles(2.0, 1, 2);
        let mut rng = SplitRng::new(1);
        for _ in 0..50 {
            let shots = reference_shots(
                s,
                &clip,
                2,
                RefStrategy::RawCrop,
                3,
                &SamplerConfig::default(),
                &mut rng,
            )
            .unwrap();
            assert_eq!(shots.len(), 3);
            assert!(shots
                .iter()
                .all(|r| frames.contains(&r.theta) && r.light == 0.7));
        }
    }

    #[test]
    fn adaptive_strategy_reaches_the_back_more_often_than_uniform() {
        let s = &subjects(1, 0)[0];
        let clip = ClipSpec {
            theta0: 0.0,
            caption: 0,
            light: 1.0,
        };
        let count = |strategy| {
            let mut rng = SplitRng::new(2);
            (0..4000)
                .filter(|_| {
                    reference_shots(
                        s,
                        &clip,
                        2,
                        strategy,
                        3,
                        &SamplerConfig::default(),
                        &mut rng,
                    )
                    .unwrap()
                    .iter()
                    .any(|r| (r.theta - PI).abs() < 1e-9)
                })
                .count()
        };
        let (adaptive, uniform) = (
            count(RefStrategy::ViewpointAdaptive),
            count(RefStrategy::Random),
        );
        // Exact inclusion probabilities are 0.320 and 3/14.
        assert!(
            (adaptive as f64 / 4000.0 - 0.320).abs() < 0.03,
            "{adaptive}"
        );
        assert!(
            (uniform as f64 / 4000.0 - 3.0 / 14.0).abs() < 0.03,
            "{uniform}"
        );
    }

    #[test]
    fn training_is_seed_deterministic() {
        let cfg = DitConfig {
            d_model: 16,
            heads: 2,
            lora_rank: 2,
            head_hidden: 8,
            time_dim: 4,
            captions: 4,
            ..Default::default()
        };
        let tc = TrainConfig {
            steps: 3,
            batch: 2,
            ..Default::default()
        };
        let subs = subjects(3, 0);
        let run = || {
            let mut m = build_model(&cfg, &tc, 5).unwrap();
            train(
                &mut m,
                &subs,
                &tc,
                &SamplerConfig::default(),
                &RfConfig::default(),
                5,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a
            .iter()
            .zip(&b)
            .all(|(x, y)| x.loss.to_bits() == y.loss.to_bits()));
    }
}
