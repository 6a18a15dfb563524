//! Toy ablations: reference-sampling strategies and the attention/position
//! factorial. Scores are rectified-flow losses on held-out subjects, so
//! lower is better and nothing here is comparable to published scores.

use std::f64::consts::{FRAC_PI_2, PI};

use refvid_core::aipa::AttentionMode;
use refvid_core::model::{DitConfig, ToyDit};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiment::{
    build_model, train, validation_set, view_set, RefStrategy, TrainConfig, THREE_VIEW,
};
use crate::synth::{subjects, SyntheticSubject};

pub const NOTE: &str =
    "Toy-scale rectified-flow losses on held-out synthetic subjects; lower is better. \
Not comparable to published benchmark scores.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingRow {
    pub setting: String,
    pub front: f64,
    pub side: f64,
    pub back: f64,
    pub average: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureRow {
    pub setting: String,
    pub aipa: bool,
    pub identity_rope: bool,
    /// Validation loss with references.
    pub validation: f64,
    /// Back-view loss with three-view references.
    pub back: f64,
    /// Loss increase when each caption's turn direction is reversed; larger
    /// means the model follows the caption more closely.
    pub text_reliance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub note: String,
    pub seed: u64,
    pub steps: usize,
    pub sampling: Vec<SamplingRow>,
    /// Full-Attn, AIPA without I-RoPE, and both.
    pub architecture: Vec<ArchitectureRow>,
    /// All four cells of {AIPA, Full-Attn} × {I-RoPE on, off}.
    pub factorial: Vec<ArchitectureRow>,
}

/// Sampling variants in table order.
pub const SAMPLING: [RefStrategy; 3] = [
    RefStrategy::RawCrop,
    RefStrategy::Random,
    RefStrategy::ViewpointAdaptive,
];

fn architecture_label(aipa: bool, rope: bool) -> &'static str {
    match (aipa, rope) {
        (false, true) => "Full-Attn",
        (true, false) => "w/ AIPA only",
        (true, true) => "AIPA + I-RoPE",
        (false, false) => "Full-Attn w/o I-RoPE",
    }
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    train_subjects: &'a [SyntheticSubject],
    held_out: &'a [SyntheticSubject],
}

impl Run<'_> {
    fn model(&self, model: &DitConfig, strategy: RefStrategy) -> Result<ToyDit> {
        let tc = TrainConfig {
            strategy,
            ..self.cfg.train.clone()
        };
        let mut m = build_model(model, &tc, self.cfg.seed)?;
        train(
            &mut m,
            self.train_subjects,
            &tc,
            &self.cfg.sampler,
            &self.cfg.rf,
            self.cfg.seed,
        )?;
        Ok(m)
    }

    fn view_loss(&self, m: &ToyDit, centre: f64) -> Result<f64> {
        Ok(view_set(
            self.held_out,
            m.config(),
            centre,
            &THREE_VIEW,
            self.cfg.seed,
        )?
        .loss(m, &self.cfg.rf)?)
    }

    fn sampling_row(&self, strategy: RefStrategy, m: &ToyDit) -> Result<SamplingRow> {
        let front = self.view_loss(m, 0.0)?;
        let side = self.view_loss(m, FRAC_PI_2)?;
        let back = self.view_loss(m, PI)?;
        Ok(SamplingRow {
            setting: strategy.label().into(),
            front,
            side,
            back,
            average: (front + side + back) / 3.0,
        })
    }

    fn architecture_row(&self, m: &ToyDit) -> Result<ArchitectureRow> {
        let c = m.config();
        let tc = TrainConfig {
            strategy: RefStrategy::ViewpointAdaptive,
            ..self.cfg.train.clone()
        };
        let val = validation_set(self.held_out, c, &tc, &self.cfg.sampler, self.cfg.seed)?;
        let validation = val.loss(m, &self.cfg.rf)?;
        let reversed = val.with_reversed_turns().loss(m, &self.cfg.rf)?;
        let aipa = c.attention == AttentionMode::Asymmetric;
        Ok(ArchitectureRow {
            setting: architecture_label(aipa, c.identity_rope).into(),
            aipa,
            identity_rope: c.identity_rope,
            validation,
            back: self.view_loss(m, PI)?,
            text_reliance: reversed - validation,
        })
    }
}

/// Trains the three sampling variants and the four architecture cells (the
/// adaptive, AIPA + I-RoPE model is shared) and scores each.
pub fn run_ablation(cfg: &ExperimentConfig) -> Result<AblationReport> {
    let subs = subjects(cfg.corpus.subjects, cfg.seed);
    let (train_subjects, held_out) = subs.split_at(cfg.train_subjects()?);
    let run = Run {
        cfg,
        train_subjects,
        held_out,
    };
    let base = DitConfig {
        attention: AttentionMode::Asymmetric,
        identity_rope: true,
        ..cfg.model.clone()
    };

    let mut sampling = Vec::new();
    let mut full_model = None;
    for strategy in SAMPLING {
        let m = run.model(&base, strategy)?;
        sampling.push(run.sampling_row(strategy, &m)?);
        if strategy == RefStrategy::ViewpointAdaptive {
            full_model = Some(m);
        }
    }

    let mut factorial = Vec::new();
    for attention in [AttentionMode::Asymmetric, AttentionMode::Full] {
        for rope in [true, false] {
            let row = match (&full_model, attention, rope) {
                (Some(m), AttentionMode::Asymmetric, true) => run.architecture_row(m)?,
                _ => {
                    let model = DitConfig {
                        attention,
                        identity_rope: rope,
                        ..base.clone()
                    };
                    run.architecture_row(&run.model(&model, RefStrategy::ViewpointAdaptive)?)?
                }
            };
            factorial.push(row);
        }
    }
    let architecture = [(false, true), (true, false), (true, true)]
        .iter()
        .filter_map(|&(a, r)| {
            factorial
                .iter()
                .find(|row| row.aipa == a && row.identity_rope == r)
                .cloned()
        })
        .collect();
    Ok(AblationReport {
        note: NOTE.into(),
        seed: cfg.seed,
        steps: cfg.train.steps,
        sampling,
        architecture,
        factorial,
    })
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let yn = |b: bool| if b { "yes" } else { "no" };
        let mut out = format!(
            "{}\nseed {}, {} training steps per model\n\n",
            self.note, self.seed, self.steps
        );
        out += &format!(
            "{:<22}{:>10}{:>10}{:>10}{:>10}\n",
            "Sampling", "Front", "Side", "Back", "Average"
        );
        for r in &self.sampling {
            out += &format!(
                "{:<22}{:>10.4}{:>10.4}{:>10.4}{:>10.4}\n",
                r.setting, r.front, r.side, r.back, r.average
            );
        }
        out += &format!(
            "\n{:<22}{:>6}{:>8}{:>12}{:>12}{:>16}\n",
            "Setting", "AIPA", "I-RoPE", "Val loss", "Back loss", "Text reliance"
        );
        for r in &self.architecture {
            out += &format!(
                "{:<22}{:>6}{:>8}{:>12.4}{:>12.4}{:>16.4}\n",
                r.setting,
                yn(r.aipa),
                yn(r.identity_rope),
                r.validation,
                r.back,
                r.text_reliance
            );
        }
        out
    }
}
