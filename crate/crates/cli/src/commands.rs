//! Subcommand bodies. Each reads only its inputs and writes only under the
//! configured output directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use refvid_bench::remote::{RemoteJudge, RemoteJudgeConfig};
use refvid_bench::{evaluate_all, fixture, BenchReport, JudgeErrorPolicy};
use refvid_core::rectified_flow::{euler_sample, LatentVideo};
use refvid_core::SplitRng;
use refvid_curation::record::{read_records, write_records};
use refvid_curation::stats::ViewpointStats;
use refvid_curation::{run_cascade, RecordScorer};
use serde::Serialize;

use crate::ablate::{run_ablation, AblationReport};
use crate::config::ExperimentConfig;
use crate::corpus::{create_dir, write_json, TensorFile};
use crate::error::{CliError, Result};
use crate::experiment::{
    build_model, render_example, train, validation_set, ClipSpec, LossRow, Shot, THREE_VIEW,
};
use crate::synth::{caption_for, subjects, CAPTIONS};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| CliError::io(path, e))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).map_err(|e| CliError::io(path, e))?,
    ))
}

/// `step,loss,seed` with losses in shortest round-trip form.
pub fn write_loss_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = create(path)?;
    let mut text = String::from("step,loss,seed\n");
    for r in rows {
        text += &format!("{},{},{}\n", r.step, r.loss, r.seed);
    }
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub steps: usize,
    pub final_loss: f64,
    pub validation_loss: f64,
}

/// Trains on the non-held-out subjects and writes `model.ckpt`,
/// `loss.csv` and `train.json`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    create_dir(&cfg.out_dir)?;
    let subs = subjects(cfg.corpus.subjects, cfg.seed);
    let (train_subjects, held_out) = subs.split_at(cfg.train_subjects()?);
    let mut model = build_model(&cfg.model, &cfg.train, cfg.seed)?;
    let rows = train(
        &mut model,
        train_subjects,
        &cfg.train,
        &cfg.sampler,
        &cfg.rf,
        cfg.seed,
    )?;
    let checkpoint = cfg.out_dir.join("model.ckpt");
    model.save(&checkpoint)?;
    let loss_csv = cfg.out_dir.join("loss.csv");
    write_loss_csv(&loss_csv, &rows)?;
    let validation_loss = validation_set(held_out, &cfg.model, &cfg.train, &cfg.sampler, cfg.seed)?
        .loss(&model, &cfg.rf)?;
    let summary = TrainSummary {
        checkpoint,
        loss_csv,
        steps: rows.len(),
        final_loss: rows.last().map_or(f64::NAN, |r| r.loss),
        validation_loss,
    };
    write_json(&cfg.out_dir.join("train.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleRow {
    pub subject: String,
    pub caption: usize,
    pub file: String,
    /// Mean squared error to the clip starting at the caption's canonical
    /// angle, front or back.
    pub mse_to_canonical: f64,
}

/// Generates one clip per held-out subject and caption from three-view
/// references and writes them under `samples/`.
pub fn cmd_sample(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<SampleRow>> {
    let mut model = build_model(&cfg.model, &cfg.train, cfg.seed)?;
    model.load(checkpoint)?;
    let dir = cfg.out_dir.join("samples");
    create_dir(&dir)?;
    let subs = subjects(cfg.corpus.subjects, cfg.seed);
    let held_out = &subs[cfg.train_subjects()?..];
    let mut rng = SplitRng::new(cfg.seed).derive(5);
    let mut rows = Vec::new();
    for s in held_out {
        for caption in 0..CAPTIONS {
            let theta0 = if caption < 2 {
                0.0
            } else {
                std::f64::consts::PI
            };
            debug_assert_eq!(caption_for(theta0, caption), caption);
            let clip = ClipSpec {
                theta0,
                caption,
                light: 1.0,
            };
            let refs: Vec<Shot> = THREE_VIEW
                .iter()
                .map(|&theta| Shot { theta, light: 1.0 })
                .collect();
            let ex = render_example(s, &clip, &refs, &cfg.model)?;
            let eps = LatentVideo::randn(ex.z0.dims(), &mut rng);
            let z = euler_sample(&model, &eps, &ex.ctx, cfg.rf.sampler_steps)?;
            let diff = z.tensor().sub(ex.z0.tensor())?;
            let mse = diff.data().iter().map(|d| d * d).sum::<f64>() / diff.numel() as f64;
            let file = format!("{}-c{caption}.json", s.id);
            write_json(&dir.join(&file), &TensorFile::from(z.tensor()))?;
            rows.push(SampleRow {
                subject: s.id.clone(),
                caption,
                file,
                mse_to_canonical: mse,
            });
        }
    }
    let index = dir.join("index.jsonl");
    let mut w = create(&index)?;
    for r in &rows {
        let line = serde_json::to_string(r).map_err(|e| CliError::Contract(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CliError::io(&index, e))?;
    }
    w.flush().map_err(|e| CliError::io(&index, e))?;
    Ok(rows)
}

/// Writes `ablation.txt` and `ablation.json`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<AblationReport> {
    create_dir(&cfg.out_dir)?;
    let report = run_ablation(cfg)?;
    let txt = cfg.out_dir.join("ablation.txt");
    fs::write(&txt, report.to_table()).map_err(|e| CliError::io(&txt, e))?;
    write_json(&cfg.out_dir.join("ablation.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurateSummary {
    pub input: usize,
    pub kept: usize,
    pub discarded: usize,
}

/// Runs the cascade over a record file; writes `kept.jsonl` and `audit.jsonl`.
pub fn cmd_curate(cfg: &ExperimentConfig, input: &Path) -> Result<CurateSummary> {
    let records = read_records(open(input)?)?;
    let out = run_cascade(&records, &cfg.thresholds, &RecordScorer)?;
    create_dir(&cfg.out_dir)?;
    let kept_path = cfg.out_dir.join("kept.jsonl");
    let mut w = create(&kept_path)?;
    write_records(&mut w, &out.kept)?;
    w.flush().map_err(|e| CliError::io(&kept_path, e))?;
    let audit_path = cfg.out_dir.join("audit.jsonl");
    let mut w = create(&audit_path)?;
    out.write_audit(&mut w)?;
    w.flush().map_err(|e| CliError::io(&audit_path, e))?;
    Ok(CurateSummary {
        input: records.len(),
        kept: out.kept.len(),
        discarded: out.audit.len(),
    })
}

/// Viewpoint distribution of a record file; writes `stats.txt` and `stats.json`.
pub fn cmd_stats(cfg: &ExperimentConfig, input: &Path) -> Result<ViewpointStats> {
    let records = read_records(open(input)?)?;
    let stats = ViewpointStats::from_records(&records);
    create_dir(&cfg.out_dir)?;
    let txt = cfg.out_dir.join("stats.txt");
    fs::write(&txt, stats.to_table()).map_err(|e| CliError::io(&txt, e))?;
    let json = cfg.out_dir.join("stats.json");
    fs::write(&json, stats.to_json()).map_err(|e| CliError::io(&json, e))?;
    Ok(stats)
}

/// Where verdicts come from.
pub enum JudgeSource {
    /// A verdict fixture file.
    Fixture(PathBuf),
    /// The remote judge named by the environment.
    Remote(RemoteJudgeConfig),
}

pub struct BenchArgs {
    pub inputs: PathBuf,
    pub embeddings: PathBuf,
    pub judge: JudgeSource,
    pub policy: Option<JudgeErrorPolicy>,
}

/// Scores benchmark inputs; writes `bench.csv` and `bench.json`.
pub fn cmd_bench(cfg: &ExperimentConfig, args: &BenchArgs) -> Result<BenchReport> {
    let inputs = fixture::load_inputs(&args.inputs)?;
    let embedder = fixture::load_embedder(&args.embeddings)?;
    let mut eval = cfg.bench;
    if let Some(policy) = args.policy {
        eval.policy = policy;
    }
    let report = match &args.judge {
        JudgeSource::Fixture(path) => {
            evaluate_all(&inputs, &fixture::load_judge(path)?, &embedder, &eval)?
        }
        JudgeSource::Remote(rc) => {
            evaluate_all(&inputs, &RemoteJudge::new(rc.clone())?, &embedder, &eval)?
        }
    };
    create_dir(&cfg.out_dir)?;
    let csv_path = cfg.out_dir.join("bench.csv");
    let mut w = create(&csv_path)?;
    report.write_csv(&mut w)?;
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    let json = cfg.out_dir.join("bench.json");
    fs::write(&json, report.to_json()).map_err(|e| CliError::io(&json, e))?;
    Ok(report)
}
