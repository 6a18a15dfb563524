//! On-disk synthetic corpus: per-subject reference renders, turning clips
//! with captions, a candidate pool for the view sampler and clip records
//! for the curation cascade.
//!
//! Layout under `<out>/corpus`:
//!
//! ```text
//! subjects.json            identity parameters of every subject
//! pool.jsonl               one candidate per reference render
//! records.jsonl            one curation record per clip
//! captions.jsonl           caption id and text per clip
//! <subject>/body/<i>-<label>.json
//! <subject>/face/<i>-<label>.json
//! <subject>/videos/<k>.json
//! ```
//!
//! Images and clips are JSON tensors `{"shape": [...], "data": [...]}`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use refvid_core::rng::SplitRng;
use refvid_core::view_sampler::{CandidateRecord, Region, Subset};
use refvid_core::Tensor;
use refvid_curation::{BodyView, FaceView, SourceClass, VideoRecord};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiment::ClipSpec;
use crate::synth::{subjects, SyntheticSubject, BODY_VIEWS, FACE_VIEWS};

/// Corpus clips play at this rate, so a clip of `f` frames lasts `f / 8` s.
pub const CLIP_FPS: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl From<&Tensor> for TensorFile {
    fn from(t: &Tensor) -> Self {
        TensorFile {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

impl TensorFile {
    pub fn into_tensor(self) -> Result<Tensor> {
        Tensor::new(self.shape, self.data).map_err(CliError::from)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionRow {
    pub video: String,
    pub caption: usize,
    pub text: String,
}

/// Human-readable caption for a caption id.
pub fn caption_text(caption: usize) -> &'static str {
    match caption {
        0 => "a person facing the camera turns to their left",
        1 => "a person facing the camera turns to their right",
        2 => "a person facing away from the camera turns to their left",
        _ => "a person facing away from the camera turns to their right",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub dir: PathBuf,
    pub subjects: usize,
    pub pool_rows: usize,
    pub videos: usize,
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Contract(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn jsonl_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| CliError::io(path, e))?,
    ))
}

fn write_line<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).map_err(|e| CliError::Contract(e.to_string()))?;
    writeln!(w, "{line}").map_err(|e| CliError::io(path, e))
}

/// Cosine similarity of two equally sized slices; zero when either is zero.
fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb).sqrt()).clamp(-1.0, 1.0)
    }
}

fn body_label(theta: f64) -> BodyView {
    let c = theta.cos();
    if c > std::f64::consts::FRAC_1_SQRT_2 {
        BodyView::F
    } else if c < -std::f64::consts::FRAC_1_SQRT_2 {
        BodyView::B
    } else {
        BodyView::S
    }
}

fn face_label(theta: f64) -> FaceView {
    let (s, c) = theta.sin_cos();
    if c >= s.abs() {
        FaceView::F
    } else if s < 0.0 {
        FaceView::L
    } else {
        FaceView::R
    }
}

/// Curation record for a clip: identity similarity of the head region of
/// each whole second to the first frame, frame-to-frame similarity of whole
/// frames, and perfect tracking.
fn clip_record(id: String, clip: &Tensor, spec: &ClipSpec, head_rows: usize) -> VideoRecord {
    let [frames, c, h, w] = <[usize; 4]>::try_from(clip.shape()).expect("clip is 4-d");
    let per = c * h * w;
    let frame = |f: usize| &clip.data()[f * per..(f + 1) * per];
    let head = |f: usize| -> Vec<f64> {
        (0..c)
            .flat_map(|ch| {
                frame(f)[ch * h * w..ch * h * w + head_rows * w]
                    .iter()
                    .copied()
            })
            .collect()
    };
    let duration_s = frames as f64 / CLIP_FPS;
    let seconds = duration_s.ceil() as usize;
    let first = head(0);
    let face_sims_1fps = (0..seconds)
        .map(|s| cosine(&first, &head((s * CLIP_FPS as usize).min(frames - 1))))
        .collect();
    let clip_sims_8fps = (0..frames)
        .map(|f| {
            if f == 0 {
                1.0
            } else {
                cosine(frame(f - 1), frame(f))
            }
        })
        .collect();
    VideoRecord {
        id,
        duration_s,
        face_sims_1fps,
        clip_sims_8fps,
        track_quality: 1.0,
        face_view: face_label(spec.theta0),
        body_view: body_label(spec.theta0),
        subset: None,
        source: SourceClass::SelfCrop,
    }
}

/// Writes the corpus for `cfg` and returns what was written. Reruns with
/// the same config produce identical files.
pub fn gen_corpus(cfg: &ExperimentConfig) -> Result<CorpusSummary> {
    let dir = cfg.out_dir.join("corpus");
    create_dir(&dir)?;
    let subs = subjects(cfg.corpus.subjects, cfg.seed);
    write_json(&dir.join("subjects.json"), &subs)?;
    let (c, h, w) = (cfg.model.channels, cfg.model.height, cfg.model.width);
    let head_rows = (h / 4).max(1);

    let pool_path = dir.join("pool.jsonl");
    let records_path = dir.join("records.jsonl");
    let captions_path = dir.join("captions.jsonl");
    let mut pool = jsonl_writer(&pool_path)?;
    let mut records = jsonl_writer(&records_path)?;
    let mut captions = jsonl_writer(&captions_path)?;
    let mut pool_rows = 0;
    let mut videos = 0;
    let root = SplitRng::new(cfg.seed).derive(7);
    for (i, s) in subs.iter().enumerate() {
        let sdir = dir.join(&s.id);
        for sub in ["body", "face", "videos"] {
            create_dir(&sdir.join(sub))?;
        }
        pool_rows += write_references(s, &dir, &mut pool, &pool_path, c, h, w)?;
        let mut rng = root.derive(i as u64);
        for k in 0..cfg.corpus.videos_per_subject {
            let spec = ClipSpec::random(cfg.train.frontal_share, &mut rng);
            let clip = s.clip(
                spec.theta0,
                spec.caption,
                spec.light,
                cfg.corpus.frames,
                c,
                h,
                w,
            );
            let id = format!("{}/videos/{k}", s.id);
            write_json(&dir.join(format!("{id}.json")), &TensorFile::from(&clip))?;
            write_line(
                &mut records,
                &records_path,
                &clip_record(id.clone(), &clip, &spec, head_rows),
            )?;
            let row = CaptionRow {
                video: id,
                caption: spec.caption,
                text: caption_text(spec.caption).into(),
            };
            write_line(&mut captions, &captions_path, &row)?;
            videos += 1;
        }
    }
    for (w, p) in [
        (&mut pool, &pool_path),
        (&mut records, &records_path),
        (&mut captions, &captions_path),
    ] {
        w.flush().map_err(|e| CliError::io(p, e))?;
    }
    Ok(CorpusSummary {
        dir,
        subjects: subs.len(),
        pool_rows,
        videos,
    })
}

fn write_references(
    s: &SyntheticSubject,
    dir: &Path,
    pool: &mut impl Write,
    pool_path: &Path,
    c: usize,
    h: usize,
    w: usize,
) -> Result<usize> {
    let mut rows = 0;
    for (i, v) in BODY_VIEWS.iter().enumerate() {
        let id = format!("{}/body/{i:02}-{}", s.id, v.label);
        write_json(
            &dir.join(format!("{id}.json")),
            &TensorFile::from(&s.render(v.theta, 1.0, c, h, w)),
        )?;
        let row = CandidateRecord {
            id,
            theta: v.theta.rem_euclid(std::f64::consts::TAU),
            region: Region::Body,
            subset: Subset::A,
        };
        write_line(pool, pool_path, &row)?;
        rows += 1;
    }
    for (i, v) in FACE_VIEWS.iter().enumerate() {
        let id = format!("{}/face/{i:02}-{}", s.id, v.label);
        write_json(
            &dir.join(format!("{id}.json")),
            &TensorFile::from(&s.render_face(v.theta, 1.0, c, h, w)),
        )?;
        let row = CandidateRecord {
            id,
            theta: v.theta.rem_euclid(std::f64::consts::TAU),
            region: Region::Face,
            subset: Subset::A,
        };
        write_line(pool, pool_path, &row)?;
        rows += 1;
    }
    Ok(rows)
}
