//! The acceptance gate: every criterion runs at its stated tolerance and
//! prints one PASS/FAIL line. Run with
//! `cargo test --release -p refvid-cli --test acceptance`.
//! The toy-training criteria take several minutes on one core.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use refvid_bench::evaluate::{JudgeErrorRecord, JudgeTask};
use refvid_bench::fixture::{load_embedder, load_inputs, load_judge};
use refvid_bench::report::AggregateRow;
use refvid_bench::{
    evaluate_all, score_alignment, score_body, BenchReport, EvalConfig, FrameObservation, Setting,
    VideoReport, ViewLabel,
};
use refvid_cli::commands::write_loss_csv;
use refvid_cli::experiment::{
    back_view_set, build_model, toy_model_config, train, validation_set, RefStrategy, TrainConfig,
};
use refvid_cli::synth::{subjects, SyntheticSubject};
use refvid_core::aipa::{
    aipa_block, baseline_block, stage1_self_attention, AipaBlockParams, AttentionMode, BlockInput,
    TokenKind, TokenSequence, NORM_EPS,
};
use refvid_core::irope::{
    apply_rope, apply_rope_offsets, assign_positions, PositionTriple, RefGrid, RefKind, RopeConfig,
    RotaryTable,
};
use refvid_core::model::{DitConfig, ToyDit};
use refvid_core::params::{BoundParams, ParamStore};
use refvid_core::rectified_flow::{
    euler_sample, example_gradients, interpolate, rf_loss, ConditionContext, LatentVideo, RefImage,
    RfConfig, VelocityModel,
};
use refvid_core::view_sampler::{draw_indices, Candidate, Region, SamplerConfig};
use refvid_core::{GradTape, SplitRng, Tensor, Var};
use refvid_curation::record::read_records;
use refvid_curation::stats::{Region as StatsRegion, ViewpointStats};
use refvid_curation::{
    run_cascade, BodyView, FaceView, FilterThresholds, RecordScorer, SourceClass, Subset,
    VideoRecord,
};
use refvid_testkit as oracle;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn fixture(krate: &str, name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("..")
        .join(krate)
        .join("tests/fixtures")
        .join(name)
}

fn mat(t: &Tensor) -> oracle::Mat {
    let (r, c) = t.dims2().unwrap();
    oracle::to_mat(r, c, t.data())
}

// 1 and 2: attention --------------------------------------------------------

/// `frames×3×3` video tokens and up to three 3×3 references at d = 64.
fn attention_case(seed: u64, frames: u32, n_refs: usize) -> (AipaBlockParams, TokenSequence) {
    let d = 64;
    let heads = 4;
    let mut rng = SplitRng::new(seed);
    let mut params = AipaBlockParams::init(d, heads, 8, &mut rng).unwrap();
    params.rope = RopeConfig::new(d / heads, 3, 3);
    let grids: Vec<RefGrid> = [RefKind::Face, RefKind::Body, RefKind::Body]
        .into_iter()
        .take(n_refs)
        .map(|kind| RefGrid { kind, h: 3, w: 3 })
        .collect();
    let positions = assign_positions(frames, (3, 3), &grids, &params.rope).unwrap();
    let mut kinds = vec![TokenKind::Video; frames as usize * 9];
    for g in &grids {
        let k = if g.kind == RefKind::Face {
            TokenKind::FaceRef
        } else {
            TokenKind::BodyRef
        };
        kinds.extend(std::iter::repeat_n(k, 9));
    }
    let tokens = Tensor::randn(&[positions.len(), d], 1.0, &mut rng);
    (
        params,
        TokenSequence::new(tokens, kinds, positions).unwrap(),
    )
}

fn asymmetry() -> Outcome {
    let start = Instant::now();
    let mut tokens = 0;
    for seed in 0..20 {
        let (mut params, seq) = attention_case(seed, 2, 3);
        tokens = tokens.max(seq.tokens().shape()[0]);
        let mut rng = SplitRng::new(1000 + seed);
        // Nonzero adapters so the reference stream has its own weights.
        for a in params.adapters.iter_mut() {
            a.up = Tensor::randn(a.up.shape(), 0.2, &mut rng);
        }
        let (_, c_ref) = stage1_self_attention(&seq, &params).unwrap();
        let lv = seq.video_len();
        let d = params.d_model();
        let mut noisy = seq.tokens().clone();
        for x in &mut noisy.data_mut()[..lv * d] {
            *x += rng.normal();
        }
        let perturbed =
            TokenSequence::new(noisy, seq.kinds().to_vec(), seq.positions().to_vec()).unwrap();
        let (_, c_ref2) = stage1_self_attention(&perturbed, &params).unwrap();
        if !c_ref
            .data()
            .iter()
            .zip(c_ref2.data())
            .all(|(a, b)| a.to_bits() == b.to_bits())
        {
            return Err(format!("seed {seed}: C_ref moved under video noise"));
        }

        let (vp, rp) = seq.positions().split_at(lv);
        let mut tape = GradTape::new();
        let vars = params.bind(&mut tape, true);
        let video = tape.param(seq.video_tokens().unwrap());
        let refs = tape.param(seq.ref_tokens().unwrap());
        let input = BlockInput {
            video,
            refs: Some(refs),
            text: None,
            video_rope: Arc::new(RotaryTable::new(vp, &params.rope, params.heads).unwrap()),
            ref_rope: Some(Arc::new(
                RotaryTable::new(rp, &params.rope, params.heads).unwrap(),
            )),
        };
        let (_, c_ref) = vars
            .stage1(&mut tape, &input, AttentionMode::Asymmetric)
            .unwrap();
        let c_ref = c_ref.unwrap();
        let probe = tape.constant(Tensor::randn(tape.shape(c_ref), 1.0, &mut rng));
        let prod = tape.mul(c_ref, probe).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        if !grads.get(video).unwrap().data().iter().all(|&g| g == 0.0) {
            return Err(format!("seed {seed}: nonzero dC_ref/dvideo"));
        }
    }
    let elapsed = start.elapsed();
    check(
        within(elapsed, 5.0),
        format!("20 seeds, {tokens} tokens, bit-identical C_ref, zero gradient, {elapsed:.2?}"),
    )
}

fn reduction() -> Outcome {
    let mut worst_base: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for seed in 0..10 {
        let (params, seq) = attention_case(seed, 3, 0);
        let got = aipa_block(&seq, &params).unwrap();
        let base = baseline_block(seq.tokens(), seq.positions(), &params).unwrap();
        worst_base = worst_base.max(got.max_abs_diff(&base).unwrap());

        let (params, seq) = attention_case(seed, 2, 3);
        let got = aipa_block(&seq, &params).unwrap();
        let w = oracle::BlockWeights {
            q: mat(&params.frozen[0]),
            k: mat(&params.frozen[1]),
            v: mat(&params.frozen[2]),
            o: mat(&params.frozen[3]),
            heads: params.heads,
            base: params.rope.freq_base,
            split: params.rope.axis_split,
            eps: NORM_EPS,
        };
        let offsets: Vec<[f64; 3]> = seq.positions().iter().map(|p| p.as_offsets()).collect();
        let (want, _) = oracle::two_pass_identity_block(
            &mat(&seq.video_tokens().unwrap()),
            &mat(&seq.ref_tokens().unwrap()),
            &offsets,
            &w,
        );
        worst_oracle = worst_oracle.max(oracle::max_abs_diff(got.data(), &oracle::flatten(&want)));
    }
    check(
        worst_base <= 1e-12 && worst_oracle <= 1e-12,
        format!("no refs vs baseline {worst_base:.1e}, zero adapters vs masked oracle {worst_oracle:.1e}"),
    )
}

// 3: gradients ---------------------------------------------------------------

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let rf = RfConfig::default();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut tokens = 0;
    for seed in 0..10 {
        let cfg = DitConfig {
            frames: 2,
            channels: 2,
            height: 4,
            width: 4,
            patch: 2,
            d_model: 16,
            heads: 2,
            lora_rank: 4,
            captions: 3,
            time_dim: 8,
            head_hidden: 12,
            ..Default::default()
        };
        let mut rng = SplitRng::new(seed);
        let mut model = ToyDit::new(cfg.clone(), &mut rng).unwrap();
        // Zero-initialised tensors would hide gradient paths.
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let p = model.params().get(id);
            if p.trainable && p.value.data().iter().all(|&x| x == 0.0) {
                let shape = p.value.shape().to_vec();
                *model.params_mut().value_mut(id) = Tensor::randn(&shape, 0.3, &mut rng);
            }
        }
        let dims = cfg.latent_dims();
        let z0 = LatentVideo::randn(dims, &mut rng);
        let eps = LatentVideo::randn(dims, &mut rng);
        let mut img = || RefImage {
            pixels: Tensor::randn(&[2, 4, 4], 1.0, &mut rng),
            theta: 0.0,
        };
        let ctx = ConditionContext {
            caption: Some(1),
            face_refs: vec![img()],
            body_refs: vec![img()],
        };
        // 8 video, 8 reference and 1 text token.
        tokens = 8 + 8 + 1;
        let t = 0.3 + 0.04 * seed as f64;
        let (_, grads) = example_gradients(&model, &z0, &eps, t, &ctx, &rf).unwrap();
        for (id, g) in grads {
            let mut diff: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for i in 0..g.numel() {
                let orig = model.params().value(id).data()[i];
                model.params_mut().value_mut(id).data_mut()[i] = orig + h;
                let up = rf_loss(&model, &z0, &eps, t, &ctx, &rf)
                    .unwrap()
                    .item()
                    .unwrap();
                model.params_mut().value_mut(id).data_mut()[i] = orig - h;
                let down = rf_loss(&model, &z0, &eps, t, &ctx, &rf)
                    .unwrap()
                    .item()
                    .unwrap();
                model.params_mut().value_mut(id).data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                diff = diff.max((g.data()[i] - fd).abs());
                scale = scale.max(g.data()[i].abs().max(fd.abs()));
            }
            if diff > 0.0 {
                worst = worst.max(diff / scale);
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        worst < 1e-5 && within(elapsed, 60.0),
        format!("10 seeds, d=16, {tokens} tokens, max relative error {worst:.2e}, {elapsed:.2?}"),
    )
}

// 4: positions ---------------------------------------------------------------

fn rope() -> Outcome {
    const H_MAX: u32 = 4;
    const W_MAX: u32 = 4;
    let cfg = RopeConfig::new(12, H_MAX, W_MAX);
    if (cfg.delta_face, cfg.delta_body) != (4, 128) {
        return Err(format!(
            "plane offsets {} / {}",
            cfg.delta_face, cfg.delta_body
        ));
    }
    let g = |kind, h, w| RefGrid { kind, h, w };
    let lists = [
        vec![],
        vec![g(RefKind::Face, 1, 1)],
        vec![g(RefKind::Body, H_MAX, W_MAX)],
        vec![
            g(RefKind::Face, 2, 3),
            g(RefKind::Face, 2, 3),
            g(RefKind::Body, 4, 2),
        ],
        (0..5)
            .map(|_| g(RefKind::Face, H_MAX, W_MAX))
            .chain((0..5).map(|_| g(RefKind::Body, H_MAX, W_MAX)))
            .collect(),
    ];
    for t in 1..=128 {
        for h in 1..=H_MAX {
            for w in 1..=W_MAX {
                for refs in &lists {
                    let pos = assign_positions(t, (h, w), refs, &cfg).unwrap();
                    let mut seen = std::collections::HashSet::new();
                    if !pos.iter().all(|p| seen.insert(*p)) {
                        return Err(format!("collision at T={t}, grid {h}x{w}"));
                    }
                }
            }
        }
    }

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let rcfg = RopeConfig::new(16, H_MAX, W_MAX);
    let mut rng = SplitRng::new(4);
    let positions: Vec<PositionTriple> = (0..64)
        .map(|_| {
            PositionTriple::new(
                rng.below(260) as u32,
                rng.below(16) as u32,
                rng.below(40) as u32,
            )
        })
        .collect();
    let x = Tensor::randn(&[64, 16], 3.0, &mut rng);
    let y = apply_rope(&x, &positions, &rcfg).unwrap();
    let mut iso: f64 = 0.0;
    for r in 0..64 {
        let a = &x.data()[r * 16..(r + 1) * 16];
        let b = &y.data()[r * 16..(r + 1) * 16];
        iso = iso.max((dot(a, a).sqrt() - dot(b, b).sqrt()).abs());
    }

    let mut rel: f64 = 0.0;
    for _ in 0..50 {
        let q = Tensor::randn(&[1, 16], 1.0, &mut rng);
        let k = Tensor::randn(&[1, 16], 1.0, &mut rng);
        let p: [f64; 3] = std::array::from_fn(|_| rng.below(200) as f64);
        let s: [f64; 3] = std::array::from_fn(|_| rng.below(200) as f64);
        let lhs = dot(
            apply_rope_offsets(&q, &[p], &rcfg).unwrap().data(),
            apply_rope_offsets(&k, &[s], &rcfg).unwrap().data(),
        );
        let rhs = dot(
            q.data(),
            apply_rope_offsets(&k, &[[s[0] - p[0], s[1] - p[1], s[2] - p[2]]], &rcfg)
                .unwrap()
                .data(),
        );
        rel = rel.max((lhs - rhs).abs());
    }
    check(
        iso <= 1e-10 && rel <= 1e-10,
        format!("disjoint for T<=128 and grids <=4x4; isometry {iso:.1e}; relative-offset {rel:.1e} over 50 pairs"),
    )
}

// 5: rectified flow ----------------------------------------------------------

/// The exact constant velocity `ε − z0` of the straight path.
struct OracleField {
    params: ParamStore,
    velocity: Tensor,
}

impl VelocityModel for OracleField {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn velocity(
        &self,
        tape: &mut GradTape,
        _: &BoundParams,
        _: Var,
        _: f64,
        _: &ConditionContext,
    ) -> refvid_core::Result<Var> {
        Ok(tape.constant(self.velocity.clone()))
    }
}

fn rectified_flow() -> Outcome {
    let mut rng = SplitRng::new(5);
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let z0 = LatentVideo::randn([2, 3, 4, 4], &mut rng);
        let eps = LatentVideo::randn([2, 3, 4, 4], &mut rng);
        if bits(interpolate(&z0, &eps, 0.0).unwrap().tensor()) != bits(z0.tensor())
            || bits(interpolate(&z0, &eps, 1.0).unwrap().tensor()) != bits(eps.tensor())
        {
            return Err("interpolation endpoints are not bit-exact".into());
        }
        let field = OracleField {
            params: ParamStore::new(),
            velocity: eps.tensor().sub(z0.tensor()).unwrap(),
        };
        for steps in [1, 4, 32] {
            let z = euler_sample(&field, &eps, &ConditionContext::default(), steps).unwrap();
            worst = worst.max(z.tensor().max_abs_diff(z0.tensor()).unwrap());
        }
    }
    check(
        worst <= 1e-12,
        format!("endpoints bit-exact; oracle Euler error {worst:.1e} for 1, 4, 32 steps"),
    )
}

// 6: sampler -----------------------------------------------------------------

fn pool(angles: &[f64]) -> Vec<Candidate> {
    angles
        .iter()
        .enumerate()
        .map(|(i, &a)| Candidate::new(format!("v{i}"), a, Region::Body).unwrap())
        .collect()
}

/// Exact selection-set distribution by walking every ordered draw sequence.
fn enumerate(
    angles: &[f64],
    weights: Vec<f64>,
    cfg: &SamplerConfig,
    left: usize,
    taken: &mut Vec<usize>,
    p: f64,
    out: &mut BTreeMap<Vec<usize>, f64>,
) {
    if left == 0 {
        let mut key = taken.clone();
        key.sort_unstable();
        *out.entry(key).or_default() += p;
        return;
    }
    let total: f64 = (0..angles.len())
        .filter(|i| !taken.contains(i))
        .map(|i| weights[i])
        .sum();
    for i in 0..angles.len() {
        if taken.contains(&i) {
            continue;
        }
        let mut next = weights.clone();
        for j in 0..angles.len() {
            if oracle::circular_distance(angles[i], angles[j]) < cfg.delta {
                next[j] *= cfg.gamma;
            }
        }
        taken.push(i);
        enumerate(
            angles,
            next,
            cfg,
            left - 1,
            taken,
            p * weights[i] / total,
            out,
        );
        taken.pop();
    }
}

fn exact(angles: &[f64], cfg: &SamplerConfig) -> BTreeMap<Vec<usize>, f64> {
    let mut out = BTreeMap::new();
    enumerate(
        angles,
        vec![1.0; angles.len()],
        cfg,
        cfg.draws,
        &mut Vec::new(),
        1.0,
        &mut out,
    );
    out
}

fn sampler() -> Outcome {
    let start = Instant::now();
    let fixtures: Vec<(Vec<f64>, usize)> = vec![
        (vec![0.0, PI / 12.0, PI], 2),
        (vec![0.0, 0.0, PI], 2),
        (
            vec![0.0, PI / 12.0, PI / 3.0, PI, 1.5 * PI, TAU - PI / 24.0],
            3,
        ),
        (vec![0.0, -PI / 4.0, PI / 4.0, 0.0, 0.0], 2),
        (vec![0.1, 0.2, 0.3, 0.4], 4),
        (vec![0.0, 0.05, 0.1, PI / 2.0, PI, PI + 0.1], 5),
        (vec![1.0], 1),
    ];
    let mut worst_tv: f64 = 0.0;
    for (n, (angles, draws)) in fixtures.iter().enumerate() {
        let cfg = SamplerConfig {
            draws: *draws,
            ..Default::default()
        };
        if (cfg.delta, cfg.gamma) != (PI / 6.0, 0.5) {
            return Err(format!(
                "default sampler is δ={}, γ={}",
                cfg.delta, cfg.gamma
            ));
        }
        let candidates = pool(angles);
        let mut rng = SplitRng::new(n as u64);
        let mut counts: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        let trials = 100_000;
        for _ in 0..trials {
            let mut set = draw_indices(&candidates, &cfg, &mut rng).unwrap();
            set.sort_unstable();
            *counts.entry(set).or_default() += 1.0 / trials as f64;
        }
        worst_tv = worst_tv.max(oracle::total_variation(&exact(angles, &cfg), &counts));
    }

    // Probability that two selected views sit within δ falls as γ falls.
    let mut monotone = true;
    for (angles, _) in fixtures.iter().filter(|(a, _)| a.len() >= 2) {
        let close = |set: &Vec<usize>| {
            set.iter().any(|&a| {
                set.iter()
                    .any(|&b| a != b && oracle::circular_distance(angles[a], angles[b]) < PI / 6.0)
            })
        };
        let mass = |gamma| {
            exact(
                angles,
                &SamplerConfig {
                    gamma,
                    draws: 2,
                    ..Default::default()
                },
            )
            .into_iter()
            .filter(|(k, _)| close(k))
            .map(|(_, p)| p)
            .sum::<f64>()
        };
        let (hi, mid, lo) = (mass(1.0), mass(0.5), mass(1e-9));
        monotone &= hi >= mid - 1e-12 && mid >= lo - 1e-12;
    }
    let elapsed = start.elapsed();
    check(
        worst_tv <= 0.01 && monotone && within(elapsed, 30.0),
        format!("7 pools, max total variation {worst_tv:.4}, suppression monotone {monotone}, {elapsed:.2?}"),
    )
}

// 7: curation ----------------------------------------------------------------

fn curation() -> Outcome {
    let path = fixture("curation", "cascade.jsonl");
    let records =
        read_records(std::io::BufReader::new(std::fs::File::open(path).unwrap())).unwrap();
    let th = FilterThresholds::default();
    let first = run_cascade(&records, &th, &RecordScorer).unwrap();
    let kept: Vec<&str> = first.kept.iter().map(|r| r.id.as_str()).collect();
    // v1 mean 0.35 fails coarse; v2 mean exactly 0.40 passes; v3 clip
    // exactly 0.45 is not above 0.45; v5 tracking fails.
    if kept != ["v2", "v4", "v6"] {
        return Err(format!("kept {kept:?}"));
    }
    let again = run_cascade(&records, &th, &RecordScorer).unwrap();
    let rerun = run_cascade(&first.kept, &th, &RecordScorer).unwrap();
    let deterministic = format!("{again:?}") == format!("{first:?}");
    let idempotent = rerun.kept == first.kept && rerun.audit.is_empty();

    // 1000 records with known face and body proportions.
    let faces = [
        (FaceView::F, 308),
        (FaceView::L, 163),
        (FaceView::R, 250),
        (FaceView::U, 29),
        (FaceView::D, 250),
    ];
    let bodies = [(BodyView::F, 628), (BodyView::S, 366), (BodyView::B, 6)];
    let face_seq = faces.iter().flat_map(|&(v, n)| std::iter::repeat_n(v, n));
    let body_seq = bodies.iter().flat_map(|&(v, n)| std::iter::repeat_n(v, n));
    let corpus: Vec<VideoRecord> = face_seq
        .zip(body_seq)
        .enumerate()
        .map(|(i, (face_view, body_view))| VideoRecord {
            id: format!("r{i}"),
            duration_s: 1.0,
            face_sims_1fps: vec![0.9],
            clip_sims_8fps: vec![0.9; 8],
            track_quality: 0.9,
            face_view,
            body_view,
            subset: Some(Subset::A),
            source: SourceClass::SelfCrop,
        })
        .collect();
    let stats = ViewpointStats::from_records(&corpus);
    let face_row = stats
        .row(Some(Subset::A), StatsRegion::Face, SourceClass::SelfCrop)
        .map(|r| r.distribution());
    let body_row = stats
        .row(Some(Subset::A), StatsRegion::Body, SourceClass::SelfCrop)
        .map(|r| r.distribution());
    let stats_ok = face_row.as_deref() == Some("F:30.8 / L:16.3 / R:25.0 / U:2.9 / D:25.0")
        && body_row.as_deref() == Some("F:62.8 / S:36.6 / B:0.6")
        && stats.to_table().contains("Viewpoint Distribution (%)");
    check(
        deterministic && idempotent && stats_ok,
        format!("kept v2 v4 v6; deterministic {deterministic}; idempotent {idempotent}; stats rows {stats_ok}"),
    )
}

// 8: metrics -----------------------------------------------------------------

fn obs(
    frame_index: usize,
    view: ViewLabel,
    verdict: u8,
    face: Option<Vec<f64>>,
) -> FrameObservation {
    FrameObservation {
        frame_index,
        estimated_view: view,
        body_verdict: verdict,
        face_embedding: face,
    }
}

/// Assembled by hand from the fixture files.
fn expected_report() -> BenchReport {
    use ViewLabel::*;
    let face_id = (1.0 + 0.6 + 0.0) / 3.0;
    let s01 = VideoReport {
        subject_id: "s01".into(),
        video_id: "s01-v1".into(),
        setting: Setting::ThreeView,
        body_positive: 3,
        body_frames: 4,
        score_body: Some(0.75),
        face_id: Some(face_id),
        feat_align: 1.0,
        vlm_align: Some(1),
        embedder: "fixture-embedder".into(),
        observations: vec![
            obs(0, Front, 1, Some(vec![1.0, 0.0, 0.0])),
            obs(1, Side, 1, Some(vec![0.6, 0.8, 0.0])),
            obs(2, Back, 0, None),
            obs(3, Back, 1, Some(vec![0.0, 0.0, 1.0])),
        ],
        judge_errors: vec![],
    };
    let s02 = VideoReport {
        subject_id: "s02".into(),
        video_id: "s02-v1".into(),
        setting: Setting::InTheWild,
        body_positive: 2,
        body_frames: 3,
        score_body: Some(2.0 / 3.0),
        face_id: None,
        feat_align: 0.8,
        vlm_align: Some(0),
        embedder: "fixture-embedder".into(),
        observations: vec![obs(0, Front, 1, None), obs(2, Back, 1, None)],
        judge_errors: vec![JudgeErrorRecord {
            frame_index: Some(1),
            task: JudgeTask::Body,
            message: "transport failure: scripted failure".into(),
        }],
    };
    let agg = |setting, videos, body, face, feat, vlm| AggregateRow {
        setting,
        videos,
        body_consistency: Some(body),
        face_id: face,
        feature_alignment: Some(feat),
        vlm_alignment: Some(vlm),
    };
    BenchReport {
        embedder: "fixture-embedder".into(),
        rows: vec![s01, s02],
        aggregate: vec![
            agg(Some(Setting::ThreeView), 1, 0.75, Some(face_id), 1.0, 1.0),
            agg(Some(Setting::InTheWild), 1, 2.0 / 3.0, None, 0.8, 0.0),
            agg(None, 2, 5.0 / 7.0, Some(face_id), 0.9, 0.5),
        ],
    }
}

fn metrics() -> Outcome {
    let body = score_body(&[1, 1, 0, 1]).unwrap();
    let align = score_alignment(&[1, 0]).unwrap();
    let remote_configured = std::env::var_os("WA_JUDGE_URL").is_some();
    let inputs = load_inputs(&fixture("bench", "inputs.json")).unwrap();
    let judge = load_judge(&fixture("bench", "verdicts.jsonl")).unwrap();
    let embedder = load_embedder(&fixture("bench", "embeddings.json")).unwrap();
    let report = evaluate_all(&inputs, &judge, &embedder, &EvalConfig::default()).unwrap();
    let bitwise = report == expected_report() && report.to_json() == expected_report().to_json();
    check(
        body == 0.75 && align == 0.5 && bitwise,
        format!(
            "Score_Body {body}, Score_Align {align}, fixture report bitwise {bitwise}, remote judge configured {remote_configured}"
        ),
    )
}

// 9 to 11: toy training ------------------------------------------------------

/// Subjects for the toy experiments: 24 train, 8 held out.
const SUBJECT_SEED: u64 = 7;
/// Evaluation clips and noise, shared by every model.
const EVAL_SEED: u64 = 13;
const TOY_SEEDS: [u64; 3] = [1, 2, 3];

struct Toy {
    train: Vec<SyntheticSubject>,
    held_out: Vec<SyntheticSubject>,
    cfg: DitConfig,
    sampler: SamplerConfig,
    rf: RfConfig,
    /// The seed-1 adaptive model, shared by criteria 9 to 11.
    adaptive: Option<ToyDit>,
}

impl Toy {
    fn new() -> Self {
        let mut all = subjects(32, SUBJECT_SEED);
        let held_out = all.split_off(24);
        Toy {
            train: all,
            held_out,
            cfg: toy_model_config(),
            sampler: SamplerConfig::default(),
            rf: RfConfig::default(),
            adaptive: None,
        }
    }

    fn fit(&self, strategy: RefStrategy, seed: u64) -> ToyDit {
        let tc = TrainConfig {
            strategy,
            ..Default::default()
        };
        let mut m = build_model(&self.cfg, &tc, seed).unwrap();
        train(&mut m, &self.train, &tc, &self.sampler, &self.rf, seed).unwrap();
        m
    }

    fn adaptive(&mut self) -> &ToyDit {
        if self.adaptive.is_none() {
            self.adaptive = Some(self.fit(RefStrategy::ViewpointAdaptive, TOY_SEEDS[0]));
        }
        self.adaptive.as_ref().unwrap()
    }

    fn split(&mut self) -> (&ToyDit, &Self) {
        self.adaptive();
        (self.adaptive.as_ref().unwrap(), self)
    }
}

fn conditioning(toy: &mut Toy) -> Outcome {
    let start = Instant::now();
    let steps = TrainConfig::default().steps;
    let refs = TrainConfig::default().refs;
    let none = toy.fit(RefStrategy::None, TOY_SEEDS[0]);
    let (va, toy) = toy.split();
    let val = validation_set(
        &toy.held_out,
        &toy.cfg,
        &TrainConfig::default(),
        &toy.sampler,
        EVAL_SEED,
    )
    .unwrap();
    let with_refs = val.loss(va, &toy.rf).unwrap();
    let without = val.without_references().loss(&none, &toy.rf).unwrap();
    let ratio = with_refs / without;
    let elapsed = start.elapsed();
    check(
        ratio <= 0.8 && within(elapsed, 600.0),
        format!(
            "32 subjects, {steps} steps, {refs} refs: validation {with_refs:.4} vs no-reference {without:.4}, ratio {ratio:.3} (<= 0.8), {elapsed:.0?}"
        ),
    )
}

fn viewpoint_adaptivity(toy: &mut Toy) -> Outcome {
    let eval = back_view_set(&toy.held_out, &toy.cfg, EVAL_SEED).unwrap();
    let mut ordered = 0;
    let mut lines = Vec::new();
    for seed in TOY_SEEDS {
        let raw = eval
            .loss(&toy.fit(RefStrategy::RawCrop, seed), &toy.rf)
            .unwrap();
        let random = eval
            .loss(&toy.fit(RefStrategy::Random, seed), &toy.rf)
            .unwrap();
        let va = if seed == TOY_SEEDS[0] {
            let (va, toy) = toy.split();
            eval.loss(va, &toy.rf).unwrap()
        } else {
            eval.loss(&toy.fit(RefStrategy::ViewpointAdaptive, seed), &toy.rf)
                .unwrap()
        };
        let ok = va < random && random < raw;
        ordered += usize::from(ok);
        lines.push(format!(
            "seed {seed}: adaptive {va:.4} random {random:.4} raw-crop {raw:.4}{}",
            if ok { "" } else { " (out of order)" }
        ));
    }
    check(
        ordered * 2 > TOY_SEEDS.len(),
        format!(
            "back-view loss ordered on {ordered}/3 seeds; {}",
            lines.join("; ")
        ),
    )
}

fn determinism(toy: &mut Toy) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let tc = TrainConfig {
        steps: 50,
        ..Default::default()
    };
    let mut csvs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let mut m = build_model(&toy.cfg, &tc, 11).unwrap();
        let rows = train(&mut m, &toy.train, &tc, &toy.sampler, &toy.rf, 11).unwrap();
        let path = dir.path().join(name);
        write_loss_csv(&path, &rows).unwrap();
        csvs.push(std::fs::read(path).unwrap());
    }
    let csv_equal = csvs[0] == csvs[1];

    let (model, toy) = toy.split();
    let path = dir.path().join("model.ckpt");
    model.save(&path).unwrap();
    let mut other = build_model(&toy.cfg, &TrainConfig::default(), 99).unwrap();
    other.load(&path).unwrap();
    let a = model.params().to_entries();
    let b = other.params().to_entries();
    let round_trip = a.len() == b.len()
        && a.iter().zip(&b).all(|((na, ta), (nb, tb))| {
            na == nb
                && ta.shape() == tb.shape()
                && ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        });
    check(
        csv_equal && round_trip,
        format!("loss CSVs identical {csv_equal} ({} bytes); checkpoint bit-exact {round_trip} ({} tensors)", csvs[0].len(), a.len()),
    )
}

fn report(n: usize, name: &str, outcome: std::thread::Result<Outcome>) -> bool {
    let (ok, detail) = match outcome {
        Ok(Ok(d)) => (true, d),
        Ok(Err(d)) => (false, d),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    // Written past the test harness capture so the lines always show.
    let line = format!(
        "{} {n:>2}. {name}: {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    ok
}

#[test]
fn acceptance() {
    let mut toy = Toy::new();
    let mut failed = Vec::new();
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !report(n, name, catch_unwind(AssertUnwindSafe(f))) {
            failed.push(n);
        }
    };
    run(1, "asymmetry invariant", &mut asymmetry);
    run(2, "reduction invariant", &mut reduction);
    run(3, "gradient fidelity", &mut gradient_fidelity);
    run(4, "identity-aware rotary positions", &mut rope);
    run(5, "rectified flow", &mut rectified_flow);
    run(6, "sampler correctness", &mut sampler);
    run(7, "curation cascade", &mut curation);
    run(8, "metrics", &mut metrics);
    run(9, "toy conditioning effect", &mut || conditioning(&mut toy));
    run(10, "toy viewpoint-adaptivity effect", &mut || {
        viewpoint_adaptivity(&mut toy)
    });
    run(11, "determinism and persistence", &mut || {
        determinism(&mut toy)
    });
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
