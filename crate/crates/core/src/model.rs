//! A small video diffusion transformer built from AIPA blocks.
//!
//! Latent frames are cut into `p×p` patches and embedded as video tokens.
//! Reference images are embedded with their own patch projection plus a
//! face/body type vector. The caption id selects rows of a learned text
//! table. The blocks' attention projections are the frozen backbone; the
//! embeddings, output head and reference adapters are trainable.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aipa::{AipaBlockIds, AipaBlockParams, AttentionMode, BlockInput};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::irope::{
    assign_positions, assign_positions_shared, RefGrid, RefKind, RopeConfig, RotaryTable,
};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::rectified_flow::{ConditionContext, VelocityModel};
use crate::rng::SplitRng;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DitConfig {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub lora_rank: usize,
    pub lora_scale: f64,
    pub captions: usize,
    pub text_tokens: usize,
    pub time_dim: usize,
    pub head_hidden: usize,
    pub attention: AttentionMode,
    /// Identity-aware reference positions; when off, references reuse the
    /// first frame's lattice.
    pub identity_rope: bool,
    pub freq_base: f64,
    pub delta_face: u32,
    pub delta_body: u32,
}

impl Default for DitConfig {
    fn default() -> Self {
        Self {
            frames: 2,
            channels: 3,
            height: 8,
            width: 8,
            patch: 2,
            d_model: 64,
            heads: 4,
            layers: 1,
            lora_rank: 8,
            lora_scale: 1.0,
            captions: 8,
            text_tokens: 1,
            time_dim: 16,
            head_hidden: 64,
            attention: AttentionMode::Asymmetric,
            identity_rope: true,
            freq_base: 10000.0,
            delta_face: RopeConfig::DELTA_FACE,
            delta_body: RopeConfig::DELTA_BODY,
        }
    }
}

impl DitConfig {
    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn latent_dims(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn rope(&self) -> RopeConfig {
        let (gh, gw) = self.grid();
        let mut r = RopeConfig::new(self.d_model / self.heads.max(1), gh as u32, gw as u32);
        r.freq_base = self.freq_base;
        r.delta_face = self.delta_face;
        r.delta_body = self.delta_body;
        r
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.frames),
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("patch", self.patch),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("lora_rank", self.lora_rank),
            ("captions", self.captions),
            ("text_tokens", self.text_tokens),
            ("time_dim", self.time_dim),
            ("head_hidden", self.head_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "patch {} does not tile {}x{}",
                self.patch, self.height, self.width
            )));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide d_model {}",
                self.heads, self.d_model
            )));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::Config("time_dim must be even".into()));
        }
        if !(self.lora_scale > 0.0) {
            return Err(Error::Config("lora_scale must be positive".into()));
        }
        self.rope().validate()
    }
}

#[derive(Clone, Debug)]
struct Ids {
    video_w: ParamId,
    video_b: ParamId,
    time_w: ParamId,
    time_b: ParamId,
    ref_w: ParamId,
    ref_b: ParamId,
    ref_kind: ParamId,
    caption: ParamId,
    blocks: Vec<AipaBlockIds>,
    head_w1: ParamId,
    head_b1: ParamId,
    head_w2: ParamId,
    head_b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct ToyDit {
    cfg: DitConfig,
    params: ParamStore,
    ids: Ids,
    patchify: Arc<[usize]>,
    unpatchify: Arc<[usize]>,
    patchify_image: Arc<[usize]>,
}

impl ToyDit {
    pub fn new(cfg: DitConfig, rng: &mut SplitRng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let pd = cfg.patch_dim();
        let mut store = ParamStore::new();
        let fan = |n: usize| (1.0 / n as f64).sqrt();

        let video_w = store.add(
            "embed.video.weight",
            Tensor::randn(&[pd, d], fan(pd), rng),
            true,
        )?;
        let video_b = store.add("embed.video.bias", Tensor::zeros(&[1, d]), true)?;
        let time_w = store.add(
            "embed.time.weight",
            Tensor::randn(&[cfg.time_dim, d], fan(cfg.time_dim), rng),
            true,
        )?;
        let time_b = store.add("embed.time.bias", Tensor::zeros(&[1, d]), true)?;
        let ref_w = store.add(
            "embed.ref.weight",
            Tensor::randn(&[pd, d], fan(pd), rng),
            true,
        )?;
        let ref_b = store.add("embed.ref.bias", Tensor::zeros(&[1, d]), true)?;
        let ref_kind = store.add("embed.ref_kind", Tensor::randn(&[2, d], 0.1, rng), true)?;
        let caption = store.add(
            "embed.caption",
            Tensor::randn(&[cfg.captions * cfg.text_tokens, d], 1.0, rng),
            true,
        )?;

        let mut blocks = Vec::with_capacity(cfg.layers);
        for layer in 0..cfg.layers {
            let mut p = AipaBlockParams::init(d, cfg.heads, cfg.lora_rank, rng)?;
            p.rope = cfg.rope();
            for a in p.adapters.iter_mut() {
                a.scale = cfg.lora_scale;
            }
            blocks.push(p.register(&mut store, layer)?);
        }

        let head_w1 = store.add(
            "head.hidden.weight",
            Tensor::randn(&[d, cfg.head_hidden], fan(d), rng),
            true,
        )?;
        let head_b1 = store.add(
            "head.hidden.bias",
            Tensor::zeros(&[1, cfg.head_hidden]),
            true,
        )?;
        let head_w2 = store.add(
            "head.out.weight",
            Tensor::zeros(&[cfg.head_hidden, pd]),
            true,
        )?;
        let head_b2 = store.add("head.out.bias", Tensor::zeros(&[1, pd]), true)?;

        let (patchify, unpatchify) = patch_indices(&cfg, cfg.frames);
        let (patchify_image, _) = patch_indices(&cfg, 1);
        Ok(Self {
            ids: Ids {
                video_w,
                video_b,
                time_w,
                time_b,
                ref_w,
                ref_b,
                ref_kind,
                caption,
                blocks,
                head_w1,
                head_b1,
                head_w2,
                head_b2,
            },
            cfg,
            params: store,
            patchify: patchify.into(),
            unpatchify: unpatchify.into(),
            patchify_image: patchify_image.into(),
        })
    }

    pub fn config(&self) -> &DitConfig {
        &self.cfg
    }

    /// Marks the backbone attention projections trainable or frozen.
    pub fn set_backbone_trainable(&mut self, trainable: bool) {
        for b in &self.ids.blocks {
            for id in b.frozen {
                self.params.set_trainable(id, trainable);
            }
        }
    }

    pub fn backbone_ids(&self) -> Vec<ParamId> {
        self.ids.blocks.iter().flat_map(|b| b.frozen).collect()
    }

    pub fn adapter_ids(&self) -> Vec<ParamId> {
        self.ids
            .blocks
            .iter()
            .flat_map(|b| b.down.into_iter().chain(b.up))
            .collect()
    }

    pub fn block_params(&self, layer: usize) -> AipaBlockParams {
        self.ids.blocks[layer].params(&self.params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.params.to_entries())
    }

    pub fn load(&mut self, path: &std::path::Path) -> Result<()> {
        self.params.load_entries(checkpoint::load(path)?)
    }

    fn time_features(&self, t: f64) -> Tensor {
        let half = self.cfg.time_dim / 2;
        let mut out = Vec::with_capacity(self.cfg.time_dim);
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            out.push((1000.0 * t * freq).cos());
        }
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            out.push((1000.0 * t * freq).sin());
        }
        Tensor::new(vec![1, self.cfg.time_dim], out).expect("time features")
    }

    fn ref_grids(&self, ctx: &ConditionContext) -> Vec<RefGrid> {
        let (gh, gw) = self.cfg.grid();
        let grid = |kind| RefGrid {
            kind,
            h: gh as u32,
            w: gw as u32,
        };
        ctx.face_refs
            .iter()
            .map(|_| grid(RefKind::Face))
            .chain(ctx.body_refs.iter().map(|_| grid(RefKind::Body)))
            .collect()
    }

    fn embed_references(
        &self,
        tape: &mut GradTape,
        bound: &BoundParams,
        ctx: &ConditionContext,
    ) -> Result<Option<Var>> {
        if ctx.ref_count() == 0 {
            return Ok(None);
        }
        let img_shape = [self.cfg.channels, self.cfg.height, self.cfg.width];
        let per = self.cfg.grid().0 * self.cfg.grid().1;
        let pd = self.cfg.patch_dim();
        let mut patches = Vec::with_capacity(ctx.ref_count());
        let mut kinds = Vec::with_capacity(ctx.ref_count() * per * self.cfg.d_model);
        let d = self.cfg.d_model;
        for (kind, img) in ctx
            .face_refs
            .iter()
            .map(|r| (0usize, r))
            .chain(ctx.body_refs.iter().map(|r| (1usize, r)))
        {
            if img.pixels.shape() != img_shape {
                return Err(Error::Contract(format!(
                    "reference image of shape {:?}, expected {img_shape:?}",
                    img.pixels.shape()
                )));
            }
            patches.push(img.pixels.gather(&self.patchify_image, &[per, pd])?);
            for _ in 0..per {
                kinds.extend((0..d).map(|j| kind * d + j));
            }
        }
        let refs: Vec<&Tensor> = patches.iter().collect();
        let r = tape.constant(Tensor::concat_rows(&refs)?);
        let x = tape.affine(r, bound.var(self.ids.ref_w), bound.var(self.ids.ref_b))?;
        let rows = tape.shape(x)[0];
        let kind_emb = tape.gather(bound.var(self.ids.ref_kind), kinds.into(), &[rows, d])?;
        Ok(Some(tape.add(x, kind_emb)?))
    }
}

/// Flat indices that cut `frames×c×h×w` into raster-ordered patch tokens
/// with `(c, py, px)` feature order, and the inverse permutation.
fn patch_indices(cfg: &DitConfig, frames: usize) -> (Vec<usize>, Vec<usize>) {
    let (c, h, w, p) = (cfg.channels, cfg.height, cfg.width, cfg.patch);
    let (gh, gw) = (h / p, w / p);
    let n = frames * c * h * w;
    let mut fwd = Vec::with_capacity(n);
    for f in 0..frames {
        for hi in 0..gh {
            for wi in 0..gw {
                for ci in 0..c {
                    for py in 0..p {
                        for px in 0..p {
                            fwd.push(((f * c + ci) * h + hi * p + py) * w + wi * p + px);
                        }
                    }
                }
            }
        }
    }
    let mut inv = vec![0; n];
    for (i, &src) in fwd.iter().enumerate() {
        inv[src] = i;
    }
    (fwd, inv)
}

impl VelocityModel for ToyDit {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn velocity(
        &self,
        tape: &mut GradTape,
        bound: &BoundParams,
        z_t: Var,
        t: f64,
        ctx: &ConditionContext,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let dims = cfg.latent_dims();
        if tape.shape(z_t) != dims {
            return Err(Error::Contract(format!(
                "latent of shape {:?}, model expects {dims:?}",
                tape.shape(z_t)
            )));
        }
        let (gh, gw) = cfg.grid();
        let lv = cfg.frames * gh * gw;
        let pd = cfg.patch_dim();
        let d = cfg.d_model;

        let tokens = tape.gather(z_t, self.patchify.clone(), &[lv, pd])?;
        let x = tape.affine(
            tokens,
            bound.var(self.ids.video_w),
            bound.var(self.ids.video_b),
        )?;
        let tf = tape.constant(self.time_features(t));
        let te = tape.affine(tf, bound.var(self.ids.time_w), bound.var(self.ids.time_b))?;
        let te = tape.silu(te);
        let te = tape.repeat_rows(te, lv)?;
        let mut video = tape.add(x, te)?;

        let text = match ctx.caption {
            Some(c) if c < cfg.captions => {
                let idx: Vec<usize> = (0..cfg.text_tokens * d)
                    .map(|i| (c * cfg.text_tokens) * d + i)
                    .collect();
                Some(tape.gather(
                    bound.var(self.ids.caption),
                    idx.into(),
                    &[cfg.text_tokens, d],
                )?)
            }
            Some(c) => {
                return Err(Error::Contract(format!(
                    "caption id {c} outside table of {}",
                    cfg.captions
                )))
            }
            None => None,
        };

        let mut refs = self.embed_references(tape, bound, ctx)?;
        let grids = self.ref_grids(ctx);
        let rope = cfg.rope();
        let positions = if cfg.identity_rope {
            assign_positions(cfg.frames as u32, (gh as u32, gw as u32), &grids, &rope)?
        } else {
            assign_positions_shared(cfg.frames as u32, (gh as u32, gw as u32), &grids)?
        };
        let (vp, rp) = positions.split_at(lv);
        let video_rope = Arc::new(RotaryTable::new(vp, &rope, cfg.heads)?);
        let ref_rope = if rp.is_empty() {
            None
        } else {
            Some(Arc::new(RotaryTable::new(rp, &rope, cfg.heads)?))
        };

        for block in &self.ids.blocks {
            let vars = block.vars(bound);
            let input = BlockInput {
                video,
                refs,
                text,
                video_rope: video_rope.clone(),
                ref_rope: ref_rope.clone(),
            };
            let out = vars.forward(tape, &input, cfg.attention)?;
            video = out.video;
            refs = out.c_ref;
        }

        let h = tape.rms_norm_rows(video, crate::aipa::NORM_EPS)?;
        let h = tape.affine(h, bound.var(self.ids.head_w1), bound.var(self.ids.head_b1))?;
        let h = tape.silu(h);
        let out = tape.affine(h, bound.var(self.ids.head_w2), bound.var(self.ids.head_b2))?;
        tape.gather(out, self.unpatchify.clone(), &dims)
    }
}
