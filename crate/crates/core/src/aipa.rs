//! Asymmetric identity-preserving attention.
//!
//! Each block runs attention in two stages:
//!
//! 1. Video tokens self-attend among themselves with the frozen projections.
//!    Reference tokens (faces and bodies jointly) self-attend among themselves
//!    with adapter-augmented projections, producing `C_ref`.
//! 2. Video tokens query `[video; text; C_ref]`. Video and text keys/values use
//!    the frozen projections, `C_ref` keys/values use the adapted ones.
//!
//! Reference tokens never read video tokens, so `C_ref` is independent of the
//! noisy latent. The video stream only ever sees frozen weights; the low-rank
//! adapters act on reference tokens alone.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::irope::{PositionTriple, RopeConfig, RotaryTable};
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::rng::SplitRng;
use crate::tape::{multi_head_attention, GradTape, Var};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Video,
    FaceRef,
    BodyRef,
}

/// Attention input: video tokens first, then face references, then body
/// references, each with its 3D position.
#[derive(Clone, Debug)]
pub struct TokenSequence {
    tokens: Tensor,
    kinds: Vec<TokenKind>,
    positions: Vec<PositionTriple>,
}

impl TokenSequence {
    pub fn new(
        tokens: Tensor,
        kinds: Vec<TokenKind>,
        positions: Vec<PositionTriple>,
    ) -> Result<Self> {
        let (l, _) = tokens.dims2()?;
        if kinds.len() != l || positions.len() != l {
            return Err(Error::Contract(format!(
                "{l} tokens but {} kinds and {} positions",
                kinds.len(),
                positions.len()
            )));
        }
        let rank = |k: &TokenKind| match k {
            TokenKind::Video => 0,
            TokenKind::FaceRef => 1,
            TokenKind::BodyRef => 2,
        };
        if kinds.windows(2).any(|w| rank(&w[0]) > rank(&w[1])) {
            return Err(Error::Contract(
                "token kinds must be ordered video, face references, body references".into(),
            ));
        }
        Ok(Self {
            tokens,
            kinds,
            positions,
        })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn kinds(&self) -> &[TokenKind] {
        &self.kinds
    }

    pub fn positions(&self) -> &[PositionTriple] {
        &self.positions
    }

    pub fn video_len(&self) -> usize {
        self.kinds
            .iter()
            .filter(|k| **k == TokenKind::Video)
            .count()
    }

    pub fn ref_len(&self) -> usize {
        self.kinds.len() - self.video_len()
    }

    pub fn video_tokens(&self) -> Result<Tensor> {
        self.tokens.slice_rows(0, self.video_len())
    }

    pub fn ref_tokens(&self) -> Result<Tensor> {
        self.tokens.slice_rows(self.video_len(), self.kinds.len())
    }
}

/// Low-rank delta `scale · down · up` added to a frozen projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    pub down: Tensor,
    pub up: Tensor,
    pub scale: f64,
}

impl LoraAdapter {
    /// `down ~ Normal(0, 1/r)`, `up = 0`, so the delta starts at exactly zero.
    pub fn init(d_model: usize, rank: usize, scale: f64, rng: &mut SplitRng) -> Self {
        Self {
            down: Tensor::randn(&[d_model, rank], (1.0 / rank as f64).sqrt(), rng),
            up: Tensor::zeros(&[rank, d_model]),
            scale,
        }
    }

    pub fn rank(&self) -> usize {
        self.down.shape()[1]
    }

    pub fn delta(&self) -> Result<Tensor> {
        Ok(self.down.matmul(&self.up)?.scale(self.scale))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Proj {
    Q = 0,
    K = 1,
    V = 2,
    O = 3,
}

impl Proj {
    pub const ALL: [Proj; 4] = [Proj::Q, Proj::K, Proj::V, Proj::O];

    pub fn name(self) -> &'static str {
        match self {
            Proj::Q => "q",
            Proj::K => "k",
            Proj::V => "v",
            Proj::O => "o",
        }
    }
}

/// How references and video tokens may attend to each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionMode {
    /// References are isolated from video tokens.
    #[default]
    Asymmetric,
    /// Stage 1 runs joint attention over video and references, so references
    /// read the noisy latent. Ablation baseline.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AipaBlockParams {
    /// Frozen `W_Q, W_K, W_V, W_O`, each `d_model×d_model`, row convention `x·W`.
    pub frozen: [Tensor; 4],
    /// One shared adapter set for face and body references.
    pub adapters: [LoraAdapter; 4],
    pub heads: usize,
    pub rope: RopeConfig,
}

impl AipaBlockParams {
    pub fn init(d_model: usize, heads: usize, rank: usize, rng: &mut SplitRng) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{heads} heads do not divide d_model {d_model}"
            )));
        }
        let std = (1.0 / d_model as f64).sqrt();
        let frozen = [(); 4].map(|_| Tensor::randn(&[d_model, d_model], std, rng));
        let adapters = [(); 4].map(|_| LoraAdapter::init(d_model, rank, 1.0, rng));
        Ok(Self {
            frozen,
            adapters,
            heads,
            rope: RopeConfig::new(d_model / heads, 1, 1),
        })
    }

    pub fn d_model(&self) -> usize {
        self.frozen[0].shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_model();
        if self.heads == 0 || !d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{} heads do not divide d_model {d}",
                self.heads
            )));
        }
        if self.rope.head_dim != d / self.heads {
            return Err(Error::Config(format!(
                "rotary head_dim {} != d_model/heads {}",
                self.rope.head_dim,
                d / self.heads
            )));
        }
        self.rope.validate()
    }

    /// Adds the block to `store` as `aipa.<layer>.<proj>.{frozen,down,up}`.
    pub fn register(&self, store: &mut ParamStore, layer: usize) -> Result<AipaBlockIds> {
        let mut frozen = Vec::with_capacity(4);
        let mut down = Vec::with_capacity(4);
        let mut up = Vec::with_capacity(4);
        for p in Proj::ALL {
            let base = format!("aipa.{layer}.{}", p.name());
            frozen.push(store.add(
                format!("{base}.frozen"),
                self.frozen[p as usize].clone(),
                false,
            )?);
            let a = &self.adapters[p as usize];
            down.push(store.add(format!("{base}.down"), a.down.clone(), true)?);
            up.push(store.add(format!("{base}.up"), a.up.clone(), true)?);
        }
        Ok(AipaBlockIds {
            frozen: to4(frozen),
            down: to4(down),
            up: to4(up),
            scale: self.adapters.each_ref().map(|a| a.scale),
            heads: self.heads,
            rope: self.rope.clone(),
        })
    }

    /// Records the block on `tape`. Frozen weights are constants; adapters
    /// are differentiable when `adapters_trainable` is set.
    pub fn bind(&self, tape: &mut GradTape, adapters_trainable: bool) -> AipaBlockVars {
        AipaBlockVars {
            frozen: self.frozen.each_ref().map(|w| tape.constant(w.clone())),
            down: self
                .adapters
                .each_ref()
                .map(|a| tape.leaf(a.down.clone(), adapters_trainable)),
            up: self
                .adapters
                .each_ref()
                .map(|a| tape.leaf(a.up.clone(), adapters_trainable)),
            scale: self.adapters.each_ref().map(|a| a.scale),
            heads: self.heads,
        }
    }
}

fn to4<T: std::fmt::Debug>(v: Vec<T>) -> [T; 4] {
    v.try_into().expect("four projections")
}

/// Store handles for one block.
#[derive(Clone, Debug)]
pub struct AipaBlockIds {
    pub frozen: [ParamId; 4],
    pub down: [ParamId; 4],
    pub up: [ParamId; 4],
    pub scale: [f64; 4],
    pub heads: usize,
    pub rope: RopeConfig,
}

impl AipaBlockIds {
    pub fn vars(&self, bound: &BoundParams) -> AipaBlockVars {
        AipaBlockVars {
            frozen: self.frozen.map(|id| bound.var(id)),
            down: self.down.map(|id| bound.var(id)),
            up: self.up.map(|id| bound.var(id)),
            scale: self.scale,
            heads: self.heads,
        }
    }

    pub fn params(&self, store: &ParamStore) -> AipaBlockParams {
        AipaBlockParams {
            frozen: self.frozen.map(|id| store.value(id).clone()),
            adapters: [0, 1, 2, 3].map(|i| LoraAdapter {
                down: store.value(self.down[i]).clone(),
                up: store.value(self.up[i]).clone(),
                scale: self.scale[i],
            }),
            heads: self.heads,
            rope: self.rope.clone(),
        }
    }
}

/// A block's weights as tape variables.
#[derive(Clone, Debug)]
pub struct AipaBlockVars {
    pub frozen: [Var; 4],
    pub down: [Var; 4],
    pub up: [Var; 4],
    pub scale: [f64; 4],
    pub heads: usize,
}

/// Inputs to one block on a tape.
#[derive(Clone, Debug)]
pub struct BlockInput {
    pub video: Var,
    /// Reference hidden states; `None` when the example carries no references.
    pub refs: Option<Var>,
    /// Text context tokens, visible to video queries in stage 2 only.
    pub text: Option<Var>,
    pub video_rope: Arc<RotaryTable>,
    pub ref_rope: Option<Arc<RotaryTable>>,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    pub video: Var,
    pub c_ref: Option<Var>,
}

impl AipaBlockVars {
    /// `W + scale · down · up`.
    pub fn effective_weight(&self, tape: &mut GradTape, p: Proj) -> Result<Var> {
        let i = p as usize;
        let du = tape.matmul(self.down[i], self.up[i])?;
        let du = tape.scale(du, self.scale[i]);
        tape.add(self.frozen[i], du)
    }

    /// Adapter-augmented query/key/value projections of reference tokens.
    pub fn project_reference(&self, tape: &mut GradTape, c: Var) -> Result<(Var, Var, Var)> {
        let wq = self.effective_weight(tape, Proj::Q)?;
        let wk = self.effective_weight(tape, Proj::K)?;
        let wv = self.effective_weight(tape, Proj::V)?;
        Ok((
            tape.matmul(c, wq)?,
            tape.matmul(c, wk)?,
            tape.matmul(c, wv)?,
        ))
    }

    fn frozen_qkv(&self, tape: &mut GradTape, h: Var) -> Result<(Var, Var, Var)> {
        Ok((
            tape.matmul(h, self.frozen[0])?,
            tape.matmul(h, self.frozen[1])?,
            tape.matmul(h, self.frozen[2])?,
        ))
    }

    /// Pre-norm self-attention over video tokens with frozen weights.
    fn video_self_attention(
        &self,
        tape: &mut GradTape,
        x: Var,
        rope: &Arc<RotaryTable>,
    ) -> Result<Var> {
        let h = tape.rms_norm_rows(x, NORM_EPS)?;
        let (q, k, v) = self.frozen_qkv(tape, h)?;
        let q = tape.rotary(q, rope.clone())?;
        let k = tape.rotary(k, rope.clone())?;
        let a = multi_head_attention(tape, q, k, v, self.heads)?;
        let o = tape.matmul(a, self.frozen[3])?;
        tape.add(x, o)
    }

    fn reference_self_attention(
        &self,
        tape: &mut GradTape,
        r: Var,
        rope: &Arc<RotaryTable>,
        eff: &Effective,
    ) -> Result<Var> {
        let h = tape.rms_norm_rows(r, NORM_EPS)?;
        let q = tape.matmul(h, eff.q)?;
        let k = tape.matmul(h, eff.k)?;
        let v = tape.matmul(h, eff.v)?;
        let q = tape.rotary(q, rope.clone())?;
        let k = tape.rotary(k, rope.clone())?;
        let a = multi_head_attention(tape, q, k, v, self.heads)?;
        let o = tape.matmul(a, eff.o)?;
        tape.add(r, o)
    }

    fn effective(&self, tape: &mut GradTape) -> Result<Effective> {
        Ok(Effective {
            q: self.effective_weight(tape, Proj::Q)?,
            k: self.effective_weight(tape, Proj::K)?,
            v: self.effective_weight(tape, Proj::V)?,
            o: self.effective_weight(tape, Proj::O)?,
        })
    }

    /// Stage 1. Returns the video hidden state and `C_ref`.
    pub fn stage1(
        &self,
        tape: &mut GradTape,
        input: &BlockInput,
        mode: AttentionMode,
    ) -> Result<(Var, Option<Var>)> {
        let lv = tape.shape(input.video)[0];
        if lv == 0 {
            return Err(Error::Contract(
                "a block needs at least one video token".into(),
            ));
        }
        let Some(refs) = nonempty(tape, input.refs) else {
            let hidden = self.video_self_attention(tape, input.video, &input.video_rope)?;
            return Ok((hidden, None));
        };
        let ref_rope = input
            .ref_rope
            .as_ref()
            .ok_or_else(|| Error::Contract("reference tokens without positions".into()))?;
        let eff = self.effective(tape)?;
        match mode {
            AttentionMode::Asymmetric => {
                let hidden = self.video_self_attention(tape, input.video, &input.video_rope)?;
                let c_ref = self.reference_self_attention(tape, refs, ref_rope, &eff)?;
                Ok((hidden, Some(c_ref)))
            }
            AttentionMode::Full => {
                let hv = tape.rms_norm_rows(input.video, NORM_EPS)?;
                let hr = tape.rms_norm_rows(refs, NORM_EPS)?;
                let (qv, kv, vv) = self.frozen_qkv(tape, hv)?;
                let qv = tape.rotary(qv, input.video_rope.clone())?;
                let kv = tape.rotary(kv, input.video_rope.clone())?;
                let qr = tape.matmul(hr, eff.q)?;
                let kr = tape.matmul(hr, eff.k)?;
                let vr = tape.matmul(hr, eff.v)?;
                let qr = tape.rotary(qr, ref_rope.clone())?;
                let kr = tape.rotary(kr, ref_rope.clone())?;
                let q = tape.concat_rows(&[qv, qr])?;
                let k = tape.concat_rows(&[kv, kr])?;
                let v = tape.concat_rows(&[vv, vr])?;
                let a = multi_head_attention(tape, q, k, v, self.heads)?;
                let total = tape.shape(a)[0];
                let av = tape.slice_rows(a, 0, lv)?;
                let ar = tape.slice_rows(a, lv, total)?;
                let ov = tape.matmul(av, self.frozen[3])?;
                let or = tape.matmul(ar, eff.o)?;
                let hidden = tape.add(input.video, ov)?;
                let c_ref = tape.add(refs, or)?;
                Ok((hidden, Some(c_ref)))
            }
        }
    }

    /// Stage 2: video queries over `[video; text; C_ref]`.
    pub fn stage2(
        &self,
        tape: &mut GradTape,
        video_hidden: Var,
        c_ref: Option<Var>,
        text: Option<Var>,
        video_rope: &Arc<RotaryTable>,
        ref_rope: Option<&Arc<RotaryTable>>,
    ) -> Result<Var> {
        let h = tape.rms_norm_rows(video_hidden, NORM_EPS)?;
        let (q, k, v) = self.frozen_qkv(tape, h)?;
        let q = tape.rotary(q, video_rope.clone())?;
        let k = tape.rotary(k, video_rope.clone())?;
        let mut keys = vec![k];
        let mut values = vec![v];
        if let Some(t) = nonempty(tape, text) {
            let ht = tape.rms_norm_rows(t, NORM_EPS)?;
            keys.push(tape.matmul(ht, self.frozen[1])?);
            values.push(tape.matmul(ht, self.frozen[2])?);
        }
        if let Some(c) = nonempty(tape, c_ref) {
            let rope = ref_rope
                .ok_or_else(|| Error::Contract("reference tokens without positions".into()))?;
            let hc = tape.rms_norm_rows(c, NORM_EPS)?;
            let wk = self.effective_weight(tape, Proj::K)?;
            let wv = self.effective_weight(tape, Proj::V)?;
            let kc = tape.matmul(hc, wk)?;
            let kc = tape.rotary(kc, rope.clone())?;
            keys.push(kc);
            values.push(tape.matmul(hc, wv)?);
        }
        let (k, v) = if keys.len() == 1 {
            (keys[0], values[0])
        } else {
            (tape.concat_rows(&keys)?, tape.concat_rows(&values)?)
        };
        let a = multi_head_attention(tape, q, k, v, self.heads)?;
        let o = tape.matmul(a, self.frozen[3])?;
        tape.add(video_hidden, o)
    }

    pub fn forward(
        &self,
        tape: &mut GradTape,
        input: &BlockInput,
        mode: AttentionMode,
    ) -> Result<BlockOutput> {
        let (hidden, c_ref) = self.stage1(tape, input, mode)?;
        let video = self.stage2(
            tape,
            hidden,
            c_ref,
            input.text,
            &input.video_rope,
            input.ref_rope.as_ref(),
        )?;
        Ok(BlockOutput { video, c_ref })
    }
}

struct Effective {
    q: Var,
    k: Var,
    v: Var,
    o: Var,
}

fn nonempty(tape: &GradTape, v: Option<Var>) -> Option<Var> {
    v.filter(|v| tape.shape(*v)[0] > 0)
}

// Tensor-level entry points. Each records a fresh tape with constant inputs.

fn split_positions(seq: &TokenSequence) -> (&[PositionTriple], &[PositionTriple]) {
    seq.positions.split_at(seq.video_len())
}

fn tables(
    params: &AipaBlockParams,
    video: &[PositionTriple],
    refs: &[PositionTriple],
) -> Result<(Arc<RotaryTable>, Option<Arc<RotaryTable>>)> {
    let vt = Arc::new(RotaryTable::new(video, &params.rope, params.heads)?);
    let rt = if refs.is_empty() {
        None
    } else {
        Some(Arc::new(RotaryTable::new(
            refs,
            &params.rope,
            params.heads,
        )?))
    };
    Ok((vt, rt))
}

fn block_input(
    tape: &mut GradTape,
    seq: &TokenSequence,
    params: &AipaBlockParams,
) -> Result<BlockInput> {
    params.validate()?;
    let (vp, rp) = split_positions(seq);
    let (video_rope, ref_rope) = tables(params, vp, rp)?;
    let video = tape.constant(seq.video_tokens()?);
    let refs = if seq.ref_len() > 0 {
        Some(tape.constant(seq.ref_tokens()?))
    } else {
        None
    };
    Ok(BlockInput {
        video,
        refs,
        text: None,
        video_rope,
        ref_rope,
    })
}

/// `(W + ΔW)·c` for the query, key and value projections of reference tokens.
pub fn project_reference(c: &Tensor, params: &AipaBlockParams) -> Result<(Tensor, Tensor, Tensor)> {
    let (l, _) = c.dims2()?;
    if l == 0 {
        return Err(Error::Contract(
            "project_reference needs at least one token".into(),
        ));
    }
    let mut tape = GradTape::new();
    let vars = params.bind(&mut tape, false);
    let cv = tape.constant(c.clone());
    let (q, k, v) = vars.project_reference(&mut tape, cv)?;
    Ok((
        tape.value(q).clone(),
        tape.value(k).clone(),
        tape.value(v).clone(),
    ))
}

/// Stage 1 only. `C_ref` has one row per reference token (zero rows when none).
pub fn stage1_self_attention(
    seq: &TokenSequence,
    params: &AipaBlockParams,
) -> Result<(Tensor, Tensor)> {
    let mut tape = GradTape::new();
    let input = block_input(&mut tape, seq, params)?;
    let vars = params.bind(&mut tape, false);
    let (hidden, c_ref) = vars.stage1(&mut tape, &input, AttentionMode::Asymmetric)?;
    let d = params.d_model();
    let c_ref = c_ref.map_or_else(|| Tensor::zeros(&[0, d]), |c| tape.value(c).clone());
    Ok((tape.value(hidden).clone(), c_ref))
}

/// Stage 2 only. `positions` lists the video tokens followed by `C_ref` rows.
pub fn stage2_asymmetric_fusion(
    video_hidden: &Tensor,
    c_ref: &Tensor,
    positions: &[PositionTriple],
    params: &AipaBlockParams,
) -> Result<Tensor> {
    params.validate()?;
    let (lv, _) = video_hidden.dims2()?;
    let (lr, _) = c_ref.dims2()?;
    if positions.len() != lv + lr {
        return Err(Error::Contract(format!(
            "{} positions for {lv} video and {lr} reference tokens",
            positions.len()
        )));
    }
    let (vp, rp) = positions.split_at(lv);
    let (video_rope, ref_rope) = tables(params, vp, rp)?;
    let mut tape = GradTape::new();
    let vars = params.bind(&mut tape, false);
    let h = tape.constant(video_hidden.clone());
    let c = (lr > 0).then(|| tape.constant(c_ref.clone()));
    let out = vars.stage2(&mut tape, h, c, None, &video_rope, ref_rope.as_ref())?;
    Ok(tape.value(out).clone())
}

/// Full block: stage 1 then stage 2, returning the `L_v×d_model` video output.
pub fn aipa_block(seq: &TokenSequence, params: &AipaBlockParams) -> Result<Tensor> {
    aipa_block_with_mode(seq, params, AttentionMode::Asymmetric)
}

pub fn aipa_block_with_mode(
    seq: &TokenSequence,
    params: &AipaBlockParams,
    mode: AttentionMode,
) -> Result<Tensor> {
    let mut tape = GradTape::new();
    let input = block_input(&mut tape, seq, params)?;
    let vars = params.bind(&mut tape, false);
    let out = vars.forward(&mut tape, &input, mode)?;
    Ok(tape.value(out.video).clone())
}

/// The backbone block with no identity pathway: two pre-norm self-attention
/// sublayers over video tokens with the frozen weights.
pub fn baseline_block(
    video: &Tensor,
    positions: &[PositionTriple],
    params: &AipaBlockParams,
) -> Result<Tensor> {
    params.validate()?;
    let mut tape = GradTape::new();
    let vars = params.bind(&mut tape, false);
    let rope = Arc::new(RotaryTable::new(positions, &params.rope, params.heads)?);
    let x = tape.constant(video.clone());
    let h = vars.video_self_attention(&mut tape, x, &rope)?;
    let out = vars.stage2(&mut tape, h, None, None, &rope, None)?;
    Ok(tape.value(out).clone())
}
