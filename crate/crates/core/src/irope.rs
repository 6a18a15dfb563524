//! Identity-aware 3D rotary positions.
//!
//! Video tokens live on the usual `(t, h, w)` lattice. Reference tokens are
//! moved onto their own temporal planes (`T + delta_face`, `T + delta_body`)
//! and their spatial indices start at `(h_max, w_max)`, so no reference token
//! can share a coordinate with a video token. Several references of the same
//! kind are tiled side by side along `w` inside their plane.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PositionTriple {
    pub t: u32,
    pub h: u32,
    pub w: u32,
}

impl PositionTriple {
    pub fn new(t: u32, h: u32, w: u32) -> Self {
        Self { t, h, w }
    }

    pub fn as_offsets(self) -> [f64; 3] {
        [self.t as f64, self.h as f64, self.w as f64]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefKind {
    Face,
    Body,
}

/// Patch grid of one reference image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefGrid {
    pub kind: RefKind,
    pub h: u32,
    pub w: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub freq_base: f64,
    pub delta_face: u32,
    pub delta_body: u32,
    pub h_max: u32,
    pub w_max: u32,
    /// Feature widths given to the `(t, h, w)` axes, in that order.
    pub axis_split: [usize; 3],
}

impl RopeConfig {
    pub const DELTA_FACE: u32 = 4;
    pub const DELTA_BODY: u32 = 128;

    pub fn new(head_dim: usize, h_max: u32, w_max: u32) -> Self {
        Self {
            head_dim,
            freq_base: 10000.0,
            delta_face: Self::DELTA_FACE,
            delta_body: Self::DELTA_BODY,
            h_max,
            w_max,
            axis_split: Self::default_split(head_dim),
        }
    }

    /// Equal even thirds for `h` and `w`, the remainder to `t`.
    pub fn default_split(head_dim: usize) -> [usize; 3] {
        let third = (head_dim / 3) & !1;
        [head_dim - 2 * third, third, third]
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rotary head_dim must be even and positive, got {}",
                self.head_dim
            )));
        }
        if let Some(g) = self.axis_split.iter().find(|g| *g % 2 != 0) {
            return Err(Error::Config(format!("rotary axis group of odd width {g}")));
        }
        if self.axis_split.iter().sum::<usize>() != self.head_dim {
            return Err(Error::Config(format!(
                "axis split {:?} does not sum to head_dim {}",
                self.axis_split, self.head_dim
            )));
        }
        if !(self.freq_base > 0.0) {
            return Err(Error::Config("freq_base must be positive".into()));
        }
        if self.delta_face >= self.delta_body {
            return Err(Error::Config(format!(
                "delta_face ({}) must be below delta_body ({})",
                self.delta_face, self.delta_body
            )));
        }
        if self.h_max == 0 || self.w_max == 0 {
            return Err(Error::Config("h_max and w_max must be positive".into()));
        }
        Ok(())
    }
}

/// Positions for `n_frames × grid` video tokens followed by the reference
/// tokens in `refs` order.
pub fn assign_positions(
    n_frames: u32,
    grid: (u32, u32),
    refs: &[RefGrid],
    cfg: &RopeConfig,
) -> Result<Vec<PositionTriple>> {
    cfg.validate()?;
    let (hh, ww) = grid;
    if n_frames == 0 {
        return Err(Error::Config("a video needs at least one frame".into()));
    }
    if hh > cfg.h_max || ww > cfg.w_max {
        return Err(Error::Config(format!(
            "video grid {hh}x{ww} exceeds ({}, {})",
            cfg.h_max, cfg.w_max
        )));
    }
    let mut out = video_lattice(n_frames, grid);
    let mut face_w = 0u32;
    let mut body_w = 0u32;
    for r in refs {
        let (t, w_off) = match r.kind {
            RefKind::Face => (n_frames + cfg.delta_face, &mut face_w),
            RefKind::Body => (n_frames + cfg.delta_body, &mut body_w),
        };
        for h in 0..r.h {
            for w in 0..r.w {
                out.push(PositionTriple::new(
                    t,
                    cfg.h_max + h,
                    cfg.w_max + *w_off + w,
                ));
            }
        }
        *w_off += r.w;
    }
    Ok(out)
}

/// Reference tokens placed on the first video frame's lattice, as a plain
/// 3D RoPE would do without identity-aware offsets. Used for ablations.
pub fn assign_positions_shared(
    n_frames: u32,
    grid: (u32, u32),
    refs: &[RefGrid],
) -> Result<Vec<PositionTriple>> {
    if n_frames == 0 {
        return Err(Error::Config("a video needs at least one frame".into()));
    }
    let mut out = video_lattice(n_frames, grid);
    for r in refs {
        for h in 0..r.h {
            for w in 0..r.w {
                out.push(PositionTriple::new(0, h, w));
            }
        }
    }
    Ok(out)
}

fn video_lattice(n_frames: u32, (hh, ww): (u32, u32)) -> Vec<PositionTriple> {
    let mut out = Vec::with_capacity((n_frames * hh * ww) as usize);
    for t in 0..n_frames {
        for h in 0..hh {
            for w in 0..ww {
                out.push(PositionTriple::new(t, h, w));
            }
        }
    }
    out
}

/// Precomputed rotation angles for a token sequence, repeated over heads.
#[derive(Debug, Clone)]
pub struct RotaryTable {
    width: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RotaryTable {
    pub fn new(positions: &[PositionTriple], cfg: &RopeConfig, heads: usize) -> Result<Self> {
        let offsets: Vec<[f64; 3]> = positions.iter().map(|p| p.as_offsets()).collect();
        Self::from_offsets(&offsets, cfg, heads)
    }

    /// Angles from real-valued (possibly negative) per-axis coordinates.
    pub fn from_offsets(offsets: &[[f64; 3]], cfg: &RopeConfig, heads: usize) -> Result<Self> {
        cfg.validate()?;
        let half = cfg.head_dim / 2;
        let width = cfg.head_dim * heads;
        let mut cos = Vec::with_capacity(offsets.len() * width / 2);
        let mut sin = Vec::with_capacity(offsets.len() * width / 2);
        let mut head_cos = vec![0.0; half];
        let mut head_sin = vec![0.0; half];
        for pos in offsets {
            let mut pair = 0;
            for (axis, &g) in cfg.axis_split.iter().enumerate() {
                for i in 0..g / 2 {
                    let inv_freq = cfg.freq_base.powf(-((2 * i) as f64) / g as f64);
                    let theta = pos[axis] * inv_freq;
                    head_cos[pair] = theta.cos();
                    head_sin[pair] = theta.sin();
                    pair += 1;
                }
            }
            for _ in 0..heads {
                cos.extend_from_slice(&head_cos);
                sin.extend_from_slice(&head_sin);
            }
        }
        Ok(Self { width, cos, sin })
    }

    pub fn len(&self) -> usize {
        if self.width == 0 {
            0
        } else {
            self.cos.len() * 2 / self.width
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let (l, d) = x.dims2()?;
        if d != self.width || l != self.len() {
            return Err(dim_err("rotary", x.shape(), &[self.len(), self.width]));
        }
        Ok(())
    }

    /// Rotates each adjacent feature pair by its angle.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.rotate(x, 1.0)
    }

    /// Inverse rotation; the adjoint of [`RotaryTable::apply`].
    pub fn apply_transpose(&self, x: &Tensor) -> Result<Tensor> {
        self.rotate(x, -1.0)
    }

    fn rotate(&self, x: &Tensor, sign: f64) -> Result<Tensor> {
        self.check(x)?;
        let mut out = x.data().to_vec();
        for (p, pair) in out.chunks_exact_mut(2).enumerate() {
            let (c, s) = (self.cos[p], sign * self.sin[p]);
            if s == 0.0 && c == 1.0 {
                continue;
            }
            let (a, b) = (pair[0], pair[1]);
            pair[0] = a * c - b * s;
            pair[1] = a * s + b * c;
        }
        Tensor::new(x.shape().to_vec(), out)
    }
}

/// Rotates `x[L×head_dim]` by the 3D positions of its tokens.
pub fn apply_rope(x: &Tensor, positions: &[PositionTriple], cfg: &RopeConfig) -> Result<Tensor> {
    let (l, d) = x.dims2()?;
    if positions.len() != l {
        return Err(Error::Contract(format!(
            "{} positions for {l} tokens",
            positions.len()
        )));
    }
    if d != cfg.head_dim {
        return Err(dim_err("apply_rope", x.shape(), &[l, cfg.head_dim]));
    }
    RotaryTable::new(positions, cfg, 1)?.apply(x)
}

/// Like [`apply_rope`] but with signed, real-valued per-axis offsets.
pub fn apply_rope_offsets(x: &Tensor, offsets: &[[f64; 3]], cfg: &RopeConfig) -> Result<Tensor> {
    let (l, d) = x.dims2()?;
    if offsets.len() != l {
        return Err(Error::Contract(format!(
            "{} offsets for {l} tokens",
            offsets.len()
        )));
    }
    if d != cfg.head_dim {
        return Err(dim_err("apply_rope", x.shape(), &[l, cfg.head_dim]));
    }
    RotaryTable::from_offsets(offsets, cfg, 1)?.apply(x)
}
