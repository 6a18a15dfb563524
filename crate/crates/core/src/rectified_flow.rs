//! Rectified-flow objective, Euler sampler and training step.
//!
//! Data and noise are joined by the straight path `z_t = (1−t)·z0 + t·ε`,
//! whose velocity `ε − z0` does not depend on `t`. The model regresses that
//! velocity; sampling integrates it backwards from pure noise at `t = 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::params::{BoundParams, ParamId, ParamStore};
use crate::rng::SplitRng;
use crate::tape::{GradTape, Var};
use crate::tensor::Tensor;

/// Latent video `f×c×h×w`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo(Tensor);

impl LatentVideo {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.ndim() != 4 || t.shape().contains(&0) {
            return Err(Error::Contract(format!(
                "latent video must be f×c×h×w with positive dims, got {:?}",
                t.shape()
            )));
        }
        if !t.is_finite() {
            return Err(Error::Domain("latent video has non-finite entries".into()));
        }
        Ok(Self(t))
    }

    pub fn randn(dims: [usize; 4], rng: &mut SplitRng) -> Self {
        Self(Tensor::randn(&dims, 1.0, rng))
    }

    pub fn dims(&self) -> [usize; 4] {
        let s = self.0.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// One encoded reference image, `c×h×w`, with its viewpoint angle.
#[derive(Clone, Debug, PartialEq)]
pub struct RefImage {
    pub pixels: Tensor,
    pub theta: f64,
}

/// Conditioning: a caption id (looked up in a learned embedding table) plus
/// face and body reference images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConditionContext {
    pub caption: Option<usize>,
    pub face_refs: Vec<RefImage>,
    pub body_refs: Vec<RefImage>,
}

impl ConditionContext {
    pub const MAX_REFS_PER_KIND: usize = 5;

    pub fn validate_for_training(&self) -> Result<()> {
        if self.face_refs.len() > Self::MAX_REFS_PER_KIND
            || self.body_refs.len() > Self::MAX_REFS_PER_KIND
        {
            return Err(Error::Contract(format!(
                "{} face / {} body references exceed the per-kind limit of {}",
                self.face_refs.len(),
                self.body_refs.len(),
                Self::MAX_REFS_PER_KIND
            )));
        }
        Ok(())
    }

    pub fn ref_count(&self) -> usize {
        self.face_refs.len() + self.body_refs.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFn {
    /// `w(t) = 1`.
    #[default]
    Uniform,
}

impl WeightFn {
    pub fn weight(self, _t: f64) -> f64 {
        match self {
            WeightFn::Uniform => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfConfig {
    pub weight: WeightFn,
    pub sampler_steps: usize,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            weight: WeightFn::Uniform,
            sampler_steps: 16,
        }
    }
}

/// A velocity field `v_θ(z_t, t, ctx)` with named parameters.
pub trait VelocityModel: Sync {
    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records the velocity prediction for `z_t` on `tape`.
    fn velocity(
        &self,
        tape: &mut GradTape,
        bound: &BoundParams,
        z_t: Var,
        t: f64,
        ctx: &ConditionContext,
    ) -> Result<Var>;

    /// Forward pass without gradients.
    fn predict(&self, z_t: &LatentVideo, t: f64, ctx: &ConditionContext) -> Result<Tensor> {
        let mut tape = GradTape::new();
        let bound = self.params().bind_frozen(&mut tape);
        let z = tape.constant(z_t.tensor().clone());
        let v = self.velocity(&mut tape, &bound, z, t, ctx)?;
        Ok(tape.value(v).clone())
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

/// `(1−t)·z0 + t·ε`. Endpoints return the inputs bit-for-bit.
pub fn interpolate(z0: &LatentVideo, eps: &LatentVideo, t: f64) -> Result<LatentVideo> {
    check_t(t)?;
    if z0.0.shape() != eps.0.shape() {
        return Err(crate::error::dim_err(
            "interpolate",
            z0.0.shape(),
            eps.0.shape(),
        ));
    }
    if t == 0.0 {
        return Ok(z0.clone());
    }
    if t == 1.0 {
        return Ok(eps.clone());
    }
    let data =
        z0.0.data()
            .iter()
            .zip(eps.0.data())
            .map(|(a, b)| (1.0 - t) * a + t * b)
            .collect();
    Ok(LatentVideo(Tensor::new(z0.0.shape().to_vec(), data)?))
}

/// The regression target `ε − z0`.
pub fn velocity_target(z0: &LatentVideo, eps: &LatentVideo) -> Result<Tensor> {
    eps.0.sub(&z0.0)
}

/// Records `w(t)·mean((v_θ(z_t,t,ctx) − (ε − z0))²)` on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn rf_loss_on_tape<M: VelocityModel + ?Sized>(
    model: &M,
    tape: &mut GradTape,
    bound: &BoundParams,
    z0: &LatentVideo,
    eps: &LatentVideo,
    t: f64,
    ctx: &ConditionContext,
    cfg: &RfConfig,
) -> Result<Var> {
    let z_t = interpolate(z0, eps, t)?;
    let target = velocity_target(z0, eps)?;
    let zv = tape.constant(z_t.0);
    let v = model.velocity(tape, bound, zv, t, ctx)?;
    if tape.shape(v) != target.shape() {
        return Err(Error::Contract(format!(
            "velocity of shape {:?} for a target of shape {:?}",
            tape.shape(v),
            target.shape()
        )));
    }
    let tv = tape.constant(target);
    let mse = tape.mse(v, tv)?;
    Ok(tape.scale(mse, cfg.weight.weight(t)))
}

/// Scalar loss value.
pub fn rf_loss<M: VelocityModel + ?Sized>(
    model: &M,
    z0: &LatentVideo,
    eps: &LatentVideo,
    t: f64,
    ctx: &ConditionContext,
    cfg: &RfConfig,
) -> Result<Tensor> {
    let mut tape = GradTape::new();
    let bound = model.params().bind_frozen(&mut tape);
    let loss = rf_loss_on_tape(model, &mut tape, &bound, z0, eps, t, ctx, cfg)?;
    Ok(tape.value(loss).clone())
}

/// Integrates `dz/dt = v_θ` from `t = 1` (noise) to `t = 0` in uniform steps.
pub fn euler_sample<M: VelocityModel + ?Sized>(
    model: &M,
    eps: &LatentVideo,
    ctx: &ConditionContext,
    steps: usize,
) -> Result<LatentVideo> {
    if steps == 0 {
        return Err(Error::Domain("euler_sample needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut z = eps.clone();
    for i in 0..steps {
        let t = 1.0 - i as f64 * dt;
        let v = model.predict(&z, t, ctx)?;
        let next = z.0.sub(&v.scale(dt))?;
        z = LatentVideo(next);
    }
    Ok(z)
}

/// One training example before noise and time are drawn.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub z0: LatentVideo,
    pub ctx: ConditionContext,
}

/// Loss and trainable-parameter gradients for a single example.
pub fn example_gradients<M: VelocityModel + ?Sized>(
    model: &M,
    z0: &LatentVideo,
    eps: &LatentVideo,
    t: f64,
    ctx: &ConditionContext,
    cfg: &RfConfig,
) -> Result<(f64, Vec<(ParamId, Tensor)>)> {
    let mut tape = GradTape::new();
    let bound = model.params().bind(&mut tape);
    let loss = rf_loss_on_tape(model, &mut tape, &bound, z0, eps, t, ctx, cfg)?;
    let mut grads = tape.backward(loss)?;
    let value = tape.value(loss).item()?;
    let out = model
        .params()
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, p)| {
            let g = grads
                .take(bound.var(id))
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            (id, g)
        })
        .collect();
    Ok((value, out))
}

/// One optimizer step on the batch mean of the rectified-flow loss.
///
/// Per example, `t ~ U(0,1)` and `ε ~ N(0, I)` come from a child stream split
/// off `rng` in batch order, so the result does not depend on thread count.
pub fn train_step<M: VelocityModel + ?Sized>(
    model: &mut M,
    batch: &[TrainExample],
    opt: &mut Adam,
    rng: &mut SplitRng,
    cfg: &RfConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("train_step needs a nonempty batch".into()));
    }
    let step = opt.steps_taken() + 1;
    let draws: Vec<(f64, LatentVideo)> = batch
        .iter()
        .map(|ex| {
            ex.ctx.validate_for_training()?;
            let mut child = rng.split();
            let t = child.uniform();
            let eps = LatentVideo::randn(ex.z0.dims(), &mut child);
            Ok((t, eps))
        })
        .collect::<Result<_>>()?;

    let model_ref: &M = model;
    let per_example: Vec<(f64, Vec<(ParamId, Tensor)>)> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(ex, (t, eps))| example_gradients(model_ref, &ex.z0, eps, *t, &ex.ctx, cfg))
        .collect::<Result<_>>()?;

    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut total: Vec<(ParamId, Tensor)> = Vec::new();
    for (i, (l, grads)) in per_example.into_iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::Training {
                step,
                detail: format!(
                    "non-finite loss {l} on batch element {i} (t = {})",
                    draws[i].0
                ),
            });
        }
        loss += l;
        if total.is_empty() {
            total = grads;
        } else {
            for ((_, acc), (_, g)) in total.iter_mut().zip(grads) {
                acc.add_assign(&g);
            }
        }
    }
    for (id, g) in total.iter_mut() {
        *g = g.scale(1.0 / n);
        if !g.is_finite() {
            return Err(Error::Training {
                step,
                detail: format!("non-finite gradient for {}", model.params().get(*id).name),
            });
        }
    }
    opt.step(model.params_mut(), &total)?;
    Ok(loss / n)
}
