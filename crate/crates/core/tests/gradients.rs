mod common;

use std::sync::Arc;

use common::{gradient_pairs, max_entry_rel_err, max_rel_err, randn};
use refvid_core::irope::{PositionTriple, RopeConfig, RotaryTable};
use refvid_core::model::{DitConfig, ToyDit};
use refvid_core::rectified_flow::{
    example_gradients, rf_loss, ConditionContext, LatentVideo, RefImage, RfConfig, VelocityModel,
};
use refvid_core::tape::multi_head_attention;
use refvid_core::{GradTape, SplitRng, Tensor, Var};

const SEEDS: u64 = 20;
const OP_TOL: f64 = 1e-5;

fn check<F>(name: &str, shapes: &[&[usize]], f: F)
where
    F: Fn(&mut GradTape, &[Var]) -> refvid_core::Result<Var>,
{
    check_with(name, shapes, OP_TOL, f)
}

fn check_with<F>(name: &str, shapes: &[&[usize]], tol: f64, f: F)
where
    F: Fn(&mut GradTape, &[Var]) -> refvid_core::Result<Var>,
{
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = SplitRng::new(seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| randn(s, &mut rng)).collect();
        let pairs = gradient_pairs(&inputs, seed, &f).unwrap();
        worst = worst.max(max_entry_rel_err(&pairs));
    }
    assert!(worst < tol, "{name}: max relative error {worst:e}");
}

#[test]
fn matmul_and_transpose() {
    check("matmul", &[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1]));
    check("transpose", &[&[3, 4]], |t, v| t.transpose(v[0]));
}

#[test]
fn elementwise() {
    check("add", &[&[2, 3], &[2, 3]], |t, v| t.add(v[0], v[1]));
    check("sub", &[&[2, 3], &[2, 3]], |t, v| t.sub(v[0], v[1]));
    check("mul", &[&[2, 3], &[2, 3]], |t, v| t.mul(v[0], v[1]));
    check("scale", &[&[2, 3]], |t, v| Ok(t.scale(v[0], -1.7)));
    check("silu", &[&[2, 5]], |t, v| Ok(t.silu(v[0])));
}

#[test]
fn reductions() {
    check("sum", &[&[3, 3]], |t, v| Ok(t.sum(v[0])));
    check("mean", &[&[3, 3]], |t, v| t.mean(v[0]));
    check("mse", &[&[2, 4], &[2, 4]], |t, v| t.mse(v[0], v[1]));
}

#[test]
fn softmax_row_of_five() {
    check_with("softmax", &[&[1, 5]], 1e-6, |t, v| t.softmax_lastdim(v[0]));
    check("softmax rows", &[&[3, 4]], |t, v| t.softmax_lastdim(v[0]));
}

#[test]
fn rms_norm() {
    check("rms_norm", &[&[3, 6]], |t, v| t.rms_norm_rows(v[0], 1e-6));
}

#[test]
fn structural() {
    check("concat_rows", &[&[2, 3], &[1, 3]], |t, v| {
        t.concat_rows(&[v[0], v[1]])
    });
    check("concat_cols", &[&[2, 3], &[2, 1]], |t, v| {
        t.concat_cols(&[v[0], v[1]])
    });
    check("slice_rows", &[&[4, 3]], |t, v| t.slice_rows(v[0], 1, 3));
    check("slice_cols", &[&[3, 4]], |t, v| t.slice_cols(v[0], 1, 3));
    check("repeat_rows", &[&[1, 3]], |t, v| t.repeat_rows(v[0], 4));
    check("reshape", &[&[2, 6]], |t, v| t.reshape(v[0], &[3, 4]));
    check("affine", &[&[3, 4], &[4, 2], &[1, 2]], |t, v| {
        t.affine(v[0], v[1], v[2])
    });
    check("gather", &[&[2, 3]], |t, v| {
        t.gather(v[0], Arc::from(vec![5, 0, 0, 3, 2, 5, 1, 4]), &[2, 4])
    });
}

#[test]
fn rotary() {
    let cfg = RopeConfig::new(8, 4, 4);
    let positions: Vec<PositionTriple> = (0..3)
        .map(|i| PositionTriple::new(i * 5, i, 3 - i))
        .collect();
    let table = Arc::new(RotaryTable::new(&positions, &cfg, 2).unwrap());
    check("rotary", &[&[3, 16]], move |t, v| {
        t.rotary(v[0], table.clone())
    });
}

#[test]
fn attention() {
    check(
        "multi_head_attention",
        &[&[3, 8], &[5, 8], &[5, 8]],
        |t, v| multi_head_attention(t, v[0], v[1], v[2], 2),
    );
}

fn gradient_model(seed: u64) -> (ToyDit, LatentVideo, LatentVideo, ConditionContext) {
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
    // Zero-initialised tensors would hide most gradient paths.
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
    let img = |rng: &mut SplitRng| RefImage {
        pixels: Tensor::randn(&[2, 4, 4], 1.0, rng),
        theta: 0.0,
    };
    let ctx = ConditionContext {
        caption: Some(1),
        face_refs: vec![img(&mut rng)],
        body_refs: vec![img(&mut rng)],
    };
    (model, z0, eps, ctx)
}

/// Adapters and every embedding/head parameter against central differences
/// of the full rectified-flow loss: 8 video, 8 reference and 1 text token.
#[test]
fn rf_loss_gradients_match_finite_differences() {
    let rf = RfConfig::default();
    let h = common::FD_STEP;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (mut model, z0, eps, ctx) = gradient_model(seed);
        let t = 0.3 + 0.04 * seed as f64;
        let (_, grads) = example_gradients(&model, &z0, &eps, t, &ctx, &rf).unwrap();
        assert!(!grads.is_empty());
        for (id, g) in grads {
            let mut pairs = Vec::with_capacity(g.numel());
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
                pairs.push((g.data()[i], fd));
            }
            let e = common::tensor_rel_err(&pairs);
            worst = worst.max(e);
        }
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

/// Gradients of a probed block output with respect to video tokens,
/// reference tokens and all adapter factors: d=16, 8 video and 8 reference
/// tokens, text context present.
#[test]
fn aipa_block_gradients() {
    use refvid_core::aipa::{AipaBlockVars, AttentionMode, BlockInput};
    use refvid_core::irope::{assign_positions, RefGrid, RefKind};

    let d = 16;
    let heads = 2;
    let rank = 4;
    let rope = RopeConfig::new(d / heads, 2, 2);
    let refs = [
        RefGrid {
            kind: RefKind::Face,
            h: 2,
            w: 2,
        },
        RefGrid {
            kind: RefKind::Body,
            h: 2,
            w: 2,
        },
    ];
    let positions = assign_positions(2, (2, 2), &refs, &rope).unwrap();
    let video_rope = Arc::new(RotaryTable::new(&positions[..8], &rope, heads).unwrap());
    let ref_rope = Arc::new(RotaryTable::new(&positions[8..], &rope, heads).unwrap());
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = SplitRng::new(seed + 500);
        let frozen: Vec<Tensor> = (0..4)
            .map(|_| Tensor::randn(&[d, d], 0.25, &mut rng))
            .collect();
        let mut inputs = vec![
            randn(&[8, d], &mut rng),
            randn(&[8, d], &mut rng),
            randn(&[1, d], &mut rng),
        ];
        for _ in 0..4 {
            inputs.push(Tensor::randn(&[d, rank], 0.5, &mut rng));
        }
        for _ in 0..4 {
            inputs.push(Tensor::randn(&[rank, d], 0.5, &mut rng));
        }
        let (vr, rr) = (video_rope.clone(), ref_rope.clone());
        let frozen_ref = &frozen;
        let pairs = gradient_pairs(&inputs, seed, move |t, v| {
            let fz: Vec<Var> = frozen_ref.iter().map(|w| t.constant(w.clone())).collect();
            let vars = AipaBlockVars {
                frozen: [fz[0], fz[1], fz[2], fz[3]],
                down: [v[3], v[4], v[5], v[6]],
                up: [v[7], v[8], v[9], v[10]],
                scale: [1.0; 4],
                heads,
            };
            let input = BlockInput {
                video: v[0],
                refs: Some(v[1]),
                text: Some(v[2]),
                video_rope: vr.clone(),
                ref_rope: Some(rr.clone()),
            };
            Ok(vars.forward(t, &input, AttentionMode::Asymmetric)?.video)
        })
        .unwrap();
        worst = worst.max(max_rel_err(&pairs));
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
}
