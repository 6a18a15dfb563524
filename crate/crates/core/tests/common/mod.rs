#![allow(dead_code)]

use refvid_core::{GradTape, Result, SplitRng, Tensor, Var};

pub const FD_STEP: f64 = 1e-6;

/// `max|a − n| / max(max|a|, max|n|)` over one tensor's `(analytic, numeric)`
/// pairs. Entry-wise ratios are dominated by the `eps·|f|/h` roundoff floor of
/// central differences on entries near zero, so the error is taken relative to
/// the tensor's gradient scale.
pub fn tensor_rel_err(pairs: &[(f64, f64)]) -> f64 {
    let diff = pairs
        .iter()
        .map(|&(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = pairs
        .iter()
        .map(|&(a, n)| a.abs().max(n.abs()))
        .fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Builds `sum(f(inputs) ⊙ probe)` for a fixed random `probe` so the
/// upstream gradient is not uniform.
fn probed<F>(
    tape: &mut GradTape,
    vars: &[Var],
    f: &F,
    probe: &mut Option<Tensor>,
    seed: u64,
) -> Result<Var>
where
    F: Fn(&mut GradTape, &[Var]) -> Result<Var>,
{
    let out = f(tape, vars)?;
    let shape = tape.shape(out).to_vec();
    let p = probe
        .get_or_insert_with(|| Tensor::randn(&shape, 1.0, &mut SplitRng::new(seed ^ 0x9e37)))
        .clone();
    let pv = tape.constant(p);
    let prod = tape.mul(out, pv)?;
    Ok(tape.sum(prod))
}

/// Analytic and central-difference gradients, grouped per input.
pub fn gradient_pairs<F>(inputs: &[Tensor], seed: u64, f: F) -> Result<Vec<Vec<(f64, f64)>>>
where
    F: Fn(&mut GradTape, &[Var]) -> Result<Var>,
{
    let mut probe = None;
    let mut tape = GradTape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = probed(&mut tape, &vars, &f, &mut probe, seed)?;
    let grads = tape.backward(loss)?;

    let eval = |xs: &[Tensor], probe: &mut Option<Tensor>| -> Result<f64> {
        let mut tape = GradTape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let l = probed(&mut tape, &vars, &f, probe, seed)?;
        tape.value(l).item()
    };

    let mut out = Vec::new();
    let mut xs = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let g = grads.get(*var).expect("param gradient").clone();
        let mut group = Vec::with_capacity(g.numel());
        for i in 0..xs[k].numel() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + FD_STEP;
            let up = eval(&xs, &mut probe)?;
            xs[k].data_mut()[i] = orig - FD_STEP;
            let down = eval(&xs, &mut probe)?;
            xs[k].data_mut()[i] = orig;
            group.push((g.data()[i], (up - down) / (2.0 * FD_STEP)));
        }
        out.push(group);
    }
    Ok(out)
}

/// Entry-wise `|a − n| / max(|a|, |n|, 1e-8)`, maximised over all entries.
pub fn max_entry_rel_err(groups: &[Vec<(f64, f64)>]) -> f64 {
    groups
        .iter()
        .flatten()
        .map(|&(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

pub fn max_rel_err(groups: &[Vec<(f64, f64)>]) -> f64 {
    groups.iter().map(|g| tensor_rel_err(g)).fold(0.0, f64::max)
}

pub fn randn(shape: &[usize], rng: &mut SplitRng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}
