//! Straight-line reference implementations used as test oracles.
//!
//! Everything here works on plain row-major `Vec<Vec<f64>>` matrices and
//! shares no code with the library under test.

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(rows: usize, cols: usize, data: &[f64]) -> Mat {
    assert_eq!(rows * cols, data.len());
    (0..rows)
        .map(|r| data[r * cols..(r + 1) * cols].to_vec())
        .collect()
}

pub fn flatten(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = if inner == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Row-wise `x / sqrt(mean(x²) + eps)`.
pub fn rms_rows(x: &Mat, eps: f64) -> Mat {
    x.iter()
        .map(|row| {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            let s = 1.0 / (ms + eps).sqrt();
            row.iter().map(|v| v * s).collect()
        })
        .collect()
}

/// Rotary embedding over `[t | h | w]` feature groups of every head: pair
/// `(2i, 2i+1)` of a group of width `g` turns by `pos · base^(−2i/g)`.
pub fn rotate(x: &Mat, positions: &[[f64; 3]], heads: usize, base: f64, split: [usize; 3]) -> Mat {
    assert_eq!(x.len(), positions.len());
    let head_dim: usize = split.iter().sum();
    x.iter()
        .zip(positions)
        .map(|(row, pos)| {
            assert_eq!(row.len(), head_dim * heads);
            let mut out = row.clone();
            for h in 0..heads {
                let mut col = h * head_dim;
                for (axis, &g) in split.iter().enumerate() {
                    for i in 0..g / 2 {
                        let angle = pos[axis] / base.powf((2 * i) as f64 / g as f64);
                        let (a, b) = (row[col], row[col + 1]);
                        out[col] = a * angle.cos() - b * angle.sin();
                        out[col + 1] = a * angle.sin() + b * angle.cos();
                        col += 2;
                    }
                }
            }
            out
        })
        .collect()
}

/// Multi-head softmax attention; query `i` sees key `j` iff `allowed(i, j)`.
pub fn masked_attention(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    heads: usize,
    allowed: impl Fn(usize, usize) -> bool,
) -> Mat {
    let hd = q[0].len() / heads;
    let dv = v[0].len() / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![vec![0.0; dv * heads]; q.len()];
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        let vcols = h * dv..(h + 1) * dv;
        for (i, qi) in q.iter().enumerate() {
            let keys: Vec<usize> = (0..k.len()).filter(|&j| allowed(i, j)).collect();
            let scores: Vec<f64> = keys
                .iter()
                .map(|&j| cols.clone().map(|c| qi[c] * k[j][c]).sum::<f64>() * scale)
                .collect();
            let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (e, &j) in exps.iter().zip(&keys) {
                for c in vcols.clone() {
                    out[i][c] += e / z * v[j][c];
                }
            }
        }
    }
    out
}

/// Weights and rotary settings of one attention block.
pub struct BlockWeights {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub o: Mat,
    pub heads: usize,
    pub base: f64,
    pub split: [usize; 3],
    pub eps: f64,
}

/// One pre-norm attention sublayer over the concatenated token list under a
/// mask, returning `x + attn(x)·W_o`.
pub fn masked_sublayer(
    x: &Mat,
    positions: &[[f64; 3]],
    w: &BlockWeights,
    allowed: impl Fn(usize, usize) -> bool,
) -> Mat {
    let h = rms_rows(x, w.eps);
    let q = rotate(&matmul(&h, &w.q), positions, w.heads, w.base, w.split);
    let k = rotate(&matmul(&h, &w.k), positions, w.heads, w.base, w.split);
    let v = matmul(&h, &w.v);
    let a = masked_attention(&q, &k, &v, w.heads, allowed);
    add(x, &matmul(&a, &w.o))
}

/// The identity block written as two masked passes over `[video; refs]`
/// with one shared weight set. Pass one isolates video from references;
/// pass two lets video queries read every token. Returns the video rows of
/// pass two and the reference rows of pass one.
pub fn two_pass_identity_block(
    video: &Mat,
    refs: &Mat,
    positions: &[[f64; 3]],
    w: &BlockWeights,
) -> (Mat, Mat) {
    let lv = video.len();
    let x: Mat = video.iter().chain(refs).cloned().collect();
    let first = masked_sublayer(&x, positions, w, |i, j| (i < lv) == (j < lv));
    let second = masked_sublayer(&first, positions, w, |i, j| i < lv || j >= lv);
    (second[..lv].to_vec(), first[lv..].to_vec())
}

/// Central difference `(f(x+h) − f(x−h)) / 2h` for every coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + h;
            let up = f(&xs);
            xs[i] = orig - h;
            let down = f(&xs);
            xs[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `min(|a−b|, 2π−|a−b|)` after wrapping both angles into `[0, 2π)`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let d = (a.rem_euclid(tau) - b.rem_euclid(tau)).abs();
    d.min(tau - d)
}

/// Total variation distance between two distributions keyed identically;
/// keys missing on one side count as zero.
pub fn total_variation<K: Ord + Clone>(
    p: &std::collections::BTreeMap<K, f64>,
    q: &std::collections::BTreeMap<K, f64>,
) -> f64 {
    let keys: std::collections::BTreeSet<K> = p.keys().chain(q.keys()).cloned().collect();
    0.5 * keys
        .iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
