//! Independent reference implementations and helpers shared by the
//! integration tests. The oracles are plain loops over nested vectors.
#![allow(dead_code, clippy::needless_range_loop)]

use mman_core::config::{ModelConfig, RunConfig};
use mman_core::tape::{Tape, Var};
use mman_core::text::{encode_queries, generate_synthetic, LabeledQuery, SyntheticConfig};
use mman_core::{CategorySet, Tensor, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::uniform(shape, scale, rng)
}

pub fn rand_mat(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m)
}

pub fn to_mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mat_diff(a: &Mat, b: &Mat) -> f64 {
    let fa: Vec<f64> = a.iter().flatten().copied().collect();
    let fb: Vec<f64> = b.iter().flatten().copied().collect();
    max_diff(&fa, &fb)
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (m, k, n) = (a.len(), b.len(), b[0].len());
    assert_eq!(a[0].len(), k);
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

/// Softmax of the first `valid` entries; the rest get weight 0.
pub fn softmax_prefix(x: &[f64], valid: usize) -> Vec<f64> {
    let m = x[..valid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x[..valid].iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let mut out: Vec<f64> = e.iter().map(|v| v / s).collect();
    out.resize(x.len(), 0.0);
    out
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Textbook σ-then-log cross-entropy summed over labels.
pub fn naive_bce(logits: &[f64], y: &[f64]) -> f64 {
    logits
        .iter()
        .zip(y)
        .map(|(&z, &t)| {
            let p = sigmoid(z);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum()
}

/// Rank-3 tensor as nested vectors, `[c][h][w]`.
pub type Vol = Vec<Mat>;

pub fn to_vol(t: &Tensor) -> Vol {
    let s = t.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    (0..c)
        .map(|ci| {
            (0..h)
                .map(|hi| (0..w).map(|wi| t.data()[(ci * h + hi) * w + wi]).collect())
                .collect()
        })
        .collect()
}

pub fn flatten_vol(v: &Vol) -> Vec<f64> {
    v.iter().flatten().flatten().copied().collect()
}

/// Valid cross-correlation, kernels `[out][in][kh][kw]` flattened in `k`.
pub fn conv2d_loop(input: &Vol, k: &Tensor, bias: &[f64], stride: [usize; 2]) -> Vol {
    let ks = k.shape();
    let (co, ci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    assert_eq!(input.len(), ci);
    let (h, w) = (input[0].len(), input[0][0].len());
    let oh = (h - kh) / stride[0] + 1;
    let ow = (w - kw) / stride[1] + 1;
    let kat = |o: usize, c: usize, a: usize, b: usize| k.data()[((o * ci + c) * kh + a) * kw + b];
    let mut out = vec![vec![vec![0.0; ow]; oh]; co];
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let mut s = 0.0;
                for c in 0..ci {
                    for a in 0..kh {
                        for b in 0..kw {
                            s += kat(o, c, a, b) * input[c][i * stride[0] + a][j * stride[1] + b];
                        }
                    }
                }
                out[o][i][j] = s + bias[o];
            }
        }
    }
    out
}

/// Input, kernel and bias gradients of `Σ g ⊙ conv(input)` by the same loops.
pub fn conv2d_loop_grads(input: &Vol, k: &Tensor, g: &Vol, stride: [usize; 2]) -> (Vol, Vec<f64>, Vec<f64>) {
    let ks = k.shape();
    let (co, ci, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    let (h, w) = (input[0].len(), input[0][0].len());
    let (oh, ow) = (g[0].len(), g[0][0].len());
    let mut gi = vec![vec![vec![0.0; w]; h]; ci];
    let mut gk = vec![0.0; k.len()];
    let mut gb = vec![0.0; co];
    for o in 0..co {
        for i in 0..oh {
            for j in 0..ow {
                let go = g[o][i][j];
                gb[o] += go;
                for c in 0..ci {
                    for a in 0..kh {
                        for b in 0..kw {
                            let (y, x) = (i * stride[0] + a, j * stride[1] + b);
                            let idx = ((o * ci + c) * kh + a) * kw + b;
                            gk[idx] += go * input[c][y][x];
                            gi[c][y][x] += go * k.data()[idx];
                        }
                    }
                }
            }
        }
    }
    (gi, gk, gb)
}

pub fn maxpool_loop(input: &Vol, window: [usize; 2], stride: [usize; 2]) -> Vol {
    let (h, w) = (input[0].len(), input[0][0].len());
    let oh = (h - window[0]) / stride[0] + 1;
    let ow = (w - window[1]) / stride[1] + 1;
    input
        .iter()
        .map(|ch| {
            (0..oh)
                .map(|i| {
                    (0..ow)
                        .map(|j| {
                            let mut m = f64::NEG_INFINITY;
                            for a in 0..window[0] {
                                for b in 0..window[1] {
                                    m = m.max(ch[i * stride[0] + a][j * stride[1] + b]);
                                }
                            }
                            m
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

pub fn relu_vol(v: &Vol) -> Vol {
    v.iter()
        .map(|m| m.iter().map(|r| r.iter().map(|x| x.max(0.0)).collect()).collect())
        .collect()
}

/// `q = α·Q`, `α = softmax(v·tanh(W_q·Qᵀ))` over the first `valid` rows.
pub fn self_match_oracle(q: &Mat, w_q: &Mat, v: &[f64], valid: usize) -> (Vec<f64>, Vec<f64>) {
    let d = q[0].len();
    let u: Vec<f64> = q
        .iter()
        .map(|row| {
            (0..d)
                .map(|i| v[i] * (0..d).map(|k| w_q[i][k] * row[k]).sum::<f64>().tanh())
                .sum()
        })
        .collect();
    let alpha = softmax_prefix(&u, valid);
    let pooled = (0..d)
        .map(|k| q.iter().zip(&alpha).map(|(r, a)| a * r[k]).sum())
        .collect();
    (pooled, alpha)
}

/// `M[i][j] = Σ_a Σ_b Q[i][a]·W[a][b]·C[j][b]`.
pub fn interaction_oracle(q: &Mat, w: &Mat, c: &Mat) -> Mat {
    let d = w.len();
    q.iter()
        .map(|qi| {
            c.iter()
                .map(|cj| {
                    let mut s = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            s += qi[a] * w[a][b] * cj[b];
                        }
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Conv → ReLU → pool per block, flatten, project; one category map.
pub fn char_match_row_oracle(
    map: &Mat,
    blocks: &[(Tensor, Vec<f64>)],
    projection: &Mat,
    cfg: &ModelConfig,
) -> Vec<f64> {
    let mut x: Vol = vec![map.clone()];
    for (k, b) in blocks {
        x = conv2d_loop(&x, k, b, cfg.conv_stride);
        x = relu_vol(&x);
        x = maxpool_loop(&x, cfg.pool_window, cfg.pool_stride);
    }
    let flat = flatten_vol(&x);
    matmul(&vec![flat], projection).remove(0)
}

/// Mean of valid rows per category, `softmax_rows(C·W·Qᵀ)` over valid query
/// positions, times `Q`.
pub fn semantic_oracle(q: &Mat, cats: &[(Mat, usize)], w_qs: &Mat, valid: usize) -> Mat {
    let d = q[0].len();
    cats.iter()
        .map(|(c, len)| {
            let mean: Vec<f64> = (0..d)
                .map(|k| c[..*len].iter().map(|r| r[k]).sum::<f64>() / *len as f64)
                .collect();
            let cw: Vec<f64> = (0..d).map(|b| (0..d).map(|a| mean[a] * w_qs[a][b]).sum()).collect();
            let scores: Vec<f64> = q
                .iter()
                .map(|qt| qt.iter().zip(&cw).map(|(x, y)| x * y).sum())
                .collect();
            let attn = softmax_prefix(&scores, valid);
            (0..d)
                .map(|k| q.iter().zip(&attn).map(|(r, a)| a * r[k]).sum())
                .collect()
        })
        .collect()
}

/// `logits_c = Σ_j W_x[j][c]·ReLU(q·W_qf[:,j] + Σ_k [Z1,Z2][j][k]·W_z[k])`.
pub fn fusion_oracle(q: &[f64], w_qf: &Mat, z1: &Mat, z2: &Mat, w_z: &[f64], w_x: &Mat) -> Vec<f64> {
    let n = w_x.len();
    let d = q.len();
    let h: Vec<f64> = (0..n)
        .map(|j| {
            let a: f64 = (0..d).map(|k| q[k] * w_qf[k][j]).sum();
            let joined: Vec<f64> = z1[j].iter().chain(&z2[j]).copied().collect();
            let b: f64 = joined.iter().zip(w_z).map(|(x, w)| x * w).sum();
            (a + b).max(0.0)
        })
        .collect();
    (0..n).map(|c| (0..n).map(|j| w_x[j][c] * h[j]).sum()).collect()
}

/// Relative error with a floor on the denominator, so gradients that are
/// both near zero compare absolutely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest relative error between the tape gradient of `f` and central
/// differences with step `h`, over every entry of every input.
pub fn grad_check(inputs: &[Tensor], h: f64, floor: f64, f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).data()[0]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, &var) in vars.iter().enumerate() {
        let analytic = tape.grad(var).unwrap();
        for k in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[k], numeric, floor));
        }
    }
    worst
}

/// `Σ w ⊙ x` with fixed pseudo-random weights, turning any tensor into a
/// scalar whose gradient exercises every output entry.
pub fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.shape(x).to_vec();
    let w = Tensor::uniform(&shape, 1.0, &mut rng(seed));
    let wv = tape.constant(w);
    let prod = tape.mul(x, wv).unwrap();
    tape.sum_all(prod)
}

pub struct SyntheticSetup {
    pub vocab: Vocab,
    pub cats: CategorySet,
    pub train: Vec<LabeledQuery>,
    pub test: Vec<LabeledQuery>,
    pub core_tokens: Vec<Vec<String>>,
}

pub fn synthetic_setup(gen: &SyntheticConfig, query_len: usize) -> SyntheticSetup {
    let data = generate_synthetic(gen).unwrap();
    let cats = CategorySet::new(&data.categories, &data.vocab).unwrap();
    let n = gen.num_categories;
    SyntheticSetup {
        train: encode_queries(&data.train, &data.vocab, query_len, n).unwrap(),
        test: encode_queries(&data.test, &data.vocab, query_len, n).unwrap(),
        vocab: data.vocab,
        cats,
        core_tokens: data.core_tokens,
    }
}

/// A small but complete configuration that trains in seconds.
pub fn small_run(num_categories: usize, vocab_size: usize) -> RunConfig {
    let mut run = RunConfig::default();
    run.model.dim = 8;
    run.model.heads = 2;
    run.model.ffn_width = 16;
    run.model.encoder_layers = 1;
    run.model.query_len = 8;
    run.model.category_len = 8;
    run.model.conv_blocks = 1;
    run.model.conv_filters = 2;
    run.model.num_categories = num_categories;
    run.model.vocab_size = vocab_size;
    run.train.epochs = 2;
    run.train.batch_size = 16;
    run.train.lr = 1e-2;
    run
}

pub fn small_synthetic(num_categories: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        num_categories,
        vocab_size: 40,
        queries_per_category: 40,
        seed,
        ..SyntheticConfig::default()
    }
}

/// Worst deviation from each op's oracle over `n` random instances.
pub mod sweeps {
    use super::*;
    use mman_core::model::{
        char_interaction, char_match, fuse_and_score, multilabel_loss, self_match, semantic_match, stack_maps,
        ConvBlockVars, FusionInputs,
    };

    fn dims(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
        r.random_range(lo..=hi)
    }

    pub fn conv2d(n: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let (ci, co) = (dims(&mut r, 1, 3), dims(&mut r, 1, 3));
            let (kh, kw) = (dims(&mut r, 1, 3), dims(&mut r, 1, 3));
            let (h, w) = (dims(&mut r, kh, 7), dims(&mut r, kw, 7));
            let stride = [dims(&mut r, 1, 2), dims(&mut r, 1, 2)];
            let input = rand_tensor(&mut r, &[ci, h, w], 1.0);
            let kernels = rand_tensor(&mut r, &[co, ci, kh, kw], 1.0);
            let bias = rand_tensor(&mut r, &[co], 1.0);
            let mut t = Tape::new();
            let (x, k, b) = (t.param(input.clone()), t.param(kernels.clone()), t.param(bias.clone()));
            let y = t.conv2d(x, k, b, stride).unwrap();
            let expected = conv2d_loop(&to_vol(&input), &kernels, bias.data(), stride);
            worst = worst.max(max_diff(t.value(y).data(), &flatten_vol(&expected)));
            let g = rand_tensor(&mut r, t.value(y).shape(), 1.0);
            let gv = t.constant(g.clone());
            let p = t.mul(y, gv).unwrap();
            let l = t.sum_all(p);
            t.backward(l).unwrap();
            let (gi, gk, gb) = conv2d_loop_grads(&to_vol(&input), &kernels, &to_vol(&g), stride);
            worst = worst
                .max(max_diff(t.grad(x).unwrap().data(), &flatten_vol(&gi)))
                .max(max_diff(t.grad(k).unwrap().data(), &gk))
                .max(max_diff(t.grad(b).unwrap().data(), &gb));
        }
        worst
    }

    /// Output deviation, and the gradient-mass imbalance split into
    /// non-overlapping and overlapping window layouts.
    pub fn maxpool2d(n: usize, seed: u64) -> (f64, f64, f64) {
        let mut r = rng(seed);
        let (mut worst, mut disjoint, mut overlapping): (f64, f64, f64) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let window = [dims(&mut r, 1, 3), dims(&mut r, 1, 3)];
            let stride = [dims(&mut r, 1, 3), dims(&mut r, 1, 3)];
            let c = dims(&mut r, 1, 3);
            let (h, w) = (dims(&mut r, window[0], 8), dims(&mut r, window[1], 8));
            let input = rand_tensor(&mut r, &[c, h, w], 1.0);
            let mut t = Tape::new();
            let x = t.param(input.clone());
            let y = t.maxpool2d(x, window, stride).unwrap();
            let expected = maxpool_loop(&to_vol(&input), window, stride);
            worst = worst.max(max_diff(t.value(y).data(), &flatten_vol(&expected)));
            let g = rand_tensor(&mut r, t.value(y).shape(), 1.0);
            let gv = t.constant(g.clone());
            let p = t.mul(y, gv).unwrap();
            let l = t.sum_all(p);
            t.backward(l).unwrap();
            let gx = t.grad(x).unwrap();
            if stride[0] >= window[0] && stride[1] >= window[1] {
                // each upstream value lands untouched on exactly one input cell
                let mut routed: Vec<f64> = gx.data().iter().copied().filter(|v| *v != 0.0).collect();
                let mut sent = g.data().to_vec();
                routed.sort_by(f64::total_cmp);
                sent.sort_by(f64::total_cmp);
                let miss = if routed.len() == sent.len() {
                    max_diff(&routed, &sent)
                } else {
                    f64::INFINITY
                };
                disjoint = disjoint.max(miss);
            } else {
                overlapping = overlapping.max((gx.sum() - g.sum()).abs());
            }
        }
        (worst, disjoint, overlapping)
    }

    pub fn self_match_op(n: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let (l, d) = (dims(&mut r, 1, 6), dims(&mut r, 1, 6));
            let valid = dims(&mut r, 1, l);
            let q = rand_mat(&mut r, l, d, 1.0);
            let w = rand_mat(&mut r, d, d, 1.0);
            let v = rand_mat(&mut r, 1, d, 1.0);
            let mut t = Tape::new();
            let (qv, wv, vv) = (
                t.constant(to_tensor(&q)),
                t.constant(to_tensor(&w)),
                t.constant(to_tensor(&v)),
            );
            let (pooled, alpha) = self_match(&mut t, qv, wv, vv, valid).unwrap();
            let (ep, ea) = self_match_oracle(&q, &w, &v[0], valid);
            worst = worst
                .max(max_diff(t.value(pooled).data(), &ep))
                .max(max_diff(t.value(alpha).data(), &ea));
        }
        worst
    }

    pub fn char_interaction_op(n: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let (lq, lc, d) = (dims(&mut r, 1, 6), dims(&mut r, 1, 6), dims(&mut r, 1, 6));
            let q = rand_mat(&mut r, lq, d, 1.0);
            let c = rand_mat(&mut r, lc, d, 1.0);
            let w = rand_mat(&mut r, d, d, 1.0);
            let mut t = Tape::new();
            let (qv, cv, wv) = (
                t.constant(to_tensor(&q)),
                t.constant(to_tensor(&c)),
                t.constant(to_tensor(&w)),
            );
            let m = char_interaction(&mut t, qv, cv, wv).unwrap();
            worst = worst.max(mat_diff(&to_mat(t.value(m)), &interaction_oracle(&q, &w, &c)));
        }
        worst
    }

    /// Tiny configuration (one conv block, one pool) on random maps.
    pub fn char_match_op(n: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let mut cfg = ModelConfig {
                query_len: 6,
                category_len: 6,
                conv_blocks: dims(&mut r, 1, 2),
                conv_filters: dims(&mut r, 1, 3),
                dim: dims(&mut r, 1, 5),
                ..ModelConfig::default()
            };
            if cfg.conv_blocks == 2 {
                cfg.query_len = 12;
                cfg.category_len = 14;
            }
            let n_cats = dims(&mut r, 1, 3);
            let flat = cfg.flat_dim().unwrap();
            let maps: Vec<Mat> = (0..n_cats)
                .map(|_| rand_mat(&mut r, cfg.query_len, cfg.category_len, 1.0))
                .collect();
            let blocks: Vec<(Tensor, Vec<f64>)> = (0..cfg.conv_blocks)
                .map(|b| {
                    let c_in = if b == 0 { 1 } else { cfg.conv_filters };
                    let k = rand_tensor(&mut r, &[cfg.conv_filters, c_in, 3, 3], 0.5);
                    let bias = rand_tensor(&mut r, &[cfg.conv_filters], 0.5).into_data();
                    (k, bias)
                })
                .collect();
            let proj = rand_mat(&mut r, flat, cfg.dim, 1.0);
            let mut t = Tape::new();
            let map_vars: Vec<Var> = maps.iter().map(|m| t.constant(to_tensor(m))).collect();
            let stacked = stack_maps(&mut t, &map_vars).unwrap();
            let block_vars: Vec<ConvBlockVars> = blocks
                .iter()
                .map(|(k, b)| ConvBlockVars {
                    kernels: t.constant(k.clone()),
                    bias: t.constant(Tensor::vector(b.clone())),
                })
                .collect();
            let pv = t.constant(to_tensor(&proj));
            let z1 = char_match(&mut t, stacked, &block_vars, pv, &cfg).unwrap();
            let expected: Mat = maps
                .iter()
                .map(|m| char_match_row_oracle(m, &blocks, &proj, &cfg))
                .collect();
            worst = worst.max(mat_diff(&to_mat(t.value(z1)), &expected));
        }
        worst
    }

    pub fn semantic_match_op(n: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let (lq, lc, d, nc) = (
                dims(&mut r, 1, 6),
                dims(&mut r, 1, 6),
                dims(&mut r, 1, 5),
                dims(&mut r, 1, 4),
            );
            let valid = dims(&mut r, 1, lq);
            let q = rand_mat(&mut r, lq, d, 1.0);
            let w = rand_mat(&mut r, d, d, 1.0);
            let cats: Vec<(Mat, usize)> = (0..nc)
                .map(|_| {
                    let len = dims(&mut r, 1, lc);
                    (rand_mat(&mut r, lc, d, 1.0), len)
                })
                .collect();
            let mut t = Tape::new();
            let qv = t.constant(to_tensor(&q));
            let wv = t.constant(to_tensor(&w));
            let cv: Vec<(Var, usize)> = cats.iter().map(|(c, len)| (t.constant(to_tensor(c)), *len)).collect();
            let z2 = semantic_match(&mut t, qv, &cv, wv, valid).unwrap();
            worst = worst.max(mat_diff(&to_mat(t.value(z2)), &semantic_oracle(&q, &cats, &w, valid)));
        }
        worst
    }

    pub fn fuse_and_score_op(n: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let (d, nc) = (dims(&mut r, 1, 6), dims(&mut r, 1, 6));
            let q = rand_mat(&mut r, 1, d, 1.0);
            let w_qf = rand_mat(&mut r, d, nc, 1.0);
            let z1 = rand_mat(&mut r, nc, d, 1.0);
            let z2 = rand_mat(&mut r, nc, d, 1.0);
            let w_z = rand_mat(&mut r, 2 * d, 1, 1.0);
            let w_x = rand_mat(&mut r, nc, nc, 1.0);
            let mut t = Tape::new();
            let mut c = |m: &Mat| t.constant(to_tensor(m));
            let inputs = FusionInputs {
                query: Some((c(&q), c(&w_qf))),
                z1: Some(c(&z1)),
                z2: Some(c(&z2)),
                w_z: Some(c(&w_z)),
                w_x: c(&w_x),
            };
            let logits = fuse_and_score(&mut t, inputs).unwrap();
            let wz: Vec<f64> = w_z.iter().map(|r| r[0]).collect();
            worst = worst.max(max_diff(
                t.value(logits).data(),
                &fusion_oracle(&q[0], &w_qf, &z1, &z2, &wz, &w_x),
            ));
        }
        worst
    }

    /// Against the naive σ-then-log form at |z| ≤ 10.
    pub fn multilabel_loss_op(n: usize, seed: u64) -> f64 {
        let mut r = rng(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let nc = dims(&mut r, 1, 12);
            let z: Vec<f64> = (0..nc).map(|_| r.random_range(-10.0..10.0)).collect();
            let y: Vec<f64> = (0..nc).map(|_| f64::from(u8::from(r.random_bool(0.5)))).collect();
            let mut t = Tape::new();
            let zv = t.constant(Tensor::from_rows(std::slice::from_ref(&z)));
            let l = multilabel_loss(&mut t, zv, &y).unwrap();
            worst = worst.max((t.value(l).data()[0] - naive_bce(&z, &y)).abs());
        }
        worst
    }
}

pub mod fixtures {
    use mman_core::config::{ModelConfig, Variant};
    use mman_core::text::{tokenize, CategoryText};
    use mman_core::{CategorySet, LabeledQuery, MmanModel, TokenSequence, Vocab};

    pub const ALPHABET: &str = "abcdefghijklmnopqrst";

    pub fn vocab() -> Vocab {
        Vocab::from_texts([ALPHABET])
    }

    pub fn category_texts(specs: &[(&str, &[&str])]) -> Vec<CategoryText> {
        specs
            .iter()
            .enumerate()
            .map(|(id, (name, words))| CategoryText {
                id,
                name: name.to_string(),
                product_words: words.iter().map(|w| w.to_string()).collect(),
            })
            .collect()
    }

    pub fn three_categories(vocab: &Vocab) -> CategorySet {
        let texts = category_texts(&[("ab", &["cd", "e"]), ("fgh", &["ij"]), ("kl", &["mnop", "q"])]);
        CategorySet::new(&texts, vocab).unwrap()
    }

    /// L_q=6, L_c=8, d=8, one encoder layer, one conv block.
    pub fn tiny_config(num_categories: usize, vocab_size: usize, variant: Variant) -> ModelConfig {
        ModelConfig {
            dim: 8,
            query_len: 6,
            category_len: 8,
            encoder_layers: 1,
            heads: 2,
            ffn_width: 16,
            conv_blocks: 1,
            conv_filters: 3,
            variant,
            num_categories,
            vocab_size,
            ..ModelConfig::default()
        }
    }

    pub fn tiny_model(variant: Variant, seed: u64) -> (MmanModel, Vocab, CategorySet) {
        let vocab = vocab();
        let cats = three_categories(&vocab);
        let model = MmanModel::new(tiny_config(3, vocab.size(), variant), seed).unwrap();
        (model, vocab, cats)
    }

    pub fn query(text: &str, vocab: &Vocab, len: usize) -> TokenSequence {
        tokenize(text, vocab, len).unwrap()
    }

    pub fn example(text: &str, labels: &[bool], vocab: &Vocab, len: usize) -> LabeledQuery {
        LabeledQuery {
            query: query(text, vocab, len),
            labels: labels.to_vec(),
        }
    }
}

/// Worst relative error between the model's analytic gradients of the mean
/// batch loss and central differences, with the offending parameter name.
pub fn model_grad_check(
    model: &mut mman_core::MmanModel,
    cats: &CategorySet,
    batch: &[LabeledQuery],
    h: f64,
    floor: f64,
) -> (f64, String, usize) {
    let refs: Vec<&LabeledQuery> = batch.iter().collect();
    let scale = 1.0 / refs.len() as f64;
    let (_, grads) = model.batch_gradients(cats, &refs, scale).unwrap();
    let mut worst = (0.0, String::new(), 0);
    let ids: Vec<_> = model.params().ids().collect();
    let mut checked = 0;
    for id in ids {
        for k in 0..model.params().get(id).len() {
            let orig = model.params().get(id).data()[k];
            model.params_mut().get_mut(id).data_mut()[k] = orig + h;
            let plus = model.mean_loss(cats, &refs).unwrap();
            model.params_mut().get_mut(id).data_mut()[k] = orig - h;
            let minus = model.mean_loss(cats, &refs).unwrap();
            model.params_mut().get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let e = rel_err(grads[id.index()].data()[k], numeric, floor);
            checked += 1;
            if e > worst.0 {
                worst = (e, format!("{}[{k}]", model.params().name(id)), 0);
            }
        }
    }
    worst.2 = checked;
    worst
}
