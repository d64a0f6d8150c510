//! Whole-model forward against a straight-line loop implementation, plus the
//! symmetry properties of the spatial and temporal blocks.

mod common;

use slgtformer::config::{ModelConfig, StageConfig};
use slgtformer::graph::SkeletonGraph;
use slgtformer::layers::{ForwardCtx, Sublayer};
use slgtformer::model::Slgtformer;
use slgtformer::params::ModelParams;
use slgtformer::rng::Rng;
use slgtformer::spatial::{apply_decoupled_factor, psa_forward};
use slgtformer::temporal::{gsta_forward, peg_apply};
use slgtformer::Tensor;

use common::{matmul, max_abs_diff, rand, random_sublayer, reference_sublayer, reference_sublayer_kv};

fn oracle_config() -> ModelConfig {
    ModelConfig {
        t_in: 10,
        stages: vec![StageConfig::new(2, 2), StageConfig::new(1, 1)],
        ..ModelConfig::tiny()
    }
}

fn noisy_params(model: &Slgtformer, seed: u64) -> ModelParams {
    let mut rng = Rng::new(seed);
    model
        .init_params()
        .unwrap()
        .iter()
        .map(|(n, t)| {
            let data = t.data().iter().map(|v| v + rng.uniform_range(-0.3, 0.3)).collect();
            (n.clone(), Tensor::new(t.shape(), data).unwrap())
        })
        .collect()
}

/// `out[u][o] = sum_{r < w, c} x[u*stride + r][c] * k[r][c][o]`
fn conv(x: &[f64], t: usize, k: &Tensor, stride: usize) -> (Vec<f64>, usize) {
    let (w, c_in, c_out) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    let lk = (t - w) / stride + 1;
    let mut out = vec![0.0; lk * c_out];
    for u in 0..lk {
        for r in 0..w {
            for c in 0..c_in {
                for o in 0..c_out {
                    out[u * c_out + o] += x[(u * stride + r) * c_in + c] * k.at(&[r, c, o]);
                }
            }
        }
    }
    (out, lk)
}

/// Straight-line forward of `model` on `x [B, N, C, T]`, all state in
/// `h[b][t][n][d]` vectors.
fn loop_forward(model: &Slgtformer, p: &ModelParams, x: &Tensor) -> Vec<f64> {
    let c = model.config();
    let (b, n, ch, t_in) = (x.shape()[0], c.joints, c.in_channels, c.t_in);
    let (heads, groups, d_pos) = (c.heads, c.groups, c.d_pos);
    let get = |s: &str| p.get(s).unwrap().clone();

    let (w_in, b_in) = (get("input.proj.weight"), get("input.proj.bias"));
    let mut d = w_in.shape()[1];
    // h[bi][t] is an [N, D] frame
    let mut h: Vec<Vec<Vec<f64>>> = (0..b)
        .map(|bi| {
            (0..t_in)
                .map(|t| {
                    let mut f = vec![0.0; n * d];
                    for j in 0..n {
                        for o in 0..d {
                            f[j * d + o] = b_in.data()[o] + (0..ch).map(|q| x.at(&[bi, j, q, t]) * w_in.at(&[q, o])).sum::<f64>();
                        }
                    }
                    f
                })
                .collect()
        })
        .collect();

    // pair encodings through the meta network: gam[i][j] has A * D_pos entries
    let g0 = get("lgrpe.gamma0");
    let k = g0.shape()[2];
    let mut gam = vec![vec![0.0; heads * d_pos]; n * n];
    for ij in 0..n * n {
        let row = &g0.data()[ij * k..(ij + 1) * k];
        let mut hid = matmul(row, 1, &get("lgrpe.mlp.w1"));
        for (q, v) in hid.iter_mut().enumerate() {
            *v = (*v + get("lgrpe.mlp.b1").data()[q]).max(0.0);
        }
        let out = matmul(&hid, 1, &get("lgrpe.mlp.w2"));
        for (q, v) in out.iter().enumerate() {
            gam[ij][q] = v + get("lgrpe.mlp.b2").data()[q];
        }
    }

    let mut t = t_in;
    let mut valid = t_in;
    let nstages = c.stages.len();
    let mut block = 0;
    for (s, st) in c.stages.iter().enumerate() {
        // pad to a multiple of 6 windows, the stride, and 2 before a downsample
        let mut unit = lcm(6, st.sub_sample);
        if s + 1 < nstages {
            unit = lcm(unit, 2);
        }
        let padded = t.div_ceil(unit) * unit;
        for seq in h.iter_mut() {
            while seq.len() < padded {
                seq.push(seq.last().unwrap().clone());
            }
        }
        t = padded;
        for bl in 0..st.blocks {
            let pre = format!("block{block}");
            let sub = |name: &str| Sublayer::load(p, &format!("{pre}.{name}"), heads).unwrap();

            // spatial: attention over joints with the positional bias, then the factor
            let ssub = sub("spatial");
            let mut bias = vec![0.0; heads * n * n];
            for a in 0..heads {
                let v = get(&format!("{pre}.spatial.vpos.head{a}"));
                for ij in 0..n * n {
                    bias[a * n * n + ij] = (0..d_pos).map(|q| v.data()[q] * gam[ij][a * d_pos + q]).sum();
                }
            }
            let fac = get(&format!("{pre}.spatial.factor"));
            let gw = d / groups;
            for seq in h.iter_mut() {
                for frame in seq.iter_mut() {
                    let y = reference_sublayer(frame, n, &ssub, |_, _| true, Some(&bias));
                    let mut z = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..n {
                            for q in 0..d {
                                z[i * d + q] += fac.at(&[i, j, q / gw]) * y[j * d + q];
                            }
                        }
                    }
                    *frame = z;
                }
            }

            // temporal, per joint: windowed attention, summary attention, PEG, downsample
            let (lta, gsta) = (sub("temporal.lta"), sub("temporal.gsta"));
            let sr = get(&format!("{pre}.temporal.gsta.sr.kernel"));
            let w = t / 6;
            let first = bl == 0;
            let down = bl + 1 == st.blocks && s + 1 < nstages;
            let mut new_h: Vec<Vec<Vec<f64>>> = Vec::new();
            let mut d_out = d;
            let mut t_out = t;
            for seq in &h {
                let mut cols: Vec<Vec<f64>> = Vec::new();
                for j in 0..n {
                    let col: Vec<f64> = seq.iter().flat_map(|f| f[j * d..(j + 1) * d].to_vec()).collect();
                    let y = reference_sublayer(&col, t, &lta, |a, b| a / w == b / w, None);
                    let mut y = reference_sublayer_kv(&y, t, &gsta, |hn| conv(hn, t, &sr, st.sub_sample), |_, _| true, None);
                    if first {
                        let pw = get(&format!("stage{s}.peg.weight"));
                        let base = y.clone();
                        for u in 0..t {
                            for q in 0..d {
                                for r in 0..3 {
                                    let src = u as isize + r as isize - 1;
                                    if (0..t as isize).contains(&src) {
                                        y[u * d + q] += pw.at(&[r, q]) * base[src as usize * d + q];
                                    }
                                }
                            }
                        }
                    }
                    if down {
                        let kd = get(&format!("stage{s}.downsample.kernel"));
                        let (z, lt) = conv(&y, t, &kd, 2);
                        d_out = kd.shape()[2];
                        t_out = lt;
                        y = z;
                    }
                    cols.push(y);
                }
                new_h.push((0..t_out).map(|u| (0..n).flat_map(|j| cols[j][u * d_out..(u + 1) * d_out].to_vec()).collect()).collect());
            }
            h = new_h;
            d = d_out;
            if down {
                t = t_out;
                valid = valid.div_ceil(2);
            }
            block += 1;
        }
    }

    let (wh, bh) = (get("head.weight"), get("head.bias"));
    let classes = wh.shape()[1];
    let mut logits = Vec::new();
    for seq in &h {
        let mut pooled = vec![0.0; d];
        for frame in &seq[..valid] {
            for j in 0..n {
                for q in 0..d {
                    pooled[q] += frame[j * d + q] / (valid * n) as f64;
                }
            }
        }
        for o in 0..classes {
            logits.push(bh.data()[o] + (0..d).map(|q| pooled[q] * wh.at(&[q, o])).sum::<f64>());
        }
    }
    logits
}

fn lcm(a: usize, b: usize) -> usize {
    (a..=a * b).find(|m| m % a == 0 && m % b == 0).unwrap()
}

#[test]
fn forward_matches_loop_implementation() {
    let model = Slgtformer::new(oracle_config(), SkeletonGraph::path(3).unwrap()).unwrap();
    let plan = model.plan();
    assert_eq!((plan[0].padded, plan[1].length, plan[1].padded, plan[1].valid), (12, 6, 6, 5));
    let params = noisy_params(&model, 21);
    let c = model.config();
    let x = rand(&[2, c.joints, c.in_channels, c.t_in], &mut Rng::new(22));
    let logits = model.forward(&x, &params, &ForwardCtx::eval()).unwrap();
    let expect = loop_forward(&model, &params, &x);
    let diff = max_abs_diff(logits.data(), &expect);
    assert!(diff < 1e-8, "max |diff| {diff:.3e}");
}

/// `perm[i]` is the source joint of output joint `i`.
fn permute_joints(x: &Tensor, perm: &[usize]) -> Tensor {
    let (m, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::with_capacity(x.numel());
    for a in 0..m {
        for &j in perm {
            out.extend_from_slice(&x.data()[(a * n + j) * d..(a * n + j + 1) * d]);
        }
    }
    Tensor::new(&[m, n, d], out).unwrap()
}

fn permute_pairs(g: &Tensor, perm: &[usize]) -> Tensor {
    let s = g.shape().to_vec();
    let inner: usize = s[2..].iter().product();
    let n = s[0];
    let mut out = Vec::with_capacity(g.numel());
    for &i in perm {
        for &j in perm {
            out.extend_from_slice(&g.data()[(i * n + j) * inner..(i * n + j + 1) * inner]);
        }
    }
    Tensor::new(&s, out).unwrap()
}

#[test]
fn spatial_block_permutation_behaviour() {
    let graph = SkeletonGraph::builtin_slgt27();
    let (n, d, heads, d_pos, groups) = (graph.node_count(), 8, 2, 3, 2);
    let sub = random_sublayer(d, heads, 31);
    let ctx = ForwardCtx::eval();
    let x = rand(&[3, n, d], &mut Rng::new(32));
    let gamma = rand(&[n, n, heads, d_pos], &mut Rng::new(33));
    let mut perm: Vec<usize> = (0..n).collect();
    Rng::new(34).shuffle(&mut perm);

    let mut eye = vec![0.0; n * n * groups];
    for i in 0..n {
        for k in 0..groups {
            eye[(i * n + i) * groups + k] = 1.0;
        }
    }
    let identity = Tensor::new(&[n, n, groups], eye).unwrap();
    let zeros = vec![Tensor::zeros(&[d_pos]); heads];
    let block = |x: &Tensor, g: &Tensor, vpos: &[Tensor], f: &Tensor| {
        apply_decoupled_factor(&psa_forward(x, &sub, Some(g), vpos, &ctx, 0).unwrap(), f).unwrap()
    };

    let plain = block(&x, &gamma, &zeros, &identity);
    let moved = block(&permute_joints(&x, &perm), &gamma, &zeros, &identity);
    assert!(max_abs_diff(moved.data(), permute_joints(&plain, &perm).data()) < 1e-10);

    // the graph factor and a nonzero bias tie outputs to joint identity
    let factor = slgtformer::graph::init_decoupled_factor(&graph.normalized_adjacency_factor(), groups).unwrap();
    let vpos: Vec<Tensor> = (0..heads).map(|a| rand(&[d_pos], &mut Rng::new(40 + a as u64))).collect();
    let plain = block(&x, &gamma, &vpos, &factor);
    let moved = block(&permute_joints(&x, &perm), &gamma, &vpos, &factor);
    assert!(max_abs_diff(moved.data(), permute_joints(&plain, &perm).data()) > 1e-3);

    // relabelling the graph along with the input restores equivariance
    let moved = block(&permute_joints(&x, &perm), &permute_pairs(&gamma, &perm), &vpos, &permute_pairs(&factor, &perm));
    assert!(max_abs_diff(moved.data(), permute_joints(&plain, &perm).data()) < 1e-10);
}

fn roll_time(x: &Tensor, by: usize) -> Tensor {
    let (b, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![0.0; x.numel()];
    for s in 0..b {
        for u in 0..t {
            let dst = (s * t + (u + by) % t) * d;
            out[dst..dst + d].copy_from_slice(&x.data()[(s * t + u) * d..(s * t + u + 1) * d]);
        }
    }
    Tensor::new(&[b, t, d], out).unwrap()
}

#[test]
fn position_encoding_breaks_circular_shift_symmetry() {
    let (t, d) = (12, 8);
    let sub = random_sublayer(d, 2, 51);
    let ctx = ForwardCtx::eval();
    let x = rand(&[2, t, d], &mut Rng::new(52));
    let shifted = roll_time(&x, 5);

    // global attention alone cannot tell a sequence from its rotation
    let a = gsta_forward(&x, &sub, None, 1, &ctx).unwrap();
    let b = gsta_forward(&shifted, &sub, None, 1, &ctx).unwrap();
    assert!(max_abs_diff(b.data(), roll_time(&a, 5).data()) < 1e-10);

    let mut rng = Rng::new(53);
    let mut found = false;
    for _ in 0..5 {
        let w = rand(&[3, d], &mut rng);
        let a = peg_apply(&gsta_forward(&x, &sub, None, 1, &ctx).unwrap(), &w).unwrap();
        let b = peg_apply(&gsta_forward(&shifted, &sub, None, 1, &ctx).unwrap(), &w).unwrap();
        if max_abs_diff(b.data(), roll_time(&a, 5).data()) > 1e-3 {
            found = true;
            break;
        }
    }
    assert!(found, "no weights separated a sequence from its rotation");
}
