//! Plain-loop reference implementations shared by the integration tests.

#![allow(dead_code)]

use slgtformer::layers::Sublayer;
use slgtformer::params::ModelParams;
use slgtformer::rng::Rng;
use slgtformer::tensor::LAYER_NORM_EPS;
use slgtformer::Tensor;

pub fn rand(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mat(t: &Tensor) -> (Vec<f64>, usize, usize) {
    let s = t.shape();
    (t.to_vec(), s[0], s[1])
}

/// `x [L, D] @ w [D, E]`.
pub fn matmul(x: &[f64], l: usize, w: &Tensor) -> Vec<f64> {
    let (w, d, e) = mat(w);
    let mut out = vec![0.0; l * e];
    for i in 0..l {
        for k in 0..d {
            for j in 0..e {
                out[i * e + j] += x[i * d + k] * w[k * e + j];
            }
        }
    }
    out
}

pub fn layer_norm(x: &[f64], d: usize, gain: &Tensor, bias: &Tensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        for (k, v) in row.iter().enumerate() {
            out.push((v - mean) / (var + LAYER_NORM_EPS).sqrt() * gain.data()[k] + bias.data()[k]);
        }
    }
    out
}

/// One pre-norm attention + MLP sublayer on a single sequence `x [L, D]`.
/// `allowed(i, j)` masks keys; `bias[a][i][j]` is added to head `a`'s logits.
pub fn reference_sublayer(
    x: &[f64],
    l: usize,
    sub: &Sublayer,
    allowed: impl Fn(usize, usize) -> bool,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    reference_sublayer_kv(x, l, sub, |h| (h.to_vec(), l), allowed, bias)
}

/// As [`reference_sublayer`], with keys and values taken from `kv(LN1(x))`,
/// which returns the `[Lk, D]` key tokens and `Lk`.
pub fn reference_sublayer_kv(
    x: &[f64],
    l: usize,
    sub: &Sublayer,
    kv: impl Fn(&[f64]) -> (Vec<f64>, usize),
    allowed: impl Fn(usize, usize) -> bool,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let d = x.len() / l;
    let heads = sub.attn.heads;
    let h = layer_norm(x, d, &sub.ln1.gain, &sub.ln1.bias);
    let (z, lk) = kv(&h);
    let (q, k, v) = (matmul(&h, l, &sub.attn.wq), matmul(&z, lk, &sub.attn.wk), matmul(&z, lk, &sub.attn.wv));
    let inner = sub.attn.wq.shape()[1];
    let dh = inner / heads;
    let mut ctx = vec![0.0; l * inner];
    for a in 0..heads {
        for i in 0..l {
            let mut logits = vec![f64::NEG_INFINITY; lk];
            for j in (0..lk).filter(|&j| allowed(i, j)) {
                let dot: f64 = (0..dh).map(|c| q[i * inner + a * dh + c] * k[j * inner + a * dh + c]).sum();
                logits[j] = dot / (dh as f64).sqrt() + bias.map_or(0.0, |b| b[(a * l + i) * lk + j]);
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for j in 0..lk {
                for c in 0..dh {
                    ctx[i * inner + a * dh + c] += e[j] / s * v[j * inner + a * dh + c];
                }
            }
        }
    }
    let y: Vec<f64> = matmul(&ctx, l, &sub.attn.wo).iter().zip(x).map(|(a, b)| a + b).collect();
    let h2 = layer_norm(&y, d, &sub.ln2.gain, &sub.ln2.bias);
    let fc1 = sub.mlp.fc1.bias.as_ref().unwrap();
    let mut hid = matmul(&h2, l, &sub.mlp.fc1.weight);
    for (i, v) in hid.iter_mut().enumerate() {
        *v = (*v + fc1.data()[i % fc1.numel()]).max(0.0);
    }
    let fc2 = sub.mlp.fc2.bias.as_ref().unwrap();
    let out = matmul(&hid, l, &sub.mlp.fc2.weight);
    out.iter().enumerate().map(|(i, o)| o + fc2.data()[i % d] + y[i]).collect()
}

pub fn random_sublayer(d: usize, heads: usize, seed: u64) -> Sublayer {
    let specs = Sublayer::specs("s", d, heads, 2);
    let mut p = ModelParams::init(&specs, seed).unwrap();
    // move the norms and biases off their trivial init
    let mut rng = Rng::new(seed + 1);
    for spec in &specs {
        if spec.name.contains("ln") || spec.name.ends_with(".b1") || spec.name.ends_with(".b2") {
            let t = p.get(&spec.name).unwrap();
            let vals = t.data().iter().map(|v| v + rng.uniform_range(-0.3, 0.3)).collect();
            p.insert(spec.name.clone(), Tensor::new(t.shape(), vals).unwrap());
        }
    }
    Sublayer::load(&p, "s", heads).unwrap()
}
