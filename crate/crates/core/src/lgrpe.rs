//! Learnable graph relative positional encodings.
//!
//! Hop distances are clipped to `d_max` (anything farther lands in bucket
//! `d_max + 1`) and one-hot encoded into `gamma0: [N, N, d_max + 2]`. A two-layer
//! ReLU network maps each pair's encoding to `A * D_pos` features, read as one
//! `D_pos` slice per attention head. Each head's bias is the dot product of its
//! slice with a learnable vector `v_pos`.
//!
//! `gamma0` starts as the exact one-hot table and is itself trainable, so pairs
//! at equal distance begin with identical encodings and can drift apart.

use crate::error::{Error, Result};
use crate::graph::DistanceMatrix;
use crate::tensor::Tensor;

/// Number of distance buckets for a clip value: `0..=d_max` plus overflow.
pub fn onehot_dim(d_max: usize) -> usize {
    d_max + 2
}

/// Clipped distance bucket of every pair, row-major.
pub fn clip_distances(psi: &[i64], d_max: usize) -> Result<Vec<usize>> {
    psi.iter()
        .map(|&d| {
            if d < 0 {
                Err(Error::invalid("build_gamma0", format!("negative distance {d}")))
            } else {
                Ok((d as usize).min(d_max + 1))
            }
        })
        .collect()
}

/// One-hot table `[n, n, d_max + 2]` of clipped distances from a row-major
/// `n x n` matrix.
pub fn build_gamma0(n: usize, psi: &[i64], d_max: usize) -> Result<Tensor> {
    if psi.len() != n * n {
        return Err(Error::invalid(
            "build_gamma0",
            format!("{} distances for {n} nodes", psi.len()),
        ));
    }
    let dim = onehot_dim(d_max);
    let mut data = vec![0.0; n * n * dim];
    for (p, bucket) in clip_distances(psi, d_max)?.into_iter().enumerate() {
        data[p * dim + bucket] = 1.0;
    }
    Tensor::new(&[n, n, dim], data)
}

pub fn gamma0_from_graph(psi: &DistanceMatrix, d_max: usize) -> Tensor {
    let signed: Vec<i64> = psi.as_slice().iter().map(|&d| d as i64).collect();
    build_gamma0(psi.n(), &signed, d_max).expect("hop distances are non-negative")
}

/// Meta-network weights. `w1: [onehot, H]`, `b1: [H]`, `w2: [H, A * D_pos]`,
/// `b2: [A * D_pos]`.
#[derive(Clone, Debug)]
pub struct MetaNetwork {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// `Γ = W2 relu(W1 γ0 + b1) + b2` per pair, shaped `[N, N, heads, d_pos]`.
pub fn forward_meta(gamma0: &Tensor, net: &MetaNetwork, heads: usize) -> Result<Tensor> {
    let s = gamma0.shape();
    if s.len() != 3 {
        return Err(Error::invalid("forward_meta", format!("gamma0 must be [N, N, K], got {s:?}")));
    }
    let out = *net.w2.shape().last().unwrap_or(&0);
    if heads == 0 || out % heads != 0 {
        return Err(Error::invalid(
            "forward_meta",
            format!("{out} meta outputs do not split into {heads} heads"),
        ));
    }
    let (n, k) = (s[0], s[2]);
    let hidden = gamma0.reshape(&[n * n, k])?.matmul(&net.w1)?.add(&net.b1)?.relu()?;
    hidden
        .matmul(&net.w2)?
        .add(&net.b2)?
        .reshape(&[n, n, heads, out / heads])
}

/// `bias[a, i, j] = v_pos[a] . Γ[i, j, a, :]` for `Γ: [N, N, A, D_pos]` and
/// one `[D_pos]` vector per head.
pub fn positional_bias(gamma: &Tensor, v_pos: &[Tensor]) -> Result<Tensor> {
    let s = gamma.shape();
    if s.len() != 4 {
        return Err(Error::invalid("positional_bias", format!("gamma must be 4-d, got {s:?}")));
    }
    let (n, heads, d_pos) = (s[0], s[2], s[3]);
    if v_pos.len() != heads {
        return Err(Error::invalid(
            "positional_bias",
            format!("{} position vectors for {heads} heads", v_pos.len()),
        ));
    }
    if let Some(v) = v_pos.iter().find(|v| v.shape() != [d_pos]) {
        return Err(Error::shape("positional_bias", &[d_pos], v.shape()));
    }
    // [A, D_pos, 1] against [A, N*N, D_pos] -> [A, N*N, 1]
    let v = Tensor::concat(v_pos, 0)?.reshape(&[heads, d_pos, 1])?;
    let g = gamma.reshape(&[n * n, heads, d_pos])?.permute(&[1, 0, 2])?;
    g.matmul(&v)?.reshape(&[heads, n, n])
}
