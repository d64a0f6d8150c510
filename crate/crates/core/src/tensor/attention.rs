//! Multi-head scaled dot-product attention shared by the spatial and
//! temporal blocks.

use std::sync::Arc;

use super::linalg::{gemm_acc, View};
use super::Tensor;
use crate::error::{Error, Result};

const ROW_BLOCK: usize = 64;

/// Attention output together with the normalized weights that produced it.
pub struct Attention {
    /// `[..., Lq, Dv]`
    pub output: Tensor,
    /// `[..., Lq, Lk]`, rows sum to one.
    pub weights: Tensor,
}

/// `softmax(q k^T / sqrt(d) + bias) v` over the last two axes.
///
/// `q: [..., Lq, d]`, `k: [..., Lk, d]`, `v: [..., Lk, dv]`; `bias` (if any)
/// broadcasts against `[..., Lq, Lk]` and is added before the softmax.
pub fn scaled_dot_product_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    bias: Option<&Tensor>,
) -> Result<Attention> {
    let d = *q.shape().last().ok_or_else(|| Error::invalid("attention", "empty query"))?;
    let mut logits = q.matmul_nt(k)?.scale(1.0 / (d as f64).sqrt())?;
    if let Some(b) = bias {
        logits = logits.add(b)?;
    }
    let weights = logits.softmax(-1)?;
    let output = weights.matmul(v)?;
    Ok(Attention { output, weights })
}

/// Multi-head attention on head-interleaved projections, without
/// materializing per-head copies.
///
/// `q: [B, Lq, H*d]`, `k, v: [B, Lk, H*d]` (head `h` owns columns
/// `h*d..(h+1)*d`). `bias` is `[H, Lq, Lk]` (shared across the batch) or
/// `[B, H, Lq, Lk]`. Returns the `[B, Lq, H*d]` output and the untracked
/// `[B, H, Lq, Lk]` weights. Same values as [`split_heads`] +
/// [`scaled_dot_product_attention`] + [`merge_heads`].
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    bias: Option<&Tensor>,
) -> Result<Attention> {
    let m = Mha::new(q, k, v, heads, bias)?;
    let Mha { b, lq, lk, e, d, per_head, bias_shared, .. } = m;
    let bias_at = move |bi: usize, h: usize| if bias_shared { h * per_head } else { (bi * heads + h) * per_head };
    let scale = m.scale;
    let mut p = vec![0.0; b * heads * per_head];
    let mut out = vec![0.0; b * lq * e];
    m.run(&mut out, Some(&mut p))?;
    let p = Arc::new(p);
    let weights = Tensor::from_shared(vec![b, heads, lq, lk], p.clone());
    let (tq, tk, tv) = (q.clone(), k.clone(), v.clone());
    let has_bias = bias.is_some();
    let bias_grad = bias.is_some_and(|t| t.requires_grad());
    let mut parents = vec![q, k, v];
    if let Some(t) = bias {
        parents.push(t);
    }
    let output = Tensor::from_op("multi_head_attention", vec![b, lq, e], out, &parents, move || {
        Box::new(move |g| {
            let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
            let mut gq = vec![0.0; qd.len()];
            let mut gk = vec![0.0; kd.len()];
            let mut gv = vec![0.0; vd.len()];
            let mut gb = bias_grad.then(|| vec![0.0; if bias_shared { heads * per_head } else { b * heads * per_head }]);
            let mut ds = vec![0.0; per_head];
            for bi in 0..b {
                for h in 0..heads {
                    let qo = bi * lq * e + h * d;
                    let ko = bi * lk * e + h * d;
                    let po = (bi * heads + h) * per_head;
                    let ph = &p[po..po + per_head];
                    let go = View { data: &g[qo..], rs: e, cs: 1 };
                    // dV = P^T dO
                    gemm_acc(lk, lq, d, View { data: ph, rs: 1, cs: lk }, go, &mut gv[ko..], e, 1);
                    // dP = dO V^T
                    ds.iter_mut().for_each(|x| *x = 0.0);
                    gemm_acc(lq, d, lk, go, View { data: &vd[ko..], rs: 1, cs: e }, &mut ds, lk, 1);
                    for (dr, pr) in ds.chunks_exact_mut(lk).zip(ph.chunks_exact(lk)) {
                        let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                        dr.iter_mut().zip(pr).for_each(|(x, &pv)| *x = pv * (*x - dot));
                    }
                    if let Some(gb) = gb.as_mut() {
                        let o = bias_at(bi, h);
                        gb[o..o + per_head].iter_mut().zip(&ds).for_each(|(a, b)| *a += b);
                    }
                    ds.iter_mut().for_each(|x| *x *= scale);
                    // dQ = dS K, dK = dS^T Q
                    gemm_acc(lq, lk, d, View { data: &ds, rs: lk, cs: 1 }, View { data: &kd[ko..], rs: e, cs: 1 }, &mut gq[qo..], e, 1);
                    gemm_acc(lk, lq, d, View { data: &ds, rs: 1, cs: lk }, View { data: &qd[qo..], rs: e, cs: 1 }, &mut gk[ko..], e, 1);
                }
            }
            let mut grads = vec![
                tq.requires_grad().then_some(gq),
                tk.requires_grad().then_some(gk),
                tv.requires_grad().then_some(gv),
            ];
            if has_bias {
                grads.push(gb);
            }
            grads
        })
    })?;
    Ok(Attention { output, weights })
}

/// `multi_head_attention` output only. Without a tape to record, the
/// weights are never stored and each row block reuses one scratch tile.
pub fn multi_head_attention_output(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    bias: Option<&Tensor>,
) -> Result<Tensor> {
    let tracked = super::grad_enabled()
        && (q.requires_grad() || k.requires_grad() || v.requires_grad() || bias.is_some_and(|t| t.requires_grad()));
    if tracked {
        return Ok(multi_head_attention(q, k, v, heads, bias)?.output);
    }
    let m = Mha::new(q, k, v, heads, bias)?;
    let mut out = vec![0.0; m.b * m.lq * m.e];
    m.run(&mut out, None)?;
    Tensor::new(&[m.b, m.lq, m.e], out)
}

struct Mha<'a> {
    b: usize,
    lq: usize,
    lk: usize,
    e: usize,
    d: usize,
    heads: usize,
    per_head: usize,
    bias_shared: bool,
    scale: f64,
    qd: &'a [f64],
    kd: &'a [f64],
    vd: &'a [f64],
    bd: Option<&'a [f64]>,
}

impl<'a> Mha<'a> {
    fn new(q: &'a Tensor, k: &'a Tensor, v: &'a Tensor, heads: usize, bias: Option<&'a Tensor>) -> Result<Self> {
        let (qs, ks) = (q.shape(), k.shape());
        if qs.len() != 3 || ks.len() != 3 || v.shape() != ks || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(Error::shape("multi_head_attention", qs, ks));
        }
        let (b, lq, lk, e) = (qs[0], qs[1], ks[1], qs[2]);
        if heads == 0 || e % heads != 0 {
            return Err(Error::invalid(
                "multi_head_attention",
                format!("{heads} heads do not divide width {e}"),
            ));
        }
        let d = e / heads;
        let bias_shared = match bias {
            None => false,
            Some(t) if t.shape() == [heads, lq, lk] => true,
            Some(t) if t.shape() == [b, heads, lq, lk] => false,
            Some(t) => return Err(Error::shape("multi_head_attention", t.shape(), &[b, heads, lq, lk])),
        };
        Ok(Mha {
            b,
            lq,
            lk,
            e,
            d,
            heads,
            per_head: lq * lk,
            bias_shared,
            scale: 1.0 / (d as f64).sqrt(),
            qd: q.data(),
            kd: k.data(),
            vd: v.data(),
            bd: bias.map(|t| t.data()),
        })
    }

    /// Accumulates the attention output into `out`, storing the `[B, H, Lq, Lk]`
    /// weights in `p` if given.
    fn run(&self, out: &mut [f64], mut p: Option<&mut [f64]>) -> Result<()> {
        let Mha { b, lq, lk, e, d, heads, per_head, scale, qd, kd, vd, .. } = *self;
        let mut scratch = Vec::new();
        for bi in 0..b {
            for h in 0..heads {
                let qo = bi * lq * e + h * d;
                let ko = bi * lk * e + h * d;
                let bo = if self.bias_shared { h * per_head } else { (bi * heads + h) * per_head };
                let brow = self.bd.map(|bd| &bd[bo..bo + per_head]);
                let mut slab = p.as_deref_mut().map(|p| &mut p[(bi * heads + h) * per_head..][..per_head]);
                // row blocks keep the score tile in cache between the two products
                for r0 in (0..lq).step_by(ROW_BLOCK) {
                    let rows = ROW_BLOCK.min(lq - r0);
                    let tile: &mut [f64] = match slab.as_deref_mut() {
                        Some(s) => &mut s[r0 * lk..(r0 + rows) * lk],
                        None => {
                            scratch.clear();
                            scratch.resize(rows * lk, 0.0);
                            &mut scratch
                        }
                    };
                    gemm_acc(
                        rows,
                        d,
                        lk,
                        View { data: &qd[qo + r0 * e..], rs: e, cs: 1 },
                        View { data: &kd[ko..], rs: 1, cs: e },
                        tile,
                        lk,
                        1,
                    );
                    for (r, row) in tile.chunks_exact_mut(lk).enumerate() {
                        match brow {
                            Some(br) => row
                                .iter_mut()
                                .zip(&br[(r0 + r) * lk..(r0 + r + 1) * lk])
                                .for_each(|(x, &bv)| *x = *x * scale + bv),
                            None => row.iter_mut().for_each(|x| *x *= scale),
                        }
                        softmax_row(row)?;
                    }
                    gemm_acc(
                        rows,
                        lk,
                        d,
                        View { data: tile, rs: lk, cs: 1 },
                        View { data: &vd[ko..], rs: e, cs: 1 },
                        &mut out[qo + r0 * e..],
                        e,
                        1,
                    );
                }
            }
        }
        Ok(())
    }
}

/// In-place max-subtracted softmax of one row.
fn softmax_row(row: &mut [f64]) -> Result<()> {
    if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite { op: "multi_head_attention" });
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Degenerate {
            op: "multi_head_attention",
            msg: "every entry of a slice is -inf".into(),
        });
    }
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    let inv = 1.0 / z;
    row.iter_mut().for_each(|x| *x *= inv);
    Ok(())
}

/// `[B, L, H * d] -> [B, H, L, d]`
pub fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || s[2] % heads != 0 {
        return Err(Error::invalid(
            "split_heads",
            format!("shape {s:?} cannot be split into {heads} heads"),
        ));
    }
    x.reshape(&[s[0], s[1], heads, s[2] / heads])?.permute(&[0, 2, 1, 3])
}

/// `[B, H, L, d] -> [B, L, H * d]`
pub fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::invalid("merge_heads", format!("expected 4 dims, got {s:?}")));
    }
    x.permute(&[0, 2, 1, 3])?.reshape(&[s[0], s[2], s[1] * s[3]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn rows_sum_to_one() {
        let mut rng = Rng::new(5);
        let mut rand = |s: &[usize]| {
            let n: usize = s.iter().product();
            Tensor::new(s, (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect()).unwrap()
        };
        let (q, k, v) = (rand(&[2, 3, 5, 4]), rand(&[2, 3, 7, 4]), rand(&[2, 3, 7, 6]));
        let att = scaled_dot_product_attention(&q, &k, &v, None).unwrap();
        assert_eq!(att.output.shape(), &[2, 3, 5, 6]);
        for row in att.weights.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn output_only_matches_across_row_blocks() {
        let mut rng = Rng::new(13);
        let mut rand = |s: &[usize]| {
            let n: usize = s.iter().product();
            Tensor::new(s, (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect()).unwrap()
        };
        let lq = ROW_BLOCK * 2 + 5;
        let (q, k, v, bias) = (rand(&[2, lq, 4]), rand(&[2, 9, 4]), rand(&[2, 9, 4]), rand(&[2, lq, 9]));
        let full = multi_head_attention(&q, &k, &v, 2, Some(&bias)).unwrap().output;
        let _g = crate::tensor::no_grad();
        let only = multi_head_attention_output(&q, &k, &v, 2, Some(&bias)).unwrap();
        assert_eq!(full.data(), only.data());
    }

    #[test]
    fn fused_matches_composed() {
        let mut rng = Rng::new(9);
        let mut rand = |s: &[usize]| {
            let n: usize = s.iter().product();
            Tensor::new(s, (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect()).unwrap()
        };
        let (q, k, v) = (rand(&[2, 5, 6]), rand(&[2, 7, 6]), rand(&[2, 7, 6]));
        for bias in [None, Some(rand(&[3, 5, 7])), Some(rand(&[2, 3, 5, 7]))] {
            let fused = multi_head_attention(&q, &k, &v, 3, bias.as_ref()).unwrap();
            let composed = scaled_dot_product_attention(
                &split_heads(&q, 3).unwrap(),
                &split_heads(&k, 3).unwrap(),
                &split_heads(&v, 3).unwrap(),
                bias.as_ref(),
            )
            .unwrap();
            let out = merge_heads(&composed.output).unwrap();
            for (a, b) in fused.output.data().iter().zip(out.data()) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in fused.weights.data().iter().zip(composed.weights.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(multi_head_attention(&q, &k, &v, 4, None).is_err());
    }

    #[test]
    fn heads_roundtrip() {
        let x = Tensor::new(&[2, 3, 8], (0..48).map(f64::from).collect()).unwrap();
        let h = split_heads(&x, 4).unwrap();
        assert_eq!(h.shape(), &[2, 4, 3, 2]);
        assert_eq!(merge_heads(&h).unwrap().data(), x.data());
    }
}
