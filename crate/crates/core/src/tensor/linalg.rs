use super::elementwise::broadcast_shape;
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Below this many multiply-adds the packing overhead of the blocked kernel
/// outweighs its speed.
const BLOCKED_MIN_FLOPS: usize = 4096;

/// Strided matrix operand: element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(super) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

/// `c += a * b` for an `m x k` by `k x n` product with arbitrary strides.
pub(super) fn gemm_acc(m: usize, k: usize, n: usize, a: View, b: View, c: &mut [f64], rsc: usize, csc: usize) {
    debug_assert!(m == 0 || k == 0 || (m - 1) * a.rs + (k - 1) * a.cs < a.data.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * b.rs + (n - 1) * b.cs < b.data.len());
    debug_assert!(m == 0 || n == 0 || (m - 1) * rsc + (n - 1) * csc < c.len());
    if m * k * n >= BLOCKED_MIN_FLOPS {
        // SAFETY: the debug assertions above document the bounds; every caller
        // derives strides from the row-major shapes of the slices it passes.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                1.0,
                c.as_mut_ptr(),
                rsc as isize,
                csc as isize,
            );
        }
    } else {
        gemm_naive(m, k, n, a.data, a.rs, a.cs, b.data, b.rs, b.cs, c, rsc, csc);
    }
}

/// Straightforward loop kernel used for small products.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_naive(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if csb == 1 && csc == 1 {
        for i in 0..m {
            let crow = &mut c[i * rsc..i * rsc + n];
            for p in 0..k {
                let av = a[i * rsa + p * csa];
                let brow = &b[p * rsb..p * rsb + n];
                crow.iter_mut().zip(brow).for_each(|(c, &b)| *c += av * b);
            }
        }
    } else {
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a[i * rsa + p * csa] * b[p * rsb + j * csb];
                }
                c[i * rsc + j * csc] += acc;
            }
        }
    }
}

/// Matrix-level strides for a batch shape inside a broadcast batch shape.
fn batch_strides(batch: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; out.len()];
    let off = out.len() - batch.len();
    let mut s = 1;
    for i in (0..batch.len()).rev() {
        if batch[i] != 1 {
            strides[i + off] = s;
        }
        s *= batch[i];
    }
    strides
}

/// (out_index, a_index, b_index) for every broadcast batch element.
fn batch_pairs(out: &[usize], sa: &[usize], sb: &[usize]) -> Vec<(usize, usize, usize)> {
    let total = numel(out);
    let mut pairs = Vec::with_capacity(total);
    let mut idx = vec![0usize; out.len()];
    for o in 0..total {
        let ia: usize = idx.iter().zip(sa).map(|(i, s)| i * s).sum();
        let ib: usize = idx.iter().zip(sb).map(|(i, s)| i * s).sum();
        pairs.push((o, ia, ib));
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    pairs
}

struct Plan {
    m: usize,
    k: usize,
    n: usize,
    /// `b` stores its matrices as `n x k`.
    b_transposed: bool,
    pairs: Vec<(usize, usize, usize)>,
    a_batches: usize,
    b_batches: usize,
}

impl Plan {
    fn b_view<'a>(&self, b: &'a [f64]) -> View<'a> {
        if self.b_transposed {
            View { data: b, rs: 1, cs: self.k }
        } else {
            View { data: b, rs: self.n, cs: 1 }
        }
    }
}

impl Tensor {
    /// Batched matrix product `[..., m, k] x [..., k, n] -> [..., m, n]`;
    /// batch axes broadcast.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_impl(other, false, "matmul")
    }

    /// Batched `a x b^T` for `[..., m, k]` and `[..., n, k]`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        self.matmul_impl(other, true, "matmul_nt")
    }

    /// `x W + b` over the last axis in a single pass: `x: [..., k]`,
    /// `w: [k, n]`, `b: [n]`.
    pub fn linear(&self, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        let (sx, sw) = (self.shape(), w.shape());
        if sw.len() != 2 || sx.last() != Some(&sw[0]) {
            return Err(Error::shape("linear", sx, sw));
        }
        let (k, n) = (sw[0], sw[1]);
        if let Some(b) = b {
            if b.shape() != [n] {
                return Err(Error::shape("linear", sw, b.shape()));
            }
        }
        let m = self.numel() / k;
        let mut out = match b {
            Some(b) => b.data().repeat(m),
            None => vec![0.0; m * n],
        };
        gemm_acc(
            m,
            k,
            n,
            View { data: self.data(), rs: k, cs: 1 },
            View { data: w.data(), rs: n, cs: 1 },
            &mut out,
            n,
            1,
        );
        let mut shape = sx.to_vec();
        *shape.last_mut().expect("non-empty") = n;
        let mut parents = vec![self, w];
        parents.extend(b);
        let (tx, tw, need_b) = (self.clone(), w.clone(), b.is_some_and(Tensor::requires_grad));
        let has_b = b.is_some();
        Tensor::from_op("linear", shape, out, &parents, move || {
            Box::new(move |g| {
                let gx = tx.requires_grad().then(|| {
                    let mut gx = vec![0.0; m * k];
                    // dX = dY W^T
                    gemm_acc(
                        m,
                        n,
                        k,
                        View { data: g, rs: n, cs: 1 },
                        View { data: tw.data(), rs: 1, cs: n },
                        &mut gx,
                        k,
                        1,
                    );
                    gx
                });
                let gw = tw.requires_grad().then(|| {
                    let mut gw = vec![0.0; k * n];
                    // dW = X^T dY
                    gemm_acc(
                        k,
                        m,
                        n,
                        View { data: tx.data(), rs: 1, cs: k },
                        View { data: g, rs: n, cs: 1 },
                        &mut gw,
                        n,
                        1,
                    );
                    gw
                });
                let mut grads = vec![gx, gw];
                if has_b {
                    grads.push(need_b.then(|| {
                        let mut gb = vec![0.0; n];
                        for row in g.chunks_exact(n) {
                            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        gb
                    }));
                }
                grads
            })
        })
    }

    fn matmul_impl(&self, other: &Tensor, b_transposed: bool, op: &'static str) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape(op, sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = if b_transposed {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if k != kb {
            return Err(Error::shape(op, sa, sb));
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let out_batch = broadcast_shape(ba, bb).ok_or_else(|| Error::shape(op, sa, sb))?;
        let plan = if bb.is_empty() {
            // fold a's batch into rows: one large product
            Plan {
                m: numel(ba) * m,
                k,
                n,
                b_transposed,
                pairs: vec![(0, 0, 0)],
                a_batches: 1,
                b_batches: 1,
            }
        } else {
            Plan {
                m,
                k,
                n,
                b_transposed,
                pairs: batch_pairs(&out_batch, &batch_strides(ba, &out_batch), &batch_strides(bb, &out_batch)),
                a_batches: numel(ba),
                b_batches: numel(bb),
            }
        };
        let (pm, pn) = (plan.m, plan.n);
        let (a, b) = (self.data(), other.data());
        let mut out = vec![0.0; plan.pairs.len() * pm * pn];
        for &(o, ia, ib) in &plan.pairs {
            gemm_acc(
                pm,
                k,
                pn,
                View { data: &a[ia * pm * k..], rs: k, cs: 1 },
                plan.b_view(&b[ib * k * pn..]),
                &mut out[o * pm * pn..(o + 1) * pm * pn],
                pn,
                1,
            );
        }
        let mut shape = out_batch;
        shape.extend([m, n]);
        let (ta, tb) = (self.clone(), other.clone());
        Tensor::from_op(op, shape, out, &[self, other], move || {
            Box::new(move |g| {
                let (a, b) = (ta.data(), tb.data());
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let ga = ta.requires_grad().then(|| {
                    let mut ga = vec![0.0; plan.a_batches * m * k];
                    for &(o, ia, ib) in &plan.pairs {
                        // dA = dC * B'^T
                        let bv = plan.b_view(&b[ib * k * n..]);
                        gemm_acc(
                            m,
                            n,
                            k,
                            View { data: &g[o * m * n..], rs: n, cs: 1 },
                            View { data: bv.data, rs: bv.cs, cs: bv.rs },
                            &mut ga[ia * m * k..(ia + 1) * m * k],
                            k,
                            1,
                        );
                    }
                    ga
                });
                let gb = tb.requires_grad().then(|| {
                    let mut gb = vec![0.0; plan.b_batches * k * n];
                    let (rsc, csc) = if plan.b_transposed { (1, k) } else { (n, 1) };
                    for &(o, ia, ib) in &plan.pairs {
                        // dB' = A^T * dC, written through B's layout
                        gemm_acc(
                            k,
                            m,
                            n,
                            View { data: &a[ia * m * k..], rs: 1, cs: k },
                            View { data: &g[o * m * n..], rs: n, cs: 1 },
                            &mut gb[ib * k * n..(ib + 1) * k * n],
                            rsc,
                            csc,
                        );
                    }
                    gb
                });
                vec![ga, gb]
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        Tensor::new(shape, (0..numel(shape)).map(|_| rng.uniform_range(-2.0, 2.0)).collect()).unwrap()
    }

    /// Independent triple-loop oracle on row-major data.
    fn oracle(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn identity_product() {
        let x = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(Tensor::eye(2).matmul(&x).unwrap().data(), x.data());
    }

    #[test]
    fn row_times_column() {
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn random_4x5_by_5x3_matches_oracle() {
        let mut rng = Rng::new(11);
        let a = rand_tensor(&[4, 5], &mut rng);
        let b = rand_tensor(&[5, 3], &mut rng);
        let c = a.matmul(&b).unwrap();
        for (x, y) in c.data().iter().zip(oracle(a.data(), b.data(), 4, 5, 3)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn blocked_kernel_matches_oracle() {
        let mut rng = Rng::new(12);
        let a = rand_tensor(&[16, 16], &mut rng);
        let b = rand_tensor(&[16, 16], &mut rng);
        let c = a.matmul(&b).unwrap();
        for (x, y) in c.data().iter().zip(oracle(a.data(), b.data(), 16, 16, 16)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_broadcast_and_nt() {
        let mut rng = Rng::new(13);
        let a = rand_tensor(&[2, 3, 4, 5], &mut rng);
        let b = rand_tensor(&[3, 6, 5], &mut rng);
        let c = a.matmul_nt(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 4, 6]);
        let bt = b.transpose_last().unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let am = &a.data()[(i * 3 + j) * 20..(i * 3 + j + 1) * 20];
                let bm = &bt.data()[j * 30..(j + 1) * 30];
                let want = oracle(am, bm, 4, 5, 6);
                let got = &c.data()[(i * 3 + j) * 24..(i * 3 + j + 1) * 24];
                for (x, y) in got.iter().zip(want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_matches_matmul_plus_bias() {
        let mut rng = Rng::new(14);
        let x = rand_tensor(&[2, 7, 5], &mut rng);
        let w = rand_tensor(&[5, 3], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        let fused = x.linear(&w, Some(&b)).unwrap();
        let plain = x.matmul(&w).unwrap().add(&b).unwrap();
        assert_eq!(fused.shape(), &[2, 7, 3]);
        for (p, q) in fused.data().iter().zip(plain.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatch_reports_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }
}
