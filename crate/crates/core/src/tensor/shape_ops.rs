use super::{numel, resolve_axis, split_at_axis, Tensor};
use crate::error::{Error, Result};

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Materializes `x` permuted by `perm` (output axis `i` is input axis `perm[i]`).
fn permute_data(x: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let n = shape.len();
    let in_strides = row_major_strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let last = out_shape[n - 1];
    let last_stride = src_strides[n - 1];
    let mut idx = vec![0usize; n];
    let mut base = 0usize;
    let rows = x.len() / last;
    for _ in 0..rows {
        if last_stride == 1 {
            out.extend_from_slice(&x[base..base + last]);
        } else {
            out.extend((0..last).map(|j| x[base + j * last_stride]));
        }
        // advance the odometer over all but the innermost axis
        for d in (0..n - 1).rev() {
            idx[d] += 1;
            base += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}

impl Tensor {
    /// Same data, new shape. One extent may be `usize::MAX` to infer it.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let mut shape = shape.to_vec();
        if let Some(pos) = shape.iter().position(|&d| d == usize::MAX) {
            let known: usize = shape.iter().filter(|&&d| d != usize::MAX).product();
            if known == 0 || self.numel() % known != 0 {
                return Err(Error::shape("reshape", self.shape(), &shape));
            }
            shape[pos] = self.numel() / known;
        }
        if numel(&shape) != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", self.shape(), &shape));
        }
        Ok(Tensor::view_op(self, shape, || Box::new(|g| vec![Some(g.to_vec())])))
    }

    /// Materialized axis permutation.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let n = self.ndim();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid(
                "permute",
                format!("{perm:?} is not a permutation of {n} axes"),
            ));
        }
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return self.reshape(&shape);
        }
        let data = permute_data(self.data(), self.shape(), perm);
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let out_shape = shape.clone();
        Tensor::from_op("permute", shape, data, &[self], move || {
            Box::new(move |g| vec![Some(permute_data(g, &out_shape, &inverse))])
        })
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let n = self.ndim();
        if n < 2 {
            return Err(Error::invalid("transpose", "needs at least 2 dims"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(&perm)
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&self, axis: isize, start: usize, end: usize) -> Result<Tensor> {
        let ax = resolve_axis("slice", axis, self.ndim())?;
        let (outer, len, inner) = split_at_axis(self.shape(), ax);
        if start >= end || end > len {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{end} invalid for extent {len}"),
            ));
        }
        let w = end - start;
        let x = self.data();
        let mut data = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            data.extend_from_slice(&x[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[ax] = w;
        Tensor::from_op("slice", shape, data, &[self], move || {
            Box::new(move |g| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    gx[(o * len + start) * inner..(o * len + end) * inner]
                        .copy_from_slice(&g[o * w * inner..(o + 1) * w * inner]);
                }
                vec![Some(gx)]
            })
        })
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: isize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "no tensors"))?;
        let ax = resolve_axis("concat", axis, first.ndim())?;
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .all(|(i, (a, b))| i == ax || a == b);
            if !ok {
                return Err(Error::shape("concat", first.shape(), p.shape()));
            }
        }
        let (outer, _, inner) = split_at_axis(first.shape(), ax);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[ax]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[ax] = total;
        let refs: Vec<&Tensor> = parts.iter().collect();
        let wants: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
        Tensor::from_op("concat", shape, data, &refs, move || {
            Box::new(move |g| {
                let mut grads: Vec<Option<Vec<f64>>> = wants
                    .iter()
                    .zip(&lens)
                    .map(|(&w, &l)| w.then(|| Vec::with_capacity(outer * l * inner)))
                    .collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (gp, &l) in grads.iter_mut().zip(&lens) {
                        if let Some(gp) = gp {
                            gp.extend_from_slice(&g[off..off + l * inner]);
                        }
                        off += l * inner;
                    }
                }
                grads
            })
        })
    }

    /// Gathers entries `indices` along `axis` (repeats allowed); the backward
    /// rule scatter-adds.
    pub fn index_select(&self, axis: isize, indices: &[usize]) -> Result<Tensor> {
        let ax = resolve_axis("index_select", axis, self.ndim())?;
        let (outer, len, inner) = split_at_axis(self.shape(), ax);
        if indices.is_empty() {
            return Err(Error::invalid("index_select", "empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(Error::invalid(
                "index_select",
                format!("index {bad} out of range for extent {len}"),
            ));
        }
        let x = self.data();
        let k = indices.len();
        let mut data = Vec::with_capacity(outer * k * inner);
        for o in 0..outer {
            for &i in indices {
                data.extend_from_slice(&x[(o * len + i) * inner..(o * len + i + 1) * inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[ax] = k;
        let indices = indices.to_vec();
        Tensor::from_op("index_select", shape, data, &[self], move || {
            Box::new(move |g| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for (j, &i) in indices.iter().enumerate() {
                        let src = &g[(o * k + j) * inner..(o * k + j + 1) * inner];
                        gx[(o * len + i) * inner..(o * len + i + 1) * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                }
                vec![Some(gx)]
            })
        })
    }

    /// Right-pads `axis` to `target` entries by repeating the last entry.
    pub fn pad_repeat_last(&self, axis: isize, target: usize) -> Result<Tensor> {
        let ax = resolve_axis("pad_repeat_last", axis, self.ndim())?;
        let len = self.shape()[ax];
        if target == len {
            return Ok(self.clone());
        }
        if target < len {
            return Err(Error::invalid(
                "pad_repeat_last",
                format!("target {target} shorter than extent {len}"),
            ));
        }
        let idx: Vec<usize> = (0..target).map(|i| i.min(len - 1)).collect();
        self.index_select(axis, &idx)
    }
}
