use super::{resolve_axis, split_at_axis, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Variance floor inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Tensor {
    /// Max-subtracted softmax along `axis`.
    ///
    /// `-inf` entries receive zero weight; a slice that is entirely `-inf` is a
    /// degenerate input.
    pub fn softmax(&self, axis: isize) -> Result<Tensor> {
        let ax = resolve_axis("softmax", axis, self.ndim())?;
        let (outer, len, inner) = split_at_axis(self.shape(), ax);
        let x = self.data();
        if x.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let mut y = vec![0.0; x.len()];
        let degenerate = || Error::Degenerate {
            op: "softmax",
            msg: "every entry of a slice is -inf".into(),
        };
        if inner == 1 {
            for (xr, yr) in x.chunks_exact(len).zip(y.chunks_exact_mut(len)) {
                let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(degenerate());
                }
                let mut z = 0.0;
                for (yv, &xv) in yr.iter_mut().zip(xr) {
                    *yv = (xv - max).exp();
                    z += *yv;
                }
                let inv = 1.0 / z;
                yr.iter_mut().for_each(|v| *v *= inv);
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let max = (0..len).map(|l| x[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                    if max == f64::NEG_INFINITY {
                        return Err(degenerate());
                    }
                    let mut z = 0.0;
                    for l in 0..len {
                        let e = (x[at(l)] - max).exp();
                        y[at(l)] = e;
                        z += e;
                    }
                    let inv = 1.0 / z;
                    for l in 0..len {
                        y[at(l)] *= inv;
                    }
                }
            }
        }
        let out = y.clone();
        Tensor::from_op("softmax", self.shape().to_vec(), y, &[self], move || {
            Box::new(move |g| {
                let mut gx = vec![0.0; out.len()];
                if inner == 1 {
                    for ((gr, yr), xr) in g.chunks_exact(len).zip(out.chunks_exact(len)).zip(gx.chunks_exact_mut(len)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                        for ((xv, &gv), &yv) in xr.iter_mut().zip(gr).zip(yr) {
                            *xv = yv * (gv - dot);
                        }
                    }
                    return vec![Some(gx)];
                }
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| g[at(l)] * out[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = out[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                vec![Some(gx)]
            })
        })
    }

    /// Layer normalization along `axis` with affine `gain`/`bias` of that extent.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, axis: isize) -> Result<Tensor> {
        let ax = resolve_axis("layer_norm", axis, self.ndim())?;
        let (outer, len, inner) = split_at_axis(self.shape(), ax);
        if gain.shape() != [len] || bias.shape() != [len] {
            return Err(Error::shape("layer_norm", gain.shape(), &[len]));
        }
        let x = self.data();
        let (gw, bw) = (gain.data(), bias.data());
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; outer * inner];
        let inv_len = 1.0 / len as f64;
        if inner == 1 {
            let rows = x.chunks_exact(len).zip(y.chunks_exact_mut(len)).zip(xhat.chunks_exact_mut(len));
            for (((xr, yr), hr), rs_out) in rows.zip(inv_std.iter_mut()) {
                let mean = xr.iter().sum::<f64>() * inv_len;
                let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * inv_len;
                let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                *rs_out = rs;
                for l in 0..len {
                    let h = (xr[l] - mean) * rs;
                    hr[l] = h;
                    yr[l] = h * gw[l] + bw[l];
                }
            }
        } else {
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let mean = (0..len).map(|l| x[at(l)]).sum::<f64>() * inv_len;
                    let var = (0..len).map(|l| (x[at(l)] - mean).powi(2)).sum::<f64>() * inv_len;
                    let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    inv_std[o * inner + i] = rs;
                    for l in 0..len {
                        let h = (x[at(l)] - mean) * rs;
                        xhat[at(l)] = h;
                        y[at(l)] = h * gw[l] + bw[l];
                    }
                }
            }
        }
        let (tg, tb) = (gain.clone(), bias.clone());
        let need_x = self.requires_grad();
        Tensor::from_op("layer_norm", self.shape().to_vec(), y, &[self, gain, bias], move || {
            Box::new(move |g| {
                let gw = tg.data();
                let mut gx = need_x.then(|| vec![0.0; xhat.len()]);
                let mut ggain = vec![0.0; len];
                let mut gbias = vec![0.0; len];
                let mut dxhat = vec![0.0; len];
                if inner == 1 {
                    for (r, (gr, hr)) in g.chunks_exact(len).zip(xhat.chunks_exact(len)).enumerate() {
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for l in 0..len {
                            ggain[l] += gr[l] * hr[l];
                            gbias[l] += gr[l];
                            dxhat[l] = gr[l] * gw[l];
                            s1 += dxhat[l];
                            s2 += dxhat[l] * hr[l];
                        }
                        if let Some(gx) = gx.as_mut() {
                            let rs = inv_std[r];
                            let gxr = &mut gx[r * len..(r + 1) * len];
                            for l in 0..len {
                                gxr[l] = rs * (dxhat[l] - inv_len * (s1 + hr[l] * s2));
                            }
                        }
                    }
                    return vec![
                        gx,
                        tg.requires_grad().then_some(ggain),
                        tb.requires_grad().then_some(gbias),
                    ];
                }
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let (mut s1, mut s2) = (0.0, 0.0);
                        for l in 0..len {
                            let go = g[at(l)];
                            ggain[l] += go * xhat[at(l)];
                            gbias[l] += go;
                            dxhat[l] = go * gw[l];
                            s1 += dxhat[l];
                            s2 += dxhat[l] * xhat[at(l)];
                        }
                        if let Some(gx) = gx.as_mut() {
                            let rs = inv_std[o * inner + i];
                            for l in 0..len {
                                gx[at(l)] = rs * (dxhat[l] - inv_len * (s1 + xhat[at(l)] * s2));
                            }
                        }
                    }
                }
                vec![
                    gx,
                    tg.requires_grad().then_some(ggain),
                    tb.requires_grad().then_some(gbias),
                ]
            })
        })
    }

    /// Mean cross-entropy of `[batch, classes]` logits against integer labels,
    /// with optional label smoothing `eps` (target mass `1 - eps` on the label
    /// plus `eps / classes` everywhere). Uses log-sum-exp.
    pub fn cross_entropy(&self, labels: &[usize], smoothing: f64) -> Result<Tensor> {
        if self.ndim() != 2 || self.shape()[0] != labels.len() {
            return Err(Error::shape("cross_entropy", self.shape(), &[labels.len()]));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::invalid("cross_entropy", format!("smoothing {smoothing} not in [0,1)")));
        }
        let (b, c) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid("cross_entropy", format!("label {bad} >= {c} classes")));
        }
        let x = self.data();
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let mean_logp = row.iter().map(|v| v - lse).sum::<f64>() / c as f64;
            loss -= (1.0 - smoothing) * (row[label] - lse) + smoothing * mean_logp;
            for (p, v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let labels = labels.to_vec();
        Tensor::from_op("cross_entropy", vec![1], vec![loss / b as f64], &[self], move || {
            Box::new(move |g| {
                let scale = g[0] / b as f64;
                let mut gx = probs.clone();
                for (r, &label) in labels.iter().enumerate() {
                    for (j, v) in gx[r * c..(r + 1) * c].iter_mut().enumerate() {
                        let target = smoothing / c as f64 + if j == label { 1.0 - smoothing } else { 0.0 };
                        *v = (*v - target) * scale;
                    }
                }
                vec![Some(gx)]
            })
        })
    }

    /// Inverted dropout: zeroes each entry with probability `p` and rescales the
    /// survivors by `1 / (1 - p)`. Identity when `train` is false or `p == 0`.
    pub fn dropout(&self, p: f64, train: bool, rng: &mut Rng) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("p = {p} not in [0,1)")));
        }
        if !train || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.numel())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
            .collect();
        self.mul(&Tensor::new(self.shape(), mask)?)
    }

    /// Rows of a `[vocab, dim]` table.
    pub fn embedding_lookup(&self, ids: &[usize]) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::invalid("embedding_lookup", "table must be 2-d"));
        }
        self.index_select(0, ids)
    }

    /// Cross-correlation over the second-to-last axis: `[..., T, C]` with a
    /// `[w, C, C']` kernel gives `[..., (T - w) / stride + 1, C']`.
    pub fn strided_conv1d(&self, kernel: &Tensor, stride: usize) -> Result<Tensor> {
        let (xs, ks) = (self.shape(), kernel.shape());
        if xs.len() < 2 || ks.len() != 3 || ks[1] != xs[xs.len() - 1] {
            return Err(Error::shape("strided_conv1d", xs, ks));
        }
        if stride == 0 {
            return Err(Error::invalid("strided_conv1d", "stride must be positive"));
        }
        let (t, c) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let (w, c_out) = (ks[0], ks[2]);
        if w > t {
            return Err(Error::invalid(
                "strided_conv1d",
                format!("kernel width {w} exceeds input length {t}"),
            ));
        }
        let t_out = (t - w) / stride + 1;
        let lead = &xs[..xs.len() - 2];
        let windows = if w == stride {
            // non-overlapping windows are a reshape of the (trimmed) input
            let used = t_out * w;
            if used == t {
                self.clone()
            } else {
                self.slice(-2, 0, used)?
            }
        } else {
            let idx: Vec<usize> = (0..t_out).flat_map(|o| (0..w).map(move |u| o * stride + u)).collect();
            self.index_select(-2, &idx)?
        };
        let mut flat_shape = lead.to_vec();
        flat_shape.extend([t_out, w * c]);
        let kflat = kernel.reshape(&[w * c, c_out])?;
        windows.reshape(&flat_shape)?.matmul(&kflat)
    }

    /// Depthwise convolution over the second-to-last axis with zero "same"
    /// padding: `[..., T, C]` with `[w, C]` weights (odd `w`) keeps the shape.
    pub fn depthwise_conv1d(&self, weight: &Tensor) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() < 2 || ws.len() != 2 || ws[1] != xs[xs.len() - 1] || ws[0] % 2 == 0 {
            return Err(Error::shape("depthwise_conv1d", xs, ws));
        }
        let (t, c) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let w = ws[0];
        let half = w / 2;
        let padded = if half == 0 {
            self.clone()
        } else {
            let mut pad_shape = xs.to_vec();
            let n = pad_shape.len();
            pad_shape[n - 2] = half;
            let zeros = Tensor::zeros(&pad_shape);
            Tensor::concat(&[zeros.clone(), self.clone(), zeros], -2)?
        };
        let mut acc: Option<Tensor> = None;
        for u in 0..w {
            let tap = weight.slice(0, u, u + 1)?.reshape(&[c])?;
            let term = padded.slice(-2, u, u + t)?.mul(&tap)?;
            acc = Some(match acc {
                None => term,
                Some(a) => a.add(&term)?,
            });
        }
        Ok(acc.expect("w >= 1"))
    }
}
