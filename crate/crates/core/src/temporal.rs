//! Temporal twin attention over each joint's sequence: windowed local
//! attention followed by attention to strided-convolution summaries, plus the
//! per-stage positional convolution and the inter-stage downsampling.
//!
//! Sequences are `[B*N, T, D]`.

use crate::error::{Error, LayerContext, Result};
use crate::layers::{ForwardCtx, Sublayer};
use crate::params::{Init, ModelParams, ParamSpec};
use crate::tensor::Tensor;

/// Number of local windows per stage.
pub const WINDOWS: usize = 6;

/// Width of the positional depthwise convolution.
pub const PEG_KERNEL: usize = 3;

#[derive(Clone, Debug)]
pub struct TemporalBlock {
    pub index: usize,
    pub lta: Sublayer,
    pub gsta: Sublayer,
    /// `[s, D, D]` summary convolution. `None` for the global variant.
    pub sr_kernel: Option<Tensor>,
    pub sub_sample: usize,
    pub windows: usize,
}

/// `[w, C, C']` kernel whose every tap is `I / w` (on the leading `min(C, C')`
/// channels): the strided convolution starts as a window average.
pub fn averaging_kernel(width: usize, c_in: usize, c_out: usize) -> Vec<f64> {
    let mut k = vec![0.0; width * c_in * c_out];
    for u in 0..width {
        for c in 0..c_in.min(c_out) {
            k[(u * c_in + c) * c_out + c] = 1.0 / width as f64;
        }
    }
    k
}

impl TemporalBlock {
    pub fn prefix(index: usize) -> String {
        format!("block{index}.temporal")
    }

    /// `twin = false` gives two global attention sublayers and no summary kernel.
    pub fn specs(index: usize, dim: usize, heads: usize, mlp_ratio: usize, sub_sample: usize, twin: bool) -> Vec<ParamSpec> {
        let prefix = TemporalBlock::prefix(index);
        let mut v = Sublayer::specs(&format!("{prefix}.lta"), dim, heads, mlp_ratio);
        v.extend(Sublayer::specs(&format!("{prefix}.gsta"), dim, heads, mlp_ratio));
        if twin {
            v.push(ParamSpec::new(
                format!("{prefix}.gsta.sr.kernel"),
                &[sub_sample, dim, dim],
                Init::Values(averaging_kernel(sub_sample, dim, dim)),
            ));
        }
        v
    }

    pub fn load(p: &ModelParams, index: usize, heads: usize, sub_sample: usize, twin: bool) -> Result<Self> {
        let prefix = TemporalBlock::prefix(index);
        Ok(TemporalBlock {
            index,
            lta: Sublayer::load(p, &format!("{prefix}.lta"), heads)?,
            gsta: Sublayer::load(p, &format!("{prefix}.gsta"), heads)?,
            sr_kernel: if twin { Some(p.get(&format!("{prefix}.gsta.sr.kernel"))?.clone()) } else { None },
            sub_sample,
            windows: WINDOWS,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let run = || {
            let t = x.shape()[1];
            match &self.sr_kernel {
                Some(k) => {
                    let y = lta_forward(x, &self.lta, t / self.windows, ctx)?;
                    gsta_forward(&y, &self.gsta, Some(k), self.sub_sample, ctx)
                }
                None => {
                    let y = lta_forward(x, &self.lta, t, ctx)?;
                    gsta_forward(&y, &self.gsta, None, 1, ctx)
                }
            }
        };
        run().in_layer(|| TemporalBlock::prefix(self.index))
    }
}

/// Full attention inside each of the `T / w` disjoint windows of length `w`.
pub fn lta_forward(x: &Tensor, sub: &Sublayer, w: usize, ctx: &ForwardCtx) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::invalid("lta_forward", format!("expected [B, T, D], got {s:?}")));
    }
    let (b, t, d) = (s[0], s[1], s[2]);
    if w == 0 || t % w != 0 {
        return Err(Error::invalid("lta_forward", format!("window {w} does not divide length {t}")));
    }
    // windows are contiguous runs of tokens, so they fold into the batch axis
    let xw = x.reshape(&[b * (t / w), w, d])?;
    let (y, _) = sub.forward(&xw, |h| Ok(h.clone()), None, ctx)?;
    y.reshape(&[b, t, d])
}

/// Every token attends to `T / s` summary tokens made by a width-`s`, stride-`s`
/// convolution of the normalized sequence. Without a kernel the keys are the
/// normalized tokens themselves (plain global attention; `s` must be 1).
pub fn gsta_forward(
    x: &Tensor,
    sub: &Sublayer,
    kernel: Option<&Tensor>,
    sub_sample: usize,
    ctx: &ForwardCtx,
) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::invalid("gsta_forward", format!("expected [B, T, D], got {s:?}")));
    }
    if sub_sample == 0 || s[1] % sub_sample != 0 {
        return Err(Error::invalid(
            "gsta_forward",
            format!("sub-sample size {sub_sample} does not divide length {}", s[1]),
        ));
    }
    if kernel.is_none() && sub_sample != 1 {
        return Err(Error::invalid("gsta_forward", "sub-sampling needs a kernel"));
    }
    let (y, _) = sub.forward(
        x,
        |h| match kernel {
            Some(k) => h.strided_conv1d(k, sub_sample),
            None => Ok(h.clone()),
        },
        None,
        ctx,
    )?;
    Ok(y)
}

/// `x + depthwise_conv(x)`, zero-padded width-3 kernel `[3, D]`.
pub fn peg_apply(x: &Tensor, weight: &Tensor) -> Result<Tensor> {
    x.add(&x.depthwise_conv1d(weight)?)
}

pub fn peg_spec(stage: usize, dim: usize) -> ParamSpec {
    ParamSpec::zeros(format!("stage{stage}.peg.weight"), &[PEG_KERNEL, dim])
}

/// Halves the temporal length with a width-2, stride-2 convolution
/// (`kernel: [2, D, D']`).
pub fn stage_downsample(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let t = x.shape().get(x.ndim().wrapping_sub(2)).copied().unwrap_or(0);
    if t % 2 != 0 {
        return Err(Error::invalid("stage_downsample", format!("odd temporal length {t}")));
    }
    x.strided_conv1d(kernel, 2)
}

pub fn downsample_spec(stage: usize, c_in: usize, c_out: usize) -> ParamSpec {
    ParamSpec::new(
        format!("stage{stage}.downsample.kernel"),
        &[2, c_in, c_out],
        Init::Values(averaging_kernel(2, c_in, c_out)),
    )
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Stage length after right-padding: the next multiple of
/// `lcm(WINDOWS, sub_sample, 2 if a downsample follows)`.
pub fn padded_length(t: usize, sub_sample: usize, downsample_follows: bool) -> usize {
    let mut m = lcm(WINDOWS, sub_sample.max(1));
    if downsample_follows {
        m = lcm(m, 2);
    }
    t.div_ceil(m) * m
}
