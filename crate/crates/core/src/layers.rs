//! Building blocks shared by the spatial and temporal blocks.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::params::{ModelParams, ParamSpec};
use crate::rng::Rng;
use crate::spatial::AttentionMap;
use crate::tensor::{merge_heads, multi_head_attention, multi_head_attention_output, scaled_dot_product_attention, split_heads, Tensor};

/// Per-forward state: train/eval mode, dropout randomness and the optional
/// attention-map recorder.
pub struct ForwardCtx {
    pub train: bool,
    pub attn_dropout: f64,
    pub mlp_dropout: f64,
    rng: RefCell<Rng>,
    trace: Option<RefCell<Vec<AttentionMap>>>,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            train: false,
            attn_dropout: 0.0,
            mlp_dropout: 0.0,
            rng: RefCell::new(Rng::new(0)),
            trace: None,
        }
    }

    pub fn train(rng: Rng, attn_dropout: f64, mlp_dropout: f64) -> Self {
        ForwardCtx {
            train: true,
            attn_dropout,
            mlp_dropout,
            rng: RefCell::new(rng),
            trace: None,
        }
    }

    /// Records the spatial attention maps of every block.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(RefCell::new(Vec::new()));
        self
    }

    pub fn take_trace(&self) -> Vec<AttentionMap> {
        self.trace.as_ref().map(|t| t.take()).unwrap_or_default()
    }

    pub(crate) fn tracing(&self) -> bool {
        self.trace.is_some()
    }

    pub(crate) fn record(&self, map: impl FnOnce() -> AttentionMap) {
        if let Some(t) = &self.trace {
            t.borrow_mut().push(map());
        }
    }

    pub(crate) fn dropout(&self, x: &Tensor, p: f64) -> Result<Tensor> {
        if !self.train || p == 0.0 {
            return Ok(x.clone());
        }
        x.dropout(p, true, &mut self.rng.borrow_mut())
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn specs(prefix: &str, dim: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::ones(format!("{prefix}.gain"), &[dim]),
            ParamSpec::zeros(format!("{prefix}.bias"), &[dim]),
        ]
    }

    pub fn load(p: &ModelParams, prefix: &str) -> Result<Self> {
        Ok(LayerNorm {
            gain: p.get(&format!("{prefix}.gain"))?.clone(),
            bias: p.get(&format!("{prefix}.bias"))?.clone(),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&self.gain, &self.bias, -1)
    }
}

/// `x W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.weight, self.bias.as_ref())
    }
}

/// Two-layer ReLU network, `w1: [D, H]`, `w2: [H, D]`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn specs(prefix: &str, dim: usize, hidden: usize) -> Vec<ParamSpec> {
        vec![
            ParamSpec::weight(format!("{prefix}.w1"), dim, hidden),
            ParamSpec::zeros(format!("{prefix}.b1"), &[hidden]),
            ParamSpec::weight(format!("{prefix}.w2"), hidden, dim),
            ParamSpec::zeros(format!("{prefix}.b2"), &[dim]),
        ]
    }

    pub fn load(p: &ModelParams, prefix: &str) -> Result<Self> {
        let get = |s: &str| p.get(&format!("{prefix}.{s}")).cloned();
        Ok(Mlp {
            fc1: Linear { weight: get("w1")?, bias: Some(get("b1")?) },
            fc2: Linear { weight: get("w2")?, bias: Some(get("b2")?) },
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let h = self.fc1.forward(x)?.relu()?;
        self.fc2.forward(&ctx.dropout(&h, ctx.mlp_dropout)?)
    }
}

/// Multi-head attention with fused per-head projections: `wq, wk, wv: [D, A*Dh]`
/// (head `a` owns columns `a*Dh..(a+1)*Dh`) and `wo: [A*Dh, D]`. No biases.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn specs(prefix: &str, dim: usize, heads: usize, head_dim: usize) -> Vec<ParamSpec> {
        let inner = heads * head_dim;
        vec![
            ParamSpec::weight(format!("{prefix}.wq"), dim, inner),
            ParamSpec::weight(format!("{prefix}.wk"), dim, inner),
            ParamSpec::weight(format!("{prefix}.wv"), dim, inner),
            ParamSpec::weight(format!("{prefix}.wo"), inner, dim),
        ]
    }

    pub fn load(p: &ModelParams, prefix: &str, heads: usize) -> Result<Self> {
        let get = |s: &str| p.get(&format!("{prefix}.{s}")).cloned();
        Ok(MultiHeadAttention {
            wq: get("wq")?,
            wk: get("wk")?,
            wv: get("wv")?,
            wo: get("wo")?,
            heads,
        })
    }

    /// Queries from `xq: [B, Lq, D]`, keys and values from `xkv: [B, Lk, D]`.
    /// `bias` broadcasts against the `[B, A, Lq, Lk]` logits. Returns the
    /// projected output `[B, Lq, D]` (no residual) and, when tracing, the
    /// attention weights.
    pub fn forward(
        &self,
        xq: &Tensor,
        xkv: &Tensor,
        bias: Option<&Tensor>,
        ctx: &ForwardCtx,
    ) -> Result<(Tensor, Option<Tensor>)> {
        if xq.ndim() != 3 || xkv.ndim() != 3 {
            return Err(Error::shape("attention", xq.shape(), xkv.shape()));
        }
        let q = xq.linear(&self.wq, None)?;
        let k = xkv.linear(&self.wk, None)?;
        let v = xkv.linear(&self.wv, None)?;
        if !(ctx.train && ctx.attn_dropout > 0.0) {
            if !ctx.tracing() {
                let out = multi_head_attention_output(&q, &k, &v, self.heads, bias)?;
                return Ok((out.linear(&self.wo, None)?, None));
            }
            let att = multi_head_attention(&q, &k, &v, self.heads, bias)?;
            return Ok((att.output.linear(&self.wo, None)?, Some(att.weights)));
        }
        let (q, k, v) = (split_heads(&q, self.heads)?, split_heads(&k, self.heads)?, split_heads(&v, self.heads)?);
        let att = scaled_dot_product_attention(&q, &k, &v, bias)?;
        let out = ctx.dropout(&att.weights, ctx.attn_dropout)?.matmul(&v)?;
        Ok((merge_heads(&out)?.linear(&self.wo, None)?, Some(att.weights)))
    }
}

/// Pre-norm attention followed by a pre-norm MLP, both residual:
///
/// ```text
/// h  = LN1(x)
/// y  = x + W_O · MHA(h, kv(h))
/// out = y + MLP(LN2(y))
/// ```
#[derive(Clone, Debug)]
pub struct Sublayer {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub mlp: Mlp,
}

impl Sublayer {
    pub fn specs(prefix: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Vec<ParamSpec> {
        let mut v = LayerNorm::specs(&format!("{prefix}.ln1"), dim);
        v.extend(MultiHeadAttention::specs(&format!("{prefix}.attn"), dim, heads, dim / heads));
        v.extend(LayerNorm::specs(&format!("{prefix}.ln2"), dim));
        v.extend(Mlp::specs(&format!("{prefix}.mlp"), dim, dim * mlp_ratio));
        v
    }

    pub fn load(p: &ModelParams, prefix: &str, heads: usize) -> Result<Self> {
        Ok(Sublayer {
            ln1: LayerNorm::load(p, &format!("{prefix}.ln1"))?,
            attn: MultiHeadAttention::load(p, &format!("{prefix}.attn"), heads)?,
            ln2: LayerNorm::load(p, &format!("{prefix}.ln2"))?,
            mlp: Mlp::load(p, &format!("{prefix}.mlp"))?,
        })
    }

    /// `kv` maps the normalized input to the key/value tokens.
    pub fn forward<F>(&self, x: &Tensor, kv: F, bias: Option<&Tensor>, ctx: &ForwardCtx) -> Result<(Tensor, Option<Tensor>)>
    where
        F: FnOnce(&Tensor) -> Result<Tensor>,
    {
        let h = self.ln1.forward(x)?;
        let kv = kv(&h)?;
        let (a, weights) = self.attn.forward(&h, &kv, bias, ctx)?;
        let y = x.add(&a)?;
        let out = y.add(&self.mlp.forward(&self.ln2.forward(&y)?, ctx)?)?;
        Ok((out, weights))
    }
}
