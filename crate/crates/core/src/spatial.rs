//! Spatial transformer block: positional self-attention over the joints of
//! each frame, then the grouped learnable adjacency factor.
//!
//! Input and output are `[B*T, N, D]`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, LayerContext, Result};
use crate::layers::{ForwardCtx, Sublayer};
use crate::lgrpe::positional_bias;
use crate::params::{ModelParams, ParamSpec, Init};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct SpatialBlock {
    pub index: usize,
    pub sub: Sublayer,
    /// One `[D_pos]` vector per head; empty when the positional bias is off.
    pub vpos: Vec<Tensor>,
    /// `[N, N, g]`; `None` when the factor is off.
    pub factor: Option<Tensor>,
}

#[derive(Clone, Copy, Debug)]
pub struct SpatialDims {
    pub joints: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub groups: usize,
    pub d_pos: usize,
}

impl SpatialBlock {
    pub fn prefix(index: usize) -> String {
        format!("block{index}.spatial")
    }

    /// `factor_init` is the `[N, N]` normalized adjacency copied into every group.
    pub fn specs(index: usize, d: SpatialDims, lgrpe: bool, factor_init: Option<&[f64]>) -> Vec<ParamSpec> {
        let prefix = SpatialBlock::prefix(index);
        let mut v = Sublayer::specs(&prefix, d.dim, d.heads, d.mlp_ratio);
        if lgrpe {
            for a in 0..d.heads {
                v.push(ParamSpec::zeros(format!("{prefix}.vpos.head{a}"), &[d.d_pos]));
            }
        }
        if let Some(f) = factor_init {
            let data = f.iter().flat_map(|&x| std::iter::repeat_n(x, d.groups)).collect();
            v.push(ParamSpec::new(format!("{prefix}.factor"), &[d.joints, d.joints, d.groups], Init::Values(data)));
        }
        v
    }

    pub fn load(p: &ModelParams, index: usize, heads: usize, lgrpe: bool, factor: bool) -> Result<Self> {
        let prefix = SpatialBlock::prefix(index);
        let vpos = if lgrpe {
            (0..heads)
                .map(|a| p.get(&format!("{prefix}.vpos.head{a}")).cloned())
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(SpatialBlock {
            index,
            sub: Sublayer::load(p, &prefix, heads)?,
            vpos,
            factor: if factor { Some(p.get(&format!("{prefix}.factor"))?.clone()) } else { None },
        })
    }

    /// `psa_forward` then (if enabled) the decoupled factor.
    pub fn forward(&self, x: &Tensor, gamma: Option<&Tensor>, ctx: &ForwardCtx) -> Result<Tensor> {
        let run = || {
            let y = psa_forward(x, &self.sub, gamma, &self.vpos, ctx, self.index)?;
            match &self.factor {
                Some(f) => apply_decoupled_factor(&y, f),
                None => Ok(y),
            }
        };
        run().in_layer(|| SpatialBlock::prefix(self.index))
    }
}

/// Multi-head self-attention over joints with the graph positional bias
/// (`v_pos . Γ` per head, added before the softmax), then the residual MLP.
/// Bias is skipped when `gamma` is `None` or `vpos` is empty.
pub fn psa_forward(
    x: &Tensor,
    sub: &Sublayer,
    gamma: Option<&Tensor>,
    vpos: &[Tensor],
    ctx: &ForwardCtx,
    block: usize,
) -> Result<Tensor> {
    let bias = match gamma {
        Some(g) if !vpos.is_empty() => Some(positional_bias(g, vpos)?),
        _ => None,
    };
    let (out, weights) = sub.forward(x, |h| Ok(h.clone()), bias.as_ref(), ctx)?;
    if let Some(weights) = weights {
        ctx.record(|| AttentionMap {
            block,
            shape: weights.shape().try_into().expect("4-d attention weights"),
            data: weights.data().iter().map(|&v| v as f32).collect(),
        });
    }
    Ok(out)
}

/// Splits channels into `g` contiguous groups; group `k` is multiplied on the
/// joint axis by `factor[:, :, k]`. `x: [M, N, D]`, `factor: [N, N, g]`.
pub fn apply_decoupled_factor(x: &Tensor, factor: &Tensor) -> Result<Tensor> {
    let (xs, fs) = (x.shape(), factor.shape());
    if xs.len() != 3 || fs.len() != 3 || fs[0] != xs[1] || fs[1] != xs[1] {
        return Err(Error::shape("apply_decoupled_factor", xs, fs));
    }
    let (m, n, d, g) = (xs[0], xs[1], xs[2], fs[2]);
    if d % g != 0 {
        return Err(Error::invalid(
            "apply_decoupled_factor",
            format!("{g} groups do not divide {d} channels"),
        ));
    }
    let c = d / g;
    // [M, N, g, c] -> [g, N, M*c]
    let xg = x.reshape(&[m, n, g, c])?.permute(&[2, 1, 0, 3])?.reshape(&[g, n, m * c])?;
    let f = factor.permute(&[2, 0, 1])?;
    f.matmul(&xg)?
        .reshape(&[g, n, m, c])?
        .permute(&[2, 1, 0, 3])?
        .reshape(&[m, n, d])
}

/// Attention weights of one spatial block, `[B*T, heads, N, N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub block: usize,
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

const TRACE_MAGIC: &[u8; 8] = b"SLGTATTN";
const TRACE_VERSION: u8 = 1;

/// Writes attention maps as
///
/// ```text
/// magic "SLGTATTN" | version u8 = 1 | count u32
/// count x { block u32 | frames u32 | heads u32 | queries u32 | keys u32 | f32 payload }
/// crc32 u32 of everything before it
/// ```
///
/// All integers and floats little-endian.
pub fn write_attention_trace(path: impl AsRef<Path>, maps: &[AttentionMap]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(TRACE_MAGIC);
    buf.push(TRACE_VERSION);
    buf.extend_from_slice(&(maps.len() as u32).to_le_bytes());
    for m in maps {
        buf.extend_from_slice(&(m.block as u32).to_le_bytes());
        for d in m.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &m.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    let path = path.as_ref();
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| Error::io(path, e))
}

pub fn read_attention_trace(path: impl AsRef<Path>) -> Result<Vec<AttentionMap>> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format(format!("attention trace: {m}"));
    if buf.len() < 17 || &buf[..8] != TRACE_MAGIC {
        return Err(bad("bad magic"));
    }
    if buf[8] != TRACE_VERSION {
        return Err(bad("unsupported version"));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(bad("checksum mismatch"));
    }
    let mut pos = 9;
    let u32_at = |pos: &mut usize| -> Result<usize> {
        let b = body.get(*pos..*pos + 4).ok_or_else(|| bad("truncated"))?;
        *pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    };
    let count = u32_at(&mut pos)?;
    let mut maps = Vec::with_capacity(count);
    for _ in 0..count {
        let block = u32_at(&mut pos)?;
        let mut shape = [0usize; 4];
        for s in &mut shape {
            *s = u32_at(&mut pos)?;
        }
        let n: usize = shape.iter().product();
        let bytes = body.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated payload"))?;
        pos += 4 * n;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        maps.push(AttentionMap { block, shape, data });
    }
    if pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SkeletonGraph;
    use crate::rng::Rng;

    fn rand(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-2.0, 2.0)).collect()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn identity_factor_is_noop() {
        let mut rng = Rng::new(1);
        let x = rand(&[3, 4, 8], &mut rng);
        let mut eye = vec![0.0; 16 * 2];
        for i in 0..4 {
            for k in 0..2 {
                eye[(i * 4 + i) * 2 + k] = 1.0;
            }
        }
        let f = Tensor::new(&[4, 4, 2], eye).unwrap();
        assert_eq!(apply_decoupled_factor(&x, &f).unwrap().data(), x.data());
    }

    #[test]
    fn half_identity_half_zero() {
        let mut rng = Rng::new(2);
        let x = rand(&[2, 3, 4], &mut rng);
        let mut data = vec![0.0; 9 * 2];
        for i in 0..3 {
            data[(i * 3 + i) * 2] = 1.0;
        }
        let y = apply_decoupled_factor(&x, &Tensor::new(&[3, 3, 2], data).unwrap()).unwrap();
        for (row_y, row_x) in y.data().chunks(4).zip(x.data().chunks(4)) {
            assert_eq!(&row_y[..2], &row_x[..2]);
            assert_eq!(&row_y[2..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn init_factor_equals_single_matrix_product() {
        let g = SkeletonGraph::builtin_slgt27();
        let a = g.normalized_adjacency_factor();
        let mut rng = Rng::new(3);
        let x = rand(&[2, 27, 16], &mut rng);
        let f = crate::graph::init_decoupled_factor(&a, 8).unwrap();
        let grouped = apply_decoupled_factor(&x, &f).unwrap();
        let coupled = a.to_tensor().matmul(&x).unwrap();
        assert!(close(grouped.data(), coupled.data(), 1e-10));
    }

    #[test]
    fn trace_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("att.bin");
        let maps = vec![
            AttentionMap { block: 0, shape: [1, 2, 2, 2], data: vec![0.5; 8] },
            AttentionMap { block: 3, shape: [1, 1, 1, 1], data: vec![1.0] },
        ];
        write_attention_trace(&path, &maps).unwrap();
        assert_eq!(read_attention_trace(&path).unwrap(), maps);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(read_attention_trace(&path).is_err());
    }
}
