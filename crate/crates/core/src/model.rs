//! The full classifier: input projection, interleaved spatial and temporal
//! blocks over stages of decreasing temporal resolution, masked mean pooling
//! and a linear head.
//!
//! Input is `[B, N, C, T]`; logits are `[B, classes]`.

use crate::config::{Ablation, ModelConfig};
use crate::error::{Error, LayerContext, Result};
use crate::graph::{DistanceMatrix, SkeletonGraph};
use crate::layers::{ForwardCtx, Linear};
use crate::lgrpe::{forward_meta, gamma0_from_graph, onehot_dim, MetaNetwork};
use crate::params::{Init, ModelParams, ParamSpec};
use crate::spatial::{SpatialBlock, SpatialDims};
use crate::temporal::{downsample_spec, padded_length, peg_apply, peg_spec, stage_downsample, TemporalBlock};
use crate::rng::Rng;
use crate::tensor::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use crate::tensor::Tensor;

/// Temporal bookkeeping for one stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StagePlan {
    /// Length entering the stage.
    pub length: usize,
    /// Length after right-padding.
    pub padded: usize,
    /// Frames that carry real (not padded) content.
    pub valid: usize,
    pub width: usize,
    pub sub_sample: usize,
    /// Global indices of the stage's blocks.
    pub blocks: std::ops::Range<usize>,
}

#[derive(Clone, Debug)]
pub struct Slgtformer {
    config: ModelConfig,
    graph: SkeletonGraph,
    psi: DistanceMatrix,
    d_max: usize,
    plan: Vec<StagePlan>,
    specs: Vec<ParamSpec>,
}

impl Slgtformer {
    pub fn new(config: ModelConfig, graph: SkeletonGraph) -> Result<Self> {
        config.validate()?;
        if graph.node_count() != config.joints {
            return Err(Error::Config(format!(
                "config has {} joints but the graph has {} nodes",
                config.joints,
                graph.node_count()
            )));
        }
        let psi = graph.shortest_path_matrix();
        let d_max = config.d_max.unwrap_or_else(|| psi.diameter());
        let plan = stage_plan(&config);
        let mut m = Slgtformer {
            config,
            graph,
            psi,
            d_max,
            plan,
            specs: Vec::new(),
        };
        m.specs = m.build_specs();
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &SkeletonGraph {
        &self.graph
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn plan(&self) -> &[StagePlan] {
        &self.plan
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn count_params(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn init_params(&self) -> Result<ModelParams> {
        ModelParams::init(&self.specs, self.config.seed)
    }

    fn lgrpe_on(&self) -> bool {
        !self.config.ablated(Ablation::Lgrpe)
    }

    fn twin_on(&self) -> bool {
        !self.config.ablated(Ablation::Ttsa)
    }

    fn factor_on(&self) -> bool {
        !self.config.ablated(Ablation::Factor)
    }

    fn build_specs(&self) -> Vec<ParamSpec> {
        let c = &self.config;
        let (n, heads) = (c.joints, c.heads);
        let d0 = c.stage_width(0);
        let mut v = vec![
            ParamSpec::weight("input.proj.weight", c.in_channels, d0),
            ParamSpec::zeros("input.proj.bias", &[d0]),
        ];
        if self.lgrpe_on() {
            let k = onehot_dim(self.d_max);
            let g0 = gamma0_from_graph(&self.psi, self.d_max);
            v.push(ParamSpec::new("lgrpe.gamma0", &[n, n, k], Init::Values(g0.to_vec())));
            v.push(ParamSpec::weight("lgrpe.mlp.w1", k, c.h_meta));
            v.push(ParamSpec::zeros("lgrpe.mlp.b1", &[c.h_meta]));
            v.push(ParamSpec::weight("lgrpe.mlp.w2", c.h_meta, heads * c.d_pos));
            v.push(ParamSpec::zeros("lgrpe.mlp.b2", &[heads * c.d_pos]));
        }
        let factor = self.graph.normalized_adjacency_factor();
        for (s, st) in self.plan.iter().enumerate() {
            for b in st.blocks.clone() {
                let dims = SpatialDims {
                    joints: n,
                    dim: st.width,
                    heads,
                    mlp_ratio: c.mlp_ratio,
                    groups: c.groups,
                    d_pos: c.d_pos,
                };
                let f = self.factor_on().then(|| factor.as_slice());
                v.extend(SpatialBlock::specs(b, dims, self.lgrpe_on(), f));
                v.extend(TemporalBlock::specs(b, st.width, heads, c.mlp_ratio, st.sub_sample, self.twin_on()));
            }
            v.push(peg_spec(s, st.width));
            if let Some(next) = self.plan.get(s + 1) {
                v.push(downsample_spec(s, st.width, next.width));
            }
        }
        let last = self.plan.last().expect("validated: at least one stage").width;
        v.push(ParamSpec::weight("head.weight", last, c.num_classes));
        v.push(ParamSpec::zeros("head.bias", &[c.num_classes]));
        v
    }

    /// `[B, N, C, T] -> [B, T, N, D]`: permute, then a learned linear map of the
    /// channel axis.
    pub fn project_input(&self, x: &Tensor, params: &ModelParams) -> Result<Tensor> {
        let s = x.shape();
        let c = &self.config;
        if s.len() != 4 || s[1] != c.joints || s[2] != c.in_channels {
            return Err(Error::invalid(
                "project_input",
                format!(
                    "expected [B, {}, {}, T], got {s:?}",
                    c.joints, c.in_channels
                ),
            ));
        }
        let proj = Linear {
            weight: params.get("input.proj.weight")?.clone(),
            bias: Some(params.get("input.proj.bias")?.clone()),
        };
        proj.forward(&x.permute(&[0, 3, 1, 2])?).in_layer(|| "input.proj".into())
    }

    /// Per-head pair encodings `[N, N, A, D_pos]`, or `None` when ablated.
    pub fn gamma(&self, params: &ModelParams) -> Result<Option<Tensor>> {
        if !self.lgrpe_on() {
            return Ok(None);
        }
        let net = MetaNetwork {
            w1: params.get("lgrpe.mlp.w1")?.clone(),
            b1: params.get("lgrpe.mlp.b1")?.clone(),
            w2: params.get("lgrpe.mlp.w2")?.clone(),
            b2: params.get("lgrpe.mlp.b2")?.clone(),
        };
        forward_meta(params.get("lgrpe.gamma0")?, &net, self.config.heads)
            .in_layer(|| "lgrpe".into())
            .map(Some)
    }

    /// Pooled `[B, D]` features before the head.
    pub fn features(&self, x: &Tensor, params: &ModelParams, ctx: &ForwardCtx) -> Result<Tensor> {
        if x.shape().get(3) != Some(&self.config.t_in) {
            return Err(Error::invalid(
                "forward",
                format!("expected {} frames, got shape {:?}", self.config.t_in, x.shape()),
            ));
        }
        let c = &self.config;
        let (batch, n) = (x.shape()[0], c.joints);
        let gamma = self.gamma(params)?;
        let mut h = self.project_input(x, params)?;
        for (s, st) in self.plan.iter().enumerate() {
            if st.padded > st.length {
                h = h.pad_repeat_last(1, st.padded)?;
            }
            let (t, d) = (st.padded, st.width);
            for b in st.blocks.clone() {
                let spatial = SpatialBlock::load(params, b, c.heads, self.lgrpe_on(), self.factor_on())?;
                let temporal = TemporalBlock::load(params, b, c.heads, st.sub_sample, self.twin_on())?;
                let hs = spatial.forward(&h.reshape(&[batch * t, n, d])?, gamma.as_ref(), ctx)?;
                // [B, T, N, D] -> [B*N, T, D]
                let ht = hs.reshape(&[batch, t, n, d])?.permute(&[0, 2, 1, 3])?.reshape(&[batch * n, t, d])?;
                let mut ht = temporal.forward(&ht, ctx)?;
                let mut t_out = t;
                let mut d_out = d;
                if b == st.blocks.start {
                    ht = peg_apply(&ht, params.get(&format!("stage{s}.peg.weight"))?)
                        .in_layer(|| format!("stage{s}.peg"))?;
                }
                if b + 1 == st.blocks.end && s + 1 < self.plan.len() {
                    ht = stage_downsample(&ht, params.get(&format!("stage{s}.downsample.kernel"))?)
                        .in_layer(|| format!("stage{s}.downsample"))?;
                    t_out = t / 2;
                    d_out = ht.shape()[2];
                }
                h = ht.reshape(&[batch, n, t_out, d_out])?.permute(&[0, 2, 1, 3])?;
            }
        }
        let last = self.plan.last().expect("validated: at least one stage");
        let d = last.width;
        // padded frames are excluded from the average
        h.slice(1, 0, last.valid)?
            .reshape(&[batch, last.valid * n, d])?
            .mean_axis(1)
    }

    pub fn forward(&self, x: &Tensor, params: &ModelParams, ctx: &ForwardCtx) -> Result<Tensor> {
        let pooled = self.features(x, params, ctx)?;
        let head = Linear {
            weight: params.get("head.weight")?.clone(),
            bias: Some(params.get("head.bias")?.clone()),
        };
        head.forward(&pooled).in_layer(|| "head".into())
    }
}

/// Finite-difference check of every parameter of `model` on a fixed random
/// batch of two sequences and a cross-entropy loss. Parameters start from the
/// seeded init plus uniform noise in [-0.1, 0.1] so that zero-initialised
/// entries are not checked at a trivial point.
pub fn model_gradcheck(model: &Slgtformer, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let c = model.config();
    let mut rng = Rng::new(c.seed ^ 0x6C0);
    let init = model.init_params()?;
    let mut named = Vec::with_capacity(init.len());
    for (name, t) in init.iter() {
        let data = t.data().iter().map(|v| v + rng.uniform_range(-0.1, 0.1)).collect();
        named.push((name.clone(), Tensor::new(t.shape(), data)?));
    }
    let shape = [2, c.joints, c.in_channels, c.t_in];
    let x = Tensor::new(&shape, (0..shape.iter().product()).map(|_| rng.uniform_range(-1.0, 1.0)).collect())?;
    let labels: Vec<usize> = (0..2).map(|_| rng.below(c.num_classes)).collect();
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    check_gradients(
        &named,
        |ts| {
            let p: ModelParams = names.iter().cloned().zip(ts.iter().cloned()).collect();
            model.forward(&x, &p, &ForwardCtx::eval())?.cross_entropy(&labels, 0.0)
        },
        cfg,
    )
}

/// Stage lengths: pad each stage to a multiple of `lcm(6, sub_sample, 2 if a
/// downsample follows)`, halve between stages, and carry the count of real
/// frames (`ceil(valid / 2)` per halving).
pub fn stage_plan(c: &ModelConfig) -> Vec<StagePlan> {
    let mut plan = Vec::with_capacity(c.stages.len());
    let (mut length, mut valid, mut block) = (c.t_in, c.t_in, 0);
    for (s, st) in c.stages.iter().enumerate() {
        let last = s + 1 == c.stages.len();
        let padded = padded_length(length, st.sub_sample, !last);
        plan.push(StagePlan {
            length,
            padded,
            valid,
            width: c.stage_width(s),
            sub_sample: st.sub_sample,
            blocks: block..block + st.blocks,
        });
        block += st.blocks;
        length = padded / 2;
        valid = valid.div_ceil(2);
    }
    plan
}
