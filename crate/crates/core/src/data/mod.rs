//! Keypoint sequences: reduction to the graph layout, normalization,
//! augmentation, clip sampling, batching, file I/O and a synthetic dataset.

mod skel;
mod synth;

pub use skel::{decode_skel, encode_skel, read_skel, write_skel, Manifest, ManifestEntry, Split};
pub use synth::{nearest_centroid_accuracy, synth_dataset, write_synth_dataset, SynthOptions};

use crate::config::AugmentConfig;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Frames after padding or truncation.
pub const CLIP_PAD: usize = 150;
/// Frames fed to the network.
pub const CLIP_LEN: usize = 120;
/// Start of the evaluation crop, `(CLIP_PAD - CLIP_LEN) / 2`.
pub const EVAL_OFFSET: usize = (CLIP_PAD - CLIP_LEN) / 2;

/// `frames x joints x channels` coordinates, row-major. Channel 0 is x,
/// channel 1 is y, the optional channel 2 a confidence in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointSequence {
    pub frames: usize,
    pub joints: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    pub label: usize,
    pub signer: Option<u32>,
    pub fps: Option<f32>,
}

impl KeypointSequence {
    pub fn new(frames: usize, joints: usize, channels: usize, data: Vec<f64>, label: usize) -> Result<Self> {
        let s = KeypointSequence { frames, joints, channels, data, label, signer: None, fps: None };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.frames == 0 || self.joints == 0 {
            return bad("empty sequence".into());
        }
        if !(2..=3).contains(&self.channels) {
            return bad(format!("{} channels (expected 2 or 3)", self.channels));
        }
        if self.data.len() != self.frames * self.joints * self.channels {
            return bad(format!(
                "{} values for {}x{}x{}",
                self.data.len(),
                self.frames,
                self.joints,
                self.channels
            ));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return bad("non-finite coordinate".into());
        }
        if self.channels == 3 && self.data.chunks_exact(3).any(|p| !(0.0..=1.0).contains(&p[2])) {
            return bad("confidence outside [0, 1]".into());
        }
        Ok(())
    }

    pub fn at(&self, t: usize, j: usize, c: usize) -> f64 {
        self.data[(t * self.joints + j) * self.channels + c]
    }

    fn with_data(&self, frames: usize, joints: usize, data: Vec<f64>) -> Self {
        KeypointSequence { frames, joints, data, ..self.clone() }
    }

    fn points_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.data.chunks_exact_mut(self.channels)
    }
}

/// Keeps joint `map[k]` of every frame as node `k`.
pub fn reduce_graph(seq: &KeypointSequence, map: &[usize]) -> Result<KeypointSequence> {
    if let Some(&m) = map.iter().find(|&&m| m >= seq.joints) {
        return Err(Error::invalid(
            "reduce_graph",
            format!("source index {m} out of range for {} keypoints", seq.joints),
        ));
    }
    let c = seq.channels;
    let mut data = Vec::with_capacity(seq.frames * map.len() * c);
    for frame in seq.data.chunks_exact(seq.joints * c) {
        for &m in map {
            data.extend_from_slice(&frame[m * c..(m + 1) * c]);
        }
    }
    Ok(seq.with_data(seq.frames, map.len(), data))
}

/// Maps the bounding box of all joints over all frames onto `[-1, 1]`, x and
/// y independently. The confidence channel is untouched.
pub fn normalize(seq: &KeypointSequence) -> Result<KeypointSequence> {
    let mut out = seq.clone();
    for axis in 0..2 {
        let vals = seq.data.chunks_exact(seq.channels).map(|p| p[axis]);
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi - lo <= 0.0 {
            return Err(Error::Degenerate {
                op: "normalize",
                msg: format!("zero extent along axis {axis}"),
            });
        }
        let (scale, mid) = (2.0 / (hi - lo), (hi + lo) / 2.0);
        for p in out.points_mut() {
            p[axis] = (p[axis] - mid) * scale;
        }
    }
    Ok(out)
}

/// Horizontal flip: negates x and relabels joints through `perm` (the graph's
/// mirror permutation, an involution).
pub fn mirror(seq: &KeypointSequence, perm: &[usize]) -> KeypointSequence {
    let c = seq.channels;
    let mut data = vec![0.0; seq.data.len()];
    for (src, dst) in seq.data.chunks_exact(seq.joints * c).zip(data.chunks_exact_mut(seq.joints * c)) {
        for (j, &p) in perm.iter().enumerate() {
            let d = &mut dst[j * c..(j + 1) * c];
            d.copy_from_slice(&src[p * c..(p + 1) * c]);
            d[0] = -d[0];
        }
    }
    seq.with_data(seq.frames, seq.joints, data)
}

/// Rotation about the origin by `deg` degrees.
pub fn rotate(seq: &KeypointSequence, deg: f64) -> KeypointSequence {
    let (s, c) = deg.to_radians().sin_cos();
    let mut out = seq.clone();
    for p in out.points_mut() {
        let (x, y) = (p[0], p[1]);
        p[0] = c * x - s * y;
        p[1] = s * x + c * y;
    }
    out
}

/// Mirror, rotate, scale, jitter, shift, in that order, each drawn from `rng`.
pub fn augment(seq: &KeypointSequence, cfg: &AugmentConfig, mirror_perm: &[usize], rng: &mut Rng) -> KeypointSequence {
    let mut out = if rng.bernoulli(cfg.mirror_prob) { mirror(seq, mirror_perm) } else { seq.clone() };
    let deg = rng.uniform_range(-cfg.rotate_max_deg, cfg.rotate_max_deg);
    if deg != 0.0 {
        out = rotate(&out, deg);
    }
    let scale = rng.uniform_range(cfg.scale_range[0], cfg.scale_range[1]);
    for p in out.points_mut() {
        p[0] *= scale;
        p[1] *= scale;
    }
    if cfg.jitter_std > 0.0 {
        for p in out.points_mut() {
            p[0] += cfg.jitter_std * rng.normal();
            p[1] += cfg.jitter_std * rng.normal();
        }
    }
    let (dx, dy) = (
        rng.uniform_range(-cfg.shift_max, cfg.shift_max),
        rng.uniform_range(-cfg.shift_max, cfg.shift_max),
    );
    for p in out.points_mut() {
        p[0] += dx;
        p[1] += dy;
    }
    out
}

/// Pads (repeating the last frame) or truncates to [`CLIP_PAD`] frames, then
/// crops [`CLIP_LEN`]: at a uniform offset in `0..=30` in training, at
/// [`EVAL_OFFSET`] in evaluation.
pub fn sample_clip(seq: &KeypointSequence, train: bool, rng: &mut Rng) -> Result<KeypointSequence> {
    let offset = if train { rng.below(CLIP_PAD - CLIP_LEN + 1) } else { EVAL_OFFSET };
    clip_at(seq, offset)
}

/// The [`CLIP_LEN`]-frame window starting at `offset` of the padded sequence.
pub fn clip_at(seq: &KeypointSequence, offset: usize) -> Result<KeypointSequence> {
    if seq.frames == 0 {
        return Err(Error::invalid("sample_clip", "empty sequence"));
    }
    if offset + CLIP_LEN > CLIP_PAD {
        return Err(Error::invalid("sample_clip", format!("offset {offset} past the padded clip")));
    }
    let fsize = seq.joints * seq.channels;
    let mut data = Vec::with_capacity(CLIP_LEN * fsize);
    for t in offset..offset + CLIP_LEN {
        let src = t.min(seq.frames - 1);
        data.extend_from_slice(&seq.data[src * fsize..(src + 1) * fsize]);
    }
    Ok(seq.with_data(CLIP_LEN, seq.joints, data))
}

/// Stacks equally shaped sequences into the `[B, N, C, T]` network input.
pub fn batch_tensor(seqs: &[&KeypointSequence]) -> Result<Tensor> {
    let first = seqs.first().ok_or_else(|| Error::invalid("batch_tensor", "empty batch"))?;
    let (t, n, c) = (first.frames, first.joints, first.channels);
    let mut data = Vec::with_capacity(seqs.len() * t * n * c);
    for s in seqs {
        if (s.frames, s.joints, s.channels) != (t, n, c) {
            return Err(Error::shape("batch_tensor", &[t, n, c], &[s.frames, s.joints, s.channels]));
        }
        for j in 0..n {
            for ch in 0..c {
                data.extend((0..t).map(|f| s.at(f, j, ch)));
            }
        }
    }
    Tensor::new(&[seqs.len(), n, c, t], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SkeletonGraph;

    fn seq(frames: usize, joints: usize, seed: u64) -> KeypointSequence {
        let mut rng = Rng::new(seed);
        let data = (0..frames * joints * 2).map(|_| rng.uniform_range(-3.0, 5.0)).collect();
        KeypointSequence::new(frames, joints, 2, data, 0).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn identity_prefix_reduction_passes_through() {
        let s = seq(4, 27, 1);
        let r = reduce_graph(&s, &(0..27).collect::<Vec<_>>()).unwrap();
        assert_eq!(r, s);
        assert!(reduce_graph(&s, &[0, 27]).is_err());
    }

    #[test]
    fn normalize_endpoints_and_idempotence() {
        let data = vec![0.0, 0.0, 10.0, 10.0, 5.0, 2.0];
        let s = KeypointSequence::new(1, 3, 2, data, 0).unwrap();
        let n = normalize(&s).unwrap();
        assert_eq!(&n.data[..4], &[-1.0, -1.0, 1.0, 1.0]);
        let s = seq(7, 5, 2);
        let once = normalize(&s).unwrap();
        assert!(close(&normalize(&once).unwrap().data, &once.data, 1e-12));
        let flat = KeypointSequence::new(2, 1, 2, vec![1.0, 2.0, 1.0, 3.0], 0).unwrap();
        assert!(matches!(normalize(&flat), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn confidence_is_untouched() {
        let s = KeypointSequence::new(1, 2, 3, vec![0.0, 4.0, 0.3, 2.0, 0.0, 0.9], 0).unwrap();
        let n = normalize(&s).unwrap();
        assert_eq!((n.data[2], n.data[5]), (0.3, 0.9));
        let mut rng = Rng::new(0);
        let a = augment(&n, &AugmentConfig::default(), &[1, 0], &mut rng);
        let mut conf = [a.data[2], a.data[5]];
        conf.sort_by(f64::total_cmp);
        assert_eq!(conf, [0.3, 0.9]);
    }

    #[test]
    fn mirror_is_involution_and_rotation_inverts() {
        let perm = SkeletonGraph::builtin_slgt27().mirror_permutation();
        let s = normalize(&seq(5, 27, 3)).unwrap();
        assert_eq!(mirror(&mirror(&s, &perm), &perm), s);
        assert!(close(&rotate(&rotate(&s, 11.0), -11.0).data, &s.data, 1e-12));
    }

    #[test]
    fn augment_off_is_identity() {
        let s = normalize(&seq(5, 4, 4)).unwrap();
        let mut rng = Rng::new(9);
        assert_eq!(augment(&s, &AugmentConfig::off(), &[0, 1, 2, 3], &mut rng), s);
    }

    #[test]
    fn clip_rules() {
        let s = seq(150, 2, 5);
        let c = clip_at(&s, 0).unwrap();
        assert_eq!(c.frames, CLIP_LEN);
        assert_eq!(c.data[..], s.data[..CLIP_LEN * 4]);
        let short = seq(10, 2, 6);
        let c = clip_at(&short, 0).unwrap();
        for t in 10..CLIP_LEN {
            assert_eq!(c.data[t * 4..(t + 1) * 4], short.data[36..40]);
        }
        let long = seq(400, 2, 7);
        let mut rng = Rng::new(0);
        let e = sample_clip(&long, false, &mut rng).unwrap();
        assert_eq!(e.data[..], long.data[EVAL_OFFSET * 4..(EVAL_OFFSET + CLIP_LEN) * 4]);
    }

    #[test]
    fn batch_layout_is_joint_channel_time() {
        let s = seq(3, 2, 8);
        let b = batch_tensor(&[&s, &s]).unwrap();
        assert_eq!(b.shape(), &[2, 2, 2, 3]);
        assert_eq!(b.at(&[1, 1, 0, 2]), s.at(2, 1, 0));
    }
}
