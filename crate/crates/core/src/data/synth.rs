//! Seeded synthetic gesture dataset in the builtin 27-node layout.
//!
//! Class `c` fixes a hand height (`c / 5`) and a motion pattern (`c % 5`):
//! horizontal sway, vertical sway, circling, fast sway, or fingers opening
//! and closing. Both hands move symmetrically, so horizontal mirroring keeps
//! the class. Each sample draws its own length (100 to 160 frames), body
//! scale and position, amplitude, tempo, phase and per-joint noise.

use std::f64::consts::TAU;
use std::path::Path;

use super::{clip_at, normalize, write_skel, KeypointSequence, Manifest, ManifestEntry, Split, EVAL_OFFSET};
use crate::error::{Error, Result};
use crate::rng::Rng;

const JOINTS: usize = 27;
const MOTIONS: [&str; 5] = ["sway", "nod", "circle", "shake", "grasp"];

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    /// Share of each class held out as the test split.
    pub test_fraction: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions { num_classes: 10, samples_per_class: 50, seed: 0, test_fraction: 0.2 }
    }
}

impl SynthOptions {
    fn heights(&self) -> usize {
        self.num_classes.div_ceil(MOTIONS.len())
    }

    pub fn class_name(&self, c: usize) -> String {
        format!("{}_h{}", MOTIONS[c % MOTIONS.len()], c / MOTIONS.len())
    }

    /// Samples `0..n - test` of each class are train, the rest test.
    pub fn split_of(&self, index_in_class: usize) -> Split {
        let test = (self.samples_per_class as f64 * self.test_fraction).round() as usize;
        if index_in_class + test >= self.samples_per_class {
            Split::Test
        } else {
            Split::Train
        }
    }
}

/// Wrist offset and finger spread of a motion at phase `p` (radians).
fn motion(kind: usize, p: f64, amp: f64) -> (f64, f64, f64) {
    match kind {
        0 => (amp * 0.3 * p.sin(), 0.0, 0.25),
        1 => (0.0, amp * 0.3 * p.sin(), 0.25),
        2 => (amp * 0.25 * p.cos(), amp * 0.25 * p.sin(), 0.25),
        3 => (amp * 0.2 * (3.0 * p).sin(), 0.0, 0.25),
        _ => (0.0, 0.0, 0.27 + 0.18 * amp * (2.0 * p).sin()),
    }
}

fn sample(opts: &SynthOptions, class: usize, index: usize) -> KeypointSequence {
    let mut rng = Rng::derive(opts.seed, class as u64, index as u64);
    let frames = 100 + rng.below(61);
    let scale = rng.uniform_range(80.0, 120.0);
    let (cx, cy) = (rng.uniform_range(200.0, 440.0), rng.uniform_range(200.0, 280.0));
    let amp = rng.uniform_range(0.8, 1.2);
    let tempo = rng.uniform_range(0.9, 1.1) * TAU / 100.0;
    let phase = rng.uniform_range(0.0, TAU);
    let levels = opts.heights().max(2) - 1;
    let height = -0.4 + 1.2 * (class / MOTIONS.len()) as f64 / levels as f64;
    let kind = class % MOTIONS.len();

    let mut data = Vec::with_capacity(frames * JOINTS * 2);
    let mut pts = [(0.0, 0.0); JOINTS];
    for t in 0..frames {
        let (dx, dy, spread) = motion(kind, phase + tempo * t as f64, amp);
        pts[0] = (0.0, 0.9);
        for (side, sx) in [(0usize, 1.0f64), (1, -1.0)] {
            let shoulder = (0.5 * sx, 0.4);
            let wrist = (sx * (0.35 + dx), height + dy);
            let elbow = ((shoulder.0 + wrist.0) / 2.0 + 0.2 * sx, (shoulder.1 + wrist.1) / 2.0);
            pts[1 + side] = shoulder;
            pts[3 + side] = elbow;
            pts[5 + side] = wrist;
            for f in 0..5 {
                let a = TAU / 4.0 - sx * (f as f64 - 2.0) * spread;
                let dir = (a.cos(), a.sin());
                let id = 7 + 10 * side + 2 * f;
                pts[id] = (wrist.0 + 0.08 * dir.0, wrist.1 + 0.08 * dir.1);
                pts[id + 1] = (wrist.0 + 0.2 * dir.0, wrist.1 + 0.2 * dir.1);
            }
        }
        for &(x, y) in &pts {
            data.push(cx + scale * (x + 0.01 * rng.normal()));
            data.push(cy - scale * (y + 0.01 * rng.normal()));
        }
    }
    KeypointSequence {
        frames,
        joints: JOINTS,
        channels: 2,
        data,
        label: class,
        signer: None,
        fps: Some(25.0),
    }
}

/// `num_classes * samples_per_class` sequences, class-major.
pub fn synth_dataset(opts: &SynthOptions) -> Result<Vec<KeypointSequence>> {
    if opts.num_classes < 2 || opts.samples_per_class == 0 {
        return Err(Error::invalid("synth_dataset", "need at least 2 classes and 1 sample per class"));
    }
    if !(0.0..1.0).contains(&opts.test_fraction) {
        return Err(Error::invalid("synth_dataset", "test_fraction must be in [0, 1)"));
    }
    Ok((0..opts.num_classes)
        .flat_map(|c| (0..opts.samples_per_class).map(move |i| (c, i)))
        .map(|(c, i)| sample(opts, c, i))
        .collect())
}

/// Writes `train/*.skel`, `test/*.skel` and `manifest.txt` under `dir`.
pub fn write_synth_dataset(dir: impl AsRef<Path>, opts: &SynthOptions) -> Result<Manifest> {
    let dir = dir.as_ref();
    let seqs = synth_dataset(opts)?;
    for sub in ["train", "test"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut manifest = Manifest {
        classes: (0..opts.num_classes).map(|c| opts.class_name(c)).collect(),
        samples: Vec::new(),
        root: dir.to_path_buf(),
    };
    for (k, seq) in seqs.iter().enumerate() {
        let split = opts.split_of(k % opts.samples_per_class);
        let path = Path::new(&split.to_string()).join(format!("{k:05}.skel"));
        write_skel(dir.join(&path), seq)?;
        manifest.samples.push(ManifestEntry { split, label: seq.label, path });
    }
    manifest.save(dir.join("manifest.txt"))?;
    Ok(manifest)
}

/// Accuracy on `test` of the nearest class mean (squared Euclidean distance)
/// of normalized, centre-cropped raw coordinates from `train`.
pub fn nearest_centroid_accuracy(train: &[KeypointSequence], test: &[KeypointSequence], classes: usize) -> Result<f64> {
    let feat = |s: &KeypointSequence| -> Result<Vec<f64>> { Ok(clip_at(&normalize(s)?, EVAL_OFFSET)?.data) };
    let mut sums: Vec<Option<Vec<f64>>> = vec![None; classes];
    let mut counts = vec![0usize; classes];
    for s in train {
        let f = feat(s)?;
        let acc = sums[s.label].get_or_insert_with(|| vec![0.0; f.len()]);
        acc.iter_mut().zip(&f).for_each(|(a, b)| *a += b);
        counts[s.label] += 1;
    }
    let centroids: Vec<(usize, Vec<f64>)> = sums
        .into_iter()
        .enumerate()
        .filter_map(|(c, s)| s.map(|v| (c, v.iter().map(|x| x / counts[c] as f64).collect())))
        .collect();
    let mut correct = 0;
    for s in test {
        let f = feat(s)?;
        let best = centroids
            .iter()
            .map(|(c, m)| (*c, m.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c);
        correct += usize::from(best == Some(s.label));
    }
    Ok(correct as f64 / test.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_and_determinism() {
        let opts = SynthOptions::default();
        let a = synth_dataset(&opts).unwrap();
        assert_eq!(a.len(), 500);
        assert!(a.iter().all(|s| s.joints == 27 && s.channels == 2 && (100..=160).contains(&s.frames)));
        assert_eq!(a, synth_dataset(&opts).unwrap());
        assert_eq!(a.iter().filter(|s| s.label == 3).count(), 50);
        let test = (0..50).filter(|&i| opts.split_of(i) == Split::Test).count();
        assert_eq!(test, 10);
    }

    #[test]
    fn classes_beat_chance_with_nearest_centroid() {
        let opts = SynthOptions { samples_per_class: 20, ..SynthOptions::default() };
        let all = synth_dataset(&opts).unwrap();
        let (train, test): (Vec<_>, Vec<_>) = all
            .into_iter()
            .enumerate()
            .partition(|(k, _)| opts.split_of(k % 20) == Split::Train);
        let strip = |v: Vec<(usize, KeypointSequence)>| v.into_iter().map(|p| p.1).collect::<Vec<_>>();
        let acc = nearest_centroid_accuracy(&strip(train), &strip(test), 10).unwrap();
        assert!(acc > 0.2, "nearest-centroid accuracy {acc}");
    }
}
