//! Keypoint preprocessing: write and read a SKEL1 file, normalize into the
//! unit box, augment, and cut the fixed-length clip the model consumes.
//!
//! ```bash
//! cargo run --example data_pipeline
//! ```

use slgtformer::config::AugmentConfig;
use slgtformer::data::{augment, batch_tensor, mirror, normalize, read_skel, sample_clip, synth_dataset, write_skel, SynthOptions};
use slgtformer::graph::SkeletonGraph;
use slgtformer::rng::Rng;
use slgtformer::Result;

fn extent(seq: &slgtformer::data::KeypointSequence, c: usize) -> (f64, f64) {
    let vals = seq.data.iter().skip(c).step_by(seq.channels);
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn main() -> Result<()> {
    let opts = SynthOptions { num_classes: 5, samples_per_class: 1, ..SynthOptions::default() };
    let seq = synth_dataset(&opts)?.remove(2);
    println!("sample: {} frames, {} joints, label {} ({})", seq.frames, seq.joints, seq.label, opts.class_name(seq.label));

    let path = std::env::temp_dir().join("slgt_example.skel");
    write_skel(&path, &seq)?;
    let back = read_skel(&path)?;
    println!("SKEL1 round trip: {} bytes, frames {}", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0), back.frames);

    println!("raw x range {:.3?}, y range {:.3?}", extent(&back, 0), extent(&back, 1));
    let norm = normalize(&back)?;
    println!("normalized x range {:.3?}, y range {:.3?}", extent(&norm, 0), extent(&norm, 1));

    let perm = SkeletonGraph::builtin_slgt27().mirror_permutation();
    let twice = mirror(&mirror(&norm, &perm), &perm);
    println!("mirror twice restores the sequence: {}", twice.data == norm.data);

    let mut rng = Rng::new(4);
    let aug = augment(&norm, &AugmentConfig::default(), &perm, &mut rng);
    println!("augmented x range {:.3?}", extent(&aug, 0));

    let train_clip = sample_clip(&aug, true, &mut rng)?;
    let eval_clip = sample_clip(&norm, false, &mut rng)?;
    println!("clips: train {} frames, eval {} frames", train_clip.frames, eval_clip.frames);
    let batch = batch_tensor(&[&train_clip, &eval_clip])?;
    println!("batch tensor {:?}", batch.shape());
    let _ = std::fs::remove_file(&path);
    Ok(())
}
