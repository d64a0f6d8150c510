//! Write the synthetic gesture dataset to disk with its manifest, then load
//! the splits back and score a nearest-centroid baseline on them.
//!
//! ```bash
//! cargo run --example synthetic_dataset -- /tmp/synth
//! ```

use slgtformer::data::{nearest_centroid_accuracy, normalize, write_synth_dataset, Manifest, Split, SynthOptions};
use slgtformer::Result;

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("slgt_synth"));
    let opts = SynthOptions { samples_per_class: 20, ..SynthOptions::default() };
    write_synth_dataset(&dir, &opts)?;
    let manifest = Manifest::load(dir.join("manifest.txt"))?;
    for (i, name) in manifest.classes.iter().enumerate() {
        println!("class {i}: {name}");
    }
    let train: Vec<_> = manifest.load_split(Split::Train)?.iter().map(normalize).collect::<Result<_>>()?;
    let test: Vec<_> = manifest.load_split(Split::Test)?.iter().map(normalize).collect::<Result<_>>()?;
    println!("{} train, {} test samples in {}", train.len(), test.len(), dir.display());
    println!(
        "nearest-centroid test accuracy: {:.3}",
        nearest_centroid_accuracy(&train, &test, manifest.num_classes())?
    );
    Ok(())
}
