//! Regenerates the bundled sample dataset. The checked-in copy at
//! `assets/sample_faces` was produced with the default arguments; rerunning
//! with the same seed reproduces it byte-for-byte.
//!
//! ```text
//! cargo run -p advmask --example make_sample_faces -- assets/sample_faces [identities] [variants] [size] [seed]
//! ```

use std::path::PathBuf;

fn main() {
    let mut args = std::env::args().skip(1);
    let root: PathBuf = args
        .next()
        .unwrap_or_else(|| "assets/sample_faces".into())
        .into();
    let identities: usize = args.next().map_or(10, |v| v.parse().expect("identities"));
    let variants: usize = args.next().map_or(3, |v| v.parse().expect("variants"));
    let size: usize = args.next().map_or(128, |v| v.parse().expect("size"));
    let seed: u64 = args.next().map_or(20240, |v| v.parse().expect("seed"));

    advmask::synthfaces::write_dataset(&root, identities, variants, size, seed)
        .expect("dataset generation failed");
    println!(
        "wrote {identities} identities x {variants} variants at {size}px (seed {seed}) to {}",
        root.display()
    );
}
