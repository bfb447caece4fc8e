//! Artifact plumbing: content addressing and the JSON shapes written to
//! disk by the attack command.

use std::collections::BTreeMap;
use std::path::Path;

use advmask::canvas::FaceImage;
use advmask::maskgeom::BinaryMask;
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Short content address: the first 8 bytes of a SHA-256 over the parts,
/// each part terminated by a NUL so concatenations cannot collide.
pub fn hash16(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of an image's exact pixel values (dimensions and f64 bits), so
/// the content address survives re-encoding of the source file.
pub fn image_digest(image: &FaceImage) -> String {
    let mut hasher = Sha256::new();
    let (w, h) = image.dims();
    hasher.update((w as u64).to_le_bytes());
    hasher.update((h as u64).to_le_bytes());
    for &v in image.data() {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hex(&hasher.finalize())
}

/// Digest of a binary mask's shape and bits.
pub fn mask_digest(mask: &BinaryMask) -> String {
    let mut hasher = Sha256::new();
    let (w, h) = mask.dims();
    hasher.update((w as u64).to_le_bytes());
    hasher.update((h as u64).to_le_bytes());
    for &bit in mask.data() {
        hasher.update([bit]);
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing JSON artifact")?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Physical print size of the mask crop at the configured resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhysicalSize {
    pub dpi: u32,
    pub width_px: usize,
    pub height_px: usize,
    pub width_in: f64,
    pub height_in: f64,
}

impl PhysicalSize {
    pub fn new(width_px: usize, height_px: usize, dpi: u32) -> Self {
        Self {
            dpi,
            width_px,
            height_px,
            width_in: width_px as f64 / dpi as f64,
            height_in: height_px as f64 / dpi as f64,
        }
    }
}

/// Per-pair record, written as `pair.json` inside the pair's directory.
/// Fully determined by the content address, so an existing file is reused
/// verbatim on rerun.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairEntry {
    /// Content address of (attack config, canvas, mask, both face images).
    pub id: String,
    pub source_identity: String,
    pub source_name: String,
    pub target_identity: String,
    pub target_name: String,
    /// The derived seed this pair's attack ran with.
    pub seed: u64,
    pub queries: usize,
    pub final_loss: Option<f64>,
    /// Surrogate model name → cosine between the adversarial image and the
    /// target (the white-box view of the attack).
    pub surrogate_cosines: BTreeMap<String, f64>,
    pub mask_crop: PhysicalSize,
}

/// One failed pair in the run summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairFailure {
    pub index: usize,
    pub error: String,
}

/// A pair entry tagged with its position in the sampled pair list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexedEntry {
    pub index: usize,
    #[serde(flatten)]
    pub entry: PairEntry,
}
