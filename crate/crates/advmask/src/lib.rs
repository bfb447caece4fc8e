//! Adversarial face-mask toolkit.
//!
//! Builds impersonation attacks that confine all perturbations to a binary
//! face-mask region, so the result can be cropped out and worn. The attack
//! family covers:
//!
//! - `PASTE`: composite the target's mask region onto the source, no
//!   optimization;
//! - `AM`: multi-step signed-gradient descent on a cosine embedding loss,
//!   clipped to an L-inf ball around the initial composite;
//! - `RSTAM`: the same update with a fresh random similarity transform
//!   (4 degrees of freedom, one hyperparameter) applied to the working image
//!   before every gradient evaluation, which improves black-box transfer;
//! - hard and meta gradient ensembles over several embedding models.
//!
//! The crate also ships mask geometry (template warping from facial
//! landmarks), a differentiable bilinear warp/resize core, small deterministic
//! embedding models for hermetic testing, an evaluation harness (attack
//! success rate, mean confidence score, FAR-calibrated thresholds, beta
//! sweeps), and pluggable verification-backend clients with a local mock.
//!
//! With the `parallel` feature (on by default) batch loops run on rayon;
//! results are bit-identical to the sequential fallback.

pub mod attack;
pub mod canvas;
pub mod eval;
pub mod maskgeom;
pub mod models;
pub mod parallel;
pub mod report;
pub mod rst;
pub mod scoring;
pub mod synthfaces;

pub use attack::{AttackConfig, AttackMethod, AttackResult, EnsembleMode, NormMode};
pub use canvas::{FaceImage, PixelGrid};
pub use maskgeom::{BinaryMask, FaceLandmarks};
pub use models::{Embedder, Embedding, EmbeddingSpec, ModelHandle};
pub use rst::{SimilarityTransform, SimilarityTransformParams};

/// Default attack canvas edge in pixels; images are resized here before attack.
pub const CANVAS_SIZE: usize = 512;
