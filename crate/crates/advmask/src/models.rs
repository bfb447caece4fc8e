//! Face embedding models: a differentiable reference architecture, alignment,
//! and a registry for instantiating named models from configuration.
//!
//! The bundled architecture is deliberately small — average-pool, one tanh
//! hidden layer, a linear projection, then L2 normalization — but exposes the
//! same surface a production face recognizer would: it maps an aligned face
//! to a unit-length embedding and can backpropagate the cosine loss to the
//! input pixels. "Toy" instances draw fixed random weights from a seed;
//! "tiny" instances load trained weights from a JSON file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2, Array3};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canvas::{FaceImage, PixelGrid};
use crate::maskgeom::{fit_similarity, FaceLandmarks, MaskGeomError};
use crate::rst::{build_matrix, resize_bilinear, resize_bilinear_vjp, warp_bilinear_to};

#[derive(Error, Debug)]
pub enum ModelError {
    #[error("embedding has zero or non-finite norm")]
    DegenerateEmbedding,
    #[error("input size {input} is not divisible by pool size {pool}")]
    BadPool { input: usize, pool: usize },
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("failed to read model weights {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write model weights {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid model weights: {0}")]
    Weights(#[from] serde_json::Error),
    #[error("invalid registry file {path}: {message}")]
    Registry { path: String, message: String },
    #[error("model {0:?} is not present in the registry")]
    UnknownModel(String),
    #[error("unknown adapter {0:?} (expected \"toy\" or \"tiny\")")]
    UnknownAdapter(String),
    #[error("adapter {adapter:?} requires the {field:?} field")]
    MissingField {
        adapter: &'static str,
        field: &'static str,
    },
    #[error(transparent)]
    Alignment(#[from] MaskGeomError),
}

/// Unit-length embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Array1<f64>);

impl Embedding {
    /// Normalizes a raw vector to unit length.
    pub fn from_raw(raw: Array1<f64>) -> Result<Self, ModelError> {
        let norm = raw.dot(&raw).sqrt();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(ModelError::DegenerateEmbedding);
        }
        Ok(Self(raw / norm))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    /// Cosine similarity; both operands are unit length, so this is a dot
    /// product clamped against rounding drift.
    pub fn cosine(&self, other: &Embedding) -> Result<f64, ModelError> {
        if self.dim() != other.dim() {
            return Err(ModelError::DimMismatch(self.dim(), other.dim()));
        }
        Ok(self.0.dot(&other.0).clamp(-1.0, 1.0))
    }
}

/// Descriptive metadata every embedder carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSpec {
    pub name: String,
    /// Square input resolution the model resizes faces to.
    pub input_size: usize,
    /// Embedding dimensionality.
    pub dim: usize,
}

/// A face embedding model with white-box gradient access.
pub trait Embedder: Send + Sync {
    fn spec(&self) -> &EmbeddingSpec;

    /// Embeds an image of any resolution (resized internally).
    fn embed(&self, image: &FaceImage) -> Embedding;

    /// Cosine loss `1 - cos(embed(x), target)` and its gradient with respect
    /// to the pixels of `x`, at the resolution of `x`.
    fn loss_grad(&self, image: &FaceImage, target: &Embedding) -> (f64, PixelGrid);
}

/// Shared, thread-safe handle to an embedder.
pub type ModelHandle = Arc<dyn Embedder>;

/// Average-pool → tanh layer → linear projection → L2 normalize.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmallEmbedder {
    spec: EmbeddingSpec,
    /// Pool grid edge; `input_size` must be a multiple of it.
    pool: usize,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
}

/// Intermediate activations kept for backpropagation.
struct Forward {
    pooled: Array1<f64>,
    hidden: Array1<f64>,
    raw_norm: f64,
    unit: Array1<f64>,
}

impl SmallEmbedder {
    /// Fixed-random instance; the same `(seed, shape)` always yields the
    /// same weights.
    pub fn random(
        name: &str,
        seed: u64,
        input_size: usize,
        pool: usize,
        hidden: usize,
        dim: usize,
    ) -> Result<Self, ModelError> {
        if pool == 0 || input_size % pool != 0 {
            return Err(ModelError::BadPool {
                input: input_size,
                pool,
            });
        }
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let features = pool * pool * 3;
        let mut normal = |n: usize, scale: f64| {
            Array1::from_iter(
                (0..n).map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) * scale),
            )
        };
        let w1 = normal(hidden * features, 1.0 / (features as f64).sqrt())
            .into_shape_with_order((hidden, features))
            .expect("w1 shape");
        let b1 = normal(hidden, 0.1);
        let w2 = normal(dim * hidden, 1.0 / (hidden as f64).sqrt())
            .into_shape_with_order((dim, hidden))
            .expect("w2 shape");
        Ok(Self {
            spec: EmbeddingSpec {
                name: name.to_string(),
                input_size,
                dim,
            },
            pool,
            w1,
            b1,
            w2,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.b1.len()
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|source| ModelError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let model: SmallEmbedder = serde_json::from_slice(&bytes)?;
        if model.pool == 0 || model.spec.input_size % model.pool != 0 {
            return Err(ModelError::BadPool {
                input: model.spec.input_size,
                pool: model.pool,
            });
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|source| ModelError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    fn block(&self) -> usize {
        self.spec.input_size / self.pool
    }

    /// Mean over each `block×block` cell, flattened channel-minor.
    fn avgpool(&self, data: &Array3<f64>) -> Array1<f64> {
        let b = self.block();
        let area = (b * b) as f64;
        let p = self.pool;
        let mut out = Array1::zeros(p * p * 3);
        for cy in 0..p {
            for cx in 0..p {
                for ch in 0..3 {
                    let mut acc = 0.0;
                    for y in cy * b..(cy + 1) * b {
                        for x in cx * b..(cx + 1) * b {
                            acc += data[(y, x, ch)];
                        }
                    }
                    out[(cy * p + cx) * 3 + ch] = acc / area;
                }
            }
        }
        out
    }

    /// Transpose of [`Self::avgpool`].
    fn avgpool_vjp(&self, upstream: &Array1<f64>) -> Array3<f64> {
        let s = self.spec.input_size;
        let b = self.block();
        let area = (b * b) as f64;
        let p = self.pool;
        let mut grad = Array3::zeros((s, s, 3));
        for cy in 0..p {
            for cx in 0..p {
                for ch in 0..3 {
                    let g = upstream[(cy * p + cx) * 3 + ch] / area;
                    for y in cy * b..(cy + 1) * b {
                        for x in cx * b..(cx + 1) * b {
                            grad[(y, x, ch)] = g;
                        }
                    }
                }
            }
        }
        grad
    }

    fn forward(&self, resized: &Array3<f64>) -> Forward {
        let pooled = self.avgpool(resized);
        let pre = self.w1.dot(&pooled) + &self.b1;
        let hidden = pre.mapv(f64::tanh);
        let raw = self.w2.dot(&hidden);
        let raw_norm = raw.dot(&raw).sqrt().max(1e-30);
        let unit = raw / raw_norm;
        Forward {
            pooled,
            hidden,
            raw_norm,
            unit,
        }
    }

    /// Backpropagates `d(loss)/d(unit)` to the pooled features, also
    /// returning weight gradients when training.
    fn backward_to_pooled(&self, fwd: &Forward, d_unit: &Array1<f64>) -> LayerGrads {
        // d(raw) of z/|z| applied to upstream u: (u - (e·u) e) / |z|
        let e_dot = fwd.unit.dot(d_unit);
        let d_raw = (d_unit - &(&fwd.unit * e_dot)) / fwd.raw_norm;
        let d_hidden = self.w2.t().dot(&d_raw);
        let one_minus_h2 = fwd.hidden.mapv(|h| 1.0 - h * h);
        let d_pre = &d_hidden * &one_minus_h2;
        let d_pooled = self.w1.t().dot(&d_pre);
        LayerGrads {
            d_pooled,
            d_pre,
            d_raw,
        }
    }

    /// One SGD step on the cosine loss against `target`; returns the loss
    /// before the step.
    pub fn train_step(&mut self, image: &FaceImage, target: &Embedding, lr: f64) -> f64 {
        let s = self.spec.input_size;
        let resized = resize_bilinear(image.data(), s, s);
        let fwd = self.forward(&resized);
        let loss = 1.0 - fwd.unit.dot(target.as_array());
        let d_unit = target.as_array().mapv(|t| -t);
        let grads = self.backward_to_pooled(&fwd, &d_unit);

        // outer products give the weight gradients
        let d_w2 = outer(&grads.d_raw, &fwd.hidden);
        let d_w1 = outer(&grads.d_pre, &fwd.pooled);
        self.w2.scaled_add(-lr, &d_w2);
        self.w1.scaled_add(-lr, &d_w1);
        self.b1.scaled_add(-lr, &grads.d_pre);
        loss
    }
}

struct LayerGrads {
    d_pooled: Array1<f64>,
    d_pre: Array1<f64>,
    d_raw: Array1<f64>,
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (n, m) = (a.len(), b.len());
    Array2::from_shape_fn((n, m), |(i, j)| a[i] * b[j])
}

impl Embedder for SmallEmbedder {
    fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    fn embed(&self, image: &FaceImage) -> Embedding {
        let s = self.spec.input_size;
        let resized = resize_bilinear(image.data(), s, s);
        let fwd = self.forward(&resized);
        Embedding(fwd.unit)
    }

    fn loss_grad(&self, image: &FaceImage, target: &Embedding) -> (f64, PixelGrid) {
        let s = self.spec.input_size;
        let (h, w) = (image.height(), image.width());
        let resized = resize_bilinear(image.data(), s, s);
        let fwd = self.forward(&resized);
        let loss = 1.0 - fwd.unit.dot(target.as_array()).clamp(-1.0, 1.0);

        let d_unit = target.as_array().mapv(|t| -t);
        let grads = self.backward_to_pooled(&fwd, &d_unit);
        let d_resized = self.avgpool_vjp(&grads.d_pooled);
        let grad = resize_bilinear_vjp(&d_resized, w, h);
        (loss, grad)
    }
}

/// Warps a face onto the canonical `size`×`size` frame using its landmarks.
pub fn align_face(
    image: &FaceImage,
    landmarks: &FaceLandmarks,
    canonical: &FaceLandmarks,
    size: usize,
) -> Result<FaceImage, ModelError> {
    let params = fit_similarity(landmarks, canonical)?;
    // backward warping pulls canonical coordinates back to the face
    let pull = build_matrix(&params).inverse();
    Ok(warp_bilinear_to(image, &pull, size, size))
}

/// One registry row: how to instantiate a named model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRegistryEntry {
    pub name: String,
    /// `"toy"` (fixed random weights from `seed`) or `"tiny"` (weights file).
    pub adapter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Square input resolution; ignored by `"tiny"`, whose weights file
    /// already carries the geometry.
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_pool")]
    pub pool: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Decision threshold for success-rate reporting; absent means the
    /// harness calibrates one from impostor scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

fn default_input_size() -> usize {
    64
}
fn default_dim() -> usize {
    64
}
fn default_pool() -> usize {
    4
}
fn default_hidden() -> usize {
    48
}

/// Named collection of model definitions, loadable from TOML or JSON.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelRegistry {
    #[serde(default)]
    pub models: Vec<ModelRegistryEntry>,
}

impl ModelRegistry {
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let registry: ModelRegistry = if is_json {
            serde_json::from_str(&text).map_err(|e| ModelError::Registry {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        } else {
            toml::from_str(&text).map_err(|e| ModelError::Registry {
                path: path.display().to_string(),
                message: e.to_string(),
            })?
        };
        Ok(registry)
    }

    pub fn names(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.name.as_str()).collect()
    }

    pub fn entry(&self, name: &str) -> Result<&ModelRegistryEntry, ModelError> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| ModelError::UnknownModel(name.to_string()))
    }

    /// Instantiates a model by name. Relative weight paths resolve against
    /// `base_dir` (typically the registry file's directory).
    pub fn instantiate(&self, name: &str, base_dir: &Path) -> Result<ModelHandle, ModelError> {
        let entry = self.entry(name)?;
        match entry.adapter.as_str() {
            "toy" => {
                let seed = entry.seed.ok_or(ModelError::MissingField {
                    adapter: "toy",
                    field: "seed",
                })?;
                let model = SmallEmbedder::random(
                    &entry.name,
                    seed,
                    entry.input_size,
                    entry.pool,
                    entry.hidden,
                    entry.dim,
                )?;
                Ok(Arc::new(model))
            }
            "tiny" => {
                let weights = entry.weights.as_ref().ok_or(ModelError::MissingField {
                    adapter: "tiny",
                    field: "weights",
                })?;
                let path = if weights.is_absolute() {
                    weights.clone()
                } else {
                    base_dir.join(weights)
                };
                let mut model = SmallEmbedder::load(&path)?;
                model.spec.name = entry.name.clone();
                Ok(Arc::new(model))
            }
            other => Err(ModelError::UnknownAdapter(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskgeom::canonical_landmarks;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_image(w: usize, h: usize, phase: f64) -> FaceImage {
        FaceImage::from_fn(w, h, |x, y, c| {
            0.5 + 0.45
                * ((x as f64 * 0.11 + phase) + (y as f64 * 0.07) + c as f64).sin()
        })
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let model = SmallEmbedder::random("a", 3, 32, 4, 24, 32).unwrap();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = FaceImage::from_fn(48, 48, |_, _, _| rng.random_range(0.0..1.0));
            let e = model.embed(&img);
            let norm = e.as_array().dot(e.as_array()).sqrt();
            assert!((norm - 1.0).abs() < 1e-12, "norm {norm}");
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = SmallEmbedder::random("a", 9, 32, 4, 16, 24).unwrap();
        let b = SmallEmbedder::random("b", 9, 32, 4, 16, 24).unwrap();
        let img = smooth_image(40, 40, 0.3);
        assert_eq!(a.embed(&img).as_array(), b.embed(&img).as_array());
        let c = SmallEmbedder::random("c", 10, 32, 4, 16, 24).unwrap();
        assert_ne!(a.embed(&img).as_array(), c.embed(&img).as_array());
    }

    #[test]
    fn rejects_indivisible_pool() {
        assert!(matches!(
            SmallEmbedder::random("bad", 0, 33, 4, 8, 8),
            Err(ModelError::BadPool { .. })
        ));
    }

    #[test]
    fn cosine_is_symmetric_and_bounded() {
        let model = SmallEmbedder::random("a", 1, 32, 4, 16, 16).unwrap();
        let e1 = model.embed(&smooth_image(32, 32, 0.0));
        let e2 = model.embed(&smooth_image(32, 32, 2.0));
        let c12 = e1.cosine(&e2).unwrap();
        let c21 = e2.cosine(&e1).unwrap();
        assert_eq!(c12, c21);
        assert!((-1.0..=1.0).contains(&c12));
        assert!((e1.cosine(&e1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_grad_matches_finite_differences() {
        // the full pipeline a gradient flows through: resize, pool, net, loss
        let model = SmallEmbedder::random("fd", 5, 8, 2, 10, 12).unwrap();
        let target = model.embed(&smooth_image(8, 8, 1.5));
        let img = smooth_image(8, 8, 0.2);
        let (_, grad) = model.loss_grad(&img, &target);

        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    let mut plus = img.clone();
                    plus.data_mut()[(y, x, c)] += h;
                    let mut minus = img.clone();
                    minus.data_mut()[(y, x, c)] -= h;
                    let lp = model.loss_grad(&plus, &target).0;
                    let lm = model.loss_grad(&minus, &target).0;
                    let fd = (lp - lm) / (2.0 * h);
                    let ga = grad[(y, x, c)];
                    let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-8);
                    max_rel = max_rel.max(rel);
                }
            }
        }
        assert!(max_rel <= 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn weights_round_trip_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let model = SmallEmbedder::random("saved", 77, 32, 4, 12, 16).unwrap();
        model.save(&path).unwrap();
        let loaded = SmallEmbedder::load(&path).unwrap();
        let img = smooth_image(32, 32, 0.9);
        assert_eq!(
            model.embed(&img).as_array(),
            loaded.embed(&img).as_array()
        );
    }

    #[test]
    fn train_step_reduces_loss_toward_target() {
        let mut model = SmallEmbedder::random("train", 21, 16, 4, 16, 12).unwrap();
        let img = smooth_image(16, 16, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let raw = Array1::from_iter((0..12).map(|_| rng.random_range(-1.0..1.0)));
        let target = Embedding::from_raw(raw).unwrap();
        let before = model.train_step(&img, &target, 0.0);
        for _ in 0..200 {
            model.train_step(&img, &target, 0.05);
        }
        let after = 1.0 - model.embed(&img).cosine(&target).unwrap();
        assert!(
            after < before - 0.05,
            "loss did not improve: {before} -> {after}"
        );
    }

    #[test]
    fn align_face_restores_canonical_frame() {
        let size = 128;
        let canonical = canonical_landmarks(size);
        let face = smooth_image(size, size, 0.7);

        // render the face displaced by a known similarity, then align back
        let truth = crate::rst::SimilarityTransformParams {
            t_x: 6.0,
            t_y: -4.0,
            theta: 0.12,
            scale: 1.08,
        };
        let fwd = crate::rst::rst_transform(&truth, size, size, crate::rst::Pivot::Center);
        let displaced = warp_bilinear_to(&face, &fwd.inverse(), size, size);
        let moved_lm = canonical.map(|x, y| fwd.map_point((x, y)));
        let aligned = align_face(&displaced, &moved_lm, &canonical, size).unwrap();

        // compare away from borders: two warps each pull corner pixels at
        // most ~25 px (|r|·(|θ| + |s−1|) + |t|), so a 40 px margin clears
        // every zero-filled fringe
        let mut max_err = 0.0f64;
        for y in 40..size - 40 {
            for x in 40..size - 40 {
                for c in 0..3 {
                    max_err = max_err.max((aligned.get(x, y, c) - face.get(x, y, c)).abs());
                }
            }
        }
        assert!(max_err < 0.03, "interior mismatch {max_err}");
    }

    #[test]
    fn registry_instantiates_adapters() {
        let dir = tempfile::tempdir().unwrap();
        let weights_path = dir.path().join("tiny_a.json");
        SmallEmbedder::random("w", 4, 32, 4, 8, 16)
            .unwrap()
            .save(&weights_path)
            .unwrap();

        let toml_path = dir.path().join("models.toml");
        std::fs::write(
            &toml_path,
            r#"
[[models]]
name = "toy_a"
adapter = "toy"
seed = 12
input_size = 32
dim = 16

[[models]]
name = "tiny_a"
adapter = "tiny"
weights = "tiny_a.json"
input_size = 32
"#,
        )
        .unwrap();

        let reg = ModelRegistry::load(&toml_path).unwrap();
        assert_eq!(reg.names(), vec!["toy_a", "tiny_a"]);
        let toy = reg.instantiate("toy_a", dir.path()).unwrap();
        assert_eq!(toy.spec().input_size, 32);
        assert_eq!(toy.spec().dim, 16);
        let tiny = reg.instantiate("tiny_a", dir.path()).unwrap();
        assert_eq!(tiny.spec().name, "tiny_a");

        assert!(matches!(
            reg.instantiate("nope", dir.path()),
            Err(ModelError::UnknownModel(_))
        ));

        // JSON registries parse too
        let json_path = dir.path().join("models.json");
        std::fs::write(
            &json_path,
            r#"{"models": [{"name": "j", "adapter": "toy", "seed": 1, "input_size": 16, "dim": 8, "pool": 2, "hidden": 6}]}"#,
        )
        .unwrap();
        let jreg = ModelRegistry::load(&json_path).unwrap();
        assert!(jreg.instantiate("j", dir.path()).is_ok());
    }

    #[test]
    fn registry_validates_required_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("models.toml");
        std::fs::write(
            &path,
            "[[models]]\nname = \"x\"\nadapter = \"toy\"\ninput_size = 32\n",
        )
        .unwrap();
        let reg = ModelRegistry::load(&path).unwrap();
        assert!(matches!(
            reg.instantiate("x", dir.path()),
            Err(ModelError::MissingField {
                adapter: "toy",
                field: "seed"
            })
        ));
    }
}
