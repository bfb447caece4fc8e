//! The impersonation attack family: PASTE, AM, RSTAM, and two ensembles.
//!
//! All attacks share the same skeleton. The adversarial example starts as the
//! source face with the target's mask region pasted on, and iterative methods
//! then descend the cosine loss `1 - cos(f(x), f(target))` while confining
//! every change to the mask and to an epsilon-ball around the paste:
//!
//! ```text
//! x_0   = source ⊙ (1-M) + target ⊙ M
//! x_n+1 = Clip[0,1]( Clip[x_0±ε]( x_n - α·step(g_n) ⊙ M ) )
//! ```
//!
//! `step` is `sign(g)` under the L∞ norm and `g / |g|₂` (global norm, taken
//! before masking) under L2. RSTAM differs from AM only in where the gradient
//! is evaluated: each iteration draws a fresh random similarity transform,
//! warps the current iterate, and pulls the gradient back through the warp,
//! which simulates the misalignment a physical mask sees. The hard ensemble
//! averages gradients over several models; the meta ensemble instead splits
//! models into a random query model and support models each iteration, taking
//! a one-step lookahead per support model and scoring it with the query model.
//!
//! Unmasked pixels are never written, so they survive bit-for-bit; with
//! `beta = 0` the RST machinery degenerates to the identity and RSTAM
//! reproduces AM exactly; with zero iterations every method is PASTE.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canvas::{FaceImage, PixelGrid};
use crate::maskgeom::{composite, BinaryMask, MaskGeomError};
use crate::models::{Embedding, ModelError, ModelHandle};
use crate::rst::{
    rst_transform, sample_rst, warp_bilinear, warp_bilinear_vjp, Pivot, RstError,
    SimilarityTransformParams,
};

pub const DEFAULT_EPSILON: f64 = 0.3;
pub const DEFAULT_ALPHA_LINF: f64 = 0.003;
pub const DEFAULT_ALPHA_L2: f64 = 2.0;
pub const DEFAULT_ITERS: usize = 2000;
pub const DEFAULT_BETA: f64 = 0.2;

#[derive(Error, Debug)]
pub enum AttackError {
    #[error("invalid {field}: {message}")]
    InvalidConfig {
        field: &'static str,
        message: String,
    },
    #[error("method needs {expected} model(s), got {got}")]
    WrongModelCount { expected: &'static str, got: usize },
    #[error("loss became non-finite at iteration {iteration} (model {model:?})")]
    NonFiniteLoss { iteration: usize, model: String },
    #[error("gradient vanished at iteration {iteration}; cannot take an L2 step")]
    ZeroGradient { iteration: usize },
    #[error(transparent)]
    Mask(#[from] MaskGeomError),
    #[error(transparent)]
    Rst(#[from] RstError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Perturbation norm the update step is bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    #[default]
    Linf,
    L2,
}

/// Which attack to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMethod {
    /// Composite only; no optimization.
    Paste,
    /// Adversarial mask without random transforms.
    Am,
    /// Random-similarity-transform adversarial mask, single surrogate.
    Rstam,
    /// Hard ensemble: mean gradient over all models.
    RstamAll,
    /// Random meta-optimization ensemble.
    RstamMeta,
}

/// How the hard ensemble draws transforms across its members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    /// Every model sees its own freshly drawn transform each iteration.
    #[default]
    Independent,
    /// One transform per iteration, shared by all models.
    SharedDraw,
}

/// Full parameterization of an attack run; serializable so runs can be
/// reproduced from a snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    #[serde(default)]
    pub norm: NormMode,
    pub epsilon: f64,
    pub alpha: f64,
    pub iters: usize,
    pub beta: f64,
    pub seed: u64,
    #[serde(default)]
    pub ensemble_mode: EnsembleMode,
    #[serde(default)]
    pub pivot: Pivot,
}

impl AttackConfig {
    /// Standard settings: `ε = 0.3`, `N = 2000`, `β = 0.2`, and a step size
    /// matched to the norm (0.003 for L∞, 2.0 for L2).
    pub fn new(method: AttackMethod, norm: NormMode) -> Self {
        Self {
            method,
            norm,
            epsilon: DEFAULT_EPSILON,
            alpha: match norm {
                NormMode::Linf => DEFAULT_ALPHA_LINF,
                NormMode::L2 => DEFAULT_ALPHA_L2,
            },
            iters: DEFAULT_ITERS,
            beta: DEFAULT_BETA,
            seed: 0,
            ensemble_mode: EnsembleMode::Independent,
            pivot: Pivot::Center,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(AttackError::InvalidConfig {
                field: "epsilon",
                message: format!("must lie in (0, 1], got {}", self.epsilon),
            });
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(AttackError::InvalidConfig {
                field: "alpha",
                message: format!("must be positive and finite, got {}", self.alpha),
            });
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(AttackError::InvalidConfig {
                field: "beta",
                message: format!("must lie in [0, 1), got {}", self.beta),
            });
        }
        Ok(())
    }
}

/// Outcome of an attack run.
#[derive(Debug, Clone)]
pub struct AttackResult {
    /// The adversarial composite, same size as the source.
    pub x_adv: FaceImage,
    /// `x_adv ⊙ M`: the printable mask layer on a black background.
    pub adv_mask: FaceImage,
    /// Loss observed at each iteration before its update step; for
    /// ensembles this is the mean over the iteration's gradient evaluations.
    pub loss_trace: Vec<f64>,
    /// Number of gradient evaluations consumed.
    pub queries: usize,
}

/// `sign` that maps exact zero (either sign) to zero rather than ±1.
#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Applies one update step in place, touching only masked pixels.
struct Stepper<'a> {
    x0: &'a FaceImage,
    mask: &'a BinaryMask,
    epsilon: f64,
    alpha: f64,
    norm: NormMode,
}

impl Stepper<'_> {
    fn step(&self, x: &mut FaceImage, g: &PixelGrid, iteration: usize) -> Result<(), AttackError> {
        let (w, h) = x.dims();
        let l2_coef = match self.norm {
            NormMode::Linf => 0.0,
            NormMode::L2 => {
                let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(AttackError::ZeroGradient { iteration });
                }
                self.alpha / norm
            }
        };
        for y in 0..h {
            for x_i in 0..w {
                if !self.mask.is_set(x_i, y) {
                    continue;
                }
                for c in 0..3 {
                    let gv = g[(y, x_i, c)];
                    let delta = match self.norm {
                        NormMode::Linf => self.alpha * sign(gv),
                        NormMode::L2 => l2_coef * gv,
                    };
                    let base = self.x0.get(x_i, y, c);
                    let v = (x.get(x_i, y, c) - delta)
                        .clamp(base - self.epsilon, base + self.epsilon)
                        .clamp(0.0, 1.0);
                    x.set(x_i, y, c, v);
                }
            }
        }
        Ok(())
    }
}

fn masked_layer(x: &FaceImage, mask: &BinaryMask) -> FaceImage {
    let (w, h) = x.dims();
    let mut out = FaceImage::zeros(w, h);
    for y in 0..h {
        for x_i in 0..w {
            if mask.is_set(x_i, y) {
                for c in 0..3 {
                    out.set(x_i, y, c, x.get(x_i, y, c));
                }
            }
        }
    }
    out
}

fn check_finite(loss: f64, iteration: usize, model: &str) -> Result<(), AttackError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(AttackError::NonFiniteLoss {
            iteration,
            model: model.to_string(),
        })
    }
}

/// Composites the target's mask region onto the source. The no-optimization
/// baseline, and the initialization of every other method.
pub fn paste_attack(
    source: &FaceImage,
    target: &FaceImage,
    mask: &BinaryMask,
) -> Result<AttackResult, AttackError> {
    let x_adv = composite(source, target, mask)?;
    let adv_mask = masked_layer(&x_adv, mask);
    Ok(AttackResult {
        x_adv,
        adv_mask,
        loss_trace: Vec::new(),
        queries: 0,
    })
}

/// Adversarial mask without random transforms: plain masked descent on the
/// surrogate's cosine loss.
pub fn am_attack(
    source: &FaceImage,
    target: &FaceImage,
    mask: &BinaryMask,
    model: &dyn crate::models::Embedder,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    config.validate()?;
    let x0 = composite(source, target, mask)?;
    let target_emb = model.embed(target);
    let stepper = Stepper {
        x0: &x0,
        mask,
        epsilon: config.epsilon,
        alpha: config.alpha,
        norm: config.norm,
    };
    let mut x = x0.clone();
    let mut trace = Vec::with_capacity(config.iters);
    for n in 0..config.iters {
        let (loss, g) = model.loss_grad(&x, &target_emb);
        check_finite(loss, n, &model.spec().name)?;
        trace.push(loss);
        stepper.step(&mut x, &g, n)?;
    }
    let adv_mask = masked_layer(&x, mask);
    Ok(AttackResult {
        x_adv: x,
        adv_mask,
        loss_trace: trace,
        queries: config.iters,
    })
}

/// Single-surrogate RSTAM: every iteration evaluates the gradient through a
/// freshly drawn random similarity transform of the current iterate.
pub fn rstam_attack(
    source: &FaceImage,
    target: &FaceImage,
    mask: &BinaryMask,
    model: &dyn crate::models::Embedder,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    config.validate()?;
    let x0 = composite(source, target, mask)?;
    let (w, h) = x0.dims();
    let target_emb = model.embed(target);
    let stepper = Stepper {
        x0: &x0,
        mask,
        epsilon: config.epsilon,
        alpha: config.alpha,
        norm: config.norm,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = x0.clone();
    let mut trace = Vec::with_capacity(config.iters);
    for n in 0..config.iters {
        let params = sample_rst(config.beta, w, h, &mut rng)?;
        let t = rst_transform(&params, w, h, config.pivot);
        let warped = warp_bilinear(&x, &t);
        let (loss, g_warped) = model.loss_grad(&warped, &target_emb);
        check_finite(loss, n, &model.spec().name)?;
        trace.push(loss);
        let g = warp_bilinear_vjp(&g_warped, &t);
        stepper.step(&mut x, &g, n)?;
    }
    let adv_mask = masked_layer(&x, mask);
    Ok(AttackResult {
        x_adv: x,
        adv_mask,
        loss_trace: trace,
        queries: config.iters,
    })
}

/// One model's gradient evaluation through a given transform.
fn grad_through_rst(
    x: &FaceImage,
    model: &dyn crate::models::Embedder,
    target_emb: &Embedding,
    params: &SimilarityTransformParams,
    width: usize,
    height: usize,
    pivot: Pivot,
) -> (f64, PixelGrid) {
    let t = rst_transform(params, width, height, pivot);
    let warped = warp_bilinear(x, &t);
    let (loss, g_warped) = model.loss_grad(&warped, target_emb);
    (loss, warp_bilinear_vjp(&g_warped, &t))
}

/// Hard ensemble: the update direction is the mean of per-model gradients.
/// By default each model draws its own transform; [`EnsembleMode::SharedDraw`]
/// makes all models share one draw per iteration.
pub fn rstam_all_attack(
    source: &FaceImage,
    target: &FaceImage,
    mask: &BinaryMask,
    models: &[ModelHandle],
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    config.validate()?;
    if models.is_empty() {
        return Err(AttackError::WrongModelCount {
            expected: "at least one",
            got: 0,
        });
    }
    let m = models.len();
    let x0 = composite(source, target, mask)?;
    let (w, h) = x0.dims();
    let target_embs: Vec<Embedding> = models.iter().map(|f| f.embed(target)).collect();
    let stepper = Stepper {
        x0: &x0,
        mask,
        epsilon: config.epsilon,
        alpha: config.alpha,
        norm: config.norm,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = x0.clone();
    let mut trace = Vec::with_capacity(config.iters);
    for n in 0..config.iters {
        let shared = match config.ensemble_mode {
            EnsembleMode::SharedDraw => Some(sample_rst(config.beta, w, h, &mut rng)?),
            EnsembleMode::Independent => None,
        };
        let mut g_sum: Option<PixelGrid> = None;
        let mut loss_sum = 0.0;
        for (model, target_emb) in models.iter().zip(&target_embs) {
            let params = match shared {
                Some(p) => p,
                None => sample_rst(config.beta, w, h, &mut rng)?,
            };
            let (loss, g) =
                grad_through_rst(&x, model.as_ref(), target_emb, &params, w, h, config.pivot);
            check_finite(loss, n, &model.spec().name)?;
            loss_sum += loss;
            g_sum = Some(match g_sum {
                None => g,
                Some(mut acc) => {
                    acc += &g;
                    acc
                }
            });
        }
        let g = g_sum.expect("ensemble is non-empty") / m as f64;
        trace.push(loss_sum / m as f64);
        stepper.step(&mut x, &g, n)?;
    }
    let adv_mask = masked_layer(&x, mask);
    Ok(AttackResult {
        x_adv: x,
        adv_mask,
        loss_trace: trace,
        queries: m * config.iters,
    })
}

/// Random meta-optimization ensemble.
///
/// Each iteration picks one model as the query model uniformly at random.
/// Every other model serves as a support model: its gradient at the current
/// iterate is computed, a one-step lookahead from the current iterate along
/// that gradient is formed, and the query model's gradient is evaluated at
/// the lookahead (each evaluation through its own fresh transform). The
/// update direction is the sum of all support and query gradients divided by
/// the number of support models, costing `2(m-1)` evaluations per iteration.
pub fn rstam_meta_attack(
    source: &FaceImage,
    target: &FaceImage,
    mask: &BinaryMask,
    models: &[ModelHandle],
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    config.validate()?;
    let m = models.len();
    if m < 2 {
        return Err(AttackError::WrongModelCount {
            expected: "at least two",
            got: m,
        });
    }
    let x0 = composite(source, target, mask)?;
    let (w, h) = x0.dims();
    let target_embs: Vec<Embedding> = models.iter().map(|f| f.embed(target)).collect();
    let stepper = Stepper {
        x0: &x0,
        mask,
        epsilon: config.epsilon,
        alpha: config.alpha,
        norm: config.norm,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = x0.clone();
    let mut trace = Vec::with_capacity(config.iters);
    let evals_per_iter = 2 * (m - 1);
    for n in 0..config.iters {
        let que = rng.random_range(0..m);
        let mut g_total: Option<PixelGrid> = None;
        let mut loss_sum = 0.0;
        let mut add = |g: PixelGrid| {
            g_total = Some(match g_total.take() {
                None => g,
                Some(mut acc) => {
                    acc += &g;
                    acc
                }
            });
        };
        for i in 0..m {
            if i == que {
                continue;
            }
            let params_sup = sample_rst(config.beta, w, h, &mut rng)?;
            let (loss_sup, g_sup) = grad_through_rst(
                &x,
                models[i].as_ref(),
                &target_embs[i],
                &params_sup,
                w,
                h,
                config.pivot,
            );
            check_finite(loss_sup, n, &models[i].spec().name)?;

            // one-step lookahead from the current iterate, not cumulative
            let mut x_meta = x.clone();
            stepper.step(&mut x_meta, &g_sup, n)?;

            let params_que = sample_rst(config.beta, w, h, &mut rng)?;
            let (loss_que, g_que) = grad_through_rst(
                &x_meta,
                models[que].as_ref(),
                &target_embs[que],
                &params_que,
                w,
                h,
                config.pivot,
            );
            check_finite(loss_que, n, &models[que].spec().name)?;

            loss_sum += loss_sup + loss_que;
            add(g_sup);
            add(g_que);
        }
        let g = g_total.expect("at least one support model") / (m - 1) as f64;
        trace.push(loss_sum / evals_per_iter as f64);
        stepper.step(&mut x, &g, n)?;
    }
    let adv_mask = masked_layer(&x, mask);
    Ok(AttackResult {
        x_adv: x,
        adv_mask,
        loss_trace: trace,
        queries: evals_per_iter * config.iters,
    })
}

/// Dispatches on `config.method`, enforcing each method's model count.
pub fn run_attack(
    source: &FaceImage,
    target: &FaceImage,
    mask: &BinaryMask,
    models: &[ModelHandle],
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    match config.method {
        AttackMethod::Paste => paste_attack(source, target, mask),
        AttackMethod::Am | AttackMethod::Rstam => {
            if models.len() != 1 {
                return Err(AttackError::WrongModelCount {
                    expected: "exactly one",
                    got: models.len(),
                });
            }
            let model = models[0].as_ref();
            match config.method {
                AttackMethod::Am => am_attack(source, target, mask, model, config),
                _ => rstam_attack(source, target, mask, model, config),
            }
        }
        AttackMethod::RstamAll => rstam_all_attack(source, target, mask, models, config),
        AttackMethod::RstamMeta => rstam_meta_attack(source, target, mask, models, config),
    }
}
