//! Dataset ingestion, pair sampling, attack evaluation, and metrics.
//!
//! Datasets follow a simple on-disk layout: `root/<identity>/<image>.png`
//! (or `.jpg`) with a `<image>.landmarks.json` sidecar per image. Evaluation
//! runs one attack per sampled cross-identity pair — composite the target's
//! mask region onto the source, optimize against the surrogate models — and
//! then scores the result against held-out victim models with cosine
//! similarity. Two summary metrics are reported: the attack success rate
//! (fraction of cosines strictly above a threshold, as a percentage) and the
//! mean confidence score returned by remote verification services.
//!
//! Runs are deterministic: per-pair seeds are derived from the base seed and
//! the pair's position, so results do not depend on worker count or
//! scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::attack::{run_attack, AttackConfig, AttackError};
use crate::canvas::{CanvasError, FaceImage};
use crate::maskgeom::{canonical_landmarks, gen_mask, BinaryMask, FaceLandmarks, MaskGeomError};
use crate::models::{Embedder, Embedding, ModelError, ModelHandle, SmallEmbedder};
use crate::parallel;
use crate::synthfaces::mix_seed;

/// Verification thresholds for several widely used open-source recognizers,
/// each calibrated at 0.1% false-acceptance rate on a standard benchmark.
/// Reported alongside results for context when victims emulate these models.
pub const REFERENCE_THRESHOLDS: [(&str, f64); 4] = [
    ("facenet", 0.409),
    ("mobileface", 0.302),
    ("irse50", 0.241),
    ("ir152", 0.167),
];

/// Transform-strength band that works well across victim models; sweeps
/// annotate this range.
pub const RECOMMENDED_BETA_BAND: (f64, f64) = (0.15, 0.25);

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("dataset root {0} contains no identity directories with images")]
    EmptyDataset(String),
    #[error("image {0} has no landmark sidecar ({1})")]
    MissingSidecar(String, String),
    #[error("need at least {need} identities, dataset has {got}")]
    NotEnoughIdentities { need: usize, got: usize },
    #[error("metric needs at least one score")]
    NoScores,
    #[error("FAR target must lie in (0, 1], got {0}")]
    InvalidFar(f64),
    #[error("sweep needs one threshold per victim: {victims} victims, {taus} thresholds")]
    ThresholdCount { victims: usize, taus: usize },
    #[error(transparent)]
    Mask(#[from] MaskGeomError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Canvas(#[from] CanvasError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

enum ImageSource {
    Disk(PathBuf),
    Memory(FaceImage),
}

/// One face image with its identity label and landmarks.
pub struct FaceRecord {
    pub identity: String,
    pub name: String,
    pub landmarks: FaceLandmarks,
    source: ImageSource,
}

/// An ingested dataset; record order is stable (sorted by identity, then
/// file name), so indices are reproducible.
pub struct Dataset {
    records: Vec<FaceRecord>,
    identities: Vec<String>,
    by_identity: BTreeMap<String, Vec<usize>>,
}

const IMAGE_EXTS: [&str; 3] = ["png", "jpg", "jpeg"];

impl Dataset {
    /// Scans `root/<identity>/<image>` directories, requiring a landmark
    /// sidecar next to every image.
    pub fn ingest(root: &Path) -> Result<Self, EvalError> {
        let read = |p: &Path| {
            std::fs::read_dir(p).map_err(|source| EvalError::Read {
                path: p.display().to_string(),
                source,
            })
        };
        let mut dirs: Vec<PathBuf> = read(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();

        let mut records = Vec::new();
        for dir in &dirs {
            let identity = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mut files: Vec<PathBuf> = read(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .map(|e| e.to_string_lossy().to_lowercase())
                        .is_some_and(|e| IMAGE_EXTS.contains(&e.as_str()))
                })
                .collect();
            files.sort();
            for file in files {
                let sidecar = file.with_extension("landmarks.json");
                if !sidecar.exists() {
                    return Err(EvalError::MissingSidecar(
                        file.display().to_string(),
                        sidecar.display().to_string(),
                    ));
                }
                let landmarks = FaceLandmarks::load(&sidecar)?;
                records.push(FaceRecord {
                    identity: identity.clone(),
                    name: file
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    landmarks,
                    source: ImageSource::Disk(file),
                });
            }
        }
        if records.is_empty() {
            return Err(EvalError::EmptyDataset(root.display().to_string()));
        }
        Ok(Self::index(records))
    }

    /// Builds a dataset from in-memory images (used by tests and hermetic
    /// evaluation runs).
    pub fn from_memory(items: Vec<(String, String, FaceImage, FaceLandmarks)>) -> Self {
        let records = items
            .into_iter()
            .map(|(identity, name, image, landmarks)| FaceRecord {
                identity,
                name,
                landmarks,
                source: ImageSource::Memory(image),
            })
            .collect();
        Self::index(records)
    }

    fn index(records: Vec<FaceRecord>) -> Self {
        let mut by_identity: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            by_identity.entry(r.identity.clone()).or_default().push(i);
        }
        let identities = by_identity.keys().cloned().collect();
        Self {
            records,
            identities,
            by_identity,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, index: usize) -> &FaceRecord {
        &self.records[index]
    }

    /// Sorted unique identity labels.
    pub fn identities(&self) -> &[String] {
        &self.identities
    }

    pub fn records_of(&self, identity: &str) -> &[usize] {
        self.by_identity
            .get(identity)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn load_image(&self, index: usize) -> Result<FaceImage, EvalError> {
        match &self.records[index].source {
            ImageSource::Disk(path) => Ok(FaceImage::load(path)?),
            ImageSource::Memory(image) => Ok(image.clone()),
        }
    }
}

/// A source (attacker) record index and a target record index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalPair {
    pub source: usize,
    pub target: usize,
}

/// Samples cross-identity pairs. When the dataset has at least `2 * count`
/// identities the pairing is disjoint — identities are shuffled and paired
/// off, so none repeats; otherwise identities may recur across pairs but a
/// pair never matches an identity with itself. One image per side is chosen
/// uniformly from the identity's images.
pub fn sample_pairs(
    dataset: &Dataset,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<EvalPair>, EvalError> {
    let n = dataset.identities().len();
    if n < 2 {
        return Err(EvalError::NotEnoughIdentities { need: 2, got: n });
    }
    let pick = |identity: &str, rng: &mut dyn rand::RngCore| {
        let members = dataset.records_of(identity);
        members[rng.random_range(0..members.len())]
    };
    let mut pairs = Vec::with_capacity(count);
    if n >= 2 * count {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        for k in 0..count {
            let source_id = &dataset.identities()[order[2 * k]];
            let target_id = &dataset.identities()[order[2 * k + 1]];
            pairs.push(EvalPair {
                source: pick(source_id, rng),
                target: pick(target_id, rng),
            });
        }
    } else {
        for _ in 0..count {
            let a = rng.random_range(0..n);
            let b = loop {
                let b = rng.random_range(0..n);
                if b != a {
                    break b;
                }
            };
            pairs.push(EvalPair {
                source: pick(&dataset.identities()[a].clone(), rng),
                target: pick(&dataset.identities()[b].clone(), rng),
            });
        }
    }
    Ok(pairs)
}

/// Attack success rate: percentage of scores strictly above the threshold.
pub fn asr(scores: &[f64], tau: f64) -> Result<f64, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::NoScores);
    }
    let hits = scores.iter().filter(|&&s| s > tau).count();
    Ok(100.0 * hits as f64 / scores.len() as f64)
}

/// Mean confidence score; confidences are on the service's 0–100 scale.
pub fn mcs(confidences: &[f64]) -> Result<f64, EvalError> {
    if confidences.is_empty() {
        return Err(EvalError::NoScores);
    }
    Ok(confidences.iter().sum::<f64>() / confidences.len() as f64)
}

/// A threshold calibrated to a false-acceptance-rate target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedThreshold {
    pub tau: f64,
    /// FAR actually achieved at `tau` on the calibration scores.
    pub far: f64,
}

/// Picks the smallest observed impostor score `tau` whose strict-greater
/// FAR does not exceed `far_target`.
pub fn calibrate_threshold(
    scores: &[f64],
    far_target: f64,
) -> Result<CalibratedThreshold, EvalError> {
    if !(far_target > 0.0 && far_target <= 1.0) {
        return Err(EvalError::InvalidFar(far_target));
    }
    if scores.is_empty() {
        return Err(EvalError::NoScores);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    for k in 0..n {
        if k > 0 && sorted[k] == sorted[k - 1] {
            continue;
        }
        let tau = sorted[k];
        let greater = n - sorted.partition_point(|&s| s <= tau);
        let far = greater as f64 / n as f64;
        if far <= far_target {
            return Ok(CalibratedThreshold { tau, far });
        }
    }
    unreachable!("the maximum score always satisfies FAR = 0");
}

/// Impostor-score enumeration strategy for calibration.
#[derive(Debug, Clone, Copy)]
pub enum ImpostorMode {
    /// Every cross-identity record pair (quadratic).
    All,
    /// A fixed number of random cross-identity pairs.
    Sampled(usize),
}

/// Cosine scores between embeddings of different identities, for threshold
/// calibration.
pub fn impostor_scores(
    dataset: &Dataset,
    model: &dyn Embedder,
    mode: ImpostorMode,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, EvalError> {
    if dataset.identities().len() < 2 {
        return Err(EvalError::NotEnoughIdentities {
            need: 2,
            got: dataset.identities().len(),
        });
    }
    let images: Result<Vec<FaceImage>, EvalError> =
        (0..dataset.len()).map(|i| dataset.load_image(i)).collect();
    let images = images?;
    let embeddings = parallel::map_indexed(dataset.len(), |i| model.embed(&images[i]));

    let mut scores = Vec::new();
    match mode {
        ImpostorMode::All => {
            for i in 0..dataset.len() {
                for j in i + 1..dataset.len() {
                    if dataset.record(i).identity != dataset.record(j).identity {
                        scores.push(embeddings[i].cosine(&embeddings[j])?);
                    }
                }
            }
        }
        ImpostorMode::Sampled(count) => {
            while scores.len() < count {
                let i = rng.random_range(0..dataset.len());
                let j = rng.random_range(0..dataset.len());
                if dataset.record(i).identity != dataset.record(j).identity {
                    scores.push(embeddings[i].cosine(&embeddings[j])?);
                }
            }
        }
    }
    if scores.is_empty() {
        return Err(EvalError::NoScores);
    }
    Ok(scores)
}

/// Recipe for training a toy embedder on a dataset.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    /// Seed for the model's initial weights.
    pub model_seed: u64,
    /// Seed for the per-identity target prototypes. Models trained with the
    /// same prototype seed learn aligned embedding spaces, which is what
    /// makes cross-model transfer measurable in the toy zoo.
    pub proto_seed: u64,
    pub input_size: usize,
    pub pool: usize,
    pub hidden: usize,
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
}

/// Trains a fresh toy embedder to map each identity's images near a fixed
/// random unit prototype. Identities take prototypes in dataset order, so
/// the assignment is reproducible.
pub fn train_embedder(
    dataset: &Dataset,
    name: &str,
    plan: &TrainPlan,
) -> Result<SmallEmbedder, EvalError> {
    // Gram-Schmidt over random draws: while identities fit in the embedding
    // dimension the prototypes come out orthogonal, so trained impostor
    // cosines sit near zero the way they do for real recognizers.
    let mut proto_rng = ChaCha8Rng::seed_from_u64(plan.proto_seed);
    let mut accepted: Vec<ndarray::Array1<f64>> = Vec::new();
    let mut prototypes = BTreeMap::new();
    for identity in dataset.identities() {
        let raw =
            ndarray::Array1::from_iter((0..plan.dim).map(|_| proto_rng.random_range(-1.0..1.0)));
        let mut residual = raw.clone();
        for prev in &accepted {
            let coeff = residual.dot(prev);
            residual.scaled_add(-coeff, prev);
        }
        let unit = if residual.dot(&residual).sqrt() > 1e-9 {
            Embedding::from_raw(residual)?
        } else {
            // more identities than dimensions: keep the plain draw
            Embedding::from_raw(raw)?
        };
        accepted.push(unit.as_array().clone());
        prototypes.insert(identity.clone(), unit);
    }

    let mut model = SmallEmbedder::random(
        name,
        plan.model_seed,
        plan.input_size,
        plan.pool,
        plan.hidden,
        plan.dim,
    )?;
    let images: Result<Vec<FaceImage>, EvalError> =
        (0..dataset.len()).map(|i| dataset.load_image(i)).collect();
    let images = images?;
    for _ in 0..plan.epochs {
        for (i, image) in images.iter().enumerate() {
            let target = &prototypes[&dataset.record(i).identity];
            model.train_step(image, target, plan.lr);
        }
    }
    Ok(model)
}

/// Everything an evaluation run needs beyond the data and models.
pub struct EvalSettings {
    /// Base attack configuration; each pair runs with a seed derived from
    /// `attack.seed` and the pair index.
    pub attack: AttackConfig,
    /// Mask template in canonical space.
    pub template: BinaryMask,
    /// Working canvas edge; images and landmarks are rescaled to it.
    pub canvas: usize,
    /// Keep each pair's adversarial image in the result (needed when the
    /// caller re-scores it against external backends). Costly at scale.
    pub keep_images: bool,
}

/// Per-pair outcome of an evaluation run.
#[derive(Debug, Clone)]
pub struct PairResult {
    pub source_identity: String,
    pub source_name: String,
    pub target_identity: String,
    pub target_name: String,
    /// Cosine between the adversarial image and the target, one entry per
    /// victim model (in input order).
    pub cosines: Vec<f64>,
    /// Surrogate loss at the final recorded iteration, if any iterations ran.
    pub final_loss: Option<f64>,
    pub queries: usize,
    /// The derived seed this pair's attack actually used.
    pub seed: u64,
    /// The adversarial image, when [`EvalSettings::keep_images`] is set.
    pub x_adv: Option<FaceImage>,
}

/// Results of an evaluation run over a set of pairs.
pub struct EvalRun {
    pub victim_names: Vec<String>,
    pub pairs: Vec<PairResult>,
}

impl EvalRun {
    /// All victim cosines flattened in (pair, victim) order.
    pub fn all_cosines(&self) -> Vec<f64> {
        self.pairs.iter().flat_map(|p| p.cosines.clone()).collect()
    }

    /// Cosines for one victim (by position).
    pub fn victim_cosines(&self, victim: usize) -> Vec<f64> {
        self.pairs.iter().map(|p| p.cosines[victim]).collect()
    }
}

/// Stable per-pair seed, independent of worker count and schedule.
pub fn derive_pair_seed(base: u64, pair_index: usize) -> u64 {
    mix_seed(base, pair_index as u64, 0x70ba_9a1c)
}

/// Loads a record's image stretched to the square working canvas, with its
/// landmarks mapped by the same per-axis scale.
pub fn load_scaled(
    dataset: &Dataset,
    index: usize,
    canvas: usize,
) -> Result<(FaceImage, FaceLandmarks), EvalError> {
    let image = dataset.load_image(index)?;
    let (w, h) = image.dims();
    let landmarks = dataset.record(index).landmarks.clone();
    if (w, h) == (canvas, canvas) {
        return Ok((image, landmarks));
    }
    // stretch to the square canvas; landmarks follow the same per-axis scale
    let (sx, sy) = (canvas as f64 / w as f64, canvas as f64 / h as f64);
    Ok((
        image.resize_bilinear(canvas, canvas),
        landmarks.map(|x, y| (x * sx, y * sy)),
    ))
}

/// Runs one attack per pair against the surrogates and scores each result
/// with every victim model. Pairs are processed in parallel; output order
/// and all results are independent of the worker count.
pub fn run_eval(
    dataset: &Dataset,
    pairs: &[EvalPair],
    surrogates: &[ModelHandle],
    victims: &[ModelHandle],
    settings: &EvalSettings,
) -> Result<EvalRun, EvalError> {
    // the template is authored in its own canonical frame; the landmark fit
    // absorbs the template -> canvas scale change
    let canonical = canonical_landmarks(settings.template.dims().0);
    let outcomes = parallel::map_indexed(pairs.len(), |i| -> Result<PairResult, EvalError> {
        let pair = pairs[i];
        let (source, source_lm) = load_scaled(dataset, pair.source, settings.canvas)?;
        let (target, _) = load_scaled(dataset, pair.target, settings.canvas)?;
        let mask = gen_mask(
            &settings.template,
            &canonical,
            &source_lm,
            settings.canvas,
            settings.canvas,
        )?;
        let mut config = settings.attack.clone();
        config.seed = derive_pair_seed(settings.attack.seed, i);
        let outcome = run_attack(&source, &target, &mask, surrogates, &config)?;
        let mut cosines = Vec::with_capacity(victims.len());
        for victim in victims {
            let adv = victim.embed(&outcome.x_adv);
            let tgt = victim.embed(&target);
            cosines.push(adv.cosine(&tgt)?);
        }
        let (src_rec, tgt_rec) = (dataset.record(pair.source), dataset.record(pair.target));
        Ok(PairResult {
            source_identity: src_rec.identity.clone(),
            source_name: src_rec.name.clone(),
            target_identity: tgt_rec.identity.clone(),
            target_name: tgt_rec.name.clone(),
            cosines,
            final_loss: outcome.loss_trace.last().copied(),
            queries: outcome.queries,
            seed: config.seed,
            x_adv: settings.keep_images.then_some(outcome.x_adv),
        })
    });
    let pairs = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EvalRun {
        victim_names: victims.iter().map(|v| v.spec().name.clone()).collect(),
        pairs,
    })
}

/// One row of a transform-strength sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub beta: f64,
    /// Pooled success rate: every (pair, victim) cosine judged against that
    /// victim's own threshold.
    pub asr: f64,
    /// Mean victim cosine over all (pair, victim) entries.
    pub mean_cosine: f64,
    /// Per-victim ASR, `(victim name, percent)`, in victim input order.
    pub victim_asr: Vec<(String, f64)>,
}

/// Re-runs the evaluation once per `beta`, holding everything else fixed.
/// `taus` supplies one decision threshold per victim.
pub fn beta_sweep(
    dataset: &Dataset,
    pairs: &[EvalPair],
    surrogates: &[ModelHandle],
    victims: &[ModelHandle],
    settings: &EvalSettings,
    betas: &[f64],
    taus: &[f64],
) -> Result<Vec<SweepRow>, EvalError> {
    if taus.len() != victims.len() {
        return Err(EvalError::ThresholdCount {
            victims: victims.len(),
            taus: taus.len(),
        });
    }
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut sweep_settings = EvalSettings {
            attack: settings.attack.clone(),
            template: settings.template.clone(),
            canvas: settings.canvas,
            keep_images: false,
        };
        sweep_settings.attack.beta = beta;
        let run = run_eval(dataset, pairs, surrogates, victims, &sweep_settings)?;
        let mut victim_asr = Vec::with_capacity(victims.len());
        let mut hits = 0usize;
        let mut total = 0usize;
        for (v, (name, &tau)) in run.victim_names.iter().zip(taus).enumerate() {
            let scores = run.victim_cosines(v);
            hits += scores.iter().filter(|&&s| s > tau).count();
            total += scores.len();
            victim_asr.push((name.clone(), asr(&scores, tau)?));
        }
        let all = run.all_cosines();
        rows.push(SweepRow {
            beta,
            asr: 100.0 * hits as f64 / total as f64,
            mean_cosine: all.iter().sum::<f64>() / all.len() as f64,
            victim_asr,
        });
    }
    Ok(rows)
}
