//! Subcommand implementations. Each command validates and loads everything
//! it needs before touching the output directory, so a configuration error
//! never leaves artifacts behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use advmask::attack::{run_attack, AttackConfig};
use advmask::canvas::FaceImage;
use advmask::eval::{
    beta_sweep, calibrate_threshold, derive_pair_seed, impostor_scores, load_scaled,
    run_eval, sample_pairs, Dataset, EvalPair, EvalSettings, ImpostorMode,
};
use advmask::maskgeom::{
    canonical_landmarks, default_template, gen_mask, write_masked_crop, BinaryMask,
    FaceLandmarks,
};
use advmask::models::{ModelHandle, ModelRegistry};
use advmask::parallel;
use advmask::report::{
    write_loss_trace_csv, write_sweep_csv, write_sweep_svg, EvaluationReport, ReportConfig,
};
use advmask::scoring::{
    load_backends, BackendConfig, MockBackend, RestBackend, ScoreTransport, ScoringClient,
};
use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{Cli, Command};
use crate::artifacts::{self, IndexedEntry, PairEntry, PairFailure, PhysicalSize};
use crate::config::Resolved;

/// Seed for threshold calibration, fixed so thresholds do not drift with
/// the attack seed.
const CALIBRATION_SEED: u64 = 0x7a11_5eed;

/// Past this many records, calibration samples impostor pairs instead of
/// enumerating all of them.
const EXHAUSTIVE_CALIBRATION_LIMIT: usize = 64;
const SAMPLED_IMPOSTORS: usize = 2000;

/// How a command run ended; the process exit code is derived from this.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Clean,
    /// Some probes failed but the run produced usable partial results.
    Partial { failed: usize, total: usize },
}

pub fn run(cli: &Cli) -> Result<RunStatus> {
    let resolved = match &cli.command {
        Command::Attack { opts } | Command::Evaluate { opts } => {
            Resolved::merge(opts, None, None)?
        }
        Command::SweepBeta { opts, betas } => Resolved::merge(opts, betas.as_ref(), None)?,
        Command::MakeMask { opts, image } => Resolved::merge(opts, None, image.as_ref())?,
    };
    apply_workers(resolved.workers);
    match &cli.command {
        Command::Attack { .. } => cmd_attack(&resolved),
        Command::Evaluate { .. } => cmd_evaluate(&resolved),
        Command::SweepBeta { .. } => cmd_sweep_beta(&resolved),
        Command::MakeMask { .. } => cmd_make_mask(&resolved),
    }
}

/// One worker runs strictly sequentially; more get a rayon pool of that
/// size. The pool is process-global, so a second call can only keep the
/// existing pool — fine, because the CLI resolves workers exactly once.
fn apply_workers(workers: usize) {
    if workers <= 1 {
        parallel::force_sequential(true);
    } else {
        parallel::force_sequential(false);
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

/// Dataset, models, and template for a run, loaded and validated together.
struct Loaded {
    dataset: Dataset,
    registry: ModelRegistry,
    registry_dir: PathBuf,
    surrogate_names: Vec<String>,
    victim_names: Vec<String>,
    surrogates: Vec<ModelHandle>,
    victims: Vec<ModelHandle>,
    template: BinaryMask,
}

fn load_run_inputs(resolved: &Resolved) -> Result<Loaded> {
    let dataset_path = resolved.dataset_path()?;
    let dataset = Dataset::ingest(dataset_path)
        .with_context(|| format!("ingesting dataset {}", dataset_path.display()))?;

    let models_path = resolved.models_path()?;
    let registry = ModelRegistry::load(models_path)
        .with_context(|| format!("loading model registry {}", models_path.display()))?;
    let registry_dir = models_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();

    let all: Vec<String> = registry.names().iter().map(|s| s.to_string()).collect();
    let surrogate_names = if resolved.surrogates.is_empty() {
        all.clone()
    } else {
        resolved.surrogates.clone()
    };
    let victim_names = if resolved.victims.is_empty() {
        all
    } else {
        resolved.victims.clone()
    };
    if surrogate_names.is_empty() {
        bail!("the model registry {} lists no models", models_path.display());
    }

    let instantiate = |names: &[String]| -> Result<Vec<ModelHandle>> {
        names
            .iter()
            .map(|name| {
                registry
                    .instantiate(name, &registry_dir)
                    .with_context(|| format!("instantiating model {name:?}"))
            })
            .collect()
    };
    let surrogates = instantiate(&surrogate_names)?;
    let victims = instantiate(&victim_names)?;

    let template = load_template(resolved)?;

    Ok(Loaded {
        dataset,
        registry,
        registry_dir,
        surrogate_names,
        victim_names,
        surrogates,
        victims,
        template,
    })
}

fn load_template(resolved: &Resolved) -> Result<BinaryMask> {
    match &resolved.template {
        Some(path) => {
            let mask = BinaryMask::load_png(path)
                .with_context(|| format!("loading mask template {}", path.display()))?;
            let (w, h) = mask.dims();
            if w != h {
                bail!(
                    "mask template {} must be square, got {w}x{h}",
                    path.display()
                );
            }
            Ok(mask)
        }
        None => Ok(default_template()),
    }
}

/// Per-victim decision threshold: the registry value when present,
/// otherwise calibrated from impostor scores at the configured FAR.
fn resolve_thresholds(resolved: &Resolved, loaded: &Loaded) -> Result<BTreeMap<String, f64>> {
    let mut thresholds = BTreeMap::new();
    for (name, handle) in loaded.victim_names.iter().zip(&loaded.victims) {
        let entry = loaded.registry.entry(name)?;
        let tau = match entry.threshold {
            Some(tau) => tau,
            None => {
                let mode = if loaded.dataset.len() <= EXHAUSTIVE_CALIBRATION_LIMIT {
                    ImpostorMode::All
                } else {
                    ImpostorMode::Sampled(SAMPLED_IMPOSTORS)
                };
                let mut rng = ChaCha8Rng::seed_from_u64(CALIBRATION_SEED);
                let scores = impostor_scores(&loaded.dataset, handle.as_ref(), mode, &mut rng)
                    .with_context(|| format!("calibrating threshold for {name:?}"))?;
                calibrate_threshold(&scores, resolved.far)?.tau
            }
        };
        thresholds.insert(name.clone(), tau);
    }
    Ok(thresholds)
}

fn sample_run_pairs(resolved: &Resolved, dataset: &Dataset) -> Result<Vec<EvalPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(resolved.seed);
    Ok(sample_pairs(dataset, resolved.pairs, &mut rng)?)
}

fn prepare_out_dir(resolved: &Resolved) -> Result<()> {
    std::fs::create_dir_all(&resolved.out)
        .with_context(|| format!("creating output directory {}", resolved.out.display()))?;
    // the snapshot makes any run replayable: `advmask <cmd> --config <it>`
    artifacts::write_json(&resolved.out.join("config.json"), resolved)
}

#[derive(Serialize)]
struct AttackSummary<'a> {
    config: &'a Resolved,
    pairs: Vec<IndexedEntry>,
    failures: Vec<PairFailure>,
}

fn cmd_attack(resolved: &Resolved) -> Result<RunStatus> {
    let loaded = load_run_inputs(resolved)?;
    let pairs = sample_run_pairs(resolved, &loaded.dataset)?;
    let base = resolved.attack_config();
    let canonical = canonical_landmarks(loaded.template.dims().0);

    prepare_out_dir(resolved)?;
    let pairs_dir = resolved.out.join("pairs");
    std::fs::create_dir_all(&pairs_dir)?;

    let results = parallel::map_indexed(pairs.len(), |i| {
        attack_one_pair(resolved, &loaded, &canonical, &base, &pairs_dir, pairs[i], i)
            .map_err(|e| format!("{e:#}"))
    });

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (index, result) in results.into_iter().enumerate() {
        match result {
            Ok(entry) => entries.push(IndexedEntry { index, entry }),
            Err(error) => {
                eprintln!("warning: pair {index} failed: {error}");
                failures.push(PairFailure { index, error });
            }
        }
    }

    let summary = AttackSummary {
        config: resolved,
        pairs: entries,
        failures,
    };
    artifacts::write_json(&resolved.out.join("summary.json"), &summary)?;

    if summary.pairs.is_empty() && !summary.failures.is_empty() {
        bail!("all {} pairs failed", summary.failures.len());
    }
    match summary.failures.len() {
        0 => Ok(RunStatus::Clean),
        failed => Ok(RunStatus::Partial {
            failed,
            total: pairs.len(),
        }),
    }
}

/// Content-address key: everything that determines the pair's artifacts.
#[derive(Serialize)]
struct PairKey<'a> {
    attack: &'a AttackConfig,
    canvas: usize,
    dpi: u32,
    mask: String,
}

fn attack_one_pair(
    resolved: &Resolved,
    loaded: &Loaded,
    canonical: &FaceLandmarks,
    base: &AttackConfig,
    pairs_dir: &Path,
    pair: EvalPair,
    index: usize,
) -> Result<PairEntry> {
    let (source, source_lm) = load_scaled(&loaded.dataset, pair.source, resolved.canvas)?;
    let (target, _) = load_scaled(&loaded.dataset, pair.target, resolved.canvas)?;
    let mask = gen_mask(
        &loaded.template,
        canonical,
        &source_lm,
        resolved.canvas,
        resolved.canvas,
    )?;
    let mut config = base.clone();
    config.seed = derive_pair_seed(base.seed, index);

    let src = loaded.dataset.record(pair.source);
    let tgt = loaded.dataset.record(pair.target);
    let key = serde_json::to_string(&PairKey {
        attack: &config,
        canvas: resolved.canvas,
        dpi: resolved.dpi,
        mask: artifacts::mask_digest(&mask),
    })?;
    let id = artifacts::hash16(&[
        &key,
        &src.identity,
        &src.name,
        &artifacts::image_digest(&source),
        &tgt.identity,
        &tgt.name,
        &artifacts::image_digest(&target),
    ]);
    let dir = pairs_dir.join(&id);
    let entry_path = dir.join("pair.json");
    if entry_path.exists() {
        // same address, same inputs: the artifacts are already on disk
        return artifacts::read_json(&entry_path);
    }

    let result = run_attack(&source, &target, &mask, &loaded.surrogates, &config)?;

    std::fs::create_dir_all(&dir)?;
    result.x_adv.save_png(&dir.join("x_adv.png"))?;
    let (crop_w, crop_h) = write_masked_crop(&result.x_adv, &mask, &dir.join("adv_mask.png"))?;
    write_loss_trace_csv(&result.loss_trace, &dir.join("trace.csv"))?;

    let mut surrogate_cosines = BTreeMap::new();
    for model in &loaded.surrogates {
        let cos = model.embed(&result.x_adv).cosine(&model.embed(&target))?;
        surrogate_cosines.insert(model.spec().name.clone(), cos);
    }

    let entry = PairEntry {
        id,
        source_identity: src.identity.clone(),
        source_name: src.name.clone(),
        target_identity: tgt.identity.clone(),
        target_name: tgt.name.clone(),
        seed: config.seed,
        queries: result.queries,
        final_loss: result.loss_trace.last().copied(),
        surrogate_cosines,
        mask_crop: PhysicalSize::new(crop_w, crop_h, resolved.dpi),
    };
    artifacts::write_json(&entry_path, &entry)?;
    Ok(entry)
}

fn build_transport(config: &BackendConfig, loaded: &Loaded) -> Result<Arc<dyn ScoreTransport>> {
    match config.kind.as_str() {
        "mock" => {
            let model_name = config
                .model
                .as_deref()
                .with_context(|| format!("backend {:?} needs a `model` to score with", config.id))?;
            let model = loaded
                .registry
                .instantiate(model_name, &loaded.registry_dir)
                .with_context(|| format!("backend {:?}", config.id))?;
            Ok(Arc::new(MockBackend::new(&config.id, model)))
        }
        "rest" => Ok(Arc::new(RestBackend::from_config(config)?)),
        other => bail!("backend {:?}: unknown kind {other:?}", config.id),
    }
}

fn cmd_evaluate(resolved: &Resolved) -> Result<RunStatus> {
    let loaded = load_run_inputs(resolved)?;
    let backend_configs = match &resolved.backends {
        Some(path) => load_backends(path)?,
        None => Vec::new(),
    };
    // transports are built (and credentials resolved) before any attack
    // work, so a misconfigured backend is a clean configuration error
    let transports: Vec<(BackendConfig, Arc<dyn ScoreTransport>)> = backend_configs
        .into_iter()
        .map(|config| {
            let transport = build_transport(&config, &loaded)?;
            Ok((config, transport))
        })
        .collect::<Result<_>>()?;
    let thresholds = resolve_thresholds(resolved, &loaded)?;
    let pairs = sample_run_pairs(resolved, &loaded.dataset)?;

    let settings = EvalSettings {
        attack: resolved.attack_config(),
        template: loaded.template.clone(),
        canvas: resolved.canvas,
        keep_images: !transports.is_empty(),
    };
    let run = run_eval(
        &loaded.dataset,
        &pairs,
        &loaded.surrogates,
        &loaded.victims,
        &settings,
    )?;

    let report_config = ReportConfig {
        attack: settings.attack.clone(),
        dataset: resolved.dataset_path()?.display().to_string(),
        pairs: pairs.len(),
        seed: resolved.seed,
        surrogates: loaded.surrogate_names.clone(),
        victims: loaded.victim_names.clone(),
        canvas: resolved.canvas,
    };
    let mut report = EvaluationReport::assemble(report_config, &run, &thresholds)?;

    let mut failed = 0usize;
    let mut probes = 0usize;
    for (config, transport) in &transports {
        let client = ScoringClient::new(transport.clone(), config.rate_limit_per_sec);
        let mut outcomes = Vec::new();
        for (i, pair_result) in run.pairs.iter().enumerate() {
            let x_adv = pair_result
                .x_adv
                .as_ref()
                .expect("keep_images is set whenever backends are configured");
            let (probe_target, _) = load_scaled(&loaded.dataset, pairs[i].target, resolved.canvas)?;
            probes += 1;
            match client.verify_images(x_adv, &probe_target) {
                Ok(outcome) => outcomes.push((i, outcome)),
                Err(error) => {
                    eprintln!("warning: backend {:?}, pair {i}: {error}", config.id);
                    failed += 1;
                }
            }
        }
        if !outcomes.is_empty() {
            report.attach_partial_confidences(&config.id, &outcomes)?;
        }
    }
    report.verify_consistency()?;

    prepare_out_dir(resolved)?;
    report.write_json(&resolved.out.join("report.json"))?;
    report.write_csv(&resolved.out.join("report.csv"))?;

    if failed > 0 {
        Ok(RunStatus::Partial {
            failed,
            total: probes,
        })
    } else {
        Ok(RunStatus::Clean)
    }
}

fn cmd_sweep_beta(resolved: &Resolved) -> Result<RunStatus> {
    if resolved.betas.is_empty() {
        bail!("sweep-beta needs at least one strength: pass --betas 0.0,0.1,0.2");
    }
    let loaded = load_run_inputs(resolved)?;
    let thresholds = resolve_thresholds(resolved, &loaded)?;
    let taus: Vec<f64> = loaded
        .victim_names
        .iter()
        .map(|name| thresholds[name])
        .collect();
    let pairs = sample_run_pairs(resolved, &loaded.dataset)?;

    let settings = EvalSettings {
        attack: resolved.attack_config(),
        template: loaded.template.clone(),
        canvas: resolved.canvas,
        keep_images: false,
    };
    let rows = beta_sweep(
        &loaded.dataset,
        &pairs,
        &loaded.surrogates,
        &loaded.victims,
        &settings,
        &resolved.betas,
        &taus,
    )?;

    prepare_out_dir(resolved)?;
    write_sweep_csv(&rows, &resolved.out.join("sweep.csv"))?;
    write_sweep_svg(&rows, &resolved.out.join("sweep.svg"))?;
    Ok(RunStatus::Clean)
}

fn cmd_make_mask(resolved: &Resolved) -> Result<RunStatus> {
    let image_path = resolved
        .image
        .as_deref()
        .context("make-mask needs a face image: pass --image")?;
    let sidecar = image_path.with_extension("landmarks.json");
    if !sidecar.exists() {
        bail!("no landmark sidecar at {}", sidecar.display());
    }
    let landmarks = FaceLandmarks::load(&sidecar)?;
    let image = FaceImage::load(image_path)?;
    let template = load_template(resolved)?;

    let (w, h) = image.dims();
    let mask = gen_mask(
        &template,
        &canonical_landmarks(template.dims().0),
        &landmarks,
        w,
        h,
    )?;

    prepare_out_dir(resolved)?;
    mask.save_png(&resolved.out.join("mask.png"))?;
    // preview: full brightness inside the mask, dimmed elsewhere
    let overlay = FaceImage::from_fn(w, h, |x, y, c| {
        let v = image.get(x, y, c);
        if mask.is_set(x, y) {
            v
        } else {
            0.35 * v
        }
    });
    overlay.save_png(&resolved.out.join("overlay.png"))?;
    Ok(RunStatus::Clean)
}
