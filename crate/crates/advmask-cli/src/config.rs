//! Config-file loading and flag/file/default resolution.

use std::path::{Path, PathBuf};

use advmask::attack::{AttackConfig, AttackMethod, NormMode};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::args::CommonOpts;

/// On-disk mirror of the command-line flags; every field is optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub pairs: Option<usize>,
    pub seed: Option<u64>,
    pub attack: Option<AttackMethod>,
    pub norm: Option<NormMode>,
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
    pub iters: Option<usize>,
    pub beta: Option<f64>,
    pub models: Option<PathBuf>,
    pub backends: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub betas: Option<Vec<f64>>,
    pub canvas: Option<usize>,
    pub template: Option<PathBuf>,
    pub surrogates: Option<Vec<String>>,
    pub victims: Option<Vec<String>>,
    pub far: Option<f64>,
    pub dpi: Option<u32>,
    pub image: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let config = if is_json {
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        } else {
            toml::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        };
        Ok(config)
    }
}

/// Fully resolved run settings. Serialized verbatim as the config snapshot,
/// so a snapshot file can be replayed with `--config` for a bit-exact rerun.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub dataset: Option<PathBuf>,
    pub pairs: usize,
    pub seed: u64,
    pub attack: String,
    pub norm: String,
    pub epsilon: f64,
    pub alpha: f64,
    pub iters: usize,
    pub beta: f64,
    pub models: Option<PathBuf>,
    pub backends: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: usize,
    pub betas: Vec<f64>,
    pub canvas: usize,
    pub template: Option<PathBuf>,
    pub surrogates: Vec<String>,
    pub victims: Vec<String>,
    pub far: f64,
    pub dpi: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,

    #[serde(skip)]
    method: AttackMethod,
    #[serde(skip)]
    norm_mode: NormMode,
}

impl Resolved {
    /// Merges flags over the config file over defaults, and validates the
    /// attack parameters.
    pub fn merge(
        opts: &CommonOpts,
        betas: Option<&Vec<f64>>,
        image: Option<&PathBuf>,
    ) -> Result<Self> {
        let file = match &opts.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };

        let method: AttackMethod = opts
            .attack
            .map(Into::into)
            .or(file.attack)
            .unwrap_or(AttackMethod::Rstam);
        let norm_mode: NormMode = opts.norm.map(Into::into).or(file.norm).unwrap_or_default();

        // AttackConfig::new picks the norm-appropriate step size; explicit
        // values then override field by field
        let mut attack = AttackConfig::new(method, norm_mode);
        if let Some(epsilon) = opts.epsilon.or(file.epsilon) {
            attack.epsilon = epsilon;
        }
        if let Some(alpha) = opts.alpha.or(file.alpha) {
            attack.alpha = alpha;
        }
        if let Some(iters) = opts.iters.or(file.iters) {
            attack.iters = iters;
        }
        if let Some(beta) = opts.beta.or(file.beta) {
            attack.beta = beta;
        }
        attack.seed = opts.seed.or(file.seed).unwrap_or(0);
        attack.validate().context("invalid attack settings")?;

        let workers = opts.workers.or(file.workers).unwrap_or(1);
        if workers == 0 {
            bail!("--workers must be at least 1");
        }
        let far = opts.far.or(file.far).unwrap_or(0.001);
        if !(far > 0.0 && far <= 1.0) {
            bail!("--far must lie in (0, 1], got {far}");
        }
        let canvas = opts.canvas.or(file.canvas).unwrap_or(advmask::CANVAS_SIZE);
        if canvas < 8 {
            bail!("--canvas must be at least 8 pixels, got {canvas}");
        }

        Ok(Self {
            dataset: opts.dataset.clone().or(file.dataset),
            pairs: opts.pairs.or(file.pairs).unwrap_or(10),
            seed: attack.seed,
            attack: kebab(&attack.method),
            norm: kebab(&attack.norm),
            epsilon: attack.epsilon,
            alpha: attack.alpha,
            iters: attack.iters,
            beta: attack.beta,
            models: opts.models.clone().or(file.models),
            backends: opts.backends.clone().or(file.backends),
            out: opts.out.clone().or(file.out).unwrap_or_else(|| "out".into()),
            workers,
            betas: betas.cloned().or(file.betas).unwrap_or_default(),
            canvas,
            template: opts.template.clone().or(file.template),
            surrogates: opts
                .surrogates
                .clone()
                .or(file.surrogates)
                .unwrap_or_default(),
            victims: opts.victims.clone().or(file.victims).unwrap_or_default(),
            far,
            dpi: opts.dpi.or(file.dpi).unwrap_or(300),
            image: image.cloned().or(file.image),
            method,
            norm_mode,
        })
    }

    /// The attack configuration this run executes (before per-pair seeding).
    pub fn attack_config(&self) -> AttackConfig {
        let mut config = AttackConfig::new(self.method, self.norm_mode);
        config.epsilon = self.epsilon;
        config.alpha = self.alpha;
        config.iters = self.iters;
        config.beta = self.beta;
        config.seed = self.seed;
        config
    }

    pub fn dataset_path(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .context("a dataset is required: pass --dataset or set `dataset` in the config file")
    }

    pub fn models_path(&self) -> Result<&Path> {
        self.models
            .as_deref()
            .context("a model registry is required: pass --models or set `models` in the config file")
    }
}

/// Serializes a config enum the same way the CLI and config files spell it.
fn kebab<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .expect("config enums serialize as strings")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "attack = \"am\"\niters = 40\nseed = 9\nepsilon = 0.25\nout = \"from-file\"\n",
        )
        .unwrap();
        let opts = CommonOpts {
            config: Some(path),
            iters: Some(80),
            ..Default::default()
        };
        let resolved = Resolved::merge(&opts, None, None).unwrap();
        assert_eq!(resolved.attack, "am");
        assert_eq!(resolved.iters, 80); // flag beats file
        assert_eq!(resolved.seed, 9);
        assert_eq!(resolved.epsilon, 0.25);
        assert_eq!(resolved.out, PathBuf::from("from-file"));
        assert_eq!(resolved.workers, 1);
        assert_eq!(resolved.alpha, 0.003); // linf default survives
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "datset = \"typo\"\n").unwrap();
        let opts = CommonOpts {
            config: Some(path),
            ..Default::default()
        };
        assert!(Resolved::merge(&opts, None, None).is_err());
    }

    #[test]
    fn bad_numeric_settings_are_rejected() {
        let zero_workers = CommonOpts {
            workers: Some(0),
            ..Default::default()
        };
        assert!(Resolved::merge(&zero_workers, None, None).is_err());

        let bad_beta = CommonOpts {
            beta: Some(1.5),
            ..Default::default()
        };
        assert!(Resolved::merge(&bad_beta, None, None).is_err());
    }

    #[test]
    fn snapshot_replays_through_the_config_path() {
        let opts = CommonOpts {
            dataset: Some("data".into()),
            pairs: Some(3),
            seed: Some(42),
            beta: Some(0.15),
            ..Default::default()
        };
        let resolved = Resolved::merge(&opts, Some(&vec![0.0, 0.2]), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snapshot.json");
        std::fs::write(&path, serde_json::to_string(&resolved).unwrap()).unwrap();

        let replay_opts = CommonOpts {
            config: Some(path),
            ..Default::default()
        };
        let replayed = Resolved::merge(&replay_opts, None, None).unwrap();
        assert_eq!(replayed.dataset, resolved.dataset);
        assert_eq!(replayed.pairs, resolved.pairs);
        assert_eq!(replayed.seed, resolved.seed);
        assert_eq!(replayed.beta, resolved.beta);
        assert_eq!(replayed.betas, resolved.betas);
        assert_eq!(replayed.attack, resolved.attack);
    }
}
