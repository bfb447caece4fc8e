//! Trains the two bundled toy embedders on the sample dataset and saves
//! their weights. The checked-in copies at `assets/models/` were produced
//! with the defaults; rerunning reproduces them byte-for-byte. Also prints
//! each model's impostor-score threshold at 0.1% FAR, which is what the
//! `threshold` values in `configs/models.toml` were frozen from.
//!
//! ```text
//! cargo run -p advmask --example train_toy_models -- [dataset] [out_dir]
//! ```

use std::path::PathBuf;

use advmask::eval::{calibrate_threshold, impostor_scores, Dataset, ImpostorMode, TrainPlan};
use advmask::models::Embedder;
use rand::SeedableRng;

fn main() {
    let mut args = std::env::args().skip(1);
    let dataset_root: PathBuf = args
        .next()
        .unwrap_or_else(|| "assets/sample_faces".into())
        .into();
    let out_dir: PathBuf = args.next().unwrap_or_else(|| "assets/models".into()).into();

    let dataset = Dataset::ingest(&dataset_root).expect("dataset ingestion failed");
    std::fs::create_dir_all(&out_dir).expect("creating output directory");

    let base = TrainPlan {
        model_seed: 0,
        proto_seed: 4242,
        input_size: 0,
        pool: 4,
        hidden: 0,
        dim: 24,
        epochs: 2000,
        lr: 0.08,
    };
    let plans = [
        (
            "toy_a",
            TrainPlan {
                model_seed: 101,
                input_size: 32,
                hidden: 24,
                ..base.clone()
            },
        ),
        (
            "toy_b",
            TrainPlan {
                model_seed: 202,
                input_size: 40,
                hidden: 28,
                ..base
            },
        ),
    ];

    for (name, plan) in plans {
        let model = advmask::eval::train_embedder(&dataset, name, &plan).expect("training failed");
        let path = out_dir.join(format!("{name}.json"));
        model.save(&path).expect("saving weights");

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let scores = impostor_scores(&dataset, &model, ImpostorMode::All, &mut rng)
            .expect("impostor scoring failed");
        let calibrated = calibrate_threshold(&scores, 0.001).expect("calibration failed");
        println!(
            "{name}: input {}px, wrote {}, threshold {} (FAR {:.4} over {} impostor pairs)",
            model.spec().input_size,
            path.display(),
            calibrated.tau,
            calibrated.far,
            scores.len()
        );
    }
}
