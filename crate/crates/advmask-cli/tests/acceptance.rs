//! Acceptance suite: one test per release criterion, each ending in a
//! printed pass line (run with `--nocapture` to see them; a failed
//! assertion is the corresponding fail line). Criteria 1–7 exercise the
//! library against independent oracles transcribed here; criteria 8–9 run
//! the installed binary end to end. Tolerances are pinned next to each
//! check.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use advmask::attack::{paste_attack, run_attack, AttackConfig, AttackMethod, NormMode};
use advmask::canvas::{FaceImage, PixelGrid};
use advmask::eval::{
    asr, calibrate_threshold, mcs, run_eval, sample_pairs, train_embedder, Dataset,
    EvalSettings, TrainPlan,
};
use advmask::maskgeom::{composite, default_template, BinaryMask};
use advmask::models::{Embedder, ModelHandle, SmallEmbedder};
use advmask::report::EvaluationReport;
use advmask::rst::{
    build_matrix, rst_transform, sample_rst, warp_bilinear, warp_bilinear_vjp, Pivot,
    SimilarityTransformParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn sample_dataset() -> Dataset {
    Dataset::ingest(&workspace_root().join("assets/sample_faces")).expect("bundled dataset")
}

fn advmask_bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_advmask"));
    cmd.current_dir(workspace_root());
    cmd
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> FaceImage {
    FaceImage::from_fn(w, h, |_, _, _| rng.random_range(0.0..1.0))
}

/// Interior rectangle mask, never touching the border, never empty.
fn rect_mask(rng: &mut impl Rng, w: usize, h: usize) -> BinaryMask {
    let x0 = rng.random_range(1..w / 2);
    let x1 = rng.random_range(w / 2..w - 1);
    let y0 = rng.random_range(1..h / 2);
    let y1 = rng.random_range(h / 2..h - 1);
    BinaryMask::from_fn(w, h, |x, y| (x0..=x1).contains(&x) && (y0..=y1).contains(&y))
}

fn toys(count: usize, base_seed: u64) -> Vec<ModelHandle> {
    (0..count)
        .map(|i| {
            let m =
                SmallEmbedder::random(&format!("toy{i}"), base_seed + i as u64, 8, 2, 10, 12)
                    .unwrap();
            Arc::new(m) as ModelHandle
        })
        .collect()
}

/// Literal transcription of the update rule: step only masked pixels by
/// `alpha * sign(g)`, clip to the epsilon ball around `x0`, then to [0, 1].
fn oracle_step_linf(
    x: &mut FaceImage,
    x0: &FaceImage,
    mask: &BinaryMask,
    g: &PixelGrid,
    alpha: f64,
    epsilon: f64,
) {
    let (w, h) = x.dims();
    for y in 0..h {
        for xi in 0..w {
            if !mask.is_set(xi, y) {
                continue;
            }
            for c in 0..3 {
                let gv = g[(y, xi, c)];
                let s = if gv > 0.0 {
                    1.0
                } else if gv < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let base = x0.get(xi, y, c);
                let v = (x.get(xi, y, c) - alpha * s)
                    .clamp(base - epsilon, base + epsilon)
                    .clamp(0.0, 1.0);
                x.set(xi, y, c, v);
            }
        }
    }
}

/// One gradient evaluation through a fresh transform, from public pieces.
fn oracle_grad(
    x: &FaceImage,
    model: &dyn Embedder,
    target: &advmask::models::Embedding,
    params: &SimilarityTransformParams,
    w: usize,
    h: usize,
) -> (f64, PixelGrid) {
    let t = rst_transform(params, w, h, Pivot::Center);
    let (loss, g_warped) = model.loss_grad(&warp_bilinear(x, &t), target);
    (loss, warp_bilinear_vjp(&g_warped, &t))
}

#[test]
fn criterion_1_constraints_and_feasibility() {
    let started = Instant::now();
    let sizes = [32, 48, 64, 96, 128, 192, 256, 384, 512];
    for run in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + run);
        let size = sizes[rng.random_range(0..sizes.len())];
        let norm = if run % 2 == 0 {
            NormMode::Linf
        } else {
            NormMode::L2
        };
        let method = [
            AttackMethod::Am,
            AttackMethod::Rstam,
            AttackMethod::RstamAll,
            AttackMethod::RstamMeta,
        ][rng.random_range(0..4)];
        let model_count = match method {
            AttackMethod::RstamMeta => rng.random_range(2..=3),
            AttackMethod::RstamAll => rng.random_range(1..=3),
            _ => 1,
        };
        let mut config = AttackConfig::new(method, norm);
        config.epsilon = rng.random_range(0.05..0.45);
        config.alpha = match norm {
            NormMode::Linf => rng.random_range(0.001..0.05),
            NormMode::L2 => rng.random_range(0.5..4.0),
        };
        config.beta = rng.random_range(0.0..0.5);
        config.iters = rng.random_range(1..=5);
        config.seed = rng.random();

        let source = random_image(&mut rng, size, size);
        let target = random_image(&mut rng, size, size);
        let mask = rect_mask(&mut rng, size, size);
        let models = toys(model_count, 40 + run);

        let result = run_attack(&source, &target, &mask, &models, &config)
            .unwrap_or_else(|e| panic!("run {run} ({size}px, {method:?}, {norm:?}): {e}"));
        let x0 = composite(&source, &target, &mask).unwrap();

        let (w, h) = result.x_adv.dims();
        let mut linf = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = result.x_adv.get(x, y, c);
                    assert!((0.0..=1.0).contains(&v), "run {run}: pixel {v} out of [0,1]");
                    if mask.is_set(x, y) {
                        linf = linf.max((v - x0.get(x, y, c)).abs());
                    } else {
                        // off-mask pixels must be the source, bit for bit
                        assert!(
                            v.to_bits() == source.get(x, y, c).to_bits(),
                            "run {run}: off-mask pixel changed at ({x},{y},{c})"
                        );
                    }
                }
            }
        }
        if norm == NormMode::Linf {
            assert!(
                linf <= config.epsilon + 1e-6,
                "run {run}: L-inf {linf} exceeds epsilon {}",
                config.epsilon
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "[acceptance] criterion 1 (constraints over 100 fuzzed runs): PASS in {:.1}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_2_gradients_match_finite_differences() {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for k in 0..24u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + k);
        let model = SmallEmbedder::random(
            &format!("fd{k}"),
            k,
            [4, 8][rng.random_range(0..2)],
            2,
            rng.random_range(6..=12),
            rng.random_range(8..=16),
        )
        .unwrap();
        let x = random_image(&mut rng, 8, 8);
        let target = model.embed(&random_image(&mut rng, 8, 8));
        let beta = rng.random_range(0.0..0.4);
        let params = sample_rst(beta, 8, 8, &mut rng).unwrap();
        let t = rst_transform(&params, 8, 8, Pivot::Center);

        let (_, g_warped) = model.loss_grad(&warp_bilinear(&x, &t), &target);
        let analytic = warp_bilinear_vjp(&g_warped, &t);

        let h = 1e-5;
        for y in 0..8 {
            for xi in 0..8 {
                for c in 0..3 {
                    let mut plus = x.clone();
                    plus.data_mut()[(y, xi, c)] += h;
                    let mut minus = x.clone();
                    minus.data_mut()[(y, xi, c)] -= h;
                    let lp = model.loss_grad(&warp_bilinear(&plus, &t), &target).0;
                    let lm = model.loss_grad(&warp_bilinear(&minus, &t), &target).0;
                    let fd = (lp - lm) / (2.0 * h);
                    let ga = analytic[(y, xi, c)];
                    // small absolute floor keeps dead pixels from dividing by zero
                    let rel = (ga - fd).abs() / ga.abs().max(fd.abs()).max(1e-6);
                    worst = worst.max(rel);
                }
            }
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "[acceptance] criterion 2 (gradient vs central differences, 24 configs): PASS, max rel {worst:.2e}"
    );
}

fn mat_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[test]
fn criterion_3_transform_oracles() {
    // three-factor product: Translate * Rotate * Scale, built independently
    let mut rng = ChaCha8Rng::seed_from_u64(3000);
    for _ in 0..200 {
        let params = sample_rst(0.49, 300, 200, &mut rng).unwrap();
        let translate = [
            [1.0, 0.0, params.t_x],
            [0.0, 1.0, params.t_y],
            [0.0, 0.0, 1.0],
        ];
        let (sin, cos) = params.theta.sin_cos();
        let rotate = [[cos, sin, 0.0], [-sin, cos, 0.0], [0.0, 0.0, 1.0]];
        let s = params.scale;
        let scale = [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, 1.0]];
        let product = mat_mul(mat_mul(translate, rotate), scale);
        let built = build_matrix(&params);
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (built.matrix()[i][j] - product[i][j]).abs() <= 1e-12,
                    "element ({i},{j}) differs"
                );
            }
        }
    }

    // hand-computed example: (t=(10,-5), theta=pi/6, s=1.1) applied to (1,0)
    let params = SimilarityTransformParams {
        t_x: 10.0,
        t_y: -5.0,
        theta: std::f64::consts::FRAC_PI_6,
        scale: 1.1,
    };
    let (px, py) = build_matrix(&params).map_point((1.0, 0.0));
    assert!((px - 10.95263).abs() <= 1e-5, "x: {px}");
    assert!((py - -5.55).abs() <= 1e-5, "y: {py}");

    // sampler bounds over 1e5 draws
    let (beta, w, h) = (0.25, 200usize, 120usize);
    for _ in 0..100_000 {
        let p = sample_rst(beta, w, h, &mut rng).unwrap();
        assert!(p.t_x.abs() <= beta * w as f64);
        assert!(p.t_y.abs() <= beta * h as f64);
        assert!(p.theta.abs() <= beta * std::f64::consts::FRAC_PI_2);
        assert!((1.0 - beta..=1.0 + beta).contains(&p.scale));
    }

    // beta = 0 is the identity transform exactly
    let p0 = sample_rst(0.0, 64, 64, &mut rng).unwrap();
    assert_eq!(p0.t_x, 0.0);
    assert_eq!(p0.t_y, 0.0);
    assert_eq!(p0.theta, 0.0);
    assert_eq!(p0.scale, 1.0);
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    assert_eq!(*build_matrix(&p0).matrix(), identity);
    let centered = rst_transform(&p0, 64, 64, Pivot::Center);
    assert_eq!(*centered.matrix(), identity);

    println!("[acceptance] criterion 3 (similarity-transform oracles): PASS");
}

#[test]
fn criterion_4_ensemble_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4000);
    let (w, h) = (12, 12);
    let source = random_image(&mut rng, w, h);
    let target = random_image(&mut rng, w, h);
    let mask = rect_mask(&mut rng, w, h);
    let x0 = composite(&source, &target, &mask).unwrap();

    // hard ensemble: update direction is the brute-force mean gradient
    let models = toys(3, 60);
    let mut config = AttackConfig::new(AttackMethod::RstamAll, NormMode::Linf);
    config.epsilon = 0.2;
    config.alpha = 0.05;
    config.beta = 0.0;
    config.seed = 9;
    let target_embs: Vec<_> = models.iter().map(|m| m.embed(&target)).collect();
    let mut x = x0.clone();
    for iters in 1..=4 {
        // one more oracle step, transcribed literally
        let grads: Vec<PixelGrid> = models
            .iter()
            .zip(&target_embs)
            .map(|(m, e)| m.loss_grad(&x, e).1)
            .collect();
        let mean = grads
            .into_iter()
            .reduce(|mut acc, g| {
                acc += &g;
                acc
            })
            .unwrap()
            / 3.0;
        oracle_step_linf(&mut x, &x0, &mask, &mean, config.alpha, config.epsilon);

        config.iters = iters;
        let attack = run_attack(&source, &target, &mask, &models, &config).unwrap();
        let diff = attack.x_adv.max_abs_diff(&x);
        assert!(diff <= 1e-9, "iterate {iters}: hard ensemble differs by {diff}");
    }

    // meta ensemble with two models vs a literal transcription
    let models = toys(2, 80);
    let target_embs: Vec<_> = models.iter().map(|m| m.embed(&target)).collect();
    let mut config = AttackConfig::new(AttackMethod::RstamMeta, NormMode::Linf);
    config.epsilon = 0.25;
    config.alpha = 0.04;
    config.beta = 0.2;
    config.seed = 31;
    let mut x = x0.clone();
    let mut oracle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    for iters in 1..=5 {
        let que = oracle_rng.random_range(0..2);
        let sup = 1 - que;
        let params_sup = sample_rst(config.beta, w, h, &mut oracle_rng).unwrap();
        let (_, g_sup) = oracle_grad(
            &x,
            models[sup].as_ref(),
            &target_embs[sup],
            &params_sup,
            w,
            h,
        );
        let mut x_meta = x.clone();
        oracle_step_linf(&mut x_meta, &x0, &mask, &g_sup, config.alpha, config.epsilon);
        let params_que = sample_rst(config.beta, w, h, &mut oracle_rng).unwrap();
        let (_, g_que) = oracle_grad(
            &x_meta,
            models[que].as_ref(),
            &target_embs[que],
            &params_que,
            w,
            h,
        );
        // m = 2: one support model, so the divisor m - 1 is 1
        let g = &g_sup + &g_que;
        oracle_step_linf(&mut x, &x0, &mask, &g, config.alpha, config.epsilon);

        config.iters = iters;
        let attack = run_attack(&source, &target, &mask, &models, &config).unwrap();
        let diff = attack.x_adv.max_abs_diff(&x);
        assert!(diff <= 1e-9, "iterate {iters}: meta ensemble differs by {diff}");
        assert_eq!(attack.queries, 2 * iters, "2(m-1) evaluations per iteration");
    }

    println!("[acceptance] criterion 4 (ensemble update oracles): PASS");
}

#[test]
fn criterion_5_metric_oracles() {
    // hand-counted fixtures
    let rate = asr(&[0.5, 0.3, 0.1], 0.241).unwrap();
    assert!((rate - 100.0 * 2.0 / 3.0).abs() <= 1e-12, "asr {rate}");
    let mean = mcs(&[70.0, 20.0, 10.0]).unwrap();
    assert!((mean - 100.0 / 3.0).abs() <= 1e-12, "mcs {mean}");

    // monotonicity in the threshold over 1000 fuzzed score sets
    let mut rng = ChaCha8Rng::seed_from_u64(5000);
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut taus = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        taus.sort_by(f64::total_cmp);
        assert!(asr(&scores, taus[0]).unwrap() >= asr(&scores, taus[1]).unwrap());
    }

    // calibration minimality, recounted by sort-and-scan
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.0..1.0)).collect();
    let far_target = 0.001;
    let got = calibrate_threshold(&scores, far_target).unwrap();
    let far_at = |tau: f64| {
        scores.iter().filter(|&&s| s > tau).count() as f64 / scores.len() as f64
    };
    assert!(scores.contains(&got.tau), "tau must be an observed score");
    assert!(far_at(got.tau) <= far_target, "tau misses the FAR target");
    assert_eq!(got.far, far_at(got.tau), "reported FAR must match a recount");
    let mut sorted = scores.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    for &s in sorted.iter().take_while(|&&s| s < got.tau) {
        assert!(
            far_at(s) > far_target,
            "smaller observed score {s} also satisfies the FAR target"
        );
    }

    println!("[acceptance] criterion 5 (metric oracles): PASS");
}

#[test]
fn criterion_6_reduction_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(6000);
    let (w, h) = (20, 16);
    let source = random_image(&mut rng, w, h);
    let target = random_image(&mut rng, w, h);
    let mask = rect_mask(&mut rng, w, h);
    let model = toys(1, 90);

    // beta = 0 turns the transformed attack into the plain masked attack
    let mut am = AttackConfig::new(AttackMethod::Am, NormMode::Linf);
    am.iters = 12;
    am.alpha = 0.02;
    am.seed = 77;
    let mut rstam = am.clone();
    rstam.method = AttackMethod::Rstam;
    rstam.beta = 0.0;
    let a = run_attack(&source, &target, &mask, &model, &am).unwrap();
    let r = run_attack(&source, &target, &mask, &model, &rstam).unwrap();
    assert_eq!(a.x_adv.data(), r.x_adv.data(), "iterates must match bitwise");
    assert_eq!(a.adv_mask.data(), r.adv_mask.data());
    assert_eq!(a.loss_trace, r.loss_trace);

    // zero iterations reduce every method to the paste baseline
    let mut zero = AttackConfig::new(AttackMethod::Rstam, NormMode::L2);
    zero.iters = 0;
    let z = run_attack(&source, &target, &mask, &model, &zero).unwrap();
    let paste = paste_attack(&source, &target, &mask).unwrap();
    assert_eq!(z.x_adv.data(), paste.x_adv.data());
    assert_eq!(
        z.x_adv.data(),
        composite(&source, &target, &mask).unwrap().data()
    );
    assert_eq!(z.queries, 0);

    println!("[acceptance] criterion 6 (reduction identities): PASS");
}

#[test]
fn criterion_7_transferability_trend() {
    let started = Instant::now();
    let dataset = sample_dataset();

    // two embedders trained toward shared prototypes, different geometry
    let base = TrainPlan {
        model_seed: 301,
        proto_seed: 777,
        input_size: 32,
        pool: 4,
        hidden: 24,
        dim: 24,
        epochs: 2000,
        lr: 0.08,
    };
    let white_box = Arc::new(train_embedder(&dataset, "white", &base).unwrap()) as ModelHandle;
    let held_out = Arc::new(
        train_embedder(
            &dataset,
            "held-out",
            &TrainPlan {
                model_seed: 302,
                input_size: 40,
                hidden: 28,
                ..base
            },
        )
        .unwrap(),
    ) as ModelHandle;

    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let pairs = sample_pairs(&dataset, 50, &mut rng).unwrap();

    let mut attack = AttackConfig::new(AttackMethod::Rstam, NormMode::Linf);
    attack.iters = 200;
    attack.beta = 0.2;
    attack.seed = 660;
    let mean_of = |attack: AttackConfig| {
        let settings = EvalSettings {
            attack,
            template: default_template(),
            canvas: 128,
            keep_images: false,
        };
        let run = run_eval(
            &dataset,
            &pairs,
            std::slice::from_ref(&white_box),
            std::slice::from_ref(&held_out),
            &settings,
        )
        .unwrap();
        let cosines = run.all_cosines();
        cosines.iter().sum::<f64>() / cosines.len() as f64
    };
    let transformed = mean_of(attack.clone());
    attack.method = AttackMethod::Am;
    attack.beta = 0.0;
    let plain = mean_of(attack);

    assert!(
        transformed >= plain + 0.02,
        "no transfer gain: transformed {transformed:.4} vs plain {plain:.4}"
    );
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    println!(
        "[acceptance] criterion 7 (transferability trend): PASS, {transformed:.4} vs {plain:.4} in {:.0}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_8_hermetic_end_to_end() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = |name: &str| dir.path().join(name).display().to_string();
    let common = [
        "--dataset",
        "assets/sample_faces",
        "--models",
        "configs/models.toml",
        "--surrogates",
        "toy_a",
        "--victims",
        "toy_b",
        "--pairs",
        "4",
        "--iters",
        "40",
        "--seed",
        "3",
        "--canvas",
        "128",
    ];

    let attack = advmask_bin()
        .arg("attack")
        .args(common)
        .args(["--out", &out("attack")])
        .output()
        .unwrap();
    assert!(
        attack.status.success(),
        "attack failed: {}",
        String::from_utf8_lossy(&attack.stderr)
    );
    assert!(dir.path().join("attack/summary.json").exists());

    for run in ["eval1", "eval2"] {
        let eval = advmask_bin()
            .arg("evaluate")
            .args(common)
            .args(["--backends", "configs/backends.toml", "--out", &out(run)])
            .output()
            .unwrap();
        assert!(
            eval.status.success(),
            "{run} failed: {}",
            String::from_utf8_lossy(&eval.stderr)
        );
    }

    // the report must satisfy its own consistency checker after a disk trip
    let report = EvaluationReport::read_json(&dir.path().join("eval1/report.json")).unwrap();
    report.verify_consistency().unwrap();
    assert_eq!(report.per_pair.len(), 4);
    assert!(report.mcs.contains_key("mock"), "mock backend must be scored");

    // identical seeds must reproduce the artifacts byte for byte; the
    // config snapshots agree on everything except where output landed
    for file in ["report.json", "report.csv"] {
        let a = std::fs::read(dir.path().join("eval1").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("eval2").join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
    let snapshot = |run: &str| -> serde_json::Value {
        let text = std::fs::read_to_string(dir.path().join(run).join("config.json")).unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
        value.as_object_mut().unwrap().remove("out");
        value
    };
    assert_eq!(snapshot("eval1"), snapshot("eval2"));

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(180), "took {elapsed:?}");
    println!(
        "[acceptance] criterion 8 (hermetic attack + evaluate): PASS in {:.1}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_9_beta_sweep_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let sweep = advmask_bin()
        .arg("sweep-beta")
        .args([
            "--dataset",
            "assets/sample_faces",
            "--models",
            "configs/models.toml",
            "--surrogates",
            "toy_a",
            "--victims",
            "toy_b",
            "--pairs",
            "2",
            "--iters",
            "15",
            "--seed",
            "8",
            "--canvas",
            "128",
            "--betas",
            "0,0.1,0.2,0.3,0.4,0.5",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        sweep.status.success(),
        "sweep failed: {}",
        String::from_utf8_lossy(&sweep.stderr)
    );

    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7, "header plus one row per strength");
    let betas: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(betas, ["0", "0.1", "0.2", "0.3", "0.4", "0.5"]);

    let svg = std::fs::read_to_string(out.join("sweep.svg")).unwrap();
    assert!(!svg.is_empty());
    assert!(svg.contains("id=\"recommended-band\""), "band annotation missing");
    assert!(svg.contains("data-lo=\"0.15\"") && svg.contains("data-hi=\"0.25\""));
    assert!(svg.contains("recommended 0.15–0.25"));
    assert_eq!(svg.matches("data-asr=").count(), 6, "one rate marker per strength");
    assert_eq!(
        svg.matches("data-mean-cosine=").count(),
        6,
        "one cosine marker per strength"
    );

    println!("[acceptance] criterion 9 (transform-strength sweep artifact): PASS");
}
