//! Procedural face-like images with exact landmark ground truth.
//!
//! Real face photos can't ship with the crate, so tests, the bundled sample
//! dataset, and the hermetic CLI path use rendered faces instead. Each
//! identity gets stable appearance parameters (skin tone, feature sizes, a
//! low-frequency skin texture) drawn from a seed; each variant of an identity
//! perturbs the pose with a small similarity transform. Features are drawn in
//! the canonical landmark frame and pulled through the pose, so the reported
//! landmarks are exact by construction — fitting a similarity through them
//! recovers the pose to rounding error.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::canvas::FaceImage;
use crate::maskgeom::{canonical_landmarks, FaceLandmarks};
use crate::rst::{build_matrix, SimilarityTransform, SimilarityTransformParams};

/// Stable per-identity appearance.
#[derive(Debug, Clone)]
pub struct IdentityParams {
    skin: [f64; 3],
    eye: [f64; 3],
    mouth: [f64; 3],
    background: [f64; 3],
    background2: [f64; 3],
    /// Face ellipse semi-axes as fractions of the canonical 512 frame.
    face_ax: f64,
    face_ay: f64,
    eye_radius: f64,
    nose_size: f64,
    mouth_width: f64,
    brow_strength: f64,
    tex_amp: f64,
    tex_fx: f64,
    tex_fy: f64,
    tex_phase: f64,
}

/// Small per-image pose jitter, expressed in the canonical frame.
#[derive(Debug, Clone, Copy)]
pub struct PoseParams {
    pub t_x: f64,
    pub t_y: f64,
    pub theta: f64,
    pub scale: f64,
    /// Horizontal lighting gradient strength.
    light: f64,
}

pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl IdentityParams {
    pub fn sample(dataset_seed: u64, identity: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(dataset_seed, identity, 0));
        let base = rng.random_range(0.45..0.85);
        let skin = [
            base,
            base * rng.random_range(0.72..0.88),
            base * rng.random_range(0.55..0.75),
        ];
        let eye_l = rng.random_range(0.05..0.3);
        Self {
            skin,
            eye: [eye_l, eye_l * rng.random_range(0.8..1.2), rng.random_range(0.1..0.5)],
            mouth: [
                rng.random_range(0.45..0.75),
                rng.random_range(0.15..0.3),
                rng.random_range(0.2..0.35),
            ],
            background: [
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
            ],
            background2: [
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
            ],
            face_ax: rng.random_range(0.26..0.32),
            face_ay: rng.random_range(0.34..0.42),
            eye_radius: rng.random_range(0.045..0.07),
            nose_size: rng.random_range(0.03..0.05),
            mouth_width: rng.random_range(0.8..1.1),
            brow_strength: rng.random_range(0.0..0.5),
            tex_amp: rng.random_range(0.02..0.06),
            tex_fx: rng.random_range(0.015..0.06),
            tex_fy: rng.random_range(0.015..0.06),
            tex_phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }
}

impl PoseParams {
    /// Neutral pose (used for the first variant of each identity).
    pub fn neutral() -> Self {
        Self {
            t_x: 0.0,
            t_y: 0.0,
            theta: 0.0,
            scale: 1.0,
            light: 0.0,
        }
    }

    pub fn sample(dataset_seed: u64, identity: u64, variant: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(dataset_seed, identity, variant + 1));
        Self {
            t_x: rng.random_range(-12.0..12.0),
            t_y: rng.random_range(-12.0..12.0),
            theta: rng.random_range(-0.06..0.06),
            scale: rng.random_range(0.94..1.06),
            light: rng.random_range(-0.08..0.08),
        }
    }
}

#[inline]
fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Soft inside-ness of an ellipse: 1 well inside, 0 outside.
#[inline]
fn ellipse_mask(x: f64, y: f64, cx: f64, cy: f64, ax: f64, ay: f64, soft: f64) -> f64 {
    let d = ((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2);
    1.0 - smoothstep(1.0 - soft, 1.0 + soft, d)
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Renders one face. The pose similarity is applied about the canvas center;
/// returned landmarks are the canonical points mapped through the same pose.
pub fn render_face(size: usize, id: &IdentityParams, pose: &PoseParams) -> (FaceImage, FaceLandmarks) {
    let s = size as f64;
    let unit = s / 512.0; // feature dimensions are authored on the 512 frame
    let canonical = canonical_landmarks(size);
    let params = SimilarityTransformParams {
        t_x: pose.t_x * unit,
        t_y: pose.t_y * unit,
        theta: pose.theta,
        scale: pose.scale,
    };
    let center = (s - 1.0) / 2.0;
    let fwd = build_matrix(&params).about_point(center, center);
    let landmarks = canonical.map(|x, y| fwd.map_point((x, y)));
    let inv: SimilarityTransform = fwd.inverse();

    let pts = &canonical.points;
    let (eye_l, eye_r, nose) = (pts[0], pts[1], pts[2]);
    let (mouth_l, mouth_r) = (pts[3], pts[4]);
    let eye_mid = [(eye_l[0] + eye_r[0]) / 2.0, (eye_l[1] + eye_r[1]) / 2.0];
    let mouth_mid = [(mouth_l[0] + mouth_r[0]) / 2.0, (mouth_l[1] + mouth_r[1]) / 2.0];
    let face_c = [eye_mid[0], (eye_mid[1] + mouth_mid[1]) / 2.0 + 0.04 * s];
    let (face_ax, face_ay) = (id.face_ax * s, id.face_ay * s);
    let eye_r_px = id.eye_radius * s;
    let nose_px = id.nose_size * s;
    let mouth_half = (mouth_r[0] - mouth_l[0]) / 2.0 * id.mouth_width;

    let image = FaceImage::from_fn(size, size, |x, y, c| {
        // evaluate appearance in the canonical frame
        let (cx, cy) = inv.map_point((x as f64, y as f64));

        // background gradient in screen space
        let gt = y as f64 / s;
        let mut col = lerp3(id.background, id.background2, gt);

        let face = ellipse_mask(cx, cy, face_c[0], face_c[1], face_ax, face_ay, 0.08);
        if face > 0.0 {
            let tex = id.tex_amp
                * (id.tex_fx * cx + id.tex_fy * cy + id.tex_phase).sin();
            let lit = pose.light * (cx - face_c[0]) / face_ax;
            let skin = [
                (id.skin[0] + tex + lit).clamp(0.0, 1.0),
                (id.skin[1] + tex * 0.8 + lit).clamp(0.0, 1.0),
                (id.skin[2] + tex * 0.6 + lit).clamp(0.0, 1.0),
            ];
            col = lerp3(col, skin, face);

            // eyes, brows, nose, mouth — all registered to the landmarks
            for eye in [eye_l, eye_r] {
                let m = ellipse_mask(cx, cy, eye[0], eye[1], eye_r_px, eye_r_px * 0.62, 0.25);
                col = lerp3(col, id.eye, m * face);
                let brow = ellipse_mask(
                    cx,
                    cy,
                    eye[0],
                    eye[1] - eye_r_px * 1.6,
                    eye_r_px * 1.3,
                    eye_r_px * 0.35,
                    0.3,
                );
                col = lerp3(col, [0.15, 0.1, 0.08], brow * id.brow_strength * face);
            }
            let nose_m = ellipse_mask(cx, cy, nose[0], nose[1], nose_px, nose_px * 1.5, 0.3);
            let nostril = lerp3(id.skin, [0.2, 0.12, 0.1], 0.55);
            col = lerp3(col, nostril, nose_m * 0.7 * face);

            let mouth_m = ellipse_mask(
                cx,
                cy,
                mouth_mid[0],
                mouth_mid[1],
                mouth_half,
                0.016 * s,
                0.3,
            );
            col = lerp3(col, id.mouth, mouth_m * face);
        }
        col[c]
    });
    (image, landmarks)
}

/// Renders variant `variant` of identity `identity`. Variant 0 is the
/// neutral pose; higher variants jitter the pose.
pub fn synth_face(
    dataset_seed: u64,
    identity: u64,
    variant: u64,
    size: usize,
) -> (FaceImage, FaceLandmarks) {
    let id = IdentityParams::sample(dataset_seed, identity);
    let pose = if variant == 0 {
        PoseParams::neutral()
    } else {
        PoseParams::sample(dataset_seed, identity, variant)
    };
    render_face(size, &id, &pose)
}

#[derive(Serialize)]
struct Manifest<'a> {
    canvas: usize,
    seed: u64,
    scheme: &'a str,
    identities: BTreeMap<String, Vec<String>>,
}

/// Writes a dataset in the standard on-disk layout:
/// `root/<identity>/<image>.png` plus `<image>.landmarks.json` sidecars and
/// a `manifest.json` summary.
pub fn write_dataset(
    root: &Path,
    identities: usize,
    per_identity: usize,
    size: usize,
    seed: u64,
) -> std::io::Result<()> {
    let mut manifest = BTreeMap::new();
    for i in 0..identities {
        let id_name = format!("id_{i:03}");
        let dir = root.join(&id_name);
        std::fs::create_dir_all(&dir)?;
        let mut files = Vec::new();
        for v in 0..per_identity {
            let (image, landmarks) = synth_face(seed, i as u64, v as u64, size);
            let stem = format!("face_{v:02}");
            image
                .save_png(&dir.join(format!("{stem}.png")))
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            landmarks
                .save(&dir.join(format!("{stem}.landmarks.json")))
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            files.push(format!("{stem}.png"));
        }
        manifest.insert(id_name, files);
    }
    let manifest = Manifest {
        canvas: size,
        seed,
        scheme: crate::maskgeom::LANDMARK_SCHEME,
        identities: manifest,
    };
    std::fs::write(
        root.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskgeom::fit_similarity;

    #[test]
    fn rendering_is_deterministic() {
        let (a, _) = synth_face(7, 3, 1, 64);
        let (b, _) = synth_face(7, 3, 1, 64);
        assert_eq!(a.max_abs_diff(&b), 0.0);
        let (c, _) = synth_face(8, 3, 1, 64);
        assert!(a.max_abs_diff(&c) > 0.0);
    }

    #[test]
    fn identities_look_different_variants_look_similar() {
        let (a0, _) = synth_face(1, 0, 0, 64);
        let (a1, _) = synth_face(1, 0, 1, 64);
        let (b0, _) = synth_face(1, 1, 0, 64);
        let mean_diff = |x: &FaceImage, y: &FaceImage| {
            let n = (64 * 64 * 3) as f64;
            x.data()
                .iter()
                .zip(y.data().iter())
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>()
                / n
        };
        assert!(mean_diff(&a0, &a1) < mean_diff(&a0, &b0));
    }

    #[test]
    fn landmarks_carry_the_exact_pose() {
        let size = 128;
        let id = IdentityParams::sample(3, 0);
        let pose = PoseParams {
            t_x: 8.0,
            t_y: -5.0,
            theta: 0.04,
            scale: 1.05,
            light: 0.0,
        };
        let (_, landmarks) = render_face(size, &id, &pose);
        let canonical = canonical_landmarks(size);
        let fitted = fit_similarity(&canonical, &landmarks).unwrap();
        // the fit recovers the pose composed about the canvas center
        assert!((fitted.theta - pose.theta).abs() < 1e-9);
        assert!((fitted.scale - pose.scale).abs() < 1e-9);
    }

    #[test]
    fn landmark_pixels_show_their_features() {
        // eye landmarks sit on eye pixels, which are darker than cheek pixels
        let (img, lm) = synth_face(11, 2, 0, 256);
        let value = |p: [f64; 2]| {
            let (x, y) = (p[0].round() as usize, p[1].round() as usize);
            (img.get(x, y, 0) + img.get(x, y, 1) + img.get(x, y, 2)) / 3.0
        };
        let eye = value(lm.points[0]).min(value(lm.points[1]));
        let nose = lm.points[2];
        let cheek = value([nose[0] + 40.0 * 256.0 / 512.0, nose[1] - 20.0 * 256.0 / 512.0]);
        assert!(eye < cheek - 0.05, "eye {eye} vs cheek {cheek}");
    }

    #[test]
    fn dataset_layout_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), 2, 2, 32, 5).unwrap();
        assert!(dir.path().join("manifest.json").exists());
        for i in 0..2 {
            for v in 0..2 {
                let base = dir.path().join(format!("id_{i:03}"));
                assert!(base.join(format!("face_{v:02}.png")).exists());
                assert!(base.join(format!("face_{v:02}.landmarks.json")).exists());
            }
        }
        let lm = FaceLandmarks::load(
            &dir.path().join("id_000").join("face_00.landmarks.json"),
        )
        .unwrap();
        assert_eq!(lm.points.len(), 5);
    }
}
