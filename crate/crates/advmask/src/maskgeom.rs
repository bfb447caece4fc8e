//! Binary masks, facial landmarks, similarity fitting, and mask placement.
//!
//! A mask template is authored once in a canonical coordinate frame — the
//! widely used 5-point alignment template scaled up to the working canvas.
//! For a concrete face we fit the similarity transform that carries the
//! canonical landmarks onto the face's landmarks, pull the template through
//! the inverse of that fit, and re-binarize. Compositing is a per-pixel
//! branch select so masked-off source pixels survive bit-for-bit.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canvas::FaceImage;
use crate::rst::{build_matrix, warp_plane_to, SimilarityTransformParams};

/// Identifier of the 5-point landmark scheme used throughout.
pub const LANDMARK_SCHEME: &str = "face5";

/// Base 5-point alignment template, defined on a 112×112 crop:
/// left eye, right eye, nose tip, left mouth corner, right mouth corner.
const BASE_LANDMARKS_112: [[f64; 2]; 5] = [
    [38.2946, 51.6963],
    [73.5318, 51.5014],
    [56.0252, 71.7366],
    [41.5493, 92.3655],
    [70.7299, 92.2041],
];

#[derive(Error, Debug)]
pub enum MaskGeomError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to decode mask image: {0}")]
    Decode(#[from] image::ImageError),
    #[error("invalid landmark sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("mask is {got_w}x{got_h} but {want_w}x{want_h} was expected")]
    DimensionMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("unsupported landmark scheme {0:?} (expected {LANDMARK_SCHEME:?})")]
    UnsupportedScheme(String),
    #[error("landmark scheme {0:?} has {1} points, expected {2}")]
    WrongPointCount(String, usize, usize),
    #[error("landmark sets have mismatched sizes: {src} vs {dst}")]
    CountMismatch { src: usize, dst: usize },
    #[error("need at least two landmarks to fit a similarity, got {0}")]
    TooFewPoints(usize),
    #[error("similarity fit is singular: landmark points are coincident")]
    SingularFit,
    #[error("placed mask selects no pixels on the target canvas")]
    EmptyMask,
    #[error("mask values must be 0 or 1, found {0}")]
    NotBinary(u8),
}

/// Per-pixel 0/1 mask stored as `(h, w)` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    data: Array2<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    /// Wraps raw data, rejecting any value other than 0 or 1.
    pub fn new(data: Array2<u8>) -> Result<Self, MaskGeomError> {
        if let Some(&bad) = data.iter().find(|&&v| v > 1) {
            return Err(MaskGeomError::NotBinary(bad));
        }
        Ok(Self { data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self {
            data: Array2::from_shape_fn((height, width), |(y, x)| u8::from(f(x, y))),
        }
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    #[inline]
    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.data[(y, x)] == 1
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn ones_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of canvas pixels the mask selects.
    pub fn fraction(&self) -> f64 {
        self.ones_count() as f64 / (self.width() * self.height()) as f64
    }

    /// Mean `(x, y)` of selected pixels; `None` when the mask is empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for ((y, x), &v) in self.data.indexed_iter() {
            if v == 1 {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Inclusive `(x0, y0, x1, y1)` bounds of selected pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for ((y, x), &v) in self.data.indexed_iter() {
            if v == 1 {
                bounds = Some(match bounds {
                    None => (x, y, x, y),
                    Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                });
            }
        }
        bounds
    }

    pub fn to_float(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    /// Re-binarizes a real-valued plane: values `>= 0.5` become 1.
    pub fn from_float(plane: &Array2<f64>) -> Self {
        Self {
            data: plane.mapv(|v| u8::from(v >= 0.5)),
        }
    }

    /// Decodes a PNG; pixels with luma `>= 128` become 1.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, MaskGeomError> {
        let img = image::load_from_memory(bytes)?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = Array2::from_shape_fn((h, w), |(y, x)| {
            u8::from(img.get_pixel(x as u32, y as u32).0[0] >= 128)
        });
        Ok(Self { data })
    }

    pub fn load_png(path: &Path) -> Result<Self, MaskGeomError> {
        let bytes = std::fs::read(path).map_err(|source| MaskGeomError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_png_bytes(&bytes)
    }

    /// Writes the mask as an 8-bit grayscale PNG (0 or 255).
    pub fn save_png(&self, path: &Path) -> Result<(), MaskGeomError> {
        let (w, h) = self.dims();
        let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([self.data[(y as usize, x as usize)] * 255])
        });
        img.save(path).map_err(MaskGeomError::Decode)
    }
}

/// Named landmark points on a face image, serialized as a JSON sidecar
/// `{"scheme": "face5", "points": [[x, y], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceLandmarks {
    pub scheme: String,
    pub points: Vec<[f64; 2]>,
}

impl FaceLandmarks {
    /// Wraps five points in the standard scheme.
    pub fn face5(points: [[f64; 2]; 5]) -> Self {
        Self {
            scheme: LANDMARK_SCHEME.to_string(),
            points: points.to_vec(),
        }
    }

    fn validate(&self) -> Result<(), MaskGeomError> {
        if self.scheme != LANDMARK_SCHEME {
            return Err(MaskGeomError::UnsupportedScheme(self.scheme.clone()));
        }
        if self.points.len() != 5 {
            return Err(MaskGeomError::WrongPointCount(
                self.scheme.clone(),
                self.points.len(),
                5,
            ));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MaskGeomError> {
        let bytes = std::fs::read(path).map_err(|source| MaskGeomError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let lm: FaceLandmarks = serde_json::from_slice(&bytes)?;
        lm.validate()?;
        Ok(lm)
    }

    pub fn save(&self, path: &Path) -> Result<(), MaskGeomError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|source| MaskGeomError::Write {
            path: path.display().to_string(),
            source,
        })
    }

    /// Applies an affine point map to every landmark.
    pub fn map(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        Self {
            scheme: self.scheme.clone(),
            points: self
                .points
                .iter()
                .map(|&[x, y]| {
                    let (nx, ny) = f(x, y);
                    [nx, ny]
                })
                .collect(),
        }
    }
}

/// Canonical landmark positions on a `size`×`size` canvas (the 112-pixel
/// alignment template scaled uniformly).
pub fn canonical_landmarks(size: usize) -> FaceLandmarks {
    let s = size as f64 / 112.0;
    FaceLandmarks {
        scheme: LANDMARK_SCHEME.to_string(),
        points: BASE_LANDMARKS_112
            .iter()
            .map(|&[x, y]| [x * s, y * s])
            .collect(),
    }
}

/// The bundled 512×512 mask template: a face-shaped region with eye holes,
/// registered to [`canonical_landmarks`]`(512)`.
pub fn default_template() -> BinaryMask {
    static BYTES: &[u8] = include_bytes!("../assets/mask_template.png");
    BinaryMask::from_png_bytes(BYTES).expect("bundled template must decode")
}

/// Loads a user-supplied mask and checks it matches the expected canvas.
pub fn load_initial_mask(
    path: &Path,
    want_w: usize,
    want_h: usize,
) -> Result<BinaryMask, MaskGeomError> {
    let mask = BinaryMask::load_png(path)?;
    let (got_w, got_h) = mask.dims();
    if (got_w, got_h) != (want_w, want_h) {
        return Err(MaskGeomError::DimensionMismatch {
            got_w,
            got_h,
            want_w,
            want_h,
        });
    }
    Ok(mask)
}

/// Least-squares similarity transform mapping `src` landmarks onto `dst`.
///
/// Closed form: with centered points ŝ and d̂, the linear block
/// `[[a, b], [-b, a]]` minimizing the residual has
/// `a = Σ(d̂·ŝ) / Σ|ŝ|²` and `b = Σ(d̂_x ŝ_y - d̂_y ŝ_x) / Σ|ŝ|²`;
/// translation re-centers the means. Coincident points are rejected.
pub fn fit_similarity(
    src: &FaceLandmarks,
    dst: &FaceLandmarks,
) -> Result<SimilarityTransformParams, MaskGeomError> {
    let (s, d) = (&src.points, &dst.points);
    if s.len() != d.len() {
        return Err(MaskGeomError::CountMismatch {
            src: s.len(),
            dst: d.len(),
        });
    }
    if s.len() < 2 {
        return Err(MaskGeomError::TooFewPoints(s.len()));
    }
    let n = s.len() as f64;
    let mean = |pts: &Vec<[f64; 2]>| {
        let (mut mx, mut my) = (0.0, 0.0);
        for p in pts {
            mx += p[0];
            my += p[1];
        }
        (mx / n, my / n)
    };
    let (msx, msy) = mean(s);
    let (mdx, mdy) = mean(d);

    let (mut num_a, mut num_b, mut den) = (0.0, 0.0, 0.0);
    for (ps, pd) in s.iter().zip(d.iter()) {
        let (sx, sy) = (ps[0] - msx, ps[1] - msy);
        let (dx, dy) = (pd[0] - mdx, pd[1] - mdy);
        num_a += dx * sx + dy * sy;
        num_b += dx * sy - dy * sx;
        den += sx * sx + sy * sy;
    }
    if den <= 1e-12 {
        return Err(MaskGeomError::SingularFit);
    }
    let a = num_a / den;
    let b = num_b / den;
    let scale = a.hypot(b);
    if scale <= 1e-12 {
        return Err(MaskGeomError::SingularFit);
    }
    let theta = b.atan2(a);
    // t = mean(dst) - A * mean(src) with A = [[a, b], [-b, a]]
    let t_x = mdx - (a * msx + b * msy);
    let t_y = mdy - (-b * msx + a * msy);
    Ok(SimilarityTransformParams {
        t_x,
        t_y,
        theta,
        scale,
    })
}

/// Places a canonical-space template onto a `width`×`height` canvas so it
/// lands on the given face landmarks, then re-binarizes at 0.5.
pub fn gen_mask(
    template: &BinaryMask,
    canonical: &FaceLandmarks,
    face: &FaceLandmarks,
    width: usize,
    height: usize,
) -> Result<BinaryMask, MaskGeomError> {
    let params = fit_similarity(canonical, face)?;
    // backward warping wants canvas -> template coordinates
    let pull = build_matrix(&params).inverse();
    let warped = warp_plane_to(&template.to_float(), &pull, width, height);
    let mask = BinaryMask::from_float(&warped);
    if mask.ones_count() == 0 {
        return Err(MaskGeomError::EmptyMask);
    }
    Ok(mask)
}

/// Per-pixel branch select: `overlay` where the mask is set, `base`
/// elsewhere. Unmasked base pixels are copied bit-for-bit.
pub fn composite(
    base: &FaceImage,
    overlay: &FaceImage,
    mask: &BinaryMask,
) -> Result<FaceImage, MaskGeomError> {
    let (w, h) = base.dims();
    if overlay.dims() != (w, h) || mask.dims() != (w, h) {
        let (got_w, got_h) = if overlay.dims() != (w, h) {
            overlay.dims()
        } else {
            mask.dims()
        };
        return Err(MaskGeomError::DimensionMismatch {
            got_w,
            got_h,
            want_w: w,
            want_h: h,
        });
    }
    let mut out = base.clone();
    for y in 0..h {
        for x in 0..w {
            if mask.is_set(x, y) {
                for c in 0..3 {
                    out.set(x, y, c, overlay.get(x, y, c));
                }
            }
        }
    }
    Ok(out)
}

/// Writes `image`'s mask region as an RGBA PNG cropped to the mask's
/// bounding box: opaque inside the mask, fully transparent outside. This is
/// the printable form of an adversarial mask. Returns the crop's pixel
/// `(width, height)` so callers can attach physical-size metadata.
pub fn write_masked_crop(
    image: &FaceImage,
    mask: &BinaryMask,
    path: &Path,
) -> Result<(usize, usize), MaskGeomError> {
    let (w, h) = image.dims();
    if mask.dims() != (w, h) {
        let (got_w, got_h) = mask.dims();
        return Err(MaskGeomError::DimensionMismatch {
            got_w,
            got_h,
            want_w: w,
            want_h: h,
        });
    }
    let (x0, y0, x1, y1) = mask.bounding_box().ok_or(MaskGeomError::EmptyMask)?;
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let mut out = image::RgbaImage::new(cw as u32, ch as u32);
    for y in 0..ch {
        for x in 0..cw {
            let (sx, sy) = (x0 + x, y0 + y);
            let alpha = if mask.is_set(sx, sy) { 255 } else { 0 };
            let quant = |c: usize| (image.get(sx, sy, c) * 255.0).round() as u8;
            out.put_pixel(
                x as u32,
                y as u32,
                image::Rgba([quant(0), quant(1), quant(2), alpha]),
            );
        }
    }
    out.save(path)?;
    Ok((cw, ch))
}
