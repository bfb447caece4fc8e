//! Random similarity transformations and differentiable bilinear sampling.
//!
//! A similarity transform has four degrees of freedom: translation `(t_x,
//! t_y)`, rotation `theta`, and uniform scale `s`. One hyperparameter `beta`
//! controls the sampling intervals of all four:
//!
//! ```text
//! t_x ~ U(-beta*W, beta*W)      t_y ~ U(-beta*H, beta*H)
//! theta ~ U(-beta*pi/2, beta*pi/2)   s ~ U(1-beta, 1+beta)
//! ```
//!
//! The composed matrix is `Translate(t_x, t_y) * Rotate(theta) * Scale(s)`.
//! Warping is backward: the transform maps output coordinates to input
//! sampling coordinates, interpolated bilinearly. The warp is linear in the
//! pixel values, and [`warp_bilinear_vjp`] provides the exact transpose so
//! gradients can flow through it.

use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canvas::{FaceImage, PixelGrid};
#[cfg(any(feature = "parallel", test))]
use crate::parallel;

#[derive(Error, Debug)]
pub enum RstError {
    #[error("beta must lie in [0, 1), got {0}")]
    InvalidBeta(f64),
    #[error("canvas dimensions must be positive, got {width}x{height}")]
    EmptyCanvas { width: usize, height: usize },
}

/// 4-DoF similarity transform parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransformParams {
    /// Horizontal translation in pixels.
    pub t_x: f64,
    /// Vertical translation in pixels.
    pub t_y: f64,
    /// Rotation in radians.
    pub theta: f64,
    /// Uniform scale; must be positive.
    pub scale: f64,
}

impl SimilarityTransformParams {
    pub const IDENTITY: Self = Self {
        t_x: 0.0,
        t_y: 0.0,
        theta: 0.0,
        scale: 1.0,
    };
}

/// Where rotation and scaling pivot when a transform is applied to an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pivot {
    /// Conjugate by a translation to the image center, so rotation/scale do
    /// not push content toward a corner.
    #[default]
    Center,
    /// Apply the matrix about the (0, 0) corner, exactly as composed.
    Origin,
}

/// Homogeneous 3×3 similarity transform with bottom row `[0, 0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    m: [[f64; 3]; 3],
}

/// Draws 4-DoF parameters for a `width`×`height` canvas.
///
/// Each parameter is drawn independently and uniformly from its interval; the
/// draw order is fixed (t_x, t_y, theta, s) so seeded streams are stable.
/// With `beta = 0` every interval is degenerate and the identity parameters
/// come back exactly.
pub fn sample_rst(
    beta: f64,
    width: usize,
    height: usize,
    rng: &mut impl Rng,
) -> Result<SimilarityTransformParams, RstError> {
    if !(0.0..1.0).contains(&beta) {
        return Err(RstError::InvalidBeta(beta));
    }
    if width == 0 || height == 0 {
        return Err(RstError::EmptyCanvas { width, height });
    }
    let w = width as f64;
    let h = height as f64;
    let t_x = rng.random_range(-beta * w..=beta * w);
    let t_y = rng.random_range(-beta * h..=beta * h);
    let theta = rng.random_range(-beta * std::f64::consts::FRAC_PI_2..=beta * std::f64::consts::FRAC_PI_2);
    let scale = rng.random_range(1.0 - beta..=1.0 + beta);
    Ok(SimilarityTransformParams {
        t_x,
        t_y,
        theta,
        scale,
    })
}

/// Composes `Translate(t_x, t_y) * Rotate(theta) * Scale(s)`:
/// row 0 is `[s*cos, s*sin, t_x]`, row 1 is `[-s*sin, s*cos, t_y]`.
pub fn build_matrix(params: &SimilarityTransformParams) -> SimilarityTransform {
    assert!(params.scale > 0.0, "scale must be positive");
    let (sin, cos) = params.theta.sin_cos();
    let s = params.scale;
    SimilarityTransform {
        m: [
            [s * cos, s * sin, params.t_x],
            [-s * sin, s * cos, params.t_y],
            [0.0, 0.0, 1.0],
        ],
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn from_params(params: &SimilarityTransformParams) -> Self {
        build_matrix(params)
    }

    pub fn translation(t_x: f64, t_y: f64) -> Self {
        Self {
            m: [[1.0, 0.0, t_x], [0.0, 1.0, t_y], [0.0, 0.0, 1.0]],
        }
    }

    /// Wraps a raw row-major matrix; the bottom row must be `[0, 0, 1]`.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Self {
        assert_eq!(m[2], [0.0, 0.0, 1.0], "bottom row must be [0, 0, 1]");
        Self { m }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    /// Homogeneous product `T * [x, y, 1]`, projected back to 2D.
    pub fn map_point(&self, point: (f64, f64)) -> (f64, f64) {
        let (x, y) = point;
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    /// `self * rhs` (apply `rhs` first, then `self`).
    pub fn compose(&self, rhs: &SimilarityTransform) -> SimilarityTransform {
        let a = &self.m;
        let b = &rhs.m;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        m[2] = [0.0, 0.0, 1.0];
        SimilarityTransform { m }
    }

    /// Closed-form affine inverse.
    pub fn inverse(&self) -> SimilarityTransform {
        let [a, b, tx] = self.m[0];
        let [c, d, ty] = self.m[1];
        let det = a * d - b * c;
        assert!(det.abs() > 1e-300, "transform is singular");
        let ia = d / det;
        let ib = -b / det;
        let ic = -c / det;
        let id = a / det;
        SimilarityTransform {
            m: [
                [ia, ib, -(ia * tx + ib * ty)],
                [ic, id, -(ic * tx + id * ty)],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    /// Conjugates the transform so it pivots about `(cx, cy)` instead of the origin.
    pub fn about_point(&self, cx: f64, cy: f64) -> SimilarityTransform {
        let to = SimilarityTransform::translation(cx, cy);
        let back = SimilarityTransform::translation(-cx, -cy);
        to.compose(self).compose(&back)
    }
}

/// Builds the image-space transform for sampled parameters on a canvas,
/// honoring the pivot convention.
pub fn rst_transform(
    params: &SimilarityTransformParams,
    width: usize,
    height: usize,
    pivot: Pivot,
) -> SimilarityTransform {
    let t = build_matrix(params);
    match pivot {
        Pivot::Origin => t,
        Pivot::Center => {
            let cx = (width as f64 - 1.0) / 2.0;
            let cy = (height as f64 - 1.0) / 2.0;
            t.about_point(cx, cy)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Border {
    /// Out-of-bounds taps contribute zero (used for warps).
    Zero,
    /// Taps clamp to the nearest edge pixel (used for resize).
    Clamp,
}

#[inline]
fn tap_weights(sx: f64, sy: f64) -> (i64, i64, f64, f64) {
    let x0 = sx.floor();
    let y0 = sy.floor();
    (x0 as i64, y0 as i64, sx - x0, sy - y0)
}

/// Samples one channel of `(h, w, c)` data at real coordinates.
#[inline]
fn sample_channel(data: &Array3<f64>, sx: f64, sy: f64, ch: usize, border: Border) -> f64 {
    let (h, w, _) = data.dim();
    let (x0, y0, dx, dy) = tap_weights(sx, sy);
    let mut acc = 0.0;
    for (j, wy) in [(0i64, 1.0 - dy), (1, dy)] {
        for (i, wx) in [(0i64, 1.0 - dx), (1, dx)] {
            let (xi, yi) = (x0 + i, y0 + j);
            let v = match border {
                Border::Zero => {
                    if xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
                        0.0
                    } else {
                        data[(yi as usize, xi as usize, ch)]
                    }
                }
                Border::Clamp => {
                    let xc = xi.clamp(0, w as i64 - 1) as usize;
                    let yc = yi.clamp(0, h as i64 - 1) as usize;
                    data[(yc, xc, ch)]
                }
            };
            acc += wx * wy * v;
        }
    }
    acc
}

fn warp_array(data: &Array3<f64>, t: &SimilarityTransform, border: Border) -> Array3<f64> {
    let (h, w, _) = data.dim();
    warp_array_to(data, t, w, h, border)
}

fn warp_array_to(
    data: &Array3<f64>,
    t: &SimilarityTransform,
    out_w: usize,
    out_h: usize,
    border: Border,
) -> Array3<f64> {
    let c = data.dim().2;
    let mut out = Array3::zeros((out_h, out_w, c));
    let fill_row = |y: usize, mut row: ndarray::ArrayViewMut2<f64>| {
        for x in 0..out_w {
            let (sx, sy) = t.map_point((x as f64, y as f64));
            for ch in 0..c {
                row[(x, ch)] = sample_channel(data, sx, sy, ch, border);
            }
        }
    };
    #[cfg(feature = "parallel")]
    if parallel::is_parallel() {
        use ndarray::parallel::prelude::*;
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(y, row)| fill_row(y, row));
        return out;
    }
    for (y, row) in out.axis_iter_mut(Axis(0)).enumerate() {
        fill_row(y, row);
    }
    out
}

/// Warps an image: `out(q) = in(T(q))` with bilinear interpolation and
/// zero fill outside the canvas. Output dimensions equal input dimensions.
pub fn warp_bilinear(image: &FaceImage, t: &SimilarityTransform) -> FaceImage {
    // convex combinations of in-range values and zero stay in [0, 1]
    FaceImage::from_array_clamped(warp_array(image.data(), t, Border::Zero))
}

/// Like [`warp_bilinear`] but renders onto an `out_w`×`out_h` canvas.
pub fn warp_bilinear_to(
    image: &FaceImage,
    t: &SimilarityTransform,
    out_w: usize,
    out_h: usize,
) -> FaceImage {
    FaceImage::from_array_clamped(warp_array_to(image.data(), t, out_w, out_h, Border::Zero))
}

/// Single-plane variant of [`warp_bilinear`] for masks and other scalar grids.
pub fn warp_plane(plane: &Array2<f64>, t: &SimilarityTransform) -> Array2<f64> {
    let (h, w) = plane.dim();
    warp_plane_to(plane, t, w, h)
}

/// Like [`warp_plane`] but renders onto an `out_w`×`out_h` canvas, so content
/// can be pulled from a grid of a different size.
pub fn warp_plane_to(
    plane: &Array2<f64>,
    t: &SimilarityTransform,
    out_w: usize,
    out_h: usize,
) -> Array2<f64> {
    let (h, w) = plane.dim();
    let cube = plane
        .to_shape((h, w, 1))
        .expect("reshape to (h, w, 1) cannot fail")
        .to_owned();
    let warped = warp_array_to(&cube, t, out_w, out_h, Border::Zero);
    warped
        .into_shape_with_order((out_h, out_w))
        .expect("reshape back to 2-D cannot fail")
}

/// Transpose of [`warp_bilinear`] with respect to the pixel values: pulls a
/// gradient at the warp output back to the warp input.
pub fn warp_bilinear_vjp(upstream: &PixelGrid, t: &SimilarityTransform) -> PixelGrid {
    let (h, w, c) = upstream.dim();
    let mut grad = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = t.map_point((x as f64, y as f64));
            let (x0, y0, dx, dy) = tap_weights(sx, sy);
            for (j, wy) in [(0i64, 1.0 - dy), (1, dy)] {
                for (i, wx) in [(0i64, 1.0 - dx), (1, dx)] {
                    let (xi, yi) = (x0 + i, y0 + j);
                    if xi < 0 || yi < 0 || xi >= w as i64 || yi >= h as i64 {
                        continue;
                    }
                    let weight = wx * wy;
                    for ch in 0..c {
                        grad[(yi as usize, xi as usize, ch)] += weight * upstream[(y, x, ch)];
                    }
                }
            }
        }
    }
    grad
}

#[inline]
fn resize_src_coord(dst: usize, scale: f64) -> f64 {
    // half-pixel-center convention
    (dst as f64 + 0.5) * scale - 0.5
}

/// Bilinear resize with clamp-to-edge sampling.
pub fn resize_bilinear(data: &Array3<f64>, out_w: usize, out_h: usize) -> Array3<f64> {
    let (h, w, c) = data.dim();
    assert!(w > 0 && h > 0 && out_w > 0 && out_h > 0, "empty resize");
    let scale_x = w as f64 / out_w as f64;
    let scale_y = h as f64 / out_h as f64;
    let mut out = Array3::zeros((out_h, out_w, c));
    let fill_row = |y: usize, mut row: ndarray::ArrayViewMut2<f64>| {
        let sy = resize_src_coord(y, scale_y);
        for x in 0..out_w {
            let sx = resize_src_coord(x, scale_x);
            for ch in 0..c {
                row[(x, ch)] = sample_channel(data, sx, sy, ch, Border::Clamp);
            }
        }
    };
    #[cfg(feature = "parallel")]
    if parallel::is_parallel() {
        use ndarray::parallel::prelude::*;
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(y, row)| fill_row(y, row));
        return out;
    }
    for (y, row) in out.axis_iter_mut(Axis(0)).enumerate() {
        fill_row(y, row);
    }
    out
}

/// Transpose of [`resize_bilinear`]: pulls a gradient at the resized output
/// back to a grid of the original `(in_w, in_h)` size.
pub fn resize_bilinear_vjp(upstream: &Array3<f64>, in_w: usize, in_h: usize) -> Array3<f64> {
    let (out_h, out_w, c) = upstream.dim();
    let scale_x = in_w as f64 / out_w as f64;
    let scale_y = in_h as f64 / out_h as f64;
    let mut grad = Array3::zeros((in_h, in_w, c));
    for y in 0..out_h {
        let sy = resize_src_coord(y, scale_y);
        for x in 0..out_w {
            let sx = resize_src_coord(x, scale_x);
            let (x0, y0, dx, dy) = tap_weights(sx, sy);
            for (j, wy) in [(0i64, 1.0 - dy), (1, dy)] {
                for (i, wx) in [(0i64, 1.0 - dx), (1, dx)] {
                    let xc = (x0 + i).clamp(0, in_w as i64 - 1) as usize;
                    let yc = (y0 + j).clamp(0, in_h as i64 - 1) as usize;
                    let weight = wx * wy;
                    for ch in 0..c {
                        grad[(yc, xc, ch)] += weight * upstream[(y, x, ch)];
                    }
                }
            }
        }
    }
    grad
}
