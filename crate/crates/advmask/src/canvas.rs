//! Image canvas type: H×W×3 grids of real values in `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};
use ndarray::Array3;
use thiserror::Error;

/// Raw gradient (or other per-pixel) grid with the same layout as
/// [`FaceImage`] but unconstrained values.
pub type PixelGrid = Array3<f64>;

#[derive(Error, Debug)]
pub enum CanvasError {
    #[error("failed to read image {path}: {source}")]
    Read {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to write image {path}: {source}")]
    Write {
        path: String,
        source: image::ImageError,
    },
    #[error("pixel value {value} at ({x}, {y}, {channel}) outside [0, 1]")]
    OutOfRange {
        value: f64,
        x: usize,
        y: usize,
        channel: usize,
    },
    #[error("expected {expected_width}x{expected_height} image, got {width}x{height}")]
    DimensionMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },
    #[error("image has zero width or height")]
    Empty,
    #[error("jpeg encoding failed: {0}")]
    JpegEncode(image::ImageError),
}

/// A face image: `(height, width, 3)` grid of values in `[0, 1]`.
///
/// All attacks, warps and models in this crate operate on this unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    data: Array3<f64>,
}

impl FaceImage {
    /// All-zero (black) image.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            data: Array3::zeros((height, width, 3)),
        }
    }

    /// Constant-valued image; `value` must lie in `[0, 1]`.
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        assert!((0.0..=1.0).contains(&value), "value outside [0, 1]");
        Self {
            data: Array3::from_elem((height, width, 3), value),
        }
    }

    /// Builds an image from a per-pixel function; results are clamped to `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let data =
            Array3::from_shape_fn((height, width, 3), |(y, x, c)| f(x, y, c).clamp(0.0, 1.0));
        Self { data }
    }

    /// Wraps an existing `(h, w, 3)` array, validating the value range.
    pub fn from_array(data: Array3<f64>) -> Result<Self, CanvasError> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c != 3 {
            return Err(CanvasError::Empty);
        }
        for ((y, x, ch), &v) in data.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(CanvasError::OutOfRange {
                    value: v,
                    x,
                    y,
                    channel: ch,
                });
            }
        }
        Ok(Self { data })
    }

    /// Wraps an array, clamping every value into `[0, 1]`.
    pub fn from_array_clamped(mut data: Array3<f64>) -> Self {
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self { data }
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    /// `(width, height)` in pixels.
    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.data[(y, x, channel)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, channel: usize, value: f64) {
        self.data[(y, x, channel)] = value;
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    /// Largest absolute per-pixel difference; images must share dimensions.
    pub fn max_abs_diff(&self, other: &FaceImage) -> f64 {
        assert_eq!(self.data.dim(), other.data.dim(), "dimension mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Decodes an image file (PNG/JPEG), converting to RGB in `[0, 1]`.
    pub fn load(path: &Path) -> Result<Self, CanvasError> {
        let img = image::open(path).map_err(|source| CanvasError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_dynamic(&img))
    }

    /// Converts a decoded image to the canvas representation.
    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let data = Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
        });
        Self { data }
    }

    fn to_rgb8(&self) -> ImageBuffer<Rgb<u8>, Vec<u8>> {
        let (w, h) = self.dims();
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                (self.get(x as usize, y as usize, c) * 255.0)
                    .round()
                    .clamp(0.0, 255.0) as u8
            };
            Rgb([px(0), px(1), px(2)])
        })
    }

    /// Writes the image as RGB PNG (values quantized to 8 bits).
    pub fn save_png(&self, path: &Path) -> Result<(), CanvasError> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| CanvasError::Write {
                path: path.display().to_string(),
                source,
            })
    }

    /// Encodes as JPEG at the given quality; the wire format for scoring backends.
    pub fn to_jpeg_bytes(&self, quality: u8) -> Result<Vec<u8>, CanvasError> {
        let rgb = self.to_rgb8();
        let mut buf = Vec::new();
        let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality);
        rgb.write_with_encoder(encoder)
            .map_err(CanvasError::JpegEncode)?;
        Ok(buf)
    }

    /// Bilinear resize to `(width, height)` with clamp-to-edge sampling.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> FaceImage {
        FaceImage {
            data: crate::rst::resize_bilinear(&self.data, width, height),
        }
    }
}
