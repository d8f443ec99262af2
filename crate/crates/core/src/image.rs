//! Dense planes shared by every stage: multi-channel images, masks and
//! motion fields. All storage is row-major `H x W x C` in `f64`.

use crate::{Error, Result};

/// Multi-channel image, interleaved row-major. Storage range is `[0, 1]`,
/// diffusion space is `[-1, 1]`; the plane itself does not enforce either.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = (y * self.width + x) * self.channels + c;
        self.data[i] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &ImagePlane) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_same_shape(&self, other: &ImagePlane, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImagePlane {
        ImagePlane {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `[0, 1]` storage to `[-1, 1]` diffusion space.
    pub fn to_diffusion(&self) -> ImagePlane {
        self.map(|v| 2.0 * v - 1.0)
    }

    /// `[-1, 1]` diffusion space back to `[0, 1]`, clamped.
    pub fn to_unit(&self) -> ImagePlane {
        self.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
    }

    /// Rec. 601 luma, the fixed weighting used by the metrics.
    pub fn luminance(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.clone(),
            3 => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
            c => self
                .data
                .chunks_exact(c)
                .map(|p| p.iter().sum::<f64>() / c as f64)
                .collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Single-channel plane with entries clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl MaskPlane {
    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1.0)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    /// Entries are clamped into `[0, 1]`; non-finite values are rejected.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold a {height}x{width} mask",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mask plane".into()));
        }
        Ok(Self {
            height,
            width,
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x).clamp(0.0, 1.0));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn to_image(&self) -> ImagePlane {
        ImagePlane {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.clone(),
        }
    }

    /// Takes channel 0 of `img`, clamping into `[0, 1]`.
    pub fn from_image(img: &ImagePlane) -> Self {
        let c = img.channels();
        Self {
            height: img.height(),
            width: img.width(),
            data: img
                .as_slice()
                .chunks_exact(c)
                .map(|p| p[0].clamp(0.0, 1.0))
                .collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// Per-pixel backward displacement `(dx, dy)` in pixels: output pixel
/// `(x, y)` samples the source at `(x + dx, y + dy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl MotionField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        let mut data = Vec::with_capacity(height * width * 2);
        for _ in 0..height * width {
            data.push(dx);
            data.push(dy);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 2 {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot hold a {height}x{width} field",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("motion field".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut data = Vec::with_capacity(height * width * 2);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = f(y, x);
                data.push(dx);
                data.push(dy);
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> (f64, f64) {
        let i = (y * self.width + x) * 2;
        (self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, d: (f64, f64)) {
        let i = (y * self.width + x) * 2;
        self.data[i] = d.0;
        self.data[i + 1] = d.1;
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_magnitude(&self) -> f64 {
        self.data
            .chunks_exact(2)
            .map(|d| d[0].hypot(d[1]))
            .fold(0.0, f64::max)
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = self.height * self.width;
        self.data
            .chunks_exact(2)
            .map(|d| d[0].hypot(d[1]))
            .sum::<f64>()
            / n.max(1) as f64
    }

    /// Pixels to diffusion space: divide by `max_disp`.
    pub fn normalize(&self, max_disp: f64) -> ImagePlane {
        let inv = 1.0 / max_disp;
        ImagePlane {
            height: self.height,
            width: self.width,
            channels: 2,
            data: self.data.iter().map(|v| v * inv).collect(),
        }
    }

    /// Diffusion space back to pixels: multiply by `max_disp`.
    pub fn denormalize(plane: &ImagePlane, max_disp: f64) -> Result<Self> {
        if plane.channels() != 2 {
            return Err(Error::Shape(format!(
                "motion plane needs 2 channels, got {}",
                plane.channels()
            )));
        }
        Self::from_vec(
            plane.height(),
            plane.width(),
            plane.as_slice().iter().map(|v| v * max_disp).collect(),
        )
    }
}
