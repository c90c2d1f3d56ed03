//! Image container and the pixel math shared by rewards, the backbone and
//! the policy features.

mod fft;
mod metrics;

pub use fft::{fft2, fft2_channels, ifft2, ifft2_real, lowfreq_mask, mask_extent, Spectrum};
pub use metrics::{psnr, sobel, ssim, GradientField, PSNR_CAP_DB, SSIM_C1, SSIM_C2, SSIM_WINDOW};

use crate::error::{Error, Result};

/// Rec. 601 luma weights for linear RGB.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Dense `height × width × channels` grid stored row-major with channels
/// interleaved.
///
/// Values are nominally in `[0, 1]`. Training paths may hold values outside
/// that range; metric entry points expect a [`Image::clamped`] copy.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub const MIN_SIZE: usize = 8;

    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height < Self::MIN_SIZE || width < Self::MIN_SIZE {
            return Err(Error::Shape(format!(
                "{height}x{width} is below the {min}x{min} minimum",
                min = Self::MIN_SIZE
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Channels(channels));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "data length {} != {height}*{width}*{channels}",
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

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(row, col, channel)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Interleaves per-channel planes back into an image.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        if planes.iter().any(|p| p.len() != height * width) {
            return Err(Error::Shape("plane length mismatch".into()));
        }
        let mut data = vec![0.0; height * width * channels];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Copies out one channel as a row-major plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn planes(&self) -> Vec<Vec<f64>> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }

    pub fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                left: self.shape_string(),
                right: other.shape_string(),
            })
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let n = self.pixel_count() as f64;
        self.data.iter().skip(c).step_by(self.channels).sum::<f64>() / n
    }

    /// Population standard deviation over every stored value.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64;
        var.sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row/column window copy, used for training crops.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width}+{top}+{left} exceeds {}",
                self.shape_string()
            )));
        }
        Image::from_fn(height, width, self.channels, |y, x, c| {
            self.get(top + y, left + x, c)
        })
    }

    pub fn flip_horizontal(&self) -> Image {
        let w = self.width;
        Image::from_fn(self.height, w, self.channels, |y, x, c| self.get(y, w - 1 - x, c))
            .expect("same shape")
    }

    pub fn flip_vertical(&self) -> Image {
        let h = self.height;
        Image::from_fn(h, self.width, self.channels, |y, x, c| self.get(h - 1 - y, x, c))
            .expect("same shape")
    }
}

/// Luminance `0.299 R + 0.587 G + 0.114 B`; single-channel input passes
/// through unchanged.
pub fn luminance(img: &Image) -> Result<Image> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let data = img
                .data
                .chunks_exact(3)
                .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
                .collect();
            Image::new(img.height, img.width, 1, data)
        }
        c => Err(Error::Channels(c)),
    }
}
