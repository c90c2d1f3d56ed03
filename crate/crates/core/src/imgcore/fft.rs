//! 2-D discrete Fourier transform with the DC bin moved to the grid center.
//!
//! Forward transforms are unnormalized; the inverse divides by `H·W`.
//! Arbitrary sizes are supported (rustfft falls back to Bluestein/Rader for
//! awkward lengths).

use std::cell::RefCell;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::Image;
use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Centered spectrum of one real plane. Bin `(H/2, W/2)` (integer division)
/// holds the DC term.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> Complex64 {
        self.data[u * self.width + v]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn scale(&self, k: f64) -> Spectrum {
        Spectrum {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|c| c * k).collect(),
        }
    }

    pub fn add(&self, other: &Spectrum) -> Spectrum {
        debug_assert_eq!(self.data.len(), other.data.len());
        Spectrum {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }
}

fn transform_2d(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let (row, col) = if inverse {
            (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
        } else {
            (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
        };
        for r in buf.chunks_exact_mut(w) {
            row.process(r);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
    });
}

/// Forward transform of a row-major real plane.
pub fn fft2(plane: &[f64], height: usize, width: usize) -> Spectrum {
    assert_eq!(plane.len(), height * width, "plane length");
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut buf, height, width, false);
    // fftshift: unshifted (u, v) lands at ((u + H/2) % H, (v + W/2) % W)
    let mut data = vec![Complex64::new(0.0, 0.0); height * width];
    for u in 0..height {
        let su = (u + height / 2) % height;
        for v in 0..width {
            let sv = (v + width / 2) % width;
            data[su * width + sv] = buf[u * width + v];
        }
    }
    Spectrum {
        height,
        width,
        data,
    }
}

/// One spectrum per image channel.
pub fn fft2_channels(img: &Image) -> Vec<Spectrum> {
    img.planes()
        .iter()
        .map(|p| fft2(p, img.height(), img.width()))
        .collect()
}

/// Inverse transform, complex result, normalized by `1/(H·W)`.
pub fn ifft2(spec: &Spectrum) -> Vec<Complex64> {
    let (h, w) = (spec.height, spec.width);
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        let su = (u + h / 2) % h;
        for v in 0..w {
            let sv = (v + w / 2) % w;
            buf[u * w + v] = spec.data[su * w + sv];
        }
    }
    transform_2d(&mut buf, h, w, true);
    let norm = 1.0 / (h * w) as f64;
    buf.iter_mut().for_each(|c| *c *= norm);
    buf
}

/// Real part of [`ifft2`].
pub fn ifft2_real(spec: &Spectrum) -> Vec<f64> {
    ifft2(spec).into_iter().map(|c| c.re).collect()
}

/// Start and length of a centered band covering `round(ratio·n)` bins
/// (half-up, at least one) around the DC index `n/2`.
pub fn mask_extent(n: usize, ratio: f64) -> (usize, usize) {
    let len = ((ratio * n as f64 + 0.5).floor() as usize).clamp(1, n);
    let start = n / 2 - len / 2;
    (start, len)
}

/// Splits a centered spectrum into the bins inside a centered rectangle of
/// `round(r_h·H) × round(r_l·W)` and the complement.
pub fn lowfreq_mask(spec: &Spectrum, r_h: f64, r_l: f64) -> Result<(Spectrum, Spectrum)> {
    for (name, value) in [("r_h", r_h), ("r_l", r_l)] {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::Ratio {
                name,
                value,
                range: "(0, 1)",
            });
        }
    }
    let (row0, rows) = mask_extent(spec.height, r_h);
    let (col0, cols) = mask_extent(spec.width, r_l);
    let mut low = Spectrum::zeros(spec.height, spec.width);
    let mut high = spec.clone();
    for u in row0..row0 + rows {
        for v in col0..col0 + cols {
            let i = u * spec.width + v;
            low.data[i] = spec.data[i];
            high.data[i] = Complex64::new(0.0, 0.0);
        }
    }
    Ok((low, high))
}
