use super::{luminance, Image};
use crate::error::{Error, Result};

/// PSNR reported for identical images (and the ceiling for everything else).
pub const PSNR_CAP_DB: f64 = 60.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Sobel response of a single-channel image.
#[derive(Clone, Debug)]
pub struct GradientField {
    pub height: usize,
    pub width: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    /// `sqrt(gx² + gy² + 1e-12)`
    pub magnitude: Vec<f64>,
}

impl GradientField {
    pub fn mean_abs_gx(&self) -> f64 {
        self.gx.iter().map(|v| v.abs()).sum::<f64>() / self.gx.len() as f64
    }

    pub fn mean_abs_gy(&self) -> f64 {
        self.gy.iter().map(|v| v.abs()).sum::<f64>() / self.gy.len() as f64
    }

    pub fn mean_magnitude(&self) -> f64 {
        self.magnitude.iter().sum::<f64>() / self.magnitude.len() as f64
    }
}

/// 3×3 Sobel with replicate padding.
pub fn sobel(gray: &Image) -> Result<GradientField> {
    if gray.channels() != 1 {
        return Err(Error::Channels(gray.channels()));
    }
    let (h, w) = (gray.height(), gray.width());
    let d = gray.data();
    let at = |y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        d[y * w + x]
    };
    let n = h * w;
    let mut gx = Vec::with_capacity(n);
    let mut gy = Vec::with_capacity(n);
    let mut magnitude = Vec::with_capacity(n);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let sx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let sy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            gx.push(sx);
            gy.push(sy);
            magnitude.push((sx * sx + sy * sy + 1e-12).sqrt());
        }
    }
    Ok(GradientField {
        height: h,
        width: w,
        gx,
        gy,
        magnitude,
    })
}

/// Peak-1.0 PSNR in decibels, capped at [`PSNR_CAP_DB`].
pub fn psnr(y: &Image, t: &Image) -> Result<f64> {
    y.check_same_shape(t)?;
    let mse = y
        .data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / y.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over non-overlapping 8×8 windows of the luminance. Trailing
/// rows/columns that do not fill a window are ignored.
pub fn ssim(y: &Image, t: &Image) -> Result<f64> {
    y.check_same_shape(t)?;
    if y.height() < SSIM_WINDOW || y.width() < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least one {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let ly = luminance(y)?;
    let lt = luminance(t)?;
    let w = y.width();
    let (a, b) = (ly.data(), lt.data());
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..y.height() / SSIM_WINDOW {
        for wx in 0..w / SSIM_WINDOW {
            let idx = |i: usize, j: usize| (wy * SSIM_WINDOW + i) * w + wx * SSIM_WINDOW + j;
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    ma += a[idx(i, j)];
                    mb += b[idx(i, j)];
                }
            }
            ma /= n;
            mb /= n;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let da = a[idx(i, j)] - ma;
                    let db = b[idx(i, j)] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= n;
            vb /= n;
            cov /= n;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}
