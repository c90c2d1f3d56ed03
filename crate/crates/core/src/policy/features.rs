use crate::imgcore::{fft2, lowfreq_mask, luminance, sobel, Image};

pub const FEATURE_DIM: usize = 8;
/// Every pooled feature is clamped into `[0, FEATURE_MAX]`.
pub const FEATURE_MAX: f64 = 4.0;
const LOW_BAND_RATIO: f64 = 0.25;

pub type Features = [f64; FEATURE_DIM];

/// Pooled statistics of an image, in order:
///
/// 0. mean luminance
/// 1. luminance standard deviation
/// 2. mean `|G_x|`
/// 3. mean `|G_y|`
/// 4. mean gradient magnitude
/// 5. share of luminance spectral energy inside the centered 25% band
/// 6. `|mean R − mean B|`
/// 7. mean per-pixel channel spread `max − min`
pub fn extract_features(x: &Image) -> Features {
    let img = x.clamped();
    let lum = luminance(&img).expect("images carry 1 or 3 channels");
    let grad = sobel(&lum).expect("luminance is single-channel");
    let spec = fft2(lum.data(), lum.height(), lum.width());
    let total = spec.energy();
    let low_share = if total > 0.0 {
        let (low, _) = lowfreq_mask(&spec, LOW_BAND_RATIO, LOW_BAND_RATIO).expect("fixed ratio");
        low.energy() / total
    } else {
        1.0
    };
    let (rb_gap, spread) = if img.channels() == 3 {
        let gap = (img.channel_mean(0) - img.channel_mean(2)).abs();
        let spread = img
            .data()
            .chunks_exact(3)
            .map(|p| p.iter().cloned().fold(f64::MIN, f64::max) - p.iter().cloned().fold(f64::MAX, f64::min))
            .sum::<f64>()
            / img.pixel_count() as f64;
        (gap, spread)
    } else {
        (0.0, 0.0)
    };
    let raw = [
        lum.mean(),
        lum.std(),
        grad.mean_abs_gx(),
        grad.mean_abs_gy(),
        grad.mean_magnitude(),
        low_share,
        rb_gap,
        spread,
    ];
    raw.map(|v| v.clamp(0.0, FEATURE_MAX))
}
