use std::collections::BTreeMap;

use super::DegradationKind;
use crate::error::Result;
use crate::imgcore::{luminance, sobel, GradientField, Image};

const EPS: f64 = 1e-6;

fn lum_gradients(img: &Image) -> Result<GradientField> {
    sobel(&luminance(img)?)
}

/// Closeness ratio `min(a/(b+ε), b/(a+ε))` clipped to `[0, 1]`.
fn symmetric_ratio(a: f64, b: f64) -> f64 {
    (a / (b + EPS)).min(b / (a + EPS)).clamp(0.0, 1.0)
}

/// Gradient consistency: `1 − mean|M(y) − M(t)| / (mean M(t) + ε)`.
pub fn r_grad(y: &Image, t: &Image) -> Result<f64> {
    y.check_same_shape(t)?;
    let my = lum_gradients(y)?;
    let mt = lum_gradients(t)?;
    let base = mt.mean_magnitude();
    let dev = my
        .magnitude
        .iter()
        .zip(&mt.magnitude)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / my.magnitude.len() as f64;
    Ok((1.0 - dev / (base + EPS)).clamp(0.0, 1.0))
}

/// Isotropy of the restored image: `1 − |E_x − E_y| / max(E_x + E_y, ε)`.
pub fn r_aniso(y: &Image) -> Result<f64> {
    let g = lum_gradients(y)?;
    let (ex, ey) = (g.mean_abs_gx(), g.mean_abs_gy());
    let a = (ex - ey).abs() / (ex + ey).max(EPS);
    Ok(1.0 - a.clamp(0.0, 1.0))
}

/// Luminance standard-deviation closeness.
pub fn r_contrast(y: &Image, t: &Image) -> Result<f64> {
    y.check_same_shape(t)?;
    Ok(symmetric_ratio(luminance(y)?.std(), luminance(t)?.std()))
}

/// Mean gradient-magnitude closeness.
pub fn r_sharp(y: &Image, t: &Image) -> Result<f64> {
    y.check_same_shape(t)?;
    Ok(symmetric_ratio(
        lum_gradients(y)?.mean_magnitude(),
        lum_gradients(t)?.mean_magnitude(),
    ))
}

/// `(r_exp, r_color)`: luminance-mean exposure match and summed per-channel
/// mean deviation.
pub fn r_lowlight(y: &Image, t: &Image) -> Result<(f64, f64)> {
    y.check_same_shape(t)?;
    let d = (luminance(y)?.mean() - luminance(t)?.mean()).abs();
    let r_exp = (1.0 - d / 0.5).clamp(0.0, 1.0);
    let dc: f64 = (0..y.channels())
        .map(|c| (y.channel_mean(c) - t.channel_mean(c)).abs())
        .sum();
    let r_color = (1.0 - dc / 0.6).clamp(0.0, 1.0);
    Ok((r_exp, r_color))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskScore {
    pub value: f64,
    pub terms: BTreeMap<String, f64>,
}

/// Task-aware term for the sample's degradation. The low-light mix
/// `0.2·r_exp + 0.1·r_color` is deliberately not renormalized (max 0.3).
pub fn r_task(kind: DegradationKind, y: &Image, t: &Image) -> Result<TaskScore> {
    y.check_same_shape(t)?;
    let mut terms = BTreeMap::new();
    let value = match kind {
        DegradationKind::Denoise { .. } => {
            let v = r_grad(y, t)?;
            terms.insert("r_grad".into(), v);
            v
        }
        DegradationKind::Derain => {
            let v = r_aniso(y)?;
            terms.insert("r_aniso".into(), v);
            v
        }
        DegradationKind::Dehaze => {
            let v = r_contrast(y, t)?;
            terms.insert("r_contrast".into(), v);
            v
        }
        DegradationKind::Deblur => {
            let v = r_sharp(y, t)?;
            terms.insert("r_sharp".into(), v);
            v
        }
        DegradationKind::LowLight => {
            let (e, c) = r_lowlight(y, t)?;
            terms.insert("r_exp".into(), e);
            terms.insert("r_color".into(), c);
            0.2 * e + 0.1 * c
        }
    };
    Ok(TaskScore { value, terms })
}
