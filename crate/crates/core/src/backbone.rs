//! Spectral restoration operator controlled by an [`Action`].
//!
//! Per channel `c`:
//!
//! ```text
//! (low, high) = mask(fft2(x_c), r_h, r_l)
//! O_c         = Re ifft2(w_low[c]·low + w_high[c]·high)
//! y_c         = s[c]·x_c + b[c]
//! out_c       = g_f·y_c + g_o·O_c
//! ```
//!
//! For a fixed action the output is linear in every parameter, so gradients
//! are exact closed forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{fft2, ifft2_real, lowfreq_mask, Image};
use crate::policy::{
    deterministic_action, extract_features, policy_forward, Action, PolicyParams,
};
use crate::rewards::RewardBreakdown;

/// Number of mask-and-fuse stages in the operator.
pub const STAGES: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneParams {
    pub w_low: Vec<f64>,
    pub w_high: Vec<f64>,
    pub scale: Vec<f64>,
    pub bias: Vec<f64>,
}

impl BackboneParams {
    /// Default initialization: `w_low = 1`, `w_high = 0.5`, `s = 1`, `b = 0`.
    pub fn new(channels: usize) -> Self {
        Self {
            w_low: vec![1.0; channels],
            w_high: vec![0.5; channels],
            scale: vec![1.0; channels],
            bias: vec![0.0; channels],
        }
    }

    pub fn identity(channels: usize) -> Self {
        Self {
            w_high: vec![1.0; channels],
            ..Self::new(channels)
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            w_low: vec![0.0; channels],
            w_high: vec![0.0; channels],
            scale: vec![0.0; channels],
            bias: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.w_low.len()
    }

    pub fn len(&self) -> usize {
        4 * self.channels()
    }

    pub fn is_empty(&self) -> bool {
        self.w_low.is_empty()
    }

    /// Flattens as `w_low ‖ w_high ‖ scale ‖ bias`.
    pub fn to_vec(&self) -> Vec<f64> {
        [&self.w_low, &self.w_high, &self.scale, &self.bias]
            .into_iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() % 4 != 0 {
            return Err(Error::Shape(format!(
                "backbone vector length {} is not 4·channels",
                values.len()
            )));
        }
        let c = values.len() / 4;
        Ok(Self {
            w_low: values[..c].to_vec(),
            w_high: values[c..2 * c].to_vec(),
            scale: values[2 * c..3 * c].to_vec(),
            bias: values[3 * c..].to_vec(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    fn check_channels(&self, img: &Image) -> Result<()> {
        if self.channels() == img.channels() {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "backbone has {} channels, image has {}",
                self.channels(),
                img.channels()
            )))
        }
    }
}

/// Real-space low and high bands of every channel for one mask.
#[derive(Clone, Debug)]
pub struct BandSplit {
    pub low: Vec<Vec<f64>>,
    pub high: Vec<Vec<f64>>,
}

pub fn split_bands(x: &Image, r_h: f64, r_l: f64) -> Result<BandSplit> {
    let mut low = Vec::with_capacity(x.channels());
    let mut high = Vec::with_capacity(x.channels());
    for plane in x.planes() {
        let spec = fft2(&plane, x.height(), x.width());
        let (l, h) = lowfreq_mask(&spec, r_h, r_l)?;
        low.push(ifft2_real(&l));
        high.push(ifft2_real(&h));
    }
    Ok(BandSplit { low, high })
}

/// Applies the operator with precomputed bands.
pub fn restore_with_bands(x: &Image, bands: &BandSplit, a: &Action, p: &BackboneParams) -> Result<Image> {
    p.check_channels(x)?;
    let ch = x.channels();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let (pix, c) = (i / ch, i % ch);
        let latent = p.scale[c] * *v + p.bias[c];
        let feature = p.w_low[c] * bands.low[c][pix] + p.w_high[c] * bands.high[c][pix];
        *v = a.g_f * latent + a.g_o * feature;
    }
    Ok(out)
}

/// Unclamped restoration of `x` under action `a`.
pub fn restore(x: &Image, a: &Action, p: &BackboneParams) -> Result<Image> {
    let bands = split_bands(x, a.r_h, a.r_l)?;
    restore_with_bands(x, &bands, a, p)
}

/// Restoration with every control at its Beta mean.
pub fn restore_deterministic(x: &Image, params: &BackboneParams, policy: &PolicyParams) -> Result<Image> {
    let fwd = policy_forward(policy, &extract_features(x))?;
    restore(x, &deterministic_action(&fwd.output), params)
}

/// Gradient of `Σ upstream · output` with respect to every parameter.
pub fn backbone_grads(
    x: &Image,
    bands: &BandSplit,
    a: &Action,
    upstream: &[f64],
) -> Result<BackboneParams> {
    if upstream.len() != x.data().len() {
        return Err(Error::DimensionMismatch {
            left: format!("upstream[{}]", upstream.len()),
            right: x.shape_string(),
        });
    }
    let ch = x.channels();
    let mut g = BackboneParams::zeros(ch);
    for (i, (&u, &v)) in upstream.iter().zip(x.data()).enumerate() {
        let (pix, c) = (i / ch, i % ch);
        g.w_low[c] += u * a.g_o * bands.low[c][pix];
        g.w_high[c] += u * a.g_o * bands.high[c][pix];
        g.scale[c] += u * a.g_f * v;
        g.bias[c] += u * a.g_f;
    }
    Ok(g)
}

/// One sampled restoration inside a rollout group.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub action: Action,
    /// Training copy, may leave `[0, 1]`.
    pub output: Image,
    /// `clamp(output, 0, 1)`, used for rewards and files.
    pub clamped: Image,
    /// Log-density under the snapshot that sampled the action.
    pub logprob_old: f64,
    pub reward: RewardBreakdown,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ACTION_EPS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, 3, |_, _, _| rng.random::<f64>()).unwrap()
    }

    fn max_diff(a: &Image, b: &Image) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_configuration() {
        let x = noise(16, 12, 1);
        let a = Action::clamped([0.3, 0.6, 0.5, 0.5]);
        let y = restore(&x, &a, &BackboneParams::identity(3)).unwrap();
        assert!(max_diff(&x, &y) < 1e-6);
    }

    #[test]
    fn strong_low_pass() {
        let x = noise(16, 16, 2);
        let mut p = BackboneParams::identity(3);
        p.w_high = vec![0.0; 3];
        let a = Action::clamped([0.2, 0.2, 0.0, 1.0]);
        let y = restore(&x, &a, &p).unwrap();
        // direct masked-FFT low-pass
        let mut planes = Vec::new();
        for plane in x.planes() {
            let spec = fft2(&plane, 16, 16);
            let (low, _) = lowfreq_mask(&spec, 0.2, 0.2).unwrap();
            planes.push(ifft2_real(&low));
        }
        let direct = Image::from_planes(16, 16, &planes).unwrap();
        let expected = Image::from_fn(16, 16, 3, |r, c, k| {
            ACTION_EPS * x.get(r, c, k) + (1.0 - ACTION_EPS) * direct.get(r, c, k)
        })
        .unwrap();
        assert!(max_diff(&y, &expected) < 1e-12);
    }

    #[test]
    fn constant_is_preserved() {
        let x = Image::filled(12, 20, 3, 0.35).unwrap();
        let mut p = BackboneParams::new(3);
        p.w_high = vec![-2.0, 0.0, 7.0];
        for a in [[0.1, 0.9, 0.3, 0.7], [0.5, 0.5, 0.9, 0.1]] {
            let y = restore(&x, &Action::clamped(a), &p).unwrap();
            assert!(max_diff(&x, &y) < 1e-6);
        }
    }

    #[test]
    fn deterministic_with_symmetric_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut policy = PolicyParams::init(&mut rng);
        // zero output weights and equal biases make every Beta symmetric
        policy.rate.w2.iter_mut().for_each(|w| *w = 0.0);
        policy.fuse.w2.iter_mut().for_each(|w| *w = 0.0);
        let x = noise(16, 16, 4);
        let p = BackboneParams::new(3);
        let det = restore_deterministic(&x, &p, &policy).unwrap();
        let mean = restore(&x, &Action::clamped([0.5; 4]), &p).unwrap();
        assert_eq!(det, mean);
        assert_eq!(det, restore_deterministic(&x, &p, &policy).unwrap());
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let x = noise(8, 8, 5);
        let a = Action::clamped([0.4, 0.4, 0.6, 0.2]);
        let bands = split_bands(&x, a.r_h, a.r_l).unwrap();
        let g = backbone_grads(&x, &bands, &a, &vec![0.0; x.data().len()]).unwrap();
        assert!(g.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_gradient_counts_pixels() {
        let x = noise(10, 9, 6);
        let a = Action::clamped([0.4, 0.4, 1.0, 0.2]);
        let bands = split_bands(&x, a.r_h, a.r_l).unwrap();
        let g = backbone_grads(&x, &bands, &a, &vec![1.0; x.data().len()]).unwrap();
        for c in 0..3 {
            assert!((g.bias[c] - 90.0 * (1.0 - ACTION_EPS)).abs() < 1e-9);
        }
    }

    #[test]
    fn parameter_linear_part_scales() {
        let x = noise(12, 12, 7);
        let a = Action::clamped([0.3, 0.7, 0.4, 0.8]);
        let p = BackboneParams {
            w_low: vec![0.9, 1.1, 0.4],
            w_high: vec![0.2, -0.3, 1.4],
            scale: vec![1.2, 0.8, 0.5],
            bias: vec![0.1, -0.05, 0.2],
        };
        let doubled = BackboneParams::from_slice(&p.to_vec().iter().map(|v| 2.0 * v).collect::<Vec<_>>()).unwrap();
        let y1 = restore(&x, &a, &p).unwrap();
        let y2 = restore(&x, &a, &doubled).unwrap();
        for (i, (v1, v2)) in y1.data().iter().zip(y2.data()).enumerate() {
            let b = a.g_f * p.bias[i % 3];
            assert!(((v2 - 2.0 * b) - 2.0 * (v1 - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = Image::filled(8, 8, 1, 0.5).unwrap();
        assert!(restore(&x, &Action::clamped([0.5; 4]), &BackboneParams::new(3)).is_err());
    }
}
