//! Procedural clean scenes and parametric degradations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::rewards::DegradationKind;

/// Smallest square side accepted by the generator.
pub const MIN_SYNTH_SIZE: usize = 32;

/// Parameter ranges of the synthetic degradations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationParams {
    /// Streak angle range, degrees from the horizontal axis.
    pub rain_angle_deg: (f64, f64),
    pub rain_length_px: (f64, f64),
    pub rain_intensity: (f64, f64),
    /// Streak count per pixel.
    pub rain_density: f64,
    pub haze_airlight: (f64, f64),
    pub haze_transmission: (f64, f64),
    pub blur_sigma_px: (f64, f64),
    pub lowlight_scale: (f64, f64),
    pub lowlight_gamma: (f64, f64),
    /// Sensor noise added after darkening, on the 0–255 scale.
    pub lowlight_noise_sigma: f64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            rain_angle_deg: (70.0, 110.0),
            rain_length_px: (8.0, 24.0),
            rain_intensity: (0.2, 0.6),
            rain_density: 0.02,
            haze_airlight: (0.7, 0.95),
            haze_transmission: (0.3, 0.8),
            blur_sigma_px: (1.0, 2.5),
            lowlight_scale: (0.1, 0.4),
            lowlight_gamma: (1.5, 2.5),
            lowlight_noise_sigma: 5.0,
        }
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("rain_angle_deg", self.rain_angle_deg),
            ("rain_length_px", self.rain_length_px),
            ("rain_intensity", self.rain_intensity),
            ("haze_airlight", self.haze_airlight),
            ("haze_transmission", self.haze_transmission),
            ("blur_sigma_px", self.blur_sigma_px),
            ("lowlight_scale", self.lowlight_scale),
            ("lowlight_gamma", self.lowlight_gamma),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name}: invalid range ({lo}, {hi})")));
            }
        }
        if !(self.rain_density > 0.0 && self.lowlight_noise_sigma >= 0.0) {
            return Err(Error::Config("rain_density must be > 0 and lowlight noise ≥ 0".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Separable box blur with replicate padding on one plane.
fn box_blur(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let k = (2 * r + 1) as f64;
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-(r as isize)..=r as isize)
                .map(|d| plane[y * w + clampi(x as isize + d, w)])
                .sum();
            tmp[y * w + x] = s / k;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-(r as isize)..=r as isize)
                .map(|d| tmp[clampi(y as isize + d, h) * w + x])
                .sum();
            out[y * w + x] = s / k;
        }
    }
    out
}

fn clean_scene(size: usize, rng: &mut ChaCha8Rng) -> Image {
    let n = size as f64;
    let (c0, c1) = (random_color(rng), random_color(rng));
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let mut img = Image::from_fn(size, size, 3, |y, x, c| {
        let t = 0.5 + ((x as f64 / n - 0.5) * dx + (y as f64 / n - 0.5) * dy);
        c0[c] + (c1[c] - c0[c]) * t.clamp(0.0, 1.0)
    })
    .expect("size ≥ 32");

    // checkerboard overlay
    if rng.random_bool(0.6) {
        let period = rng.random_range(4..=12usize);
        let amp = rng.random_range(0.05..0.25);
        let tint = random_color(rng);
        for y in 0..size {
            for x in 0..size {
                let s = if (x / period + y / period) % 2 == 0 { amp } else { -amp };
                for (c, t) in tint.iter().enumerate() {
                    let v = img.get(y, x, c) + s * (0.5 + 0.5 * t);
                    img.set(y, x, c, v);
                }
            }
        }
    }

    // band-limited noise texture
    if rng.random_bool(0.7) {
        let amp = rng.random_range(0.1..0.4);
        let radius = rng.random_range(1..=3usize);
        let raw: Vec<f64> = (0..size * size).map(|_| rng.random::<f64>() - 0.5).collect();
        let tex = box_blur(&raw, size, size, radius);
        let gain = amp * (2 * radius + 1) as f64;
        let tint = random_color(rng);
        for (i, t) in tex.iter().enumerate() {
            for (c, k) in tint.iter().enumerate() {
                let v = img.data()[i * 3 + c] + gain * t * (0.5 + 0.5 * k);
                img.data_mut()[i * 3 + c] = v;
            }
        }
    }

    // opaque rectangles
    for _ in 0..rng.random_range(2..=6usize) {
        let rh = rng.random_range(size / 8..=size / 2);
        let rw = rng.random_range(size / 8..=size / 2);
        let top = rng.random_range(0..=size - rh);
        let left = rng.random_range(0..=size - rw);
        let color = random_color(rng);
        for y in top..top + rh {
            for x in left..left + rw {
                for (c, v) in color.iter().enumerate() {
                    img.set(y, x, c, *v);
                }
            }
        }
    }
    img.clamped()
}

/// `n` clean RGB scenes of side `size`, deterministic per `seed`.
pub fn gen_clean(n: usize, size: usize, seed: u64) -> Result<Vec<Image>> {
    if size < MIN_SYNTH_SIZE {
        return Err(Error::Shape(format!("synthetic size {size} below {MIN_SYNTH_SIZE}")));
    }
    Ok((0..n)
        .map(|i| clean_scene(size, &mut stream_rng(seed, i as u64)))
        .collect())
}

fn add_noise(img: &mut Image, sigma: f64, rng: &mut impl Rng) {
    let normal = Normal::new(0.0, sigma).expect("sigma ≥ 0");
    for v in img.data_mut() {
        *v += normal.sample(rng);
    }
}

fn rain(clean: &Image, p: &DegradationParams, rng: &mut impl Rng) -> Image {
    let (h, w) = (clean.height(), clean.width());
    let mut layer = vec![0.0f64; h * w];
    let base = uniform(rng, p.rain_angle_deg);
    let count = ((h * w) as f64 * p.rain_density).ceil() as usize;
    for _ in 0..count {
        let angle = (base + rng.random_range(-3.0..=3.0)).to_radians();
        let len = uniform(rng, p.rain_length_px);
        let intensity = uniform(rng, p.rain_intensity);
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        // streak direction measured from the horizontal axis, image y down
        let (ux, uy) = (angle.cos(), -angle.sin());
        let steps = (2.0 * len).ceil() as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64 - 0.5;
            let (x, y) = (cx + t * len * ux, cy + t * len * uy);
            if x < 0.0 || y < 0.0 {
                continue;
            }
            let (xi, yi) = (x as usize, y as usize);
            if xi < w && yi < h {
                // motion blur of the impulse: fades towards both ends
                let v = intensity * (1.0 - (2.0 * t).abs() * 0.5);
                let cell = &mut layer[yi * w + xi];
                *cell = cell.max(v);
            }
        }
    }
    let ch = clean.channels();
    let mut out = clean.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += layer[i / ch];
    }
    out
}

fn haze(clean: &Image, p: &DegradationParams, rng: &mut impl Rng) -> Image {
    let (h, w) = (clean.height(), clean.width());
    let airlight = uniform(rng, p.haze_airlight);
    // a few low-frequency cosines, rescaled onto the transmission range
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..2.0),
                rng.random_range(0.5..2.0),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut field: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 / h as f64, (i % w) as f64 / w as f64);
            waves
                .iter()
                .map(|(fy, fx, ph)| (std::f64::consts::TAU * (fy * y + fx * x) + ph).cos())
                .sum::<f64>()
        })
        .collect();
    let (lo, hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (tlo, thi) = p.haze_transmission;
    for v in &mut field {
        let u = if hi > lo { (*v - lo) / (hi - lo) } else { 0.5 };
        *v = tlo + (thi - tlo) * u;
    }
    let ch = clean.channels();
    let mut out = clean.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let t = field[i / ch];
        *v = *v * t + airlight * (1.0 - t);
    }
    out
}

/// Separable Gaussian blur with replicate padding.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    let (h, w) = (img.height(), img.width());
    let planes: Vec<Vec<f64>> = img
        .planes()
        .iter()
        .map(|plane| {
            let at = |y: isize, x: isize| plane[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
            let mut tmp = vec![0.0; h * w];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    tmp[y as usize * w + x as usize] =
                        (-r..=r).zip(&k).map(|(d, kv)| kv * at(y, x + d)).sum();
                }
            }
            let at = |y: isize, x: isize| tmp[y.clamp(0, h as isize - 1) as usize * w + x as usize];
            let mut out = vec![0.0; h * w];
            for y in 0..h as isize {
                for x in 0..w as isize {
                    out[y as usize * w + x as usize] =
                        (-r..=r).zip(&k).map(|(d, kv)| kv * at(y + d, x)).sum();
                }
            }
            out
        })
        .collect();
    Image::from_planes(h, w, &planes).expect("same dims")
}

/// Degraded copy of `clean`, clamped to `[0, 1]`.
pub fn degrade(clean: &Image, kind: DegradationKind, seed: u64, p: &DegradationParams) -> Result<Image> {
    kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = match kind {
        DegradationKind::Denoise { sigma } => {
            let mut out = clean.clone();
            add_noise(&mut out, sigma as f64 / 255.0, &mut rng);
            out
        }
        DegradationKind::Derain => rain(clean, p, &mut rng),
        DegradationKind::Dehaze => haze(clean, p, &mut rng),
        DegradationKind::Deblur => gaussian_blur(clean, uniform(&mut rng, p.blur_sigma_px)),
        DegradationKind::LowLight => {
            let scale = uniform(&mut rng, p.lowlight_scale);
            let gamma = uniform(&mut rng, p.lowlight_gamma);
            let mut out = clean.map(|v| (v * scale).powf(gamma));
            add_noise(&mut out, p.lowlight_noise_sigma / 255.0, &mut rng);
            out
        }
    };
    Ok(out.clamped())
}
