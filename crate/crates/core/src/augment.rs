//! Label-preserving image corruptions: Gaussian noise, Gaussian blur, texture
//! overlay and brightness/contrast jitter. No operation moves pixels, so
//! keypoint annotations stay valid unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{procedural_quilt, ImageBuffer};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    pub noise_sigma_range: [f64; 2],
    pub blur_radius_choices: Vec<u32>,
    pub overlay_alpha_range: [f64; 2],
    pub brightness_range: [f64; 2],
    pub contrast_range: [f64; 2],
    pub p_noise: f64,
    pub p_blur: f64,
    pub p_overlay: f64,
    pub p_brightness_contrast: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            noise_sigma_range: [0.0, 0.1],
            blur_radius_choices: vec![0, 1, 2, 3],
            overlay_alpha_range: [0.0, 0.5],
            brightness_range: [-0.2, 0.2],
            contrast_range: [0.8, 1.2],
            p_noise: 0.5,
            p_blur: 0.5,
            p_overlay: 0.5,
            p_brightness_contrast: 0.5,
        }
    }
}

impl AugmentPolicy {
    /// Every operation applied to every image.
    pub fn always() -> Self {
        Self { p_noise: 1.0, p_blur: 1.0, p_overlay: 1.0, p_brightness_contrast: 1.0, ..Self::default() }
    }

    pub fn never() -> Self {
        Self { p_noise: 0.0, p_blur: 0.0, p_overlay: 0.0, p_brightness_contrast: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let within = |name: &str, r: [f64; 2], lo: f64, hi: f64| {
            if r[0] <= r[1] && r[0] >= lo && r[1] <= hi {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} {r:?} must be an ordered range within [{lo}, {hi}]")))
            }
        };
        within("noise_sigma_range", self.noise_sigma_range, 0.0, 0.1)?;
        within("overlay_alpha_range", self.overlay_alpha_range, 0.0, 0.5)?;
        within("brightness_range", self.brightness_range, -0.2, 0.2)?;
        within("contrast_range", self.contrast_range, 0.8, 1.2)?;
        for (name, p) in [
            ("p_noise", self.p_noise),
            ("p_blur", self.p_blur),
            ("p_overlay", self.p_overlay),
            ("p_brightness_contrast", self.p_brightness_contrast),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Domain(format!("{name} = {p} is not a probability")));
            }
        }
        if self.p_blur > 0.0 && self.blur_radius_choices.is_empty() {
            return Err(Error::Domain("blur enabled with no radius choices".into()));
        }
        Ok(())
    }
}

/// Adds i.i.d. zero-mean Gaussian noise to every channel value, then clamps.
pub fn gaussian_noise(img: &ImageBuffer, sigma: f64, rng: &mut RandomStream) -> Result<ImageBuffer> {
    if !(sigma >= 0.0) {
        return Err(Error::Domain(format!("noise sigma must be non-negative, got {sigma}")));
    }
    let mut out = img.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    for v in out.data_mut() {
        *v = (*v as f64 + sigma * rng.normal()).clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}

/// Normalized taps for σ = radius / 2, truncated at ±2σ.
pub fn blur_kernel(radius: u32) -> Vec<f64> {
    if radius == 0 {
        return vec![1.0];
    }
    let sigma = radius as f64 / 2.0;
    let r = radius as i64;
    let taps: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Mirror index into `0..n`, repeating the edge sample.
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur with reflective borders.
pub fn gaussian_blur(img: &ImageBuffer, radius: u32) -> ImageBuffer {
    if radius == 0 {
        return img.clone();
    }
    let kernel = blur_kernel(radius);
    let r = radius as i64;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = img.data();
    let mut tmp = vec![0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in kernel.iter().enumerate() {
                    let sx = reflect(x as i64 + k as i64 - r, w as i64);
                    acc += wt * src[(y * w + sx) * 3 + c] as f64;
                }
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = img.clone();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (k, wt) in kernel.iter().enumerate() {
                    let sy = reflect(y as i64 + k as i64 - r, h as i64);
                    acc += wt * tmp[(sy * w + x) * 3 + c];
                }
                dst[(y * w + x) * 3 + c] = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

/// `(1 - alpha)·img + alpha·texture`.
pub fn overlay(img: &ImageBuffer, texture: &ImageBuffer, alpha: f64) -> Result<ImageBuffer> {
    if (img.width(), img.height()) != (texture.width(), texture.height()) {
        return Err(Error::Domain(format!(
            "overlay texture is {}x{}, image is {}x{}",
            texture.width(),
            texture.height(),
            img.width(),
            img.height()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("overlay alpha {alpha} outside [0, 1]")));
    }
    let mut out = img.clone();
    for (o, t) in out.data_mut().iter_mut().zip(texture.data()) {
        *o = ((1.0 - alpha) * *o as f64 + alpha * *t as f64).clamp(0.0, 1.0) as f32;
    }
    Ok(out)
}

/// Contrast about mid-gray, then a brightness offset.
pub fn brightness_contrast(img: &ImageBuffer, brightness: f64, contrast: f64) -> ImageBuffer {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = ((*v as f64 - 0.5) * contrast + 0.5 + brightness).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Applies the policy in the fixed order noise → blur → overlay →
/// brightness/contrast. Each operation draws its coin flip from `rng`, then
/// its parameters only if it fires.
pub fn apply_policy(img: &ImageBuffer, policy: &AugmentPolicy, rng: &mut RandomStream) -> Result<ImageBuffer> {
    policy.validate()?;
    let mut out = img.clone();
    if rng.bernoulli(policy.p_noise) {
        let sigma = rng.uniform(policy.noise_sigma_range[0], policy.noise_sigma_range[1]);
        out = gaussian_noise(&out, sigma, rng)?;
    }
    if rng.bernoulli(policy.p_blur) {
        let radius = policy.blur_radius_choices[rng.index(policy.blur_radius_choices.len())];
        out = gaussian_blur(&out, radius);
    }
    if rng.bernoulli(policy.p_overlay) {
        let alpha = rng.uniform(policy.overlay_alpha_range[0], policy.overlay_alpha_range[1]);
        let texture = procedural_quilt(out.width(), out.height(), rng.next_u64());
        out = overlay(&out, &texture, alpha)?;
    }
    if rng.bernoulli(policy.p_brightness_contrast) {
        let b = rng.uniform(policy.brightness_range[0], policy.brightness_range[1]);
        let c = rng.uniform(policy.contrast_range[0], policy.contrast_range[1]);
        out = brightness_contrast(&out, b, c);
    }
    Ok(out)
}
