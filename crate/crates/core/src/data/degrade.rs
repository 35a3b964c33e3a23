//! Synthetic acquisition degradation: motion blur, multiplicative speckle,
//! and additive Gaussian noise, in that order, clamped to [0, 1].

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::GrayImage;
use crate::rng;
use crate::tensor::{Shape, Tensor};

/// Noise and blur parameters; defaults follow the rapid-scan protocol
/// (variance 0.01 for both noises, a length-10 line blur at 5 degrees).
#[derive(Clone, Debug)]
pub struct DegradationConfig {
    pub gaussian_var: f64,
    pub speckle_var: f64,
    pub blur_length: usize,
    pub blur_angle_deg: f64,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            gaussian_var: 0.01,
            speckle_var: 0.01,
            blur_length: 10,
            blur_angle_deg: 5.0,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Identity degradation: no blur, no noise.
    pub fn none() -> Self {
        DegradationConfig {
            gaussian_var: 0.0,
            speckle_var: 0.0,
            blur_length: 1,
            blur_angle_deg: 0.0,
            seed: 0,
        }
    }
}

/// Rasterizes a line of `length` samples through the kernel center at the
/// given angle (degrees, counterclockwise from the +x axis), then normalizes
/// to unit sum. The kernel side is `length` rounded up to odd.
pub fn motion_blur_kernel(length: usize, angle_deg: f64) -> Tensor<f32> {
    let length = length.max(1);
    let k = if length.is_multiple_of(2) { length + 1 } else { length };
    let center = (k / 2) as f64;
    let theta = angle_deg.to_radians();
    let (dy, dx) = (-theta.sin(), theta.cos());
    let mut taps = vec![0.0f64; k * k];
    for i in 0..length {
        let t = i as f64 - (length as f64 - 1.0) / 2.0;
        let y = (center + t * dy).round();
        let x = (center + t * dx).round();
        taps[y as usize * k + x as usize] += 1.0;
    }
    let total: f64 = taps.iter().sum();
    let data = taps.iter().map(|&v| (v / total) as f32).collect();
    Tensor::new(Shape::new(1, 1, k, k), data).expect("kernel data matches shape")
}

fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Convolves with a normalized kernel using symmetric reflect padding.
pub fn blur_reflect(img: &GrayImage, kernel: &Tensor<f32>) -> GrayImage {
    let k = kernel.shape().height;
    let half = (k / 2) as isize;
    let (h, w) = (img.height(), img.width());
    GrayImage::from_fn(h, w, |y, x| {
        let mut acc = 0.0f64;
        for dy in 0..k {
            let sy = reflect(y as isize + dy as isize - half, h);
            for dx in 0..k {
                let kv = f64::from(kernel.get(0, 0, dy, dx));
                if kv == 0.0 {
                    continue;
                }
                let sx = reflect(x as isize + dx as isize - half, w);
                acc += kv * f64::from(img.get(sy, sx));
            }
        }
        acc as f32
    })
}

/// blur -> multiplicative speckle -> additive Gaussian -> clamp to [0, 1].
/// Deterministic for a given seed: the speckle field is drawn first, then
/// the Gaussian field, both row-major in f64.
pub fn degrade(img: &GrayImage, cfg: &DegradationConfig) -> GrayImage {
    let blurred = if cfg.blur_length > 1 {
        blur_reflect(img, &motion_blur_kernel(cfg.blur_length, cfg.blur_angle_deg))
    } else {
        img.clone()
    };
    let mut rng = rng::stream(cfg.seed, "degrade");
    let n = img.height() * img.width();
    let speckle = noise_field(cfg.speckle_var, n, &mut rng);
    let gauss = noise_field(cfg.gaussian_var, n, &mut rng);
    let mut out = blurred;
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let noisy = f64::from(*v) * (1.0 + speckle[i]) + gauss[i];
        *v = noisy.clamp(0.0, 1.0) as f32;
    }
    out
}

fn noise_field(variance: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    if variance <= 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("valid std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_one_kernel_is_identity_tap() {
        let k = motion_blur_kernel(1, 37.0);
        assert_eq!(k.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(k.data(), &[1.0]);
    }

    #[test]
    fn length_three_horizontal_kernel() {
        let k = motion_blur_kernel(3, 0.0);
        assert_eq!(k.shape(), Shape::new(1, 1, 3, 3));
        for x in 0..3 {
            assert!((k.get(0, 0, 1, x) - 1.0 / 3.0).abs() < 1e-7);
        }
        let total: f32 = k.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn paper_kernel_sums_to_one_and_lives_on_the_line() {
        let k = motion_blur_kernel(10, 5.0);
        assert_eq!(k.shape().height, 11);
        let total: f64 = k.data().iter().map(|&v| f64::from(v)).sum();
        assert!((total - 1.0).abs() < 1e-6);
        // enumerate the rasterized line; support must match it exactly
        let mut on_line = std::collections::HashSet::new();
        let theta = 5.0f64.to_radians();
        for i in 0..10 {
            let t = i as f64 - 4.5;
            let y = (5.0 - t * theta.sin()).round() as usize;
            let x = (5.0 + t * theta.cos()).round() as usize;
            on_line.insert((y, x));
        }
        for y in 0..11 {
            for x in 0..11 {
                let has_mass = k.get(0, 0, y, x) > 0.0;
                assert_eq!(has_mass, on_line.contains(&(y, x)), "tap ({y}, {x})");
            }
        }
    }

    #[test]
    fn identity_config_returns_input() {
        let img = GrayImage::from_fn(8, 8, |y, x| (y * 8 + x) as f32 / 63.0);
        let out = degrade(&img, &DegradationConfig::none());
        assert_eq!(out, img);
    }

    #[test]
    fn pure_blur_preserves_constant_images() {
        let img = GrayImage::constant(32, 32, 0.4);
        let cfg = DegradationConfig {
            gaussian_var: 0.0,
            speckle_var: 0.0,
            ..DegradationConfig::default()
        };
        let out = degrade(&img, &cfg);
        for &v in out.data() {
            assert!((v - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_preserves_interior_mean() {
        let img = GrayImage::from_fn(64, 64, |y, x| {
            0.3 + 0.4 * ((y as f32 / 63.0) * (x as f32 / 63.0))
        });
        let kernel = motion_blur_kernel(10, 5.0);
        let out = blur_reflect(&img, &kernel);
        let interior_mean = |im: &GrayImage| {
            let mut acc = 0.0f64;
            let mut n = 0usize;
            for y in 8..56 {
                for x in 8..56 {
                    acc += f64::from(im.get(y, x));
                    n += 1;
                }
            }
            acc / n as f64
        };
        let a = interior_mean(&img);
        let b = interior_mean(&out);
        assert!((a - b).abs() / a < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn degrade_is_deterministic_and_in_range() {
        let img = GrayImage::from_fn(16, 16, |y, x| (y as f32 * 0.05 + x as f32 * 0.01) % 1.0);
        let cfg = DegradationConfig::default().with_seed(99);
        let a = degrade(&img, &cfg);
        let b = degrade(&img, &cfg);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
