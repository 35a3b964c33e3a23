//! Translational patch registration by exhaustive integer-shift search over
//! zero-normalized cross-correlation.

use crate::data::GrayImage;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Registration {
    /// Row shift applied to the moving patch.
    pub shift_row: i32,
    /// Column shift applied to the moving patch.
    pub shift_col: i32,
    /// Moving patch translated by the winning shift, edge-replicated.
    pub aligned: GrayImage,
    /// ZNCC score of the winning shift over the overlap region.
    pub score: f64,
}

/// ZNCC of `moving` shifted by (u, v) against `fixed`, over the overlap.
/// Zero-variance overlaps score 0.
fn zncc(moving: &GrayImage, fixed: &GrayImage, u: i32, v: i32) -> f64 {
    let h = fixed.height() as i32;
    let w = fixed.width() as i32;
    let y0 = u.max(0);
    let y1 = h + u.min(0);
    let x0 = v.max(0);
    let x1 = w + v.min(0);
    let n = ((y1 - y0) * (x1 - x0)) as f64;
    if n <= 0.0 {
        return 0.0;
    }
    let (mut sum_m, mut sum_f) = (0.0f64, 0.0f64);
    for y in y0..y1 {
        for x in x0..x1 {
            sum_m += f64::from(moving.get((y - u) as usize, (x - v) as usize));
            sum_f += f64::from(fixed.get(y as usize, x as usize));
        }
    }
    let mean_m = sum_m / n;
    let mean_f = sum_f / n;
    let (mut cov, mut var_m, mut var_f) = (0.0f64, 0.0f64, 0.0f64);
    for y in y0..y1 {
        for x in x0..x1 {
            let dm = f64::from(moving.get((y - u) as usize, (x - v) as usize)) - mean_m;
            let df = f64::from(fixed.get(y as usize, x as usize)) - mean_f;
            cov += dm * df;
            var_m += dm * dm;
            var_f += df * df;
        }
    }
    if var_m <= 0.0 || var_f <= 0.0 {
        return 0.0;
    }
    cov / (var_m.sqrt() * var_f.sqrt())
}

/// Translates by (u, v) with edge replication outside the source.
fn translate(moving: &GrayImage, u: i32, v: i32) -> GrayImage {
    let h = moving.height() as i32;
    let w = moving.width() as i32;
    GrayImage::from_fn(moving.height(), moving.width(), |y, x| {
        let sy = (y as i32 - u).clamp(0, h - 1);
        let sx = (x as i32 - v).clamp(0, w - 1);
        moving.get(sy as usize, sx as usize)
    })
}

/// Searches shifts in [-radius, radius]^2 for the ZNCC maximum. Ties break
/// toward the smallest |u|+|v|, then the smallest u, then the smallest v.
pub fn register_patch(moving: &GrayImage, fixed: &GrayImage, radius: usize) -> Result<Registration> {
    if moving.height() != fixed.height() {
        return Err(Error::DimMismatch {
            op: "register_patch",
            dim: "height",
            left: moving.height(),
            right: fixed.height(),
        });
    }
    if moving.width() != fixed.width() {
        return Err(Error::DimMismatch {
            op: "register_patch",
            dim: "width",
            left: moving.width(),
            right: fixed.width(),
        });
    }
    let (h, w) = (fixed.height(), fixed.width());
    if radius >= h || radius >= w || 4 * (h - radius) * (w - radius) < h * w {
        return Err(Error::RegistrationOverlap { radius, height: h, width: w });
    }
    let r = radius as i32;
    let mut best: Option<(f64, i32, i32)> = None;
    for u in -r..=r {
        for v in -r..=r {
            let score = zncc(moving, fixed, u, v);
            let replace = match best {
                None => true,
                Some((bs, bu, bv)) => {
                    score > bs
                        || (score == bs
                            && (u.abs() + v.abs(), u, v) < (bu.abs() + bv.abs(), bu, bv))
                }
            };
            if replace {
                best = Some((score, u, v));
            }
        }
    }
    let (score, u, v) = best.expect("search window is non-empty");
    Ok(Registration { shift_row: u, shift_col: v, aligned: translate(moving, u, v), score })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{degrade, synth_scene, DegradationConfig};

    #[test]
    fn identical_patches_register_at_zero_with_unit_score() {
        let (img, _) = synth_scene(3, 48, 48);
        let reg = register_patch(&img, &img, 4).unwrap();
        assert_eq!((reg.shift_row, reg.shift_col), (0, 0));
        assert!((reg.score - 1.0).abs() < 1e-12);
        assert_eq!(reg.aligned, img);
    }

    #[test]
    fn injected_shift_is_recovered_noise_free() {
        // moving(r, c) = fixed(r - 3, c + 2): fixed translated by (+3, -2)
        let (fixed, _) = synth_scene(11, 48, 48);
        let h = fixed.height() as i32;
        let w = fixed.width() as i32;
        let moving = GrayImage::from_fn(48, 48, |y, x| {
            let sy = (y as i32 - 3).clamp(0, h - 1);
            let sx = (x as i32 + 2).clamp(0, w - 1);
            fixed.get(sy as usize, sx as usize)
        });
        let reg = register_patch(&moving, &fixed, 5).unwrap();
        assert_eq!((reg.shift_row, reg.shift_col), (-3, 2));

        // brute-force oracle: recompute every score and take the max
        let mut best = f64::NEG_INFINITY;
        for u in -5i32..=5 {
            for v in -5i32..=5 {
                best = best.max(zncc(&moving, &fixed, u, v));
            }
        }
        assert!((best - reg.score).abs() < 1e-12);
    }

    #[test]
    fn constant_patches_tie_break_to_zero_shift() {
        let flat = GrayImage::constant(32, 32, 0.5);
        let reg = register_patch(&flat, &flat, 3).unwrap();
        assert_eq!((reg.shift_row, reg.shift_col), (0, 0));
        assert_eq!(reg.score, 0.0);
    }

    #[test]
    fn excessive_radius_is_rejected() {
        let img = GrayImage::constant(32, 32, 0.5);
        assert!(matches!(
            register_patch(&img, &img, 20).unwrap_err(),
            Error::RegistrationOverlap { .. }
        ));
    }

    #[test]
    fn noisy_recovery_within_one_pixel() {
        let mut hits = 0;
        for trial in 0..20u64 {
            let (fixed, _) = synth_scene(100 + trial, 48, 48);
            let (du, dv) = ((trial % 7) as i32 - 3, (trial % 5) as i32 - 2);
            let shifted = translate(&fixed, du, dv);
            let cfg = DegradationConfig {
                gaussian_var: 0.01,
                speckle_var: 0.0,
                blur_length: 1,
                blur_angle_deg: 0.0,
                seed: trial,
            };
            let moving = degrade(&shifted, &cfg);
            let reg = register_patch(&moving, &fixed, 5).unwrap();
            // translate() moved fixed by (du, dv), so recovery is (-du, -dv)
            if (reg.shift_row + du).abs() <= 1 && (reg.shift_col + dv).abs() <= 1 {
                hits += 1;
            }
        }
        assert!(hits >= 19, "only {hits}/20 within one pixel");
    }
}
