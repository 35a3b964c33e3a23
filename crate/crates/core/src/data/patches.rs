//! Regular patch cropping: origins advance by `step` and only patches fully
//! inside the source survive (a remainder strip is dropped).

use crate::data::GrayImage;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub image: GrayImage,
}

#[derive(Clone, Debug)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub step: usize,
    pub patches: Vec<Patch>,
}

pub fn crop_patches(img: &GrayImage, size: usize, step: usize) -> Result<PatchGrid> {
    if size == 0 || step == 0 {
        return Err(Error::Config { detail: "patch size and step must be positive".into() });
    }
    if size > img.height() || size > img.width() {
        return Err(Error::PatchTooLarge { size, height: img.height(), width: img.width() });
    }
    let mut patches = Vec::new();
    let mut row = 0;
    while row + size <= img.height() {
        let mut col = 0;
        while col + size <= img.width() {
            let image = GrayImage::from_fn(size, size, |y, x| img.get(row + y, col + x));
            patches.push(Patch { row, col, image });
            col += step;
        }
        row += step;
    }
    Ok(PatchGrid { patch_size: size, step, patches })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> GrayImage {
        GrayImage::from_fn(h, w, |y, x| ((y * w + x) % 251) as f32 / 250.0)
    }

    #[test]
    fn exact_tiling_produces_four_patches() {
        let img = gradient_image(384, 384);
        let grid = crop_patches(&img, 192, 192).unwrap();
        let origins: Vec<(usize, usize)> = grid.patches.iter().map(|p| (p.row, p.col)).collect();
        assert_eq!(origins, vec![(0, 0), (0, 192), (192, 0), (192, 192)]);
    }

    #[test]
    fn remainder_strip_is_dropped() {
        let img = gradient_image(400, 400);
        let grid = crop_patches(&img, 192, 192).unwrap();
        assert_eq!(grid.patches.len(), 4);
    }

    #[test]
    fn exact_tiling_reassembles_bit_exactly() {
        let img = gradient_image(64, 96);
        let grid = crop_patches(&img, 32, 32).unwrap();
        let mut rebuilt = GrayImage::zeros(64, 96);
        for p in &grid.patches {
            for y in 0..32 {
                for x in 0..32 {
                    rebuilt.set(p.row + y, p.col + x, p.image.get(y, x));
                }
            }
        }
        assert_eq!(rebuilt, img);
    }

    #[test]
    fn too_small_image_errors() {
        let img = gradient_image(100, 100);
        assert!(matches!(
            crop_patches(&img, 192, 192).unwrap_err(),
            Error::PatchTooLarge { size: 192, height: 100, width: 100 }
        ));
    }

    #[test]
    fn patches_are_disjoint_when_step_at_least_size() {
        let img = gradient_image(96, 96);
        let grid = crop_patches(&img, 30, 33).unwrap();
        let mut seen = std::collections::HashSet::new();
        for p in &grid.patches {
            for y in 0..30 {
                for x in 0..30 {
                    assert!(seen.insert((p.row + y, p.col + x)), "overlap at patch ({}, {})", p.row, p.col);
                }
            }
        }
    }
}
