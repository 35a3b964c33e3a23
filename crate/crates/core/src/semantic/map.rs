//! Per-pixel region label maps.

use std::path::Path;

use crate::data::RawPgm;
use crate::error::{Error, Result};

/// A hard partition of an image into `k` regions labeled 0..k-1. Every
/// region is non-empty: construction renumbers empty labels away.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    k: usize,
}

impl SegmentationMap {
    /// Builds a map from raw labels, compacting them so that the used
    /// labels become 0..k-1 (ascending by original value).
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::DataLength { expected: height * width, got: labels.len() });
        }
        let mut present = [false; 256];
        for &l in &labels {
            present[l as usize] = true;
        }
        let mut remap = [0u8; 256];
        let mut k = 0usize;
        for (old, &p) in present.iter().enumerate() {
            if p {
                remap[old] = k as u8;
                k += 1;
            }
        }
        let labels = labels.iter().map(|&l| remap[l as usize]).collect();
        Ok(SegmentationMap { height, width, labels, k })
    }

    /// A single-region map covering the whole image.
    pub fn uniform(height: usize, width: usize) -> Self {
        SegmentationMap { height, width, labels: vec![0; height * width], k: 1 }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of regions.
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn label(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Pixel count per region.
    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Applies a label permutation (must be a bijection on 0..k-1).
    pub fn permute_labels(&self, perm: &[u8]) -> Result<Self> {
        if perm.len() != self.k {
            return Err(Error::LabelOutOfRange { label: perm.len(), k: self.k });
        }
        let labels = self.labels.iter().map(|&l| perm[l as usize]).collect();
        SegmentationMap::new(self.height, self.width, labels)
    }

    /// Writes an 8-bit PGM whose sample values are the region labels.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        RawPgm {
            width: self.width,
            height: self.height,
            max_value: 255,
            samples: self.labels.iter().map(|&l| u16::from(l)).collect(),
        }
        .write(path)
    }

    /// Reads a label PGM. Raw values must fit the configured region count
    /// `k`; the stored map is then compacted as usual.
    pub fn read_pgm(path: &Path, k: usize) -> Result<Self> {
        let raw = RawPgm::read(path)?;
        if raw.max_value > 255 {
            return Err(crate::error::format_err(path, "label masks must be 8-bit"));
        }
        let mut labels = Vec::with_capacity(raw.samples.len());
        for &s in &raw.samples {
            if (s as usize) >= k {
                return Err(Error::LabelOutOfRange { label: s as usize, k });
            }
            labels.push(s as u8);
        }
        SegmentationMap::new(raw.height, raw.width, labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_labels_are_renumbered_away() {
        // labels {0, 3, 7} compact to {0, 1, 2}
        let m = SegmentationMap::new(1, 6, vec![0, 3, 7, 3, 0, 7]).unwrap();
        assert_eq!(m.k(), 3);
        assert_eq!(m.labels(), &[0, 1, 2, 1, 0, 2]);
        assert_eq!(m.region_sizes(), vec![2, 2, 2]);
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let m = SegmentationMap::new(4, 4, (0..16).map(|i| (i % 5) as u8).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.pgm");
        m.write_pgm(&path).unwrap();
        let back = SegmentationMap::read_pgm(&path, 7).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn out_of_range_label_is_rejected_on_load() {
        let m = SegmentationMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.pgm");
        m.write_pgm(&path).unwrap();
        assert!(matches!(
            SegmentationMap::read_pgm(&path, 3).unwrap_err(),
            Error::LabelOutOfRange { label: 3, k: 3 }
        ));
    }
}
