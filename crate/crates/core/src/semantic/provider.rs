//! Segmentation-mask providers.
//!
//! The synthetic provider labels a reference image into intensity-quantile
//! bands, splits the bands into connected components, and merges the
//! smallest components back until at most `k` regions remain. The file
//! provider loads label PGMs from a directory keyed by image id.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use crate::data::GrayImage;
use crate::error::{Error, Result};
use crate::semantic::SegmentationMap;

#[derive(Clone, Debug)]
pub enum MaskProvider {
    Synthetic {
        k: usize,
        /// Reserved for stochastic providers; the quantile provider is a
        /// pure function of the reference image.
        seed: u64,
    },
    File { dir: PathBuf, k: usize },
}

impl MaskProvider {
    pub fn synthetic(k: usize) -> Self {
        MaskProvider::Synthetic { k, seed: 0 }
    }

    pub fn from_dir(dir: impl Into<PathBuf>, k: usize) -> Self {
        MaskProvider::File { dir: dir.into(), k }
    }

    pub fn k(&self) -> usize {
        match self {
            MaskProvider::Synthetic { k, .. } => *k,
            MaskProvider::File { k, .. } => *k,
        }
    }

    /// Returns the mask for `image_id`. Repeated queries for the same image
    /// return identical maps.
    pub fn provide(&self, image_id: &str, reference: &GrayImage) -> Result<SegmentationMap> {
        match self {
            MaskProvider::Synthetic { k, .. } => quantile_masks(reference, *k),
            MaskProvider::File { dir, k } => {
                let path = dir.join(format!("{image_id}.pgm"));
                if !path.exists() {
                    return Err(Error::MaskMissing { id: image_id.to_string(), path });
                }
                let map = SegmentationMap::read_pgm(&path, *k)?;
                if map.height() != reference.height() || map.width() != reference.width() {
                    return Err(Error::DimMismatch {
                        op: "provide_masks",
                        dim: "height*width",
                        left: map.height() * map.width(),
                        right: reference.height() * reference.width(),
                    });
                }
                Ok(map)
            }
        }
    }
}

/// Quantile-band labeling capped to `k` regions.
pub fn quantile_masks(reference: &GrayImage, k: usize) -> Result<SegmentationMap> {
    if k == 0 || k > 255 {
        return Err(Error::Config { detail: format!("region count {k} out of range 1..=255") });
    }
    let (h, w) = (reference.height(), reference.width());
    let mut sorted: Vec<f32> = reference.data().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite intensities"));
    let n = sorted.len();
    let thresholds: Vec<f32> = (1..k).map(|j| sorted[j * n / k]).collect();
    let bands: Vec<u8> = reference
        .data()
        .iter()
        .map(|&v| thresholds.iter().filter(|&&t| v >= t).count() as u8)
        .collect();

    let comp = connected_components(&bands, h, w);
    let merged = merge_smallest(comp, reference, k);
    SegmentationMap::new(h, w, merged)
}

struct Components {
    /// Component id per pixel (ids are arbitrary but < pixel count).
    ids: Vec<usize>,
    info: BTreeMap<usize, CompInfo>,
}

struct CompInfo {
    size: usize,
    intensity_sum: f64,
    neighbors: BTreeSet<usize>,
}

fn connected_components(bands: &[u8], h: usize, w: usize) -> Components {
    let mut ids = vec![usize::MAX; h * w];
    let mut next = 0usize;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if ids[start] != usize::MAX {
            continue;
        }
        let id = next;
        next += 1;
        stack.push(start);
        ids[start] = id;
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if ids[q] == usize::MAX && bands[q] == bands[p] {
                    ids[q] = id;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
    }
    let mut info: BTreeMap<usize, CompInfo> = BTreeMap::new();
    for &id in &ids {
        info.entry(id).or_insert_with(|| CompInfo {
            size: 0,
            intensity_sum: 0.0,
            neighbors: BTreeSet::new(),
        });
    }
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let id = ids[p];
            if x + 1 < w && ids[p + 1] != id {
                let other = ids[p + 1];
                info.get_mut(&id).unwrap().neighbors.insert(other);
                info.get_mut(&other).unwrap().neighbors.insert(id);
            }
            if y + 1 < h && ids[p + w] != id {
                let other = ids[p + w];
                info.get_mut(&id).unwrap().neighbors.insert(other);
                info.get_mut(&other).unwrap().neighbors.insert(id);
            }
        }
    }
    Components { ids, info }
}

/// Repeatedly merges the smallest component into its neighbor with the
/// closest mean intensity until at most `k` components remain.
fn merge_smallest(mut comp: Components, reference: &GrayImage, k: usize) -> Vec<u8> {
    for (p, &v) in reference.data().iter().enumerate() {
        let info = comp.info.get_mut(&comp.ids[p]).unwrap();
        info.size += 1;
        info.intensity_sum += f64::from(v);
    }

    while comp.info.len() > k {
        let (&victim, _) = comp
            .info
            .iter()
            .min_by(|(ia, a), (ib, b)| a.size.cmp(&b.size).then(ia.cmp(ib)))
            .expect("at least one component");
        let victim_mean = {
            let v = &comp.info[&victim];
            v.intensity_sum / v.size as f64
        };
        let target = comp.info[&victim]
            .neighbors
            .iter()
            .map(|&nb| {
                let info = &comp.info[&nb];
                let mean = info.intensity_sum / info.size as f64;
                (nb, (mean - victim_mean).abs(), info.size)
            })
            .min_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .expect("finite means")
                    .then(b.2.cmp(&a.2))
                    .then(a.0.cmp(&b.0))
            })
            .map(|(nb, _, _)| nb)
            .expect("non-final component has a neighbor");

        let removed = comp.info.remove(&victim).unwrap();
        for &nb in &removed.neighbors {
            if nb == target {
                continue;
            }
            let info = comp.info.get_mut(&nb).unwrap();
            info.neighbors.remove(&victim);
            info.neighbors.insert(target);
        }
        let t = comp.info.get_mut(&target).unwrap();
        t.size += removed.size;
        t.intensity_sum += removed.intensity_sum;
        t.neighbors.remove(&victim);
        for nb in removed.neighbors {
            if nb != target {
                t.neighbors.insert(nb);
            }
        }
        for id in comp.ids.iter_mut() {
            if *id == victim {
                *id = target;
            }
        }
    }

    let remap: BTreeMap<usize, u8> = comp
        .info
        .keys()
        .enumerate()
        .map(|(new, &old)| (old, new as u8))
        .collect();
    comp.ids.iter().map(|id| remap[id]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_scene;

    #[test]
    fn constant_reference_collapses_to_one_region() {
        let img = GrayImage::constant(16, 16, 0.5);
        let map = quantile_masks(&img, 7).unwrap();
        assert_eq!(map.k(), 1);
    }

    #[test]
    fn provider_is_deterministic() {
        let (img, _) = synth_scene(5, 64, 64);
        let provider = MaskProvider::synthetic(7);
        let a = provider.provide("img", &img).unwrap();
        let b = provider.provide("img", &img).unwrap();
        assert_eq!(a, b);
    }

    /// Best-correspondence agreement between two labelings: each provider
    /// region votes for its majority scene label.
    fn agreement(provider: &SegmentationMap, scene: &SegmentationMap) -> f64 {
        let n = provider.labels().len();
        let mut votes = vec![vec![0usize; scene.k()]; provider.k()];
        for (p, s) in provider.labels().iter().zip(scene.labels()) {
            votes[*p as usize][*s as usize] += 1;
        }
        let mapping: Vec<usize> = votes
            .iter()
            .map(|row| row.iter().enumerate().max_by_key(|(_, &c)| c).unwrap().0)
            .collect();
        let agree = provider
            .labels()
            .iter()
            .zip(scene.labels())
            .filter(|(p, s)| mapping[**p as usize] == **s as usize)
            .count();
        agree as f64 / n as f64
    }

    #[test]
    fn quantile_bands_track_scene_construction() {
        for seed in 0..6 {
            let (img, scene_map) = synth_scene(seed, 64, 64);
            let map = quantile_masks(&img, 7).unwrap();
            assert!(map.k() <= 7);
            let score = agreement(&map, &scene_map);
            assert!(score >= 0.70, "seed {seed}: agreement {score:.3}");
        }
    }

    #[test]
    fn file_provider_round_trips_and_reports_missing() {
        let dir = tempfile::tempdir().unwrap();
        let (img, map) = synth_scene(2, 32, 32);
        map.write_pgm(&dir.path().join("scan7.pgm")).unwrap();
        let provider = MaskProvider::from_dir(dir.path(), 7);
        let loaded = provider.provide("scan7", &img).unwrap();
        assert_eq!(loaded, map);
        assert!(matches!(
            provider.provide("absent", &img).unwrap_err(),
            Error::MaskMissing { .. }
        ));
    }
}
