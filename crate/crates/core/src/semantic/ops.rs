//! Semantic-prior integration: mask average pooling, region dropout, and
//! the SPI / CAT input fusions for the mask-guided restorer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::semantic::SegmentationMap;
use crate::tensor::{Graph, Scalar, Shape, Tensor, Var};

fn check_spatial(op: &'static str, shape: Shape, maps: &[SegmentationMap]) -> Result<()> {
    if maps.len() != shape.batch {
        return Err(Error::DimMismatch { op, dim: "batch", left: maps.len(), right: shape.batch });
    }
    for m in maps {
        if m.height() != shape.height {
            return Err(Error::DimMismatch { op, dim: "height", left: m.height(), right: shape.height });
        }
        if m.width() != shape.width {
            return Err(Error::DimMismatch { op, dim: "width", left: m.width(), right: shape.width });
        }
    }
    Ok(())
}

/// Replaces every value with the mean of its region, independently per
/// batch item and channel. The pooling matrix is symmetric, so the backward
/// pass is the same pooling applied to the upstream gradient.
pub(crate) fn pool_tensor<T: Scalar>(t: &Tensor<T>, maps: &[SegmentationMap]) -> Tensor<T> {
    let s = t.shape();
    let plane = s.plane();
    let mut out = vec![T::zero(); s.len()];
    for (b, map) in maps.iter().enumerate() {
        let k = map.k();
        let sizes = map.region_sizes();
        let mut sums = vec![0.0f64; k];
        let mut first = vec![T::zero(); k];
        let mut seen = vec![false; k];
        let mut constant = vec![false; k];
        for c in 0..s.channels {
            let src = &t.data()[(b * s.channels + c) * plane..][..plane];
            sums.fill(0.0);
            seen.fill(false);
            constant.fill(true);
            for (p, &v) in src.iter().enumerate() {
                let r = map.labels()[p] as usize;
                sums[r] += v.to_f64_lossy();
                if seen[r] {
                    constant[r] &= v == first[r];
                } else {
                    first[r] = v;
                    seen[r] = true;
                }
            }
            // a region whose values are all equal pools to that exact
            // value, which makes repeated pooling a fixed point
            let means: Vec<T> = (0..k)
                .map(|r| {
                    if constant[r] {
                        first[r]
                    } else {
                        T::from_f64(sums[r] / sizes[r] as f64)
                    }
                })
                .collect();
            let dst = &mut out[(b * s.channels + c) * plane..][..plane];
            for (p, d) in dst.iter_mut().enumerate() {
                *d = means[map.labels()[p] as usize];
            }
        }
    }
    Tensor::new(s, out).expect("pooled data matches shape")
}

/// Mask average pooling over a batch of feature maps (one map per item).
pub fn map_pool<T: Scalar>(g: &mut Graph<T>, features: Var, maps: &[SegmentationMap]) -> Result<Var> {
    check_spatial("map_pool", g.shape(features), maps)?;
    let value = pool_tensor(g.value(features), maps);
    let maps: Vec<SegmentationMap> = maps.to_vec();
    Ok(g.custom_op(
        &[features],
        value,
        Box::new(move |go| vec![Some(pool_tensor(go, &maps))]),
    ))
}

/// Which regions survive a dropout draw; the rule that at least one region
/// survives is applied by [`region_dropout`], not here.
pub fn dropout_draw(k: usize, p: f64, seed: u64) -> Vec<bool> {
    let mut rng = rng::stream(seed, "region-dropout");
    (0..k).map(|_| rng.gen::<f64>() < p).collect()
}

/// Randomly merges regions into a single catch-all region. Each region is
/// dropped independently with probability `p`; survivors keep their own
/// (renumbered) labels and every dropped region joins the catch-all. At
/// least one region always survives; `p = 0` returns the map unchanged.
pub fn region_dropout(map: &SegmentationMap, p: f64, seed: u64) -> Result<SegmentationMap> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config { detail: format!("dropout probability {p} outside [0, 1)") });
    }
    if p == 0.0 {
        return Ok(map.clone());
    }
    let mut dropped = dropout_draw(map.k(), p, seed);
    if dropped.iter().all(|&d| d) {
        dropped[0] = false;
    }
    if dropped.iter().all(|&d| !d) {
        return Ok(map.clone());
    }
    let survivors = dropped.iter().filter(|&&d| !d).count() as u8;
    let mut remap = vec![0u8; map.k()];
    let mut next = 0u8;
    for (label, &d) in dropped.iter().enumerate() {
        remap[label] = if d {
            survivors
        } else {
            let l = next;
            next += 1;
            l
        };
    }
    let labels = map.labels().iter().map(|&l| remap[l as usize]).collect();
    SegmentationMap::new(map.height(), map.width(), labels)
}

/// Teacher input construction: pooled encoder features first, image last.
pub fn spi_fuse<T: Scalar>(g: &mut Graph<T>, pooled: Var, image: Var) -> Result<Var> {
    g.concat_channels(pooled, image)
}

/// Concatenation baseline: one-hot region channels first, image last. The
/// channel count is the configured region count `k`, independent of how
/// many regions a particular map ended up with.
pub fn cat_fuse<T: Scalar>(
    g: &mut Graph<T>,
    maps: &[SegmentationMap],
    k: usize,
    image: Var,
) -> Result<Var> {
    let s = g.shape(image);
    check_spatial("cat_fuse", s, maps)?;
    let plane = s.plane();
    let onehot_shape = s.with_channels(k);
    let mut data = vec![T::zero(); onehot_shape.len()];
    for (b, map) in maps.iter().enumerate() {
        for (p, &label) in map.labels().iter().enumerate() {
            if label as usize >= k {
                return Err(Error::LabelOutOfRange { label: label as usize, k });
            }
            data[(b * k + label as usize) * plane + p] = T::one();
        }
    }
    let onehot = Tensor::new(onehot_shape, data)?;
    let onehot = g.constant(onehot);
    g.concat_channels(onehot, image)
}
