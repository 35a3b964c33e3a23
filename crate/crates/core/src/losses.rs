//! Training objectives: the negative-PSNR reconstruction loss, the
//! piecewise (Huber-style) distillation loss, and the region-pair semantic
//! consistency loss, plus their weighted total.

use crate::error::{Error, Result};
use crate::restorer::he_conv_init;
use crate::rng;
use crate::semantic::SegmentationMap;
use crate::tensor::{Graph, Parameter, Scalar, Shape, Tensor, Var};

/// Channel width of the fixed feature extractor.
pub const PHI_CHANNELS: usize = 16;
/// Seed of the canonical extractor instance (ascii "phi").
pub const PHI_FIXED_SEED: u64 = 0x70_68_69;

/// Weights balancing distillation and semantic consistency against the
/// reconstruction term.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 0.01, lambda2: 100.0 }
    }
}

/// A small frozen conv stack standing in for a pretrained deep-feature
/// network: two conv+relu blocks at a fixed channel width, seeded
/// deterministically so every construction from the same seed is identical.
#[derive(Debug)]
pub struct FeatureExtractor<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng::stream(seed, "phi-init");
        let mut params = Vec::new();
        let mut in_ch = 1;
        for block in 0..2 {
            params.push(Parameter::frozen(
                format!("phi.block{block}.weight"),
                he_conv_init(PHI_CHANNELS, in_ch, 3, &mut rng),
            ));
            params.push(Parameter::frozen(
                format!("phi.block{block}.bias"),
                Tensor::zeros(Shape::new(1, PHI_CHANNELS, 1, 1)),
            ));
            in_ch = PHI_CHANNELS;
        }
        FeatureExtractor { params }
    }

    /// The canonical frozen instance.
    pub fn fixed() -> Self {
        Self::new(PHI_FIXED_SEED)
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    /// (batch, 16, H, W) features; spatial size preserved; parameters
    /// frozen, so gradients flow only to the input.
    pub fn forward(&self, g: &mut Graph<T>, input: Var) -> Result<Var> {
        let channels = g.shape(input).channels;
        if channels != 1 {
            return Err(Error::ChannelMismatch { op: "extract_features", expected: 1, got: channels });
        }
        let mut h = input;
        for block in 0..2 {
            let w = g.bind(&self.params[2 * block])?;
            let b = g.bind(&self.params[2 * block + 1])?;
            let conv = g.conv2d(h, w, b)?;
            h = g.relu(conv);
        }
        Ok(h)
    }
}

/// -10*log10(1 / max(MSE, 1e-8)) over the whole tensor, i.e. negative PSNR
/// with unit dynamic range; the floor bounds the loss at -80 on perfect
/// reconstructions.
pub fn psnr_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, reference: Var) -> Result<Var> {
    let diff = g.sub(pred, reference)?;
    let sq = g.mul(diff, diff)?;
    let mse = g.mean(sq)?;
    let floored = g.max_const(mse, T::from_f64(1e-8));
    let ln = g.ln(floored);
    // -10*log10(1/x) = 10*log10(x) = 10/ln(10) * ln(x)
    Ok(g.scale(ln, T::from_f64(10.0 / std::f64::consts::LN_10)))
}

/// |x| built from the rectifier so the subgradient at 0 is 0.
fn abs_var<T: Scalar>(g: &mut Graph<T>, x: Var) -> Var {
    let neg = g.scale(x, -T::one());
    let pos = g.relu(x);
    let negr = g.relu(neg);
    g.add(pos, negr).expect("same shape")
}

/// Piecewise distillation penalty on d = student - teacher, averaged over
/// elements: 0.5*d^2 where |d| <= 1 and |d| - 0.5 beyond. The target branch
/// is detached unless `detach_target` is false.
pub fn skd_loss<T: Scalar>(
    g: &mut Graph<T>,
    student_out: Var,
    teacher_out: Var,
    detach_target: bool,
) -> Result<Var> {
    let target = if detach_target { g.detach(teacher_out) } else { teacher_out };
    let d = g.sub(student_out, target)?;
    let a = abs_var(g, d);
    // m = min(a, 1) = 1 - relu(1 - a); huber = 0.5*m^2 + (a - m)
    let ones = g.constant(Tensor::full(g.shape(a), T::one()));
    let one_minus = g.sub(ones, a)?;
    let gap = g.relu(one_minus);
    let m = g.sub(ones, gap)?;
    let msq = g.mul(m, m)?;
    let quad = g.scale(msq, T::from_f64(0.5));
    let lin = g.sub(a, m)?;
    let huber = g.add(quad, lin)?;
    g.mean(huber)
}

/// Masked feature vectors, one per region: the features with everything
/// outside the region zeroed. Disjoint regions yield orthogonal vectors.
pub fn region_vectors<T: Scalar>(
    g: &mut Graph<T>,
    features: Var,
    map: &SegmentationMap,
) -> Result<Vec<Var>> {
    let s = g.shape(features);
    if s.batch != 1 {
        return Err(Error::DimMismatch { op: "region_vectors", dim: "batch", left: s.batch, right: 1 });
    }
    if map.height() != s.height || map.width() != s.width {
        return Err(Error::DimMismatch {
            op: "region_vectors",
            dim: "height*width",
            left: map.height() * map.width(),
            right: s.plane(),
        });
    }
    let plane = s.plane();
    (0..map.k())
        .map(|k| {
            let mut mask = vec![T::zero(); s.len()];
            for (p, &label) in map.labels().iter().enumerate() {
                if label as usize == k {
                    for c in 0..s.channels {
                        mask[c * plane + p] = T::one();
                    }
                }
            }
            let mask = Tensor::new(s, mask)?;
            let mask = g.constant(mask);
            g.mul(features, mask)
        })
        .collect()
}

/// Pairwise cosine similarities c_ij = <h_i, h_j> / (|h_i||h_j| + 1e-12).
/// The matrix is symmetric; zero vectors yield 0 through the epsilon guard.
pub fn cosine_matrix<T: Scalar>(g: &mut Graph<T>, vectors: &[Var]) -> Result<Vec<Vec<Var>>> {
    let k = vectors.len();
    if k < 2 {
        return Err(Error::TooFewVectors { got: k });
    }
    let eps = g.scalar_const(T::from_f64(1e-12));
    let norms: Vec<Var> = vectors
        .iter()
        .map(|&v| {
            let sq = g.mul(v, v)?;
            let total = g.sum(sq)?;
            Ok(g.sqrt(total))
        })
        .collect::<Result<_>>()?;
    let mut matrix: Vec<Vec<Option<Var>>> = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let prod = g.mul(vectors[i], vectors[j])?;
            let dot = g.sum(prod)?;
            let nn = g.mul(norms[i], norms[j])?;
            let denom = g.add(nn, eps)?;
            let inv = g.recip(denom);
            let c = g.mul(dot, inv)?;
            matrix[i][j] = Some(c);
            matrix[j][i] = Some(c);
        }
    }
    Ok(matrix
        .into_iter()
        .map(|row| row.into_iter().map(|c| c.expect("filled")).collect())
        .collect())
}

/// Region-pair semantic alignment: mean over batch items of
/// (1/(K(K-1))) * sum_{i != j} |c^A_ij - c^B_ij|, with features from the
/// frozen extractor and the second branch detached by default. Items whose
/// mask has a single region contribute exactly 0 (there are no pairs).
pub fn scm_loss<T: Scalar>(
    g: &mut Graph<T>,
    x_a: Var,
    x_b: Var,
    maps: &[SegmentationMap],
    phi: &FeatureExtractor<T>,
    detach_b: bool,
) -> Result<Var> {
    let s = g.check_same_shape("scm_loss", x_a, x_b)?;
    if maps.len() != s.batch {
        return Err(Error::DimMismatch {
            op: "scm_loss",
            dim: "batch",
            left: maps.len(),
            right: s.batch,
        });
    }
    let x_b = if detach_b { g.detach(x_b) } else { x_b };
    let h_a = phi.forward(g, x_a)?;
    let h_b = phi.forward(g, x_b)?;
    let mut terms: Vec<Var> = Vec::new();
    for (b, map) in maps.iter().enumerate() {
        let k = map.k();
        if k < 2 {
            log::warn!("scm_loss: mask {b} has a single region; the pair set is empty");
            continue;
        }
        let (ha, hb) = if s.batch == 1 {
            (h_a, h_b)
        } else {
            (g.index_batch(h_a, b)?, g.index_batch(h_b, b)?)
        };
        let va = region_vectors(g, ha, map)?;
        let vb = region_vectors(g, hb, map)?;
        let ca = cosine_matrix(g, &va)?;
        let cb = cosine_matrix(g, &vb)?;
        let mut pair_sum: Option<Var> = None;
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let diff = g.sub(ca[i][j], cb[i][j])?;
                let term = abs_var(g, diff);
                pair_sum = Some(match pair_sum {
                    Some(acc) => g.add(acc, term)?,
                    None => term,
                });
            }
        }
        let pair_sum = pair_sum.expect("k >= 2 yields at least one pair");
        terms.push(g.scale(pair_sum, T::from_f64(1.0 / (k * (k - 1)) as f64)));
    }
    let Some(mut total) = terms.first().copied() else {
        return Ok(g.scalar_const(T::zero()));
    };
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(g.scale(total, T::from_f64(1.0 / s.batch as f64)))
}

/// recon + lambda1 * skd + lambda2 * scm.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    recon: Var,
    skd: Var,
    scm: Var,
    weights: &LossWeights,
) -> Result<Var> {
    let skd_w = g.scale(skd, T::from_f64(weights.lambda1));
    let scm_w = g.scale(scm, T::from_f64(weights.lambda2));
    let partial = g.add(skd_w, scm_w)?;
    g.add(recon, partial)
}
