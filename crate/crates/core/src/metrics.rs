//! Reference image-quality metrics (PSNR, SSIM) and directory evaluation.

use std::path::Path;

use crate::data::GrayImage;
use crate::error::{io_err, Error, Result};

/// PSNR in dB over unit dynamic range, capped at 80 dB (the MSE floor
/// 1e-8), so exact matches stay finite and sortable.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    check_dims("psnr", a, b)?;
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = f64::from(x) - f64::from(y);
        acc += d * d;
    }
    let mse = (acc / a.data().len() as f64).max(1e-8);
    Ok(10.0 * (1.0 / mse).log10())
}

/// SSIM window parameters. Defaults follow the original definition:
/// 11x11 Gaussian window with sigma 1.5, K1 = 0.01, K2 = 0.03, unit range.
#[derive(Clone, Copy, Debug)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 1.0 }
    }
}

fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let half = (window / 2) as f64;
    let mut taps: Vec<f64> = (0..window)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    for t in taps.iter_mut() {
        *t /= total;
    }
    taps
}

/// Separable valid-region Gaussian filter used by the SSIM implementation.
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let out_w = w - k + 1;
    // horizontal pass
    let mut horiz = vec![0.0f64; h * out_w];
    for y in 0..h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, &t) in taps.iter().enumerate() {
                acc += t * data[y * w + x + i];
            }
            horiz[y * out_w + x] = acc;
        }
    }
    // vertical pass
    let out_h = h - k + 1;
    let mut out = vec![0.0f64; out_h * out_w];
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, &t) in taps.iter().enumerate() {
                acc += t * horiz[(y + i) * out_w + x];
            }
            out[y * out_w + x] = acc;
        }
    }
    out
}

pub fn ssim_with(a: &GrayImage, b: &GrayImage, cfg: &SsimConfig) -> Result<f64> {
    check_dims("ssim", a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < cfg.window || w < cfg.window {
        return Err(Error::Config {
            detail: format!("ssim needs at least {0}x{0} images, got {h}x{w}", cfg.window),
        });
    }
    let taps = gaussian_taps(cfg.window, cfg.sigma);
    let ax: Vec<f64> = a.data().iter().map(|&v| f64::from(v)).collect();
    let bx: Vec<f64> = b.data().iter().map(|&v| f64::from(v)).collect();
    let aa: Vec<f64> = ax.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = bx.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = ax.iter().zip(&bx).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(&ax, h, w, &taps);
    let mu_b = filter_valid(&bx, h, w, &taps);
    let e_aa = filter_valid(&aa, h, w, &taps);
    let e_bb = filter_valid(&bb, h, w, &taps);
    let e_ab = filter_valid(&ab, h, w, &taps);

    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let mut total = 0.0f64;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// Mean local SSIM with the standard constants.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    ssim_with(a, b, &SsimConfig::default())
}

fn check_dims(op: &'static str, a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.height() != b.height() {
        return Err(Error::DimMismatch { op, dim: "height", left: a.height(), right: b.height() });
    }
    if a.width() != b.width() {
        return Err(Error::DimMismatch { op, dim: "width", left: a.width(), right: b.width() });
    }
    Ok(())
}

/// Per-image metrics over a directory pair plus their arithmetic means.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub rows: Vec<(String, f64, f64)>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<(String, f64, f64)>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_psnr = rows.iter().map(|r| r.1).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.2).sum::<f64>() / n;
        MetricReport { rows, mean_psnr, mean_ssim }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("filename,psnr_db,ssim\n");
        for (name, p, s) in &self.rows {
            out.push_str(&format!("{name},{p:.6},{s:.6}\n"));
        }
        out.push_str(&format!("MEAN,{:.6},{:.6}\n", self.mean_psnr, self.mean_ssim));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(io_err(path))
    }
}

/// Evaluates matching `.pgm` files from two directories, sorted by name.
pub fn evaluate_dirs(pred_dir: &Path, ref_dir: &Path) -> Result<MetricReport> {
    let list = |dir: &Path| -> Result<Vec<String>> {
        let mut names = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.ends_with(".pgm") {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    };
    let preds = list(pred_dir)?;
    let refs = list(ref_dir)?;
    if preds.is_empty() {
        return Err(Error::EmptyDataset { what: "prediction directory" });
    }
    for name in &preds {
        if !refs.contains(name) {
            return Err(Error::CounterpartMissing { name: name.clone(), dir: ref_dir.to_path_buf() });
        }
    }
    for name in &refs {
        if !preds.contains(name) {
            return Err(Error::CounterpartMissing { name: name.clone(), dir: pred_dir.to_path_buf() });
        }
    }
    let mut rows = Vec::with_capacity(preds.len());
    for name in preds {
        let p = GrayImage::read_pgm(&pred_dir.join(&name))?;
        let r = GrayImage::read_pgm(&ref_dir.join(&name))?;
        let psnr_db = psnr(&p, &r)?;
        let ssim_v = ssim(&p, &r)?;
        rows.push((name, psnr_db, ssim_v));
    }
    Ok(MetricReport::from_rows(rows))
}
