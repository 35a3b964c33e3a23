//! Two-stage training: the teacher pretrains alone with semantic priors,
//! then freezes while the student distills from it.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::GrayImage;
use crate::error::{io_err, Error, Result};
use crate::losses::{psnr_loss, scm_loss, skd_loss, total_loss, FeatureExtractor, LossWeights};
use crate::metrics;
use crate::restorer::{FusionMode, StudentModel, TeacherModel};
use crate::rng;
use crate::semantic::{cat_fuse, map_pool, region_dropout, spi_fuse, MaskProvider, SegmentationMap};
use crate::tensor::{Adam, Graph, Tensor, Var};
use crate::train::{epoch_order, stack, Ablation, TrainConfig, TrainItem};

#[derive(Clone, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub recon: f64,
    pub skd: f64,
    pub scm: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_psnr,val_ssim,seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.3}\n",
                r.epoch, r.train_loss, r.val_psnr, r.val_ssim, r.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(io_err(path))
    }

    pub fn final_val(&self) -> Option<(f64, f64)> {
        self.rows.last().map(|r| (r.val_psnr, r.val_ssim))
    }
}

fn fusion_for(cfg: &TrainConfig) -> FusionMode {
    match cfg.ablation {
        Ablation::CatFusion => FusionMode::Cat { regions: cfg.k_regions },
        _ => FusionMode::Spi,
    }
}

/// Builds the teacher's fused input for one batch and runs its forward
/// pass. `image` is both the encoder input and the fused image channel.
fn teacher_pipeline(
    g: &mut Graph<f32>,
    teacher: &TeacherModel<f32>,
    image: Var,
    masks: &[SegmentationMap],
) -> Result<Var> {
    let fused = match teacher.fusion() {
        FusionMode::Spi => {
            let enc = teacher.encode(g, image)?;
            let pooled = map_pool(g, enc, masks)?;
            spi_fuse(g, pooled, image)?
        }
        FusionMode::Cat { regions } => cat_fuse(g, masks, regions, image)?,
    };
    teacher.forward(g, fused)
}

fn batch_masks(
    items: &[&TrainItem],
    cfg: &TrainConfig,
    dropout: Option<(usize, usize)>,
) -> Result<Vec<SegmentationMap>> {
    let p = match cfg.ablation {
        Ablation::SpiNoDropout | Ablation::CatFusion => 0.0,
        _ => cfg.dropout_p,
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| match dropout {
            Some((epoch, step)) if p > 0.0 => {
                let seed =
                    rng::mix_n(cfg.seed, "region-dropout", &[epoch as u64, step as u64, i as u64]);
                region_dropout(&item.mask, p, seed)
            }
            _ => Ok(item.mask.clone()),
        })
        .collect()
}

/// Stage 1: pretrain the mask-guided teacher on (degraded, reference)
/// pairs, with region dropout regularizing the pooled priors.
pub fn pretrain_teacher(
    train: &[TrainItem],
    val: &[TrainItem],
    cfg: &TrainConfig,
) -> Result<(TeacherModel<f32>, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset { what: "training split" });
    }
    let mut teacher =
        TeacherModel::new(cfg.restorer, fusion_for(cfg), rng::mix(cfg.seed, "teacher-init"))?;
    let mut adam = Adam::new(cfg.learning_rate).with_weight_decay(cfg.weight_decay);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs_stage1 {
        let start = Instant::now();
        let order = epoch_order(train.len(), cfg.seed, "teacher-order", epoch);
        let mut loss_sum = 0.0f64;
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&TrainItem> = chunk.iter().map(|&i| &train[i]).collect();
            let masks = batch_masks(&items, cfg, Some((epoch, step)))?;
            let lq = stack(items.iter().map(|i| &i.degraded));
            let hq = stack(items.iter().map(|i| &i.reference));

            let mut g = Graph::new();
            let x = g.leaf(lq, false);
            let out = teacher_pipeline(&mut g, &teacher, x, &masks)?;
            let reference = g.constant(hq);
            let loss = psnr_loss(&mut g, out, reference)?;
            g.backward(loss)?;
            let grads: HashMap<String, Tensor<f32>> = g.param_grads().into_iter().collect();
            adam.step(teacher.params_mut(), &grads)?;
            loss_sum += f64::from(g.scalar_value(loss)?);
            steps += 1;
        }
        let train_loss = loss_sum / steps as f64;
        let (val_psnr, val_ssim) = validate_teacher(&teacher, val, cfg.batch_size)?;
        report.rows.push(EpochRow {
            epoch,
            train_loss,
            recon: train_loss,
            skd: 0.0,
            scm: 0.0,
            val_psnr,
            val_ssim,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!("stage1 epoch {epoch}: loss {train_loss:.4}, val psnr {val_psnr:.3}");
    }
    Ok((teacher, report))
}

/// Stage 2: freeze the teacher and train the student with reconstruction,
/// distillation, and semantic-consistency terms.
pub fn train_student(
    train: &[TrainItem],
    val: &[TrainItem],
    provider: &MaskProvider,
    teacher: &TeacherModel<f32>,
    phi: &FeatureExtractor<f32>,
    cfg: &TrainConfig,
) -> Result<(StudentModel<f32>, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset { what: "training split" });
    }
    if let Some(name) = teacher.first_trainable() {
        return Err(Error::TeacherNotFrozen { name: name.to_string() });
    }
    let mut student = StudentModel::new(cfg.restorer, rng::mix(cfg.seed, "student-init"))?;
    let mut adam = Adam::new(cfg.learning_rate).with_weight_decay(cfg.weight_decay);
    let mut report = TrainReport::default();

    let use_skd = cfg.ablation != Ablation::NoSkd && cfg.lambda1 > 0.0;
    let use_scm = cfg.ablation != Ablation::NoScm && cfg.lambda2 > 0.0;
    let weights = LossWeights {
        lambda1: if use_skd { cfg.lambda1 } else { 0.0 },
        lambda2: if use_scm { cfg.lambda2 } else { 0.0 },
    };

    for epoch in 0..cfg.epochs_stage2 {
        let start = Instant::now();
        let order = epoch_order(train.len(), cfg.seed, "student-order", epoch);
        let (mut sum_total, mut sum_recon, mut sum_skd, mut sum_scm) = (0.0f64, 0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&TrainItem> = chunk.iter().map(|&i| &train[i]).collect();
            let lq = stack(items.iter().map(|i| &i.degraded));
            let hq = stack(items.iter().map(|i| &i.reference));

            let mut g = Graph::new();
            let x = g.leaf(lq, false);
            let hq1 = student.forward(&mut g, x)?;
            let reference = g.constant(hq);
            let recon = psnr_loss(&mut g, hq1, reference)?;

            let (skd, scm) = if use_skd || use_scm {
                let masks = if cfg.masks_from_student {
                    student_masks(&g, hq1, &items, provider)?
                } else {
                    items.iter().map(|i| i.mask.clone()).collect::<Vec<_>>()
                };
                let t_in = if cfg.teacher_grad { hq1 } else { g.detach(hq1) };
                let hq2_raw = teacher_pipeline(&mut g, teacher, t_in, &masks)?;
                let hq2 = if cfg.teacher_grad { hq2_raw } else { g.detach(hq2_raw) };
                let skd = if use_skd {
                    skd_loss(&mut g, hq1, hq2, !cfg.teacher_grad)?
                } else {
                    g.scalar_const(0.0)
                };
                let scm = if use_scm {
                    scm_loss(&mut g, hq1, hq2, &masks, phi, !cfg.teacher_grad)?
                } else {
                    g.scalar_const(0.0)
                };
                (skd, scm)
            } else {
                (g.scalar_const(0.0), g.scalar_const(0.0))
            };

            let loss = total_loss(&mut g, recon, skd, scm, &weights)?;
            g.backward(loss)?;
            let grads: HashMap<String, Tensor<f32>> = g.param_grads().into_iter().collect();
            adam.step(student.params_mut(), &grads)?;

            sum_total += f64::from(g.scalar_value(loss)?);
            sum_recon += f64::from(g.scalar_value(recon)?);
            sum_skd += f64::from(g.scalar_value(skd)?);
            sum_scm += f64::from(g.scalar_value(scm)?);
            steps += 1;
        }
        let n = steps as f64;
        let (val_psnr, val_ssim) = validate_student(&student, val, cfg.batch_size)?;
        report.rows.push(EpochRow {
            epoch,
            train_loss: sum_total / n,
            recon: sum_recon / n,
            skd: sum_skd / n,
            scm: sum_scm / n,
            val_psnr,
            val_ssim,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::info!(
            "stage2 epoch {epoch}: loss {:.4}, val psnr {val_psnr:.3}",
            sum_total / n
        );
    }
    Ok((student, report))
}

/// Masks recomputed from the (clamped) student output, for the
/// `masks_from_student` sensitivity switch.
fn student_masks(
    g: &Graph<f32>,
    hq1: Var,
    items: &[&TrainItem],
    provider: &MaskProvider,
) -> Result<Vec<SegmentationMap>> {
    let out = g.value(hq1);
    items
        .iter()
        .enumerate()
        .map(|(b, item)| {
            let restored = GrayImage::from_tensor(out, b).clamp01();
            provider.provide(&format!("{}__restored", item.id), &restored)
        })
        .collect()
}

/// Mean PSNR/SSIM of the student's clamped outputs over a split.
pub fn validate_student(
    student: &StudentModel<f32>,
    split: &[TrainItem],
    batch_size: usize,
) -> Result<(f64, f64)> {
    validate_outputs(split, batch_size, |items| {
        let lq = stack(items.iter().map(|i| &i.degraded));
        let mut g = Graph::new();
        let x = g.leaf(lq, false);
        let out = student.forward(&mut g, x)?;
        let out = g.clamp01(out);
        Ok(g.value(out).clone())
    })
}

/// Mean PSNR/SSIM of the teacher's clamped outputs over a split (masks
/// from the reference, no dropout).
pub fn validate_teacher(
    teacher: &TeacherModel<f32>,
    split: &[TrainItem],
    batch_size: usize,
) -> Result<(f64, f64)> {
    validate_outputs(split, batch_size, |items| {
        let masks: Vec<SegmentationMap> = items.iter().map(|i| i.mask.clone()).collect();
        let lq = stack(items.iter().map(|i| &i.degraded));
        let mut g = Graph::new();
        let x = g.leaf(lq, false);
        let out = teacher_pipeline(&mut g, teacher, x, &masks)?;
        let out = g.clamp01(out);
        Ok(g.value(out).clone())
    })
}

/// Mean PSNR/SSIM of the degraded inputs themselves (the no-op baseline).
pub fn input_baseline(split: &[TrainItem]) -> Result<(f64, f64)> {
    validate_outputs(split, split.len().max(1), |items| {
        Ok(stack(items.iter().map(|i| &i.degraded)))
    })
}

fn validate_outputs(
    split: &[TrainItem],
    batch_size: usize,
    mut forward: impl FnMut(&[&TrainItem]) -> Result<Tensor<f32>>,
) -> Result<(f64, f64)> {
    if split.is_empty() {
        return Err(Error::EmptyDataset { what: "validation split" });
    }
    let mut psnr_sum = 0.0f64;
    let mut ssim_sum = 0.0f64;
    let items: Vec<&TrainItem> = split.iter().collect();
    for chunk in items.chunks(batch_size.max(1)) {
        let out = forward(chunk)?;
        for (b, item) in chunk.iter().enumerate() {
            let restored = GrayImage::from_tensor(&out, b);
            psnr_sum += metrics::psnr(&restored, &item.reference)?;
            ssim_sum += metrics::ssim(&restored, &item.reference)?;
        }
    }
    let n = split.len() as f64;
    Ok((psnr_sum / n, ssim_sum / n))
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub lambda1: f64,
    pub lambda2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn default_sweep_grid() -> Vec<(f64, f64)> {
    let mut grid = Vec::new();
    for &l1 in &[1e-4, 1e-3, 1e-2] {
        for &l2 in &[10.0, 100.0, 1000.0] {
            grid.push((l1, l2));
        }
    }
    grid
}

/// One stage-2 run per grid point, all from the same seed and teacher.
pub fn lambda_sweep(
    train: &[TrainItem],
    val: &[TrainItem],
    provider: &MaskProvider,
    teacher: &TeacherModel<f32>,
    phi: &FeatureExtractor<f32>,
    base: &TrainConfig,
    grid: &[(f64, f64)],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for &(lambda1, lambda2) in grid {
        let cfg = TrainConfig { lambda1, lambda2, ..base.clone() };
        let (_, report) = train_student(train, val, provider, teacher, phi, &cfg)?;
        let (psnr, ssim) = report.final_val().ok_or(Error::EmptyDataset { what: "sweep report" })?;
        rows.push(SweepRow { lambda1, lambda2, psnr, ssim });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("lambda1,lambda2,psnr_db,ssim\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.6},{:.6}\n", r.lambda1, r.lambda2, r.psnr, r.ssim));
    }
    out
}

/// Snapshot of all parameter bytes, for frozen-invariant checks.
pub fn parameter_fingerprint(params: &[crate::tensor::Parameter<f32>]) -> Vec<u8> {
    let mut bytes = Vec::new();
    for p in params {
        bytes.extend_from_slice(p.name().as_bytes());
        for v in p.value().data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}
