//! Training-loop contracts on a tiny synthetic dataset: smoke runs,
//! determinism, frozen-teacher isolation, and loss decomposition.

use std::collections::HashMap;

use spd_restore::data::DegradationConfig;
use spd_restore::error::Error;
use spd_restore::losses::{psnr_loss, FeatureExtractor};
use spd_restore::restorer::{save_student, save_teacher, RestorerConfig};
use spd_restore::semantic::MaskProvider;
use spd_restore::tensor::{Adam, Graph, Tensor};
use spd_restore::train::*;

fn tiny_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk(seed);
    cfg.epochs_stage1 = 2;
    cfg.epochs_stage2 = 2;
    cfg.batch_size = 4;
    cfg.restorer = RestorerConfig {
        base_channels: 6,
        depth: 2,
        kernel_size: 3,
        teacher_encoder_channels: 4,
    };
    cfg
}

fn tiny_data(seed: u64, n: usize) -> (Vec<TrainItem>, Vec<TrainItem>, MaskProvider) {
    let provider = MaskProvider::synthetic(5);
    let items =
        synth_items(n, 32, 32, seed, &DegradationConfig::default(), &provider).unwrap();
    let (train, val) = items.split_at(n - 3);
    (train.to_vec(), val.to_vec(), provider)
}

#[test]
fn one_epoch_smoke_run_reports_finite_losses() {
    let (train, val, provider) = tiny_data(1, 11);
    let mut cfg = tiny_config(1);
    cfg.epochs_stage1 = 1;
    cfg.epochs_stage2 = 1;
    let (mut teacher, report) = pretrain_teacher(&train, &val, &cfg).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!(report.rows[0].train_loss.is_finite());
    assert!(report.rows[0].val_psnr.is_finite());
    teacher.freeze();
    let phi = FeatureExtractor::fixed();
    let (_student, report) = train_student(&train, &val, &provider, &teacher, &phi, &cfg).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert!(report.rows[0].train_loss.is_finite());
}

#[test]
fn same_seed_produces_bit_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let (train, val, provider) = tiny_data(3, 9);
        let cfg = tiny_config(7);
        let (mut teacher, _) = pretrain_teacher(&train, &val, &cfg).unwrap();
        teacher.freeze();
        let phi = FeatureExtractor::fixed();
        let (student, _) = train_student(&train, &val, &provider, &teacher, &phi, &cfg).unwrap();
        let t_path = dir.path().join(format!("teacher_{tag}.spdc"));
        let s_path = dir.path().join(format!("student_{tag}.spdc"));
        save_teacher(&t_path, &teacher).unwrap();
        save_student(&s_path, &student).unwrap();
        (std::fs::read(t_path).unwrap(), std::fs::read(s_path).unwrap())
    };
    let (t1, s1) = run("a");
    let (t2, s2) = run("b");
    assert_eq!(t1, t2, "teacher checkpoints differ across identical runs");
    assert_eq!(s1, s2, "student checkpoints differ across identical runs");
}

#[test]
fn stage_two_refuses_an_unfrozen_teacher() {
    let (train, val, provider) = tiny_data(5, 9);
    let cfg = tiny_config(5);
    let (teacher, _) = pretrain_teacher(&train, &val, &cfg).unwrap();
    let phi = FeatureExtractor::fixed();
    let err = train_student(&train, &val, &provider, &teacher, &phi, &cfg).unwrap_err();
    assert!(matches!(err, Error::TeacherNotFrozen { .. }));
}

#[test]
fn teacher_and_extractor_are_bit_identical_across_stage_two() {
    let (train, val, provider) = tiny_data(9, 9);
    let cfg = tiny_config(9);
    let (mut teacher, _) = pretrain_teacher(&train, &val, &cfg).unwrap();
    teacher.freeze();
    let phi = FeatureExtractor::fixed();
    let teacher_before = parameter_fingerprint(teacher.params());
    let phi_before = parameter_fingerprint(phi.params());
    let (_student, _) = train_student(&train, &val, &provider, &teacher, &phi, &cfg).unwrap();
    assert_eq!(teacher_before, parameter_fingerprint(teacher.params()));
    assert_eq!(phi_before, parameter_fingerprint(phi.params()));
}

/// Independent reconstruction-only loop: same batching, same optimizer,
/// no teacher anywhere.
fn recon_only_losses(train: &[TrainItem], cfg: &TrainConfig) -> Vec<f64> {
    let mut student = spd_restore::restorer::StudentModel::<f32>::new(
        cfg.restorer,
        spd_restore::rng::mix(cfg.seed, "student-init"),
    )
    .unwrap();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut out = Vec::new();
    for epoch in 0..cfg.epochs_stage2 {
        let order = epoch_order(train.len(), cfg.seed, "student-order", epoch);
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&TrainItem> = chunk.iter().map(|&i| &train[i]).collect();
            let lq = stack(items.iter().map(|i| &i.degraded));
            let hq = stack(items.iter().map(|i| &i.reference));
            let mut g = Graph::new();
            let x = g.leaf(lq, false);
            let pred = student.forward(&mut g, x).unwrap();
            let reference = g.constant(hq);
            let loss = psnr_loss(&mut g, pred, reference).unwrap();
            g.backward(loss).unwrap();
            let grads: HashMap<String, Tensor<f32>> = g.param_grads().into_iter().collect();
            adam.step(student.params_mut(), &grads).unwrap();
            sum += f64::from(g.scalar_value(loss).unwrap());
            steps += 1;
        }
        out.push(sum / steps as f64);
    }
    out
}

#[test]
fn zero_weights_reduce_to_plain_reconstruction_training() {
    let (train, val, provider) = tiny_data(11, 9);
    let mut cfg = tiny_config(11);
    cfg.lambda1 = 0.0;
    cfg.lambda2 = 0.0;
    let (mut teacher, _) = pretrain_teacher(&train, &val, &cfg).unwrap();
    teacher.freeze();
    let phi = FeatureExtractor::fixed();
    let (_student, report) = train_student(&train, &val, &provider, &teacher, &phi, &cfg).unwrap();
    let oracle = recon_only_losses(&train, &cfg);
    for (row, expect) in report.rows.iter().zip(&oracle) {
        assert!(
            (row.train_loss - expect).abs() < 1e-9,
            "epoch {}: {} vs {}",
            row.epoch,
            row.train_loss,
            expect
        );
    }
}

#[test]
fn logged_total_decomposes_into_weighted_terms() {
    let (train, val, provider) = tiny_data(13, 9);
    let cfg = tiny_config(13);
    let (mut teacher, _) = pretrain_teacher(&train, &val, &cfg).unwrap();
    teacher.freeze();
    let phi = FeatureExtractor::fixed();
    let (_student, report) = train_student(&train, &val, &provider, &teacher, &phi, &cfg).unwrap();
    for row in &report.rows {
        let recomposed = row.recon + cfg.lambda1 * row.skd + cfg.lambda2 * row.scm;
        let rel = (row.train_loss - recomposed).abs() / row.train_loss.abs().max(1.0);
        assert!(rel < 1e-6, "epoch {}: total {} vs {}", row.epoch, row.train_loss, recomposed);
    }
}

#[test]
fn no_skd_ablation_zeroes_the_distillation_term() {
    let (train, val, provider) = tiny_data(15, 9);
    let mut cfg = tiny_config(15);
    cfg.ablation = Ablation::NoSkd;
    let (mut teacher, _) = pretrain_teacher(&train, &val, &cfg).unwrap();
    teacher.freeze();
    let phi = FeatureExtractor::fixed();
    let (_student, report) = train_student(&train, &val, &provider, &teacher, &phi, &cfg).unwrap();
    for row in &report.rows {
        assert_eq!(row.skd, 0.0);
        assert!((row.train_loss - (row.recon + cfg.lambda2 * row.scm)).abs() < 1e-9);
    }
}

#[test]
fn cat_fusion_trains_and_keeps_the_encoder_frozen() {
    let (train, val, provider) = tiny_data(17, 9);
    let mut cfg = tiny_config(17);
    cfg.ablation = Ablation::CatFusion;
    let (mut teacher, report) = pretrain_teacher(&train, &val, &cfg).unwrap();
    assert!(report.rows.iter().all(|r| r.train_loss.is_finite()));
    assert!(teacher
        .params()
        .iter()
        .filter(|p| p.name().starts_with("teacher.enc"))
        .all(|p| p.is_frozen()));
    teacher.freeze();
    let phi = FeatureExtractor::fixed();
    let (_student, report) = train_student(&train, &val, &provider, &teacher, &phi, &cfg).unwrap();
    assert!(report.rows.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn experimentation_switches_run_and_keep_the_teacher_frozen() {
    let (train, val, provider) = tiny_data(25, 9);
    let mut cfg = tiny_config(25);
    cfg.epochs_stage1 = 1;
    cfg.epochs_stage2 = 1;
    let (mut teacher, _) = pretrain_teacher(&train, &val, &cfg).unwrap();
    teacher.freeze();
    let phi = FeatureExtractor::fixed();
    let before = parameter_fingerprint(teacher.params());

    // gradients allowed through the (frozen) teacher path
    cfg.teacher_grad = true;
    let (_s, report) = train_student(&train, &val, &provider, &teacher, &phi, &cfg).unwrap();
    assert!(report.rows[0].train_loss.is_finite());
    assert_eq!(before, parameter_fingerprint(teacher.params()));

    // stage-2 masks recomputed from the student output
    cfg.teacher_grad = false;
    cfg.masks_from_student = true;
    let (_s, report) = train_student(&train, &val, &provider, &teacher, &phi, &cfg).unwrap();
    assert!(report.rows[0].train_loss.is_finite());
    assert_eq!(before, parameter_fingerprint(teacher.params()));
}

#[test]
fn validate_is_deterministic_and_caps_on_identity() {
    let provider = MaskProvider::synthetic(5);
    let clean = synth_items(4, 32, 32, 20, &DegradationConfig::none(), &provider).unwrap();
    // identity model on clean == degraded pairs: capped PSNR, unit SSIM
    let student = spd_restore::restorer::StudentModel::<f32>::new(
        RestorerConfig::default(),
        1,
    )
    .unwrap();
    let (psnr, ssim) = validate_student(&student, &clean, 2).unwrap();
    assert_eq!(psnr, 80.0);
    assert!((ssim - 1.0).abs() < 1e-9);
    let again = validate_student(&student, &clean, 2).unwrap();
    assert_eq!((psnr, ssim), again);
    assert!(matches!(
        validate_student(&student, &[], 2).unwrap_err(),
        Error::EmptyDataset { .. }
    ));
}

#[test]
fn validate_matches_hand_averaged_metrics() {
    let provider = MaskProvider::synthetic(5);
    let items = synth_items(3, 32, 32, 21, &DegradationConfig::default(), &provider).unwrap();
    let student =
        spd_restore::restorer::StudentModel::<f32>::new(RestorerConfig::default(), 2).unwrap();
    let (mean_psnr, mean_ssim) = validate_student(&student, &items, 2).unwrap();
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for item in &items {
        let out = student.restore(&item.degraded.to_tensor()).unwrap();
        let img = spd_restore::data::GrayImage::from_tensor(&out, 0).clamp01();
        psnr_sum += spd_restore::metrics::psnr(&img, &item.reference).unwrap();
        ssim_sum += spd_restore::metrics::ssim(&img, &item.reference).unwrap();
    }
    assert!((mean_psnr - psnr_sum / 3.0).abs() < 1e-9);
    assert!((mean_ssim - ssim_sum / 3.0).abs() < 1e-9);
}

#[test]
fn lambda_sweep_covers_the_grid() {
    let (train, val, provider) = tiny_data(23, 9);
    let mut cfg = tiny_config(23);
    cfg.epochs_stage1 = 1;
    cfg.epochs_stage2 = 1;
    let (mut teacher, _) = pretrain_teacher(&train, &val, &cfg).unwrap();
    teacher.freeze();
    let phi = FeatureExtractor::fixed();
    let grid = [(0.01, 100.0), (0.001, 10.0)];
    let rows = lambda_sweep(&train, &val, &provider, &teacher, &phi, &cfg, &grid).unwrap();
    assert_eq!(rows.len(), 2);
    let csv = sweep_csv(&rows);
    assert_eq!(csv.lines().count(), 3);

    // a single-point grid matches a direct run with those weights
    let single = lambda_sweep(&train, &val, &provider, &teacher, &phi, &cfg, &[(0.01, 100.0)])
        .unwrap();
    assert_eq!(single[0].psnr, rows[0].psnr);
    assert_eq!(single[0].ssim, rows[0].ssim);
}
