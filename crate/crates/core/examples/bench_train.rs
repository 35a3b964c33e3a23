use spd_restore::data::DegradationConfig;
use spd_restore::semantic::MaskProvider;
use spd_restore::losses::FeatureExtractor;
use spd_restore::train::*;
use std::time::Instant;

fn main() {
    let provider = MaskProvider::synthetic(7);
    let deg = DegradationConfig::default();
    let items = synth_items(200, 64, 64, 42, &deg, &provider).unwrap();
    let (train, rest) = items.split_at(140);
    let (val, _test) = rest.split_at(30);

    let base = input_baseline(val).unwrap();
    println!("input baseline: psnr {:.3} ssim {:.4}", base.0, base.1);

    let mut cfg = TrainConfig::desk(42);
    cfg.epochs_stage1 = 12;
    cfg.epochs_stage2 = 12;

    let t0 = Instant::now();
    let (mut teacher, rep) = pretrain_teacher(train, val, &cfg).unwrap();
    for r in &rep.rows {
        println!("s1 epoch {}: loss {:.3} val_psnr {:.3} ({:.1}s)", r.epoch, r.train_loss, r.val_psnr, r.seconds);
    }
    println!("stage1 total: {:.1}s", t0.elapsed().as_secs_f64());
    teacher.freeze();

    let t0 = Instant::now();

    let phi = FeatureExtractor::fixed();
    let (_s, rep_full) = train_student(train, val, &provider, &teacher, &phi, &cfg).unwrap();
    for r in &rep_full.rows {
        println!("s2-full epoch {}: loss {:.3} recon {:.3} skd {:.5} scm {:.6} val_psnr {:.3}", r.epoch, r.train_loss, r.recon, r.skd, r.scm, r.val_psnr);
    }
    println!("stage2 full total: {:.1}s", t0.elapsed().as_secs_f64());

    let mut base_cfg = cfg.clone();
    base_cfg.lambda1 = 0.0;
    base_cfg.lambda2 = 0.0;
    let t0 = Instant::now();
    let (_s, rep_base) = train_student(train, val, &provider, &teacher, &phi, &base_cfg).unwrap();
    println!("s2-baseline final val_psnr {:.3} ({:.1}s)", rep_base.rows.last().unwrap().val_psnr, t0.elapsed().as_secs_f64());
    println!("gain: {:+.4} dB", rep_full.rows.last().unwrap().val_psnr - rep_base.rows.last().unwrap().val_psnr);
}
