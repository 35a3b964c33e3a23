//! End-to-end checks of the `spdr` binary: exit codes, determinism, and
//! the inference path.

use std::path::Path;
use std::process::{Command, Output};

use spd_restore::data::{GrayImage, PgmDepth};
use spd_restore::restorer::{save_student, RestorerConfig, StudentModel};

fn spdr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spdr"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn unknown_commands_and_bad_flags_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = spdr(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = spdr(&["synth", "--bogus-flag", "3"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = spdr(
        &["infer", "--model", "absent.spdc", "--in", "absent.pgm", "--out", "y.pgm"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn synth_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let out = spdr(
            &["synth", "--n", "4", "--seed", "7", "--out", sub],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for i in 0..4 {
        for prefix in ["clean", "labels"] {
            let name = format!("{prefix}_{i:04}.pgm");
            let a = std::fs::read(dir.path().join("a").join(&name)).unwrap();
            let b = std::fs::read(dir.path().join("b").join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
}

#[test]
fn commands_print_resolved_configuration_first() {
    let dir = tempfile::tempdir().unwrap();
    let out = spdr(&["synth", "--n", "1", "--out", "s"], dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("[synth] resolved configuration:"));
    assert!(stdout.contains("seed = 0"));
}

/// A fresh student has a zero-initialized final conv, so inference through
/// the full stack must reproduce the input bit-for-bit at 8-bit depth.
#[test]
fn infer_with_zero_residual_checkpoint_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let student = StudentModel::<f32>::new(RestorerConfig::default(), 5).unwrap();
    save_student(&dir.path().join("student.spdc"), &student).unwrap();
    let img = GrayImage::from_fn(32, 32, |y, x| ((y * 31 + x * 7) % 256) as f32 / 255.0);
    img.write_pgm(&dir.path().join("x.pgm"), PgmDepth::Eight).unwrap();

    let out = spdr(
        &["infer", "--model", "student.spdc", "--in", "x.pgm", "--out", "y.pgm"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let x = std::fs::read(dir.path().join("x.pgm")).unwrap();
    let y = std::fs::read(dir.path().join("y.pgm")).unwrap();
    assert_eq!(x, y);
}

#[test]
fn degrade_rejects_unreadable_input_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.pgm"), b"not a pgm").unwrap();
    let out = spdr(
        &["degrade", "--in", "junk.pgm", "--out", "out.pgm"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out.pgm").exists());
}

#[test]
fn eval_command_reports_means_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred");
    let refs = dir.path().join("refs");
    std::fs::create_dir_all(&pred).unwrap();
    std::fs::create_dir_all(&refs).unwrap();
    for i in 0..2 {
        let img = GrayImage::from_fn(16, 16, |y, x| ((y + x + i) % 16) as f32 / 15.0);
        img.write_pgm(&pred.join(format!("p{i}.pgm")), PgmDepth::Eight).unwrap();
        img.write_pgm(&refs.join(format!("p{i}.pgm")), PgmDepth::Eight).unwrap();
    }
    let out = spdr(
        &["eval", "--pred", "pred", "--ref", "refs", "--out", "report.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("MEAN,80.000000,1.000000"));
}

#[test]
fn register_command_reports_shift() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = spd_restore::data::synth_scene(3, 48, 48);
    img.write_pgm(&dir.path().join("fixed.pgm"), PgmDepth::Sixteen).unwrap();
    img.write_pgm(&dir.path().join("moving.pgm"), PgmDepth::Sixteen).unwrap();
    let out = spdr(
        &["register", "--moving", "moving.pgm", "--fixed", "fixed.pgm", "--radius", "3"],
        dir.path(),
    );
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("shift_row=0 shift_col=0"), "{stdout}");
}

#[test]
fn gradcheck_command_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = spdr(&["gradcheck", "--instances", "1", "--seed", "3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("conv2d"));
    assert!(stdout.contains("all 28 operations within"));
}
