use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{io_err, Error, Result};
use crate::restorer::RestorerConfig;

/// Which loss/fusion variant a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    NoScm,
    NoSkd,
    CatFusion,
    SpiNoDropout,
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Ablation::Full,
            "no_scm" => Ablation::NoScm,
            "no_skd" => Ablation::NoSkd,
            "cat_fusion" => Ablation::CatFusion,
            "spi_no_dropout" => Ablation::SpiNoDropout,
            other => {
                return Err(Error::Config { detail: format!("unknown ablation `{other}`") });
            }
        })
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Ablation::Full => "full",
            Ablation::NoScm => "no_scm",
            Ablation::NoSkd => "no_skd",
            Ablation::CatFusion => "cat_fusion",
            Ablation::SpiNoDropout => "spi_no_dropout",
        };
        f.write_str(s)
    }
}

/// All training hyperparameters. Defaults follow the published protocol
/// (lr 1e-4, batch 8, 60 epochs per stage, lambda1 0.01, lambda2 100);
/// [`TrainConfig::desk`] swaps in a preset small enough to finish in
/// minutes on one CPU core.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub dropout_p: f64,
    pub weight_decay: f64,
    /// Let gradients flow through the frozen teacher path instead of
    /// detaching its output (experimentation switch).
    pub teacher_grad: bool,
    /// Derive stage-2 masks from the student output instead of the
    /// reference image (sensitivity switch).
    pub masks_from_student: bool,
    pub k_regions: usize,
    pub restorer: RestorerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 8,
            epochs_stage1: 60,
            epochs_stage2: 60,
            lambda1: 0.01,
            lambda2: 100.0,
            seed: 0,
            ablation: Ablation::Full,
            dropout_p: 0.5,
            weight_decay: 0.0,
            teacher_grad: false,
            masks_from_student: false,
            k_regions: 7,
            restorer: RestorerConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale preset: trains on 64x64 patches in minutes.
    pub fn desk(seed: u64) -> Self {
        TrainConfig { epochs_stage1: 10, epochs_stage2: 10, seed, ..TrainConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config { detail: "learning rate must be positive".into() });
        }
        if self.batch_size == 0 {
            return Err(Error::Config { detail: "batch size must be positive".into() });
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Config { detail: "loss weights must be non-negative".into() });
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config { detail: "dropout probability must be in [0, 1)".into() });
        }
        if self.k_regions == 0 || self.k_regions > 255 {
            return Err(Error::Config { detail: "region count must be in 1..=255".into() });
        }
        self.restorer.validate()
    }

    /// Applies one `key=value` override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Config {
                detail: format!("invalid value `{value}` for `{key}`"),
            })
        }
        match key {
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "batch_size" | "batch" => self.batch_size = parse(key, value)?,
            "epochs_stage1" => self.epochs_stage1 = parse(key, value)?,
            "epochs_stage2" => self.epochs_stage2 = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "dropout_p" => self.dropout_p = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "teacher_grad" => self.teacher_grad = parse(key, value)?,
            "masks_from_student" => self.masks_from_student = parse(key, value)?,
            "k_regions" | "k" => self.k_regions = parse(key, value)?,
            "base_channels" => self.restorer.base_channels = parse(key, value)?,
            "depth" => self.restorer.depth = parse(key, value)?,
            "kernel_size" => self.restorer.kernel_size = parse(key, value)?,
            "teacher_encoder_channels" => {
                self.restorer.teacher_encoder_channels = parse(key, value)?
            }
            other => {
                return Err(Error::Config { detail: format!("unknown config key `{other}`") });
            }
        }
        Ok(())
    }

    /// Merges a line-based `key=value` config file into this config.
    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                detail: format!("{}:{}: expected key=value", path.display(), lineno + 1),
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// All fields as `key = value` lines for reproducible logging.
    pub fn resolved(&self) -> String {
        format!(
            "learning_rate = {}\nbatch_size = {}\nepochs_stage1 = {}\nepochs_stage2 = {}\n\
             lambda1 = {}\nlambda2 = {}\nseed = {}\nablation = {}\ndropout_p = {}\n\
             weight_decay = {}\nteacher_grad = {}\nmasks_from_student = {}\nk_regions = {}\n\
             base_channels = {}\ndepth = {}\nkernel_size = {}\nteacher_encoder_channels = {}\n",
            self.learning_rate,
            self.batch_size,
            self.epochs_stage1,
            self.epochs_stage2,
            self.lambda1,
            self.lambda2,
            self.seed,
            self.ablation,
            self.dropout_p,
            self.weight_decay,
            self.teacher_grad,
            self.masks_from_student,
            self.k_regions,
            self.restorer.base_channels,
            self.restorer.depth,
            self.restorer.kernel_size,
            self.restorer.teacher_encoder_channels,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        std::fs::write(&path, "# comment\nlr = 0.001\nablation = no_skd\nepochs_stage1=3\n")
            .unwrap();
        let mut cfg = TrainConfig::default();
        cfg.merge_file(&path).unwrap();
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.ablation, Ablation::NoSkd);
        assert_eq!(cfg.epochs_stage1, 3);
        assert_eq!(cfg.batch_size, 8);
    }

    #[test]
    fn bad_keys_and_values_are_rejected() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.apply_kv("nonsense", "1").is_err());
        assert!(cfg.apply_kv("lambda1", "abc").is_err());
        assert!(cfg.apply_kv("ablation", "everything").is_err());
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { dropout_p: 1.0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
