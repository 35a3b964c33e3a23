use crate::error::{Error, Result};

/// Architecture knobs shared by the student and teacher restorers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RestorerConfig {
    pub base_channels: usize,
    /// Number of conv+relu blocks before the final linear conv.
    pub depth: usize,
    pub kernel_size: usize,
    pub teacher_encoder_channels: usize,
}

impl Default for RestorerConfig {
    fn default() -> Self {
        RestorerConfig { base_channels: 16, depth: 4, kernel_size: 3, teacher_encoder_channels: 8 }
    }
}

impl RestorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config { detail: "restorer depth must be at least 1".into() });
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::KernelSize { got: self.kernel_size });
        }
        if self.base_channels == 0 || self.teacher_encoder_channels == 0 {
            return Err(Error::Config { detail: "channel counts must be positive".into() });
        }
        Ok(())
    }
}
