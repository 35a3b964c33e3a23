//! The mask-guided restorer: an encoder producing per-pixel features for
//! region pooling, plus a residual body consuming the fused input. Used
//! only during training; frozen while the student distills from it.

use crate::error::{Error, Result};
use crate::restorer::{he_conv_init, RestorerConfig};
use crate::rng;
use crate::tensor::{Graph, Parameter, Scalar, Shape, Tensor, Var};

/// How segmentation priors enter the body's input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Pooled encoder features concatenated with the image.
    Spi,
    /// One-hot region channels concatenated with the image (ablation
    /// baseline); the encoder is unused and its parameters stay frozen.
    Cat { regions: usize },
}

const ENCODER_BLOCKS: usize = 2;

#[derive(Debug)]
pub struct TeacherModel<T> {
    config: RestorerConfig,
    fusion: FusionMode,
    params: Vec<Parameter<T>>,
    body_start: usize,
}

impl<T: Scalar> TeacherModel<T> {
    pub fn new(config: RestorerConfig, fusion: FusionMode, seed: u64) -> Result<Self> {
        config.validate()?;
        if let FusionMode::Cat { regions } = fusion {
            if regions == 0 {
                return Err(Error::Config { detail: "cat fusion needs at least 1 region".into() });
            }
        }
        let mut rng = rng::stream(seed, "teacher-init");
        let k = config.kernel_size;
        let enc_ch = config.teacher_encoder_channels;
        let mut params = Vec::new();
        let mut in_ch = 1;
        for block in 0..ENCODER_BLOCKS {
            let mut w = Parameter::trainable(
                format!("teacher.enc{block}.weight"),
                he_conv_init(enc_ch, in_ch, k, &mut rng),
            );
            let mut b = Parameter::trainable(
                format!("teacher.enc{block}.bias"),
                Tensor::zeros(Shape::new(1, enc_ch, 1, 1)),
            );
            // the encoder never runs under CAT fusion
            if matches!(fusion, FusionMode::Cat { .. }) {
                w.set_frozen(true);
                b.set_frozen(true);
            }
            params.push(w);
            params.push(b);
            in_ch = enc_ch;
        }
        let body_start = params.len();
        let mut in_ch = match fusion {
            FusionMode::Spi => enc_ch + 1,
            FusionMode::Cat { regions } => regions + 1,
        };
        for block in 0..config.depth {
            let out_ch = config.base_channels;
            params.push(Parameter::trainable(
                format!("teacher.body{block}.weight"),
                he_conv_init(out_ch, in_ch, k, &mut rng),
            ));
            params.push(Parameter::trainable(
                format!("teacher.body{block}.bias"),
                Tensor::zeros(Shape::new(1, out_ch, 1, 1)),
            ));
            in_ch = out_ch;
        }
        params.push(Parameter::trainable(
            "teacher.out.weight",
            Tensor::zeros(Shape::new(1, in_ch, k, k)),
        ));
        params.push(Parameter::trainable("teacher.out.bias", Tensor::zeros(Shape::new(1, 1, 1, 1))));
        Ok(TeacherModel { config, fusion, params, body_start })
    }

    pub fn from_parts(config: RestorerConfig, fusion: FusionMode, params: Vec<Parameter<T>>) -> Result<Self> {
        let body_start = 2 * ENCODER_BLOCKS;
        if params.len() != body_start + 2 * config.depth + 2 {
            return Err(Error::Config {
                detail: format!("teacher expects {} parameters, got {}", body_start + 2 * config.depth + 2, params.len()),
            });
        }
        Ok(TeacherModel { config, fusion, params, body_start })
    }

    pub fn config(&self) -> RestorerConfig {
        self.config
    }

    pub fn fusion(&self) -> FusionMode {
        self.fusion
    }

    /// Channel count the body expects after fusion.
    pub fn fused_channels(&self) -> usize {
        match self.fusion {
            FusionMode::Spi => self.config.teacher_encoder_channels + 1,
            FusionMode::Cat { regions } => regions + 1,
        }
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn freeze(&mut self) {
        for p in &mut self.params {
            p.set_frozen(true);
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.params.iter().all(|p| p.is_frozen())
    }

    /// First parameter that is not frozen, if any.
    pub fn first_trainable(&self) -> Option<&str> {
        self.params.iter().find(|p| !p.is_frozen()).map(|p| p.name())
    }

    /// Per-pixel features for mask pooling; spatial dims are preserved.
    pub fn encode(&self, g: &mut Graph<T>, input: Var) -> Result<Var> {
        let channels = g.shape(input).channels;
        if channels != 1 {
            return Err(Error::ChannelMismatch { op: "teacher_encode", expected: 1, got: channels });
        }
        let mut h = input;
        for block in 0..ENCODER_BLOCKS {
            let w = g.bind(&self.params[2 * block])?;
            let b = g.bind(&self.params[2 * block + 1])?;
            let conv = g.conv2d(h, w, b)?;
            h = g.relu(conv);
        }
        Ok(h)
    }

    /// Residual body over the fused input; the correction is added to the
    /// image channel (the last fused channel).
    pub fn forward(&self, g: &mut Graph<T>, fused: Var) -> Result<Var> {
        let channels = g.shape(fused).channels;
        if channels != self.fused_channels() {
            return Err(Error::ChannelMismatch {
                op: "teacher_forward",
                expected: self.fused_channels(),
                got: channels,
            });
        }
        let image = g.slice_channels(fused, channels - 1, 1)?;
        let mut h = fused;
        for block in 0..self.config.depth {
            let w = g.bind(&self.params[self.body_start + 2 * block])?;
            let b = g.bind(&self.params[self.body_start + 2 * block + 1])?;
            let conv = g.conv2d(h, w, b)?;
            h = g.relu(conv);
        }
        let w = g.bind(&self.params[self.body_start + 2 * self.config.depth])?;
        let b = g.bind(&self.params[self.body_start + 2 * self.config.depth + 1])?;
        let residual = g.conv2d(h, w, b)?;
        g.add(image, residual)
    }
}
