//! The mask-free restorer used alone at inference time: a plain residual
//! CNN predicting a correction on top of its input.

use crate::error::{Error, Result};
use crate::restorer::{he_conv_init, RestorerConfig};
use crate::rng;
use crate::tensor::{Graph, Parameter, Scalar, Shape, Tensor, Var};

#[derive(Debug)]
pub struct StudentModel<T> {
    config: RestorerConfig,
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> StudentModel<T> {
    /// He-initialized blocks with a zero-initialized final conv, so a fresh
    /// model is exactly the identity.
    pub fn new(config: RestorerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "student-init");
        let k = config.kernel_size;
        let mut params = Vec::new();
        let mut in_ch = 1;
        for block in 0..config.depth {
            let out_ch = config.base_channels;
            params.push(Parameter::trainable(
                format!("student.block{block}.weight"),
                he_conv_init(out_ch, in_ch, k, &mut rng),
            ));
            params.push(Parameter::trainable(
                format!("student.block{block}.bias"),
                Tensor::zeros(Shape::new(1, out_ch, 1, 1)),
            ));
            in_ch = out_ch;
        }
        params.push(Parameter::trainable(
            "student.out.weight",
            Tensor::zeros(Shape::new(1, in_ch, k, k)),
        ));
        params.push(Parameter::trainable("student.out.bias", Tensor::zeros(Shape::new(1, 1, 1, 1))));
        Ok(StudentModel { config, params })
    }

    pub fn from_parts(config: RestorerConfig, params: Vec<Parameter<T>>) -> Self {
        StudentModel { config, params }
    }

    pub fn config(&self) -> RestorerConfig {
        self.config
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in &mut self.params {
            p.set_frozen(frozen);
        }
    }

    /// input + residual(input); the residual ends in a linear conv.
    pub fn forward(&self, g: &mut Graph<T>, input: Var) -> Result<Var> {
        let channels = g.shape(input).channels;
        if channels != 1 {
            return Err(Error::ChannelMismatch { op: "student_forward", expected: 1, got: channels });
        }
        let mut h = input;
        for block in 0..self.config.depth {
            let w = g.bind(&self.params[2 * block])?;
            let b = g.bind(&self.params[2 * block + 1])?;
            let conv = g.conv2d(h, w, b)?;
            h = g.relu(conv);
        }
        let w = g.bind(&self.params[2 * self.config.depth])?;
        let b = g.bind(&self.params[2 * self.config.depth + 1])?;
        let residual = g.conv2d(h, w, b)?;
        g.add(input, residual)
    }

    /// Convenience inference path: forward one image, no gradients.
    pub fn restore(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.leaf(input.clone(), false);
        let out = self.forward(&mut g, x)?;
        Ok(g.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_model_is_identity() {
        let model = StudentModel::<f32>::new(RestorerConfig::default(), 3).unwrap();
        let input = Tensor::from_fn(Shape::new(2, 1, 8, 8), |i| (i as f32 * 0.01) % 1.0);
        let out = model.restore(&input).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn output_shape_matches_input_for_arbitrary_sizes() {
        let model = StudentModel::<f32>::new(RestorerConfig::default(), 4).unwrap();
        for (h, w) in [(5, 9), (16, 16), (7, 31)] {
            let input = Tensor::zeros(Shape::new(1, 1, h, w));
            assert_eq!(model.restore(&input).unwrap().shape(), Shape::new(1, 1, h, w));
        }
    }

    #[test]
    fn multi_channel_input_is_rejected() {
        let model = StudentModel::<f32>::new(RestorerConfig::default(), 5).unwrap();
        let input = Tensor::zeros(Shape::new(1, 2, 8, 8));
        assert!(matches!(
            model.restore(&input).unwrap_err(),
            Error::ChannelMismatch { expected: 1, got: 2, .. }
        ));
    }

    #[test]
    fn outputs_are_finite_at_initialization_scale() {
        let model = StudentModel::<f32>::new(RestorerConfig::default(), 6).unwrap();
        let mut params_perturbed = StudentModel::<f32>::new(RestorerConfig::default(), 6).unwrap();
        // make the final conv non-zero so the residual path is exercised
        let mut rng = rng::stream(1, "perturb");
        let k = params_perturbed.config().kernel_size;
        let shape = Shape::new(1, params_perturbed.config().base_channels, k, k);
        let std = (2.0 / (16 * k * k) as f64).sqrt();
        params_perturbed.params_mut()[2 * model.config().depth]
            .set_value(Tensor::randn(shape, std, &mut rng));
        let input = Tensor::from_fn(Shape::new(1, 1, 16, 16), |i| (i % 7) as f32 / 7.0);
        let out = params_perturbed.restore(&input).unwrap();
        assert!(out.all_finite());
    }
}
