use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A named model weight. Frozen parameters receive zero gradient and are
/// never updated by the optimizer.
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    name: String,
    value: Tensor<T>,
    frozen: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn trainable(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter { name: name.into(), value, frozen: false }
    }

    pub fn frozen(name: impl Into<String>, value: Tensor<T>) -> Self {
        Parameter { name: name.into(), value, frozen: true }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn set_value(&mut self, value: Tensor<T>) {
        debug_assert_eq!(self.value.shape(), value.shape());
        self.value = value;
    }
}

/// Adam state: per-parameter first and second moments plus a shared step
/// counter that increments exactly once per `step` call.
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
    t: u64,
    first: HashMap<String, Tensor<T>>,
    second: HashMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            t: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update over `params` (iterated in slice order so
    /// repeated runs are bit-identical). Frozen parameters are skipped; a
    /// missing gradient for a trainable parameter is an error.
    pub fn step(
        &mut self,
        params: &mut [Parameter<T>],
        grads: &HashMap<String, Tensor<T>>,
    ) -> Result<()> {
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let corr2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.epsilon);
        let decay = T::from_f64(self.learning_rate * self.weight_decay);
        for param in params.iter_mut() {
            if param.is_frozen() {
                continue;
            }
            let grad = grads
                .get(param.name())
                .ok_or_else(|| Error::MissingGradient { name: param.name().to_string() })?;
            let m = self
                .first
                .entry(param.name().to_string())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            *m = m.zip_map(grad, |m, g| b1 * m + (one - b1) * g);
            let v = self
                .second
                .entry(param.name().to_string())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            *v = v.zip_map(grad, |v, g| b2 * v + (one - b2) * g * g);
            let mut next = param.value().clone();
            if self.weight_decay != 0.0 {
                next = next.map(|p| p - decay * p);
            }
            let m = &self.first[param.name()];
            let v = &self.second[param.name()];
            let data = next.data_mut();
            for ((p, &m), &v) in data.iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = m / corr1;
                let v_hat = v / corr2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
            param.set_value(next);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Parameter::trainable("w", Tensor::<f64>::full(Shape::scalar(), 1.5))];
        let mut adam = Adam::new(1e-4);
        let grads = HashMap::from([("w".to_string(), Tensor::zeros(Shape::scalar()))]);
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].value().data()[0], 1.5);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // lr * g / (sqrt(g^2) + eps) ~= lr for any g after bias correction
        let mut params = vec![Parameter::trainable("w", Tensor::<f64>::scalar(0.0))];
        let mut adam = Adam::new(1e-4);
        let grads = HashMap::from([("w".to_string(), Tensor::scalar(2.0))]);
        adam.step(&mut params, &grads).unwrap();
        let delta = -params[0].value().data()[0];
        assert!((delta - 1e-4).abs() < 1e-9, "delta {delta}");
    }

    #[test]
    fn frozen_parameters_are_skipped_even_without_gradients() {
        let mut params = vec![
            Parameter::frozen("a", Tensor::<f64>::scalar(3.0)),
            Parameter::trainable("b", Tensor::<f64>::scalar(1.0)),
        ];
        let mut adam = Adam::new(0.1);
        let grads = HashMap::from([("b".to_string(), Tensor::scalar(1.0))]);
        adam.step(&mut params, &grads).unwrap();
        assert_eq!(params[0].value().data()[0], 3.0);
        assert_ne!(params[1].value().data()[0], 1.0);
    }

    #[test]
    fn missing_gradient_for_trainable_is_an_error() {
        let mut params = vec![Parameter::trainable("w", Tensor::<f64>::scalar(0.0))];
        let mut adam = Adam::new(1e-4);
        let err = adam.step(&mut params, &HashMap::new()).unwrap_err();
        assert!(matches!(err, Error::MissingGradient { .. }));
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut params =
                vec![Parameter::trainable("w", Tensor::<f64>::full(Shape::new(1, 1, 2, 2), 0.3))];
            let mut adam = Adam::new(1e-3);
            for step in 0..20 {
                let g = Tensor::full(Shape::new(1, 1, 2, 2), 0.1 * (step as f64 + 1.0));
                let grads = HashMap::from([("w".to_string(), g)]);
                adam.step(&mut params, &grads).unwrap();
            }
            params[0].value().data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
