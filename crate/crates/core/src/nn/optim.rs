use serde::{Deserialize, Serialize};

use super::layer::Sequential;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one model, laid out parameter-by-parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// Applies one bias-corrected Adam update and zeroes the gradients.
    pub fn step(&mut self, model: &mut Sequential) -> Result<()> {
        if !model.grads_ready() {
            return Err(Error::State("optimizer step without populated gradients"));
        }
        let mut params = model.params_mut();
        if params.is_empty() {
            return Err(Error::State("optimizer step on a model without parameters"));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(&params).any(|(m, p)| m.shape() != p.value.shape())
        {
            return Err(Error::State("optimizer state does not match model parameters"));
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for (i, &g) in grad.iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                let m_hat = *mi / bc1;
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let v_hat = *vi / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        drop(params);
        model.zero_grad();
        Ok(())
    }
}

/// Optimizer choice for training loops.
///
/// `Sgd` is the plain step `θ ← θ − lr·∇L`. It exists so that averaging of
/// client models can be checked exactly against a pooled gradient step;
/// production training uses Adam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(AdamConfig {
                lr,
                ..AdamConfig::default()
            })),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    pub fn step(&mut self, model: &mut Sequential) -> Result<()> {
        match self {
            Optimizer::Adam(state) => state.step(model),
            Optimizer::Sgd { lr } => {
                if !model.grads_ready() {
                    return Err(Error::State("optimizer step without populated gradients"));
                }
                for p in model.params_mut() {
                    let grad = p.grad.data().to_vec();
                    for (v, g) in p.value.data_mut().iter_mut().zip(grad) {
                        *v -= *lr * g;
                    }
                }
                model.zero_grad();
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layer::{Layer, ParamTensor};
    use approx::assert_abs_diff_eq;

    fn single_param(values: Vec<f64>) -> Sequential {
        let n = values.len();
        Sequential::new(vec![Layer::Dense {
            weight: ParamTensor::new("w", Tensor::new(vec![1, n], values).unwrap()),
            bias: ParamTensor::new("b", Tensor::zeros(&[n])),
            input: None,
        }])
    }

    fn set_grads(model: &mut Sequential, w: &[f64]) {
        // populate gradients through a real backward pass, then overwrite
        model.forward(&Tensor::zeros(&[1, 1])).unwrap();
        model.backward(&Tensor::zeros(&[1, w.len()])).unwrap();
        let mut params = model.params_mut();
        params[0].grad.data_mut().copy_from_slice(w);
    }

    #[test]
    fn first_step_is_signed_lr() {
        let mut model = single_param(vec![1.0, 1.0, 1.0]);
        let g = [0.5, -2.0, 1e-3];
        set_grads(&mut model, &g);
        let mut adam = AdamState::new(AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        });
        adam.step(&mut model).unwrap();
        let w = model.params()[0].value.data().to_vec();
        for (wi, gi) in w.iter().zip(g) {
            // m̂ = g, v̂ = g², update = lr·g/(|g|+ε)
            let expected = 1.0 - 0.01 * gi / (gi.abs() + 1e-8);
            assert_abs_diff_eq!(*wi, expected, epsilon = 1e-15);
        }
        assert_eq!(adam.t, 1);
        assert!(model.flat_grads().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut model = single_param(vec![0.3, -0.7]);
        let before = model.flat_params();
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..5 {
            set_grads(&mut model, &[0.0, 0.0]);
            adam.step(&mut model).unwrap();
        }
        assert_eq!(model.flat_params(), before);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn two_step_trace() {
        // Hand trace, lr=0.1, β1=0.9, β2=0.999, ε=1e-8, θ0=1:
        // step 1, g=1:  m=0.1, v=0.001, m̂=1, v̂=1, θ1 = 1 - 0.1·1/(1+1e-8)
        // step 2, g=-2: m=0.09-0.2=-0.11, v=0.000999+0.004=0.004999
        //   m̂=-0.11/0.19, v̂=0.004999/0.001999
        let mut model = single_param(vec![1.0]);
        let mut adam = AdamState::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        set_grads(&mut model, &[1.0]);
        adam.step(&mut model).unwrap();
        let theta1 = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert_abs_diff_eq!(model.params()[0].value.data()[0], theta1, epsilon = 1e-15);

        set_grads(&mut model, &[-2.0]);
        adam.step(&mut model).unwrap();
        let m_hat = -0.11 / (1.0 - 0.81);
        let v_hat = 0.004999 / (1.0 - 0.998001);
        let theta2 = theta1 - 0.1 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        assert_abs_diff_eq!(model.params()[0].value.data()[0], theta2, epsilon = 1e-12);
        assert_abs_diff_eq!(adam.m[0].data()[0], -0.11, epsilon = 1e-15);
        assert_abs_diff_eq!(adam.v[0].data()[0], 0.004999, epsilon = 1e-15);
    }

    #[test]
    fn step_without_gradients_is_state_error() {
        let mut model = single_param(vec![1.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut model), Err(Error::State(_))));
        let mut sgd = Optimizer::new(OptimizerKind::Sgd, 0.1);
        assert!(matches!(sgd.step(&mut model), Err(Error::State(_))));
    }

    #[test]
    fn sgd_is_plain_gradient_step() {
        let mut model = single_param(vec![1.0, 2.0]);
        set_grads(&mut model, &[0.5, -1.0]);
        Optimizer::new(OptimizerKind::Sgd, 0.1).step(&mut model).unwrap();
        assert_eq!(model.params()[0].value.data(), &[1.0 - 0.05, 2.0 + 0.1]);
    }
}
