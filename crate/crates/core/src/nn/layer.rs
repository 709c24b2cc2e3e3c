use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::ops;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A named trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Uniform Glorot initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense {
        weight: ParamTensor,
        bias: ParamTensor,
        input: Option<Tensor>,
    },
    Conv1d {
        filters: ParamTensor,
        bias: ParamTensor,
        stride: usize,
        input: Option<Tensor>,
    },
    MaxPool1d {
        window: usize,
        routing: Option<(Vec<usize>, Vec<usize>)>,
    },
    Relu {
        input: Option<Tensor>,
    },
    /// Reshapes `[batch, ...]` to `[batch, tail...]`.
    Reshape {
        tail: Vec<usize>,
        input_shape: Option<Vec<usize>>,
    },
}

impl Layer {
    pub fn dense(name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Layer::Dense {
            weight: ParamTensor::new(
                format!("{name}.weight"),
                glorot_uniform(&[inputs, outputs], inputs, outputs, rng),
            ),
            bias: ParamTensor::new(format!("{name}.bias"), Tensor::zeros(&[outputs])),
            input: None,
        }
    }

    pub fn conv1d(name: &str, in_ch: usize, out_ch: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        Layer::Conv1d {
            filters: ParamTensor::new(
                format!("{name}.filters"),
                glorot_uniform(&[out_ch, in_ch, kernel], in_ch * kernel, out_ch * kernel, rng),
            ),
            bias: ParamTensor::new(format!("{name}.bias"), Tensor::zeros(&[out_ch])),
            stride: 1,
            input: None,
        }
    }

    pub fn maxpool1d(window: usize) -> Self {
        Layer::MaxPool1d { window, routing: None }
    }

    pub fn relu() -> Self {
        Layer::Relu { input: None }
    }

    pub fn reshape(tail: Vec<usize>) -> Self {
        Layer::Reshape {
            tail,
            input_shape: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense { weight, bias, input } => {
                let out = ops::dense_forward(x, &weight.value, &bias.value)?;
                *input = Some(x.clone());
                Ok(out)
            }
            Layer::Conv1d {
                filters,
                bias,
                stride,
                input,
            } => {
                let out = ops::conv1d_forward(x, &filters.value, &bias.value, *stride)?;
                *input = Some(x.clone());
                Ok(out)
            }
            Layer::MaxPool1d { window, routing } => {
                let (out, argmax) = ops::maxpool1d_forward(x, *window)?;
                *routing = Some((x.shape().to_vec(), argmax));
                Ok(out)
            }
            Layer::Relu { input } => {
                let out = ops::relu(x);
                *input = Some(x.clone());
                Ok(out)
            }
            Layer::Reshape { tail, input_shape } => {
                let mut shape = vec![x.rows()];
                shape.extend_from_slice(tail);
                let out = x.clone().reshape(shape)?;
                *input_shape = Some(x.shape().to_vec());
                Ok(out)
            }
        }
    }

    /// Forward pass that caches nothing.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense { weight, bias, .. } => ops::dense_forward(x, &weight.value, &bias.value),
            Layer::Conv1d {
                filters, bias, stride, ..
            } => ops::conv1d_forward(x, &filters.value, &bias.value, *stride),
            Layer::MaxPool1d { window, .. } => Ok(ops::maxpool1d_forward(x, *window)?.0),
            Layer::Relu { .. } => Ok(ops::relu(x)),
            Layer::Reshape { tail, .. } => {
                let mut shape = vec![x.rows()];
                shape.extend_from_slice(tail);
                x.clone().reshape(shape)
            }
        }
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to this layer's input.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        const NO_FORWARD: &str = "backward called before forward";
        match self {
            Layer::Dense { weight, bias, input } => {
                let x = input.as_ref().ok_or(Error::State(NO_FORWARD))?;
                let (gx, gw, gb) = ops::dense_backward(x, &weight.value, grad_out)?;
                accumulate(&mut weight.grad, &gw);
                accumulate(&mut bias.grad, &gb);
                Ok(gx)
            }
            Layer::Conv1d {
                filters,
                bias,
                stride,
                input,
            } => {
                let x = input.as_ref().ok_or(Error::State(NO_FORWARD))?;
                let (gx, gf, gb) = ops::conv1d_backward(x, &filters.value, grad_out, *stride)?;
                accumulate(&mut filters.grad, &gf);
                accumulate(&mut bias.grad, &gb);
                Ok(gx)
            }
            Layer::MaxPool1d { routing, .. } => {
                let (shape, argmax) = routing.as_ref().ok_or(Error::State(NO_FORWARD))?;
                ops::maxpool1d_backward(shape, argmax, grad_out)
            }
            Layer::Relu { input } => {
                let x = input.as_ref().ok_or(Error::State(NO_FORWARD))?;
                ops::relu_backward(x, grad_out)
            }
            Layer::Reshape { input_shape, .. } => {
                let shape = input_shape.as_ref().ok_or(Error::State(NO_FORWARD))?;
                grad_out.clone().reshape(shape.clone())
            }
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![weight, bias],
            Layer::Conv1d { filters, bias, .. } => vec![filters, bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![weight, bias],
            Layer::Conv1d { filters, bias, .. } => vec![filters, bias],
            _ => Vec::new(),
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Dense { input, .. } | Layer::Conv1d { input, .. } | Layer::Relu { input } => *input = None,
            Layer::MaxPool1d { routing, .. } => *routing = None,
            Layer::Reshape { input_shape, .. } => *input_shape = None,
        }
    }
}

fn accumulate(acc: &mut Tensor, g: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

/// An ordered stack of layers with a single flat parameter view.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
    grads_ready: bool,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self {
            layers,
            grads_ready: false,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.forward_prefix(x, self.layers.len())
    }

    /// Runs only the first `upto` layers, caching activations for backward.
    pub fn forward_prefix(&mut self, x: &Tensor, upto: usize) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &mut self.layers[..upto] {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Inference through the first `upto` layers without touching caches.
    pub fn infer_prefix(&self, x: &Tensor, upto: usize) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers[..upto] {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.infer_prefix(x, self.layers.len())
    }

    /// Back-propagates `grad_out` through every layer, accumulating
    /// parameter gradients. Returns the gradient with respect to the input.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        self.grads_ready = true;
        Ok(g)
    }

    pub fn grads_ready(&self) -> bool {
        self.grads_ready
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
        self.grads_ready = false;
    }

    /// Drops cached activations (they hold a full batch of inputs).
    pub fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Concatenation of every parameter value in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.params() {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.params() {
            out.extend_from_slice(p.grad.data());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let count = self.param_count();
        if flat.len() != count {
            return Err(Error::dim("flat parameter vector", &[flat.len()], &[count]));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Sequential::new(vec![Layer::dense("d", 2, 2, &mut rng)]);
        let err = net.backward(&Tensor::zeros(&[1, 2])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = glorot_uniform(&[10, 20], 10, 20, &mut rng);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= limit));
        assert!(t.data().iter().any(|v| v.abs() > limit / 2.0));
    }

    #[test]
    fn flat_view_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Sequential::new(vec![
            Layer::dense("a", 3, 4, &mut rng),
            Layer::relu(),
            Layer::dense("b", 4, 2, &mut rng),
        ]);
        assert_eq!(net.param_count(), 3 * 4 + 4 + 4 * 2 + 2);
        let flat: Vec<f64> = (0..net.param_count()).map(|i| i as f64).collect();
        net.load_flat(&flat).unwrap();
        assert_eq!(net.flat_params(), flat);
        assert!(net.load_flat(&flat[1..]).is_err());
    }

    #[test]
    fn masked_relu_blocks_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Sequential::new(vec![Layer::dense("a", 2, 2, &mut rng), Layer::relu()]);
        // force every pre-activation negative
        net.load_flat(&[0.0, 0.0, 0.0, 0.0, -1.0, -1.0]).unwrap();
        net.forward(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap()).unwrap();
        let gx = net.backward(&Tensor::full(&[1, 2], 1.0)).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(net.flat_grads().iter().all(|&v| v == 0.0));
    }
}
