//! Dense feed-forward networks with ReLU hidden layers and identity output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One affine layer, `y = x · weight + bias` with `weight: in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Weights of a ReLU network with identity output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    layers: Vec<Dense>,
}

impl MlpParams {
    /// He-uniform initialised weights and zero biases, drawn from `seed`.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weight = Tensor::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound));
                Dense { weight, bias: Tensor::zeros(1, fan_out) }
            })
            .collect();
        Ok(Self { layer_sizes: layer_sizes.to_vec(), layers })
    }

    /// Shifts the first-layer biases so that the network evaluated at
    /// `x + center` equals the unshifted network at `x`.
    pub fn center_inputs(&mut self, center: &[f64]) -> Result<()> {
        let first = &mut self.layers[0];
        let (fan_in, fan_out) = first.weight.shape();
        if center.len() != fan_in {
            return Err(Error::Shape(format!("center has {} entries for {fan_in} inputs", center.len())));
        }
        for j in 0..fan_out {
            let shift: f64 = (0..fan_in).map(|i| first.weight.get(i, j) * center[i]).sum();
            first.bias.set(0, j, first.bias.get(0, j) - shift);
        }
        Ok(())
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense { weight: Tensor::zeros(w[0], w[1]), bias: Tensor::zeros(1, w[1]) })
            .collect();
        Ok(Self { layer_sizes: layer_sizes.to_vec(), layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network without layers".into()));
        }
        let mut sizes = vec![layers[0].weight.rows()];
        for l in &layers {
            if l.weight.rows() != *sizes.last().unwrap() || l.bias.shape() != (1, l.weight.cols()) {
                return Err(Error::Shape("layer shapes do not chain".into()));
            }
            sizes.push(l.weight.cols());
        }
        let p = Self { layer_sizes: sizes, layers };
        p.check_finite()?;
        Ok(p)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Parameter tensors in layer order: weight, bias, weight, bias, ...
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.tensors().iter().all(|t| t.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("network weights".into()))
        }
    }

    /// Forward pass on a batch of inputs, one row per sample.
    pub fn forward_batch(&self, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = x.matmul(&layer.weight)?;
            let cols = y.cols();
            let bias = layer.bias.data();
            for (k, v) in y.data_mut().iter_mut().enumerate() {
                *v += bias[k % cols];
                if i < last && *v < 0.0 {
                    *v = 0.0;
                }
            }
            x = y;
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Tensor::row(input.to_vec()))?.into_data())
    }

    /// Registers the weights on `tape`; gradients flow to them when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        let leaf = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        BoundMlp {
            layers: self.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect(),
            input_dim: self.input_dim(),
        }
    }

    /// Flattened parameter vector in [`MlpParams::tensors`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!("{} values for {} parameters", flat.len(), self.param_count())));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

/// Network weights living on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
    input_dim: usize,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, input: Var<'t>) -> Result<Var<'t>> {
        if input.shape().1 != self.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim,
                input.shape().1
            )));
        }
        let last = self.layers.len() - 1;
        let mut x = input;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            x = x.matmul(w)?.add(b)?;
            if i < last {
                x = x.relu();
            }
        }
        Ok(x)
    }

    /// Gradients in [`MlpParams::tensors`] order.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.layers.iter().flat_map(|(w, b)| [grads.wrt(*w), grads.wrt(*b)]).collect()
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpParams::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_adds_bias() {
        let weight = Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bias = Tensor::row(vec![0.5, -1.0]);
        let net = MlpParams::from_layers(vec![Dense { weight, bias }]).unwrap();
        assert_eq!(net.forward(&[2.0, 3.0]).unwrap(), vec![2.5, 2.0]);
    }

    #[test]
    fn hand_computed_two_by_two() {
        // h = relu(x W1 + b1) = relu([1, -1]·[[1, 2], [3, -1]] + [0.5, 0]) = relu([-1.5, 3]) = [0, 3]
        // y = h W2 + b2 = [0, 3]·[[2], [-1]] + [0.25] = -2.75
        let l1 = Dense {
            weight: Tensor::new(2, 2, vec![1.0, 2.0, 3.0, -1.0]).unwrap(),
            bias: Tensor::row(vec![0.5, 0.0]),
        };
        let l2 = Dense { weight: Tensor::column(vec![2.0, -1.0]), bias: Tensor::scalar(0.25) };
        let net = MlpParams::from_layers(vec![l1, l2]).unwrap();
        assert_eq!(net.forward(&[1.0, -1.0]).unwrap(), vec![-2.75]);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let net = MlpParams::init(&[2, 16, 16, 3], 11).unwrap();
        let x = Tensor::from_fn(7, 2, |r, c| (r as f64 - 3.0) * 0.3 + c as f64);
        let tape = Tape::new();
        let bound = net.bind(&tape, true);
        let y = bound.forward(tape.constant(x.clone())).unwrap();
        assert_eq!(*y.value(), net.forward_batch(&x).unwrap());
    }

    #[test]
    fn he_init_is_seeded_and_bounded() {
        let a = MlpParams::init(&[4, 8, 1], 3).unwrap();
        let b = MlpParams::init(&[4, 8, 1], 3).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 4.0).sqrt();
        assert!(a.layers()[0].weight.data().iter().all(|w| w.abs() <= bound));
        assert_ne!(a, MlpParams::init(&[4, 8, 1], 4).unwrap());
    }

    #[test]
    fn input_shape_is_checked() {
        let net = MlpParams::zeros(&[3, 1]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut net = MlpParams::init(&[2, 3, 1], 5).unwrap();
        let flat = net.to_flat();
        assert_eq!(flat.len(), net.param_count());
        let doubled: Vec<f64> = flat.iter().map(|x| 2.0 * x).collect();
        net.set_flat(&doubled).unwrap();
        assert_eq!(net.to_flat(), doubled);
    }
}
