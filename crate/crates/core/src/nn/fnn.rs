use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::init::xavier_uniform;
use super::params::{Bound, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

/// One affine layer `act(x · W + b)` with `W: [inputs, outputs]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// Feed-forward network: a chain of [`Dense`] layers.
#[derive(Clone, Debug)]
pub struct Fnn {
    layers: Vec<Dense>,
}

impl Fnn {
    /// Allocates `name.{i}.weight` / `name.{i}.bias` for each consecutive pair in `dims`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        activations: &[Activation],
        seed: u64,
    ) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(invalid(
                "fnn",
                format!(
                    "{name}: {} dims need {} activations, got {}",
                    dims.len(),
                    dims.len().saturating_sub(1),
                    activations.len()
                ),
            ));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (i, (w, act)) in dims.windows(2).zip(activations).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wname = format!("{name}.{i}.weight");
            let mut weight = Tensor::zeros(&[fan_in, fan_out]);
            xavier_uniform(weight.data_mut(), fan_in, fan_out, seed, &wname);
            let weight = store.insert(&wname, weight)?;
            let bias = store.insert(&format!("{name}.{i}.bias"), Tensor::zeros(&[fan_out]))?;
            layers.push(Dense {
                weight,
                bias,
                inputs: fan_in,
                outputs: fan_out,
                activation: *act,
            });
        }
        Ok(Fnn { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    /// Applies the network to the rows of `x: [rows, input_dim]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.input_dim() {
            return Err(Error::Shape {
                op: "fnn_forward",
                lhs: s.to_vec(),
                rhs: alloc::vec![self.input_dim()],
            });
        }
        let mut h = x;
        for layer in &self.layers {
            let z = tape.linear(h, bound.var(layer.weight), bound.var(layer.bias))?;
            h = match layer.activation {
                Activation::Tanh => tape.tanh(z),
                Activation::Relu => tape.relu(z),
                Activation::Linear => z,
            };
        }
        Ok(h)
    }
}
