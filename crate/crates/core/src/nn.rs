//! Affine layers and the two-layer perceptron used by the equalization modules.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::weights::{LayerNames, WeightSet};

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

pub fn leaky_relu(v: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        LEAKY_RELU_SLOPE * v
    }
}

/// `y = W x + b` with `W` of shape out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn load(weights: &WeightSet, names: &LayerNames, inputs: Option<usize>) -> Result<Self> {
        let weight = weights.matrix(&names.weight, None, inputs)?;
        let bias = weights.vector(&names.bias, weight.nrows())?;
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }

    /// Applies the layer to every row of `x` (rows are samples).
    pub fn apply_rows(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.inputs() {
            return Err(Error::ShapeMismatch(format!(
                "layer expects {} inputs, got {}",
                self.inputs(),
                x.ncols()
            )));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }
}

/// Linear → Leaky ReLU → Linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    /// Loads `<prefix>.w1/b1/w2/b2`.
    pub fn load(weights: &WeightSet, prefix: &str, inputs: usize) -> Result<Self> {
        let hidden = Linear::load(weights, &LayerNames::mlp(prefix, 1), Some(inputs))?;
        let output = Linear::load(weights, &LayerNames::mlp(prefix, 2), Some(hidden.outputs()))?;
        Ok(Self { hidden, output })
    }

    pub fn inputs(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn outputs(&self) -> usize {
        self.output.outputs()
    }

    pub fn apply_rows(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let h = self.hidden.apply_rows(x)?.mapv(leaky_relu);
        self.output.apply_rows(&h)
    }
}
