use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use super::params::{ParamVector, Segment};
use crate::error::{EsilError, Result};

/// Fully connected network with ReLU on every hidden layer and a linear output.
///
/// All weights and biases live in one flat buffer, layer by layer: the weight
/// matrix of layer `l` is stored row-major with shape `(sizes[l], sizes[l+1])`
/// so that `y = x W + b`, followed by its bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<LayerOffsets>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerOffsets {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Activations recorded by [`Mlp::forward_batch`], needed for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

fn compute_offsets(sizes: &[usize]) -> Vec<LayerOffsets> {
    let mut cursor = 0;
    sizes
        .windows(2)
        .map(|w| {
            let weight = cursor;
            let bias = weight + w[0] * w[1];
            cursor = bias + w[1];
            LayerOffsets {
                weight,
                bias,
                fan_in: w[0],
                fan_out: w[1],
            }
        })
        .collect()
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(EsilError::InvalidConfig(format!(
            "an MLP needs at least an input and an output layer, got sizes {sizes:?}"
        )));
    }
    if sizes.contains(&0) {
        return Err(EsilError::InvalidConfig(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Seeded initialization: He-uniform weights on hidden layers, a
    /// fan-in-scaled uniform output layer multiplied by `output_gain`, zero
    /// biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let last = net.offsets.len() - 1;
        for (l, off) in net.offsets.clone().into_iter().enumerate() {
            let bound = if l == last {
                output_gain / (off.fan_in as f64).sqrt()
            } else {
                (6.0 / off.fan_in as f64).sqrt()
            };
            for w in &mut net.params[off.weight..off.bias] {
                *w = rng.random_range(-1.0..=1.0) * bound;
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        validate_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
            offsets: compute_offsets(sizes),
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        validate_sizes(sizes)?;
        let expected = param_count(sizes);
        if params.len() != expected {
            return Err(EsilError::dim("mlp parameters", expected, params.len()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
            offsets: compute_offsets(sizes),
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(EsilError::dim("mlp parameters", self.params.len(), params.len()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Segment names are `{prefix}.w{l}` / `{prefix}.b{l}`.
    pub fn layout(&self, prefix: &str) -> Vec<Segment> {
        self.offsets
            .iter()
            .enumerate()
            .flat_map(|(l, off)| {
                [
                    Segment {
                        name: format!("{prefix}.w{l}"),
                        offset: off.weight,
                        len: off.fan_in * off.fan_out,
                    },
                    Segment {
                        name: format!("{prefix}.b{l}"),
                        offset: off.bias,
                        len: off.fan_out,
                    },
                ]
            })
            .collect()
    }

    pub fn to_param_vector(&self, prefix: &str) -> ParamVector {
        ParamVector::new(self.params.clone(), self.layout(prefix))
            .expect("mlp layout tiles its own parameters")
    }

    fn weight(&self, off: &LayerOffsets) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((off.fan_in, off.fan_out), &self.params[off.weight..off.bias])
            .expect("weight block shape")
    }

    fn bias(&self, off: &LayerOffsets) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[off.bias..off.bias + off.fan_out])
    }

    /// Single-input forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let cache = self.forward_batch(x)?;
        Ok(cache.output().row(0).to_vec())
    }

    /// Forward pass over a batch (one input per row).
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if inputs.ncols() != self.input_dim() {
            return Err(EsilError::dim("mlp input", self.input_dim(), inputs.ncols()));
        }
        let last = self.offsets.len() - 1;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(inputs.to_owned());
        for (l, off) in self.offsets.iter().enumerate() {
            let mut z = activations[l].dot(&self.weight(off));
            z += &self.bias(off);
            if l != last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Parameter gradient of `sum_rows <output_grad_row, output_row>` for the
    /// batch recorded in `cache`. Callers fold any averaging into `output_grad`.
    pub fn backward_batch(&self, cache: &ForwardCache, output_grad: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_batch_into(cache, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Same as [`Mlp::backward_batch`] but accumulates into `grads`
    /// (`grads += dparams`).
    pub fn backward_batch_into(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<'_, f64>,
        grads: &mut [f64],
    ) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(EsilError::dim("mlp gradient buffer", self.params.len(), grads.len()));
        }
        if output_grad.ncols() != self.output_dim() {
            return Err(EsilError::dim("mlp output gradient", self.output_dim(), output_grad.ncols()));
        }
        if output_grad.nrows() != cache.batch_size() {
            return Err(EsilError::dim("mlp output gradient rows", cache.batch_size(), output_grad.nrows()));
        }
        let mut delta = output_grad.to_owned();
        for (l, off) in self.offsets.iter().enumerate().rev() {
            let prev = &cache.activations[l];
            {
                let mut dw = ArrayViewMut2::from_shape(
                    (off.fan_in, off.fan_out),
                    &mut grads[off.weight..off.bias],
                )
                .expect("weight gradient shape");
                general_mat_mul(1.0, &prev.t(), &delta, 1.0, &mut dw);
            }
            for (g, d) in grads[off.bias..off.bias + off.fan_out]
                .iter_mut()
                .zip(delta.sum_axis(Axis(0)))
            {
                *g += d;
            }
            if l > 0 {
                let mut next = delta.dot(&self.weight(off).t());
                next.zip_mut_with(prev, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = next;
            }
        }
        Ok(())
    }

    /// Single-input backward pass: gradient of `<output_grad, f(input)>` with
    /// respect to every parameter.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<ParamVector> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let cache = self.forward_batch(x)?;
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row vector");
        let grads = self.backward_batch(&cache, g)?;
        Ok(ParamVector::new(grads, self.layout("mlp")).expect("mlp layout"))
    }
}
