use std::ops::{Deref, DerefMut, Range};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// ELU with unit scale. Continuously differentiable at zero.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub fn elu_derivative(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Shape of a fully connected network: ELU on hidden layers, linear output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.iter().any(|&h| h == 0)
        {
            return Err(Error::Config(format!(
                "every layer width must be at least 1, got {:?}",
                self
            )));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.output_dim);
        w
    }

    pub fn layout(&self) -> ParamLayout {
        let widths = self.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut offset = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weight = offset..offset + fan_in * fan_out;
            offset = weight.end;
            let bias = offset..offset + fan_out;
            offset = bias.end;
            layers.push(LayerSlice {
                fan_in,
                fan_out,
                weight,
                bias,
            });
        }
        ParamLayout { layers, len: offset }
    }
}

/// Where one layer's weights (row-major `fan_out x fan_in`) and biases live
/// inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSlice {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Range<usize>,
    pub bias: Range<usize>,
}

/// Contiguous, gap-free mapping of layers onto a parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub layers: Vec<LayerSlice>,
    pub len: usize,
}

/// Flat storage for every weight and bias of one network.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// `g *= elu'(z)`, reading `elu'(z) = elu(z) + 1` off the stored activation
/// for negative `z`.
fn scale_by_elu_slope(g: &mut Array2<f64>, z: &Array2<f64>, h: &Array2<f64>) {
    ndarray::Zip::from(g).and(z).and(h).for_each(|gv, &zv, &hv| {
        if zv <= 0.0 {
            *gv *= hv + 1.0;
        }
    });
}

/// Activations retained by a batched forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
    preacts: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.preacts.last().expect("network has at least one layer")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layout: ParamLayout,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        Ok(Self { spec, layout })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    /// Uniform fan-in initialisation; the output layer is scaled by
    /// `output_scale` so fresh heads start close to zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, output_scale: f64) -> ParamVector {
        let mut p = ParamVector::zeros(self.layout.len);
        let last = self.layout.layers.len() - 1;
        for (i, layer) in self.layout.layers.iter().enumerate() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            let scale = if i == last { output_scale } else { 1.0 };
            for w in &mut p[layer.weight.clone()] {
                *w = rng.random_range(-bound..bound) * scale;
            }
            for b in &mut p[layer.bias.clone()] {
                *b = rng.random_range(-bound..bound) * scale;
            }
        }
        p
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        check_dim("mlp parameters", self.layout.len, params.len())
    }

    fn weight<'a>(&self, params: &'a [f64], layer: &LayerSlice) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((layer.fan_out, layer.fan_in), &params[layer.weight.clone()])
            .expect("layout matches slice length")
    }

    fn bias<'a>(&self, params: &'a [f64], layer: &LayerSlice) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[layer.bias.clone()])
    }

    /// Single-sample forward pass.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_dim("mlp input", self.spec.input_dim, x.len())?;
        let input = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let out = self.predict_batch(params, input)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    /// Single-sample reverse pass: gradients of `upstream · f(x)` with respect
    /// to the parameters and the input.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        upstream: &[f64],
    ) -> Result<(ParamVector, Vec<f64>)> {
        check_dim("mlp input", self.spec.input_dim, x.len())?;
        check_dim("mlp upstream gradient", self.spec.output_dim, upstream.len())?;
        let input = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let (_, cache) = self.forward_batch(params, input)?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row vector");
        let (grads, dx) = self.backward_batch(params, &cache, up)?;
        Ok((grads, dx.into_raw_vec_and_offset().0))
    }

    /// Batched forward pass without retaining activations.
    pub fn predict_batch(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_params(params)?;
        check_dim("mlp batch input", self.spec.input_dim, x.ncols())?;
        let last = self.layout.layers.len() - 1;
        let mut h = x.to_owned();
        for (i, layer) in self.layout.layers.iter().enumerate() {
            let mut z = h.dot(&self.weight(params, layer).t());
            z += &self.bias(params, layer);
            if i < last {
                z.mapv_inplace(elu);
            }
            h = z;
        }
        Ok(h)
    }

    /// Batched forward pass; rows are samples.
    pub fn forward_batch(
        &self,
        params: &[f64],
        x: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_params(params)?;
        check_dim("mlp batch input", self.spec.input_dim, x.ncols())?;
        let n_layers = self.layout.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut preacts = Vec::with_capacity(n_layers);
        let mut h = x.to_owned();
        for (i, layer) in self.layout.layers.iter().enumerate() {
            let mut z = h.dot(&self.weight(params, layer).t());
            z += &self.bias(params, layer);
            let next = if i + 1 < n_layers { z.mapv(elu) } else { z.clone() };
            inputs.push(h);
            preacts.push(z);
            h = next;
        }
        Ok((h, ForwardCache { inputs, preacts }))
    }

    /// Batched reverse pass. Parameter gradients are summed over rows; the
    /// caller folds any batch averaging into `upstream`.
    pub fn backward_batch(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<(ParamVector, Array2<f64>)> {
        self.check_params(params)?;
        check_dim("mlp upstream gradient", self.spec.output_dim, upstream.ncols())?;
        let rows = cache.inputs[0].nrows();
        check_dim("mlp upstream rows", rows, upstream.nrows())?;

        let mut grads = ParamVector::zeros(self.layout.len);
        let n_layers = self.layout.layers.len();
        let mut g = upstream.to_owned();
        for i in (0..n_layers).rev() {
            let layer = &self.layout.layers[i];
            if i + 1 < n_layers {
                scale_by_elu_slope(&mut g, &cache.preacts[i], &cache.inputs[i + 1]);
            }
            let dw = g.t().dot(&cache.inputs[i]);
            grads[layer.weight.clone()]
                .copy_from_slice(dw.as_standard_layout().as_slice().expect("contiguous"));
            let db: Array1<f64> = g.sum_axis(Axis(0));
            grads[layer.bias.clone()].copy_from_slice(db.as_slice().expect("contiguous"));
            g = g.dot(&self.weight(params, layer));
        }
        Ok((grads, g))
    }
    /// Per-row gradient of `upstream · f(x)` with respect to the input only.
    pub fn input_gradient_batch(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        self.check_params(params)?;
        check_dim("mlp upstream gradient", self.spec.output_dim, upstream.ncols())?;
        let n_layers = self.layout.layers.len();
        let mut g = upstream.to_owned();
        for i in (0..n_layers).rev() {
            if i + 1 < n_layers {
                scale_by_elu_slope(&mut g, &cache.preacts[i], &cache.inputs[i + 1]);
            }
            g = g.dot(&self.weight(params, &self.layout.layers[i]));
        }
        Ok(g)
    }
}
