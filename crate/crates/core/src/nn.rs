//! Multilayer perceptrons with hand-written reverse mode.
//!
//! Parameters live in one flat buffer, layer by layer: the `d_in × d_out` weight block
//! (row-major, so a batch forward is `X·W`) followed by the `d_out` bias. Hidden layers
//! apply the activation; the output layer is affine.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm, DenseMatrix, Trans};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Layer inputs recorded during a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<DenseMatrix>,
    output: DenseMatrix,
}

impl ForwardCache {
    pub fn output(&self) -> &DenseMatrix {
        &self.output
    }

    pub fn into_output(self) -> DenseMatrix {
        self.output
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: DenseMatrix,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(dims, activation)?;
        let mut off = 0;
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out] {
                *p = rng.gen_range(-limit..limit);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "layer dims must have length >= 2 and be positive, got {dims:?}"
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            params: vec![0.0; param_count(dims)],
        })
    }

    pub fn from_params(dims: &[usize], activation: Activation, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dims, activation)?;
        if params.len() != net.params.len() {
            return Err(Error::shape("Mlp::from_params", net.params.len(), params.len()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offsets(&self, layer: usize) -> (usize, usize, usize, usize) {
        let mut off = 0;
        for w in self.dims.windows(2).take(layer) {
            off += w[0] * w[1] + w[1];
        }
        let (din, dout) = (self.dims[layer], self.dims[layer + 1]);
        (off, off + din * dout, din, dout)
    }

    /// Weight block of `layer` as a `d_in × d_out` matrix.
    pub fn weight(&self, layer: usize) -> DenseMatrix {
        let (w, b, din, dout) = self.layer_offsets(layer);
        DenseMatrix::from_vec(din, dout, self.params[w..b].to_vec()).expect("layout")
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let (_, b, _, dout) = self.layer_offsets(layer);
        &self.params[b..b + dout]
    }

    pub fn set_weight(&mut self, layer: usize, w: &DenseMatrix) -> Result<()> {
        let (wo, bo, din, dout) = self.layer_offsets(layer);
        if w.shape() != (din, dout) {
            return Err(Error::shape("Mlp::set_weight", format!("{din}x{dout}"), format!("{:?}", w.shape())));
        }
        self.params[wo..bo].copy_from_slice(w.as_slice());
        Ok(())
    }

    pub fn set_bias(&mut self, layer: usize, b: &[f64]) -> Result<()> {
        let (_, bo, _, dout) = self.layer_offsets(layer);
        if b.len() != dout {
            return Err(Error::shape("Mlp::set_bias", dout, b.len()));
        }
        self.params[bo..bo + dout].copy_from_slice(b);
        Ok(())
    }

    fn affine(&self, layer: usize, x: &DenseMatrix) -> Result<DenseMatrix> {
        let (wo, bo, din, dout) = self.layer_offsets(layer);
        let mut z = DenseMatrix::zeros(x.rows(), dout);
        let bias = &self.params[bo..bo + dout];
        for r in 0..x.rows() {
            z.row_mut(r).copy_from_slice(bias);
        }
        let w = DenseMatrix::from_vec(din, dout, self.params[wo..bo].to_vec())?;
        gemm(1.0, x, Trans::No, &w, Trans::No, 1.0, &mut z)?;
        Ok(z)
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape("Mlp::forward", self.input_dim(), x.cols()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x)?;
        let last = self.num_layers() - 1;
        let mut a = self.affine(0, x)?;
        for l in 1..=last {
            a.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
            a = self.affine(l, &a)?;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &DenseMatrix) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.num_layers());
        inputs.push(x.clone());
        let mut a = self.affine(0, x)?;
        for l in 1..self.num_layers() {
            a.as_mut_slice().iter_mut().for_each(|v| *v = self.activation.apply(*v));
            let next = self.affine(l, &a)?;
            inputs.push(a);
            a = next;
        }
        Ok(ForwardCache { inputs, output: a })
    }

    /// Reverse pass for the scalar `⟨upstream, output⟩`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &DenseMatrix) -> Result<Gradients> {
        if upstream.shape() != cache.output.shape() {
            return Err(Error::shape(
                "Mlp::backward",
                format!("{:?}", cache.output.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.clone();
        for l in (0..self.num_layers()).rev() {
            let (wo, bo, din, dout) = self.layer_offsets(l);
            let input = &cache.inputs[l];
            let mut gw = DenseMatrix::zeros(din, dout);
            gemm(1.0, input, Trans::Yes, &delta, Trans::No, 0.0, &mut gw)?;
            grads[wo..bo].copy_from_slice(gw.as_slice());
            let gb = &mut grads[bo..bo + dout];
            for r in delta.row_iter() {
                for (g, d) in gb.iter_mut().zip(r) {
                    *g += d;
                }
            }
            let w = DenseMatrix::from_vec(din, dout, self.params[wo..bo].to_vec())?;
            let mut prev = DenseMatrix::zeros(delta.rows(), din);
            gemm(1.0, &delta, Trans::No, &w, Trans::Yes, 0.0, &mut prev)?;
            if l > 0 {
                for (p, a) in prev.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    *p *= self.activation.grad_from_output(*a);
                }
            }
            delta = prev;
        }
        Ok(Gradients {
            params: grads,
            input: delta,
        })
    }

    /// Parameter and input gradients of `⟨upstream, forward(batch)⟩`.
    pub fn gradients(&self, batch: &DenseMatrix, upstream: &DenseMatrix) -> Result<Gradients> {
        let cache = self.forward_cached(batch)?;
        self.backward(&cache, upstream)
    }
}
