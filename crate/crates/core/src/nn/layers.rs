use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};
use crate::rng::Rng;

fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

fn he_normal(rng: &mut Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    (0..n).map(|_| d.sample(rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Valid,
    /// Zero padding so the output has `ceil(len / stride)` positions.
    Same,
}

/// 1D convolution (cross-correlation) over `[in_channels, length]` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[out_channels, in_channels, kernel]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv1d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut Rng,
    ) -> Self {
        let n = out_channels * in_channels * kernel;
        Conv1d {
            weight: Tensor::from_vec(
                &[out_channels, in_channels, kernel],
                he_normal(rng, in_channels * kernel, n),
            )
            .expect("shape matches"),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// `(left pad, padded length, output length)` for an input length.
    fn geometry(&self, len: usize) -> Result<(usize, usize, usize), NnError> {
        let (k, s) = (self.kernel(), self.stride.max(1));
        let (left, padded) = match self.padding {
            Padding::Valid => (0, len),
            Padding::Same => {
                let out = len.div_ceil(s);
                let total = ((out.saturating_sub(1)) * s + k).saturating_sub(len);
                (total / 2, len + total)
            }
        };
        if k > padded || k == 0 {
            return Err(shape_err("conv1d kernel", &[padded], &[k]));
        }
        Ok((left, padded, (padded - k) / s + 1))
    }

    pub fn output_len(&self, len: usize) -> Result<usize, NnError> {
        self.geometry(len).map(|g| g.2)
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize, usize, usize), NnError> {
        let shape = input.shape();
        if shape.len() != 2 || shape[0] != self.in_channels() {
            return Err(shape_err(
                "conv1d input",
                &[self.in_channels(), shape.last().copied().unwrap_or(0)],
                shape,
            ));
        }
        let (left, padded, out) = self.geometry(shape[1])?;
        Ok((shape[1], left, padded, out))
    }

    fn padded(input: &[f64], cin: usize, len: usize, left: usize, padded: usize) -> Vec<f64> {
        if padded == len {
            return input.to_vec();
        }
        let mut buf = vec![0.0; cin * padded];
        for c in 0..cin {
            buf[c * padded + left..c * padded + left + len]
                .copy_from_slice(&input[c * len..(c + 1) * len]);
        }
        buf
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let (len, left, padded, lout) = self.check_input(input)?;
        let (cin, cout, k, s) = (self.in_channels(), self.out_channels(), self.kernel(), self.stride.max(1));
        let x = Self::padded(input.data(), cin, len, left, padded);
        let w = self.weight.data();
        let mut out = vec![0.0; cout * lout];
        for o in 0..cout {
            let row = &mut out[o * lout..(o + 1) * lout];
            row.fill(self.bias.data()[o]);
            for c in 0..cin {
                let xr = &x[c * padded..(c + 1) * padded];
                for kk in 0..k {
                    let wk = w[(o * cin + c) * k + kk];
                    if s == 1 {
                        for (r, xv) in row.iter_mut().zip(&xr[kk..kk + lout]) {
                            *r += wk * xv;
                        }
                    } else {
                        for (t, r) in row.iter_mut().enumerate() {
                            *r += wk * xr[t * s + kk];
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[cout, lout], out)
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor), NnError> {
        let (len, left, padded, lout) = self.check_input(input)?;
        let (cin, cout, k, s) = (self.in_channels(), self.out_channels(), self.kernel(), self.stride.max(1));
        if grad_out.shape() != [cout, lout] {
            return Err(shape_err("conv1d grad", &[cout, lout], grad_out.shape()));
        }
        let x = Self::padded(input.data(), cin, len, left, padded);
        let w = self.weight.data();
        let g = grad_out.data();
        let mut gw = vec![0.0; w.len()];
        let mut gx = vec![0.0; cin * padded];
        let gb: Vec<f64> = (0..cout).map(|o| g[o * lout..(o + 1) * lout].iter().sum()).collect();
        for o in 0..cout {
            let go = &g[o * lout..(o + 1) * lout];
            for c in 0..cin {
                let xr = &x[c * padded..(c + 1) * padded];
                let gxr = &mut gx[c * padded..(c + 1) * padded];
                for kk in 0..k {
                    let idx = (o * cin + c) * k + kk;
                    let wk = w[idx];
                    let mut acc = 0.0;
                    if s == 1 {
                        for ((gv, xv), gxv) in go.iter().zip(&xr[kk..kk + lout]).zip(&mut gxr[kk..kk + lout]) {
                            acc += gv * xv;
                            *gxv += wk * gv;
                        }
                    } else {
                        for (t, gv) in go.iter().enumerate() {
                            acc += gv * xr[t * s + kk];
                            gxr[t * s + kk] += wk * gv;
                        }
                    }
                    gw[idx] += acc;
                }
            }
        }
        let grad_input = if padded == len {
            gx
        } else {
            let mut out = vec![0.0; cin * len];
            for c in 0..cin {
                out[c * len..(c + 1) * len]
                    .copy_from_slice(&gx[c * padded + left..c * padded + left + len]);
            }
            out
        };
        Ok((
            Tensor::from_vec(&[cin, len], grad_input)?,
            Tensor::from_vec(self.weight.shape(), gw)?,
            Tensor::from_vec(&[cout], gb)?,
        ))
    }
}

/// Fully connected layer over `[batch, in]` inputs (a 1-D input is one row).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Dense {
            weight: Tensor::from_vec(&[outputs, inputs], he_normal(rng, inputs, inputs * outputs))
                .expect("shape matches"),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn rows(&self, input: &Tensor) -> Result<usize, NnError> {
        let n_in = self.inputs();
        match input.shape() {
            [n] if *n == n_in => Ok(1),
            [b, n] if *n == n_in => Ok(*b),
            other => Err(shape_err("dense input", &[n_in], other)),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let b = self.rows(input)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let (w, bias, x) = (self.weight.data(), self.bias.data(), input.data());
        let mut out = Vec::with_capacity(b * n_out);
        for r in 0..b {
            let xr = &x[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                let wr = &w[o * n_in..(o + 1) * n_in];
                out.push(bias[o] + wr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        Tensor::from_vec(&[b, n_out], out)
    }

    /// Returns `(grad_input, grad_weight, grad_bias)`; `grad_input` has the
    /// input's shape.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor), NnError> {
        let b = self.rows(input)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        if grad_out.len() != b * n_out {
            return Err(shape_err("dense grad", &[b, n_out], grad_out.shape()));
        }
        let (w, x, g) = (self.weight.data(), input.data(), grad_out.data());
        let mut gw = vec![0.0; n_out * n_in];
        let mut gb = vec![0.0; n_out];
        let mut gx = vec![0.0; b * n_in];
        for r in 0..b {
            let xr = &x[r * n_in..(r + 1) * n_in];
            let gxr = &mut gx[r * n_in..(r + 1) * n_in];
            for o in 0..n_out {
                let gv = g[r * n_out + o];
                if gv == 0.0 {
                    continue;
                }
                gb[o] += gv;
                let wr = &w[o * n_in..(o + 1) * n_in];
                let gwr = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    gwr[i] += gv * xr[i];
                    gxr[i] += gv * wr[i];
                }
            }
        }
        Ok((
            Tensor::from_vec(input.shape(), gx)?,
            Tensor::from_vec(&[n_out, n_in], gw)?,
            Tensor::from_vec(&[n_out], gb)?,
        ))
    }
}

/// Max pooling over the last axis of `[channels, length]`. Ties resolve to
/// the first index in the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool1d {
    pub size: usize,
    pub stride: usize,
}

impl MaxPool1d {
    pub fn new(size: usize) -> Self {
        MaxPool1d { size, stride: size }
    }

    pub fn output_len(&self, len: usize) -> Result<usize, NnError> {
        if self.size == 0 || self.size > len {
            return Err(shape_err("maxpool window", &[len], &[self.size]));
        }
        Ok((len - self.size) / self.stride.max(1) + 1)
    }

    /// Output and the flat input index each output came from.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
        let [c, len] = *input.shape() else {
            return Err(shape_err("maxpool input", &[0, 0], input.shape()));
        };
        let lout = self.output_len(len)?;
        let x = input.data();
        let mut out = Vec::with_capacity(c * lout);
        let mut arg = Vec::with_capacity(c * lout);
        for ch in 0..c {
            for t in 0..lout {
                let start = ch * len + t * self.stride.max(1);
                let mut best = start;
                for i in start + 1..start + self.size {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
        Ok((Tensor::from_vec(&[c, lout], out)?, arg))
    }

    pub fn backward(&self, in_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor, NnError> {
        if grad_out.len() != argmax.len() {
            return Err(shape_err("maxpool grad", &[argmax.len()], grad_out.shape()));
        }
        let mut gx = Tensor::zeros(in_shape);
        let data = gx.data_mut();
        for (&i, &g) in argmax.iter().zip(grad_out.data()) {
            data[i] += g;
        }
        Ok(gx)
    }
}

/// Inverted dropout: at train time kept units are scaled by `1 / keep`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn mask(&self, n: usize, rng: &mut Rng) -> Vec<f64> {
        let keep = 1.0 - self.rate;
        if keep >= 1.0 {
            return vec![1.0; n];
        }
        (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    pub fn apply(input: &Tensor, mask: &[f64]) -> Tensor {
        let data = input.data().iter().zip(mask).map(|(x, m)| x * m).collect();
        Tensor::from_vec(input.shape(), data).expect("same shape")
    }
}

/// One step of a sequential network.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    MaxPool1d(MaxPool1d),
    Dropout(Dropout),
    Dense(Dense),
    Relu,
    Sigmoid,
    Flatten,
}

/// Forward state a layer needs for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Cache {
    Input(Tensor),
    Argmax { in_shape: Vec<usize>, argmax: Vec<usize> },
    Mask(Vec<f64>),
    Output(Tensor),
    Shape(Vec<usize>),
    /// Inference-mode pass; nothing recorded.
    Empty,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::MaxPool1d(_) => "maxpool1d",
            Layer::Dropout(_) => "dropout",
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
            Layer::Flatten => "flatten",
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// `rng` is `Some` in training mode (dropout active, caches recorded)
    /// and `None` at inference.
    pub fn forward(&self, x: &Tensor, rng: Option<&mut Rng>) -> Result<(Tensor, Cache), NnError> {
        let train = rng.is_some();
        let keep = |t: &Tensor| if train { Cache::Input(t.clone()) } else { Cache::Empty };
        Ok(match self {
            Layer::Conv1d(c) => (c.forward(x)?, keep(x)),
            Layer::Dense(d) => (d.forward(x)?, keep(x)),
            Layer::MaxPool1d(p) => {
                let (out, argmax) = p.forward(x)?;
                let cache = if train {
                    Cache::Argmax {
                        in_shape: x.shape().to_vec(),
                        argmax,
                    }
                } else {
                    Cache::Empty
                };
                (out, cache)
            }
            Layer::Dropout(d) => match rng {
                Some(rng) => {
                    let mask = d.mask(x.len(), rng);
                    (Dropout::apply(x, &mask), Cache::Mask(mask))
                }
                None => (x.clone(), Cache::Empty),
            },
            Layer::Relu => {
                let data = x.data().iter().map(|v| v.max(0.0)).collect();
                (Tensor::from_vec(x.shape(), data)?, keep(x))
            }
            Layer::Sigmoid => {
                let out = Tensor::from_vec(x.shape(), x.data().iter().map(|&v| super::sigmoid(v)).collect())?;
                let cache = if train { Cache::Output(out.clone()) } else { Cache::Empty };
                (out, cache)
            }
            Layer::Flatten => {
                let n = x.len();
                (x.clone().reshape(&[1, n])?, Cache::Shape(x.shape().to_vec()))
            }
        })
    }

    /// Input gradient and parameter gradients (same order as [`Layer::params`]).
    pub fn backward(&self, cache: &Cache, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>), NnError> {
        let missing = || NnError::MissingCache(self.name());
        match (self, cache) {
            (Layer::Conv1d(c), Cache::Input(x)) => {
                let (gx, gw, gb) = c.backward(x, grad)?;
                Ok((gx, vec![gw, gb]))
            }
            (Layer::Dense(d), Cache::Input(x)) => {
                let (gx, gw, gb) = d.backward(x, grad)?;
                Ok((gx, vec![gw, gb]))
            }
            (Layer::MaxPool1d(p), Cache::Argmax { in_shape, argmax }) => {
                Ok((p.backward(in_shape, argmax, grad)?, Vec::new()))
            }
            (Layer::Dropout(_), Cache::Mask(mask)) => Ok((Dropout::apply(grad, mask), Vec::new())),
            (Layer::Relu, Cache::Input(x)) => {
                let data = grad
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                Ok((Tensor::from_vec(x.shape(), data)?, Vec::new()))
            }
            (Layer::Sigmoid, Cache::Output(y)) => {
                let data = grad
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                Ok((Tensor::from_vec(y.shape(), data)?, Vec::new()))
            }
            (Layer::Flatten, Cache::Shape(shape)) => Ok((grad.clone().reshape(shape)?, Vec::new())),
            _ => Err(missing()),
        }
    }
}

/// Caches from one training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    caches: Vec<Cache>,
}

/// Sequential stack of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// Stable parameter names, e.g. `layer0.conv1d.weight`.
    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        let mut names = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (p, _) in ["weight", "bias"].iter().zip(l.params()) {
                names.push(format!("{prefix}layer{i}.{}.{p}", l.name()));
            }
        }
        names
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    pub fn infer(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.forward(&cur, None)?.0;
        }
        Ok(cur)
    }

    pub fn forward_train(&self, x: &Tensor, rng: &mut Rng) -> Result<(Tensor, Trace), NnError> {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (out, cache) = l.forward(&cur, Some(&mut *rng))?;
            caches.push(cache);
            cur = out;
        }
        Ok((cur, Trace { caches }))
    }

    /// Input gradient and parameter gradients in [`Network::params`] order.
    pub fn backward(&self, trace: &Trace, grad: &Tensor) -> Result<(Tensor, Vec<Tensor>), NnError> {
        if trace.caches.len() != self.layers.len() {
            return Err(NnError::MissingCache("network"));
        }
        let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut cur = grad.clone();
        for (l, c) in self.layers.iter().zip(&trace.caches).rev() {
            let (gx, gp) = l.backward(c, &cur)?;
            per_layer.push(gp);
            cur = gx;
        }
        per_layer.reverse();
        Ok((cur, per_layer.into_iter().flatten().collect()))
    }
}
