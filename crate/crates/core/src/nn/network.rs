use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

use super::ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward, dropout_forward, maxpool2d,
    maxpool2d_backward, relu_backward, relu_forward,
};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { out_channels: usize, kernel: usize, stride: usize, pad: usize },
    Relu,
    MaxPool,
    Flatten,
    Dense { out: usize },
    Dropout { p: f64 },
}

/// Layer sequence plus the per-sample input shape `[C, H, W]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

pub const KEYPOINT_OUTPUTS: usize = 52;

impl NetworkSpec {
    /// Five conv/ReLU/pool blocks (3→16→32→64→128→256 channels) and three
    /// dense layers 16384→1024→256→52, dropout 0.1 and 0.2 after the first two.
    pub fn keypoint_regressor() -> Self {
        let mut layers = Vec::new();
        for out_channels in [16, 32, 64, 128, 256] {
            layers.push(LayerSpec::Conv { out_channels, kernel: 3, stride: 1, pad: 1 });
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::MaxPool);
        }
        layers.extend([
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 1024 },
            LayerSpec::Relu,
            LayerSpec::Dropout { p: 0.1 },
            LayerSpec::Dense { out: 256 },
            LayerSpec::Relu,
            LayerSpec::Dropout { p: 0.2 },
            LayerSpec::Dense { out: KEYPOINT_OUTPUTS },
        ]);
        Self { input: [3, 256, 256], layers }
    }

    /// Per-sample shape after every layer; the last entry is the output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.contains(&0) {
            return Err(Error::shape("NetworkSpec", format!("input {:?} has an empty axis", self.input)));
        }
        let mut cur = self.input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let bad = |why: String| Error::shape("NetworkSpec", format!("layer {i} ({l:?}): {why}"));
            cur = match (*l, cur.as_slice()) {
                (LayerSpec::Conv { out_channels, kernel, stride, pad }, &[_, h, w]) => {
                    if out_channels == 0 || kernel == 0 || stride == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
                        return Err(bad(format!("does not fit input {cur:?}")));
                    }
                    vec![out_channels, (h + 2 * pad - kernel) / stride + 1, (w + 2 * pad - kernel) / stride + 1]
                }
                (LayerSpec::MaxPool, &[c, h, w]) => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(bad(format!("odd spatial extent in {cur:?}")));
                    }
                    vec![c, h / 2, w / 2]
                }
                (LayerSpec::Flatten, s) => vec![s.iter().product()],
                (LayerSpec::Dense { out }, &[_]) if out > 0 => vec![out],
                (LayerSpec::Relu, _) => cur,
                (LayerSpec::Dropout { p }, _) if (0.0..1.0).contains(&p) => cur,
                _ => return Err(bad(format!("cannot follow shape {cur:?}"))),
            };
            out.push(cur.clone());
        }
        Ok(out)
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map_or(self.input.iter().product(), |s| s.iter().product()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    /// `[out, in, k, k]`.
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`.
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv),
    Relu,
    MaxPool,
    Flatten,
    Dense(Dense),
    Dropout(f64),
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::Conv {
                out_channels: c.weights.shape()[0],
                kernel: c.weights.shape()[2],
                stride: c.stride,
                pad: c.pad,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::MaxPool => LayerSpec::MaxPool,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense(d) => LayerSpec::Dense { out: d.weights.shape()[0] },
            Layer::Dropout(p) => LayerSpec::Dropout { p: *p },
        }
    }
}

/// State a layer keeps from forward for its backward pass.
enum Cache {
    Conv(Tensor),
    Relu(Vec<bool>),
    Pool { argmax: Vec<u8>, input_shape: Vec<usize> },
    Flatten(Vec<usize>),
    Dense(Tensor),
    Dropout(Option<Vec<bool>>),
}

/// Forward-pass record needed by [`Network::backward`].
pub struct Trace {
    caches: Vec<Cache>,
}

pub enum Mode<'a> {
    Eval,
    /// Dropout draws its masks from the stream.
    Train(&'a mut RandomStream),
}

/// Gradient of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: [usize; 3],
    layers: Vec<Layer>,
}

fn per_sample<T: Send>(
    x: &Tensor,
    sample_shape: &[usize],
    f: impl Fn(Tensor) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    (0..x.batch())
        .into_par_iter()
        .map(|i| f(Tensor::new(sample_shape, x.sample(i).to_vec())?))
        .collect()
}

fn stack(batch: usize, sample_shape: &[usize], parts: Vec<Tensor>) -> Result<Tensor> {
    let mut shape = vec![batch];
    shape.extend_from_slice(sample_shape);
    let mut data = Vec::with_capacity(shape.iter().product());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Tensor::new(&shape, data)
}

impl Network {
    /// Kaiming-uniform weights (bound √(6 / fan_in)) and zero biases.
    pub fn new(spec: &NetworkSpec, rng: &mut RandomStream) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.uniform(-bound, bound)).collect()).expect("length matches")
        };
        for (i, l) in spec.layers.iter().enumerate() {
            let in_shape = if i == 0 { spec.input.to_vec() } else { shapes[i - 1].clone() };
            layers.push(match *l {
                LayerSpec::Conv { out_channels, kernel, stride, pad } => {
                    let c = in_shape[0];
                    Layer::Conv(Conv {
                        weights: uniform(&[out_channels, c, kernel, kernel], c * kernel * kernel),
                        bias: Tensor::zeros(&[out_channels]),
                        stride,
                        pad,
                    })
                }
                LayerSpec::Dense { out } => Layer::Dense(Dense {
                    weights: uniform(&[out, in_shape[0]], in_shape[0]),
                    bias: Tensor::zeros(&[out]),
                }),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool => Layer::MaxPool,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dropout { p } => Layer::Dropout(p),
            });
        }
        Ok(Self { input: spec.input, layers })
    }

    /// Wraps existing layers after checking that every parameter tensor fits
    /// the shape pipeline.
    pub fn from_layers(input: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let spec = NetworkSpec { input, layers: layers.iter().map(Layer::spec).collect() };
        let shapes = spec.shapes()?;
        for (i, l) in layers.iter().enumerate() {
            let in_shape = if i == 0 { input.to_vec() } else { shapes[i - 1].clone() };
            let ok = match l {
                Layer::Conv(c) => {
                    let s = c.weights.shape();
                    s.len() == 4 && s[1] == in_shape[0] && s[2] == s[3] && c.bias.shape() == [s[0]]
                }
                Layer::Dense(d) => {
                    let s = d.weights.shape();
                    s.len() == 2 && s[1] == in_shape[0] && d.bias.shape() == [s[0]]
                }
                _ => true,
            };
            if !ok {
                return Err(Error::shape("Network::from_layers", format!("layer {i} parameters do not fit {in_shape:?}")));
            }
        }
        Ok(Self { input, layers })
    }

    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec { input: self.input, layers: self.layers.iter().map(Layer::spec).collect() }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Weight and bias tensors in layer order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv(Conv { weights, bias, .. }) | Layer::Dense(Dense { weights, bias }) => {
                    out.push(weights);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                Layer::Conv(Conv { weights, bias, .. }) | Layer::Dense(Dense { weights, bias }) => {
                    out.push(weights);
                    out.push(bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Names matching [`Network::params`], e.g. `layer3.conv.weights`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let kind = match l {
                Layer::Conv(_) => "conv",
                Layer::Dense(_) => "dense",
                _ => continue,
            };
            out.push(format!("layer{i}.{kind}.weights"));
            out.push(format!("layer{i}.{kind}.bias"));
        }
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != self.input || s[0] == 0 {
            return Err(Error::shape(
                "Network::forward",
                format!("input {s:?}, expected [N, {}, {}, {}]", self.input[0], self.input[1], self.input[2]),
            ));
        }
        Ok(())
    }

    /// Batched forward pass on `[N, C, H, W]`.
    pub fn forward(&self, x: Tensor, mut mode: Mode<'_>) -> Result<(Tensor, Trace)> {
        self.check_input(&x)?;
        let keep = matches!(mode, Mode::Train(_));
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        let mut x = x;
        for l in &self.layers {
            let n = x.batch();
            let (y, cache) = match l {
                Layer::Conv(c) => {
                    let sample_shape = x.shape()[1..].to_vec();
                    let outs = per_sample(&x, &sample_shape, |s| conv2d_forward(&s, &c.weights, &c.bias, c.stride, c.pad))?;
                    let out_shape = outs[0].shape().to_vec();
                    (stack(n, &out_shape, outs)?, Cache::Conv(x))
                }
                Layer::Relu => {
                    let (y, mask) = relu_forward(x);
                    (y, Cache::Relu(mask))
                }
                Layer::MaxPool => {
                    let (y, argmax) = maxpool2d(&x)?;
                    (y, Cache::Pool { argmax, input_shape: x.shape().to_vec() })
                }
                Layer::Flatten => {
                    let shape = x.shape().to_vec();
                    let flat = x.len() / n;
                    (x.reshape(&[n, flat])?, Cache::Flatten(shape))
                }
                Layer::Dense(d) => {
                    let y = dense_forward(&x, &d.weights, &d.bias)?;
                    (y, Cache::Dense(x))
                }
                Layer::Dropout(p) => {
                    let (y, mask) = match &mut mode {
                        Mode::Train(rng) => dropout_forward(x, *p, true, rng)?,
                        Mode::Eval => dropout_forward(x, *p, false, &mut RandomStream::from_seed(0))?,
                    };
                    (y, Cache::Dropout(mask))
                }
            };
            if keep {
                caches.push(cache);
            }
            x = y;
        }
        Ok((x, Trace { caches }))
    }

    /// Eval-mode outputs `[N, out]`.
    pub fn predict_batch(&self, x: Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }

    /// Parameter gradients in [`Network::params`] order, given the loss
    /// gradient with respect to the output. Per-sample convolution gradients
    /// are summed in sample order, so the result does not depend on the
    /// number of worker threads.
    pub fn backward(&self, trace: Trace, grad: Tensor) -> Result<Vec<ParamGrad>> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::Domain("backward needs a training-mode trace".into()));
        }
        let mut grads = Vec::new();
        let mut g = grad;
        for (i, (l, cache)) in self.layers.iter().zip(trace.caches).enumerate().rev() {
            let first = i == 0;
            g = match (l, cache) {
                (Layer::Conv(c), Cache::Conv(input)) => {
                    let n = input.batch();
                    let in_shape = input.shape()[1..].to_vec();
                    let out_shape = g.shape()[1..].to_vec();
                    let parts: Vec<_> = (0..n)
                        .into_par_iter()
                        .map(|s| {
                            let x = Tensor::new(&in_shape, input.sample(s).to_vec())?;
                            let go = Tensor::new(&out_shape, g.sample(s).to_vec())?;
                            conv2d_backward(&go, &x, &c.weights, c.stride, c.pad, !first)
                        })
                        .collect::<Result<_>>()?;
                    let mut gw = Tensor::zeros(c.weights.shape());
                    let mut gb = Tensor::zeros(c.bias.shape());
                    let mut gi = Vec::with_capacity(if first { 0 } else { n });
                    for p in parts {
                        gw.add_assign(&p.weights)?;
                        gb.add_assign(&p.bias)?;
                        if let Some(t) = p.input {
                            gi.push(t);
                        }
                    }
                    grads.push(ParamGrad { weights: gw, bias: gb });
                    if first {
                        Tensor::zeros(&[0])
                    } else {
                        stack(n, &in_shape, gi)?
                    }
                }
                (Layer::Relu, Cache::Relu(mask)) => relu_backward(g, &mask)?,
                (Layer::MaxPool, Cache::Pool { argmax, input_shape }) => maxpool2d_backward(&g, &argmax, &input_shape)?,
                (Layer::Flatten, Cache::Flatten(shape)) => g.reshape(&shape)?,
                (Layer::Dense(d), Cache::Dense(input)) => {
                    let dg = dense_backward(&g, &input, &d.weights)?;
                    grads.push(ParamGrad { weights: dg.weights, bias: dg.bias });
                    dg.input
                }
                (Layer::Dropout(p), Cache::Dropout(mask)) => dropout_backward(g, *p, mask.as_deref())?,
                _ => unreachable!("trace built by forward on the same layers"),
            };
        }
        grads.reverse();
        Ok(grads)
    }
}
