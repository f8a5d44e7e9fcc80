//! Sequential networks assembled from the layer primitives.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::batchnorm::{BnCache, BnMode, BnState};
use crate::network::layers::{gap_backward, gap_forward, relu_backward, relu_forward, ConvLayer, LinearLayer};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Filter counts of the three ConvNet stages.
pub const CONVNET_STAGE_WIDTHS: [usize; 3] = [16, 32, 64];

/// Architecture descriptor as written in config files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Arch {
    /// `convnet-X<k>`: 6k+2 weight layers.
    ConvNet { x: usize },
    /// `mlp:<w0>,<w1>,…`: dense ReLU network, first entry is the input width.
    Mlp(Vec<usize>),
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(x) = s.strip_prefix("convnet-X") {
            let x: usize = x
                .parse()
                .map_err(|_| Error::Config(format!("bad convnet depth in {s:?}")))?;
            if x == 0 {
                return Err(Error::Config("convnet needs X ≥ 1".into()));
            }
            return Ok(Arch::ConvNet { x });
        }
        if let Some(list) = s.strip_prefix("mlp:") {
            let widths = list
                .split(',')
                .map(|w| w.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Config(format!("bad mlp widths in {s:?}")))?;
            if widths.len() < 2 || widths.contains(&0) {
                return Err(Error::Config("mlp needs at least two positive widths".into()));
            }
            return Ok(Arch::Mlp(widths));
        }
        Err(Error::Config(format!("unknown arch {s:?}")))
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::ConvNet { x } => write!(f, "convnet-X{x}"),
            Arch::Mlp(w) => {
                let parts: Vec<String> = w.iter().map(|v| v.to_string()).collect();
                write!(f, "mlp:{}", parts.join(","))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Linear(LinearLayer),
    Conv(ConvLayer),
    BatchNorm(BnState),
    Relu,
    GlobalAvgPool,
    /// `B × …` → `B × (product of the rest)`.
    Flatten,
}

impl Layer {
    fn kind(&self) -> &'static str {
        match self {
            Layer::Linear(_) => "linear",
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::Relu => "relu",
            Layer::GlobalAvgPool => "gap",
            Layer::Flatten => "flatten",
        }
    }
}

/// Saved forward state for one layer.
#[derive(Debug)]
pub enum Cache {
    Input(Tensor),
    Bn(BnCache),
    Shape(Vec<usize>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub value: &'a mut Tensor,
}

/// A weight matrix subject to spectral bounding, in its matrix view.
pub struct BoundedMatrix {
    pub name: String,
    pub layer: usize,
    pub matrix: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    /// Build `arch` for inputs of shape `input` (per sample) and `classes`
    /// outputs, with orthogonal weights and zero biases.
    pub fn build(arch: &Arch, input: &[usize], classes: usize, rng: &mut Rng) -> Result<Self> {
        match arch {
            Arch::Mlp(widths) => {
                let flat: usize = input.iter().product();
                if widths[0] != flat {
                    return Err(Error::Config(format!(
                        "mlp input width {} does not match sample size {flat}",
                        widths[0]
                    )));
                }
                if *widths.last().unwrap() != classes {
                    return Err(Error::Config(format!(
                        "mlp output width {} does not match {classes} classes",
                        widths.last().unwrap()
                    )));
                }
                Ok(Self::mlp(widths, rng))
            }
            Arch::ConvNet { x } => {
                let &[c, _, _] = input else {
                    return Err(Error::Config(format!("convnet needs C × H × W samples, got {input:?}")));
                };
                Self::convnet(*x, c, classes, rng)
            }
        }
    }

    pub fn mlp(widths: &[usize], rng: &mut Rng) -> Self {
        let mut layers = vec![Layer::Flatten];
        for (i, pair) in widths.windows(2).enumerate() {
            layers.push(Layer::Linear(LinearLayer::orthogonal(rng, pair[0], pair[1])));
            if i + 2 < widths.len() {
                layers.push(Layer::Relu);
            }
        }
        Network { layers }
    }

    /// Plain ConvNet: a 16-filter stem, three stages of 2X 3×3 conv layers
    /// (16/32/64 filters, stride 2 at the start of stages two and three),
    /// each followed by BN and ReLU, then global average pooling and a
    /// fully connected classifier.
    pub fn convnet(x: usize, in_channels: usize, classes: usize, rng: &mut Rng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut push_block = |layers: &mut Vec<Layer>, cin: usize, cout: usize, stride: usize| -> Result<()> {
            layers.push(Layer::Conv(ConvLayer::orthogonal(rng, cin, cout, 3, stride, 1)?));
            layers.push(Layer::BatchNorm(BnState::new(cout)));
            layers.push(Layer::Relu);
            Ok(())
        };
        push_block(&mut layers, in_channels, CONVNET_STAGE_WIDTHS[0], 1)?;
        let mut cin = CONVNET_STAGE_WIDTHS[0];
        for (stage, &width) in CONVNET_STAGE_WIDTHS.iter().enumerate() {
            for j in 0..2 * x {
                let stride = if stage > 0 && j == 0 { 2 } else { 1 };
                push_block(&mut layers, cin, width, stride)?;
                cin = width;
            }
        }
        layers.push(Layer::GlobalAvgPool);
        layers.push(Layer::Linear(LinearLayer::orthogonal(rng, cin, classes)));
        Ok(Network { layers })
    }

    pub fn weight_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Linear(_) | Layer::Conv(_)))
            .count()
    }

    pub fn has_batch_norm(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::BatchNorm(_)))
    }

    pub fn set_mode(&mut self, mode: BnMode) {
        for layer in &mut self.layers {
            if let Layer::BatchNorm(bn) = layer {
                bn.mode = mode;
            }
        }
    }

    pub fn layer_name(&self, index: usize) -> String {
        format!("layer{index}.{}", self.layers[index].kind())
    }

    /// Forward pass keeping what `backward` needs. In training mode this
    /// also advances the BN running statistics.
    pub fn forward(&mut self, x: &Tensor) -> Result<(Tensor, Vec<Cache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            let (next, cache) = match layer {
                Layer::Linear(l) => (l.forward(&h), Cache::Input(h)),
                Layer::Conv(c) => (c.forward(&h), Cache::Input(h)),
                Layer::BatchNorm(bn) => match bn.forward(&h) {
                    Ok((out, c)) => (Ok(out), Cache::Bn(c)),
                    Err(e) => (Err(e), Cache::Shape(vec![])),
                },
                Layer::Relu => (Ok(relu_forward(&h)), Cache::Input(h)),
                Layer::GlobalAvgPool => (gap_forward(&h), Cache::Shape(h.shape().to_vec())),
                Layer::Flatten => {
                    let shape = h.shape().to_vec();
                    let flat = h.cols();
                    (h.into_shape(&[shape[0], flat]), Cache::Shape(shape))
                }
            };
            h = next.map_err(|e| e.in_layer(format!("layer{i}.{kind}")))?;
            caches.push(cache);
        }
        Ok((h, caches))
    }

    /// Inference-style forward without caches (BN uses whatever mode is set).
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.0)
    }

    /// Gradients of every parameter, in [`Network::params_mut`] order.
    pub fn backward(&self, caches: &[Cache], dout: &Tensor) -> Result<Vec<Tensor>> {
        let mut grads: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut g = dout.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let wrap = |e: Error| e.in_layer(format!("layer{i}.{}", layer.kind()));
            match (layer, cache) {
                (Layer::Linear(l), Cache::Input(x)) => {
                    let lg = l.backward(x, &g).map_err(wrap)?;
                    grads.push(vec![lg.dw, lg.db]);
                    g = lg.dx;
                }
                (Layer::Conv(c), Cache::Input(x)) => {
                    let cg = c.backward(x, &g).map_err(wrap)?;
                    grads.push(vec![cg.dkernel, cg.dbias]);
                    g = cg.dx;
                }
                (Layer::BatchNorm(bn), Cache::Bn(c)) => {
                    let bg = bn.backward(c, &g).map_err(wrap)?;
                    grads.push(vec![bg.dgamma, bg.dbeta]);
                    g = bg.dz;
                }
                (Layer::Relu, Cache::Input(x)) => g = relu_backward(x, &g).map_err(wrap)?,
                (Layer::GlobalAvgPool, Cache::Shape(s)) => g = gap_backward(s, &g).map_err(wrap)?,
                (Layer::Flatten, Cache::Shape(s)) => g = g.into_shape(s).map_err(wrap)?,
                _ => return Err(wrap(Error::Input("cache does not match layer".into()))),
            }
        }
        grads.reverse();
        Ok(grads.into_iter().flatten().collect())
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = |suffix: &str, kind, value| ParamMut {
                name: format!("layer{i}.{suffix}"),
                kind,
                value,
            };
            match layer {
                Layer::Linear(l) => {
                    out.push(p("linear.weight", ParamKind::Weight, &mut l.w));
                    out.push(p("linear.bias", ParamKind::Bias, &mut l.b));
                }
                Layer::Conv(c) => {
                    out.push(p("conv.kernel", ParamKind::Weight, &mut c.kernel));
                    out.push(p("conv.bias", ParamKind::Bias, &mut c.bias));
                }
                Layer::BatchNorm(bn) => {
                    out.push(p("bn.gamma", ParamKind::Gamma, &mut bn.gamma));
                    out.push(p("bn.beta", ParamKind::Beta, &mut bn.beta));
                }
                _ => {}
            }
        }
        out
    }

    /// Every named tensor of the model state: parameters plus BN running
    /// statistics, in a fixed order.
    pub fn state_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Linear(l) => {
                    out.push((format!("layer{i}.linear.weight"), &l.w));
                    out.push((format!("layer{i}.linear.bias"), &l.b));
                }
                Layer::Conv(c) => {
                    out.push((format!("layer{i}.conv.kernel"), &c.kernel));
                    out.push((format!("layer{i}.conv.bias"), &c.bias));
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("layer{i}.bn.gamma"), &bn.gamma));
                    out.push((format!("layer{i}.bn.beta"), &bn.beta));
                    out.push((format!("layer{i}.bn.run_mean"), &bn.run_mean));
                    out.push((format!("layer{i}.bn.run_std"), &bn.run_std));
                }
                _ => {}
            }
        }
        out
    }

    pub fn state_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Linear(l) => {
                    out.push((format!("layer{i}.linear.weight"), &mut l.w));
                    out.push((format!("layer{i}.linear.bias"), &mut l.b));
                }
                Layer::Conv(c) => {
                    out.push((format!("layer{i}.conv.kernel"), &mut c.kernel));
                    out.push((format!("layer{i}.conv.bias"), &mut c.bias));
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("layer{i}.bn.gamma"), &mut bn.gamma));
                    out.push((format!("layer{i}.bn.beta"), &mut bn.beta));
                    out.push((format!("layer{i}.bn.run_mean"), &mut bn.run_mean));
                    out.push((format!("layer{i}.bn.run_std"), &mut bn.run_std));
                }
                _ => {}
            }
        }
        out
    }

    /// Weight matrices (linear weights and conv kernels in their
    /// `C_out × (C_in·k·k)` view). The final classifier is skipped unless
    /// `include_classifier` is set.
    pub fn bounded_matrices(&self, include_classifier: bool) -> Vec<BoundedMatrix> {
        let last_linear = self.classifier_index();
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, layer)| match layer {
                Layer::Linear(l) if include_classifier || Some(i) != last_linear => Some(BoundedMatrix {
                    name: format!("layer{i}.linear.weight"),
                    layer: i,
                    matrix: l.w.clone(),
                }),
                Layer::Conv(c) => Some(BoundedMatrix {
                    name: format!("layer{i}.conv.kernel"),
                    layer: i,
                    matrix: c.kernel_matrix(),
                }),
                _ => None,
            })
            .collect()
    }

    /// Write back a matrix obtained from [`Network::bounded_matrices`].
    pub fn set_bounded_matrix(&mut self, layer: usize, matrix: &Tensor) -> Result<()> {
        match &mut self.layers[layer] {
            Layer::Linear(l) => {
                if matrix.shape() != l.w.shape() {
                    return Err(Error::shape("set weight", matrix.shape(), l.w.shape()));
                }
                l.w = matrix.clone();
                Ok(())
            }
            Layer::Conv(c) => c.set_kernel_matrix(matrix),
            _ => Err(Error::Input(format!("layer {layer} has no weight matrix"))),
        }
    }

    fn classifier_index(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, Layer::Linear(_)))
    }
}
