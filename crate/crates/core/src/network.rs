//! Layers and the parameter-function map `θ ↦ F_X(θ)`.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Graph, Program, Unary, Var};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::spectral::LinearOperator;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Linear,
    Relu,
    Tanh,
    Gaussian,
    SmoothLeakyRelu,
    BatchNorm,
    Softmax,
}

impl LayerKind {
    pub fn is_activation(self) -> bool {
        matches!(
            self,
            LayerKind::Relu | LayerKind::Tanh | LayerKind::Gaussian | LayerKind::SmoothLeakyRelu
        )
    }

    fn unary(self) -> Option<Unary> {
        match self {
            LayerKind::Relu => Some(Unary::Relu),
            LayerKind::Tanh => Some(Unary::Tanh),
            LayerKind::Gaussian => Some(Unary::Gaussian),
            LayerKind::SmoothLeakyRelu => Some(Unary::SmoothLeakyRelu),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnMode {
    Train,
    Eval,
}

/// One layer `f_l`. Batch norm carries no affine parameters; in eval mode it
/// uses the stored running statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bn_mode: Option<BnMode>,
    #[serde(default = "default_bn_eps", skip_serializing_if = "is_default_eps")]
    pub bn_eps: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub running_mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub running_var: Vec<f64>,
}

fn default_bn_eps() -> f64 {
    DEFAULT_BN_EPS
}

fn is_default_eps(e: &f64) -> bool {
    *e == DEFAULT_BN_EPS
}

impl Layer {
    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        Layer::plain(LayerKind::Linear, in_dim, out_dim)
    }

    pub fn activation(kind: LayerKind, dim: usize) -> Self {
        Layer::plain(kind, dim, dim)
    }

    pub fn batch_norm(dim: usize, mode: BnMode) -> Self {
        Layer {
            kind: LayerKind::BatchNorm,
            in_dim: dim,
            out_dim: dim,
            bn_mode: Some(mode),
            bn_eps: DEFAULT_BN_EPS,
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    fn plain(kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        Layer {
            kind,
            in_dim,
            out_dim,
            bn_mode: None,
            bn_eps: DEFAULT_BN_EPS,
            running_mean: Vec::new(),
            running_var: Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Linear => self.out_dim * (self.in_dim + 1),
            _ => 0,
        }
    }

    pub fn is_train_bn(&self) -> bool {
        self.kind == LayerKind::BatchNorm && self.bn_mode == Some(BnMode::Train)
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("layer {index}: {msg}")));
        if self.in_dim == 0 || self.out_dim == 0 {
            return bad("dimensions must be positive");
        }
        match self.kind {
            LayerKind::Linear => {}
            LayerKind::BatchNorm => {
                if self.in_dim != self.out_dim {
                    return bad("batch norm must preserve dimension");
                }
                if self.bn_mode.is_none() {
                    return bad("batch norm needs bn_mode");
                }
                if self.bn_eps.is_nan() || self.bn_eps <= 0.0 {
                    return bad("bn_eps must be positive");
                }
                if self.running_mean.len() != self.in_dim || self.running_var.len() != self.in_dim {
                    return bad("running statistics must have length in_dim");
                }
                if self.running_var.iter().any(|&v| v < 0.0) {
                    return bad("running variance must be non-negative");
                }
            }
            _ => {
                if self.in_dim != self.out_dim {
                    return bad("activation must preserve dimension");
                }
            }
        }
        Ok(())
    }
}

/// Ordered layers with one flat parameter vector partitioned per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredNetwork {
    layers: Vec<Layer>,
    params: Tensor,
    offsets: Vec<usize>,
}

impl LayeredNetwork {
    /// Network with zero parameters; see [`LayeredNetwork::init_uniform`].
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate(i)?;
        }
        for (i, w) in layers.windows(2).enumerate() {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    w[0].out_dim,
                    i + 1,
                    w[1].in_dim
                )));
            }
        }
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut acc = 0;
        for l in &layers {
            offsets.push(acc);
            acc += l.param_count();
        }
        offsets.push(acc);
        Ok(LayeredNetwork {
            layers,
            params: Tensor::zeros(&[acc]),
            offsets,
        })
    }

    /// Fully connected net `dims[0] → … → dims[last]` with `activation`
    /// between linear layers (none after the last).
    pub fn mlp(dims: &[usize], activation: LayerKind, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("mlp needs at least input and output dims".into()));
        }
        let mut layers = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            layers.push(Layer::linear(w[0], w[1]));
            if i + 2 < dims.len() {
                layers.push(Layer::activation(activation, w[1]));
            }
        }
        let mut net = LayeredNetwork::new(layers)?;
        net.init_uniform(seed);
        Ok(net)
    }

    /// Uniform `±1/√in_dim` for every weight and bias of every linear layer.
    pub fn init_uniform(&mut self, seed: u64) {
        let mut rng = seeded(seed);
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.kind != LayerKind::Linear {
                continue;
            }
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            let range = self.offsets[l]..self.offsets[l + 1];
            for p in &mut self.params.data_mut()[range] {
                *p = rng.random_range(-bound..bound);
            }
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &Tensor {
        &self.params
    }

    pub fn set_params(&mut self, theta: Tensor) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for a network with {}",
                theta.len(),
                self.param_count()
            )));
        }
        self.params = theta.reshape(&[self.param_count()])?;
        Ok(())
    }

    pub fn param_range(&self, l: usize) -> std::ops::Range<usize> {
        self.offsets[l]..self.offsets[l + 1]
    }

    pub fn has_train_bn(&self) -> bool {
        self.layers.iter().any(Layer::is_train_bn)
    }

    /// Weight matrix (`out × in`) of linear layer `l`.
    pub fn weight(&self, l: usize) -> Result<Tensor> {
        self.check_index(l)?;
        let layer = &self.layers[l];
        if layer.kind != LayerKind::Linear {
            return Err(Error::ParameterFree(l));
        }
        let o = self.offsets[l];
        let n = layer.in_dim * layer.out_dim;
        Tensor::matrix(
            layer.out_dim,
            layer.in_dim,
            self.params.data()[o..o + n].to_vec(),
        )
    }

    /// Indices of linear layers, in order.
    pub fn linear_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&l| self.layers[l].kind == LayerKind::Linear)
            .collect()
    }

    fn check_index(&self, l: usize) -> Result<()> {
        if l >= self.layers.len() {
            return Err(Error::LayerIndex {
                index: l,
                len: self.layers.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.rows() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input {:?} for a network expecting {} rows",
                x.shape(),
                self.input_dim()
            )));
        }
        if x.cols() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if self.has_train_bn() && x.cols() < 2 {
            return Err(Error::BatchTooSmall(x.cols()));
        }
        Ok(())
    }

    /// Records layer `l` applied to `h`. `params` is the variable holding this
    /// layer's parameters and the offset where they start.
    pub fn build_layer<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        l: usize,
        params: Option<(Var, usize)>,
        h: Var,
    ) -> Result<Var> {
        let layer = &self.layers[l];
        let hv = g.value(h);
        if hv.shape().len() != 2 || hv.rows() != layer.in_dim {
            return Err(Error::Shape(format!(
                "layer {l} expects {} rows, got {:?}",
                layer.in_dim,
                hv.shape()
            )));
        }
        match layer.kind {
            LayerKind::Linear => {
                let (p, off) = params.ok_or(Error::ParameterFree(l))?;
                let (o, i) = (layer.out_dim, layer.in_dim);
                let w = g.slice(p, off, &[o, i])?;
                let b = g.slice(p, off + o * i, &[o])?;
                let z = g.matmul(w, h)?;
                g.add_column(z, b)
            }
            LayerKind::BatchNorm => match layer.bn_mode {
                Some(BnMode::Train) => {
                    let n = g.value(h).cols();
                    if n < 2 {
                        return Err(Error::BatchTooSmall(n));
                    }
                    let mean = g.row_mean(h)?;
                    let neg = g.scale(mean, -1.0);
                    let centred = g.add_column(h, neg)?;
                    let sq = g.unary(centred, Unary::Square);
                    let var = g.row_mean(sq)?;
                    let shifted = g.add_scalar(var, layer.bn_eps);
                    let inv = g.unary(shifted, Unary::Rsqrt);
                    g.mul_column(centred, inv)
                }
                _ => {
                    let neg_mean = Tensor::vector(layer.running_mean.iter().map(|m| -m).collect());
                    let inv = Tensor::vector(
                        layer
                            .running_var
                            .iter()
                            .map(|v| 1.0 / (v + layer.bn_eps).sqrt())
                            .collect(),
                    );
                    let m = g.constant(&neg_mean);
                    let s = g.constant(&inv);
                    let centred = g.add_column(h, m)?;
                    g.mul_column(centred, s)
                }
            },
            LayerKind::Softmax => Ok(g.softmax_cols(h)),
            k => Ok(g.unary(h, k.unary().expect("activation"))),
        }
    }

    /// Records layers `range` applied to `x`, with all parameters read from
    /// `theta` (the full flat vector).
    pub fn build_layers<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        theta: Var,
        x: Var,
        range: std::ops::Range<usize>,
    ) -> Result<Var> {
        let mut h = x;
        for l in range {
            let p = (self.layers[l].param_count() > 0).then_some((theta, self.offsets[l]));
            h = self.build_layer(g, l, p, h)?;
        }
        Ok(h)
    }

    /// Records the whole network.
    pub fn build_forward<S: Scalar>(&self, g: &mut Graph<S>, theta: Var, x: Var) -> Result<Var> {
        self.build_layers(g, theta, x, 0..self.layers.len())
    }

    /// `f_L ∘ … ∘ f_1 (X)` for a `d₀ × N` data matrix.
    pub fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.activations(x)?.pop().expect("non-empty"))
    }

    /// Inputs of every layer followed by the network output:
    /// `[X, f_1(X), f_2∘f_1(X), …]` (length `num_layers + 1`).
    pub fn activations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        x.ensure_finite("network input")?;
        let mut g = Graph::<f64>::new();
        let theta = g.leaf(self.params.clone());
        let mut h = g.leaf(x.clone());
        let mut out = vec![x.clone()];
        for l in 0..self.layers.len() {
            h = self.build_layers(&mut g, theta, h, l..l + 1)?;
            out.push(g.value(h).clone());
        }
        out.last().expect("output").ensure_finite("network output")?;
        Ok(out)
    }

    /// Sets every batch-norm layer's stored statistics to the batch statistics
    /// of its incoming activations on `x`.
    pub fn calibrate_batch_norm(&mut self, x: &Tensor) -> Result<()> {
        let acts = self.activations(x)?;
        for (l, layer) in self.layers.iter_mut().enumerate() {
            if layer.kind != LayerKind::BatchNorm {
                continue;
            }
            let h = &acts[l];
            let (r, c) = (h.rows(), h.cols());
            for i in 0..r {
                let row = &h.data()[i * c..(i + 1) * c];
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
                layer.running_mean[i] = mean;
                layer.running_var[i] = var;
            }
        }
        Ok(())
    }

    /// Copy with every batch-norm layer switched to `mode`; statistics are kept.
    pub fn with_bn_mode(&self, mode: BnMode) -> Self {
        let mut net = self.clone();
        for layer in &mut net.layers {
            if layer.kind == LayerKind::BatchNorm {
                layer.bn_mode = Some(mode);
            }
        }
        net
    }

    /// Copy with batch norm in eval mode, statistics calibrated on `x`.
    pub fn eval_copy(&self, x: &Tensor) -> Result<Self> {
        let mut net = self.with_bn_mode(BnMode::Train);
        if net.layers.iter().any(|l| l.kind == LayerKind::BatchNorm) {
            net.calibrate_batch_norm(x)?;
        }
        Ok(net.with_bn_mode(BnMode::Eval))
    }

    /// Jacobian of layer `l` with respect to its incoming activations on `x`.
    pub fn layer_io_jacobian(&self, l: usize, x: &Tensor) -> Result<LinearOperator<'_>> {
        self.check_index(l)?;
        let acts = self.activations(x)?;
        let h = acts[l].clone();
        let out_shape = acts[l + 1].shape().to_vec();
        let map = LayerInputMap { net: self, l };
        let dim_in = h.len();
        let dim_out = acts[l + 1].len();
        let h2 = h.clone();
        let in_shape = h.shape().to_vec();
        Ok(LinearOperator::general(
            dim_in,
            dim_out,
            move |v| {
                let v = Tensor::new(in_shape.clone(), v.to_vec())?;
                Ok(autodiff::jvp(&map, &h, &v)?.into_data())
            },
            move |u| {
                let u = Tensor::new(out_shape.clone(), u.to_vec())?;
                Ok(autodiff::vjp(&map, &h2, &u)?.into_data())
            },
        ))
    }

    /// Derivative of layer `l`'s output with respect to its own parameters
    /// `θ_l`, at the activations produced by `x`.
    pub fn layer_param_derivative(&self, l: usize, x: &Tensor) -> Result<LinearOperator<'_>> {
        self.check_index(l)?;
        if self.layers[l].param_count() == 0 {
            return Err(Error::ParameterFree(l));
        }
        let acts = self.activations(x)?;
        let map = LayerParamMap {
            net: self,
            l,
            input: acts[l].clone(),
        };
        let theta_l = Tensor::vector(self.params.data()[self.param_range(l)].to_vec());
        let theta_l2 = theta_l.clone();
        let out_shape = acts[l + 1].shape().to_vec();
        let dim_out = acts[l + 1].len();
        let map2 = map.clone();
        Ok(LinearOperator::general(
            theta_l.len(),
            dim_out,
            move |v| Ok(autodiff::jvp(&map, &theta_l, &Tensor::vector(v.to_vec()))?.into_data()),
            move |u| {
                let u = Tensor::new(out_shape.clone(), u.to_vec())?;
                Ok(autodiff::vjp(&map2, &theta_l2, &u)?.into_data())
            },
        ))
    }

    pub fn to_spec(&self) -> NetworkSpec {
        NetworkSpec {
            layers: self.layers.clone(),
        }
    }

    /// Writes `<stem>.json` (architecture) and `<stem>.params` (little-endian f64).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.layers)?,
        )?;
        fs::write(dir.join(format!("{stem}.params")), encode_params(self.params.data()))?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json = fs::read_to_string(dir.join(format!("{stem}.json")))?;
        let layers: Vec<Layer> = serde_json::from_str(&json)?;
        let mut net = LayeredNetwork::new(layers)?;
        let bytes = fs::read(dir.join(format!("{stem}.params")))?;
        net.set_params(Tensor::vector(decode_params(&bytes)?))?;
        Ok(net)
    }
}

/// Architecture document: the JSON form is a bare list of layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NetworkSpec {
    pub layers: Vec<Layer>,
}

pub fn encode_params(p: &[f64]) -> Vec<u8> {
    p.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Shape(format!(
            "parameter file of {} bytes is not a whole number of f64s",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// `θ ↦ F_X(θ)` for fixed data.
#[derive(Clone, Copy)]
pub struct ParamMap<'a> {
    pub net: &'a LayeredNetwork,
    pub x: &'a Tensor,
}

impl Program for ParamMap<'_> {
    fn build<S: Scalar>(&self, g: &mut Graph<S>, theta: Var) -> Result<Var> {
        let x = g.constant(self.x);
        self.net.build_forward(g, theta, x)
    }
}

/// `X ↦ f(X)` (optionally softmaxed) for fixed parameters.
#[derive(Clone, Copy)]
pub struct InputMap<'a> {
    pub net: &'a LayeredNetwork,
    pub softmaxed: bool,
}

impl Program for InputMap<'_> {
    fn build<S: Scalar>(&self, g: &mut Graph<S>, x: Var) -> Result<Var> {
        let theta = g.constant(self.net.params());
        let z = self.net.build_forward(g, theta, x)?;
        Ok(if self.softmaxed { g.softmax_cols(z) } else { z })
    }
}

/// Layer `l` as a function of its incoming activations.
#[derive(Clone, Copy)]
struct LayerInputMap<'a> {
    net: &'a LayeredNetwork,
    l: usize,
}

impl Program for LayerInputMap<'_> {
    fn build<S: Scalar>(&self, g: &mut Graph<S>, h: Var) -> Result<Var> {
        let theta = g.constant(self.net.params());
        let p = (self.net.layers[self.l].param_count() > 0).then_some((theta, self.net.offsets[self.l]));
        self.net.build_layer(g, self.l, p, h)
    }
}

/// Layer `l` as a function of its own parameters.
#[derive(Clone)]
struct LayerParamMap<'a> {
    net: &'a LayeredNetwork,
    l: usize,
    input: Tensor,
}

impl Program for LayerParamMap<'_> {
    fn build<S: Scalar>(&self, g: &mut Graph<S>, theta_l: Var) -> Result<Var> {
        let h = g.constant(&self.input);
        self.net.build_layer(g, self.l, Some((theta_l, 0)), h)
    }
}

/// Columnwise softmax with max subtraction.
pub fn softmax(z: &Tensor) -> Result<Tensor> {
    z.ensure_finite("softmax input")?;
    Ok(autodiff::softmax_columns(z))
}
