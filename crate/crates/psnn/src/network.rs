//! The two-net model: a parameter net and a solution net whose outputs meet
//! in an inner product.
//!
//! Both nets are plain ReLU multilayer perceptrons with an affine output
//! layer. The solution channel squashes the inner product through a scaled
//! sigmoid whose range is widened to (-eta, 1+eta) so it can reach target
//! values above 1 where bumps overlap; the stability channel leaves the
//! inner product bare because its targets are signed.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::numerics::{affine_into, dot, DenseMatrix, RandomSource};
use crate::target::Channel;
use crate::{Error, Result};

/// Logistic function, numerically stable on both tails.
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid rescaled to the range (-eta, 1 + eta).
pub fn scaled_sigmoid(t: f64, eta: f64) -> f64 {
    (1.0 + 2.0 * eta) * logistic(t) - eta
}

/// Derivative of [`scaled_sigmoid`] with respect to its argument.
pub fn scaled_sigmoid_derivative(t: f64, eta: f64) -> f64 {
    let s = logistic(t);
    (1.0 + 2.0 * eta) * s * (1.0 - s)
}

/// Shape of one ReLU perceptron: `depth` hidden layers of equal width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub depth: usize,
    pub width: usize,
    pub output_dim: usize,
}

impl MlpSpec {
    /// (rows, cols) of each affine layer from input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth + 1);
        let mut prev = self.input_dim;
        for _ in 0..self.depth {
            dims.push((self.width, prev));
            prev = self.width;
        }
        dims.push((self.output_dim, prev));
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("perceptron needs nonzero input and output dims".into()));
        }
        if self.depth > 0 && self.width == 0 {
            return Err(Error::Config("hidden width must be nonzero".into()));
        }
        Ok(())
    }
}

/// One affine layer's weights and bias.
#[derive(Debug, Clone)]
pub struct AffineLayer {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

/// A ReLU perceptron: hidden layers apply ReLU, the output layer does not.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<AffineLayer>,
}

/// Per-layer activations retained for backpropagation. `post[l]` is layer
/// l's output after its activation; `pre` keeps hidden pre-activations for
/// the ReLU mask.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn for_mlp(mlp: &Mlp) -> Self {
        let sizes: Vec<usize> = mlp.layers.iter().map(|l| l.weight.rows()).collect();
        Self {
            pre: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            post: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.post.last().expect("trace for an empty perceptron")
    }
}

impl Mlp {
    /// He-initialized weights (normal with std sqrt(2 / fan_in)) and zero
    /// biases on every layer, output included.
    pub fn init(spec: &MlpSpec, rng: &mut RandomSource) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(rows, cols)| {
                let std = (2.0 / cols as f64).sqrt();
                let mut weight = DenseMatrix::zeros(rows, cols);
                for w in weight.as_mut_slice() {
                    *w = std * rng.normal();
                }
                AffineLayer { weight, bias: vec![0.0; rows] }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.rows()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    /// Forward pass writing activations into the trace; the output lands in
    /// the trace's last slot.
    pub fn forward_trace(&self, x: &[f64], trace: &mut MlpTrace) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            // Split borrows: input of layer l is x or post[l-1].
            let (head, tail) = trace.pre.split_at_mut(l);
            let pre = &mut tail[0];
            let input: &[f64] = if l == 0 { x } else { &trace.post[l - 1] };
            let _ = head;
            affine_into(&layer.weight, input, &layer.bias, pre);
            trace.post[l].copy_from_slice(pre);
            if l != last {
                for v in trace.post[l].iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
    }

    /// Allocating convenience forward pass.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut trace = MlpTrace::for_mlp(self);
        self.forward_trace(x, &mut trace);
        trace.output().to_vec()
    }

    /// Backpropagates `upstream` (gradient at the output) through the net,
    /// accumulating parameter gradients. Uses the activations of the last
    /// `forward_trace` call with the same input. The ReLU derivative at
    /// exactly zero is taken as zero.
    pub fn backward(
        &self,
        x: &[f64],
        trace: &mut MlpTrace,
        upstream: &[f64],
        grad: &mut [LayerGradient],
    ) {
        let last = self.layers.len() - 1;
        trace.delta[last].copy_from_slice(upstream);
        for l in (0..=last).rev() {
            let input: &[f64] = if l == 0 { x } else { &trace.post[l - 1] };
            let layer = &self.layers[l];
            let rows = layer.weight.rows();
            let cols = layer.weight.cols();
            {
                let delta = &trace.delta[l];
                let gw = grad[l].weight.as_mut_slice();
                for r in 0..rows {
                    let d = delta[r];
                    if d != 0.0 {
                        let row = &mut gw[r * cols..(r + 1) * cols];
                        for (g, &xi) in row.iter_mut().zip(input) {
                            *g += d * xi;
                        }
                    }
                    grad[l].bias[r] += d;
                }
            }
            if l > 0 {
                let (head, tail) = trace.delta.split_at_mut(l);
                let prev = &mut head[l - 1];
                let delta = &tail[0];
                let w = layer.weight.as_slice();
                prev.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..rows {
                    let d = delta[r];
                    if d != 0.0 {
                        let row = &w[r * cols..(r + 1) * cols];
                        for (p, &wi) in prev.iter_mut().zip(row) {
                            *p += d * wi;
                        }
                    }
                }
                for (p, &z) in prev.iter_mut().zip(&trace.pre[l - 1]) {
                    if z <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
        }
    }
}

/// Shape of the whole two-net model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PsnnSpec {
    pub theta_dim: usize,
    pub u_dim: usize,
    /// Shared output dimension of both nets (the truncation rank).
    pub inner_dim: usize,
    pub pnn_depth: usize,
    pub pnn_width: usize,
    pub snn_depth: usize,
    pub snn_width: usize,
}

impl PsnnSpec {
    pub fn pnn_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.theta_dim,
            depth: self.pnn_depth,
            width: self.pnn_width,
            output_dim: self.inner_dim,
        }
    }

    pub fn snn_spec(&self) -> MlpSpec {
        MlpSpec {
            input_dim: self.u_dim,
            depth: self.snn_depth,
            width: self.snn_width,
            output_dim: self.inner_dim,
        }
    }
}

/// The trained (or training) model for one channel.
#[derive(Debug, Clone)]
pub struct PsnnModel {
    pub spec: PsnnSpec,
    pub channel: Channel,
    /// Sigmoid range extension; ignored by the stability channel.
    pub eta: f64,
    pub pnn: Mlp,
    pub snn: Mlp,
}

impl PsnnModel {
    pub fn init(spec: PsnnSpec, channel: Channel, rng: &mut RandomSource) -> Result<Self> {
        let pnn = Mlp::init(&spec.pnn_spec(), rng)?;
        let snn = Mlp::init(&spec.snn_spec(), rng)?;
        Ok(Self { spec, channel, eta: 0.1, pnn, snn })
    }

    /// Inner product of the two nets' outputs, before any squashing.
    pub fn raw_inner(&self, theta: &[f64], u: &[f64]) -> f64 {
        dot(&self.pnn.forward(theta), &self.snn.forward(u))
    }

    /// The model's prediction of its channel's target field.
    pub fn forward(&self, theta: &[f64], u: &[f64]) -> f64 {
        let raw = self.raw_inner(theta, u);
        match self.channel {
            Channel::Solution => scaled_sigmoid(raw, self.eta),
            Channel::Stability => raw,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.pnn.parameter_count() + self.snn.parameter_count()
    }
}

/// Per-layer gradient (or optimizer moment) storage matching one layer.
#[derive(Debug, Clone)]
pub struct LayerGradient {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

/// Gradients (or moments) for every parameter of a model, in model shape.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub pnn: Vec<LayerGradient>,
    pub snn: Vec<LayerGradient>,
}

fn zeros_like(mlp: &Mlp) -> Vec<LayerGradient> {
    mlp.layers
        .iter()
        .map(|l| LayerGradient {
            weight: DenseMatrix::zeros(l.weight.rows(), l.weight.cols()),
            bias: vec![0.0; l.bias.len()],
        })
        .collect()
}

impl GradientBundle {
    pub fn zeros_for(model: &PsnnModel) -> Self {
        Self { pnn: zeros_like(&model.pnn), snn: zeros_like(&model.snn) }
    }

    pub fn fill_zero(&mut self) {
        for layers in [&mut self.pnn, &mut self.snn] {
            for l in layers.iter_mut() {
                l.weight.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
                l.bias.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Elementwise accumulation; shapes must match.
    pub fn add_assign(&mut self, other: &GradientBundle) {
        for (mine, theirs) in
            self.pnn.iter_mut().chain(self.snn.iter_mut()).zip(other.pnn.iter().chain(&other.snn))
        {
            for (a, b) in mine.weight.as_mut_slice().iter_mut().zip(theirs.weight.as_slice()) {
                *a += b;
            }
            for (a, b) in mine.bias.iter_mut().zip(&theirs.bias) {
                *a += b;
            }
        }
    }
}

/// Reusable scratch space for batch passes over one model.
#[derive(Debug, Clone)]
pub struct BatchWorkspace {
    pnn_trace: MlpTrace,
    snn_trace: MlpTrace,
    pnn_upstream: Vec<f64>,
    snn_upstream: Vec<f64>,
}

impl BatchWorkspace {
    pub fn for_model(model: &PsnnModel) -> Self {
        Self {
            pnn_trace: MlpTrace::for_mlp(&model.pnn),
            snn_trace: MlpTrace::for_mlp(&model.snn),
            pnn_upstream: vec![0.0; model.spec.inner_dim],
            snn_upstream: vec![0.0; model.spec.inner_dim],
        }
    }
}

/// Sum of squared prediction errors over the indexed samples.
pub fn batch_squared_error(
    model: &PsnnModel,
    thetas: &DenseMatrix,
    points: &DenseMatrix,
    targets: &[f64],
    indices: &[usize],
    ws: &mut BatchWorkspace,
) -> f64 {
    let mut sum = 0.0;
    for &i in indices {
        model.pnn.forward_trace(thetas.row(i), &mut ws.pnn_trace);
        model.snn.forward_trace(points.row(i), &mut ws.snn_trace);
        let raw = dot(ws.pnn_trace.output(), ws.snn_trace.output());
        let pred = match model.channel {
            Channel::Solution => scaled_sigmoid(raw, model.eta),
            Channel::Stability => raw,
        };
        let e = pred - targets[i];
        sum += e * e;
    }
    sum
}

/// Sum of squared errors over the indexed samples, with the gradient of that
/// sum accumulated into `grad`. The caller owns any normalization.
pub fn batch_gradient(
    model: &PsnnModel,
    thetas: &DenseMatrix,
    points: &DenseMatrix,
    targets: &[f64],
    indices: &[usize],
    grad: &mut GradientBundle,
    ws: &mut BatchWorkspace,
) -> f64 {
    let mut sum = 0.0;
    for &i in indices {
        let theta = thetas.row(i);
        let u = points.row(i);
        model.pnn.forward_trace(theta, &mut ws.pnn_trace);
        model.snn.forward_trace(u, &mut ws.snn_trace);
        let p = ws.pnn_trace.output();
        let s = ws.snn_trace.output();
        let raw = dot(p, s);
        let (pred, dsquash) = match model.channel {
            Channel::Solution => {
                (scaled_sigmoid(raw, model.eta), scaled_sigmoid_derivative(raw, model.eta))
            }
            Channel::Stability => (raw, 1.0),
        };
        let e = pred - targets[i];
        sum += e * e;
        let factor = 2.0 * e * dsquash;
        for k in 0..model.spec.inner_dim {
            ws.pnn_upstream[k] = factor * s[k];
            ws.snn_upstream[k] = factor * p[k];
        }
        model.pnn.backward(theta, &mut ws.pnn_trace, &ws.pnn_upstream, &mut grad.pnn);
        model.snn.backward(u, &mut ws.snn_trace, &ws.snn_upstream, &mut grad.snn);
    }
    sum
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct LayerData {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointFile {
    version: u32,
    channel: Channel,
    eta: f64,
    seed: u64,
    data_digest: String,
    spec: PsnnSpec,
    pnn: Vec<LayerData>,
    snn: Vec<LayerData>,
}

/// Provenance carried alongside saved weights: the training seed and a
/// digest of the observation file the model was trained on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub data_digest: String,
}

fn layers_to_data(mlp: &Mlp) -> Vec<LayerData> {
    mlp.layers
        .iter()
        .map(|l| LayerData {
            rows: l.weight.rows(),
            cols: l.weight.cols(),
            weights: l.weight.as_slice().to_vec(),
            bias: l.bias.clone(),
        })
        .collect()
}

fn layers_from_data(data: Vec<LayerData>, spec: &MlpSpec) -> Result<Mlp> {
    let dims = spec.layer_dims();
    if data.len() != dims.len() {
        return Err(Error::Contract(format!(
            "checkpoint has {} layers where the spec needs {}",
            data.len(),
            dims.len()
        )));
    }
    let layers = data
        .into_iter()
        .zip(dims)
        .map(|(l, (rows, cols))| {
            if l.rows != rows || l.cols != cols || l.bias.len() != rows {
                return Err(Error::Contract(format!(
                    "checkpoint layer is {}x{} where the spec needs {rows}x{cols}",
                    l.rows, l.cols
                )));
            }
            Ok(AffineLayer { weight: DenseMatrix::from_vec(rows, cols, l.weights)?, bias: l.bias })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mlp { layers })
}

/// Writes the model with full-precision weights as versioned JSON.
pub fn save_checkpoint(path: &Path, model: &PsnnModel, meta: &CheckpointMeta) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        channel: model.channel,
        eta: model.eta,
        seed: meta.seed,
        data_digest: meta.data_digest.clone(),
        spec: model.spec,
        pnn: layers_to_data(&model.pnn),
        snn: layers_to_data(&model.snn),
    };
    let out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(out, &file).map_err(|e| Error::Contract(e.to_string()))?;
    Ok(())
}

/// Reads a checkpoint, refusing unknown versions and shape mismatches. A
/// truncated or corrupt file fails the parse; no partial model escapes.
pub fn load_checkpoint(path: &Path) -> Result<(PsnnModel, CheckpointMeta)> {
    let file: CheckpointFile = serde_json::from_reader(BufReader::new(File::open(path)?))
        .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: file.version, expected: CHECKPOINT_VERSION });
    }
    let pnn = layers_from_data(file.pnn, &file.spec.pnn_spec())?;
    let snn = layers_from_data(file.snn, &file.spec.snn_spec())?;
    Ok((
        PsnnModel { spec: file.spec, channel: file.channel, eta: file.eta, pnn, snn },
        CheckpointMeta { seed: file.seed, data_digest: file.data_digest },
    ))
}
