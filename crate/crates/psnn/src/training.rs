//! Minibatch ADAM training of one channel's model.
//!
//! The loss is the plain mean of squared prediction errors over every sample
//! in the training set. Each epoch reshuffles the samples with a seed derived
//! from the run seed and the epoch index, so a run is a pure function of
//! (initial weights, data, config). Gradients are accumulated in fixed-size
//! chunks that are folded in chunk order, which keeps results bit-identical
//! no matter how many workers the chunk map fans out over.

use rayon::prelude::*;
use std::time::Instant;

use crate::dataset::FlatSamples;
use crate::network::{
    batch_gradient, batch_squared_error, AffineLayer, BatchWorkspace, GradientBundle,
    LayerGradient, PsnnModel, PsnnSpec,
};
use crate::numerics::RandomSource;
use crate::target::Channel;
use crate::{Error, Result};

/// Fixed gradient-accumulation chunk; part of the numeric contract, since
/// changing it reassociates floating-point sums.
const CHUNK: usize = 128;

/// Domain tag separating training's random stream from data generation's.
const TRAIN_STREAM: u64 = 0x7472_6169;

/// Hyperparameters for one training run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
    pub channel: Channel,
}

impl TrainConfig {
    pub fn defaults(channel: Channel, seed: u64) -> Self {
        Self {
            epochs: 2000,
            batch_size: 512,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed,
            channel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie strictly in (0, 1)")));
            }
        }
        if !(self.eps_adam > 0.0) {
            return Err(Error::Config("eps_adam must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment accumulators shaped like the model.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: GradientBundle,
    v: GradientBundle,
    step: u64,
}

impl AdamState {
    pub fn for_model(model: &PsnnModel) -> Self {
        Self {
            m: GradientBundle::zeros_for(model),
            v: GradientBundle::zeros_for(model),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn adam_update_layers(
    layers: &mut [AffineLayer],
    grad: &[LayerGradient],
    m: &mut [LayerGradient],
    v: &mut [LayerGradient],
    cfg: &TrainConfig,
    bias_corr1: f64,
    bias_corr2: f64,
) -> bool {
    let mut finite = true;
    for (((layer, g), mm), vv) in layers.iter_mut().zip(grad).zip(m).zip(v) {
        let params = layer.weight.as_mut_slice().iter_mut().chain(layer.bias.iter_mut());
        let grads = g.weight.as_slice().iter().chain(g.bias.iter());
        let ms = mm.weight.as_mut_slice().iter_mut().chain(mm.bias.iter_mut());
        let vs = vv.weight.as_mut_slice().iter_mut().chain(vv.bias.iter_mut());
        for (((p, &g), m), v) in params.zip(grads).zip(ms).zip(vs) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias_corr1;
            let v_hat = *v / bias_corr2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps_adam);
            finite &= p.is_finite();
        }
    }
    finite
}

/// One bias-corrected ADAM update from a mean gradient. A non-finite result
/// anywhere in the weights aborts with a divergence error.
pub fn adam_step(
    model: &mut PsnnModel,
    grad: &GradientBundle,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let bias_corr1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bias_corr2 = 1.0 - cfg.beta2.powi(state.step as i32);
    let mut finite = adam_update_layers(
        &mut model.pnn.layers,
        &grad.pnn,
        &mut state.m.pnn,
        &mut state.v.pnn,
        cfg,
        bias_corr1,
        bias_corr2,
    );
    finite &= adam_update_layers(
        &mut model.snn.layers,
        &grad.snn,
        &mut state.m.snn,
        &mut state.v.snn,
        cfg,
        bias_corr1,
        bias_corr2,
    );
    if !finite {
        return Err(Error::Diverged {
            epoch: 0,
            message: format!("non-finite weight after optimizer step {}", state.step),
        });
    }
    Ok(())
}

/// Scratch buffers for one gradient-accumulation chunk.
struct ChunkScratch {
    bundle: GradientBundle,
    ws: BatchWorkspace,
    sum: f64,
}

/// Sum of squared errors over `indices`, chunked identically to the gradient
/// path so the two agree bitwise.
fn chunked_squared_error(model: &PsnnModel, flat: &FlatSamples, indices: &[usize]) -> f64 {
    let sums: Vec<f64> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut ws = BatchWorkspace::for_model(model);
            batch_squared_error(model, &flat.thetas, &flat.points, &flat.targets, chunk, &mut ws)
        })
        .collect();
    sums.into_iter().sum()
}

/// Mean squared error of the model over a whole sample set.
pub fn mean_squared_error(model: &PsnnModel, flat: &FlatSamples) -> f64 {
    let indices: Vec<usize> = (0..flat.targets.len()).collect();
    chunked_squared_error(model, flat, &indices) / indices.len() as f64
}

/// Outcome of a training run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    /// Running training loss of each epoch (mean over its minibatches,
    /// evaluated as the batches were visited).
    pub epoch_losses: Vec<f64>,
    pub test_mse: Option<f64>,
    pub wall_seconds: f64,
    /// Set when the loss over the last tenth of the epochs was not
    /// non-increasing under a 5-epoch moving average.
    pub nonconvergence_warning: bool,
    /// Sigmoid range extension the run settled on.
    pub eta: f64,
}

/// True when the tail of the loss curve is still moving upward: the 5-epoch
/// moving average over the last tenth of the epochs must be non-increasing.
pub fn nonconvergence_warning(losses: &[f64]) -> bool {
    let n = losses.len();
    let tail_len = (n / 10).max(6).min(n);
    let tail = &losses[n - tail_len..];
    if tail.len() < 6 {
        return false;
    }
    let ma: Vec<f64> = tail.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    ma.windows(2).any(|w| w[1] > w[0])
}

/// Runs minibatch ADAM for the configured number of epochs.
///
/// For the solution channel the sigmoid extension is first set from the
/// training targets: 5% above what the largest target needs, floored at 0.1.
/// Returns the loss history; the trained weights stay in `model`.
pub fn train(
    model: &mut PsnnModel,
    train_set: &FlatSamples,
    test_set: Option<&FlatSamples>,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    if cfg.channel != model.channel {
        return Err(Error::Contract(format!(
            "config channel {} does not match model channel {}",
            cfg.channel, model.channel
        )));
    }
    let n = train_set.targets.len();
    if n == 0 {
        return Err(Error::Contract("empty training set".into()));
    }
    if model.channel == Channel::Solution {
        let max_target = train_set.targets.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        model.eta = (max_target - 1.0 + 0.05).max(0.1);
    }

    let start = Instant::now();
    let base = RandomSource::from_seed(cfg.seed).child(TRAIN_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    let mut state = AdamState::for_model(model);
    let mut grad = GradientBundle::zeros_for(model);
    let chunks_per_batch = cfg.batch_size.div_ceil(CHUNK);
    let mut pool: Vec<ChunkScratch> = (0..chunks_per_batch)
        .map(|_| ChunkScratch {
            bundle: GradientBundle::zeros_for(model),
            ws: BatchWorkspace::for_model(model),
            sum: 0.0,
        })
        .collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = base.child(epoch as u64);
        rng.shuffle(&mut order);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let n_chunks = batch.len().div_ceil(CHUNK);
            pool[..n_chunks].par_iter_mut().zip(batch.par_chunks(CHUNK)).for_each(
                |(scratch, chunk)| {
                    scratch.bundle.fill_zero();
                    scratch.sum = batch_gradient(
                        model,
                        &train_set.thetas,
                        &train_set.points,
                        &train_set.targets,
                        chunk,
                        &mut scratch.bundle,
                        &mut scratch.ws,
                    );
                },
            );
            grad.fill_zero();
            let mut batch_sum = 0.0;
            for scratch in &pool[..n_chunks] {
                grad.add_assign(&scratch.bundle);
                batch_sum += scratch.sum;
            }
            if !batch_sum.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("batch loss became non-finite ({batch_sum})"),
                });
            }
            epoch_sum += batch_sum;
            let scale = 1.0 / batch.len() as f64;
            for layers in [&mut grad.pnn, &mut grad.snn] {
                for l in layers.iter_mut() {
                    l.weight.as_mut_slice().iter_mut().for_each(|g| *g *= scale);
                    l.bias.iter_mut().for_each(|g| *g *= scale);
                }
            }
            adam_step(model, &grad, &mut state, cfg).map_err(|e| match e {
                Error::Diverged { message, .. } => Error::Diverged { epoch, message },
                other => other,
            })?;
        }
        epoch_losses.push(epoch_sum / n as f64);
    }

    let test_mse = test_set.map(|t| mean_squared_error(model, t));
    Ok(LossReport {
        nonconvergence_warning: nonconvergence_warning(&epoch_losses),
        epoch_losses,
        test_mse,
        wall_seconds: start.elapsed().as_secs_f64(),
        eta: model.eta,
    })
}

/// One architecture tried by a convergence sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SweepCell {
    pub inner_dim: usize,
    pub pnn_depth: usize,
    pub pnn_width: usize,
    pub snn_depth: usize,
    pub snn_width: usize,
}

impl SweepCell {
    pub fn spec(&self, theta_dim: usize, u_dim: usize) -> PsnnSpec {
        PsnnSpec {
            theta_dim,
            u_dim,
            inner_dim: self.inner_dim,
            pnn_depth: self.pnn_depth,
            pnn_width: self.pnn_width,
            snn_depth: self.snn_depth,
            snn_width: self.snn_width,
        }
    }
}

/// Outcome of one (architecture, seed) training run.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub seed: u64,
    pub test_mse: f64,
    pub seconds: f64,
}

/// A run that diverged instead of finishing.
#[derive(Debug, Clone)]
pub struct SweepFailure {
    pub cell: SweepCell,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

/// Domain tag separating weight initialization from everything else.
const INIT_STREAM: u64 = 0x7377_6565;

/// Initializes a model from a bare seed, using the same stream tag everywhere
/// so sweeps, the CLI, and tests produce identical weights for equal seeds.
pub fn init_model(spec: PsnnSpec, channel: Channel, seed: u64) -> Result<PsnnModel> {
    let mut rng = RandomSource::from_seed(seed).child(INIT_STREAM);
    PsnnModel::init(spec, channel, &mut rng)
}

/// Trains every architecture with every seed on the same data and records the
/// held-out error. Diverged runs land in `failures` instead of aborting the
/// sweep; any other error stops it.
pub fn convergence_sweep(
    cells: &[SweepCell],
    seeds: &[u64],
    train_flat: &FlatSamples,
    test_flat: &FlatSamples,
    base: &TrainConfig,
    theta_dim: usize,
    u_dim: usize,
) -> Result<SweepOutcome> {
    let mut outcome = SweepOutcome::default();
    for cell in cells {
        for &seed in seeds {
            let mut model = init_model(cell.spec(theta_dim, u_dim), base.channel, seed)?;
            let mut cfg = base.clone();
            cfg.seed = seed;
            match train(&mut model, train_flat, Some(test_flat), &cfg) {
                Ok(report) => outcome.rows.push(SweepRow {
                    cell: *cell,
                    seed,
                    test_mse: report.test_mse.expect("test set was supplied"),
                    seconds: report.wall_seconds,
                }),
                Err(Error::Diverged { epoch, message }) => outcome.failures.push(SweepFailure {
                    cell: *cell,
                    seed,
                    message: format!("diverged at epoch {epoch}: {message}"),
                }),
                Err(other) => return Err(other),
            }
        }
    }
    Ok(outcome)
}

/// Writes sweep rows as CSV. Every column except `seconds` is a pure function
/// of the inputs; `seconds` is wall time and varies run to run.
pub fn write_sweep_csv(path: &std::path::Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("N,L1,W1,L2,W2,seed,test_mse,seconds\n");
    for r in rows {
        let c = &r.cell;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3}\n",
            c.inner_dim,
            c.pnn_depth,
            c.pnn_width,
            c.snn_depth,
            c.snn_width,
            r.seed,
            r.test_mse,
            r.seconds
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
