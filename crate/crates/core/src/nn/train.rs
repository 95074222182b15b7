use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AdamState, Mlp, Workspace};
use crate::error::{Error, Result};
use crate::rng;

/// Learning-rate / decay grid; every combination is trained from the same initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub learning_rates: Vec<f64>,
    pub decays: Vec<f64>,
}

impl HyperGrid {
    /// 6 learning rates x 4 decay rates.
    pub fn extended() -> Self {
        Self {
            learning_rates: vec![5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2],
            decays: vec![0.9995, 0.999, 0.995, 0.99],
        }
    }

    fn cells(&self) -> Vec<(f64, f64)> {
        self.learning_rates
            .iter()
            .flat_map(|&lr| self.decays.iter().map(move |&d| (lr, d)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Per-epoch learning-rate factor.
    pub lr_decay: f64,
    /// Train on per-coordinate standardized inputs; folded back into the first layer.
    pub standardize_inputs: bool,
    /// When set, replaces `lr` / `lr_decay` by a search over the grid.
    pub grid: Option<HyperGrid>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 64,
            lr: 1e-3,
            lr_decay: 0.999,
            standardize_inputs: true,
            grid: None,
        }
    }
}

/// Affine map applied to raw network outputs during training: `y = shift + scale * net(x)`.
/// Folded into the output layer afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputAffine {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Training loss over a fixed sample set.
pub trait Objective {
    /// Sum of per-sample losses for samples `idx` given network outputs `y`
    /// (`idx.len() x n_out`); writes the loss gradient w.r.t. `y` into `dy`.
    fn eval(&mut self, idx: &[usize], y: &[f64], dy: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub lr: f64,
    pub lr_decay: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub net: Mlp,
    /// Mean training loss per epoch (minibatch losses averaged over the epoch).
    pub curve: Vec<f64>,
    /// Mean loss over the full sample set after training.
    pub final_loss: f64,
    pub lr: f64,
    pub lr_decay: f64,
    /// All grid cells, in grid order (one entry without a grid).
    pub cells: Vec<CellResult>,
}

/// Serializable record of a training run, without the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub final_loss: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub curve: Vec<f64>,
    pub cells: Vec<CellResult>,
}

impl TrainOutcome {
    pub fn summary(&self) -> TrainSummary {
        TrainSummary {
            final_loss: self.final_loss,
            lr: self.lr,
            lr_decay: self.lr_decay,
            curve: self.curve.clone(),
            cells: self.cells.clone(),
        }
    }
}

struct Stats {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

fn column_stats(x: &[f64], n: usize, dim: usize) -> Stats {
    let mut shift = vec![0.0; dim];
    let mut scale = vec![1.0; dim];
    for d in 0..dim {
        let mean = (0..n).map(|i| x[i * dim + d]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (x[i * dim + d] - mean) * (x[i * dim + d] - mean))
            .sum::<f64>()
            / n as f64;
        shift[d] = mean;
        let sd = libm::sqrt(var);
        scale[d] = if sd > 1e-12 { sd } else { 1.0 };
    }
    Stats { shift, scale }
}

/// Mean loss of `net` over all samples.
fn full_loss(net: &Mlp, inputs: &[f64], n: usize, objective: &mut dyn Objective) -> f64 {
    let (n_in, n_out) = (net.n_in(), net.n_out());
    let mut ws = Workspace::default();
    let chunk = 256;
    let mut total = 0.0;
    let mut dy = vec![0.0; chunk * n_out];
    let mut idx = Vec::with_capacity(chunk);
    for start in (0..n).step_by(chunk) {
        let end = (start + chunk).min(n);
        idx.clear();
        idx.extend(start..end);
        let y = net
            .forward_batch(&inputs[start * n_in..end * n_in], end - start, &mut ws)
            .to_vec();
        total += objective.eval(&idx, &y, &mut dy[..(end - start) * n_out]);
    }
    total / n as f64
}

fn train_cell(
    arch: &[usize],
    inputs: &[f64],
    normalized: &[f64],
    n: usize,
    objective: &mut dyn Objective,
    cfg: &TrainConfig,
    (lr, decay): (f64, f64),
    stats: &Stats,
    out: Option<&OutputAffine>,
    seed: u64,
) -> Result<TrainOutcome> {
    let n_in = arch[0];
    let n_out = *arch.last().expect("non-empty architecture");
    let mut net = Mlp::new(arch, rng::derive_seed(seed, 0))?;
    let mut adam = AdamState::new(net.params.len(), lr, decay);
    let mut shuffle = rng::stream(seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    let bs = cfg.batch_size.max(1).min(n);
    let mut ws = Workspace::default();
    let mut xb = vec![0.0; bs * n_in];
    let mut y = vec![0.0; bs * n_out];
    let mut dy = vec![0.0; bs * n_out];
    let mut grad = vec![0.0; net.params.len()];
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(bs) {
            let b = idx.len();
            for (k, &i) in idx.iter().enumerate() {
                xb[k * n_in..(k + 1) * n_in].copy_from_slice(&normalized[i * n_in..(i + 1) * n_in]);
            }
            let raw = net.forward_batch(&xb[..b * n_in], b, &mut ws);
            y[..b * n_out].copy_from_slice(raw);
            if let Some(a) = out {
                for row in y[..b * n_out].chunks_exact_mut(n_out) {
                    for o in 0..n_out {
                        row[o] = a.shift[o] + a.scale[o] * row[o];
                    }
                }
            }
            let loss = objective.eval(idx, &y[..b * n_out], &mut dy[..b * n_out]);
            if !loss.is_finite() {
                return Err(Error::TrainingFailure {
                    epoch,
                    reason: "non-finite loss",
                });
            }
            epoch_loss += loss;
            let inv = 1.0 / b as f64;
            for row in dy[..b * n_out].chunks_exact_mut(n_out) {
                for o in 0..n_out {
                    row[o] *= inv * out.map_or(1.0, |a| a.scale[o]);
                }
            }
            grad.iter_mut().for_each(|g| *g = 0.0);
            net.backward_batch(&mut ws, &dy[..b * n_out], &mut grad, None);
            adam.step(&mut net.params, &grad, epoch)?;
        }
        curve.push(epoch_loss / n as f64);
    }

    net.fold_input_affine(&stats.shift, &stats.scale);
    if let Some(a) = out {
        net.fold_output_affine(&a.shift, &a.scale);
    }
    let final_loss = full_loss(&net, inputs, n, objective);
    if !final_loss.is_finite() {
        return Err(Error::TrainingFailure {
            epoch: cfg.epochs,
            reason: "non-finite loss",
        });
    }
    Ok(TrainOutcome {
        net,
        curve,
        final_loss,
        lr,
        lr_decay: decay,
        cells: Vec::new(),
    })
}

/// Minibatch Adam training of a fresh network of widths `arch` on `n` samples.
///
/// `inputs` holds raw `n x arch[0]` samples. The returned network maps raw inputs to raw
/// outputs; any standardization used during training has been folded into its weights.
/// With a hyperparameter grid, every cell starts from the same initialization and data
/// order, and the cell with the lowest final loss is returned.
pub fn train(
    arch: &[usize],
    inputs: &[f64],
    n: usize,
    objective: &mut dyn Objective,
    cfg: &TrainConfig,
    output_affine: Option<&OutputAffine>,
    seed: u64,
) -> Result<TrainOutcome> {
    if n == 0 {
        return Err(Error::EmptyInput("training samples"));
    }
    if arch.len() < 2 {
        return Err(Error::InvalidProblem(
            "architecture needs input and output widths".into(),
        ));
    }
    crate::error::check_len("training inputs", n * arch[0], inputs.len())?;
    let n_in = arch[0];
    let stats = if cfg.standardize_inputs {
        column_stats(inputs, n, n_in)
    } else {
        Stats {
            shift: vec![0.0; n_in],
            scale: vec![1.0; n_in],
        }
    };
    let normalized: Vec<f64> = inputs
        .chunks_exact(n_in)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(d, v)| (v - stats.shift[d]) / stats.scale[d])
        })
        .collect();

    let cells = match &cfg.grid {
        Some(g) => g.cells(),
        None => vec![(cfg.lr, cfg.lr_decay)],
    };
    let mut best: Option<TrainOutcome> = None;
    let mut summary = Vec::with_capacity(cells.len());
    for cell in cells {
        let outcome = train_cell(
            arch,
            inputs,
            &normalized,
            n,
            objective,
            cfg,
            cell,
            &stats,
            output_affine,
            seed,
        )?;
        summary.push(CellResult {
            lr: outcome.lr,
            lr_decay: outcome.lr_decay,
            final_loss: outcome.final_loss,
        });
        if best
            .as_ref()
            .map_or(true, |b| outcome.final_loss < b.final_loss)
        {
            best = Some(outcome);
        }
    }
    let mut best = best.expect("at least one cell");
    best.cells = summary;
    Ok(best)
}
