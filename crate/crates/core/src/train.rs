//! The training driver: minibatch steps, loss-gated multi-shot pruning at
//! epoch boundaries, evaluation and the momentum baseline.

use crate::config::{OptimizerKind, TrainConfig};
use crate::data::{minibatches, one_hot, Batch, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{EpochMetrics, LayerRetention, RunMetrics};
use crate::network::{mse_loss, LayerState, Network};
use crate::prune::{layer_counts, prune_round, retained_percentages, LayerCount, PruneEvent, PruneReport};
use crate::rls::{apply_preconditioned_step, average_input, precondition, PUpdate};
use crate::tensor::{Float, Matrix};

/// Initial value of the loss sentinel that gates pruning.
pub const INITIAL_SENTINEL: f64 = 1e5;

const EVAL_BATCH: usize = 1000;

/// `v ← β·v − lr·(∇ + wd·W)`, `W ← W + v`.
pub fn momentum_step(
    state: &mut LayerState,
    grad: &Matrix,
    lr: Float,
    beta: Float,
    weight_decay: Float,
) -> Result<()> {
    if grad.shape() != state.weights.shape() {
        return Err(Error::dim(format!(
            "gradient {:?} for weights {:?}",
            grad.shape(),
            state.weights.shape()
        )));
    }
    for ((v, w), g) in state
        .velocity
        .data_mut()
        .iter_mut()
        .zip(state.weights.data_mut())
        .zip(grad.data())
    {
        *v = beta * *v - lr * (g + weight_decay * *w);
        *w += *v;
    }
    Ok(())
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax(row: &[Float]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Test precision (%) and mean MSE loss. Inputs are in the original
/// feature space; the network's input mask is applied here.
pub fn evaluate(network: &Network, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_BATCH).min(data.len());
        let idx: Vec<usize> = (start..end).collect();
        let part = data.gather(&idx);
        let input = network.prepare_input(&part.images)?;
        let out = network.predict(&input)?;
        let target = one_hot(&part.labels, data.num_classes);
        if out.shape() != target.shape() {
            return Err(Error::dim(format!(
                "network output {:?} vs {} classes",
                out.shape(),
                data.num_classes
            )));
        }
        correct += (0..out.rows())
            .filter(|&r| argmax(out.row(r)) == part.labels[r])
            .count();
        loss_sum += mse_loss(&out, &target)? as f64 * idx.len() as f64;
        start = end;
    }
    Ok((
        100.0 * correct as f64 / data.len() as f64,
        loss_sum / data.len() as f64,
    ))
}

/// All mutable state of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub network: Network,
    /// Sizes of the unpruned network.
    pub original_counts: Vec<LayerCount>,
    /// Completed epochs.
    pub epochs_done: usize,
    /// Completed minibatch steps `t`.
    pub step: u64,
    pub sentinel: f64,
    pub metrics: RunMetrics,
    pub report: PruneReport,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let p_scale = (config.optimizer == OptimizerKind::Rls).then(|| 1.0 / config.rls.delta);
        let network = Network::new(config.arch.spec(), config.seed, p_scale)?;
        let original_counts = layer_counts(&network)?;
        Ok(Trainer {
            config,
            network,
            original_counts,
            epochs_done: 0,
            step: 0,
            sentinel: INITIAL_SENTINEL,
            metrics: RunMetrics::default(),
            report: PruneReport::default(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done >= self.config.epochs
    }

    /// One optimizer step on a batch in the original feature space.
    /// Returns the batch loss before the update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<f64> {
        let input = self.network.prepare_input(&batch.inputs)?;
        let trace = self.network.forward(&input)?;
        let loss = mse_loss(&trace.output, &batch.targets)?;
        // every gradient is taken at the pre-step weights
        let factors = self.network.backward_factors(&trace, &batch.targets)?;
        let rls = self.config.rls.clone();
        let momentum = self.config.momentum.clone();
        let mut learnable = 0;
        for (i, factor) in factors.iter().enumerate() {
            let Some(factor) = factor else { continue };
            let x = trace.layers[i]
                .input_matrix()
                .ok_or_else(|| Error::State("learnable layer without an input trace".into()))?;
            let eta = self.config.eta_for(learnable);
            let state = self.network.states[i].as_mut().expect("learnable");
            match self.config.optimizer {
                OptimizerKind::Rls => {
                    let p = state
                        .p
                        .as_ref()
                        .ok_or_else(|| Error::State("RLS step without P".into()))?;
                    let xbar = average_input(x)?;
                    let upd = PUpdate::compute(p, &xbar, rls.lambda, rls.k, rls.eps_h).map_err(|e| match e {
                        Error::Singularity { h, floor, .. } => Error::Singularity {
                            layer: learnable,
                            h,
                            floor,
                        },
                        other => other,
                    })?;
                    let g = precondition(p, x, &factor.delta)?;
                    apply_preconditioned_step(state, &g, upd.h, rls.alpha, eta)?;
                    upd.apply(state.p.as_mut().expect("checked above"), rls.lambda, rls.k);
                }
                OptimizerKind::Momentum => {
                    let grad = factor.dense(x)?;
                    momentum_step(state, &grad, momentum.lr, momentum.beta, momentum.weight_decay)?;
                }
            }
            learnable += 1;
        }
        self.step += 1;
        Ok(loss as f64)
    }

    /// Trains one epoch, runs the prune check at its final step, evaluates
    /// on `test` and appends the epoch's metrics.
    pub fn run_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<&EpochMetrics> {
        let epoch = self.epochs_done;
        let batches = minibatches(train, self.config.batch_size, self.config.seed, epoch as u64)?;
        let steps_per_epoch = batches.num_batches() as u64;
        let mut sum = 0.0;
        let mut last = 0.0;
        for batch in batches {
            last = self.train_step(&batch)?;
            sum += last;
        }
        let mean_loss = sum / steps_per_epoch as f64;

        let mut prune_event = false;
        let gate = self.config.q as u64 * steps_per_epoch;
        if self.config.prunes() && self.step > gate && self.step % steps_per_epoch == 0 {
            let j = if self.config.epoch_mean_trigger { mean_loss } else { last };
            if j < self.sentinel {
                self.sentinel = j;
                let sets = prune_round(&mut self.network, self.config.xi)?;
                let (_, n_pct, w_pct) =
                    retained_percentages(&self.original_counts, &layer_counts(&self.network)?);
                self.report.events.push(PruneEvent {
                    epoch: epoch + 1,
                    step: self.step,
                    loss: j,
                    removed: sets
                        .iter()
                        .filter(|s| !s.is_empty())
                        .map(|s| (s.layer, s.kind, s.units.len()))
                        .collect(),
                    retained_nodes_pct: n_pct,
                    retained_weights_pct: w_pct,
                });
                prune_event = true;
            }
        }

        let (precision, test_loss) = evaluate(&self.network, test)?;
        let counts = layer_counts(&self.network)?;
        let (rows, total_nodes_pct, total_weights_pct) =
            retained_percentages(&self.original_counts, &counts);
        self.metrics.epochs.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: mean_loss,
            test_loss,
            precision,
            prune_event,
            sentinel: self.sentinel,
            layers: counts
                .iter()
                .zip(rows)
                .map(|(c, (n, w))| LayerRetention {
                    name: c.name.clone(),
                    nodes_pct: n,
                    weights_pct: w,
                })
                .collect(),
            total_nodes_pct,
            total_weights_pct,
        });
        self.epochs_done += 1;
        Ok(self.metrics.epochs.last().expect("just pushed"))
    }

    /// Runs epochs until `epochs` are complete (capped at the configured
    /// total), calling `after_epoch` after each one.
    pub fn run_until(
        &mut self,
        epochs: usize,
        train: &Dataset,
        test: &Dataset,
        mut after_epoch: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<()> {
        let target = epochs.min(self.config.epochs);
        while self.epochs_done < target {
            self.run_epoch(train, test)?;
            after_epoch(self)?;
        }
        Ok(())
    }
}

/// Applies the configured sample limits.
pub fn limit_datasets(config: &TrainConfig, train: Dataset, test: Dataset) -> (Dataset, Dataset) {
    let cut = |d: Dataset, n: Option<usize>| match n {
        Some(n) if n < d.len() => d.take(n),
        _ => d,
    };
    (cut(train, config.train_limit), cut(test, config.test_limit))
}

/// Full run from a fresh network.
pub fn train(config: TrainConfig, train: &Dataset, test: &Dataset) -> Result<Trainer> {
    let mut trainer = Trainer::new(config)?;
    let epochs = trainer.config.epochs;
    trainer.run_until(epochs, train, test, |_| Ok(()))?;
    Ok(trainer)
}
