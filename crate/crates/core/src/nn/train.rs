use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};
use super::ops::{self, Mode};
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        // lr = 0 is accepted: it is the no-op run used to check freezing.
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// Labelled samples: one input tensor per model branch, batch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar = f32> {
    inputs: Vec<Tensor<T>>,
    labels: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Vec<Tensor<T>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Shape("dataset needs at least one input tensor".into()));
        }
        if inputs.iter().any(|x| x.batch() != labels.len()) {
            return Err(Error::Shape(format!(
                "{} labels but inputs have batch sizes {:?}",
                labels.len(),
                inputs.iter().map(|x| x.batch()).collect::<Vec<_>>()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &[Tensor<T>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: self.inputs.iter().map(|x| x.select(indices)).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, weighted by batch size.
    pub loss: f64,
    /// Training-mode accuracy accumulated while the epoch ran.
    pub accuracy: f64,
}

/// SGD with momentum: `v = μ·v + g`, `p = p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar> {
    lr: T,
    momentum: T,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr: T::from_f64(lr),
            momentum: T::from_f64(momentum),
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &Gradients<T>) -> Result<()> {
        for (name, g) in grads {
            if !model.is_trainable_param(name) {
                continue;
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.dims()));
            let p = model
                .param_mut(name)
                .ok_or_else(|| Error::State(format!("gradient for unknown parameter `{name}`")))?;
            if p.dims() != g.dims() {
                return Err(Error::Shape(format!("gradient `{name}` has dims {:?}", g.dims())));
            }
            for ((p, v), &g) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = self.momentum * *v + g;
                *p = *p - self.lr * *v;
            }
        }
        Ok(())
    }
}

/// Batch boundaries for one epoch. A trailing batch of one sample is merged
/// into the previous batch so batch-norm statistics stay defined.
fn batch_ranges(n: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n)
        .step_by(batch)
        .map(|lo| (lo, (lo + batch).min(n)))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|&(lo, hi)| hi - lo == 1) {
        let (_, hi) = out.pop().expect("non-empty");
        out.last_mut().expect("two batches").1 = hi;
    }
    out
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Trains in place and returns the per-epoch trace.
pub fn train<T: Scalar>(model: &mut Model<T>, data: &Dataset<T>, cfg: &TrainConfig) -> Result<Vec<EpochStats>> {
    train_with(model, data, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("cannot train on an empty dataset".into()));
    }
    let classes = model.output_width()?;
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::Domain(format!("label {bad} outside head width {classes}")));
    }
    model.set_mode(Mode::Train);

    // Frozen leading layers always run in evaluation behaviour, so their
    // outputs are computed once instead of every batch.
    let starts = model.frozen_prefix();
    let inputs = if starts.iter().any(|&s| s > 0) {
        model.forward_prefix(data.inputs(), &starts)?
    } else {
        data.inputs().to_vec()
    };
    let data = Dataset::new(inputs, data.labels().to_vec())?;

    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(ops::mix64(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, (lo, hi)) in batch_ranges(data.len(), cfg.batch_size).into_iter().enumerate() {
            let batch = data.select(&order[lo..hi]);
            let (loss, grads, (tape, logits)) =
                model.backprop_from(batch.inputs(), batch.labels(), Some(starts.clone()))?;
            if !loss.is_finite() || grads.values().any(|g| !g.all_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
            model.absorb(&tape);
            opt.step(model, &grads)?;
            model.advance_step();
            loss_sum += loss.as_f64() * (hi - lo) as f64;
            correct += (0..logits.batch())
                .filter(|&r| argmax(logits.row(r)) == batch.labels()[r])
                .count();
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats);
        trace.push(stats);
    }
    Ok(trace)
}
