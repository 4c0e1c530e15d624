use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamState};
use super::network::{forward, loss_and_grad, Mode, BATCHNORM_MOMENTUM, LOG_PROB_FLOOR};
use super::spec::ModelSpec;
use super::weights::WeightSet;
use crate::encode::EncodedDataset;
use crate::error::{Error, Result};
use crate::seeds::rng_from;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} {b} outside (0, 1)"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_accuracy: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    /// Number of epochs whose loss exceeds the previous epoch's.
    pub fn loss_upticks(&self) -> usize {
        self.epochs.windows(2).filter(|w| w[1].train_loss > w[0].train_loss).count()
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: ArrayView1<'_, f32>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch Adam training. The input weights are left untouched; the
/// optimizer state starts fresh on every call.
///
/// Each epoch is scored after its last update: one pass over the whole
/// training set with dropout off and batch statistics taken from that set.
pub fn train(
    weights: &WeightSet,
    spec: &ModelSpec,
    dataset: &EncodedDataset,
    config: &TrainConfig,
) -> Result<(WeightSet, TrainHistory)> {
    config.validate()?;
    weights.check_matches(spec)?;
    let mut w = weights.clone();
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok((w, history));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dataset.feature_width() != spec.input_dim || dataset.num_classes() != spec.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset is {}x{} features / {} classes, model expects {} / {}",
            dataset.len(),
            dataset.feature_width(),
            dataset.num_classes(),
            spec.input_dim,
            spec.num_classes
        )));
    }

    let classes = dataset.class_indices();
    let bn_tensors: Vec<(usize, usize)> = (0..spec.hidden_dims.len())
        .filter(|_| spec.use_batchnorm)
        .map(|i| {
            let rm = w.layers.iter().position(|t| t.name == format!("bn{i}.running_mean")).expect("bn layer");
            (rm, rm + 1)
        })
        .collect();
    let momentum = BATCHNORM_MOMENTUM as f32;

    let mut state = AdamState::new(&w);
    let mut rng = rng_from(config.shuffle_seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let x = dataset.features.select(Axis(0), chunk);
            let y = dataset.labels.select(Axis(0), chunk);
            let lg = loss_and_grad(&w, spec, x.view(), y.view(), &mut rng)?;
            step += 1;
            adam_update(&mut w, &lg.gradients, &mut state, config, step)?;
            for ((rm, rv), (mean, var)) in bn_tensors.iter().zip(&lg.batch_stats) {
                for (r, &m) in w.layers[*rm].values.iter_mut().zip(mean) {
                    *r = momentum * *r + (1.0 - momentum) * m;
                }
                for (r, &v) in w.layers[*rv].values.iter_mut().zip(var) {
                    *r = momentum * *r + (1.0 - momentum) * v;
                }
            }
        }
        history.epochs.push(fit_objective(&w, spec, dataset, &classes)?);
    }
    w.check_finite()?;
    Ok((w, history))
}

fn fit_objective(w: &WeightSet, spec: &ModelSpec, dataset: &EncodedDataset, classes: &[usize]) -> Result<EpochRecord> {
    // Fit mode never draws from the generator
    let (probs, _) = forward(w, spec, dataset.features.view(), Mode::Fit, &mut rng_from(0))?;
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for (row, &c) in probs.rows().into_iter().zip(classes) {
        loss -= (row[c] as f64).max(LOG_PROB_FLOOR).ln();
        correct += usize::from(argmax(row) == c);
    }
    let n = dataset.len() as f64;
    Ok(EpochRecord { train_accuracy: correct as f64 / n, train_loss: loss / n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub classes: Vec<usize>,
    pub probabilities: Array2<f32>,
}

const PREDICT_CHUNK: usize = 512;

/// Eval-mode class probabilities and argmax labels for every row.
pub fn predict(weights: &WeightSet, spec: &ModelSpec, dataset: &EncodedDataset) -> Result<Prediction> {
    if dataset.feature_width() != spec.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} feature columns, model expects {}",
            dataset.feature_width(),
            spec.input_dim
        )));
    }
    weights.check_matches(spec)?;
    let mut probabilities = Array2::<f32>::zeros((dataset.len(), spec.num_classes));
    // eval mode never draws from the generator
    let mut rng = rng_from(0);
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + PREDICT_CHUNK).min(dataset.len());
        let rows = dataset.features.slice(ndarray::s![start..end, ..]);
        let (p, _) = forward(weights, spec, rows, Mode::Eval, &mut rng)?;
        probabilities.slice_mut(ndarray::s![start..end, ..]).assign(&p);
        start = end;
    }
    let classes = probabilities.rows().into_iter().map(argmax).collect();
    Ok(Prediction { classes, probabilities })
}
