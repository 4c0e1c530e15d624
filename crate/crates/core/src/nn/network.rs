use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::spec::ModelSpec;
use super::weights::WeightSet;
use super::Scalar;
use crate::error::{Error, Result};

/// Weight of the previous running statistic in each batchnorm update.
pub const BATCHNORM_MOMENTUM: f64 = 0.9;
pub const BATCHNORM_EPSILON: f64 = 1e-5;
/// Probabilities are clamped here before taking the log in the loss.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout.
    Train,
    /// Running statistics, no dropout.
    Eval,
    /// Batch statistics, no dropout.
    Fit,
}

#[derive(Debug, Clone)]
struct HiddenCache<F> {
    /// Normalized pre-activations and inverse std (train-mode batchnorm only).
    batchnorm: Option<(Array2<F>, Array1<F>)>,
    /// Input to the ReLU.
    pre_activation: Array2<F>,
    /// Scaled keep mask, present when dropout was applied.
    dropout_mask: Option<Array2<F>>,
    /// Output of the layer, i.e. the input of the next one.
    output: Array2<F>,
}

/// Intermediate values from [`forward`] needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    hidden: Vec<HiddenCache<F>>,
    mode: Mode,
    /// Per batchnorm layer `(mean, biased variance)` of the batch (train mode).
    pub batch_stats: Vec<(Array1<F>, Array1<F>)>,
}

/// Index of each hidden layer's tensors inside a [`WeightSet`].
struct HiddenSlots {
    weight: usize,
    bias: usize,
    /// gamma, beta, running_mean, running_var
    batchnorm: Option<[usize; 4]>,
}

fn slots(spec: &ModelSpec) -> (Vec<HiddenSlots>, usize, usize) {
    let stride = if spec.use_batchnorm { 6 } else { 2 };
    let hidden = (0..spec.hidden_dims.len())
        .map(|i| {
            let base = i * stride;
            HiddenSlots {
                weight: base,
                bias: base + 1,
                batchnorm: spec.use_batchnorm.then_some([base + 2, base + 3, base + 4, base + 5]),
            }
        })
        .collect();
    let out = spec.hidden_dims.len() * stride;
    (hidden, out, out + 1)
}

fn check_batch<F: Scalar>(weights: &WeightSet<F>, spec: &ModelSpec, batch: &ArrayView2<'_, F>) -> Result<()> {
    weights.check_matches(spec)?;
    if batch.ncols() != spec.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} columns, model expects {}",
            batch.ncols(),
            spec.input_dim
        )));
    }
    Ok(())
}

pub(crate) fn softmax_rows<F: Scalar>(logits: &mut Array2<F>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Class probabilities for `batch` plus the cache for backpropagation.
///
/// `rng` drives the dropout masks and is only consumed in train mode with
/// a nonzero dropout rate.
pub fn forward<F: Scalar, R: Rng + ?Sized>(
    weights: &WeightSet<F>,
    spec: &ModelSpec,
    batch: ArrayView2<'_, F>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Array2<F>, ForwardCache<F>)> {
    check_batch(weights, spec, &batch)?;
    let (hidden_slots, out_w, out_b) = slots(spec);
    let eps = F::of(BATCHNORM_EPSILON);
    let keep = 1.0 - spec.dropout_rate;
    let scale = F::of(1.0 / keep);
    let n = F::of(batch.nrows() as f64);

    let mut hidden = Vec::with_capacity(hidden_slots.len());
    let mut batch_stats = Vec::new();
    for slot in &hidden_slots {
        let input = match hidden.last() {
            Some(HiddenCache { output, .. }) => output.view(),
            None => batch.view(),
        };
        let mut z = input.dot(&weights.layers[slot.weight].view2());
        z += &weights.layers[slot.bias].view1();

        let mut bn_cache = None;
        if let Some([g, b, rm, rv]) = slot.batchnorm {
            let gamma = weights.layers[g].view1();
            let beta = weights.layers[b].view1();
            match mode {
                Mode::Train | Mode::Fit if batch.nrows() > 0 => {
                    let mean = z.sum_axis(Axis(0)) / n;
                    z -= &mean;
                    let var = z.mapv(|v| v * v).sum_axis(Axis(0)) / n;
                    let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
                    z *= &inv_std;
                    let xhat = z.clone();
                    z *= &gamma;
                    z += &beta;
                    bn_cache = Some((xhat, inv_std));
                    batch_stats.push((mean, var));
                }
                _ => {
                    let mean = weights.layers[rm].view1();
                    let inv_std = weights.layers[rv].view1().mapv(|v| F::one() / (v + eps).sqrt());
                    z -= &mean;
                    z *= &inv_std;
                    z *= &gamma;
                    z += &beta;
                }
            }
        }

        let pre_activation = z;
        let mut output = pre_activation.mapv(|v| v.max(F::zero()));
        let mut dropout_mask = None;
        if mode == Mode::Train && spec.dropout_rate > 0.0 {
            let mask =
                Array2::from_shape_simple_fn(
                    output.raw_dim(),
                    || {
                        if rng.gen::<f64>() < keep {
                            scale
                        } else {
                            F::zero()
                        }
                    },
                );
            output *= &mask;
            dropout_mask = Some(mask);
        }
        hidden.push(HiddenCache { batchnorm: bn_cache, pre_activation, dropout_mask, output });
    }

    let last = match hidden.last() {
        Some(h) => h.output.view(),
        None => batch.view(),
    };
    let mut probs = last.dot(&weights.layers[out_w].view2());
    probs += &weights.layers[out_b].view1();
    softmax_rows(&mut probs);
    Ok((probs, ForwardCache { hidden, mode, batch_stats }))
}

/// Output of [`loss_and_grad`].
#[derive(Debug, Clone)]
pub struct LossAndGrad<F> {
    pub loss: F,
    /// Same layout as the weights; running-statistic tensors are zero.
    pub gradients: WeightSet<F>,
    pub probabilities: Array2<F>,
    pub batch_stats: Vec<(Array1<F>, Array1<F>)>,
}

/// Mean categorical cross-entropy over `batch` and its gradient with
/// respect to every trainable parameter, using a train-mode forward pass.
pub fn loss_and_grad<F: Scalar, R: Rng + ?Sized>(
    weights: &WeightSet<F>,
    spec: &ModelSpec,
    batch: ArrayView2<'_, F>,
    labels: ArrayView2<'_, F>,
    rng: &mut R,
) -> Result<LossAndGrad<F>> {
    if labels.nrows() != batch.nrows() || labels.ncols() != spec.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "labels are {:?}, expected ({}, {})",
            labels.dim(),
            batch.nrows(),
            spec.num_classes
        )));
    }
    if batch.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let (probs, cache) = forward(weights, spec, batch.view(), Mode::Train, rng)?;
    let loss = cross_entropy(&probs.view(), &labels);
    let gradients = backward(weights, spec, batch, labels, &probs, &cache);
    Ok(LossAndGrad { loss, gradients, probabilities: probs, batch_stats: cache.batch_stats })
}

pub(crate) fn cross_entropy<F: Scalar>(probs: &ArrayView2<'_, F>, labels: &ArrayView2<'_, F>) -> F {
    let floor = F::of(LOG_PROB_FLOOR);
    let mut total = F::zero();
    Zip::from(probs).and(labels).for_each(|&p, &y| {
        if y != F::zero() {
            total -= y * p.max(floor).ln();
        }
    });
    total / F::of(probs.nrows() as f64)
}

fn backward<F: Scalar>(
    weights: &WeightSet<F>,
    spec: &ModelSpec,
    batch: ArrayView2<'_, F>,
    labels: ArrayView2<'_, F>,
    probs: &Array2<F>,
    cache: &ForwardCache<F>,
) -> WeightSet<F> {
    debug_assert_eq!(cache.mode, Mode::Train);
    let (hidden_slots, out_w, out_b) = slots(spec);
    let mut grads = weights.zeros_like();
    let n = F::of(batch.nrows() as f64);

    let mut delta = (probs - &labels) / n;
    let last = match cache.hidden.last() {
        Some(h) => h.output.view(),
        None => batch.view(),
    };
    grads.layers[out_w].view2_mut().assign(&last.t().dot(&delta));
    grads.layers[out_b].view1_mut().assign(&delta.sum_axis(Axis(0)));
    let mut upstream = out_w;

    for (i, slot) in hidden_slots.iter().enumerate().rev() {
        let h = &cache.hidden[i];
        let mut d = delta.dot(&weights.layers[upstream].view2().t());
        if let Some(mask) = &h.dropout_mask {
            d *= mask;
        }
        Zip::from(&mut d).and(&h.pre_activation).for_each(|g, &z| {
            if z <= F::zero() {
                *g = F::zero();
            }
        });
        if let (Some([g, b, _, _]), Some((xhat, inv_std))) = (slot.batchnorm, &h.batchnorm) {
            let gamma = weights.layers[g].view1();
            grads.layers[g].view1_mut().assign(&(&d * xhat).sum_axis(Axis(0)));
            grads.layers[b].view1_mut().assign(&d.sum_axis(Axis(0)));
            let dxhat = d * &gamma;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * xhat).sum_axis(Axis(0));
            // dz = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
            let mut dz = dxhat * n;
            dz -= &sum_dxhat;
            dz -= &(xhat * &sum_dxhat_xhat);
            dz *= &(inv_std / n);
            d = dz;
        }
        let input = if i == 0 { batch.view() } else { cache.hidden[i - 1].output.view() };
        grads.layers[slot.weight].view2_mut().assign(&input.t().dot(&d));
        grads.layers[slot.bias].view1_mut().assign(&d.sum_axis(Axis(0)));
        delta = d;
        upstream = slot.weight;
    }
    grads
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{init_model, Tensor};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn spec(hidden: Vec<usize>, bn: bool, dropout: f64) -> ModelSpec {
        ModelSpec {
            input_dim: 3,
            hidden_dims: hidden,
            num_classes: 4,
            dropout_rate: dropout,
            use_batchnorm: bn,
            activation: Default::default(),
            seed: 11,
        }
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || r.gen_range(-1.0..1.0))
    }

    #[test]
    fn eval_rows_sum_to_one() {
        for bn in [false, true] {
            let s = spec(vec![5, 4], bn, 0.3);
            let w = init_model(&s).unwrap().cast::<f64>();
            let x = random_batch(6, 3, 1);
            let (p, _) = forward(&w, &s, x.view(), Mode::Eval, &mut rng()).unwrap();
            for row in p.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn zero_dropout_train_matches_eval_given_same_stats() {
        let s = spec(vec![5], true, 0.0);
        let mut w = init_model(&s).unwrap().cast::<f64>();
        let x = random_batch(8, 3, 2);
        let (p_train, cache) = forward(&w, &s, x.view(), Mode::Train, &mut rng()).unwrap();
        // load the batch statistics as running statistics
        let (mean, var) = &cache.batch_stats[0];
        w.layers[4].values = mean.to_vec();
        w.layers[5].values = var.to_vec();
        let (p_eval, _) = forward(&w, &s, x.view(), Mode::Eval, &mut rng()).unwrap();
        for (a, b) in p_train.iter().zip(&p_eval) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_computed_two_by_two() {
        // x = [1, 2]; W1 = [[1, -1], [0.5, 1]], b1 = [0, -3]
        // z = [2, -2] -> relu [2, 0]; W2 = [[1, 0], [0, 1]], b2 = [0, 1]
        // logits [2, 1] -> softmax [e/(e+1), 1/(e+1)]
        let s = ModelSpec {
            input_dim: 2,
            hidden_dims: vec![2],
            num_classes: 2,
            dropout_rate: 0.0,
            use_batchnorm: false,
            activation: Default::default(),
            seed: 0,
        };
        let w = WeightSet {
            layers: vec![
                Tensor { name: "dense0.weight".into(), shape: vec![2, 2], values: vec![1.0, -1.0, 0.5, 1.0] },
                Tensor { name: "dense0.bias".into(), shape: vec![2], values: vec![0.0, -3.0] },
                Tensor { name: "dense1.weight".into(), shape: vec![2, 2], values: vec![1.0, 0.0, 0.0, 1.0] },
                Tensor { name: "dense1.bias".into(), shape: vec![2], values: vec![0.0, 1.0] },
            ],
            fingerprint: s.fingerprint(),
        };
        let (p, _) = forward(&w, &s, array![[1.0f64, 2.0]].view(), Mode::Eval, &mut rng()).unwrap();
        let e = std::f64::consts::E;
        assert!((p[[0, 0]] - e / (e + 1.0)).abs() < 1e-6);
        assert!((p[[0, 1]] - 1.0 / (e + 1.0)).abs() < 1e-6);
    }

    #[test]
    fn loss_of_exact_and_uniform_predictors() {
        let s = ModelSpec {
            input_dim: 1,
            hidden_dims: vec![],
            num_classes: 5,
            dropout_rate: 0.0,
            use_batchnorm: false,
            activation: Default::default(),
            seed: 0,
        };
        let mut w = init_model(&s).unwrap().cast::<f64>();
        w.layers[0].values.fill(0.0);
        let x = array![[1.0f64], [3.0]];
        let y = array![[1.0, 0., 0., 0., 0.], [0., 0., 0., 1., 0.]];
        let uniform = loss_and_grad(&w, &s, x.view(), y.view(), &mut rng()).unwrap();
        assert!((uniform.loss - 5f64.ln()).abs() < 1e-12);

        // a bias large enough to saturate the softmax at one class
        w.layers[1].values = vec![1000.0, 0.0, 0.0, 0.0, 0.0];
        let y0 = array![[1.0, 0., 0., 0., 0.], [1.0, 0., 0., 0., 0.]];
        let exact = loss_and_grad(&w, &s, x.view(), y0.view(), &mut rng()).unwrap();
        assert_eq!(exact.loss, 0.0);
        // the floor keeps the loss finite when the true class has probability 0
        let wrong = loss_and_grad(&w, &s, x.view(), y.view(), &mut rng()).unwrap();
        assert!(wrong.loss.is_finite());
        assert!((wrong.loss - 0.5 * -(LOG_PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn shape_errors() {
        let s = spec(vec![2], false, 0.0);
        let w = init_model(&s).unwrap().cast::<f64>();
        let x = random_batch(2, 4, 0);
        assert!(matches!(forward(&w, &s, x.view(), Mode::Eval, &mut rng()), Err(Error::ShapeMismatch(_))));
        let x = random_batch(2, 3, 0);
        let y = Array2::<f64>::zeros((3, 4));
        assert!(matches!(loss_and_grad(&w, &s, x.view(), y.view(), &mut rng()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn eval_batchnorm_ignores_batch_composition() {
        let s = spec(vec![4], true, 0.3);
        let w = init_model(&s).unwrap().cast::<f64>();
        let x = random_batch(6, 3, 9);
        let (full, _) = forward(&w, &s, x.view(), Mode::Eval, &mut rng()).unwrap();
        let (part, _) = forward(&w, &s, x.slice(ndarray::s![2..4, ..]), Mode::Eval, &mut rng()).unwrap();
        assert_eq!(full.slice(ndarray::s![2..4, ..]), part);
    }
}
