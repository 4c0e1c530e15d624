use super::train::TrainConfig;
use super::weights::WeightSet;
use super::Scalar;
use crate::error::{Error, Result};

/// First and second moment estimates, one per tensor of the weight set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F = f32> {
    pub first_moment: WeightSet<F>,
    pub second_moment: WeightSet<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(weights: &WeightSet<F>) -> Self {
        Self { first_moment: weights.zeros_like(), second_moment: weights.zeros_like() }
    }
}

/// One bias-corrected Adam update at step `t` (1-based). Pure: returns the
/// new weights and state.
pub fn adam_step<F: Scalar>(
    weights: &WeightSet<F>,
    gradients: &WeightSet<F>,
    state: &AdamState<F>,
    config: &TrainConfig,
    t: u64,
) -> Result<(WeightSet<F>, AdamState<F>)> {
    let mut w = weights.clone();
    let mut s = state.clone();
    adam_update(&mut w, gradients, &mut s, config, t)?;
    Ok((w, s))
}

pub(crate) fn adam_update<F: Scalar>(
    weights: &mut WeightSet<F>,
    gradients: &WeightSet<F>,
    state: &mut AdamState<F>,
    config: &TrainConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidConfig("Adam step index starts at 1".into()));
    }
    weights.check_compatible(gradients).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    weights.check_compatible(&state.first_moment).map_err(|e| Error::ShapeMismatch(e.to_string()))?;

    let b1 = F::of(config.adam_beta1);
    let b2 = F::of(config.adam_beta2);
    let eps = F::of(config.adam_epsilon);
    let lr = F::of(config.learning_rate);
    let exp = i32::try_from(t).unwrap_or(i32::MAX);
    let bias1 = F::one() - b1.powi(exp);
    let bias2 = F::one() - b2.powi(exp);
    let one = F::one();

    for (((w, g), m), v) in weights
        .layers
        .iter_mut()
        .zip(&gradients.layers)
        .zip(&mut state.first_moment.layers)
        .zip(&mut state.second_moment.layers)
    {
        if !w.is_trainable() {
            continue;
        }
        for (((wi, &gi), mi), vi) in w.values.iter_mut().zip(&g.values).zip(&mut m.values).zip(&mut v.values) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *wi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
