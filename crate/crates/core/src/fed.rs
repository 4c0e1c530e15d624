//! Weight-level aggregation between clients and the server.
//!
//! Nothing in this module sees feature rows: the only inputs are weight
//! sets and the number of examples each was trained on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, WeightSet};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedContribution<F = f32> {
    pub weights: WeightSet<F>,
    /// Examples the contributor trained on in its latest round.
    pub sample_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Uniform,
    /// FedAvg: each contribution weighted by `n_k / n`.
    #[default]
    SampleWeighted,
}

/// Neumaier-compensated running sum in double precision.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.compensation
    }
}

/// Elementwise (weighted) mean of every tensor, batchnorm running
/// statistics included.
pub fn aggregate<F: Scalar>(contributions: &[WeightedContribution<F>], scheme: Scheme) -> Result<WeightSet<F>> {
    let (first, rest) = contributions.split_first().ok_or(Error::EmptyContributionList)?;
    for (i, c) in contributions.iter().enumerate() {
        if c.sample_count == 0 {
            return Err(Error::ZeroSampleCount(i));
        }
    }
    for c in rest {
        first.weights.check_compatible(&c.weights)?;
    }
    if rest.is_empty() {
        return Ok(first.weights.clone());
    }

    let coefficients: Vec<f64> = match scheme {
        Scheme::Uniform => vec![1.0; contributions.len()],
        Scheme::SampleWeighted => contributions.iter().map(|c| c.sample_count as f64).collect(),
    };
    let mut total = CompensatedSum::default();
    for &c in &coefficients {
        total.add(c);
    }
    let total = total.value();

    let mut out = first.weights.clone();
    for (li, tensor) in out.layers.iter_mut().enumerate() {
        for (vi, value) in tensor.values.iter_mut().enumerate() {
            let x0 = *value;
            if rest.iter().all(|c| c.weights.layers[li].values[vi] == x0) {
                continue;
            }
            let mut acc = CompensatedSum::default();
            for (c, &k) in contributions.iter().zip(&coefficients) {
                acc.add(k * c.weights.layers[li].values[vi].to_f64().expect("finite"));
            }
            *value = F::of(acc.value() / total);
        }
    }
    Ok(out)
}

/// Convex blend `local_fraction * local + (1 - local_fraction) * global`.
pub fn merge_local_global<F: Scalar>(
    local: &WeightSet<F>,
    global: &WeightSet<F>,
    local_fraction: f64,
) -> Result<WeightSet<F>> {
    if !(0.0..=1.0).contains(&local_fraction) {
        return Err(Error::InvalidConfig(format!("local_fraction {local_fraction} outside [0, 1]")));
    }
    local.check_compatible(global)?;
    if local_fraction == 1.0 {
        return Ok(local.clone());
    }
    if local_fraction == 0.0 {
        return Ok(global.clone());
    }
    let mut out = local.clone();
    for (t, g) in out.layers.iter_mut().zip(&global.layers) {
        for (l, &gv) in t.values.iter_mut().zip(&g.values) {
            if *l != gv {
                let blended = local_fraction * l.to_f64().expect("finite")
                    + (1.0 - local_fraction) * gv.to_f64().expect("finite");
                *l = F::of(blended);
            }
        }
    }
    Ok(out)
}
