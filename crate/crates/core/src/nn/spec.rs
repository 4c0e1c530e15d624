use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{BATCHNORM_EPSILON, BATCHNORM_MOMENTUM};
use super::weights::Fingerprint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub dropout_rate: f64,
    pub use_batchnorm: bool,
    pub activation: Activation,
    /// Initialization seed. Not part of the fingerprint: models that differ
    /// only in their starting point remain aggregation-compatible.
    pub seed: u64,
}

impl ModelSpec {
    /// Default architecture: two hidden layers (128, 64) with batchnorm and 0.3 dropout.
    pub fn with_defaults(input_dim: usize, num_classes: usize, seed: u64) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![128, 64],
            num_classes,
            dropout_rate: 0.3,
            use_batchnorm: true,
            activation: Activation::Relu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidSpec("num_classes must be positive".into()));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&h| h == 0) {
            return Err(Error::InvalidSpec(format!("hidden layer {i} has zero width")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidSpec(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let canonical = format!(
            "epic-ffnn/v1;input={};hidden={:?};classes={};dropout={:?};batchnorm={};activation={:?};bn_momentum={:?};bn_eps={:?}",
            self.input_dim,
            self.hidden_dims,
            self.num_classes,
            self.dropout_rate,
            self.use_batchnorm,
            self.activation,
            BATCHNORM_MOMENTUM,
            BATCHNORM_EPSILON,
        );
        Fingerprint(Sha256::digest(canonical.as_bytes()).into())
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &h) in self.hidden_dims.iter().enumerate() {
            out.push((format!("dense{i}.weight"), vec![fan_in, h]));
            out.push((format!("dense{i}.bias"), vec![h]));
            if self.use_batchnorm {
                for p in ["gamma", "beta", "running_mean", "running_var"] {
                    out.push((format!("bn{i}.{p}"), vec![h]));
                }
            }
            fan_in = h;
        }
        let k = self.hidden_dims.len();
        out.push((format!("dense{k}.weight"), vec![fan_in, self.num_classes]));
        out.push((format!("dense{k}.bias"), vec![self.num_classes]));
        out
    }
}
