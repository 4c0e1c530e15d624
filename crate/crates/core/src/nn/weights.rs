use std::fmt;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::spec::ModelSpec;
use super::Scalar;
use crate::error::{Error, Result};
use crate::seeds::rng_from;

/// SHA-256 of a model's canonical architecture description.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fingerprint({})", &self.to_hex()[..16])
    }
}

/// One named parameter tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape, values: vec![F::zero(); n] }
    }

    /// Batchnorm running statistics are state, not trainable parameters.
    pub fn is_trainable(&self) -> bool {
        !(self.name.ends_with(".running_mean") || self.name.ends_with(".running_var"))
    }

    pub fn view1(&self) -> ArrayView1<'_, F> {
        ArrayView1::from(&self.values[..])
    }

    pub fn view1_mut(&mut self) -> ArrayViewMut1<'_, F> {
        ArrayViewMut1::from(&mut self.values[..])
    }

    pub fn view2(&self) -> ArrayView2<'_, F> {
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.values).expect("rank-2 tensor")
    }

    pub fn view2_mut(&mut self) -> ArrayViewMut2<'_, F> {
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.values).expect("rank-2 tensor")
    }
}

/// Ordered parameter tensors of one model. The unit exchanged between
/// clients and the server.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<F = f32> {
    pub layers: Vec<Tensor<F>>,
    pub fingerprint: Fingerprint,
}

impl<F: Scalar> WeightSet<F> {
    /// All-zero tensors with the same names and shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|t| Tensor::zeros(t.name.clone(), t.shape.clone())).collect(),
            fingerprint: self.fingerprint,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.layers.iter().find(|t| t.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|t| t.values.len()).sum()
    }

    /// Aggregation compatibility: identical fingerprint and tensor names,
    /// order and shapes.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::IncompatibleShapes(format!(
                "fingerprints differ ({:?} vs {:?})",
                self.fingerprint, other.fingerprint
            )));
        }
        if self.layers.len() != other.layers.len() {
            return Err(Error::IncompatibleShapes(format!("{} vs {} tensors", self.layers.len(), other.layers.len())));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::IncompatibleShapes(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    /// Structural check against the layout `spec` produces.
    pub fn check_matches(&self, spec: &ModelSpec) -> Result<()> {
        if self.fingerprint != spec.fingerprint() {
            return Err(Error::ShapeMismatch("weights were produced by a different model spec".into()));
        }
        let layout = spec.parameter_layout();
        if layout.len() != self.layers.len()
            || layout.iter().zip(&self.layers).any(|((n, s), t)| *n != t.name || *s != t.shape)
        {
            return Err(Error::ShapeMismatch("tensor layout does not match the model spec".into()));
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for t in &self.layers {
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(t.name.clone()));
            }
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> WeightSet<G> {
        WeightSet {
            layers: self
                .layers
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    values: t.values.iter().map(|v| G::from(*v).expect("castable")).collect(),
                })
                .collect(),
            fingerprint: self.fingerprint,
        }
    }
}

/// Fresh weights for `spec`: He-uniform dense kernels, zero biases,
/// batchnorm scale 1 and shift 0, running variance 1.
pub fn init_model(spec: &ModelSpec) -> Result<WeightSet> {
    spec.validate()?;
    let mut rng = rng_from(spec.seed);
    let layers = spec
        .parameter_layout()
        .into_iter()
        .map(|(name, shape)| {
            let mut t = Tensor::<f32>::zeros(name, shape);
            if t.name.ends_with(".weight") {
                let limit = (6.0 / t.shape[0] as f64).sqrt() as f32;
                for v in &mut t.values {
                    *v = rng.gen_range(-limit..limit);
                }
            } else if t.name.ends_with(".gamma") || t.name.ends_with(".running_var") {
                t.values.fill(1.0);
            }
            t
        })
        .collect();
    Ok(WeightSet { layers, fingerprint: spec.fingerprint() })
}
