use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use super::spec::{DiscriminatorSpec, GeneratorSpec};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Standard deviation of initial weights.
pub const INIT_STD: f64 = 0.02;

/// Anything that declares a named parameter layout.
pub trait ParamLayout {
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)>;
}

impl ParamLayout for GeneratorSpec {
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        GeneratorSpec::param_shapes(self)
    }
}

impl ParamLayout for DiscriminatorSpec {
    fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        DiscriminatorSpec::param_shapes(self)
    }
}

/// Named parameter tensors, ordered by name.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelParams<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    /// Panics on unknown names; forward passes call [`Self::check_layout`] first.
    pub fn tensor(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    /// Elementwise `self += other` over matching names.
    pub fn accumulate(&mut self, other: &ModelParams<T>) {
        for (name, t) in &other.tensors {
            match self.tensors.get_mut(name) {
                Some(mine) => mine.add_assign(t),
                None => {
                    self.tensors.insert(name.clone(), t.clone());
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// Exact key set and shapes of `layout`.
    pub fn check_layout(&self, layout: &impl ParamLayout) -> Result<()> {
        let shapes = layout.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::BadCheckpoint(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in shapes {
            match self.tensors.get(&name) {
                None => return Err(Error::BadCheckpoint(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::BadCheckpoint(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Fresh parameters: weights `N(0, 0.02)`, normalisation scales
/// `N(1, 0.02)`, biases and shifts zero. Each tensor draws from its own
/// stream keyed by `(seed, name)`.
pub fn init_params<T: Scalar>(layout: &impl ParamLayout, seed: u64) -> ModelParams<T> {
    let mut params = ModelParams::new();
    for (name, shape) in layout.param_shapes() {
        let n: usize = shape.iter().product();
        let mean = if name.ends_with(".weight") {
            Some(0.0)
        } else if name.ends_with(".gamma") {
            Some(1.0)
        } else {
            None
        };
        let data = match mean {
            Some(mean) => {
                let dist = Normal::new(mean, INIT_STD).expect("positive std");
                let mut rng = stream(seed, &format!("init/{name}"));
                (0..n).map(|_| T::of(dist.sample(&mut rng))).collect()
            }
            None => vec![T::zero(); n],
        };
        params.insert(name, Tensor::from_vec(&shape, data).expect("sized from shape"));
    }
    params
}
