use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{NumericsError, Tensor};

/// How a parameter was (or would be) initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSpec {
    /// N(0, 2 / fan_in).
    HeNormal { fan_in: usize },
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    UniformFanIn { fan_in: usize },
    Constant(f64),
    /// Loaded from a checkpoint.
    Restored,
}

impl InitSpec {
    pub fn sample(&self, shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match *self {
            InitSpec::HeNormal { fan_in } => {
                let std = (2.0 / fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        std * z
                    })
                    .collect()
            }
            InitSpec::UniformFanIn { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            InitSpec::Constant(c) => vec![c; n],
            InitSpec::Restored => vec![0.0; n],
        };
        Tensor::from_parts(shape.to_vec(), data)
    }
}

/// Named parameter tensors, ordered by path.
///
/// Paths are unique and a parameter's shape never changes after it is
/// registered; only its values can be written. Gradients use the same type
/// (see [`ParamSet::zeros_like`]).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
    init: BTreeMap<String, InitSpec>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        path: impl Into<String>,
        shape: &[usize],
        init: InitSpec,
        rng: &mut impl Rng,
    ) -> Result<(), NumericsError> {
        let path = path.into();
        if self.tensors.contains_key(&path) {
            return Err(NumericsError::DuplicateParam(path));
        }
        let t = init.sample(shape, rng);
        self.init.insert(path.clone(), init);
        self.tensors.insert(path, t);
        Ok(())
    }

    /// Inserts a restored tensor; used by checkpoint loading.
    pub fn insert_restored(&mut self, path: impl Into<String>, t: Tensor) -> Result<(), NumericsError> {
        let path = path.into();
        if self.tensors.contains_key(&path) {
            return Err(NumericsError::DuplicateParam(path));
        }
        self.init.insert(path.clone(), InitSpec::Restored);
        self.tensors.insert(path, t);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor, NumericsError> {
        self.tensors
            .get(path)
            .ok_or_else(|| NumericsError::MissingParam(path.to_string()))
    }

    /// Mutable access to a parameter's values (the shape stays fixed).
    pub fn values_mut(&mut self, path: &str) -> Result<&mut [f64], NumericsError> {
        self.tensors
            .get_mut(path)
            .map(Tensor::data_mut)
            .ok_or_else(|| NumericsError::MissingParam(path.to_string()))
    }

    /// Overwrites a parameter's values with a tensor of identical shape.
    pub fn assign(&mut self, path: &str, value: &Tensor) -> Result<(), NumericsError> {
        let slot = self
            .tensors
            .get_mut(path)
            .ok_or_else(|| NumericsError::MissingParam(path.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(NumericsError::Dimension {
                op: "assign",
                detail: format!("{path}: {:?} vs {:?}", slot.shape(), value.shape()),
            });
        }
        slot.data_mut().copy_from_slice(value.data());
        Ok(())
    }

    /// Adds `delta` into the parameter at `path`, creating a zero entry of
    /// the same shape if absent. Used for gradient accumulation.
    pub fn accumulate(&mut self, path: &str, delta: &Tensor) {
        match self.tensors.get_mut(path) {
            Some(t) => t.add_assign(delta),
            None => {
                self.init.insert(path.to_string(), InitSpec::Constant(0.0));
                self.tensors.insert(path.to_string(), delta.clone());
            }
        }
    }

    pub fn init_spec(&self, path: &str) -> Option<InitSpec> {
        self.init.get(path).copied()
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
            init: self
                .init
                .keys()
                .map(|k| (k.clone(), InitSpec::Constant(0.0)))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors.values_mut() {
            t.scale(s);
        }
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (k, t) in &other.tensors {
            self.accumulate(k, t);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Same paths and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.shape() == b.shape())
    }
}
