use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{OmniError, Result};

/// Initialization scheme for a freshly created parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal(f64),
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
}

/// Named, ordered collection of trainable variables.
///
/// Values are seeded per parameter name, so the same `(seed, name)` pair always
/// produces the same initial tensor regardless of construction order.
#[derive(Clone)]
pub struct ParamStore {
    vars: Arc<Mutex<BTreeMap<String, Var>>>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: Arc::new(Mutex::new(BTreeMap::new())),
            dtype,
            device: Device::Cpu,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Params {
        Params {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.lock().unwrap().keys().cloned().collect()
    }

    pub fn vars(&self) -> Vec<(String, Var)> {
        self.vars
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.lock().unwrap().get(name).cloned()
    }

    pub fn num_params(&self) -> usize {
        self.vars
            .lock()
            .unwrap()
            .values()
            .map(|v| v.elem_count())
            .sum()
    }

    pub fn num_params_with_prefix(&self, prefix: &str) -> usize {
        self.vars
            .lock()
            .unwrap()
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Deep copy of all current values, for bit-identity comparisons.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        let vars = self.vars.lock().unwrap();
        let mut out = BTreeMap::new();
        for (k, v) in vars.iter() {
            out.insert(k.clone(), v.as_tensor().copy()?);
        }
        Ok(out)
    }

    /// Replace the value of an existing variable (shape must match).
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .get(name)
            .ok_or_else(|| OmniError::Missing(format!("parameter {name}")))?;
        if var.shape() != value.shape() {
            return Err(OmniError::Shape(format!(
                "{name}: stored {:?}, given {:?}",
                var.shape(),
                value.shape()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    fn get_or_create(&self, name: String, shape: Shape, init: Init) -> Result<Tensor> {
        let mut vars = self.vars.lock().unwrap();
        if let Some(v) = vars.get(&name) {
            if v.shape() != &shape {
                return Err(OmniError::Shape(format!(
                    "{name}: existing {:?}, requested {:?}",
                    v.shape(),
                    shape
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n = shape.elem_count();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()));
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * std
                })
                .collect(),
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        vars.insert(name, var);
        Ok(out)
    }
}

/// A prefixed view into a [`ParamStore`].
#[derive(Clone)]
pub struct Params {
    store: ParamStore,
    prefix: String,
}

impl Params {
    pub fn pp(&self, name: impl AsRef<str>) -> Params {
        Params {
            store: self.store.clone(),
            prefix: self.path(name.as_ref()),
        }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn get(&self, shape: impl Into<Shape>, name: &str, init: Init) -> Result<Tensor> {
        self.store.get_or_create(self.path(name), shape.into(), init)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let a = ParamStore::new(DType::F64, 7);
        let b = ParamStore::new(DType::F64, 7);
        let _ = a.root().get((3, 4), "other", Init::Normal(1.0)).unwrap();
        let x = a.root().pp("m").get((2, 2), "w", Init::Normal(1.0)).unwrap();
        let y = b.root().pp("m").get((2, 2), "w", Init::Normal(1.0)).unwrap();
        let dx: Vec<f64> = x.flatten_all().unwrap().to_vec1().unwrap();
        let dy: Vec<f64> = y.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(dx, dy);
    }

    #[test]
    fn shape_conflict_is_rejected() {
        let s = ParamStore::new(DType::F32, 0);
        s.root().get((2, 2), "w", Init::Zeros).unwrap();
        assert!(s.root().get((3, 2), "w", Init::Zeros).is_err());
    }
}
