//! Central finite-difference gradient checking.

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::Gradients;
use super::params::ParamStore;
use crate::error::{OmniError, Result};

#[derive(Debug, Clone)]
pub struct GradCheckSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub samples: Vec<GradCheckSample>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradCheckSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Relative error with an absolute floor so that exact zeros compare sanely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Compares analytic gradients with central differences of `loss_fn` at
/// `n` entries drawn uniformly from the parameters whose name satisfies
/// `filter`. The store must hold float64 parameters.
pub fn check_gradients<F, P>(
    store: &ParamStore,
    loss_fn: F,
    filter: P,
    n: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
    P: Fn(&str) -> bool,
{
    if store.dtype() != DType::F64 {
        return Err(OmniError::InvalidArgument(
            "gradient checks require a float64 parameter store".into(),
        ));
    }
    let loss = loss_fn()?;
    let grads = Gradients::from_loss(&loss, store)?;
    let candidates: Vec<_> = store
        .vars()
        .into_iter()
        .filter(|(name, _)| filter(name))
        .collect();
    let total: usize = candidates.iter().map(|(_, v)| v.elem_count()).sum();
    if total == 0 {
        return Err(OmniError::InvalidArgument("no parameters selected".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let mut k = rng.random_range(0..total);
        let (name, var) = candidates
            .iter()
            .find(|(_, v)| {
                if k < v.elem_count() {
                    true
                } else {
                    k -= v.elem_count();
                    false
                }
            })
            .expect("index within total");
        let analytic = match grads.get(name) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?[k],
            None => 0.0,
        };
        let original = var.as_tensor().copy()?;
        let flat: Vec<f64> = original.flatten_all()?.to_vec1()?;
        let eval_at = |delta: f64| -> Result<f64> {
            let mut p = flat.clone();
            p[k] += delta;
            var.set(&Tensor::from_vec(p, original.shape(), original.device())?)?;
            let v = loss_fn()?.to_scalar::<f64>()?;
            Ok(v)
        };
        let plus = eval_at(step)?;
        let minus = eval_at(-step)?;
        var.set(&original)?;
        let numeric = (plus - minus) / (2.0 * step);
        samples.push(GradCheckSample {
            param: name.clone(),
            index: k,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    Ok(GradCheckReport { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    #[test]
    fn quadratic_gradients_match() {
        let store = ParamStore::new(DType::F64, 5);
        let w = store.root().get((4, 3), "w", Init::Normal(1.0)).unwrap();
        let x = Tensor::new(&[1.0f64, -2.0, 0.5], &candle_core::Device::Cpu).unwrap();
        let report = check_gradients(
            &store,
            || Ok(w.matmul(&x.reshape((3, 1))?)?.tanh()?.sqr()?.sum_all()?),
            |_| true,
            20,
            1e-6,
            0,
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-6, "{:?}", report.worst());
    }
}
