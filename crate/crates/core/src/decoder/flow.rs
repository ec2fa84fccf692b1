use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dit::VelocityField;
use crate::error::{OmniError, Result};
use crate::nn::{AdamW, Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { scale: 1.75 }
    }
}

/// Straight-line interpolation `(1 - t) x0 + t ε`, per batch item.
pub fn interpolate(x0: &Tensor, eps: &Tensor, t: &[f64]) -> Result<Tensor> {
    let b = x0.dims()[0];
    let tt = Tensor::from_vec(t.to_vec(), (b, 1, 1, 1), &Device::Cpu)?.to_dtype(x0.dtype())?;
    let one_minus = (tt.ones_like()? - &tt)?;
    Ok((x0.broadcast_mul(&one_minus)? + eps.broadcast_mul(&tt)?)?)
}

/// Rectified-flow objective: mean squared error between the predicted
/// velocity at `x_t` and `ε − x0`.
pub fn flow_loss(net: &dyn VelocityField, x0: &Tensor, cond: &Tensor, t: &[f64], eps: &Tensor) -> Result<Tensor> {
    if x0.dims() != eps.dims() {
        return Err(OmniError::Shape("latent and noise shapes differ".into()));
    }
    let x_t = interpolate(x0, eps, t)?;
    let v = net.velocity(&x_t, cond, t)?;
    let target = (eps - x0)?;
    Ok((v - target)?.sqr()?.mean_all()?)
}

/// Seeded Gaussian noise of the given shape.
pub fn gaussian(shape: &[usize], dtype: DType, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

/// Draws `t ~ U(0, 1)` and `ε ~ N(0, I)`, then takes one optimizer step.
pub fn train_step(
    net: &dyn VelocityField,
    store: &ParamStore,
    opt: &mut AdamW,
    x0: &Tensor,
    cond: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let b = x0.dims()[0];
    let t: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
    let eps = gaussian(x0.dims(), x0.dtype(), rng)?;
    let loss = flow_loss(net, x0, cond, &t, &eps)?;
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(OmniError::NonFinite);
    }
    let grads = Gradients::from_loss(&loss, store)?;
    opt.step(store, &grads, None)?;
    Ok(value)
}

/// Euler integration from noise at `t = 1` to `t = 0` over `steps` uniform
/// steps with velocity `v_bad + s (v_main − v_bad)`. With `s == 1` the bad
/// model is never evaluated.
pub fn sample(
    main: &dyn VelocityField,
    bad: Option<&dyn VelocityField>,
    cond: &Tensor,
    steps: usize,
    guidance: &GuidanceConfig,
    seed: u64,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(OmniError::InvalidArgument("at least one sampling step is required".into()));
    }
    let guided = guidance.scale != 1.0;
    if guided && bad.is_none() {
        return Err(OmniError::Missing("bad model required for guidance scale != 1".into()));
    }
    let (b, _, h, w) = cond.dims4()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(&[b, super::codec::LATENT_CHANNELS, h, w], cond.dtype(), &mut rng)?;
    let dt = 1.0 / steps as f64;
    for i in 0..steps {
        let t = vec![1.0 - i as f64 * dt; b];
        let mut v = main.velocity(&x, cond, &t)?;
        if guided {
            let vb = bad.expect("checked above").velocity(&x, cond, &t)?;
            v = (&vb + ((v - &vb)? * guidance.scale)?)?;
        }
        x = (x - (v * dt)?)?.detach();
    }
    Ok(x)
}
