use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::Result;
use crate::vocab::{FreezeMask, ParamFreeze};

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Runs backprop from `loss` and collects gradients for every parameter in
    /// `store` that took part in the computation.
    pub fn from_loss(loss: &Tensor, store: &ParamStore) -> Result<Self> {
        let grads = loss.backward()?;
        let mut map = BTreeMap::new();
        for (name, var) in store.vars() {
            if let Some(g) = grads.get(var.as_tensor()) {
                map.insert(name, g.clone());
            }
        }
        Ok(Self { map })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Elementwise sum with another set of gradients.
    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        for (name, g) in &other.map {
            let next = match self.map.get(name) {
                Some(cur) => (cur + g)?,
                None => g.clone(),
            };
            self.map.insert(name.clone(), next);
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) -> Result<()> {
        for g in self.map.values_mut() {
            *g = g.affine(factor, 0.0)?;
        }
        Ok(())
    }

    pub fn global_norm(&self) -> Result<f64> {
        let mut sq = 0.0;
        for g in self.map.values() {
            sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
        Ok(sq.sqrt())
    }

    /// Scales all gradients so their global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) -> Result<f64> {
        let norm = self.global_norm()?;
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm)?;
        }
        Ok(norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW that honours a [`FreezeMask`]: frozen parameters are never touched
/// and frozen rows keep their exact bit pattern.
pub struct AdamW {
    cfg: AdamWConfig,
    step: usize,
    moments: HashMap<String, (Tensor, Tensor)>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies one update. Parameters absent from `mask` are treated as
    /// trainable when `mask` is `None` and frozen otherwise.
    pub fn step(&mut self, store: &ParamStore, grads: &Gradients, mask: Option<&FreezeMask>) -> Result<usize> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let mut updated = 0;
        for (name, var) in store.vars() {
            let Some(g) = grads.get(&name) else { continue };
            let rule = match mask {
                None => ParamFreeze::Trainable,
                Some(m) => m.get(&name).cloned().unwrap_or(ParamFreeze::Frozen),
            };
            if rule == ParamFreeze::Frozen {
                continue;
            }
            // Gradients carry the backward graph; keeping it in the moments
            // would pin every step's activations.
            let g = &g.detach();
            let theta = var.as_tensor();
            let (m, v) = match self.moments.get(&name) {
                Some(mv) => mv.clone(),
                None => (theta.zeros_like()?, theta.zeros_like()?),
            };
            let m = ((m * self.cfg.beta1)? + (g * (1.0 - self.cfg.beta1))?)?;
            let v = ((v * self.cfg.beta2)? + (g.sqr()? * (1.0 - self.cfg.beta2))?)?;
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let upd = (m_hat / (v_hat.sqrt()? + self.cfg.eps)?)?;
            let decayed = (theta * (1.0 - self.cfg.lr * self.cfg.weight_decay))?;
            let candidate = (decayed - (upd * self.cfg.lr)?)?;
            let next = match &rule {
                ParamFreeze::Rows(ranges) => {
                    let rows = theta.dims()[0];
                    let mut keep = vec![0u8; rows];
                    for r in ranges {
                        for i in r.clone() {
                            if i < rows {
                                keep[i] = 1;
                            }
                        }
                    }
                    let mut shape = vec![1usize; theta.rank()];
                    shape[0] = rows;
                    let sel = Tensor::from_vec(keep, shape, theta.device())?
                        .broadcast_as(theta.shape())?;
                    sel.where_cond(&candidate, theta)?
                }
                _ => candidate,
            };
            var.set(&next)?;
            self.moments.insert(name, (m, v));
            updated += 1;
        }
        Ok(updated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;
    use crate::vocab::{expansion_freeze_mask, FreezePolicy, ParamRegistry, VocabLayout};

    #[test]
    fn frozen_rows_are_bit_identical() {
        let layout = crate::vocab::build_layout(&["a", "b"], 3, 2, 2).unwrap();
        let store = ParamStore::new(DType::F32, 3);
        let emb = store.root().pp("backbone").pp("embed").get((layout.total(), 4), "weight", Init::Normal(1.0)).unwrap();
        let before: Vec<Vec<f32>> = emb.to_vec2().unwrap();
        let loss = emb.sqr().unwrap().sum_all().unwrap();
        let grads = Gradients::from_loss(&loss, &store).unwrap();
        let mask = expansion_freeze_mask(&layout, FreezePolicy::VocabExpansion, &ParamRegistry::from_store(&store)).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&store, &grads, Some(&mask)).unwrap();
        let after: Vec<Vec<f32>> = store.get("backbone.embed.weight").unwrap().as_tensor().to_vec2().unwrap();
        for row in 0..layout.total() {
            let frozen = row < layout.modality_rows().start;
            for c in 0..4 {
                if frozen {
                    assert_eq!(before[row][c].to_bits(), after[row][c].to_bits());
                } else {
                    assert_ne!(before[row][c], after[row][c]);
                }
            }
        }
        let _ = VocabLayout::default_layout();
    }

    #[test]
    fn accumulation_and_clip() {
        let store = ParamStore::new(DType::F64, 0);
        let w = store.root().get(3, "w", Init::Const(1.0)).unwrap();
        let mut g = Gradients::from_loss(&(w.sum_all().unwrap() * 3.0).unwrap(), &store).unwrap();
        let g2 = Gradients::from_loss(&w.sum_all().unwrap(), &store).unwrap();
        g.accumulate(&g2).unwrap();
        let v: Vec<f64> = g.get("w").unwrap().to_vec1().unwrap();
        assert_eq!(v, vec![4.0; 3]);
        let n = g.clip_norm(1.0).unwrap();
        assert!((n - 48f64.sqrt()).abs() < 1e-12);
        assert!((g.global_norm().unwrap() - 1.0).abs() < 1e-12);
    }
}
