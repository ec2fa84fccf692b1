use candle_core::{DType, Device, Tensor, D};

use super::config::MtpConfig;
use super::model::BackboneOutput;
use crate::error::{OmniError, Result};
use crate::interleave::ModelInput;
use crate::vocab::TokenId;

/// Row-wise log-softmax over the last dimension.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// `sum_i w_i * CE(logits_i, target_i) / sum_i w_i` over rows of
/// `logits: (n, vocab)`.
pub fn weighted_cross_entropy(logits: &Tensor, targets: &[u32], weights: &[f64]) -> Result<Tensor> {
    let (n, _) = logits.dims2()?;
    if targets.len() != n || weights.len() != n {
        return Err(OmniError::Shape(format!(
            "{n} logit rows, {} targets, {} weights",
            targets.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(OmniError::InvalidArgument("all loss weights are zero".into()));
    }
    let lp = log_softmax(logits)?;
    let idx = Tensor::from_vec(targets.to_vec(), (n, 1), &Device::Cpu)?;
    let picked = lp.gather(&idx, 1)?.squeeze(1)?;
    let w = Tensor::from_vec(weights.to_vec(), n, &Device::Cpu)?.to_dtype(logits.dtype())?;
    Ok(((picked * w)?.sum_all()?.neg()? / total)?)
}

pub struct LossBreakdown {
    pub total: Tensor,
    pub main: f64,
    pub aux: Option<f64>,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Rows, targets and weights for predictions `shift` positions ahead:
/// logits at position `t` are scored against `targets()[t + shift - 1]`.
fn gather_rows(logits: &Tensor, inputs: &[&ModelInput], shift: usize) -> Result<(Tensor, Vec<u32>, Vec<f64>)> {
    let (b, l, v) = logits.dims3()?;
    if b != inputs.len() {
        return Err(OmniError::Shape(format!("{b} logit rows for {} inputs", inputs.len())));
    }
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for (bi, input) in inputs.iter().enumerate() {
        let tids = input.target_ids(TokenId(0));
        let w = input.weights();
        let usable = tids.len().saturating_sub(shift - 1);
        for t in 0..usable.min(l) {
            rows.push((bi * l + t) as u32);
            targets.push(tids[t + shift - 1].0);
            weights.push(w[t + shift - 1]);
        }
    }
    let n = rows.len();
    let idx = Tensor::from_vec(rows, n, &Device::Cpu)?;
    let flat = logits.reshape((b * l, v))?.index_select(&idx, 0)?;
    Ok((flat, targets, weights))
}

/// Weighted next-token loss plus `λ ·` the weighted loss of the two-ahead
/// head when enabled. Weights come from each input's per-target weights.
pub fn backbone_loss(out: &BackboneOutput, inputs: &[&ModelInput], mtp: &MtpConfig) -> Result<LossBreakdown> {
    mtp.validate()?;
    let (rows, t, w) = gather_rows(&out.logits, inputs, 1)?;
    let main = weighted_cross_entropy(&rows, &t, &w)?;
    let main_v = scalar(&main)?;
    if !mtp.enabled || mtp.weight == 0.0 {
        return Ok(LossBreakdown { total: main, main: main_v, aux: None });
    }
    let Some(mtp_logits) = &out.mtp_logits else {
        return Err(OmniError::InvalidArgument("MTP enabled but no auxiliary logits".into()));
    };
    let (rows, t, w) = gather_rows(mtp_logits, inputs, 2)?;
    if w.iter().sum::<f64>() <= 0.0 {
        return Ok(LossBreakdown { total: main, main: main_v, aux: None });
    }
    let aux = weighted_cross_entropy(&rows, &t, &w)?;
    let aux_v = scalar(&aux)?;
    let total = (main + (aux * mtp.weight)?)?;
    Ok(LossBreakdown { total, main: main_v, aux: Some(aux_v) })
}
