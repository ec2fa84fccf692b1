use candle_core::{DType, Device, Tensor, D};

use super::config::{BackboneConfig, MtpConfig};
use crate::error::{OmniError, Result};
use crate::interleave::{ModelInput, Position};
use crate::nn::{attention, causal_mask, gelu, Embedding, Linear, Params, RmsNorm};
use crate::vocab::TokenId;

/// Rotary tables `(context, head_dim)` with each frequency repeated for the
/// two halves.
struct Rope {
    cos: Tensor,
    sin: Tensor,
}

impl Rope {
    fn new(cfg: &BackboneConfig, dtype: DType) -> Result<Self> {
        let hd = cfg.head_dim();
        let half = hd / 2;
        let mut cos = Vec::with_capacity(cfg.context_length * hd);
        let mut sin = Vec::with_capacity(cfg.context_length * hd);
        for pos in 0..cfg.context_length {
            for _ in 0..2 {
                for i in 0..half {
                    let freq = cfg.rope_theta.powf(-(2.0 * i as f64) / hd as f64);
                    cos.push((pos as f64 * freq).cos());
                    sin.push((pos as f64 * freq).sin());
                }
            }
        }
        let shape = (cfg.context_length, hd);
        Ok(Self {
            cos: Tensor::from_vec(cos, shape, &Device::Cpu)?.to_dtype(dtype)?,
            sin: Tensor::from_vec(sin, shape, &Device::Cpu)?.to_dtype(dtype)?,
        })
    }

    /// `x: (b, h, l, hd)` at absolute positions `offset..offset+l`.
    fn apply(&self, x: &Tensor, offset: usize) -> Result<Tensor> {
        let (_, _, l, hd) = x.dims4()?;
        let half = hd / 2;
        let cos = self.cos.narrow(0, offset, l)?;
        let sin = self.sin.narrow(0, offset, l)?;
        let x1 = x.narrow(D::Minus1, 0, half)?;
        let x2 = x.narrow(D::Minus1, half, half)?;
        let rotated = Tensor::cat(&[x2.neg()?, x1], D::Minus1)?;
        Ok((x.broadcast_mul(&cos)? + rotated.broadcast_mul(&sin)?)?)
    }
}

/// Per-layer key/value cache for incremental decoding.
#[derive(Default, Clone)]
pub struct KvCache {
    layers: Vec<Option<(Tensor, Tensor)>>,
    len: usize,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

struct Block {
    attn_norm: RmsNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    mlp_norm: RmsNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl Block {
    fn new(p: &Params, cfg: &BackboneConfig) -> Result<Self> {
        let h = cfg.hidden;
        Ok(Self {
            attn_norm: RmsNorm::new(&p.pp("attn_norm"), h)?,
            q: Linear::new(&p.pp("q"), h, h, false)?,
            k: Linear::new(&p.pp("k"), h, h, false)?,
            v: Linear::new(&p.pp("v"), h, h, false)?,
            o: Linear::new(&p.pp("o"), h, h, false)?,
            mlp_norm: RmsNorm::new(&p.pp("mlp_norm"), h)?,
            fc1: Linear::new(&p.pp("fc1"), h, h * cfg.mlp_ratio, true)?,
            fc2: Linear::new(&p.pp("fc2"), h * cfg.mlp_ratio, h, true)?,
            heads: cfg.heads,
        })
    }

    fn forward(
        &self,
        x: &Tensor,
        rope: &Rope,
        offset: usize,
        cache: Option<&mut Option<(Tensor, Tensor)>>,
    ) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let hd = d / self.heads;
        let h = self.attn_norm.forward(x)?;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, l, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = rope.apply(&split(self.q.forward(&h)?)?, offset)?;
        let mut k = rope.apply(&split(self.k.forward(&h)?)?, offset)?;
        let mut v = split(self.v.forward(&h)?)?;
        if let Some(slot) = cache {
            if let Some((pk, pv)) = slot.take() {
                k = Tensor::cat(&[pk, k], 2)?;
                v = Tensor::cat(&[pv, v], 2)?;
            }
            *slot = Some((k.clone(), v.clone()));
        }
        let mask = if l > 1 {
            Some(causal_mask(l, offset, x.dtype(), x.device())?)
        } else {
            None
        };
        let y = attention(&q, &k, &v, mask.as_ref())?
            .transpose(1, 2)?
            .reshape((b, l, d))?;
        let x = (x + self.o.forward(&y)?)?;
        let m = self.fc2.forward(&gelu(&self.fc1.forward(&self.mlp_norm.forward(&x)?)?)?)?;
        Ok((x + m)?)
    }
}

/// Auxiliary head: one extra transformer layer on the trunk's final hidden
/// states and its own vocabulary projection, predicting two steps ahead.
struct MtpHead {
    layer: Block,
    norm: RmsNorm,
    head: Linear,
}

pub struct BackboneOutput {
    /// `(b, l, vocab)`.
    pub logits: Tensor,
    /// `(b, l, vocab)`; position `t` predicts the token at `t + 2`.
    pub mtp_logits: Option<Tensor>,
}

/// Decoder-only transformer over the unified vocabulary: rotary positions,
/// pre-norm blocks, untied input and output embeddings.
pub struct Backbone {
    cfg: BackboneConfig,
    vocab_size: usize,
    embed: Embedding,
    layers: Vec<Block>,
    norm: RmsNorm,
    head: Linear,
    mtp: Option<MtpHead>,
    rope: Rope,
    dtype: DType,
}

impl Backbone {
    /// Parameters live under `p` (conventionally `backbone`).
    pub fn new(p: &Params, cfg: BackboneConfig, mtp: &MtpConfig, vocab_size: usize) -> Result<Self> {
        cfg.validate()?;
        mtp.validate()?;
        let layers = (0..cfg.layers)
            .map(|i| Block::new(&p.pp(format!("layers.{i}")), &cfg))
            .collect::<Result<_>>()?;
        let mtp_head = if mtp.extra_layers > 0 {
            let m = p.pp("mtp");
            Some(MtpHead {
                layer: Block::new(&m.pp("layer"), &cfg)?,
                norm: RmsNorm::new(&m.pp("norm"), cfg.hidden)?,
                head: Linear::new(&m.pp("head"), cfg.hidden, vocab_size, false)?,
            })
        } else {
            None
        };
        Ok(Self {
            embed: Embedding::new(&p.pp("embed"), vocab_size, cfg.hidden)?,
            layers,
            norm: RmsNorm::new(&p.pp("norm"), cfg.hidden)?,
            head: Linear::new(&p.pp("head"), cfg.hidden, vocab_size, false)?,
            mtp: mtp_head,
            rope: Rope::new(&cfg, p.dtype())?,
            dtype: p.dtype(),
            cfg,
            vocab_size,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn has_mtp(&self) -> bool {
        self.mtp.is_some()
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if let Some(bad) = ids.iter().find(|t| t.0 as usize >= self.vocab_size) {
            return Err(OmniError::OutOfRange {
                what: "token id",
                value: bad.0 as usize,
                limit: self.vocab_size,
            });
        }
        Ok(())
    }

    /// `(len, hidden)` input rows: table lookups for ids, stream rows for
    /// injection slots.
    pub fn embed_input(&self, input: &ModelInput) -> Result<Tensor> {
        let ids = input.input_ids(TokenId(0));
        self.check_ids(&ids)?;
        let l = ids.len();
        let id_t = Tensor::from_vec(ids.iter().map(|t| t.0).collect::<Vec<_>>(), l, &Device::Cpu)?;
        let tok = self.embed.forward(&id_t)?;
        if input.num_slots() == 0 {
            return Ok(tok);
        }
        let mut offsets = Vec::with_capacity(input.streams().len());
        let mut acc = l;
        for s in input.streams() {
            let (_, w) = s.dims2()?;
            if w != self.cfg.hidden {
                return Err(OmniError::Shape(format!(
                    "injected rows have width {w}, backbone expects {}",
                    self.cfg.hidden
                )));
            }
            offsets.push(acc);
            acc += s.dims()[0];
        }
        let mut parts = vec![tok];
        parts.extend(input.streams().iter().map(|s| s.to_dtype(self.dtype)).collect::<candle_core::Result<Vec<_>>>()?);
        let table = Tensor::cat(&parts, 0)?;
        let index: Vec<u32> = input
            .positions()
            .iter()
            .enumerate()
            .map(|(t, p)| match p {
                Position::Token(_) => t as u32,
                Position::Slot { stream, row } => (offsets[*stream] + row) as u32,
            })
            .collect();
        Ok(table.index_select(&Tensor::from_vec(index, l, &Device::Cpu)?, 0)?)
    }

    /// Stacks inputs, right-padding shorter ones with zero rows.
    pub fn embed_batch(&self, inputs: &[&ModelInput]) -> Result<Tensor> {
        let max = inputs.iter().map(|i| i.len()).max().unwrap_or(0);
        if max == 0 {
            return Err(OmniError::InvalidArgument("empty batch".into()));
        }
        if max > self.cfg.context_length {
            return Err(OmniError::OutOfRange {
                what: "sequence length",
                value: max,
                limit: self.cfg.context_length,
            });
        }
        let rows = inputs
            .iter()
            .map(|i| Ok(self.embed_input(i)?.pad_with_zeros(0, 0, max - i.len())?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&rows, 0)?)
    }

    fn trunk(&self, x: &Tensor, offset: usize, mut cache: Option<&mut KvCache>) -> Result<Tensor> {
        let mut h = x.clone();
        if let Some(c) = cache.as_deref_mut() {
            if c.layers.len() != self.layers.len() {
                c.layers = vec![None; self.layers.len()];
            }
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let slot = cache.as_deref_mut().map(|c| &mut c.layers[i]);
            h = layer.forward(&h, &self.rope, offset, slot)?;
        }
        Ok(h)
    }

    pub fn forward(&self, inputs: &[&ModelInput], with_mtp: bool) -> Result<BackboneOutput> {
        let x = self.embed_batch(inputs)?;
        self.forward_embedded(&x, with_mtp)
    }

    pub fn forward_embedded(&self, x: &Tensor, with_mtp: bool) -> Result<BackboneOutput> {
        let h = self.trunk(x, 0, None)?;
        let logits = self.head.forward(&self.norm.forward(&h)?)?;
        let mtp_logits = match (&self.mtp, with_mtp) {
            (Some(m), true) => {
                let g = m.layer.forward(&h, &self.rope, 0, None)?;
                Some(m.head.forward(&m.norm.forward(&g)?)?)
            }
            _ => None,
        };
        Ok(BackboneOutput { logits, mtp_logits })
    }

    /// Runs `x: (1, l, hidden)` through the cache and returns last-position
    /// logits.
    pub fn forward_cached(&self, x: &Tensor, cache: &mut KvCache) -> Result<Vec<f32>> {
        let (_, l, _) = x.dims3()?;
        let offset = cache.len;
        if offset + l > self.cfg.context_length {
            return Err(OmniError::OutOfRange {
                what: "sequence length",
                value: offset + l,
                limit: self.cfg.context_length,
            });
        }
        let h = self.trunk(x, offset, Some(cache))?;
        cache.len += l;
        let last = h.narrow(1, l - 1, 1)?;
        let logits = self.head.forward(&self.norm.forward(&last)?)?;
        Ok(logits.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?)
    }

    pub fn embed_token(&self, id: TokenId) -> Result<Tensor> {
        self.check_ids(&[id])?;
        let t = Tensor::new(&[id.0], &Device::Cpu)?;
        Ok(self.embed.forward(&t)?.unsqueeze(0)?)
    }
}
