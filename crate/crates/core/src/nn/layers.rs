use candle_core::{DType, Device, Tensor, D};

use super::params::{Init, Params};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(p: &Params, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let weight = p.get((out_dim, in_dim), "weight", Init::FanIn(in_dim))?;
        let bias = if bias {
            Some(p.get(out_dim, "bias", Init::FanIn(in_dim))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    /// Same as [`Linear::new`] but with all-zero weights and bias.
    pub fn zeros(p: &Params, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = p.get((out_dim, in_dim), "weight", Init::Zeros)?;
        let bias = Some(p.get(out_dim, "bias", Init::Zeros)?);
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    /// Applies to the last dimension of an input of any rank.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().unwrap();
        let rows = x.elem_count() / in_dim;
        let y = x.reshape((rows, in_dim))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Clone, Debug)]
pub struct RmsNorm {
    weight: Tensor,
    eps: f64,
}

impl RmsNorm {
    pub fn new(p: &Params, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: p.get(dim, "weight", Init::Const(1.0))?,
            eps: 1e-6,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let ms = x.sqr()?.mean_keepdim(D::Minus1)?;
        let y = x.broadcast_div(&(ms + self.eps)?.sqrt()?)?;
        Ok(y.broadcast_mul(&self.weight)?)
    }
}

/// Non-affine layer norm over the last dimension.
pub fn layer_norm_plain(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let xc = x.broadcast_sub(&mean)?;
    let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
    Ok(xc.broadcast_div(&(var + eps)?.sqrt()?)?)
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
}

impl LayerNorm {
    pub fn new(p: &Params, dim: usize) -> Result<Self> {
        Ok(Self {
            weight: p.get(dim, "weight", Init::Const(1.0))?,
            bias: p.get(dim, "bias", Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(layer_norm_plain(x, 1e-5)?
            .broadcast_mul(&self.weight)?
            .broadcast_add(&self.bias)?)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(p: &Params, rows: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            table: p.get((rows, dim), "weight", Init::Normal(0.02))?,
        })
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn rows(&self) -> usize {
        self.table.dims()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.dims()[1]
    }

    /// `ids` is a flat u32 tensor; returns `(n, dim)`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        Ok(self.table.index_select(ids, 0)?)
    }
}

/// 1-D convolution over `(batch, channels, time)`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    dilation: usize,
    padding: usize,
}

impl Conv1d {
    pub fn new(
        p: &Params,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        dilation: usize,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel;
        Ok(Self {
            weight: p.get((out_ch, in_ch, kernel), "weight", Init::FanIn(fan_in))?,
            bias: p.get(out_ch, "bias", Init::FanIn(fan_in))?,
            stride,
            dilation,
            padding: dilation * (kernel - 1) / 2,
        })
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv1d(&self.weight, self.padding, self.stride, self.dilation, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

/// Transposed 1-D convolution expressed as zero-stuffing followed by a plain
/// convolution. Output length is exactly `time * factor`.
#[derive(Clone, Debug)]
pub struct Upsample1d {
    conv: Conv1d,
    factor: usize,
    edge_pad: usize,
}

impl Upsample1d {
    pub fn new(p: &Params, in_ch: usize, out_ch: usize, factor: usize) -> Result<Self> {
        // kernel - 2 * padding == factor
        let (kernel, padding) = if factor % 2 == 0 {
            (2 * factor, factor / 2)
        } else {
            (2 * factor + 1, (factor + 1) / 2)
        };
        let conv = Conv1d::new(p, in_ch, out_ch, kernel, 1, 1)?.with_padding(0);
        Ok(Self {
            conv,
            factor,
            edge_pad: kernel - 1 - padding,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, t) = x.dims3()?;
        let stuffed = if self.factor > 1 {
            x.unsqueeze(3)?
                .pad_with_zeros(3, 0, self.factor - 1)?
                .reshape((b, c, t * self.factor))?
                .narrow(2, 0, (t - 1) * self.factor + 1)?
        } else {
            x.clone()
        };
        let padded = stuffed.pad_with_zeros(2, self.edge_pad, self.edge_pad)?;
        self.conv.forward(&padded)
    }
}

pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.gelu_erf()?)
}

/// Additive causal mask `(len, len)` with `-inf` above the diagonal.
pub fn causal_mask(len: usize, offset: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let total = len + offset;
    let data: Vec<f32> = (0..len)
        .flat_map(|i| {
            (0..total).map(move |j| {
                if j > i + offset {
                    f32::NEG_INFINITY
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(Tensor::from_vec(data, (len, total), device)?.to_dtype(dtype)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

/// Scaled dot-product attention on `(batch, heads, len, head_dim)` tensors.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
    let hd = q.dim(D::Minus1)?;
    let scores = (q.contiguous()?.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
    let scores = match mask {
        Some(m) => scores.broadcast_add(m)?,
        None => scores,
    };
    Ok(softmax_last(&scores)?.matmul(&v.contiguous()?)?)
}

/// Sinusoidal embedding of scalar values, `(n,) -> (n, dim)`.
pub fn sinusoidal(values: &[f64], dim: usize, max_period: f64, dtype: DType, device: &Device) -> Result<Tensor> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(values.len() * dim);
    for &v in values {
        for i in 0..half {
            let freq = (-(max_period.ln()) * i as f64 / half as f64).exp();
            data.push((v * freq).cos());
        }
        for i in 0..half {
            let freq = (-(max_period.ln()) * i as f64 / half as f64).exp();
            data.push((v * freq).sin());
        }
        if dim % 2 == 1 {
            data.push(0.0);
        }
    }
    Ok(Tensor::from_vec(data, (values.len(), dim), device)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    #[test]
    fn upsample_output_length_is_exact() {
        let store = ParamStore::new(DType::F32, 1);
        for factor in [2, 4, 5, 8] {
            let up = Upsample1d::new(&store.root().pp(format!("u{factor}")), 3, 2, factor).unwrap();
            for t in [1, 2, 7] {
                let x = Tensor::ones((1, 3, t), DType::F32, &Device::Cpu).unwrap();
                let y = up.forward(&x).unwrap();
                assert_eq!(y.dims(), &[1, 2, t * factor]);
            }
        }
    }

    #[test]
    fn causal_mask_blocks_future() {
        let m = causal_mask(3, 0, DType::F32, &Device::Cpu).unwrap();
        let v: Vec<Vec<f32>> = m.to_vec2().unwrap();
        assert_eq!(v[0][0], 0.0);
        assert!(v[0][1].is_infinite());
        assert_eq!(v[2][1], 0.0);
    }
}
