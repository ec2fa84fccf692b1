use candle_core::{DType, Device, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::image::{ImageBuffer, TOKENIZER_INPUT};
use crate::error::{OmniError, Result};
use crate::nn::resize::{adaptive_avg_pool, adaptive_pool_weights, separable};
use crate::nn::{gelu, AdamW, Gradients, Init, Linear, ParamStore, Params};

pub const GRID: usize = 27;
pub const GRID_CELLS: usize = GRID * GRID;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisionTokenizerConfig {
    pub patch: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub codebook_size: usize,
    pub ema_decay: f64,
    pub commitment: f64,
    /// Reconstruction target resolution per token cell (pixels per side).
    pub recon_cell: usize,
}

impl Default for VisionTokenizerConfig {
    fn default() -> Self {
        Self {
            patch: 16,
            hidden: 128,
            feature_dim: 64,
            codebook_size: 512,
            ema_decay: 0.99,
            commitment: 0.25,
            recon_cell: 4,
        }
    }
}

/// 27×27 grid of local codebook ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisionTokenGrid {
    ids: Vec<u32>,
    codebook_size: usize,
}

impl VisionTokenGrid {
    pub fn new(ids: Vec<u32>, codebook_size: usize) -> Result<Self> {
        if ids.len() != GRID_CELLS {
            return Err(OmniError::Shape(format!(
                "vision grid needs {GRID_CELLS} ids, got {}",
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= codebook_size) {
            return Err(OmniError::OutOfRange {
                what: "vision token id",
                value: bad as usize,
                limit: codebook_size,
            });
        }
        Ok(Self { ids, codebook_size })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    /// Row-major little-endian u16 ids.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.ids
            .iter()
            .flat_map(|&i| (i as u16).to_le_bytes())
            .collect()
    }

    pub fn from_bytes(bytes: &[u8], codebook_size: usize) -> Result<Self> {
        if bytes.len() != GRID_CELLS * 2 {
            return Err(OmniError::Shape(format!(
                "vision grid stream must be {} bytes, got {}",
                GRID_CELLS * 2,
                bytes.len()
            )));
        }
        let ids = bytes
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]) as u32)
            .collect();
        Self::new(ids, codebook_size)
    }
}

/// 27×27×C continuous features, stored as a `(C, 27, 27)` tensor.
#[derive(Debug, Clone)]
pub struct FeatureGrid {
    features: Tensor,
}

impl FeatureGrid {
    pub fn new(features: Tensor) -> Result<Self> {
        let (_, h, w) = features.dims3()?;
        if (h, w) != (GRID, GRID) {
            return Err(OmniError::Shape(format!("feature grid must be 27x27, got {h}x{w}")));
        }
        Ok(Self { features })
    }

    /// `(C, 27, 27)`.
    pub fn tensor(&self) -> &Tensor {
        &self.features
    }

    pub fn channels(&self) -> usize {
        self.features.dims()[0]
    }
}

/// Stand-in semantic tokenizer: stride-16 patch features pooled to 27×27 and
/// vector-quantized against an EMA-updated codebook.
pub struct VisionTokenizer {
    cfg: VisionTokenizerConfig,
    store: ParamStore,
    prefix: Params,
    patch_embed: Linear,
    proj: Linear,
    recon: Linear,
    codebook: Tensor,
    ema_count: Tensor,
    ema_sum: Tensor,
    frozen: bool,
}

impl VisionTokenizer {
    pub fn new(p: &Params, cfg: VisionTokenizerConfig) -> Result<Self> {
        let patch_dim = cfg.patch * cfg.patch * 3;
        let c = cfg.feature_dim;
        let r = cfg.recon_cell;
        Ok(Self {
            cfg,
            store: p.store().clone(),
            prefix: p.clone(),
            patch_embed: Linear::new(&p.pp("patch_embed"), patch_dim, cfg.hidden, true)?,
            proj: Linear::new(&p.pp("proj"), cfg.hidden, c, true)?,
            recon: Linear::new(&p.pp("recon"), c, 3 * r * r, true)?,
            codebook: p.get((cfg.codebook_size, c), "codebook", Init::Normal(1.0))?,
            ema_count: p.get(cfg.codebook_size, "ema_count", Init::Const(1.0))?,
            ema_sum: p.get((cfg.codebook_size, c), "ema_sum", Init::Zeros)?,
            frozen: false,
        })
    }

    pub fn config(&self) -> &VisionTokenizerConfig {
        &self.cfg
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn dtype(&self) -> DType {
        self.codebook.dtype()
    }

    fn check_input(img: &ImageBuffer) -> Result<()> {
        if (img.width(), img.height()) != (TOKENIZER_INPUT, TOKENIZER_INPUT) {
            return Err(OmniError::Shape(format!(
                "tokenizer input must be {TOKENIZER_INPUT}x{TOKENIZER_INPUT}, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        Ok(())
    }

    /// `(B, 384·384·3)` pixels to `(B, 729, C)` pre-quantization features.
    fn features(&self, images: &[&ImageBuffer]) -> Result<Tensor> {
        let b = images.len();
        let p = self.cfg.patch;
        let n = TOKENIZER_INPUT / p;
        let mut data = Vec::with_capacity(b * TOKENIZER_INPUT * TOKENIZER_INPUT * 3);
        for img in images {
            Self::check_input(img)?;
            data.extend_from_slice(img.data());
        }
        let x = Tensor::from_vec(data, (b, n, p, n, p, 3), &Device::Cpu)?.to_dtype(self.dtype())?;
        let patches = x
            .permute((0, 1, 3, 2, 4, 5))?
            .contiguous()?
            .reshape((b * n * n, p * p * 3))?;
        let h = gelu(&self.patch_embed.forward(&patches)?)?;
        let f = self.proj.forward(&h)?; // (b*n*n, C)
        let c = self.cfg.feature_dim;
        let f = f.reshape((b, n, n, c))?.permute((0, 3, 1, 2))?.contiguous()?;
        let pooled = adaptive_avg_pool(&f, GRID, GRID)?; // (b, C, 27, 27)
        Ok(pooled.permute((0, 2, 3, 1))?.contiguous()?.reshape((b, GRID_CELLS, c))?)
    }

    fn nearest(&self, flat: &Tensor) -> Result<Tensor> {
        // |f|^2 - 2 f.e + |e|^2, argmin over codebook
        let e = self.codebook.detach();
        let f2 = flat.sqr()?.sum_keepdim(D::Minus1)?;
        let e2 = e.sqr()?.sum_keepdim(D::Minus1)?.t()?;
        let cross = flat.matmul(&e.t()?)?;
        let d = f2.broadcast_add(&e2)?.broadcast_sub(&(cross * 2.0)?)?;
        Ok(d.argmin(D::Minus1)?)
    }

    pub fn tokenize(&self, img: &ImageBuffer) -> Result<VisionTokenGrid> {
        Ok(self.tokenize_batch(&[img])?.pop().unwrap())
    }

    pub fn tokenize_batch(&self, images: &[&ImageBuffer]) -> Result<Vec<VisionTokenGrid>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let f = self.features(images)?.detach();
        let c = self.cfg.feature_dim;
        let ids: Vec<u32> = self.nearest(&f.reshape(((), c))?)?.to_vec1()?;
        ids.chunks(GRID_CELLS)
            .map(|chunk| VisionTokenGrid::new(chunk.to_vec(), self.cfg.codebook_size))
            .collect()
    }

    /// Codebook lookup per cell.
    pub fn detokenize(&self, grid: &VisionTokenGrid) -> Result<FeatureGrid> {
        if grid.codebook_size() != self.cfg.codebook_size {
            return Err(OmniError::InvalidArgument(format!(
                "grid built for codebook of {}, tokenizer has {}",
                grid.codebook_size(),
                self.cfg.codebook_size
            )));
        }
        let ids = Tensor::from_vec(grid.ids().to_vec(), GRID_CELLS, &Device::Cpu)?;
        let rows = self.codebook.detach().index_select(&ids, 0)?; // (729, C)
        FeatureGrid::new(rows.t()?.contiguous()?.reshape((self.cfg.feature_dim, GRID, GRID))?)
    }

    /// Nearest-entry assignment of an arbitrary feature grid.
    pub fn quantize_features(&self, grid: &FeatureGrid) -> Result<VisionTokenGrid> {
        let c = self.cfg.feature_dim;
        let flat = grid.tensor().reshape((c, GRID_CELLS))?.t()?.contiguous()?;
        VisionTokenGrid::new(self.nearest(&flat)?.to_vec1()?, self.cfg.codebook_size)
    }

    /// Seeds codebook entries with features of the given images.
    pub fn init_codebook_from(&mut self, images: &[&ImageBuffer]) -> Result<()> {
        let c = self.cfg.feature_dim;
        let f = self.features(images)?.detach().reshape(((), c))?;
        let n = f.dims()[0];
        let k = self.cfg.codebook_size;
        let idx: Vec<u32> = (0..k).map(|i| ((i * 7919) % n) as u32).collect();
        let idx = Tensor::from_vec(idx, k, &Device::Cpu)?;
        let picked = f.index_select(&idx, 0)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0x7070);
        let noise: Vec<f32> = (0..k * c).map(|_| rng.sample::<f32, _>(StandardNormal) * 1e-3).collect();
        let jitter = Tensor::from_vec(noise, (k, c), &Device::Cpu)?.to_dtype(self.dtype())?;
        let init = (picked + jitter)?;
        self.set_codebook(&init)?;
        self.store.assign(&self.prefix.path("ema_count"), &Tensor::ones(k, self.dtype(), &Device::Cpu)?)?;
        self.store.assign(&self.prefix.path("ema_sum"), &init)?;
        Ok(())
    }

    fn set_codebook(&self, value: &Tensor) -> Result<()> {
        self.store.assign(&self.prefix.path("codebook"), value)
    }

    /// Target for the reconstruction head: the image pooled to
    /// `27·recon_cell` pixels per side, `(B, 3, R, R)`.
    fn recon_target(&self, images: &[&ImageBuffer]) -> Result<Tensor> {
        let r = GRID * self.cfg.recon_cell;
        let w = Tensor::from_vec(adaptive_pool_weights(r, TOKENIZER_INPUT), (r, TOKENIZER_INPUT), &Device::Cpu)?
            .to_dtype(self.dtype())?;
        let mut data = Vec::new();
        for img in images {
            data.extend(img.to_chw());
        }
        let x = Tensor::from_vec(data, (images.len(), 3, TOKENIZER_INPUT, TOKENIZER_INPUT), &Device::Cpu)?
            .to_dtype(self.dtype())?;
        separable(&x, &w, &w)
    }

    /// Reconstruction + commitment objective with straight-through gradients
    /// to the encoder; codebook entries follow exponential moving averages.
    /// When frozen, computes the loss without touching any weight.
    pub fn train_vq_step(&mut self, images: &[&ImageBuffer], opt: &mut AdamW) -> Result<f64> {
        if images.is_empty() {
            return Err(OmniError::InvalidArgument("empty image batch".into()));
        }
        let b = images.len();
        let c = self.cfg.feature_dim;
        let r = self.cfg.recon_cell;
        let f = self.features(images)?; // (b, 729, C)
        let flat = f.reshape((b * GRID_CELLS, c))?;
        let ids = self.nearest(&flat.detach())?;
        let q = self.codebook.detach().index_select(&ids, 0)?;
        let q_st = (&flat + (&q - &flat)?.detach())?;
        let recon = self.recon.forward(&q_st)?; // (b*729, 3*r*r)
        let recon = recon
            .reshape((b, GRID, GRID, 3, r, r))?
            .permute((0, 3, 1, 4, 2, 5))?
            .contiguous()?
            .reshape((b, 3, GRID * r, GRID * r))?;
        let target = self.recon_target(images)?;
        let recon_loss = (recon - target)?.sqr()?.mean_all()?;
        let commit = (&flat - &q)?.sqr()?.mean_all()?;
        let loss = (recon_loss + (commit * self.cfg.commitment)?)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if self.frozen {
            return Ok(value);
        }
        let grads = Gradients::from_loss(&loss, &self.store)?;
        opt.step(&self.store, &grads, None)?;
        self.ema_update(&flat.detach(), &ids)?;
        Ok(value)
    }

    fn ema_update(&self, flat: &Tensor, ids: &Tensor) -> Result<()> {
        let k = self.cfg.codebook_size;
        let gamma = self.cfg.ema_decay;
        let n = flat.dims()[0];
        let ones = Tensor::ones(n, self.dtype(), &Device::Cpu)?;
        let counts = Tensor::zeros(k, self.dtype(), &Device::Cpu)?.index_add(ids, &ones, 0)?;
        let sums = Tensor::zeros((k, self.cfg.feature_dim), self.dtype(), &Device::Cpu)?.index_add(ids, flat, 0)?;
        let new_count = ((&self.ema_count * gamma)? + (counts * (1.0 - gamma))?)?;
        let new_sum = ((&self.ema_sum * gamma)? + (sums * (1.0 - gamma))?)?;
        let total = new_count.sum_all()?;
        let eps = 1e-5;
        // Laplace smoothing keeps unused entries finite
        let smoothed = ((&new_count + eps)? / (total.clone() + k as f64 * eps)?.broadcast_as(k)?)?
            .broadcast_mul(&total.broadcast_as(k)?)?;
        let codebook = new_sum.broadcast_div(&smoothed.unsqueeze(1)?)?;
        self.store.assign(&self.prefix.path("ema_count"), &new_count)?;
        self.store.assign(&self.prefix.path("ema_sum"), &new_sum)?;
        self.set_codebook(&codebook)
    }
}
