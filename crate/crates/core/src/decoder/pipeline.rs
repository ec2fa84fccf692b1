use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::{latent_size, LatentCodec, LatentGrid};
use super::dit::VelocityField;
use super::flow::{sample, GuidanceConfig};
use super::phases::{CropWindow, PhaseConfig};
use crate::error::{OmniError, Result};
use crate::nn::resize::bilinear;
use crate::vision::{resize_square, AspectRecord, ImageBuffer, VisionTokenGrid, VisionTokenizer, GRID};

/// Cond grid `(C, height, width)` for a window of the token grid.
pub fn features_to_cond(features: &Tensor, window: &CropWindow, width: usize, height: usize) -> Result<Tensor> {
    if width == 0 || height == 0 {
        return Err(OmniError::InvalidArgument("cond size must be non-zero".into()));
    }
    let sub = if window.tokens == GRID {
        features.clone()
    } else {
        features
            .narrow(1, window.row0, window.tokens)?
            .narrow(2, window.col0, window.tokens)?
            .contiguous()?
    };
    bilinear(&sub, height, width)
}

/// Detokenized features resized to a `width × height` latent grid.
pub fn tokens_to_cond(tok: &VisionTokenizer, grid: &VisionTokenGrid, width: usize, height: usize) -> Result<Tensor> {
    let feats = tok.detokenize(grid)?;
    let full = CropWindow { x0: 0, y0: 0, size: 0, col0: 0, row0: 0, tokens: GRID };
    features_to_cond(feats.tensor(), &full, width, height)
}

/// One training pair: target latent and its cond grid.
#[derive(Debug, Clone)]
pub struct DecoderExample {
    pub latent: Tensor,
    pub cond: Tensor,
}

/// Tokenizes `img`, resizes it to the phase's source size and cuts a
/// token-aligned window.
pub fn prepare_example<R: Rng>(
    img: &ImageBuffer,
    tok: &VisionTokenizer,
    phase: &PhaseConfig,
    rng: &mut R,
    dtype: DType,
) -> Result<DecoderExample> {
    let grid = tok.tokenize(&resize_square(img)?)?;
    let feats = tok.detokenize(&grid)?;
    prepare_from_features(img, feats.tensor(), phase, rng, dtype)
}

/// Same as [`prepare_example`] for precomputed `(C, 27, 27)` features.
pub fn prepare_from_features<R: Rng>(
    img: &ImageBuffer,
    features: &Tensor,
    phase: &PhaseConfig,
    rng: &mut R,
    dtype: DType,
) -> Result<DecoderExample> {
    let src = img.resize(phase.source_px, phase.source_px)?;
    let window = phase.sample_crop(rng)?;
    let pixels = if phase.crop { src.crop(window.x0, window.y0, window.size, window.size)? } else { src };
    let latent = LatentCodec.encode(&pixels, dtype)?;
    let (w, h) = latent.size();
    let cond = features_to_cond(&features.to_dtype(dtype)?, &window, w, h)?;
    Ok(DecoderExample { latent: latent.tensor().clone(), cond })
}

/// Stacks examples into `(b, 3, h, w)` latents and `(b, c, h, w)` conds.
pub fn stack_examples(examples: &[DecoderExample]) -> Result<(Tensor, Tensor)> {
    if examples.is_empty() {
        return Err(OmniError::InvalidArgument("no decoder examples".into()));
    }
    let lat: Vec<&Tensor> = examples.iter().map(|e| &e.latent).collect();
    let cond: Vec<&Tensor> = examples.iter().map(|e| &e.cond).collect();
    Ok((Tensor::stack(&lat, 0)?, Tensor::stack(&cond, 0)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    /// Square pixel size the latent is sampled at.
    pub sample_px: usize,
    pub steps: usize,
    pub guidance: GuidanceConfig,
    pub seed: u64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { sample_px: 96, steps: 20, guidance: GuidanceConfig::default(), seed: 0 }
    }
}

/// Samples a latent for `grid` and decodes it at the recorded original size.
pub fn decode_tokens(
    main: &dyn VelocityField,
    bad: Option<&dyn VelocityField>,
    tok: &VisionTokenizer,
    grid: &VisionTokenGrid,
    aspect: AspectRecord,
    opts: &DecodeOptions,
    dtype: DType,
) -> Result<ImageBuffer> {
    let (lw, lh) = latent_size(opts.sample_px, opts.sample_px);
    let cond = tokens_to_cond(tok, grid, lw, lh)?.to_dtype(dtype)?.unsqueeze(0)?;
    let x = sample(main, bad, &cond, opts.steps, &opts.guidance, opts.seed)?;
    let latent = LatentGrid::new(x.squeeze(0)?)?;
    LatentCodec.decode(&latent, aspect.width, aspect.height)
}
