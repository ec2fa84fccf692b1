use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Result;
use crate::nn::{AdamW, AdamWConfig, ParamStore};
use crate::vision::{AspectRecord, ImageBuffer, VisionTokenGrid, VisionTokenizer, VisionTokenizerConfig};

struct Oracle {
    v: Tensor,
}

impl VelocityField for Oracle {
    fn velocity(&self, _x: &Tensor, _c: &Tensor, _t: &[f64]) -> Result<Tensor> {
        Ok(self.v.clone())
    }
}

fn tokenizer() -> (ParamStore, VisionTokenizer) {
    let s = ParamStore::new(DType::F32, 21);
    let t = VisionTokenizer::new(&s.root().pp("vision_tokenizer"), VisionTokenizerConfig::default()).unwrap();
    (s, t)
}

fn small_cfg() -> DecoderConfig {
    DecoderConfig { blocks: 1, width: 16, heads: 2, cond_channels: 4 }
}

#[test]
fn perfect_velocity_has_zero_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = gaussian(&[2, 3, 4, 4], DType::F64, &mut rng).unwrap();
    let eps = gaussian(&[2, 3, 4, 4], DType::F64, &mut rng).unwrap();
    let cond = Tensor::zeros((2, 4, 4, 4), DType::F64, &Device::Cpu).unwrap();
    let oracle = Oracle { v: (&eps - &x0).unwrap() };
    let loss = flow_loss(&oracle, &x0, &cond, &[0.3, 0.9], &eps).unwrap();
    assert_eq!(loss.to_scalar::<f64>().unwrap(), 0.0);
    let at0 = interpolate(&x0, &eps, &[0.0, 0.0]).unwrap();
    let a: Vec<f64> = at0.flatten_all().unwrap().to_vec1().unwrap();
    let b: Vec<f64> = x0.flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(a, b);
}

#[test]
fn cond_geometry() {
    let (_s, tok) = tokenizer();
    let grid = VisionTokenGrid::new((0..729).map(|i| i % 512).collect(), 512).unwrap();
    let (w, h) = latent_size(928, 624);
    let c = tokens_to_cond(&tok, &grid, w, h).unwrap();
    assert_eq!(c.dims(), &[64, 78, 116]);
    let (w, h) = latent_size(384, 384);
    assert_eq!(tokens_to_cond(&tok, &grid, w, h).unwrap().dims(), &[64, 48, 48]);
    let same = tokens_to_cond(&tok, &grid, 27, 27).unwrap();
    let feats = tok.detokenize(&grid).unwrap();
    let a: Vec<f32> = same.flatten_all().unwrap().to_vec1().unwrap();
    let b: Vec<f32> = feats.tensor().flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(a, b);
    assert!(tokens_to_cond(&tok, &grid, 0, 5).is_err());
}

#[test]
fn guidance_identity_and_errors() {
    let store = ParamStore::new(DType::F32, 2);
    let main = ConcatDit::new(&store.root().pp("decoder"), small_cfg()).unwrap();
    let bad = ConcatDit::new(&store.root().pp("bad"), DecoderConfig { width: 8, ..small_cfg() }).unwrap();
    let cond = Tensor::ones((1, 4, 3, 3), DType::F32, &Device::Cpu).unwrap();
    let one = GuidanceConfig { scale: 1.0 };
    let a = sample(&main, None, &cond, 4, &one, 7).unwrap();
    let b = sample(&main, Some(&bad), &cond, 4, &one, 7).unwrap();
    let a: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
    let b: Vec<f32> = b.flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(a, b);
    assert!(sample(&main, None, &cond, 4, &GuidanceConfig::default(), 7).is_err());
    let g1 = sample(&main, Some(&bad), &cond, 4, &GuidanceConfig::default(), 7).unwrap();
    let g2 = sample(&main, Some(&bad), &cond, 4, &GuidanceConfig::default(), 7).unwrap();
    let g1: Vec<f32> = g1.flatten_all().unwrap().to_vec1().unwrap();
    let g2: Vec<f32> = g2.flatten_all().unwrap().to_vec1().unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn shape_mismatch_is_rejected() {
    let store = ParamStore::new(DType::F32, 2);
    let main = ConcatDit::new(&store.root().pp("decoder"), small_cfg()).unwrap();
    let x = Tensor::zeros((1, 3, 4, 4), DType::F32, &Device::Cpu).unwrap();
    let cond = Tensor::zeros((1, 4, 3, 4), DType::F32, &Device::Cpu).unwrap();
    assert!(main.velocity(&x, &cond, &[0.5]).is_err());
}

#[test]
fn output_depends_on_concatenated_cond() {
    let store = ParamStore::new(DType::F32, 3);
    let net = ConcatDit::new(&store.root().pp("decoder"), small_cfg()).unwrap();
    let mut opt = AdamW::new(AdamWConfig { lr: 1e-2, ..AdamWConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x0 = gaussian(&[2, 3, 2, 2], DType::F32, &mut rng).unwrap();
    let cond = gaussian(&[2, 4, 2, 2], DType::F32, &mut rng).unwrap();
    let first = train_step(&net, &store, &mut opt, &x0, &cond, &mut rng).unwrap();
    let mut last = first;
    for _ in 0..150 {
        last = train_step(&net, &store, &mut opt, &x0, &cond, &mut rng).unwrap();
    }
    assert!(last < first, "{last} !< {first}");
    let x = gaussian(&[2, 3, 2, 2], DType::F32, &mut rng).unwrap();
    let with: Vec<f32> = net.velocity(&x, &cond, &[0.5, 0.5]).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    let zero = cond.zeros_like().unwrap();
    let without: Vec<f32> = net.velocity(&x, &zero, &[0.5, 0.5]).unwrap().flatten_all().unwrap().to_vec1().unwrap();
    assert_ne!(with, without);
}

#[test]
fn decode_restores_aspect() {
    let (_s, tok) = tokenizer();
    let store = ParamStore::new(DType::F32, 4);
    let main = ConcatDit::new(&store.root().pp("decoder"), DecoderConfig { cond_channels: 64, ..small_cfg() }).unwrap();
    let grid = VisionTokenGrid::new(vec![7; 729], 512).unwrap();
    let opts = DecodeOptions { sample_px: 16, steps: 2, guidance: GuidanceConfig { scale: 1.0 }, seed: 0 };
    let aspect = AspectRecord { width: 928, height: 624 };
    let img = decode_tokens(&main, None, &tok, &grid, aspect, &opts, DType::F32).unwrap();
    assert_eq!((img.width(), img.height()), (928, 624));
    assert_eq!(img.original_aspect().ratio(), aspect.ratio());
    let src = ImageBuffer::filled(10, 20, [0.5; 3]).unwrap();
    let ex = prepare_example(&src, &tok, &phase_schedule(1).unwrap(), &mut ChaCha8Rng::seed_from_u64(0), DType::F32).unwrap();
    assert_eq!(ex.latent.dims(), &[3, 8, 8]);
    assert_eq!(ex.cond.dims(), &[64, 8, 8]);
}
