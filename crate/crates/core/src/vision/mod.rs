//! Image buffers and the semantic vision tokenizer (384×384 in, 27×27 ids out).

mod image;
mod tokenizer;

pub use image::{psnr, resize_square, AspectRecord, ImageBuffer, TOKENIZER_INPUT};
pub use tokenizer::{
    FeatureGrid, VisionTokenGrid, VisionTokenizer, VisionTokenizerConfig, GRID, GRID_CELLS,
};
