//! Tokenizes procedural images of different sizes into 27x27 grids.

use candle_core::DType;
use omnistack::corpus::shape_image;
use omnistack::nn::ParamStore;
use omnistack::vision::{resize_square, VisionTokenizer, VisionTokenizerConfig};
use rand::SeedableRng;

fn main() -> anyhow::Result<()> {
    let store = ParamStore::new(DType::F32, 0);
    let mut tok = VisionTokenizer::new(&store.root(), VisionTokenizerConfig::default())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let images: Vec<_> = [(96, 64), (64, 64), (48, 120)]
        .into_iter()
        .map(|(w, h)| shape_image(&mut rng, w, h))
        .collect::<Result<_, _>>()?;
    let squares: Vec<_> = images.iter().map(|s| resize_square(&s.image)).collect::<Result<_, _>>()?;
    tok.init_codebook_from(&squares.iter().collect::<Vec<_>>())?;
    tok.set_frozen(true);
    for (s, square) in images.iter().zip(&squares) {
        let grid = tok.tokenize(square)?;
        let distinct = grid.ids().iter().collect::<std::collections::BTreeSet<_>>().len();
        println!(
            "{}x{} \"{}\": {} ids, {distinct} distinct, first row {:?}",
            s.image.width(),
            s.image.height(),
            s.caption,
            grid.ids().len(),
            &grid.ids()[..8]
        );
    }
    Ok(())
}
