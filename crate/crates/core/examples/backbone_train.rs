//! Trains a tiny backbone with the multi-token-prediction head on one
//! repeated sequence, then samples from it under the modality state machine.

use candle_core::DType;
use omnistack::backbone::{backbone_loss, generate, Backbone, BackboneConfig, BackboneSession, MtpConfig, SamplerSettings};
use omnistack::interleave::{MaskFactors, ModelInput};
use omnistack::nn::{AdamW, AdamWConfig, Gradients, ParamStore};
use omnistack::vocab::{build_layout, Region, TokenId, DEFAULT_SPECIALS, TURN_START};

fn main() -> anyhow::Result<()> {
    let layout = build_layout(&DEFAULT_SPECIALS, 32, 8, 9)?;
    let cfg = BackboneConfig { layers: 2, hidden: 32, heads: 4, context_length: 64, mlp_ratio: 2, rope_theta: 10_000.0 };
    let mtp = MtpConfig::default();
    let store = ParamStore::new(DType::F32, 0);
    let model = Backbone::new(&store.root().pp("backbone"), cfg, &mtp, layout.total())?;
    println!("{} parameters", store.num_params());

    let mut ids = vec![layout.special(TURN_START)?];
    for i in 0..24 {
        ids.push(layout.global_id(Region::Text, (i * 5) % 32)?);
    }
    let input = ModelInput::from_ids(&ids, &layout, &MaskFactors::default())?;
    let mut opt = AdamW::new(AdamWConfig { lr: 1e-2, ..AdamWConfig::default() });
    for step in 0..=60 {
        let out = model.forward(&[&input], true)?;
        let loss = backbone_loss(&out, &[&input], &mtp)?;
        if step % 10 == 0 {
            println!("step {step:>2}: main {:.4} aux {:.4}", loss.main, loss.aux.unwrap_or(0.0));
        }
        let grads = Gradients::from_loss(&loss.total, &store)?;
        opt.step(&store, &grads, None)?;
    }

    let prompt = ModelInput::from_ids(&ids[..4], &layout, &MaskFactors::default())?;
    let mut session = BackboneSession::new(&model);
    let out = generate(&mut session, &prompt, &layout, &SamplerSettings { temperature: 0.5, top_k: 4, seed: 1 }, 12)?;
    let want: Vec<TokenId> = ids[4..16].to_vec();
    println!("sampled {:?}", out.tokens.iter().map(|t| t.0).collect::<Vec<_>>());
    println!("expected {:?}", want.iter().map(|t| t.0).collect::<Vec<_>>());
    Ok(())
}
