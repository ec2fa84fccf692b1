use super::items::text_to_global;
use super::model::OmniModel;
use crate::backbone::{generate, sample_span, BackboneSession, SamplerSettings, SpanEvent};
use crate::decoder::{decode_tokens, DecodeOptions};
use crate::error::{OmniError, Result};
use crate::fsq::Code;
use crate::interleave::{assemble, generation_prompt, MaskFactors, ModelInput, Role, Segment, Turn};
use crate::vision::{AspectRecord, ImageBuffer, VisionTokenGrid, GRID_CELLS};
use crate::vocab::{Region, TokenId, VocabLayout, AUDIO_START, THINK_CLOSE, THINK_OPEN, VISION_START};
use crate::vocoder::SpeakerEmbedding;

#[derive(Debug, Clone)]
pub struct GeneratedText {
    pub tokens: Vec<TokenId>,
    pub text: String,
}

fn prompt(model: &OmniModel, user: &str) -> Result<ModelInput> {
    if user.trim().is_empty() {
        return Err(OmniError::InvalidArgument("empty prompt".into()));
    }
    let turns = [Turn::new(Role::User, vec![Segment::text(text_to_global(model, user)?)])];
    assemble(&generation_prompt(&turns, model.layout())?, model.layout(), &MaskFactors::default())
}

/// Removes every think-open .. think-close span, markers included. An
/// unclosed span runs to the end.
pub fn strip_think(tokens: &[TokenId], layout: &VocabLayout) -> Result<Vec<TokenId>> {
    let open = layout.special(THINK_OPEN)?;
    let close = layout.special(THINK_CLOSE)?;
    let mut out = Vec::with_capacity(tokens.len());
    let mut inside = false;
    for &t in tokens {
        if !inside && t == open {
            inside = true;
        } else if inside && t == close {
            inside = false;
        } else if !inside {
            out.push(t);
        }
    }
    Ok(out)
}

/// Text region ids decoded as UTF-8; control tokens by name; modality ids
/// as `<v:N>` / `<a:N>`. Text slots the tokenizer never assigned show as `<t:N>`.
pub fn render_tokens(model: &OmniModel, tokens: &[TokenId]) -> Result<String> {
    let layout = model.layout();
    let mut out = String::new();
    let mut pending: Vec<u32> = Vec::new();
    let flush = |pending: &mut Vec<u32>, out: &mut String| -> Result<()> {
        if !pending.is_empty() {
            out.push_str(&model.tokenizers.text.decode(pending)?);
            pending.clear();
        }
        Ok(())
    };
    for &t in tokens {
        let (region, local) = layout.resolve(t)?;
        match region {
            Region::Text if local < model.tokenizers.text.assigned() => pending.push(local as u32),
            Region::Text => {
                flush(&mut pending, &mut out)?;
                out.push_str(&format!("<t:{local}>"));
            }
            Region::Special => {
                flush(&mut pending, &mut out)?;
                out.push_str(&layout.specials()[local]);
            }
            Region::Vision => {
                flush(&mut pending, &mut out)?;
                out.push_str(&format!("<v:{local}>"));
            }
            Region::Audio => {
                flush(&mut pending, &mut out)?;
                out.push_str(&format!("<a:{local}>"));
            }
        }
    }
    flush(&mut pending, &mut out)?;
    Ok(out)
}

pub fn generate_text(
    model: &OmniModel,
    user: &str,
    settings: &SamplerSettings,
    max_new: usize,
    strip: bool,
) -> Result<GeneratedText> {
    let p = prompt(model, user)?;
    let mut session = BackboneSession::new(&model.lm.backbone);
    let out = generate(&mut session, &p, model.layout(), settings, max_new)?;
    let tokens = if strip { strip_think(&out.tokens, model.layout())? } else { out.tokens };
    let text = render_tokens(model, &tokens)?;
    Ok(GeneratedText { tokens, text })
}

/// Opens a vision span after the prompt, samples its 729 ids and decodes
/// them to a `width × height` image.
pub fn generate_image(
    model: &OmniModel,
    user: &str,
    settings: &SamplerSettings,
    width: usize,
    height: usize,
    opts: &DecodeOptions,
) -> Result<(ImageBuffer, VisionTokenGrid)> {
    let mut p = prompt(model, user)?;
    p.push_token(model.layout().special(VISION_START)?, 1.0);
    let mut session = BackboneSession::new(&model.lm.backbone);
    let out = generate(&mut session, &p, model.layout(), settings, GRID_CELLS + 1)?;
    let ids = out
        .spans
        .into_iter()
        .find_map(|s| match s {
            SpanEvent::Vision(ids) => Some(ids),
            SpanEvent::Audio(_) => None,
        })
        .ok_or_else(|| OmniError::Internal("vision span did not close".into()))?;
    let grid = VisionTokenGrid::new(ids, model.tokenizers.vision.config().codebook_size)?;
    let dec = &model.decoders;
    let img = decode_tokens(
        &dec.main,
        Some(&dec.bad),
        &model.tokenizers.vision,
        &grid,
        AspectRecord { width, height },
        opts,
        dec.store.dtype(),
    )?;
    Ok((img, grid))
}

/// Opens an audio span, samples `25 · secs` codes and synthesizes them with
/// the given speaker.
pub fn generate_audio(
    model: &OmniModel,
    user: &str,
    settings: &SamplerSettings,
    secs: f64,
    speaker: &SpeakerEmbedding,
) -> Result<(Vec<f32>, Vec<Code>)> {
    let n = (secs * crate::encoders::AUDIO_RATE_HZ).round() as usize;
    if n == 0 {
        return Err(OmniError::InvalidArgument(format!("{secs} s is shorter than one audio token")));
    }
    let mut p = prompt(model, user)?;
    p.push_token(model.layout().special(AUDIO_START)?, 1.0);
    let mut session = BackboneSession::new(&model.lm.backbone);
    let ids = sample_span(&mut session, &p, model.layout(), Region::Audio, n, settings)?;
    let codes: Vec<Code> = ids.into_iter().map(Code).collect();
    let wave = model.vocoder.net.synthesize(&codes, speaker)?;
    Ok((wave, codes))
}
