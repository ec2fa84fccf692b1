use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Backbone, KvCache};
use crate::error::{OmniError, Result};
use crate::interleave::{ModelInput, Position};
use crate::vision::GRID_CELLS;
use crate::vocab::{
    Region, TokenId, VocabLayout, AUDIO_END, AUDIO_START, THINK_CLOSE, THINK_OPEN, TURN_END, VISION_END,
    VISION_START,
};

/// Source of next-token logits. `start` consumes a prompt, `step` one
/// sampled token; both return logits for the following position.
pub trait LogitsProvider {
    fn start(&mut self, prompt: &ModelInput) -> Result<Vec<f32>>;
    fn step(&mut self, token: TokenId) -> Result<Vec<f32>>;
}

/// Incremental decoding session over a backbone with a KV cache.
pub struct BackboneSession<'a> {
    model: &'a Backbone,
    cache: KvCache,
}

impl<'a> BackboneSession<'a> {
    pub fn new(model: &'a Backbone) -> Self {
        Self { model, cache: KvCache::default() }
    }
}

impl LogitsProvider for BackboneSession<'_> {
    fn start(&mut self, prompt: &ModelInput) -> Result<Vec<f32>> {
        self.cache = KvCache::default();
        let x = self.model.embed_input(prompt)?.unsqueeze(0)?;
        self.model.forward_cached(&x, &mut self.cache)
    }

    fn step(&mut self, token: TokenId) -> Result<Vec<f32>> {
        let x = self.model.embed_token(token)?;
        self.model.forward_cached(&x, &mut self.cache)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Free,
    /// Inside a vision span after `k` vision ids.
    VisionSpan(usize),
    AudioSpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSettings {
    pub temperature: f64,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    pub seed: u64,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self { temperature: 1.0, top_k: 0, seed: 0 }
    }
}

/// Modality state machine that decides which ids may come next.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub mode: SamplerMode,
    pub in_think: bool,
    ids: ControlIds,
}

#[derive(Debug, Clone, Copy)]
struct ControlIds {
    vs: TokenId,
    ve: TokenId,
    a_s: TokenId,
    ae: TokenId,
    think_open: TokenId,
    think_close: TokenId,
}

impl SamplerState {
    pub fn new(layout: &VocabLayout) -> Result<Self> {
        Ok(Self {
            mode: SamplerMode::Free,
            in_think: false,
            ids: ControlIds {
                vs: layout.special(VISION_START)?,
                ve: layout.special(VISION_END)?,
                a_s: layout.special(AUDIO_START)?,
                ae: layout.special(AUDIO_END)?,
                think_open: layout.special(THINK_OPEN)?,
                think_close: layout.special(THINK_CLOSE)?,
            },
        })
    }

    /// Whether `id` may be emitted with `remaining` steps left (including
    /// this one).
    pub fn permits(&self, id: TokenId, layout: &VocabLayout, remaining: usize) -> bool {
        let Ok(region) = layout.region_of(id) else { return false };
        let c = &self.ids;
        match self.mode {
            SamplerMode::VisionSpan(k) if k < GRID_CELLS => region == Region::Vision,
            SamplerMode::VisionSpan(_) => id == c.ve,
            SamplerMode::AudioSpan if remaining <= 1 => id == c.ae,
            SamplerMode::AudioSpan => region == Region::Audio || id == c.ae,
            SamplerMode::Free => {
                if matches!(region, Region::Vision | Region::Audio) || id == c.ve || id == c.ae {
                    return false;
                }
                if id == c.vs {
                    return remaining > GRID_CELLS + 1;
                }
                if id == c.a_s {
                    return remaining >= 2;
                }
                if id == c.think_close {
                    return self.in_think;
                }
                if id == c.think_open {
                    return !self.in_think;
                }
                true
            }
        }
    }

    /// All permitted ids, ascending.
    pub fn allowed(&self, layout: &VocabLayout, remaining: usize, out: &mut Vec<usize>) {
        out.clear();
        let c = &self.ids;
        match self.mode {
            SamplerMode::VisionSpan(k) if k < GRID_CELLS => out.extend(layout.range(Region::Vision)),
            SamplerMode::VisionSpan(_) => out.push(c.ve.0 as usize),
            SamplerMode::AudioSpan if remaining <= 1 => out.push(c.ae.0 as usize),
            SamplerMode::AudioSpan => {
                out.extend(layout.range(Region::Special).filter(|&i| i == c.ae.0 as usize));
                out.extend(layout.range(Region::Audio));
                out.sort_unstable();
            }
            SamplerMode::Free => {
                for r in [Region::Special, Region::Text] {
                    out.extend(layout.range(r).filter(|&i| self.permits(TokenId(i as u32), layout, remaining)));
                }
                out.sort_unstable();
            }
        }
    }

    /// Advances the state after `id` was emitted or read.
    pub fn observe(&mut self, id: TokenId) {
        let c = self.ids;
        self.mode = match self.mode {
            SamplerMode::Free if id == c.vs => SamplerMode::VisionSpan(0),
            SamplerMode::Free if id == c.a_s => SamplerMode::AudioSpan,
            SamplerMode::Free => {
                if id == c.think_open {
                    self.in_think = true;
                } else if id == c.think_close {
                    self.in_think = false;
                }
                SamplerMode::Free
            }
            SamplerMode::VisionSpan(_) if id == c.ve => SamplerMode::Free,
            SamplerMode::VisionSpan(k) => SamplerMode::VisionSpan(k + 1),
            SamplerMode::AudioSpan if id == c.ae => SamplerMode::Free,
            SamplerMode::AudioSpan => SamplerMode::AudioSpan,
        };
    }

    /// State after reading a prompt. Injected spans are skipped.
    pub fn from_prompt(prompt: &ModelInput, layout: &VocabLayout) -> Result<Self> {
        let mut s = Self::new(layout)?;
        let mut in_slot_span = false;
        for p in prompt.positions() {
            match p {
                Position::Slot { .. } => in_slot_span = true,
                Position::Token(t) => {
                    if in_slot_span && (*t == s.ids.ve || *t == s.ids.ae) {
                        s.mode = SamplerMode::Free;
                        in_slot_span = false;
                    } else {
                        s.observe(*t);
                    }
                }
            }
        }
        Ok(s)
    }
}

/// A completed modality span in the generated stream, as local ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpanEvent {
    Vision(Vec<u32>),
    Audio(Vec<u32>),
}

#[derive(Debug, Clone)]
pub struct GenerationOutput {
    pub tokens: Vec<TokenId>,
    pub spans: Vec<SpanEvent>,
}

fn pick(logits: &[f32], allowed: &[usize], settings: &SamplerSettings, rng: &mut ChaCha8Rng) -> usize {
    if settings.temperature <= 0.0 {
        // ties resolve to the smallest id
        let mut best = allowed[0];
        for &i in allowed {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        return best;
    }
    let mut cand: Vec<usize> = allowed.to_vec();
    if settings.top_k > 0 && settings.top_k < cand.len() {
        cand.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        cand.truncate(settings.top_k);
    }
    let max = cand.iter().map(|&i| logits[i] as f64).fold(f64::NEG_INFINITY, f64::max);
    let probs: Vec<f64> = cand
        .iter()
        .map(|&i| ((logits[i] as f64 - max) / settings.temperature).exp())
        .collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (j, p) in probs.iter().enumerate() {
        if u < *p {
            return cand[j];
        }
        u -= p;
    }
    cand[cand.len() - 1]
}

/// Samples up to `max_new` tokens under the modality state machine. Stops
/// early at turn-end or end-of-text outside any span.
pub fn generate(
    provider: &mut dyn LogitsProvider,
    prompt: &ModelInput,
    layout: &VocabLayout,
    settings: &SamplerSettings,
    max_new: usize,
) -> Result<GenerationOutput> {
    let mut state = SamplerState::from_prompt(prompt, layout)?;
    let stops: Vec<TokenId> = [TURN_END, "<|endoftext|>"]
        .iter()
        .filter_map(|n| layout.special(n).ok())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    let mut current: Vec<u32> = Vec::new();
    let mut logits = provider.start(prompt)?;
    let v = layout.total();
    if logits.len() != v {
        return Err(OmniError::Shape(format!("provider gave {} logits for vocab {v}", logits.len())));
    }
    let mut allowed = Vec::with_capacity(v);
    for step in 0..max_new {
        let remaining = max_new - step;
        state.allowed(layout, remaining, &mut allowed);
        if allowed.is_empty() {
            return Err(OmniError::Internal(format!("no permitted token in state {:?}", state.mode)));
        }
        let id = TokenId(pick(&logits, &allowed, settings, &mut rng) as u32);
        if !state.permits(id, layout, remaining) {
            return Err(OmniError::Internal(format!("sampled forbidden id {}", id.0)));
        }
        let before = state.mode;
        state.observe(id);
        tokens.push(id);
        match (before, state.mode) {
            (SamplerMode::VisionSpan(_), SamplerMode::Free) => spans.push(SpanEvent::Vision(std::mem::take(&mut current))),
            (SamplerMode::AudioSpan, SamplerMode::Free) => spans.push(SpanEvent::Audio(std::mem::take(&mut current))),
            (SamplerMode::VisionSpan(_), SamplerMode::VisionSpan(_)) | (SamplerMode::AudioSpan, SamplerMode::AudioSpan) => {
                current.push(layout.resolve(id)?.1 as u32)
            }
            _ => {}
        }
        if state.mode == SamplerMode::Free && stops.contains(&id) {
            break;
        }
        if step + 1 < max_new {
            logits = provider.step(id)?;
        }
    }
    Ok(GenerationOutput { tokens, spans })
}

/// Seeded random logits, for exercising the state machine cheaply.
pub struct RandomLogits {
    rng: ChaCha8Rng,
    vocab: usize,
    boosts: Vec<(TokenId, f32)>,
}

impl RandomLogits {
    pub fn new(vocab: usize, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), vocab, boosts: Vec::new() }
    }

    /// Adds `amount` to the logit of `id` at every step.
    pub fn with_boost(mut self, id: TokenId, amount: f32) -> Self {
        self.boosts.push((id, amount));
        self
    }

    fn draw(&mut self) -> Vec<f32> {
        let mut v: Vec<f32> = (0..self.vocab).map(|_| self.rng.random::<f32>() * 8.0).collect();
        for &(id, a) in &self.boosts {
            if let Some(x) = v.get_mut(id.0 as usize) {
                *x += a;
            }
        }
        v
    }
}

impl LogitsProvider for RandomLogits {
    fn start(&mut self, _prompt: &ModelInput) -> Result<Vec<f32>> {
        Ok(self.draw())
    }

    fn step(&mut self, _token: TokenId) -> Result<Vec<f32>> {
        Ok(self.draw())
    }
}

/// Samples exactly `n` ids from `region` after a prompt that ends inside an
/// open span, returning local ids. The closing token is left to the caller.
pub fn sample_span(
    provider: &mut dyn LogitsProvider,
    prompt: &ModelInput,
    layout: &VocabLayout,
    region: Region,
    n: usize,
    settings: &SamplerSettings,
) -> Result<Vec<u32>> {
    if matches!(region, Region::Special | Region::Text) {
        return Err(OmniError::InvalidArgument(format!("{} is not a modality region", region.name())));
    }
    let allowed: Vec<usize> = layout.range(region).collect();
    let offset = layout.offset(region);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut logits = provider.start(prompt)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let id = pick(&logits, &allowed, settings, &mut rng);
        out.push((id - offset) as u32);
        if i + 1 < n {
            logits = provider.step(TokenId(id as u32))?;
        }
    }
    Ok(out)
}
