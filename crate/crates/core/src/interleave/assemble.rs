use std::io::Write;
use std::path::Path;

use candle_core::Tensor;
use serde::Serialize;

use super::segment::{MaskFactors, Segment, SegmentKind};
use crate::error::{OmniError, Result};
use crate::vision::GRID_CELLS;
use crate::vocab::{
    Region, TokenId, VocabLayout, AUDIO_END, AUDIO_START, EDIT, VISION_END, VISION_START,
};

/// Source of one input position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    Token(TokenId),
    /// Row `row` of continuous stream `stream`.
    Slot { stream: usize, row: usize },
}

impl Position {
    pub fn token(&self) -> Option<TokenId> {
        match self {
            Position::Token(t) => Some(*t),
            Position::Slot { .. } => None,
        }
    }
}

/// Flattened sequence ready for the backbone.
#[derive(Debug, Clone)]
pub struct ModelInput {
    positions: Vec<Position>,
    streams: Vec<Tensor>,
    targets: Vec<Option<TokenId>>,
    weights: Vec<f64>,
}

/// Loss-weight sums by region of the target id.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct WeightHistogram {
    pub special: f64,
    pub text: f64,
    pub vision: f64,
    pub audio: f64,
}

impl WeightHistogram {
    pub fn get(&self, region: Region) -> f64 {
        match region {
            Region::Special => self.special,
            Region::Text => self.text,
            Region::Vision => self.vision,
            Region::Audio => self.audio,
        }
    }

    pub fn total(&self) -> f64 {
        self.special + self.text + self.vision + self.audio
    }
}

fn factor_for(region: Region, f: &MaskFactors) -> f64 {
    match region {
        Region::Special | Region::Text => f.text,
        Region::Vision => f.vision,
        Region::Audio => f.audio,
    }
}

struct Builder<'a> {
    layout: &'a VocabLayout,
    positions: Vec<Position>,
    supervised: Vec<bool>,
    streams: Vec<Tensor>,
    width: Option<usize>,
}

impl Builder<'_> {
    fn push(&mut self, id: TokenId, supervised: bool) {
        self.positions.push(Position::Token(id));
        self.supervised.push(supervised);
    }

    fn push_local(&mut self, region: Region, ids: &[u32]) -> Result<()> {
        for &i in ids {
            let g = self.layout.global_id(region, i as usize)?;
            self.push(g, true);
        }
        Ok(())
    }

    fn push_stream(&mut self, t: &Tensor) -> Result<()> {
        let (n, w) = t.dims2()?;
        if let Some(prev) = self.width {
            if prev != w {
                return Err(OmniError::Shape(format!(
                    "continuous streams disagree on width: {prev} vs {w}"
                )));
            }
        }
        self.width = Some(w);
        let stream = self.streams.len();
        self.streams.push(t.clone());
        for row in 0..n {
            self.positions.push(Position::Slot { stream, row });
            self.supervised.push(false);
        }
        Ok(())
    }

    fn segment(&mut self, s: &Segment) -> Result<()> {
        let l = self.layout;
        match &s.kind {
            SegmentKind::TextIds(ids) => {
                for &id in ids {
                    match l.region_of(id)? {
                        Region::Text | Region::Special => self.push(id, true),
                        r => {
                            return Err(OmniError::InvalidArgument(format!(
                                "text segment carries {} id {}",
                                r.name(),
                                id.0
                            )))
                        }
                    }
                }
            }
            SegmentKind::VisionDiscrete(ids) => {
                if ids.len() != GRID_CELLS {
                    return Err(OmniError::Shape(format!(
                        "discrete vision span needs {GRID_CELLS} ids, got {}",
                        ids.len()
                    )));
                }
                self.push(l.special(VISION_START)?, true);
                self.push_local(Region::Vision, ids)?;
                self.push(l.special(VISION_END)?, true);
            }
            SegmentKind::AudioDiscrete(ids) => {
                self.push(l.special(AUDIO_START)?, true);
                self.push_local(Region::Audio, ids)?;
                self.push(l.special(AUDIO_END)?, true);
            }
            // wrappers of injected spans are inputs only
            SegmentKind::VisionContinuous(t) => {
                self.push(l.special(VISION_START)?, false);
                self.push_stream(t)?;
                self.push(l.special(VISION_END)?, false);
            }
            SegmentKind::AudioContinuous(t) => {
                self.push(l.special(AUDIO_START)?, false);
                self.push_stream(t)?;
                self.push(l.special(AUDIO_END)?, false);
            }
        }
        Ok(())
    }
}

/// Concatenates segments in order, wrapping modality spans with their
/// start/end tokens. Discrete positions are targets weighted by the factor
/// of their region (control tokens count as text); injected rows and the
/// wrappers around them are never targeted.
pub fn assemble(segments: &[Segment], layout: &VocabLayout, factors: &MaskFactors) -> Result<ModelInput> {
    factors.validate()?;
    let mut b = Builder {
        layout,
        positions: Vec::new(),
        supervised: Vec::new(),
        streams: Vec::new(),
        width: None,
    };
    for (i, s) in segments.iter().enumerate() {
        if s.edit_source {
            let next_ok = matches!(
                segments.get(i + 1).map(|n| &n.kind),
                Some(SegmentKind::VisionDiscrete(_))
            );
            if !matches!(s.kind, SegmentKind::VisionContinuous(_)) || !next_ok {
                return Err(OmniError::InvalidArgument(
                    "edit source must be a continuous vision span followed by a discrete one".into(),
                ));
            }
        }
        b.segment(s)?;
        if s.edit_source {
            if let Ok(edit) = layout.special(EDIT) {
                b.push(edit, true);
            }
        }
    }
    ModelInput::build(b.positions, b.supervised, b.streams, layout, factors)
}

impl ModelInput {
    fn build(
        positions: Vec<Position>,
        supervised: Vec<bool>,
        streams: Vec<Tensor>,
        layout: &VocabLayout,
        factors: &MaskFactors,
    ) -> Result<Self> {
        let n = positions.len().saturating_sub(1);
        let mut targets = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for t in 1..positions.len() {
            match positions[t] {
                Position::Token(id) if supervised[t] => {
                    targets.push(Some(id));
                    weights.push(factor_for(layout.region_of(id)?, factors));
                }
                Position::Token(id) => {
                    targets.push(Some(id));
                    weights.push(0.0);
                }
                Position::Slot { .. } => {
                    targets.push(None);
                    weights.push(0.0);
                }
            }
        }
        Ok(Self { positions, streams, targets, weights })
    }

    /// Plain id sequence; every next id is a target.
    pub fn from_ids(ids: &[TokenId], layout: &VocabLayout, factors: &MaskFactors) -> Result<Self> {
        for &id in ids {
            layout.resolve(id)?;
        }
        let positions = ids.iter().map(|&i| Position::Token(i)).collect();
        Self::build(positions, vec![true; ids.len()], Vec::new(), layout, factors)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn streams(&self) -> &[Tensor] {
        &self.streams
    }

    /// `len() - 1` entries; `targets()[t]` is the id at position `t + 1`.
    pub fn targets(&self) -> &[Option<TokenId>] {
        &self.targets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn num_slots(&self) -> usize {
        self.positions.iter().filter(|p| p.token().is_none()).count()
    }

    /// Input ids with slots replaced by `fill`.
    pub fn input_ids(&self, fill: TokenId) -> Vec<TokenId> {
        self.positions.iter().map(|p| p.token().unwrap_or(fill)).collect()
    }

    /// Target ids with untargeted entries replaced by `fill` (their weight is 0).
    pub fn target_ids(&self, fill: TokenId) -> Vec<TokenId> {
        self.targets.iter().map(|t| t.unwrap_or(fill)).collect()
    }

    /// Keeps the first `len` positions.
    pub fn truncate(&mut self, len: usize) {
        if len < self.positions.len() {
            self.positions.truncate(len);
            self.targets.truncate(len.saturating_sub(1));
            self.weights.truncate(len.saturating_sub(1));
        }
    }

    /// Appends one generated token; it becomes the target of the previous
    /// position with weight `weight`.
    pub fn push_token(&mut self, id: TokenId, weight: f64) {
        if !self.positions.is_empty() {
            self.targets.push(Some(id));
            self.weights.push(weight);
        }
        self.positions.push(Position::Token(id));
    }

    pub fn loss_weights_histogram(&self, layout: &VocabLayout) -> Result<WeightHistogram> {
        let mut h = WeightHistogram::default();
        for (t, w) in self.targets.iter().zip(&self.weights) {
            let Some(id) = t else { continue };
            match layout.region_of(*id)? {
                Region::Special => h.special += w,
                Region::Text => h.text += w,
                Region::Vision => h.vision += w,
                Region::Audio => h.audio += w,
            }
        }
        Ok(h)
    }

    /// Human-readable rendering: control names, `t<i>`/`v<i>`/`a<i>` for
    /// local ids and `<slot>` for injected rows.
    pub fn render(&self, layout: &VocabLayout) -> Result<Vec<String>> {
        self.positions
            .iter()
            .map(|p| match p {
                Position::Slot { .. } => Ok("<slot>".to_string()),
                Position::Token(id) => Ok(match layout.resolve(*id)? {
                    (Region::Special, i) => layout.specials()[i].clone(),
                    (Region::Text, i) => format!("t{i}"),
                    (Region::Vision, i) => format!("v{i}"),
                    (Region::Audio, i) => format!("a{i}"),
                }),
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "inputs": self.positions,
            "targets": self.targets,
            "weights": self.weights,
        })
    }
}

/// One JSON object per line.
pub fn write_jsonl(path: &Path, inputs: &[ModelInput]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in inputs {
        serde_json::to_writer(&mut f, &i.to_json())?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Checks that every vision/audio span is either purely discrete ids of
/// its region (exactly 729 for vision) or purely injected rows.
pub fn validate_spans(input: &ModelInput, layout: &VocabLayout) -> Result<()> {
    let vs = layout.special(VISION_START)?;
    let ve = layout.special(VISION_END)?;
    let a_s = layout.special(AUDIO_START)?;
    let ae = layout.special(AUDIO_END)?;
    let mut open: Option<(TokenId, usize)> = None;
    let (mut discrete, mut slots) = (0usize, 0usize);
    for (i, p) in input.positions().iter().enumerate() {
        match (open, p) {
            (None, Position::Token(t)) if *t == vs || *t == a_s => {
                open = Some((*t, i));
                discrete = 0;
                slots = 0;
            }
            (None, Position::Token(t)) if *t == ve || *t == ae => {
                return Err(OmniError::InvalidArgument(format!("span end without start at {i}")));
            }
            (None, Position::Token(_)) => {}
            (None, Position::Slot { .. }) => {
                return Err(OmniError::InvalidArgument(format!("injected row outside a span at {i}")));
            }
            (Some((start, at)), Position::Token(t)) if *t == ve || *t == ae => {
                let matching = (start == vs && *t == ve) || (start == a_s && *t == ae);
                if !matching {
                    return Err(OmniError::InvalidArgument(format!("mismatched span end at {i}")));
                }
                if discrete > 0 && slots > 0 {
                    return Err(OmniError::InvalidArgument(format!("mixed span starting at {at}")));
                }
                if start == vs && slots == 0 && discrete != GRID_CELLS {
                    return Err(OmniError::InvalidArgument(format!(
                        "vision span at {at} holds {discrete} ids"
                    )));
                }
                open = None;
            }
            (Some((start, at)), Position::Token(t)) => {
                let want = if start == vs { Region::Vision } else { Region::Audio };
                if layout.region_of(*t)? != want {
                    return Err(OmniError::InvalidArgument(format!(
                        "span at {at} contains a non-{} id at {i}",
                        want.name()
                    )));
                }
                discrete += 1;
            }
            (Some(_), Position::Slot { .. }) => slots += 1,
        }
    }
    if let Some((_, at)) = open {
        return Err(OmniError::InvalidArgument(format!("unterminated span at {at}")));
    }
    Ok(())
}
