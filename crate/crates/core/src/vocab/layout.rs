use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};

pub const TURN_START: &str = "<|im_start|>";
pub const TURN_END: &str = "<|im_end|>";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const VISION_START: &str = "<|vision_start|>";
pub const VISION_END: &str = "<|vision_end|>";
pub const AUDIO_START: &str = "<|audio_start|>";
pub const AUDIO_END: &str = "<|audio_end|>";
pub const SPEAKER_REF: &str = "<|speaker_ref|>";
pub const EDIT: &str = "<|edit|>";
pub const ROLE_SYSTEM: &str = "system";
pub const ROLE_USER: &str = "user";
pub const ROLE_ASSISTANT: &str = "assistant";

/// Control tokens that every layout must contain.
pub const REQUIRED_SPECIALS: [&str; 9] = [
    TURN_START,
    TURN_END,
    THINK_OPEN,
    THINK_CLOSE,
    VISION_START,
    VISION_END,
    AUDIO_START,
    AUDIO_END,
    SPEAKER_REF,
];

pub const DEFAULT_SPECIALS: [&str; 16] = [
    "<|pad|>",
    "<|endoftext|>",
    TURN_START,
    TURN_END,
    THINK_OPEN,
    THINK_CLOSE,
    VISION_START,
    VISION_END,
    AUDIO_START,
    AUDIO_END,
    SPEAKER_REF,
    ROLE_SYSTEM,
    ROLE_USER,
    ROLE_ASSISTANT,
    EDIT,
    "<|reserved_0|>",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Special,
    Text,
    Vision,
    Audio,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Special, Region::Text, Region::Vision, Region::Audio];

    pub fn name(self) -> &'static str {
        match self {
            Region::Special => "special",
            Region::Text => "text",
            Region::Vision => "vision",
            Region::Audio => "audio",
        }
    }
}

/// Global id in the unified vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Contiguous id regions: specials, then text, vision codebook, audio codebook.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LayoutSpec", into = "LayoutSpec")]
pub struct VocabLayout {
    specials: Vec<String>,
    text_size: usize,
    vision_size: usize,
    audio_size: usize,
}

#[derive(Serialize, Deserialize)]
struct LayoutSpec {
    special_tokens: Vec<String>,
    text_size: usize,
    vision_codebook_size: usize,
    audio_codebook_size: usize,
}

impl TryFrom<LayoutSpec> for VocabLayout {
    type Error = OmniError;

    fn try_from(s: LayoutSpec) -> Result<Self> {
        build_layout(&s.special_tokens, s.text_size, s.vision_codebook_size, s.audio_codebook_size)
    }
}

impl From<VocabLayout> for LayoutSpec {
    fn from(l: VocabLayout) -> Self {
        LayoutSpec {
            special_tokens: l.specials,
            text_size: l.text_size,
            vision_codebook_size: l.vision_size,
            audio_codebook_size: l.audio_size,
        }
    }
}

pub fn build_layout<S: AsRef<str>>(
    special_names: &[S],
    text_size: usize,
    vision_size: usize,
    audio_size: usize,
) -> Result<VocabLayout> {
    let mut seen = HashSet::new();
    for s in special_names {
        if !seen.insert(s.as_ref()) {
            return Err(OmniError::InvalidArgument(format!(
                "duplicate special token `{}`",
                s.as_ref()
            )));
        }
    }
    for (what, n) in [
        ("special", special_names.len()),
        ("text", text_size),
        ("vision", vision_size),
        ("audio", audio_size),
    ] {
        if n == 0 {
            return Err(OmniError::InvalidArgument(format!("{what} region is empty")));
        }
    }
    Ok(VocabLayout {
        specials: special_names.iter().map(|s| s.as_ref().to_string()).collect(),
        text_size,
        vision_size,
        audio_size,
    })
}

impl VocabLayout {
    /// 16 specials, 1024 text, 512 vision, 6561 audio.
    pub fn default_layout() -> Self {
        build_layout(&DEFAULT_SPECIALS, 1024, 512, 6561).expect("default layout is valid")
    }

    pub fn total(&self) -> usize {
        self.specials.len() + self.text_size + self.vision_size + self.audio_size
    }

    pub fn size(&self, region: Region) -> usize {
        match region {
            Region::Special => self.specials.len(),
            Region::Text => self.text_size,
            Region::Vision => self.vision_size,
            Region::Audio => self.audio_size,
        }
    }

    pub fn offset(&self, region: Region) -> usize {
        match region {
            Region::Special => 0,
            Region::Text => self.specials.len(),
            Region::Vision => self.specials.len() + self.text_size,
            Region::Audio => self.specials.len() + self.text_size + self.vision_size,
        }
    }

    pub fn range(&self, region: Region) -> Range<usize> {
        let o = self.offset(region);
        o..o + self.size(region)
    }

    /// Rows belonging to the vision and audio codebooks.
    pub fn modality_rows(&self) -> Range<usize> {
        self.offset(Region::Vision)..self.total()
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn global_id(&self, region: Region, local_id: usize) -> Result<TokenId> {
        let size = self.size(region);
        if local_id >= size {
            return Err(OmniError::OutOfRange {
                what: "local token id",
                value: local_id,
                limit: size,
            });
        }
        Ok(TokenId((self.offset(region) + local_id) as u32))
    }

    pub fn resolve(&self, id: TokenId) -> Result<(Region, usize)> {
        let v = id.index();
        for r in Region::ALL {
            let range = self.range(r);
            if range.contains(&v) {
                return Ok((r, v - range.start));
            }
        }
        Err(OmniError::OutOfRange {
            what: "token id",
            value: v,
            limit: self.total(),
        })
    }

    pub fn region_of(&self, id: TokenId) -> Result<Region> {
        self.resolve(id).map(|(r, _)| r)
    }

    pub fn special(&self, name: &str) -> Result<TokenId> {
        self.specials
            .iter()
            .position(|s| s == name)
            .map(|i| TokenId(i as u32))
            .ok_or_else(|| OmniError::Missing(format!("special token `{name}`")))
    }

    /// Checks that every required control token is present.
    pub fn validate_controls(&self) -> Result<()> {
        for name in REQUIRED_SPECIALS {
            self.special(name)?;
        }
        Ok(())
    }

    /// One `name\tid\tregion` line per id, after a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("name\tid\tregion\n");
        for (i, s) in self.specials.iter().enumerate() {
            out.push_str(&format!("{s}\t{i}\tspecial\n"));
        }
        for r in [Region::Text, Region::Vision, Region::Audio] {
            let range = self.range(r);
            for local in 0..range.len() {
                out.push_str(&format!(
                    "<{}_{}>\t{}\t{}\n",
                    r.name(),
                    local,
                    range.start + local,
                    r.name()
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_offsets() {
        let l = VocabLayout::default_layout();
        assert_eq!(l.total(), 8113);
        assert_eq!(l.range(Region::Audio), 1552..8113);
        assert_eq!(l.global_id(Region::Audio, 0).unwrap(), TokenId(1552));
        assert_eq!(l.global_id(Region::Audio, 6560).unwrap(), TokenId(8112));
        assert_eq!(l.global_id(Region::Special, 0).unwrap(), TokenId(0));
        assert_eq!(l.resolve(TokenId(1551)).unwrap(), (Region::Vision, 511));
        assert_eq!(l.resolve(TokenId(0)).unwrap(), (Region::Special, 0));
        assert_eq!(l.resolve(TokenId(8112)).unwrap(), (Region::Audio, 6560));
        l.validate_controls().unwrap();
    }

    #[test]
    fn unit_regions() {
        let l = build_layout(&["a"], 1, 1, 1).unwrap();
        assert_eq!(l.total(), 4);
        for (i, r) in Region::ALL.into_iter().enumerate() {
            assert_eq!(l.range(r), i..i + 1);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_layout(&["a", "a"], 1, 1, 1).is_err());
        assert!(build_layout(&["a"], 0, 1, 1).is_err());
        assert!(build_layout::<&str>(&[], 1, 1, 1).is_err());
        let l = VocabLayout::default_layout();
        assert!(l.global_id(Region::Vision, 512).is_err());
        assert!(l.resolve(TokenId(8113)).is_err());
    }

    #[test]
    fn serde_roundtrip() {
        let l = VocabLayout::default_layout();
        let s = serde_json::to_string(&l).unwrap();
        let back: VocabLayout = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
    }
}
