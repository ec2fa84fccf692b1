use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::layout::VocabLayout;
use crate::error::{OmniError, Result};
use crate::nn::ParamStore;

/// Which lightweight module an `adapter_only` policy leaves trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterTarget {
    Vision,
    Audio,
    Compressor,
}

impl AdapterTarget {
    pub fn prefix(self) -> &'static str {
        match self {
            AdapterTarget::Vision => "vision_adapter.",
            AdapterTarget::Audio => "audio_adapter.",
            AdapterTarget::Compressor => "compressor.",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    VocabExpansion,
    Full,
    AdapterOnly(AdapterTarget),
}

impl fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreezePolicy::VocabExpansion => write!(f, "vocab_expansion"),
            FreezePolicy::Full => write!(f, "full"),
            FreezePolicy::AdapterOnly(t) => {
                let t = match t {
                    AdapterTarget::Vision => "vision",
                    AdapterTarget::Audio => "audio",
                    AdapterTarget::Compressor => "compressor",
                };
                write!(f, "adapter_only:{t}")
            }
        }
    }
}

impl FromStr for FreezePolicy {
    type Err = OmniError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "vocab_expansion" => FreezePolicy::VocabExpansion,
            "full" => FreezePolicy::Full,
            "adapter_only:vision" => FreezePolicy::AdapterOnly(AdapterTarget::Vision),
            "adapter_only:audio" => FreezePolicy::AdapterOnly(AdapterTarget::Audio),
            "adapter_only:compressor" => FreezePolicy::AdapterOnly(AdapterTarget::Compressor),
            other => {
                return Err(OmniError::InvalidArgument(format!(
                    "unknown freeze policy `{other}`"
                )))
            }
        })
    }
}

/// Parameter group a parameter name belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Input embedding rows, indexed by global token id.
    Embedding,
    /// Any output projection over the unified vocabulary (main or MTP head).
    VocabHead,
    /// Transformer trunk layers, final norm and the MTP layer.
    Decoder,
    Adapter(AdapterTarget),
    VisionEncoder,
    Other,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        if name == "backbone.embed.weight" {
            ParamGroup::Embedding
        } else if name == "backbone.head.weight" || name == "backbone.mtp.head.weight" {
            ParamGroup::VocabHead
        } else if name.starts_with("backbone.") {
            ParamGroup::Decoder
        } else if name.starts_with(AdapterTarget::Vision.prefix()) {
            ParamGroup::Adapter(AdapterTarget::Vision)
        } else if name.starts_with(AdapterTarget::Audio.prefix()) {
            ParamGroup::Adapter(AdapterTarget::Audio)
        } else if name.starts_with(AdapterTarget::Compressor.prefix()) {
            ParamGroup::Adapter(AdapterTarget::Compressor)
        } else if name.starts_with("vision_encoder.") {
            ParamGroup::VisionEncoder
        } else {
            ParamGroup::Other
        }
    }
}

/// Names and shapes of the trainable parameters a mask is computed against.
#[derive(Debug, Clone, Default)]
pub struct ParamRegistry {
    entries: Vec<(String, Vec<usize>)>,
}

impl ParamRegistry {
    pub fn new(entries: Vec<(String, Vec<usize>)>) -> Self {
        Self { entries }
    }

    pub fn from_store(store: &ParamStore) -> Self {
        Self {
            entries: store
                .vars()
                .into_iter()
                .map(|(n, v)| (n, v.dims().to_vec()))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(String, Vec<usize>)] {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamFreeze {
    Frozen,
    Trainable,
    /// Only the listed leading-dimension rows receive updates.
    Rows(Vec<Range<usize>>),
}

static MASK_VERSION: AtomicU64 = AtomicU64::new(1);

/// Per-parameter (and per-row) trainability.
#[derive(Debug, Clone)]
pub struct FreezeMask {
    policy: FreezePolicy,
    entries: BTreeMap<String, ParamFreeze>,
    version: u64,
}

impl FreezeMask {
    pub fn policy(&self) -> FreezePolicy {
        self.policy
    }

    /// Unique stamp; two masks never share a version.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn get(&self, name: &str) -> Option<&ParamFreeze> {
        self.entries.get(name)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &ParamFreeze)> {
        self.entries.iter()
    }

    pub fn is_fully_frozen(&self, name: &str) -> bool {
        matches!(self.entries.get(name), Some(ParamFreeze::Frozen) | None)
    }

    /// Number of frozen scalar entries given the registry shapes.
    pub fn frozen_count(&self, registry: &ParamRegistry) -> usize {
        registry
            .entries()
            .iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                match self.entries.get(name) {
                    Some(ParamFreeze::Trainable) => 0,
                    Some(ParamFreeze::Rows(r)) => {
                        let row_len = n / shape[0].max(1);
                        let trainable: usize = r.iter().map(|r| r.len()).sum();
                        n - trainable * row_len
                    }
                    _ => n,
                }
            })
            .sum()
    }
}

/// Builds the freeze mask for a training policy.
///
/// `vocab_expansion` trains only the vision/audio rows of the embedding and of
/// every vocabulary head; everything else is frozen. `adapter_only` trains one
/// adapter group and requires it to be present in the registry.
pub fn expansion_freeze_mask(
    layout: &VocabLayout,
    policy: FreezePolicy,
    registry: &ParamRegistry,
) -> Result<FreezeMask> {
    let modality_rows = layout.modality_rows();
    let mut entries = BTreeMap::new();
    match policy {
        FreezePolicy::VocabExpansion => {
            let mut found_embedding = false;
            for (name, shape) in registry.entries() {
                let e = match ParamGroup::of(name) {
                    ParamGroup::Embedding | ParamGroup::VocabHead => {
                        if shape.first() != Some(&layout.total()) {
                            return Err(OmniError::Shape(format!(
                                "{name} has {:?} rows, layout total is {}",
                                shape.first(),
                                layout.total()
                            )));
                        }
                        found_embedding |= ParamGroup::of(name) == ParamGroup::Embedding;
                        ParamFreeze::Rows(vec![modality_rows.clone()])
                    }
                    _ => ParamFreeze::Frozen,
                };
                entries.insert(name.clone(), e);
            }
            if !found_embedding {
                return Err(OmniError::Missing(
                    "parameter group `backbone.embed` in registry".into(),
                ));
            }
        }
        FreezePolicy::Full => {
            for (name, _) in registry.entries() {
                entries.insert(name.clone(), ParamFreeze::Trainable);
            }
        }
        FreezePolicy::AdapterOnly(target) => {
            let mut found = false;
            for (name, _) in registry.entries() {
                let trainable = ParamGroup::of(name) == ParamGroup::Adapter(target);
                found |= trainable;
                entries.insert(
                    name.clone(),
                    if trainable {
                        ParamFreeze::Trainable
                    } else {
                        ParamFreeze::Frozen
                    },
                );
            }
            if !found {
                return Err(OmniError::Missing(format!(
                    "parameter group `{}` in registry",
                    target.prefix().trim_end_matches('.')
                )));
            }
        }
    }
    Ok(FreezeMask {
        policy,
        entries,
        version: MASK_VERSION.fetch_add(1, Ordering::Relaxed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry(layout: &VocabLayout) -> ParamRegistry {
        ParamRegistry::new(vec![
            ("backbone.embed.weight".into(), vec![layout.total(), 8]),
            ("backbone.head.weight".into(), vec![layout.total(), 8]),
            ("backbone.layers.0.attn.q.weight".into(), vec![8, 8]),
            ("audio_adapter.fc1.weight".into(), vec![32, 8]),
            ("audio_adapter.fc2.weight".into(), vec![8, 32]),
        ])
    }

    #[test]
    fn vocab_expansion_rows() {
        let layout = VocabLayout::default_layout();
        let mask = expansion_freeze_mask(&layout, FreezePolicy::VocabExpansion, &registry(&layout)).unwrap();
        assert_eq!(
            mask.get("backbone.embed.weight"),
            Some(&ParamFreeze::Rows(vec![1040..8113]))
        );
        assert_eq!(mask.get("backbone.layers.0.attn.q.weight"), Some(&ParamFreeze::Frozen));
    }

    #[test]
    fn full_freezes_nothing() {
        let layout = VocabLayout::default_layout();
        let reg = registry(&layout);
        let mask = expansion_freeze_mask(&layout, FreezePolicy::Full, &reg).unwrap();
        assert_eq!(mask.frozen_count(&reg), 0);
    }

    #[test]
    fn adapter_only_requires_group() {
        let layout = VocabLayout::default_layout();
        let reg = registry(&layout);
        let mask = expansion_freeze_mask(&layout, FreezePolicy::AdapterOnly(AdapterTarget::Audio), &reg).unwrap();
        let trainable: Vec<_> = mask
            .entries()
            .filter(|(_, f)| **f == ParamFreeze::Trainable)
            .map(|(n, _)| n.clone())
            .collect();
        assert_eq!(trainable, vec!["audio_adapter.fc1.weight", "audio_adapter.fc2.weight"]);
        assert!(expansion_freeze_mask(&layout, FreezePolicy::AdapterOnly(AdapterTarget::Compressor), &reg).is_err());
    }

    #[test]
    fn policy_parsing() {
        assert!("bogus".parse::<FreezePolicy>().is_err());
        for p in ["full", "vocab_expansion", "adapter_only:compressor"] {
            assert_eq!(p.parse::<FreezePolicy>().unwrap().to_string(), p);
        }
    }

    #[test]
    fn versions_are_unique() {
        let layout = VocabLayout::default_layout();
        let reg = registry(&layout);
        let a = expansion_freeze_mask(&layout, FreezePolicy::Full, &reg).unwrap();
        let b = expansion_freeze_mask(&layout, FreezePolicy::Full, &reg).unwrap();
        assert_ne!(a.version(), b.version());
    }
}
