use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{OmniError, Result};

/// Byte-level tokenizer with greedy pair merges on top of the 256 byte ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextTokenizer {
    size: usize,
    merges: Vec<(u32, u32)>,
}

impl TextTokenizer {
    /// Bytes only, no merges. `size` must be at least 256.
    pub fn bytes_only(size: usize) -> Result<Self> {
        if size < 256 {
            return Err(OmniError::InvalidArgument(format!(
                "text region of {size} cannot hold 256 byte tokens"
            )));
        }
        Ok(Self { size, merges: Vec::new() })
    }

    /// Learns merges from `corpus` until `size` ids are used or no pair
    /// occurs at least twice.
    pub fn train<S: AsRef<str>>(corpus: &[S], size: usize) -> Result<Self> {
        let mut tok = Self::bytes_only(size)?;
        let mut words: Vec<Vec<u32>> = corpus
            .iter()
            .map(|s| s.as_ref().bytes().map(|b| b as u32).collect())
            .collect();
        while 256 + tok.merges.len() < size {
            let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
            for w in &words {
                for p in w.windows(2) {
                    *counts.entry((p[0], p[1])).or_default() += 1;
                }
            }
            // ties broken by the smaller pair for determinism
            let best = counts
                .into_iter()
                .filter(|(_, c)| *c >= 2)
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)));
            let Some((pair, _)) = best else { break };
            let new_id = 256 + tok.merges.len() as u32;
            tok.merges.push(pair);
            for w in words.iter_mut() {
                *w = merge_pair(w, pair, new_id);
            }
        }
        Ok(tok)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Ids with a byte expansion: the 256 bytes plus one per merge.
    pub fn assigned(&self) -> usize {
        256 + self.merges.len()
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Local text ids in `[0, size)`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = text.bytes().map(|b| b as u32).collect();
        for (rank, pair) in self.merges.iter().enumerate() {
            if ids.len() < 2 {
                break;
            }
            ids = merge_pair(&ids, *pair, 256 + rank as u32);
        }
        ids
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            self.expand(id, &mut bytes)?;
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    fn expand(&self, id: u32, out: &mut Vec<u8>) -> Result<()> {
        if id < 256 {
            out.push(id as u8);
            return Ok(());
        }
        let (a, b) = *self
            .merges
            .get((id - 256) as usize)
            .ok_or(OmniError::OutOfRange {
                what: "text token id",
                value: id as usize,
                limit: 256 + self.merges.len(),
            })?;
        self.expand(a, out)?;
        self.expand(b, out)
    }
}

fn merge_pair(ids: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_compression() {
        let corpus = ["the cat sat on the mat", "the hat is on the cat", "a red circle"];
        let tok = TextTokenizer::train(&corpus, 300).unwrap();
        assert!(tok.num_merges() > 0);
        for s in corpus {
            let ids = tok.encode(s);
            assert!(ids.len() <= s.len());
            assert!(ids.iter().all(|&i| (i as usize) < tok.size()));
            assert_eq!(tok.decode(&ids).unwrap(), s);
        }
        assert!(tok.encode(corpus[0]).len() < corpus[0].len());
        assert_eq!(tok.decode(&tok.encode("héllo ∆")).unwrap(), "héllo ∆");
    }

    #[test]
    fn too_small_region() {
        assert!(TextTokenizer::bytes_only(255).is_err());
    }
}
