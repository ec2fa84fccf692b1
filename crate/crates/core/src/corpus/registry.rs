use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generators::*;
use crate::encoders::{read_wav, write_wav, SAMPLE_RATE};
use crate::error::{OmniError, Result};
use crate::vision::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Images,
    Speech,
    Conversations,
    Videos,
    Edits,
}

impl CorpusKind {
    pub const ALL: [CorpusKind; 5] =
        [CorpusKind::Images, CorpusKind::Speech, CorpusKind::Conversations, CorpusKind::Videos, CorpusKind::Edits];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub images: usize,
    /// Image sizes cycled through, `(width, height)`.
    pub image_sizes: Vec<(usize, usize)>,
    pub speech_clips: usize,
    pub speech_words: usize,
    pub conversations: usize,
    pub videos: usize,
    pub video_frames: usize,
    pub video_px: usize,
    pub video_audio_secs: f64,
    pub edits: usize,
    pub edit_px: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            images: 32,
            image_sizes: vec![(64, 64), (64, 48), (48, 64)],
            speech_clips: 16,
            speech_words: 5,
            conversations: 64,
            videos: 8,
            video_frames: 4,
            video_px: 32,
            video_audio_secs: 2.0,
            edits: 16,
            edit_px: 48,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_sizes.is_empty() || self.image_sizes.iter().any(|&(w, h)| w < 16 || h < 16) {
            return Err(OmniError::InvalidArgument("image sizes must be at least 16x16".into()));
        }
        if self.speech_words == 0 || self.video_frames == 0 || self.video_px < 16 || self.edit_px < 16 {
            return Err(OmniError::InvalidArgument("corpus clip sizes must be positive".into()));
        }
        if (self.speech_words as f64) * WORD_SECS < 0.5 {
            return Err(OmniError::InvalidArgument("speech clips must last at least 0.5 s".into()));
        }
        Ok(())
    }
}

/// All synthetic training data for a run.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub images: Vec<ShapeImage>,
    pub speech: Vec<SpeechClip>,
    pub conversations: Vec<Conversation>,
    pub videos: Vec<VideoClip>,
    pub edits: Vec<EditPair>,
}

#[derive(Serialize, Deserialize)]
struct ImageRecord {
    file: String,
    shape: Shape,
    color: String,
    label: String,
    caption: String,
}

#[derive(Serialize, Deserialize)]
struct SpeechRecord {
    file: String,
    transcript: String,
    speaker: usize,
}

#[derive(Serialize, Deserialize)]
struct VideoRecord {
    frames: Vec<String>,
    audio: String,
    caption: String,
}

#[derive(Serialize, Deserialize)]
struct EditRecord {
    source: String,
    target: String,
    instruction: String,
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl Corpus {
    pub fn generate(cfg: &CorpusConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = sub_rng(seed, 1);
        let images = (0..cfg.images)
            .map(|i| {
                let (w, h) = cfg.image_sizes[i % cfg.image_sizes.len()];
                shape_image(&mut rng, w, h)
            })
            .collect::<Result<_>>()?;
        let mut rng = sub_rng(seed, 2);
        let speech = (0..cfg.speech_clips).map(|i| speech_clip(&mut rng, i % SPEAKERS.len(), cfg.speech_words)).collect();
        let mut rng = sub_rng(seed, 3);
        let conversations = (0..cfg.conversations).map(|i| conversation(&mut rng, i % 2 == 1)).collect();
        let mut rng = sub_rng(seed, 4);
        let videos = (0..cfg.videos)
            .map(|_| video_clip(&mut rng, cfg.video_frames, cfg.video_px, cfg.video_audio_secs))
            .collect::<Result<_>>()?;
        let mut rng = sub_rng(seed, 5);
        let edits = (0..cfg.edits).map(|_| edit_pair(&mut rng, cfg.edit_px, cfg.edit_px)).collect::<Result<_>>()?;
        Ok(Self { images, speech, conversations, videos, edits })
    }

    pub fn count(&self, kind: CorpusKind) -> usize {
        match kind {
            CorpusKind::Images => self.images.len(),
            CorpusKind::Speech => self.speech.len(),
            CorpusKind::Conversations => self.conversations.len(),
            CorpusKind::Videos => self.videos.len(),
            CorpusKind::Edits => self.edits.len(),
        }
    }

    /// Every text string in the corpus, for tokenizer training.
    pub fn texts(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        out.extend(self.images.iter().map(|i| i.caption.clone()));
        out.extend(self.images.iter().map(|i| i.label.clone()));
        out.extend(self.speech.iter().map(|s| s.transcript.clone()));
        for c in &self.conversations {
            out.push(c.user.clone());
            out.push(c.assistant.clone());
            out.extend(c.think.clone());
        }
        out.extend(self.videos.iter().map(|v| v.caption.clone()));
        out.extend(self.edits.iter().map(|e| e.instruction.clone()));
        out
    }

    /// Writes PNG/WAV files plus JSON indexes; returns every written path,
    /// sorted.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        for sub in ["images", "speech", "videos", "edits"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        let mut written = Vec::new();
        let mut png = |img: &ImageBuffer, rel: String| -> Result<String> {
            img.save_png(&dir.join(&rel))?;
            written.push(dir.join(&rel));
            Ok(rel)
        };
        let images: Vec<ImageRecord> = self
            .images
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(ImageRecord {
                    file: png(&s.image, format!("images/{i:04}.png"))?,
                    shape: s.shape,
                    color: s.color.clone(),
                    label: s.label.clone(),
                    caption: s.caption.clone(),
                })
            })
            .collect::<Result<_>>()?;
        let videos_frames: Vec<Vec<String>> = self
            .videos
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.frames.iter().enumerate().map(|(f, img)| png(img, format!("videos/{i:04}_{f}.png"))).collect()
            })
            .collect::<Result<_>>()?;
        let edits: Vec<EditRecord> = self
            .edits
            .iter()
            .enumerate()
            .map(|(i, e)| {
                Ok(EditRecord {
                    source: png(&e.source, format!("edits/{i:04}_src.png"))?,
                    target: png(&e.target, format!("edits/{i:04}_tgt.png"))?,
                    instruction: e.instruction.clone(),
                })
            })
            .collect::<Result<_>>()?;
        let mut wav = |w: &[f32], rel: String| -> Result<String> {
            write_wav(&dir.join(&rel), w, SAMPLE_RATE)?;
            written.push(dir.join(&rel));
            Ok(rel)
        };
        let speech: Vec<SpeechRecord> = self
            .speech
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(SpeechRecord {
                    file: wav(&s.wave, format!("speech/{i:04}.wav"))?,
                    transcript: s.transcript.clone(),
                    speaker: s.speaker,
                })
            })
            .collect::<Result<_>>()?;
        let videos: Vec<VideoRecord> = self
            .videos
            .iter()
            .zip(videos_frames)
            .enumerate()
            .map(|(i, (v, frames))| {
                Ok(VideoRecord { frames, audio: wav(&v.audio, format!("videos/{i:04}.wav"))?, caption: v.caption.clone() })
            })
            .collect::<Result<_>>()?;
        let indexes: [(&str, serde_json::Value); 5] = [
            ("images.json", serde_json::to_value(&images)?),
            ("speech.json", serde_json::to_value(&speech)?),
            ("conversations.json", serde_json::to_value(&self.conversations)?),
            ("videos.json", serde_json::to_value(&videos)?),
            ("edits.json", serde_json::to_value(&edits)?),
        ];
        for (name, value) in indexes {
            fs::write(dir.join(name), serde_json::to_string_pretty(&value)?)?;
            written.push(dir.join(name));
        }
        written.sort();
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        fn index<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T> {
            let path = dir.join(name);
            let text = fs::read_to_string(&path)
                .map_err(|e| OmniError::Missing(format!("corpus index {}: {e}", path.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
        let images: Vec<ImageRecord> = index(dir, "images.json")?;
        let speech: Vec<SpeechRecord> = index(dir, "speech.json")?;
        let conversations: Vec<Conversation> = index(dir, "conversations.json")?;
        let videos: Vec<VideoRecord> = index(dir, "videos.json")?;
        let edits: Vec<EditRecord> = index(dir, "edits.json")?;
        Ok(Self {
            images: images
                .into_iter()
                .map(|r| {
                    Ok(ShapeImage {
                        image: ImageBuffer::load_png(&dir.join(&r.file))?,
                        shape: r.shape,
                        color: r.color,
                        label: r.label,
                        caption: r.caption,
                    })
                })
                .collect::<Result<_>>()?,
            speech: speech
                .into_iter()
                .map(|r| {
                    Ok(SpeechClip { wave: read_wav(&dir.join(&r.file))?, transcript: r.transcript, speaker: r.speaker })
                })
                .collect::<Result<_>>()?,
            conversations,
            videos: videos
                .into_iter()
                .map(|r| {
                    Ok(VideoClip {
                        frames: r.frames.iter().map(|f| ImageBuffer::load_png(&dir.join(f))).collect::<Result<_>>()?,
                        audio: read_wav(&dir.join(&r.audio))?,
                        caption: r.caption,
                    })
                })
                .collect::<Result<_>>()?,
            edits: edits
                .into_iter()
                .map(|r| {
                    Ok(EditPair {
                        source: ImageBuffer::load_png(&dir.join(&r.source))?,
                        target: ImageBuffer::load_png(&dir.join(&r.target))?,
                        instruction: r.instruction,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }
}

/// Indices of the clips spoken by `speaker`.
pub fn speaker_clips(corpus: &Corpus, speaker: usize) -> Vec<usize> {
    corpus.speech.iter().enumerate().filter(|(_, s)| s.speaker == speaker).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig { images: 3, speech_clips: 2, conversations: 4, videos: 1, edits: 1, ..CorpusConfig::default() }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = Corpus::generate(&small(), 7).unwrap();
        let files = c.save(dir.path()).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        let back = Corpus::load(dir.path()).unwrap();
        for k in CorpusKind::ALL {
            assert_eq!(back.count(k), c.count(k));
        }
        assert_eq!(back.conversations, c.conversations);
        assert_eq!(back.images[1].caption, c.images[1].caption);
        assert_eq!(back.speech[0].wave.len(), c.speech[0].wave.len());
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = Corpus::generate(&small(), 1).unwrap().save(a.path()).unwrap();
        let fb = Corpus::generate(&small(), 1).unwrap().save(b.path()).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
        }
    }
}
