use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::SAMPLE_RATE;
use crate::error::Result;
use crate::vision::ImageBuffer;

pub const COLORS: [(&str, [f32; 3]); 6] = [
    ("red", [0.9, 0.15, 0.1]),
    ("green", [0.15, 0.8, 0.2]),
    ("blue", [0.1, 0.25, 0.9]),
    ("yellow", [0.95, 0.85, 0.1]),
    ("purple", [0.6, 0.2, 0.75]),
    ("orange", [0.95, 0.55, 0.1]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Ring,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Ring];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Ring => "ring",
        }
    }

    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            Shape::Circle => dx * dx + dy * dy <= r * r,
            Shape::Square => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
            Shape::Triangle => dy <= r * 0.8 && dy >= -r && dx.abs() <= (dy + r) * 0.55,
            Shape::Ring => {
                let d = (dx * dx + dy * dy).sqrt();
                d <= r && d >= r * 0.55
            }
        }
    }
}

/// Procedural image with its caption and the byte label painted along the
/// bottom edge as a strip of bit cells.
#[derive(Debug, Clone)]
pub struct ShapeImage {
    pub image: ImageBuffer,
    pub shape: Shape,
    pub color: String,
    pub label: String,
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub shape: Shape,
    pub color: usize,
    pub background: usize,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl ShapeParams {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let color = rng.random_range(0..COLORS.len());
        let mut background = rng.random_range(0..COLORS.len());
        if background == color {
            background = (background + 1) % COLORS.len();
        }
        Self {
            shape: *Shape::ALL.choose(rng).expect("non-empty"),
            color,
            background,
            cx: rng.random_range(0.3..0.7),
            cy: rng.random_range(0.3..0.6),
            radius: rng.random_range(0.18..0.3),
        }
    }
}

fn paint_label(img: &mut [f32], w: usize, h: usize, label: &str) {
    let bits: Vec<bool> = label.bytes().flat_map(|b| (0..8).rev().map(move |i| b >> i & 1 == 1)).collect();
    if bits.is_empty() {
        return;
    }
    let cell = (w / bits.len()).max(1);
    let band = (h / 10).max(2);
    for (i, bit) in bits.iter().enumerate() {
        let v = if *bit { 1.0 } else { 0.0 };
        for x in i * cell..((i + 1) * cell).min(w) {
            for y in h - band..h {
                for c in 0..3 {
                    img[(y * w + x) * 3 + c] = v;
                }
            }
        }
    }
}

pub fn render_shape(p: &ShapeParams, width: usize, height: usize, label: &str) -> Result<ImageBuffer> {
    let fg = COLORS[p.color].1;
    let bg = COLORS[p.background].1;
    let bg = [bg[0] * 0.35, bg[1] * 0.35, bg[2] * 0.35];
    let s = width.min(height) as f64;
    let img = ImageBuffer::from_fn(width, height, |x, y| {
        let dx = x as f64 + 0.5 - p.cx * width as f64;
        let dy = y as f64 + 0.5 - p.cy * height as f64;
        if p.shape.contains(dx, dy, p.radius * s) {
            fg
        } else {
            bg
        }
    })?;
    let mut data = img.data().to_vec();
    paint_label(&mut data, width, height, label);
    ImageBuffer::new(width, height, data)
}

pub fn random_label<R: Rng>(rng: &mut R) -> String {
    (0..2).map(|_| (b'A' + rng.random_range(0..26u8)) as char).collect()
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

pub fn shape_image<R: Rng>(rng: &mut R, width: usize, height: usize) -> Result<ShapeImage> {
    let p = ShapeParams::random(rng);
    let label = random_label(rng);
    let image = render_shape(&p, width, height, &label)?;
    let color = COLORS[p.color].0.to_string();
    let caption = format!("{} {color} {} on a dark {} background", article(&color), p.shape.name(), COLORS[p.background].0);
    Ok(ShapeImage { image, shape: p.shape, color, label, caption })
}

/// Two synthetic voices: fundamental and formant centre in Hz.
pub const SPEAKERS: [(f64, f64); 2] = [(110.0, 650.0), (220.0, 1900.0)];

pub const LEXICON: [&str; 12] = [
    "red", "green", "blue", "circle", "square", "ring", "one", "two", "three", "yes", "no", "stop",
];

/// Seconds per spoken word; a multiple of the 40 ms audio token.
pub const WORD_SECS: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct SpeechClip {
    pub wave: Vec<f32>,
    pub transcript: String,
    pub speaker: usize,
}

/// Harmonic "speech": each word is a voiced segment whose second formant
/// depends on the word; the speaker sets pitch and the base formant.
pub fn speech_clip<R: Rng>(rng: &mut R, speaker: usize, words: usize) -> SpeechClip {
    let (f0, formant) = SPEAKERS[speaker % SPEAKERS.len()];
    let chosen: Vec<&str> = (0..words).map(|_| *LEXICON.choose(rng).expect("non-empty")).collect();
    let per_word = (WORD_SECS * SAMPLE_RATE as f64) as usize;
    let mut wave = Vec::with_capacity(per_word * words);
    let jitter: f64 = rng.random_range(0.97..1.03);
    for (wi, w) in chosen.iter().enumerate() {
        let idx = LEXICON.iter().position(|l| l == w).expect("word from lexicon") as f64;
        let f2 = formant * (1.3 + 0.12 * idx);
        let phase = wi as f64 * 0.7;
        for i in 0..per_word {
            let t = i as f64 / SAMPLE_RATE as f64;
            let env = (PI * i as f64 / per_word as f64).sin().powf(0.5);
            let mut s = 0.0;
            for h in 1..=16 {
                let f = f0 * jitter * h as f64;
                let a = (-((f - formant) / 350.0).powi(2)).exp() + 0.6 * (-((f - f2) / 300.0).powi(2)).exp();
                s += a * (2.0 * PI * f * t + phase * h as f64).sin();
            }
            wave.push((0.25 * env * s) as f32);
        }
    }
    SpeechClip { wave, transcript: chosen.join(" "), speaker }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub user: String,
    pub assistant: String,
    pub think: Option<String>,
}

const OBJECTS: [&str; 6] = ["apple", "river", "lamp", "garden", "train", "letter"];
const VERBS: [&str; 5] = ["describe", "count", "name", "find", "compare"];

pub fn conversation<R: Rng>(rng: &mut R, with_think: bool) -> Conversation {
    let a = *OBJECTS.choose(rng).expect("non-empty");
    let b = *OBJECTS.choose(rng).expect("non-empty");
    let v = *VERBS.choose(rng).expect("non-empty");
    let n = rng.random_range(2..9);
    let user = format!("please {v} the {a} and the {b}");
    let assistant = match v {
        "count" => format!("there are {n} of the {a} and {} of the {b}", n + 1),
        "compare" => format!("the {a} is larger than the {b}"),
        _ => format!("the {a} is next to the {b}"),
    };
    let think = with_think.then(|| format!("the user wants me to {v} two things: {a} and {b}"));
    Conversation { user, assistant, think }
}

/// A square sliding across frames, with a soundtrack.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub frames: Vec<ImageBuffer>,
    pub audio: Vec<f32>,
    pub caption: String,
}

pub fn video_clip<R: Rng>(rng: &mut R, frames: usize, size: usize, audio_secs: f64) -> Result<VideoClip> {
    let mut p = ShapeParams::random(rng);
    let rightward = rng.random_bool(0.5);
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let u = f as f64 / (frames.max(2) - 1) as f64;
        p.cx = if rightward { 0.25 + 0.5 * u } else { 0.75 - 0.5 * u };
        out.push(render_shape(&p, size, size, "")?);
    }
    let words = (audio_secs / WORD_SECS).round().max(1.0) as usize;
    let speaker = rng.random_range(0..SPEAKERS.len());
    let speech = speech_clip(rng, speaker, words);
    let caption = format!(
        "{} {} {} moves {}",
        article(COLORS[p.color].0),
        COLORS[p.color].0,
        p.shape.name(),
        if rightward { "right" } else { "left" }
    );
    Ok(VideoClip { frames: out, audio: speech.wave, caption })
}

/// Source and target differ only in the shape colour.
#[derive(Debug, Clone)]
pub struct EditPair {
    pub source: ImageBuffer,
    pub target: ImageBuffer,
    pub instruction: String,
}

pub fn edit_pair<R: Rng>(rng: &mut R, width: usize, height: usize) -> Result<EditPair> {
    let p = ShapeParams::random(rng);
    let mut q = p;
    q.color = (p.color + rng.random_range(1..COLORS.len())) % COLORS.len();
    if q.color == q.background {
        q.color = (q.color + 1) % COLORS.len();
    }
    Ok(EditPair {
        source: render_shape(&p, width, height, "")?,
        target: render_shape(&q, width, height, "")?,
        instruction: format!("make the {} {}", p.shape.name(), COLORS[q.color].0),
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn generators_are_seeded() {
        let a = shape_image(&mut ChaCha8Rng::seed_from_u64(3), 48, 32).unwrap();
        let b = shape_image(&mut ChaCha8Rng::seed_from_u64(3), 48, 32).unwrap();
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.caption, b.caption);
        let s = speech_clip(&mut ChaCha8Rng::seed_from_u64(1), 0, 5);
        assert_eq!(s.wave.len(), 16_000);
        assert_eq!(s.transcript.split(' ').count(), 5);
    }

    #[test]
    fn edit_changes_only_colour() {
        let e = edit_pair(&mut ChaCha8Rng::seed_from_u64(5), 32, 32).unwrap();
        assert_ne!(e.source.data(), e.target.data());
        assert!(e.instruction.starts_with("make the"));
    }

    #[test]
    fn video_has_requested_frames() {
        let v = video_clip(&mut ChaCha8Rng::seed_from_u64(2), 4, 32, 2.0).unwrap();
        assert_eq!(v.frames.len(), 4);
        assert_eq!(v.audio.len(), 32_000);
        assert_ne!(v.frames[0].data(), v.frames[3].data());
    }
}
