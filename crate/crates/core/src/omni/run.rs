//! On-disk run directory: config, curriculum, corpus, component weights,
//! per-stage checkpoints and the metrics log.
//!
//! ```text
//! <root>/config.json
//! <root>/stages.json
//! <root>/text_tokenizer.json
//! <root>/corpus/...
//! <root>/components/{tokenizers,decoders,vocoder}/ + report.json
//! <root>/checkpoints/<stage>/{model/,outcome.json,ledger.json}
//! <root>/metrics.jsonl
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::model::{load_text_tokenizer, OmniModel};
use super::trainer::{train_components, train_stage, StageOutcome};
use crate::corpus::Corpus;
use crate::curriculum::{builtin_stages, read_stages, write_stages, StageSpec};
use crate::error::{OmniError, Result};
use crate::nn::checkpoint::MANIFEST_FILE;
use crate::vocab::{Region, TextTokenizer};

/// Which stages a training call runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageSelection {
    One(String),
    All,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn components_dir(&self) -> PathBuf {
        self.root.join("components")
    }

    pub fn checkpoint_dir(&self, stage: &str) -> PathBuf {
        self.root.join("checkpoints").join(stage)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn outputs_dir(&self) -> PathBuf {
        self.root.join("outputs")
    }

    pub fn load_config(&self) -> Result<RunConfig> {
        RunConfig::load(&self.config_path())
    }

    pub fn load_stages(&self, cfg: &RunConfig) -> Result<Vec<StageSpec>> {
        let path = self.root.join(&cfg.stages_file);
        if !path.exists() {
            return Err(OmniError::Missing(format!("stage list {}", path.display())));
        }
        read_stages(&path)
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        if !self.corpus_dir().exists() {
            return Err(OmniError::Missing(format!("corpus {}", self.corpus_dir().display())));
        }
        Corpus::load(&self.corpus_dir())
    }

    pub fn has_components(&self) -> bool {
        ["tokenizers", "decoders", "vocoder"].iter().all(|d| self.components_dir().join(d).join(MANIFEST_FILE).exists())
    }

    pub fn has_checkpoint(&self, stage: &str) -> bool {
        self.checkpoint_dir(stage).join("outcome.json").exists()
    }

    pub fn load_outcome(&self, stage: &str) -> Result<StageOutcome> {
        let path = self.checkpoint_dir(stage).join("outcome.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| OmniError::Missing(format!("checkpoint for stage {stage} ({e})")))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Last stage of the curriculum with a checkpoint.
    pub fn latest_stage(&self, stages: &[StageSpec]) -> Option<String> {
        stages.iter().rev().find(|s| self.has_checkpoint(&s.name)).map(|s| s.name.clone())
    }

    /// Builds the model with trained components and, if given, the language
    /// model weights of `stage`.
    pub fn load_model(&self, cfg: &RunConfig, stage: Option<&str>) -> Result<OmniModel> {
        let text = load_text_tokenizer(&self.root)?;
        let mut model = OmniModel::new(cfg.clone(), text)?;
        if !self.has_components() {
            return Err(OmniError::Missing(format!("trained components in {}", self.components_dir().display())));
        }
        model.load_components(&self.components_dir())?;
        if let Some(stage) = stage {
            if !self.has_checkpoint(stage) {
                return Err(OmniError::Missing(format!("checkpoint for stage {stage}")));
            }
            model.load_lm(&self.checkpoint_dir(stage).join("model"))?;
        }
        Ok(model)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes config, stage list, text tokenizer and the seeded corpus. Running
/// it twice with the same config rewrites bit-identical files. Returns
/// `(relative path, sha256)` for every file written, sorted by path.
pub fn init_run(run: &RunDir, cfg: &RunConfig) -> Result<Vec<(String, String)>> {
    cfg.validate()?;
    fs::create_dir_all(run.root()).map_err(|e| {
        OmniError::InvalidArgument(format!("cannot create run directory {}: {e}", run.root().display()))
    })?;
    let stages = builtin_stages(cfg.training.budget_scale)?;
    let corpus = Corpus::generate(&cfg.corpus, cfg.seed)?;
    for s in &stages {
        for k in s.mixture.keys() {
            if corpus.count(k.source()) == 0 {
                return Err(OmniError::InvalidArgument(format!(
                    "corpus config leaves {k} of stage {} without data",
                    s.name
                )));
            }
        }
    }
    let text = TextTokenizer::train(&corpus.texts(), cfg.layout.size(Region::Text))?;
    cfg.save(&run.config_path())?;
    write_stages(&run.root().join(&cfg.stages_file), &stages)?;
    fs::write(run.root().join("text_tokenizer.json"), serde_json::to_string(&text)?)?;
    let mut files = vec![run.config_path(), run.root().join(&cfg.stages_file), run.root().join("text_tokenizer.json")];
    files.extend(corpus.save(&run.corpus_dir())?);
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let rel = f.strip_prefix(run.root()).unwrap_or(&f).to_string_lossy().replace('\\', "/");
        out.push((rel, sha256_hex(&fs::read(&f)?)));
    }
    out.sort();
    let manifest: String = out.iter().map(|(p, h)| format!("{h}  {p}\n")).collect();
    fs::write(run.root().join("init.sha256"), manifest)?;
    Ok(out)
}

/// Trains components if missing, then the selected stages in curriculum
/// order. Every stage after the first starts from its predecessor's
/// checkpoint, which must exist.
pub fn train_run(
    run: &RunDir,
    selection: &StageSelection,
    max_steps: Option<usize>,
    log: &mut dyn Write,
) -> Result<Vec<StageOutcome>> {
    let cfg = run.load_config()?;
    let stages = run.load_stages(&cfg)?;
    let selected: Vec<usize> = match selection {
        StageSelection::All => (0..stages.len()).collect(),
        StageSelection::One(name) => vec![stages.iter().position(|s| &s.name == name).ok_or_else(|| {
            let known: Vec<&str> = stages.iter().map(|s| s.name.as_str()).collect();
            OmniError::InvalidArgument(format!("unknown stage {name}; known: {}", known.join(", ")))
        })?],
    };
    if let (StageSelection::One(_), Some(&i)) = (selection, selected.first()) {
        if i > 0 && !run.has_checkpoint(&stages[i - 1].name) {
            return Err(OmniError::Missing(format!(
                "checkpoint of predecessor stage {} (train it before {})",
                stages[i - 1].name,
                stages[i].name
            )));
        }
    }
    let corpus = run.load_corpus()?;
    let text = load_text_tokenizer(run.root())?;
    let mut model = OmniModel::new(cfg.clone(), text)?;
    if run.has_components() {
        model.load_components(&run.components_dir())?;
    } else {
        writeln!(log, "training components")?;
        let report = train_components(&mut model, &corpus)?;
        model.save_components(&run.components_dir())?;
        fs::write(run.components_dir().join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    let mut metrics = fs::OpenOptions::new().create(true).append(true).open(run.metrics_path())?;
    let mut outcomes = Vec::with_capacity(selected.len());
    for i in selected {
        let stage = &stages[i];
        if i > 0 {
            model.load_lm(&run.checkpoint_dir(&stages[i - 1].name).join("model"))?;
        }
        let out = train_stage(&model, &corpus, stage, i as u64, max_steps, &mut metrics)?;
        let dir = run.checkpoint_dir(&stage.name);
        model.save_lm(&dir.join("model"))?;
        fs::write(dir.join("ledger.json"), serde_json::to_string_pretty(&out.ledger)?)?;
        fs::write(dir.join("outcome.json"), serde_json::to_string_pretty(&out)?)?;
        writeln!(
            log,
            "{}: {} steps, {} tokens, final loss {}, {} trigger(s) fired",
            stage.name,
            out.steps,
            out.ledger.total,
            out.final_loss.map_or("n/a".to_string(), |l| format!("{l:.4}")),
            out.fired.len()
        )?;
        outcomes.push(out);
    }
    Ok(outcomes)
}
