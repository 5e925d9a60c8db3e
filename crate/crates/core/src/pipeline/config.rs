//! Experiment configuration: `[section]` headers and `key = value` lines.
//! `#` starts a comment. Relative paths resolve against the file's folder.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mlconv::ModelConfig;
use crate::pretrain::{EmbeddingMode, PretrainConfig};
use crate::rescorer::{FeatureToggles, MertConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub train_source: Option<PathBuf>,
    pub train_target: Option<PathBuf>,
    /// Annotated dev set; when absent the dev set is split off the corpus.
    pub dev_m2: Option<PathBuf>,
    /// Text for embeddings and the LM; defaults to the training targets.
    pub monolingual: Option<PathBuf>,
    pub work_dir: PathBuf,

    pub bpe_merges: usize,
    pub vocab_cap: usize,
    pub dev_size: usize,
    pub seed: u64,

    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub max_positions: usize,
    pub dropout: f64,

    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub use_pretrained: bool,
    pub parallel_seeds: bool,

    pub pretrain: PretrainConfig,
    pub lm_order: usize,

    pub beam: usize,
    pub ensemble: Vec<PathBuf>,

    pub features: FeatureToggles,
    pub mert: MertConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_source: None,
            train_target: None,
            dev_m2: None,
            monolingual: None,
            work_dir: PathBuf::from("work"),
            bpe_merges: 30_000,
            vocab_cap: 30_000,
            dev_size: 5_400,
            seed: 1,
            embed_dim: 500,
            hidden_dim: 1024,
            layers: 7,
            max_positions: 1024,
            dropout: 0.2,
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3, 4],
            use_pretrained: true,
            parallel_seeds: false,
            pretrain: PretrainConfig::default(),
            lm_order: 5,
            beam: 12,
            ensemble: Vec::new(),
            features: FeatureToggles { edit_ops: true, lm: true },
            mert: MertConfig::default(),
        }
    }
}

/// Command-line values that win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub work_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub beam: Option<usize>,
    pub ensemble: Option<Vec<PathBuf>>,
    pub features: Option<FeatureToggles>,
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(v: &str, line: usize, key: &str) -> Result<T> {
    v.parse().map_err(|_| bad(line, format!("bad value {v:?} for {key}")))
}

fn boolean(v: &str, line: usize, key: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(line, format!("bad boolean {v:?} for {key}"))),
    }
}

pub fn parse_seeds(v: &str) -> Result<Vec<u64>> {
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad seed {s:?}"))))
        .collect()
}

/// `eo`, `lm`, `eo,lm` or `none`.
pub fn parse_features(v: &str) -> Result<FeatureToggles> {
    let mut t = FeatureToggles::default();
    for f in v.split(',').map(str::trim).filter(|f| !f.is_empty()) {
        match f.to_ascii_lowercase().as_str() {
            "eo" => t.edit_ops = true,
            "lm" => t.lm = true,
            "none" => {}
            other => return Err(Error::Config(format!("unknown feature group {other:?} (expected eo, lm or none)"))),
        }
    }
    Ok(t)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut c = Self::default();
        let mut section = String::new();
        let path = |v: &str| base.join(v);
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(s) = line.strip_prefix('[') {
                section = s
                    .strip_suffix(']')
                    .ok_or_else(|| bad(line_no, "unterminated section header"))?
                    .trim()
                    .to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(line_no, format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let key = format!("{section}.{k}");
            match key.as_str() {
                "paths.train_source" => c.train_source = Some(path(v)),
                "paths.train_target" => c.train_target = Some(path(v)),
                "paths.dev_m2" => c.dev_m2 = Some(path(v)),
                "paths.monolingual" => c.monolingual = Some(path(v)),
                "paths.work_dir" => c.work_dir = path(v),
                "preprocess.bpe_merges" => c.bpe_merges = num(v, line_no, &key)?,
                "preprocess.vocab_cap" => c.vocab_cap = num(v, line_no, &key)?,
                "preprocess.dev_size" => c.dev_size = num(v, line_no, &key)?,
                "experiment.seed" => c.seed = num(v, line_no, &key)?,
                "model.embed_dim" => c.embed_dim = num(v, line_no, &key)?,
                "model.hidden_dim" => c.hidden_dim = num(v, line_no, &key)?,
                "model.layers" => c.layers = num(v, line_no, &key)?,
                "model.max_positions" => c.max_positions = num(v, line_no, &key)?,
                "model.dropout" => c.dropout = num(v, line_no, &key)?,
                "train.lr" => c.train.lr = num(v, line_no, &key)?,
                "train.anneal_factor" => c.train.anneal_factor = num(v, line_no, &key)?,
                "train.momentum" => c.train.momentum = num(v, line_no, &key)?,
                "train.batch_size" => c.train.batch_size = num(v, line_no, &key)?,
                "train.clip" => c.train.clip = num(v, line_no, &key)?,
                "train.patience" => c.train.patience = num(v, line_no, &key)?,
                "train.max_epochs" => c.train.max_epochs = num(v, line_no, &key)?,
                "train.dev_beam" => c.train.dev_beam = num(v, line_no, &key)?,
                "train.threads" => c.train.threads = num(v, line_no, &key)?,
                "train.seeds" => c.seeds = parse_seeds(v)?,
                "train.use_pretrained" => c.use_pretrained = boolean(v, line_no, &key)?,
                "train.parallel_seeds" => c.parallel_seeds = boolean(v, line_no, &key)?,
                "pretrain.mode" => c.pretrain.mode = v.parse()?,
                "pretrain.window" => c.pretrain.window = num(v, line_no, &key)?,
                "pretrain.negatives" => c.pretrain.negatives = num(v, line_no, &key)?,
                "pretrain.epochs" => c.pretrain.epochs = num(v, line_no, &key)?,
                "pretrain.buckets" => c.pretrain.buckets = num(v, line_no, &key)?,
                "pretrain.lr" => c.pretrain.lr = num(v, line_no, &key)?,
                "lm.order" => c.lm_order = num(v, line_no, &key)?,
                "decode.beam" => c.beam = num(v, line_no, &key)?,
                "decode.ensemble" => {
                    c.ensemble = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(path).collect()
                }
                "rescore.features" => c.features = parse_features(v)?,
                "tune.restarts" => c.mert.restarts = num(v, line_no, &key)?,
                "tune.random_directions" => c.mert.random_directions = num(v, line_no, &key)?,
                "tune.max_sweeps" => c.mert.max_sweeps = num(v, line_no, &key)?,
                _ => return Err(bad(line_no, format!("unknown setting {key}"))),
            }
        }
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(w) = &o.work_dir {
            self.work_dir = w.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(b) = o.beam {
            self.beam = b;
        }
        if let Some(e) = &o.ensemble {
            self.ensemble = e.clone();
        }
        if let Some(f) = o.features {
            self.features = f;
        }
    }

    pub fn model_config(&self, src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            src_vocab,
            tgt_vocab,
            max_positions: self.max_positions,
            dropout: self.dropout,
        }
    }

    /// Embedding settings; the dimension always follows the model.
    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            dim: self.embed_dim,
            seed: self.seed,
            ..self.pretrain.clone()
        }
    }

    pub fn is_random_embedding(&self) -> bool {
        self.pretrain.mode == EmbeddingMode::Random
    }

    /// Checks that do not depend on which stage runs.
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("the training seed list is empty".into()));
        }
        if self.lm_order == 0 {
            return Err(Error::Config("lm order must be at least 1".into()));
        }
        self.model_config(Self::MIN_VOCAB, Self::MIN_VOCAB).validate()?;
        self.train.validate()
    }

    const MIN_VOCAB: usize = 5;
}

/// Existence check for a configured path.
pub fn existing(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = p.as_ref().ok_or_else(|| Error::Config(format!("{what} is not configured")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{what} {} does not exist", p.display())));
    }
    Ok(p.clone())
}
