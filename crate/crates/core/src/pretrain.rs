//! Skip-gram word embeddings with negative sampling, optionally composed
//! from hashed character n-grams.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::numcore::sigmoid;
use crate::SeededRng;

pub const MIN_N: usize = 3;
pub const MAX_N: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// Center words are the sum of a word vector and their n-gram vectors.
    Subword,
    /// Word vectors only.
    Plain,
    /// No training: uniform(−0.1, 0.1) vectors.
    Random,
}

impl FromStr for EmbeddingMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subword" => Ok(Self::Subword),
            "plain" => Ok(Self::Plain),
            "random" => Ok(Self::Random),
            _ => Err(Error::Config(format!("unknown embedding mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub mode: EmbeddingMode,
    pub seed: u64,
    pub buckets: u32,
    /// Initial rate, decayed linearly to zero over all epochs.
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dim: 500,
            window: 5,
            negatives: 5,
            epochs: 1,
            mode: EmbeddingMode::Subword,
            seed: 1,
            buckets: 1 << 20,
            lr: 0.025,
        }
    }
}

/// Character n-grams of `<word>` for n in 3..=6, and the marked word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharNgrams {
    pub ngrams: Vec<String>,
    pub whole: String,
}

pub fn extract_ngrams(word: &str) -> CharNgrams {
    let marked: Vec<char> = format!("<{word}>").chars().collect();
    let mut ngrams = Vec::new();
    for n in MIN_N..=MAX_N {
        if n > marked.len() {
            break;
        }
        for w in marked.windows(n) {
            ngrams.push(w.iter().collect());
        }
    }
    CharNgrams {
        ngrams,
        whole: marked.into_iter().collect(),
    }
}

/// 32-bit FNV-1a, the usual n-gram bucket hash.
fn fnv1a(s: &str) -> u32 {
    let mut h: u32 = 2_166_136_261;
    for b in s.bytes() {
        h ^= b as u32;
        h = h.wrapping_mul(16_777_619);
    }
    h
}

/// Trained (or random) input vectors. Bucket rows are only allocated for
/// buckets some vocabulary word actually uses.
#[derive(Clone, Debug, PartialEq)]
pub struct SubwordEmbeddings {
    dim: usize,
    buckets: u32,
    subword: bool,
    words: Vec<String>,
    index: HashMap<String, usize>,
    word_vectors: Vec<Vec<f64>>,
    bucket_rows: HashMap<u32, usize>,
    ngram_vectors: Vec<Vec<f64>>,
    /// Per word: dense rows of its n-grams (one entry per n-gram occurrence).
    word_ngrams: Vec<Vec<usize>>,
}

impl SubwordEmbeddings {
    fn new(words: Vec<String>, dim: usize, buckets: u32, subword: bool) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let mut bucket_rows = HashMap::new();
        let mut word_ngrams = Vec::with_capacity(words.len());
        for w in &words {
            let rows = if subword {
                extract_ngrams(w)
                    .ngrams
                    .iter()
                    .map(|g| {
                        let b = fnv1a(g) % buckets;
                        let next = bucket_rows.len();
                        *bucket_rows.entry(b).or_insert(next)
                    })
                    .collect()
            } else {
                Vec::new()
            };
            word_ngrams.push(rows);
        }
        let n_rows = bucket_rows.len();
        Self {
            dim,
            buckets,
            subword,
            word_vectors: vec![vec![0.0; dim]; words.len()],
            ngram_vectors: vec![vec![0.0; dim]; n_rows],
            words,
            index,
            bucket_rows,
            word_ngrams,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_vector_mut(&mut self, word: &str) -> Option<&mut [f64]> {
        let i = *self.index.get(word)?;
        Some(&mut self.word_vectors[i])
    }

    /// Shared bucket vector of an n-gram, if any vocabulary word uses it.
    pub fn ngram_vector_mut(&mut self, ngram: &str) -> Option<&mut [f64]> {
        let row = *self.bucket_rows.get(&(fnv1a(ngram) % self.buckets))?;
        Some(&mut self.ngram_vectors[row])
    }

    fn compose_index(&self, i: usize, out: &mut [f64]) {
        out.copy_from_slice(&self.word_vectors[i]);
        for &r in &self.word_ngrams[i] {
            for (o, v) in out.iter_mut().zip(&self.ngram_vectors[r]) {
                *o += v;
            }
        }
    }

    /// Emitted vector: word vector plus the vectors of its n-grams. Unknown
    /// words in subword mode fall back to their known n-grams.
    pub fn vector(&self, word: &str) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        if let Some(&i) = self.index.get(word) {
            self.compose_index(i, &mut out);
            return Some(out);
        }
        if !self.subword {
            return None;
        }
        let mut found = false;
        for g in extract_ngrams(word).ngrams {
            if let Some(&r) = self.bucket_rows.get(&(fnv1a(&g) % self.buckets)) {
                found = true;
                for (o, v) in out.iter_mut().zip(&self.ngram_vectors[r]) {
                    *o += v;
                }
            }
        }
        found.then_some(out)
    }

    pub fn to_table(&self) -> EmbeddingTable {
        let vectors = (0..self.words.len())
            .map(|i| {
                let mut v = vec![0.0; self.dim];
                self.compose_index(i, &mut v);
                v
            })
            .collect();
        EmbeddingTable {
            dim: self.dim,
            tokens: self.words.clone(),
            vectors,
        }
    }
}

/// Token → vector map in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub tokens: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.tokens
            .iter()
            .position(|t| t == token)
            .map(|i| self.vectors[i].as_slice())
    }

    pub fn lookup(&self) -> HashMap<&str, &[f64]> {
        self.tokens
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
            .collect()
    }

    /// `count dim` header, then `token v1 … vd` per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.tokens.len(), self.dim);
        for (t, v) in self.tokens.iter().zip(&self.vectors) {
            out.push_str(t);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing `count dim` header".into(),
        })?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: 1,
                msg: format!("bad header {header:?}"),
            })?;
        let [count, dim] = nums[..] else {
            return Err(Error::Parse {
                line: 1,
                msg: format!("bad header {header:?}"),
            });
        };
        let mut tokens = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            let tok = parts.next().unwrap_or_default();
            let v: Vec<f64> = parts
                .map(|s| s.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse {
                    line: i + 2,
                    msg: "bad vector value".into(),
                })?;
            if tok.is_empty() || v.len() != dim {
                return Err(Error::Parse {
                    line: i + 2,
                    msg: format!("expected a token and {dim} values"),
                });
            }
            tokens.push(tok.to_string());
            vectors.push(v);
        }
        if tokens.len() != count {
            return Err(Error::Parse {
                line: tokens.len() + 1,
                msg: format!("header announces {count} rows, found {}", tokens.len()),
            });
        }
        Ok(Self { dim, tokens, vectors })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainOutcome {
    pub embeddings: SubwordEmbeddings,
    /// Mean negative-sampling loss per epoch (measured before each update).
    pub epoch_losses: Vec<f64>,
}

/// Word list by frequency (descending), ties lexicographic, with counts.
fn count_words<S: AsRef<str>>(corpus: &[Vec<S>]) -> (Vec<String>, Vec<u64>) {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in corpus {
        for w in s {
            *counts.entry(w.as_ref()).or_default() += 1;
        }
    }
    let mut v: Vec<(&str, u64)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    v.into_iter().map(|(w, c)| (w.to_string(), c)).unzip()
}

pub fn train_embeddings<S: AsRef<str>>(corpus: &[Vec<S>], cfg: &PretrainConfig) -> Result<PretrainOutcome> {
    if cfg.dim == 0 || cfg.buckets == 0 {
        return Err(Error::Config("embedding dim and bucket count must be positive".into()));
    }
    let (words, counts) = count_words(corpus);
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let subword = cfg.mode == EmbeddingMode::Subword;
    let mut emb = SubwordEmbeddings::new(words, cfg.dim, cfg.buckets, subword);

    if cfg.mode == EmbeddingMode::Random {
        for v in &mut emb.word_vectors {
            v.iter_mut().for_each(|x| *x = rng.gen_range(-0.1..0.1));
        }
        return Ok(PretrainOutcome {
            embeddings: emb,
            epoch_losses: Vec::new(),
        });
    }
    if emb.words.is_empty() {
        return Err(Error::Ingestion("cannot pretrain embeddings on an empty corpus".into()));
    }

    let bound = 1.0 / cfg.dim as f64;
    for v in emb.word_vectors.iter_mut().chain(emb.ngram_vectors.iter_mut()) {
        v.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
    }
    let mut output = vec![vec![0.0; cfg.dim]; emb.words.len()];
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| Error::Ingestion(format!("noise distribution: {e}")))?;

    let ids: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| s.iter().map(|w| emb.index[w.as_ref()]).collect())
        .collect();
    let total_tokens: usize = ids.iter().map(Vec::len).sum::<usize>() * cfg.epochs;
    let mut seen = 0usize;
    let mut h = vec![0.0; cfg.dim];
    let mut grad_h = vec![0.0; cfg.dim];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let (mut loss_sum, mut n_pairs) = (0.0, 0usize);
        for sent in &ids {
            for (i, &center) in sent.iter().enumerate() {
                let lr = cfg.lr * (1.0 - seen as f64 / total_tokens as f64);
                seen += 1;
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window + 1).min(sent.len());
                for (j, &ctx) in sent.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    emb.compose_index(center, &mut h);
                    grad_h.iter_mut().for_each(|g| *g = 0.0);
                    let mut targets = vec![(ctx, 1.0)];
                    while targets.len() <= cfg.negatives {
                        let neg = noise.sample(&mut rng);
                        if neg != ctx {
                            targets.push((neg, 0.0));
                        }
                    }
                    for (t, label) in targets {
                        let u = &mut output[t];
                        let score: f64 = u.iter().zip(&h).map(|(a, b)| a * b).sum();
                        let p = sigmoid(score);
                        loss_sum -= if label > 0.0 { p.ln() } else { (1.0 - p).ln() };
                        let g = lr * (label - p);
                        for k in 0..cfg.dim {
                            grad_h[k] += g * u[k];
                            u[k] += g * h[k];
                        }
                    }
                    n_pairs += 1;
                    for (x, g) in emb.word_vectors[center].iter_mut().zip(&grad_h) {
                        *x += g;
                    }
                    for k in 0..emb.word_ngrams[center].len() {
                        let r = emb.word_ngrams[center][k];
                        for (x, g) in emb.ngram_vectors[r].iter_mut().zip(&grad_h) {
                            *x += g;
                        }
                    }
                }
            }
        }
        epoch_losses.push(if n_pairs == 0 { 0.0 } else { loss_sum / n_pairs as f64 });
    }
    Ok(PretrainOutcome {
        embeddings: emb,
        epoch_losses,
    })
}
