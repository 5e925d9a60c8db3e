use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub type Sentence = Vec<String>;

pub fn tokenize(line: &str) -> Sentence {
    line.split_whitespace().map(String::from).collect()
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(text.lines().map(String::from).collect())
}

pub fn read_tokenized(path: &Path) -> Result<Vec<Sentence>> {
    Ok(read_lines(path)?.iter().map(|l| tokenize(l)).collect())
}

/// Source/target sentence pairs with unchanged pairs removed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pairs: Vec<(Sentence, Sentence)>,
}

/// Counts from [`load_parallel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoadReport {
    pub read: usize,
    pub kept: usize,
}

impl ParallelCorpus {
    /// Builds a corpus, discarding pairs whose target equals the source.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Sentence, Sentence)>) -> Self {
        Self {
            pairs: pairs.into_iter().filter(|(s, t)| s != t).collect(),
        }
    }

    pub fn pairs(&self) -> &[(Sentence, Sentence)] {
        &self.pairs
    }

    pub fn into_pairs(self) -> Vec<(Sentence, Sentence)> {
        self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn pair_lines(source: Vec<String>, target: Vec<String>) -> Result<(ParallelCorpus, LoadReport)> {
    if source.len() != target.len() {
        return Err(Error::Alignment {
            source_lines: source.len(),
            target_lines: target.len(),
        });
    }
    let read = source.len();
    let corpus = ParallelCorpus::from_pairs(
        source
            .iter()
            .zip(&target)
            .map(|(s, t)| (tokenize(s), tokenize(t))),
    );
    let kept = corpus.len();
    Ok((corpus, LoadReport { read, kept }))
}

/// Reads two line-aligned files into a filtered corpus.
pub fn load_parallel(source: &Path, target: &Path) -> Result<(ParallelCorpus, LoadReport)> {
    pair_lines(read_lines(source)?, read_lines(target)?)
}
