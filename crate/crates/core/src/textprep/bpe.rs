use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Suffix attached to every non-final subword of a word.
pub const CONTINUATION: &str = "@@";
/// Internal end-of-word marker glued to the last symbol of a word.
pub const END_OF_WORD: &str = "</w>";

const HEADER: &str = "#version: 0.2";

type Pair = (String, String);

/// Ordered list of learned merges.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<Pair>) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        Self { merges, ranks }
    }

    pub fn merges(&self) -> &[Pair] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Merge file text: a version header, then one `left right` rule per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.starts_with("#version") => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing merge file version header".into(),
                })
            }
        }
        let mut merges = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("expected `left right`, got {line:?}"),
                    })
                }
            }
        }
        Ok(Self::from_merges(merges))
    }

    /// Segments one word into subword symbols; the last symbol keeps the
    /// end-of-word marker.
    fn segment_symbols(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&rank| (rank, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (left, right) = &self.merges[rank];
            symbols = merge_pair(&symbols, left, right);
        }
        symbols
    }

    /// Segments a word into output subwords with continuation markers.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut symbols = self.segment_symbols(word);
        // a final piece ending in the marker would read as a continuation;
        // its last character becomes the final piece instead
        if let Some(last) = symbols.last_mut() {
            let bare = last.strip_suffix(END_OF_WORD).unwrap_or(last);
            if bare.len() > 1 && bare.ends_with(CONTINUATION) {
                let tail = bare.chars().last().map(String::from).unwrap_or_default();
                *last = bare[..bare.len() - tail.len()].to_string();
                symbols.push(tail);
            }
        }
        let n = symbols.len();
        symbols
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if i + 1 == n {
                    s.strip_suffix(END_OF_WORD).unwrap_or(&s).to_string()
                } else {
                    format!("{s}{CONTINUATION}")
                }
            })
            .collect()
    }

    pub fn apply<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<String> {
        let mut cache: HashMap<&str, Vec<String>> = HashMap::new();
        let mut out = Vec::with_capacity(sentence.len());
        for w in sentence {
            let w = w.as_ref();
            let seg = cache.entry(w).or_insert_with(|| self.apply_word(w));
            out.extend(seg.iter().cloned());
        }
        out
    }
}

/// Joins continuation-marked subwords back into words.
pub fn desegment<S: AsRef<str>>(subwords: &[S]) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut open = false;
    for s in subwords {
        let s = s.as_ref();
        if let Some(stem) = s.strip_suffix(CONTINUATION) {
            current.push_str(stem);
            open = true;
        } else {
            current.push_str(s);
            words.push(std::mem::take(&mut current));
            open = false;
        }
    }
    if open {
        words.push(current);
    }
    words
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(END_OF_WORD);
    }
    symbols
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Greedy most-frequent-pair merge learning. Ties go to the
/// lexicographically smallest `(left, right)` pair.
pub fn learn_bpe<S: AsRef<str>>(corpus: &[Vec<S>], num_merges: usize) -> Result<BpeModel> {
    let mut freqs: HashMap<&str, i64> = HashMap::new();
    for sent in corpus {
        for w in sent {
            *freqs.entry(w.as_ref()).or_default() += 1;
        }
    }
    if freqs.is_empty() {
        return Err(Error::Ingestion("cannot learn BPE from an empty corpus".into()));
    }
    // deterministic word order
    let mut entries: Vec<(&str, i64)> = freqs.into_iter().collect();
    entries.sort_unstable();
    let counts: Vec<i64> = entries.iter().map(|e| e.1).collect();
    let mut words: Vec<Vec<String>> = entries.iter().map(|e| initial_symbols(e.0)).collect();

    let mut stats: HashMap<Pair, i64> = HashMap::new();
    let mut index: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, syms) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let pair = (p[0].clone(), p[1].clone());
            *stats.entry(pair.clone()).or_default() += counts[wi];
            index.entry(pair).or_default().insert(wi);
        }
    }
    let mut queue: BTreeSet<(Reverse<i64>, Pair)> = stats
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(p, &c)| (Reverse(c), p.clone()))
        .collect();

    let mut merges = Vec::with_capacity(num_merges);
    while merges.len() < num_merges {
        let Some((Reverse(count), best)) = queue.pop_first() else {
            break;
        };
        if count <= 0 {
            break;
        }
        let affected: Vec<usize> = {
            let mut v: Vec<usize> = index
                .get(&best)
                .map(|s| s.iter().copied().collect())
                .unwrap_or_default();
            v.sort_unstable();
            v
        };
        let mut delta: HashMap<Pair, i64> = HashMap::new();
        for wi in affected {
            let old = &words[wi];
            if !old.windows(2).any(|p| p[0] == best.0 && p[1] == best.1) {
                continue;
            }
            let new = merge_pair(old, &best.0, &best.1);
            for p in old.windows(2) {
                *delta.entry((p[0].clone(), p[1].clone())).or_default() -= counts[wi];
            }
            for p in new.windows(2) {
                let pair = (p[0].clone(), p[1].clone());
                *delta.entry(pair.clone()).or_default() += counts[wi];
                index.entry(pair).or_default().insert(wi);
            }
            words[wi] = new;
        }
        for (pair, d) in delta {
            if d == 0 {
                continue;
            }
            let entry = stats.entry(pair.clone()).or_default();
            if *entry > 0 && pair != best {
                queue.remove(&(Reverse(*entry), pair.clone()));
            }
            *entry += d;
            if *entry > 0 && pair != best {
                queue.insert((Reverse(*entry), pair));
            }
        }
        stats.remove(&best);
        index.remove(&best);
        merges.push(best);
    }
    Ok(BpeModel::from_merges(merges))
}
