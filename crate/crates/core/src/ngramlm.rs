//! N-gram language model with interpolated modified Kneser-Ney smoothing.
//!
//! The trained model is stored in backoff form (probability plus backoff
//! weight per n-gram), which is exactly what the textual ARPA format holds,
//! so a model read back from disk scores identically to the trained one.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const LM_BOS: &str = "<s>";
pub const LM_EOS: &str = "</s>";
pub const LM_UNK: &str = "<unk>";

const UNK: u32 = 0;
const BOS: u32 = 1;
const EOS: u32 = 2;

/// log10 written for zero-probability entries such as `<s>`.
const ARPA_ZERO: f64 = -99.0;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    prob: f64,
    backoff: f64,
}

#[derive(Clone, Debug)]
pub struct NGramModel {
    order: usize,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// `tables[n - 1]` holds the n-grams.
    tables: Vec<HashMap<Vec<u32>, Entry>>,
    discounts: Vec<[f64; 3]>,
}

/// Discounts for counts 1, 2 and 3+ estimated from the count-of-counts
/// `n1..n4`. Falls back to a single discount `n1 / (n1 + 2 n2)` when some
/// count-of-count is zero, and to 0.5 when even that is undefined.
pub fn estimate_discounts(coc: [usize; 4]) -> [f64; 3] {
    let [n1, n2, n3, n4] = coc.map(|c| c as f64);
    let single = if n1 > 0.0 && n2 > 0.0 {
        n1 / (n1 + 2.0 * n2)
    } else {
        0.5
    };
    if coc.contains(&0) {
        return [single; 3];
    }
    let y = n1 / (n1 + 2.0 * n2);
    let d = [
        1.0 - 2.0 * y * n2 / n1,
        2.0 - 3.0 * y * n3 / n2,
        3.0 - 4.0 * y * n4 / n3,
    ];
    let mut out = [0.0; 3];
    for (k, v) in d.into_iter().enumerate() {
        out[k] = if v > 0.0 && v <= (k + 1) as f64 {
            v
        } else {
            single
        };
    }
    out
}

fn discount(d: &[f64; 3], count: usize) -> f64 {
    match count {
        0 => 0.0,
        1 => d[0],
        2 => d[1],
        _ => d[2],
    }
}

#[derive(Default, Clone, Copy)]
struct ContextStats {
    total: usize,
    n1: usize,
    n2: usize,
    n3: usize,
}

impl NGramModel {
    /// Trains on whitespace-tokenized sentences. Each sentence is padded with
    /// `order - 1` sentence-start markers and one end marker.
    pub fn train<S: AsRef<str>>(corpus: &[Vec<S>], order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        let total_tokens: usize = corpus.iter().map(Vec::len).sum();
        if total_tokens < order {
            return Err(Error::Ingestion(format!(
                "corpus has {total_tokens} tokens, fewer than the model order {order}"
            )));
        }
        let mut vocab: Vec<&str> = corpus
            .iter()
            .flatten()
            .map(AsRef::as_ref)
            .filter(|w| ![LM_BOS, LM_EOS, LM_UNK].contains(w))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        vocab.sort_unstable();
        let words: Vec<String> = [LM_UNK, LM_BOS, LM_EOS]
            .into_iter()
            .chain(vocab)
            .map(String::from)
            .collect();
        let ids: HashMap<String, u32> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();

        // counts[n-1]: raw counts at the top order, continuation counts below
        let mut raw_top: HashMap<Vec<u32>, usize> = HashMap::new();
        let mut left_ext: Vec<HashSet<(u32, Vec<u32>)>> = vec![HashSet::new(); order];
        for sent in corpus {
            let mut seq = vec![BOS; order - 1];
            seq.extend(sent.iter().map(|w| ids.get(w.as_ref()).copied().unwrap_or(UNK)));
            seq.push(EOS);
            for j in order - 1..seq.len() {
                *raw_top.entry(seq[j + 1 - order..=j].to_vec()).or_default() += 1;
                for n in 1..order {
                    left_ext[n - 1].insert((seq[j - n], seq[j + 1 - n..=j].to_vec()));
                }
            }
        }
        let mut counts: Vec<HashMap<Vec<u32>, usize>> = vec![HashMap::new(); order];
        for (n, exts) in left_ext.into_iter().enumerate().take(order - 1) {
            for (_, g) in exts {
                *counts[n].entry(g).or_default() += 1;
            }
        }
        counts[order - 1] = raw_top;

        let discounts: Vec<[f64; 3]> = counts
            .iter()
            .map(|c| {
                let mut coc = [0usize; 4];
                for &v in c.values() {
                    if (1..=4).contains(&v) {
                        coc[v - 1] += 1;
                    }
                }
                estimate_discounts(coc)
            })
            .collect();

        let mut model = NGramModel {
            order,
            words,
            ids,
            tables: vec![HashMap::new(); order],
            discounts,
        };
        let predictable = model.words.len() - 1; // everything except <s>

        for n in 1..=order {
            let d = model.discounts[n - 1];
            let mut ctx: HashMap<&[u32], ContextStats> = HashMap::new();
            for (g, &c) in &counts[n - 1] {
                let s = ctx.entry(&g[..n - 1]).or_default();
                s.total += c;
                match c {
                    1 => s.n1 += 1,
                    2 => s.n2 += 1,
                    _ => s.n3 += 1,
                }
            }
            let gamma = |s: &ContextStats| {
                (d[0] * s.n1 as f64 + d[1] * s.n2 as f64 + d[2] * s.n3 as f64) / s.total as f64
            };

            let mut table: HashMap<Vec<u32>, Entry> = HashMap::new();
            if n == 1 {
                let s = ctx.get(&[][..]).copied().unwrap_or_default();
                let (g0, total) = (gamma(&s), s.total as f64);
                for id in 0..model.words.len() as u32 {
                    if id == BOS {
                        continue;
                    }
                    let c = counts[0].get(&vec![id]).copied().unwrap_or(0);
                    let prob = (c as f64 - discount(&d, c)).max(0.0) / total
                        + g0 / predictable as f64;
                    table.insert(vec![id], Entry { prob, backoff: 1.0 });
                }
                table.insert(vec![BOS], Entry { prob: 0.0, backoff: 1.0 });
            } else {
                for (g, &c) in &counts[n - 1] {
                    let s = &ctx[&g[..n - 1]];
                    let lower = model.prob_ids(&g[1..n - 1], g[n - 1]);
                    let prob = (c as f64 - discount(&d, c)).max(0.0) / s.total as f64
                        + gamma(s) * lower;
                    table.insert(g.clone(), Entry { prob, backoff: 1.0 });
                }
            }
            model.tables[n - 1] = table;

            // backoff weights of this order come from the contexts of the next
            if n < order {
                let next_d = model.discounts[n];
                let mut next_ctx: HashMap<&[u32], ContextStats> = HashMap::new();
                for (g, &c) in &counts[n] {
                    let s = next_ctx.entry(&g[..n]).or_default();
                    s.total += c;
                    match c {
                        1 => s.n1 += 1,
                        2 => s.n2 += 1,
                        _ => s.n3 += 1,
                    }
                }
                for (h, s) in next_ctx {
                    let bow = (next_d[0] * s.n1 as f64
                        + next_d[1] * s.n2 as f64
                        + next_d[2] * s.n3 as f64)
                        / s.total as f64;
                    model.tables[n - 1]
                        .entry(h.to_vec())
                        .or_insert(Entry { prob: 0.0, backoff: 1.0 })
                        .backoff = bow;
                }
            }
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Vocabulary of predictable words (everything but `<s>`).
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.words
            .iter()
            .enumerate()
            .filter(|(i, _)| *i as u32 != BOS)
            .map(|(_, w)| w.as_str())
    }

    pub fn discounts(&self, n: usize) -> [f64; 3] {
        self.discounts[n - 1]
    }

    fn id(&self, w: &str) -> u32 {
        self.ids.get(w).copied().unwrap_or(UNK)
    }

    /// `p(w | context)` using the longest available history.
    fn prob_ids(&self, context: &[u32], w: u32) -> f64 {
        let max_hist = context.len().min(self.order - 1);
        let mut bow = 1.0;
        for h in (0..=max_hist).rev() {
            let hist = &context[context.len() - h..];
            let mut key = hist.to_vec();
            key.push(w);
            if let Some(e) = self.tables[h].get(&key) {
                return bow * e.prob;
            }
            if h > 0 {
                if let Some(e) = self.tables[h - 1].get(hist) {
                    bow *= e.backoff;
                }
            }
        }
        0.0
    }

    /// Conditional probability of `word` after `context` (words, oldest first).
    pub fn prob<S: AsRef<str>>(&self, context: &[S], word: &str) -> f64 {
        let ctx: Vec<u32> = context.iter().map(|w| self.id(w.as_ref())).collect();
        self.prob_ids(&ctx, self.id(word))
    }

    fn padded_ids<S: AsRef<str>>(&self, words: &[S]) -> Vec<u32> {
        let mut seq = vec![BOS; self.order - 1];
        seq.extend(words.iter().map(|w| self.id(w.as_ref())));
        seq
    }

    /// Natural-log probability sum over the words of a sentence (sentence
    /// markers excluded) and the word count.
    pub fn score_words<S: AsRef<str>>(&self, words: &[S]) -> (f64, usize) {
        let seq = self.padded_ids(words);
        let start = self.order - 1;
        let logp = (start..seq.len())
            .map(|j| self.prob_ids(&seq[j + 1 - self.order..j], seq[j]).ln())
            .sum();
        (logp, words.len())
    }

    /// Natural-log probability of a full sentence including the end marker.
    pub fn sentence_logprob<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        let mut seq = self.padded_ids(words);
        seq.push(EOS);
        (self.order - 1..seq.len())
            .map(|j| self.prob_ids(&seq[j + 1 - self.order..j], seq[j]).ln())
            .sum()
    }

    /// Per-token perplexity with end markers counted as tokens.
    pub fn perplexity<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> f64 {
        let (mut logp, mut n) = (0.0, 0usize);
        for s in sentences {
            logp += self.sentence_logprob(s);
            n += s.len() + 1;
        }
        (-logp / n as f64).exp()
    }

    fn render(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.words[i as usize].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// ARPA text: per-order counts, then `log10(p) ngram [log10(backoff)]`.
    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\n\\data\\\n");
        for (n, t) in self.tables.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", n + 1, t.len());
        }
        for (n, table) in self.tables.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", n + 1);
            let mut rows: BTreeMap<String, &Entry> = BTreeMap::new();
            for (k, e) in table {
                rows.insert(self.render(k), e);
            }
            for (text, e) in rows {
                let lp = if e.prob > 0.0 { e.prob.log10() } else { ARPA_ZERO };
                if n + 1 < self.order {
                    let _ = writeln!(out, "{lp}\t{text}\t{}", e.backoff.log10());
                } else {
                    let _ = writeln!(out, "{lp}\t{text}");
                }
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn from_arpa(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: &str| Error::Parse {
            line,
            msg: msg.to_string(),
        };
        let mut declared: Vec<usize> = Vec::new();
        let mut section: Option<usize> = None;
        let mut raw: Vec<Vec<(Vec<String>, f64, f64)>> = Vec::new();
        let mut saw_end = false;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line == "\\data\\" {
                continue;
            }
            if line == "\\end\\" {
                saw_end = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("ngram ") {
                let (n, c) = rest.split_once('=').ok_or_else(|| perr(lineno, "bad count line"))?;
                let n: usize = n.trim().parse().map_err(|_| perr(lineno, "bad order"))?;
                let c: usize = c.trim().parse().map_err(|_| perr(lineno, "bad count"))?;
                if n != declared.len() + 1 {
                    return Err(perr(lineno, "orders must be declared in sequence"));
                }
                declared.push(c);
                raw.push(Vec::new());
                continue;
            }
            if let Some(rest) = line.strip_prefix('\\') {
                let n: usize = rest
                    .strip_suffix("-grams:")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| perr(lineno, "bad section header"))?;
                if n == 0 || n > declared.len() {
                    return Err(perr(lineno, "undeclared order"));
                }
                section = Some(n);
                continue;
            }
            let n = section.ok_or_else(|| perr(lineno, "n-gram outside a section"))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != n + 1 && fields.len() != n + 2 {
                return Err(perr(lineno, "wrong number of fields"));
            }
            let lp: f64 = fields[0].parse().map_err(|_| perr(lineno, "bad log-probability"))?;
            let bow: f64 = match fields.get(n + 1) {
                Some(b) => b.parse().map_err(|_| perr(lineno, "bad backoff"))?,
                None => 0.0,
            };
            let words = fields[1..=n].iter().map(|s| s.to_string()).collect();
            let prob = if lp <= ARPA_ZERO { 0.0 } else { 10f64.powf(lp) };
            raw[n - 1].push((words, prob, 10f64.powf(bow)));
        }
        if !saw_end || declared.is_empty() {
            return Err(perr(0, "missing \\data\\ or \\end\\ marker"));
        }
        for (n, rows) in raw.iter().enumerate() {
            if rows.len() != declared[n] {
                return Err(perr(0, &format!("order {} declares {} n-grams, found {}", n + 1, declared[n], rows.len())));
            }
        }
        let mut vocab: Vec<String> = raw[0]
            .iter()
            .map(|r| r.0[0].clone())
            .filter(|w| ![LM_BOS, LM_EOS, LM_UNK].contains(&w.as_str()))
            .collect();
        vocab.sort_unstable();
        let words: Vec<String> = [LM_UNK, LM_BOS, LM_EOS]
            .into_iter()
            .map(String::from)
            .chain(vocab)
            .collect();
        let ids: HashMap<String, u32> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        let tables = raw
            .into_iter()
            .map(|rows| {
                rows.into_iter()
                    .map(|(ws, prob, backoff)| {
                        (ws.iter().map(|w| ids[w.as_str()]).collect(), Entry { prob, backoff })
                    })
                    .collect()
            })
            .collect();
        let order = declared.len();
        Ok(NGramModel {
            order,
            words,
            ids,
            tables,
            discounts: vec![[0.0; 3]; order],
        })
    }
}
