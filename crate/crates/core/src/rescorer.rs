//! Log-linear n-best reranking with edit-operation and language-model
//! features, and exact line-search MERT against corpus F0.5.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};

use crate::decoder::split_nbest_line;
use crate::error::{Error, Result};
use crate::gecmetrics::SentenceStats;
use crate::ngramlm::NGramModel;
use crate::SeededRng;

pub const MODEL_SCORE: &str = "model_score";
pub const EDIT_FEATURES: [&str; 3] = ["substitutions", "deletions", "insertions"];
pub const LM_FEATURES: [&str; 2] = ["lm_logprob", "word_count"];

/// `(substitutions, deletions, insertions)` of a minimal-cost alignment.
/// Among equal-cost alignments the one with the most matches is counted;
/// cost and matches fix the other counts, so swapping the arguments swaps
/// deletions and insertions.
pub fn edit_features<S: PartialEq>(source: &[S], hypothesis: &[S]) -> (usize, usize, usize) {
    let (n, m) = (source.len(), hypothesis.len());
    // (cost, -matches), compared lexicographically
    let mut prev: Vec<(usize, isize)> = (0..=m).map(|j| (j, 0)).collect();
    let mut cur = vec![(0, 0); m + 1];
    for i in 1..=n {
        cur[0] = (i, 0);
        for j in 1..=m {
            let (c, k) = prev[j - 1];
            let diag = if source[i - 1] == hypothesis[j - 1] { (c, k - 1) } else { (c + 1, k) };
            let del = (prev[j].0 + 1, prev[j].1);
            let ins = (cur[j - 1].0 + 1, cur[j - 1].1);
            cur[j] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, neg) = prev[m];
    let matches = (-neg) as usize;
    let subs = n + m - 2 * matches - cost;
    (subs, n - matches - subs, m - matches - subs)
}

/// Which feature groups accompany the model score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FeatureToggles {
    pub edit_ops: bool,
    pub lm: bool,
}

impl FeatureToggles {
    pub fn names(&self) -> Vec<String> {
        let mut v = vec![MODEL_SCORE.to_string()];
        if self.edit_ops {
            v.extend(EDIT_FEATURES.iter().map(|s| s.to_string()));
        }
        if self.lm {
            v.extend(LM_FEATURES.iter().map(|s| s.to_string()));
        }
        v
    }
}

/// Named feature values of one hypothesis (word-level text).
pub fn compute_features<S: AsRef<str> + PartialEq>(
    source: &[S],
    hypothesis: &[S],
    model_score: f64,
    toggles: FeatureToggles,
    lm: Option<&NGramModel>,
) -> Result<Vec<(String, f64)>> {
    let mut out = vec![(MODEL_SCORE.to_string(), model_score)];
    if toggles.edit_ops {
        let (s, d, i) = edit_features(source, hypothesis);
        for (name, v) in EDIT_FEATURES.iter().zip([s, d, i]) {
            out.push((name.to_string(), v as f64));
        }
    }
    if toggles.lm {
        let lm = lm.ok_or_else(|| Error::Dependency("language-model features need a trained LM".into()))?;
        let (logp, count) = lm.score_words(hypothesis);
        out.push((LM_FEATURES[0].to_string(), logp));
        out.push((LM_FEATURES[1].to_string(), count as f64));
    }
    Ok(out)
}

/// One n-best entry: word-level text and named features.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredHypothesis {
    pub text: Vec<String>,
    pub features: Vec<(String, f64)>,
}

impl ScoredHypothesis {
    /// Values in `names` order; a missing name is a contract error.
    pub fn project(&self, names: &[String], sentence: usize, rank: usize) -> Result<Vec<f64>> {
        names
            .iter()
            .map(|n| {
                self.features
                    .iter()
                    .find(|(k, _)| k == n)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| {
                        Error::Contract(format!(
                            "sentence {sentence} hypothesis {rank} lacks feature {n}"
                        ))
                    })
            })
            .collect()
    }
}

/// `sentence_id ||| text ||| name=value ...` lines, best first per sentence.
pub fn write_feature_nbest(lists: &[Vec<ScoredHypothesis>]) -> String {
    let mut out = String::new();
    for (id, list) in lists.iter().enumerate() {
        for h in list {
            let feats: Vec<String> = h.features.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(out, "{id} ||| {} ||| {}", h.text.join(" "), feats.join(" "));
        }
    }
    out
}

/// Parses feature n-best text into `sentences` lists (ids `0..sentences`).
pub fn parse_feature_nbest(text: &str, sentences: usize) -> Result<Vec<Vec<ScoredHypothesis>>> {
    let mut lists = vec![Vec::new(); sentences];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, hyp, rest) = split_nbest_line(line, i + 1)?;
        if id >= sentences {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("sentence id {id} out of range (expected < {sentences})"),
            });
        }
        let features = rest
            .split_whitespace()
            .map(|kv| {
                let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse {
                    line: i + 1,
                    msg: format!("expected name=value, got {kv:?}"),
                })?;
                let v: f64 = v.parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad feature value {v:?}"),
                })?;
                Ok((k.to_string(), v))
            })
            .collect::<Result<Vec<_>>>()?;
        lists[id].push(ScoredHypothesis {
            text: hyp.split_whitespace().map(String::from).collect(),
            features,
        });
    }
    Ok(lists)
}

/// Named weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub names: Vec<String>,
    pub values: Vec<f64>,
}

impl WeightVector {
    /// Model score 1, everything else 0: reproduces beam order.
    pub fn initial(names: Vec<String>) -> Self {
        let values = names.iter().map(|n| f64::from(u8::from(n == MODEL_SCORE))).collect();
        Self { names, values }
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.values.len() {
            return Err(Error::Contract("weight names and values differ in length".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature weight".into()));
        }
        if self.values.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("at least one weight must be nonzero".into()));
        }
        Ok(())
    }

    /// One `name weight` pair per line.
    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| format!("{n} {v}\n"))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            match (it.next(), it.next().map(str::parse::<f64>), it.next()) {
                (Some(n), Some(Ok(v)), None) => {
                    names.push(n.to_string());
                    values.push(v);
                }
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("expected `name weight`, got {line:?}"),
                    })
                }
            }
        }
        let w = Self { names, values };
        w.validate()?;
        Ok(w)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reorders every list by weighted score, descending; ties keep beam order.
pub fn rescore(lists: &[Vec<ScoredHypothesis>], weights: &WeightVector) -> Result<Vec<Vec<ScoredHypothesis>>> {
    weights.validate()?;
    lists
        .iter()
        .enumerate()
        .map(|(sid, list)| {
            let mut scored = list
                .iter()
                .enumerate()
                .map(|(r, h)| Ok((dot(&h.project(&weights.names, sid, r)?, &weights.values), h)))
                .collect::<Result<Vec<_>>>()?;
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            Ok(scored.into_iter().map(|(_, h)| h.clone()).collect())
        })
        .collect()
}

/// A dense candidate for tuning: feature values plus its M2 counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub features: Vec<f64>,
    pub stats: SentenceStats,
}

/// Index of the highest-scoring candidate (lowest index on ties).
pub fn select(list: &[Candidate], w: &[f64]) -> usize {
    let mut best = 0;
    let mut best_s = f64::NEG_INFINITY;
    for (i, c) in list.iter().enumerate() {
        let s = dot(&c.features, w);
        if s > best_s {
            best = i;
            best_s = s;
        }
    }
    best
}

/// Corpus F0.5 of the per-sentence selections under `w`.
pub fn corpus_f05(lists: &[Vec<Candidate>], w: &[f64]) -> f64 {
    lists
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| l[select(l, w)].stats)
        .fold(SentenceStats::default(), |a, b| a + b)
        .report()
        .f05
}

#[derive(Clone, Debug, PartialEq)]
pub struct MertConfig {
    /// Random starting points in addition to the initial weights.
    pub restarts: usize,
    /// Random directions tried after the coordinate axes in every sweep.
    pub random_directions: usize,
    pub seed: u64,
    pub max_sweeps: usize,
    /// Feature indices whose weight stays fixed.
    pub frozen: Vec<usize>,
}

impl Default for MertConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            random_directions: 0,
            seed: 1,
            max_sweeps: 50,
            frozen: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MertResult {
    pub weights: Vec<f64>,
    pub f05: f64,
    pub initial_f05: f64,
    /// Incumbent F0.5 after every line search, across all runs.
    pub trace: Vec<f64>,
}

/// Upper envelope of lines `a + γ b` for one sentence: returns
/// `(breakpoints, owners)` where `owners[k]` is optimal on
/// `(breakpoints[k-1], breakpoints[k])`, with ±∞ at the ends. Identical
/// lines resolve to the lowest index, as in [`select`].
fn upper_envelope(lines: &[(f64, f64)]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..lines.len()).collect();
    // slope ascending; among equal slopes the winner (higher intercept,
    // then lower index) comes last
    order.sort_by(|&i, &j| {
        lines[i]
            .1
            .total_cmp(&lines[j].1)
            .then(lines[i].0.total_cmp(&lines[j].0))
            .then(j.cmp(&i))
    });
    let mut dedup: Vec<usize> = Vec::new();
    for &i in &order {
        if let Some(&last) = dedup.last() {
            if lines[last].1 == lines[i].1 {
                dedup.pop();
            }
        }
        dedup.push(i);
    }
    let mut hull: Vec<usize> = Vec::new();
    let mut starts: Vec<f64> = Vec::new();
    for &i in &dedup {
        let (a, b) = lines[i];
        loop {
            let Some(&top) = hull.last() else {
                hull.push(i);
                starts.push(f64::NEG_INFINITY);
                break;
            };
            let (at, bt) = lines[top];
            // slopes strictly increase here
            let x = (at - a) / (b - bt);
            if x <= *starts.last().unwrap() {
                hull.pop();
                starts.pop();
                continue;
            }
            hull.push(i);
            starts.push(x);
            break;
        }
    }
    (starts[1..].to_vec(), hull)
}

/// Exact line search from `w` along `d`: the step whose interval has the
/// best corpus F0.5 (midpoint of the interval), and that F0.5.
fn line_search(lists: &[Vec<Candidate>], w: &[f64], d: &[f64]) -> Option<(f64, f64)> {
    let mut events: Vec<(f64, usize, usize, usize)> = Vec::new(); // (x, sentence, from, to)
    let mut stats = SentenceStats::default();
    for (sid, list) in lists.iter().enumerate() {
        if list.is_empty() {
            continue;
        }
        let lines: Vec<(f64, f64)> = list.iter().map(|c| (dot(&c.features, w), dot(&c.features, d))).collect();
        let (xs, owners) = upper_envelope(&lines);
        stats = stats + list[owners[0]].stats;
        for (k, &x) in xs.iter().enumerate() {
            events.push((x, sid, owners[k], owners[k + 1]));
        }
    }
    if events.is_empty() {
        return None;
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let diff = |s: SentenceStats, out: SentenceStats, inn: SentenceStats| SentenceStats {
        tp: s.tp - out.tp + inn.tp,
        fp: s.fp - out.fp + inn.fp,
        fn_: s.fn_ - out.fn_ + inn.fn_,
    };
    // interval k spans (x_{k-1}, x_k)
    let mut best_f = stats.report().f05;
    let mut best_gamma = events[0].0 - 1.0;
    let mut k = 0;
    while k < events.len() {
        let x = events[k].0;
        while k < events.len() && events[k].0 == x {
            let (_, sid, from, to) = events[k];
            stats = diff(stats, lists[sid][from].stats, lists[sid][to].stats);
            k += 1;
        }
        let f = stats.report().f05;
        if f > best_f {
            best_f = f;
            best_gamma = if k < events.len() { 0.5 * (x + events[k].0) } else { x + 1.0 };
        }
    }
    Some((best_gamma, best_f))
}

fn optimize_from(lists: &[Vec<Candidate>], start: Vec<f64>, cfg: &MertConfig, rng: &mut SeededRng, trace: &mut Vec<f64>) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut w = start;
    let mut f = corpus_f05(lists, &w);
    trace.push(f);
    let free: Vec<usize> = (0..dim).filter(|i| !cfg.frozen.contains(i)).collect();
    for _ in 0..cfg.max_sweeps {
        let mut improved = false;
        let mut dirs: Vec<Vec<f64>> = free
            .iter()
            .map(|&i| {
                let mut d = vec![0.0; dim];
                d[i] = 1.0;
                d
            })
            .collect();
        for _ in 0..cfg.random_directions {
            let mut d = vec![0.0; dim];
            for &i in &free {
                d[i] = rng.gen_range(-1.0..1.0);
            }
            dirs.push(d);
        }
        for d in dirs {
            let Some((gamma, _)) = line_search(lists, &w, &d) else {
                continue;
            };
            let cand: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + gamma * b).collect();
            // evaluate the actual selections, so ties can never cost F0.5
            let fc = corpus_f05(lists, &cand);
            if fc > f && cand.iter().any(|&v| v != 0.0) {
                w = cand;
                f = fc;
                improved = true;
            }
            trace.push(f);
        }
        if !improved {
            break;
        }
    }
    (w, f)
}

/// Coordinate-ascent MERT with seeded random restarts. The result never
/// scores below `initial` on the tuning lists.
pub fn mert(lists: &[Vec<Candidate>], initial: &[f64], cfg: &MertConfig) -> Result<MertResult> {
    if lists.iter().flatten().any(|c| c.features.len() != initial.len()) {
        return Err(Error::Contract("candidate feature count differs from the weight count".into()));
    }
    let initial_f05 = corpus_f05(lists, initial);
    if lists.iter().all(|l| l.len() <= 1) {
        log::warn!("every n-best list has at most one entry; keeping the initial weights");
        return Ok(MertResult {
            weights: initial.to_vec(),
            f05: initial_f05,
            initial_f05,
            trace: vec![initial_f05],
        });
    }
    let mut rng = SeededRng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    let (mut best_w, mut best_f) = optimize_from(lists, initial.to_vec(), cfg, &mut rng, &mut trace);
    for _ in 0..cfg.restarts {
        let start: Vec<f64> = initial
            .iter()
            .enumerate()
            .map(|(i, &v)| if cfg.frozen.contains(&i) { v } else { rng.gen_range(-1.0..1.0) })
            .collect();
        let (w, f) = optimize_from(lists, start, cfg, &mut rng, &mut trace);
        if f > best_f {
            best_w = w;
            best_f = f;
        }
    }
    Ok(MertResult {
        weights: best_w,
        f05: best_f,
        initial_f05,
        trace,
    })
}

/// Sentence-keyed grouping of features into dense candidates.
pub fn to_candidates(
    lists: &[Vec<ScoredHypothesis>],
    names: &[String],
    stats: impl Fn(usize, &ScoredHypothesis) -> SentenceStats,
) -> Result<Vec<Vec<Candidate>>> {
    lists
        .iter()
        .enumerate()
        .map(|(sid, list)| {
            list.iter()
                .enumerate()
                .map(|(r, h)| {
                    Ok(Candidate {
                        features: h.project(names, sid, r)?,
                        stats: stats(sid, h),
                    })
                })
                .collect()
        })
        .collect()
}

/// Feature names shared by every hypothesis, in first-seen order.
pub fn feature_names(lists: &[Vec<ScoredHypothesis>]) -> Vec<String> {
    let mut seen = BTreeMap::new();
    for h in lists.iter().flatten() {
        for (k, _) in &h.features {
            let n = seen.len();
            seen.entry(k.clone()).or_insert(n);
        }
    }
    let mut v: Vec<(String, usize)> = seen.into_iter().collect();
    v.sort_by_key(|e| e.1);
    v.into_iter().map(|e| e.0).collect()
}
