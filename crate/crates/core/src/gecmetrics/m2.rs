//! M2 annotations, system edit extraction and MaxMatch-style scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::align::{align, EditOp};
use super::{ScoreReport, SentenceStats};
use crate::error::{Error, Result};

/// A span edit over source token offsets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditAnnotation {
    pub start: usize,
    pub end: usize,
    /// Space-joined replacement tokens; empty for deletions.
    pub replacement: String,
    pub kind: String,
    pub annotator: usize,
}

impl EditAnnotation {
    pub fn new(start: usize, end: usize, replacement: &str) -> Self {
        Self {
            start,
            end,
            replacement: replacement.to_string(),
            kind: String::new(),
            annotator: 0,
        }
    }

    pub fn is_insertion(&self) -> bool {
        self.start == self.end
    }

    /// Alternatives separated by `||` are accepted as equivalent.
    fn matches(&self, other: &EditAnnotation) -> bool {
        self.start == other.start
            && self.end == other.end
            && (self.replacement == other.replacement
                || self.replacement.split("||").any(|r| r == other.replacement)
                || other.replacement.split("||").any(|r| r == self.replacement))
    }
}

/// One `S` block of an M2 file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct M2Sentence {
    pub source: Vec<String>,
    /// Edits per annotator id. Annotators that only marked `noop` map to an
    /// empty list.
    pub annotators: BTreeMap<usize, Vec<EditAnnotation>>,
}

impl M2Sentence {
    pub fn new(source: Vec<String>) -> Self {
        Self {
            source,
            annotators: BTreeMap::new(),
        }
    }

    /// Annotator edit sets; a sentence without annotations has one empty set.
    pub fn gold_sets(&self) -> Vec<&[EditAnnotation]> {
        if self.annotators.is_empty() {
            vec![&[]]
        } else {
            self.annotators.values().map(Vec::as_slice).collect()
        }
    }

    /// Applies one annotator's edits to the source.
    pub fn corrected(&self, annotator: usize) -> Vec<String> {
        let edits = self.annotators.get(&annotator).cloned().unwrap_or_default();
        apply_edits(&self.source, &edits)
    }
}

/// Applies non-overlapping edits to `source` (first alternative of each).
pub fn apply_edits(source: &[String], edits: &[EditAnnotation]) -> Vec<String> {
    let mut sorted: Vec<&EditAnnotation> = edits.iter().collect();
    sorted.sort_by_key(|e| (e.start, e.end));
    let mut out = Vec::new();
    let mut pos = 0;
    for e in sorted {
        if e.start < pos {
            continue;
        }
        out.extend_from_slice(&source[pos..e.start]);
        let rep = e.replacement.split("||").next().unwrap_or("");
        out.extend(rep.split_whitespace().map(String::from));
        pos = e.end;
    }
    out.extend_from_slice(&source[pos.min(source.len())..]);
    out
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parses the CoNLL M2 format.
pub fn parse_m2(text: &str) -> Result<Vec<M2Sentence>> {
    let mut out: Vec<M2Sentence> = Vec::new();
    let mut current: Option<M2Sentence> = None;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(s) = current.take() {
                out.push(s);
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("S ").or_else(|| (line == "S").then_some("")) {
            if let Some(s) = current.take() {
                out.push(s);
            }
            current = Some(M2Sentence::new(
                rest.split_whitespace().map(String::from).collect(),
            ));
        } else if let Some(rest) = line.strip_prefix("A ") {
            let sent = current
                .as_mut()
                .ok_or_else(|| parse_err(lineno, "annotation before any S line"))?;
            let fields: Vec<&str> = rest.split("|||").collect();
            if fields.len() != 6 {
                return Err(parse_err(lineno, format!("expected 6 fields, got {}", fields.len())));
            }
            let mut span = fields[0].split_whitespace();
            let (Some(a), Some(b), None) = (span.next(), span.next(), span.next()) else {
                return Err(parse_err(lineno, "malformed span"));
            };
            let start: i64 = a.parse().map_err(|_| parse_err(lineno, "bad start offset"))?;
            let end: i64 = b.parse().map_err(|_| parse_err(lineno, "bad end offset"))?;
            let annotator: usize = fields[5]
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, "bad annotator id"))?;
            let kind = fields[1].to_string();
            let edits = sent.annotators.entry(annotator).or_default();
            if kind == "noop" || start < 0 {
                continue;
            }
            let (start, end) = (start as usize, end as usize);
            if start > end || end > sent.source.len() {
                return Err(parse_err(
                    lineno,
                    format!("span {start}..{end} outside source of {} tokens", sent.source.len()),
                ));
            }
            let replacement = match fields[2].trim() {
                "-NONE-" => String::new(),
                r => r.split_whitespace().collect::<Vec<_>>().join(" "),
            };
            edits.push(EditAnnotation {
                start,
                end,
                replacement,
                kind,
                annotator,
            });
        } else {
            return Err(parse_err(lineno, format!("unexpected line {line:?}")));
        }
    }
    if let Some(s) = current.take() {
        out.push(s);
    }
    Ok(out)
}

/// Serializes sentences back to M2 text.
pub fn write_m2(sentences: &[M2Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        let _ = writeln!(out, "S {}", s.source.join(" "));
        for (ann, edits) in &s.annotators {
            if edits.is_empty() {
                let _ = writeln!(out, "A -1 -1|||noop|||-NONE-|||REQUIRED|||-NONE-|||{ann}");
            }
            for e in edits {
                let kind = if e.kind.is_empty() { "UNK" } else { &e.kind };
                let _ = writeln!(
                    out,
                    "A {} {}|||{}|||{}|||REQUIRED|||-NONE-|||{}",
                    e.start, e.end, kind, e.replacement, ann
                );
            }
        }
        out.push('\n');
    }
    out
}

/// Span edits from the Levenshtein alignment, with adjacent non-match
/// operations merged into one edit.
pub fn extract_system_edits<S: AsRef<str> + PartialEq>(
    source: &[S],
    hypothesis: &[S],
) -> Vec<EditAnnotation> {
    let ops = align(source, hypothesis);
    let mut edits = Vec::new();
    let mut run: Option<(usize, usize, Vec<&str>)> = None;
    for op in ops {
        match op {
            EditOp::Match { .. } => {
                if let Some((start, end, rep)) = run.take() {
                    edits.push(EditAnnotation::new(start, end, &rep.join(" ")));
                }
            }
            EditOp::Substitute { src, tgt } => {
                let r = run.get_or_insert((src, src, Vec::new()));
                r.1 = src + 1;
                r.2.push(hypothesis[tgt].as_ref());
            }
            EditOp::Delete { src } => {
                let r = run.get_or_insert((src, src, Vec::new()));
                r.1 = src + 1;
            }
            EditOp::Insert { src, tgt } => {
                let r = run.get_or_insert((src, src, Vec::new()));
                r.2.push(hypothesis[tgt].as_ref());
            }
        }
    }
    if let Some((start, end, rep)) = run {
        edits.push(EditAnnotation::new(start, end, &rep.join(" ")));
    }
    edits
}

/// Counts for one system edit set against one gold set.
pub fn match_edits(system: &[EditAnnotation], gold: &[EditAnnotation]) -> SentenceStats {
    let mut used = vec![false; gold.len()];
    let mut tp = 0;
    for e in system {
        if let Some(k) = (0..gold.len()).find(|&k| !used[k] && gold[k].matches(e)) {
            used[k] = true;
            tp += 1;
        }
    }
    SentenceStats {
        tp,
        fp: system.len() - tp,
        fn_: gold.len() - tp,
    }
}

/// Best annotator for one sentence: highest sentence-level F0.5, then more
/// true positives, then fewer false negatives, then lowest annotator id.
pub fn best_annotator_stats(system: &[EditAnnotation], gold_sets: &[&[EditAnnotation]]) -> SentenceStats {
    let mut best: Option<(SentenceStats, f64)> = None;
    for gold in gold_sets {
        let st = match_edits(system, gold);
        let f = st.report().f05;
        let better = match &best {
            None => true,
            Some((b, bf)) => {
                f > *bf || (f == *bf && (st.tp > b.tp || (st.tp == b.tp && st.fn_ < b.fn_)))
            }
        };
        if better {
            best = Some((st, f));
        }
    }
    best.map(|b| b.0).unwrap_or_default()
}

/// Corpus-level precision, recall and F0.5 of hypotheses against M2 gold.
pub fn m2_score<S: AsRef<str>>(gold: &[M2Sentence], hypotheses: &[Vec<S>]) -> Result<ScoreReport> {
    if gold.len() != hypotheses.len() {
        return Err(Error::Contract(format!(
            "{} gold sentences but {} hypotheses",
            gold.len(),
            hypotheses.len()
        )));
    }
    let stats = gold
        .iter()
        .zip(hypotheses)
        .map(|(g, h)| sentence_stats(g, h))
        .fold(SentenceStats::default(), |a, b| a + b);
    Ok(stats.report())
}

pub fn sentence_stats<S: AsRef<str>>(gold: &M2Sentence, hypothesis: &[S]) -> SentenceStats {
    let hyp: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let src: Vec<&str> = gold.source.iter().map(String::as_str).collect();
    let system = extract_system_edits(&src, &hyp);
    best_annotator_stats(&system, &gold.gold_sets())
}
