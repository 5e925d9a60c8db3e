//! Corpus-level GLEU without reference sampling.

use std::collections::HashMap;

use crate::error::{Error, Result};

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

fn intersection_size(a: &HashMap<&[&str], usize>, b: &HashMap<&[&str], usize>) -> usize {
    a.iter()
        .map(|(g, &c)| b.get(g).map_or(0, |&d| c.min(d)))
        .sum()
}

/// Sufficient statistics: hypothesis length, reference length, then
/// (numerator, denominator) for each n-gram order.
fn sentence_stats(src: &[&str], hyp: &[&str], reference: &[&str], n_max: usize) -> Vec<f64> {
    let mut stats = vec![hyp.len() as f64, reference.len() as f64];
    for n in 1..=n_max {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        // source n-grams that never occur in the reference
        let s_only: HashMap<&[&str], usize> = ngram_counts(src, n)
            .into_iter()
            .filter(|(g, _)| !r.contains_key(g))
            .collect();
        let reward = intersection_size(&h, &r) as f64;
        let penalty = intersection_size(&h, &s_only) as f64;
        stats.push((reward - penalty).max(0.0));
        stats.push((hyp.len() + 1).saturating_sub(n) as f64);
    }
    stats
}

/// GLEU with n-gram orders `1..=n_max`. Statistics are summed over every
/// (sentence, reference) pair before the geometric mean and brevity penalty.
pub fn gleu<S: AsRef<str>>(
    sources: &[Vec<S>],
    hypotheses: &[Vec<S>],
    references: &[Vec<Vec<S>>],
    n_max: usize,
) -> Result<f64> {
    if sources.len() != hypotheses.len() || sources.len() != references.len() {
        return Err(Error::Contract(format!(
            "gleu needs aligned inputs: {} sources, {} hypotheses, {} reference sets",
            sources.len(),
            hypotheses.len(),
            references.len()
        )));
    }
    let mut totals = vec![0.0; 2 + 2 * n_max];
    for (i, ((src, hyp), refs)) in sources.iter().zip(hypotheses).zip(references).enumerate() {
        if refs.is_empty() {
            return Err(Error::Contract(format!("sentence {i} has no reference")));
        }
        let src: Vec<&str> = src.iter().map(AsRef::as_ref).collect();
        let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
        for r in refs {
            let r: Vec<&str> = r.iter().map(AsRef::as_ref).collect();
            for (t, s) in totals.iter_mut().zip(sentence_stats(&src, &hyp, &r, n_max)) {
                *t += s;
            }
        }
    }
    if totals.contains(&0.0) {
        return Ok(0.0);
    }
    let (c, r) = (totals[0], totals[1]);
    let log_prec: f64 = totals[2..]
        .chunks(2)
        .map(|p| (p[0] / p[1]).ln())
        .sum::<f64>()
        / n_max as f64;
    let bp = (1.0 - r / c).min(0.0);
    Ok((bp + log_prec).exp().clamp(0.0, 1.0))
}
