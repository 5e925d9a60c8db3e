//! GEC evaluation: MaxMatch-style F0.5 over M2 annotations and GLEU.

pub mod align;
mod gleu;
mod m2;

use std::ops::Add;

pub use gleu::gleu;
pub use m2::{
    apply_edits, best_annotator_stats, extract_system_edits, m2_score, match_edits, parse_m2,
    sentence_stats, write_m2, EditAnnotation, M2Sentence,
};

/// `(1+β²)PR / (β²P + R)`, zero when both are zero.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / denom
    }
}

/// Edit-level counts for one sentence or a whole corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SentenceStats {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Add for SentenceStats {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl SentenceStats {
    pub fn report(self) -> ScoreReport {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        ScoreReport {
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            precision,
            recall,
            f05: f_beta(precision, recall, 0.5),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreReport {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f05: f64,
}

impl ScoreReport {
    /// `key=value` line for logs and scripts.
    pub fn to_kv(&self) -> String {
        format!(
            "tp={} fp={} fn={} precision={:.4} recall={:.4} f0.5={:.4}",
            self.tp, self.fp, self.fn_, self.precision, self.recall, self.f05
        )
    }
}
