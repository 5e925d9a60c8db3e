//! Toy step scorers and brute-force decoding references.

use mlconv_gec::decoder::{beam_search, decode_sentence, greedy_search, BeamConfig, StepScorer};
use mlconv_gec::numcore::log_softmax_slice;
use mlconv_gec::textprep::{BOS_ID, EOS_ID};
use mlconv_gec::{Result, SeededRng};
use rand::{Rng, SeedableRng};

use super::{random_params, random_tokens, tiny_config};

/// Context-dependent toy distributions derived from a hash of the prefix.
pub struct Toy {
    pub seed: u64,
    pub vocab: usize,
    pub banned: Vec<usize>,
}

impl StepScorer for Toy {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let key = prefix.iter().fold(self.seed, |h, &t| {
            h.wrapping_mul(6364136223846793005).wrapping_add(t as u64 + 1)
        });
        let mut rng = SeededRng::seed_from_u64(key);
        let mut v: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
        for &b in &self.banned {
            v[b] = f64::NEG_INFINITY;
        }
        log_softmax_slice(&mut v);
        Ok(v)
    }
}

pub fn cfg(beam: usize, max_len: usize) -> BeamConfig {
    BeamConfig {
        beam,
        max_len: Some(max_len),
        banned: vec![0, BOS_ID],
    }
}

/// All sequences of up to `max_len` tokens over the allowed ids that end
/// in EOS, scored by summed step log-probs, best first.
pub fn enumerate(model: &Toy, allowed: &[usize], max_len: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), 0.0)];
    while let Some((toks, score)) = stack.pop() {
        if toks.len() == max_len {
            continue;
        }
        let mut prefix = vec![BOS_ID];
        prefix.extend(&toks);
        let lp = model.log_probs(&prefix).unwrap();
        for &t in allowed {
            let mut next: Vec<usize> = toks.clone();
            next.push(t);
            let s = score + lp[t];
            if t == EOS_ID {
                out.push((next, s));
            } else {
                stack.push((next, s));
            }
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

/// Seeds where width-1 beam search and greedy search disagree.
pub fn beam_one_vs_greedy(models: u64) -> Vec<u64> {
    (0..models)
        .filter(|&seed| {
            let toy = [Toy { seed, vocab: 7, banned: vec![] }];
            let nb = beam_search(&toy, &cfg(1, 12), 12).unwrap();
            let g = greedy_search(&toy, &[0, BOS_ID], 12).unwrap();
            let b = nb.best().unwrap();
            b.tokens != g.tokens || b.model_score != g.model_score
        })
        .collect()
}

/// Seeds where the beam over {EOS, w} differs from exhaustive enumeration.
pub fn beam_vs_enumeration(models: u64) -> Vec<u64> {
    (0..models)
        .filter(|&seed| {
            let toy = Toy { seed, vocab: 4, banned: vec![0, BOS_ID] };
            let nb = beam_search(std::slice::from_ref(&toy), &cfg(2, 3), 3).unwrap();
            let all = enumerate(&toy, &[EOS_ID, 3], 3);
            nb.truncated
                || nb.hypotheses.len() != 2
                || nb
                    .hypotheses
                    .iter()
                    .zip(&all)
                    .any(|(h, (toks, score))| &h.tokens != toks || h.model_score != *score)
        })
        .collect()
}

/// Seeds where three copies of a model decode differently from one.
pub fn self_ensemble_mismatches(models: u64) -> Vec<u64> {
    (0..models)
        .filter(|&seed| {
            let p = random_params(tiny_config(9, 9, 4, 6, 2), seed, 0.7);
            let mut rng = SeededRng::seed_from_u64(seed);
            let src = random_tokens(&mut rng, 5, 9);
            let c = BeamConfig::new(4);
            decode_sentence(&[&p], &src, &c).unwrap() != decode_sentence(&[&p, &p, &p], &src, &c).unwrap()
        })
        .collect()
}
