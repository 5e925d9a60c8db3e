//! Left-to-right beam search with ensembling by probability averaging.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::mlconv::{decode_step, encode, EncoderOutput, ModelParams};
use crate::textprep::{BOS_ID, EOS_ID, PAD_ID};

/// Anything that yields next-token log-probabilities for a prefix that
/// starts with BOS.
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>>;
}

/// A model bound to one encoded source sentence.
pub struct EncodedModel<'a> {
    params: &'a ModelParams,
    enc: EncoderOutput,
}

impl<'a> EncodedModel<'a> {
    pub fn new(params: &'a ModelParams, source: &[usize]) -> Result<Self> {
        Ok(Self {
            params,
            enc: encode(params, source)?,
        })
    }
}

impl StepScorer for EncodedModel<'_> {
    fn vocab_size(&self) -> usize {
        self.params.config.tgt_vocab
    }

    fn log_probs(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        decode_step(self.params, &self.enc, prefix)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, without BOS; finished hypotheses end with EOS.
    pub tokens: Vec<usize>,
    /// Sum of the per-step log-probabilities.
    pub model_score: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Tokens with the trailing EOS removed.
    pub fn content(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&EOS_ID, rest)) if self.finished => rest,
            _ => &self.tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NBest {
    pub hypotheses: Vec<Hypothesis>,
    /// Set when nothing finished within the length limit; the list then holds
    /// the best unfinished hypotheses.
    pub truncated: bool,
}

impl NBest {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }
}

#[derive(Clone, Debug)]
pub struct BeamConfig {
    pub beam: usize,
    /// Limit on generated tokens (EOS included); `None` means `2m + 5`.
    pub max_len: Option<usize>,
    /// Tokens never generated.
    pub banned: Vec<usize>,
}

impl BeamConfig {
    pub fn new(beam: usize) -> Self {
        Self {
            beam,
            max_len: None,
            banned: vec![PAD_ID, BOS_ID],
        }
    }

    pub fn max_len_for(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or(2 * source_len + 5)
    }
}

/// `log((1/k) Σ exp(l_i))` per entry, computed stably. With one model, or
/// several identical ones, the input comes back bit for bit.
pub fn ensemble_logprobs(dists: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = dists.first().ok_or(Error::EmptyInput("ensemble_logprobs"))?;
    if dists.iter().any(|d| d.len() != first.len()) {
        return Err(Error::Contract(
            "ensemble members disagree on the target vocabulary".into(),
        ));
    }
    let ln_k = (dists.len() as f64).ln();
    Ok((0..first.len())
        .map(|v| {
            let m = dists.iter().map(|d| d[v]).fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return m;
            }
            let s: f64 = dists.iter().map(|d| (d[v] - m).exp()).sum();
            m + (s.ln() - ln_k)
        })
        .collect())
}

fn step_scores<S: StepScorer>(models: &[S], prefix: &[usize]) -> Result<Vec<f64>> {
    if models.len() == 1 {
        return models[0].log_probs(prefix);
    }
    let dists = models
        .iter()
        .map(|m| m.log_probs(prefix))
        .collect::<Result<Vec<_>>>()?;
    ensemble_logprobs(&dists)
}

fn check_models<S: StepScorer>(models: &[S]) -> Result<()> {
    let first = models.first().ok_or(Error::EmptyInput("ensemble"))?;
    if models.iter().any(|m| m.vocab_size() != first.vocab_size()) {
        return Err(Error::Contract(
            "ensemble members disagree on the target vocabulary".into(),
        ));
    }
    Ok(())
}

fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Beam search over `models` (one model or an ensemble). Returns up to
/// `beam` hypotheses, best first.
pub fn beam_search<S: StepScorer>(models: &[S], cfg: &BeamConfig, max_len: usize) -> Result<NBest> {
    check_models(models)?;
    if cfg.beam == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    let vocab = models[0].vocab_size();
    let mut banned = vec![false; vocab];
    for &t in &cfg.banned {
        if t < vocab {
            banned[t] = true;
        }
    }

    let mut active = vec![Hypothesis {
        tokens: Vec::new(),
        model_score: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut prefix = Vec::with_capacity(max_len + 1);

    for _ in 0..max_len {
        // (score, parent, step log-prob, token); parents are in rank order
        let mut cands: Vec<(f64, usize, f64, usize)> = Vec::with_capacity(active.len() * vocab);
        for (pi, hyp) in active.iter().enumerate() {
            prefix.clear();
            prefix.push(BOS_ID);
            prefix.extend_from_slice(&hyp.tokens);
            let lp = step_scores(models, &prefix)?;
            for (t, &l) in lp.iter().enumerate() {
                if !banned[t] && l > f64::NEG_INFINITY {
                    cands.push((hyp.model_score + l, pi, l, t));
                }
            }
        }
        // the step log-prob key keeps width 1 identical to argmax even when
        // adding the running score rounds two candidates to the same sum
        cands.sort_by(|a, b| {
            by_score_desc(a.0, b.0)
                .then(a.1.cmp(&b.1))
                .then(by_score_desc(a.2, b.2))
                .then(a.3.cmp(&b.3))
        });
        cands.truncate(cfg.beam);

        let mut next = Vec::with_capacity(cfg.beam);
        for (score, pi, _, t) in cands {
            let mut tokens = active[pi].tokens.clone();
            tokens.push(t);
            let hyp = Hypothesis {
                tokens,
                model_score: score,
                finished: t == EOS_ID,
            };
            if hyp.finished {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        active = next;
        finished.sort_by(|a, b| by_score_desc(a.model_score, b.model_score));
        finished.truncate(cfg.beam);

        // scores only fall as hypotheses grow, so once the beam's worth of
        // finished hypotheses all beat every active one nothing can change
        let Some(best_active) = active.first().map(|h| h.model_score) else {
            break;
        };
        if finished.len() >= cfg.beam && finished[cfg.beam - 1].model_score >= best_active {
            break;
        }
    }

    if finished.is_empty() {
        active.truncate(cfg.beam);
        return Ok(NBest {
            hypotheses: active,
            truncated: true,
        });
    }
    Ok(NBest {
        hypotheses: finished,
        truncated: false,
    })
}

/// Step-wise argmax decoding (lowest index wins ties).
pub fn greedy_search<S: StepScorer>(models: &[S], banned: &[usize], max_len: usize) -> Result<Hypothesis> {
    check_models(models)?;
    let mut prefix = vec![BOS_ID];
    let mut score = 0.0;
    for _ in 0..max_len {
        let lp = step_scores(models, &prefix)?;
        let mut best: Option<(usize, f64)> = None;
        for (t, &l) in lp.iter().enumerate() {
            if banned.contains(&t) || l == f64::NEG_INFINITY {
                continue;
            }
            if best.is_none_or(|(_, b)| l > b) {
                best = Some((t, l));
            }
        }
        let Some((t, l)) = best else { break };
        prefix.push(t);
        score += l;
        if t == EOS_ID {
            return Ok(Hypothesis {
                tokens: prefix[1..].to_vec(),
                model_score: score,
                finished: true,
            });
        }
    }
    Ok(Hypothesis {
        tokens: prefix[1..].to_vec(),
        model_score: score,
        finished: false,
    })
}

/// Encodes `source` with every model and runs beam search.
pub fn decode_sentence(models: &[&ModelParams], source: &[usize], cfg: &BeamConfig) -> Result<NBest> {
    let bound = models
        .iter()
        .map(|p| EncodedModel::new(p, source))
        .collect::<Result<Vec<_>>>()?;
    beam_search(&bound, cfg, cfg.max_len_for(source.len()))
}

/// `id ||| text ||| score`
pub fn format_nbest_line(id: usize, text: &str, score: f64) -> String {
    format!("{id} ||| {text} ||| {score}")
}

/// Splits an n-best line into its sentence id, text and trailing field.
pub fn split_nbest_line(line: &str, line_no: usize) -> Result<(usize, &str, &str)> {
    let parts: Vec<&str> = line.splitn(3, " ||| ").collect();
    if parts.len() != 3 {
        return Err(Error::Parse {
            line: line_no,
            msg: "expected `id ||| text ||| fields`".into(),
        });
    }
    let id = parts[0].trim().parse().map_err(|_| Error::Parse {
        line: line_no,
        msg: format!("bad sentence id {:?}", parts[0]),
    })?;
    Ok((id, parts[1], parts[2]))
}
