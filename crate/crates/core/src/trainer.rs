//! Mini-batch training with simplified Nesterov momentum, gradient clipping,
//! learning-rate annealing and early stopping on dev F0.5.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::decoder::{decode_sentence, BeamConfig};
use crate::error::{Error, Result};
use crate::gecmetrics::{m2_score, M2Sentence, ScoreReport};
use crate::mlconv::{batch_loss, forward_nll, step_rng, Mode, ModelParams, Weights};
use crate::numcore::Array;
use crate::textprep::{desegment, Vocabulary};
use crate::SeededRng;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub anneal_factor: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Global gradient-norm threshold.
    pub clip: f64,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Beam width for the per-epoch dev decode.
    pub dev_beam: usize,
    /// Worker threads for per-pair gradients; results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.25,
            anneal_factor: 0.1,
            momentum: 0.99,
            batch_size: 32,
            clip: 0.1,
            patience: 3,
            max_epochs: 100,
            seed: 1,
            dev_beam: 1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("learning rate must be positive");
        }
        if !(self.anneal_factor > 0.0 && self.anneal_factor < 1.0) {
            return bad("anneal factor must be in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.clip > 0.0) {
            return bad("clip threshold must be positive");
        }
        if self.dev_beam == 0 {
            return bad("dev beam must be at least 1");
        }
        Ok(())
    }
}

/// `v ← μv − lr·g;  θ ← θ + μv − lr·g`, element-wise.
pub fn nag_update(theta: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, mu: f64) {
    for ((t, v), &g) in theta.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = mu * *v - lr * g;
        *t = *t + mu * *v - lr * g;
    }
}

/// Applies one update to every array. Nothing is modified when any gradient
/// is non-finite; the error names the offending parameter.
pub fn nag_step(
    params: &mut Weights<Array>,
    grads: &Weights<Array>,
    velocity: &mut [Array],
    lr: f64,
    mu: f64,
) -> Result<()> {
    let mut bad = None;
    grads.for_each(|name, g| {
        if bad.is_none() && !g.is_finite() {
            bad = Some(name.to_string());
        }
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let g = grads.arrays();
    if g.len() != velocity.len() {
        return Err(Error::Contract("velocity does not mirror the parameters".into()));
    }
    let mut i = 0;
    let mut shape_err = None;
    params.for_each_mut(|name, theta| {
        if theta.shape() != g[i].shape() || theta.shape() != velocity[i].shape() {
            if shape_err.is_none() {
                shape_err = Some(format!("{name}: {:?} vs {:?}", theta.shape(), g[i].shape()));
            }
        } else {
            nag_update(theta.data_mut(), velocity[i].data_mut(), g[i].data(), lr, mu);
        }
        i += 1;
    });
    match shape_err {
        Some(m) => Err(Error::Contract(format!("gradient shape mismatch for {m}"))),
        None => Ok(()),
    }
}

fn clip_factor(norm: f64, threshold: f64) -> Option<f64> {
    (norm > threshold).then(|| threshold / norm)
}

/// Scales the arrays so their joint L2 norm is at most `threshold`.
/// Returns the norm before clipping.
pub fn clip_arrays(grads: &mut [Array], threshold: f64) -> f64 {
    let norm = grads.iter().map(|g| g.sq_norm()).sum::<f64>().sqrt();
    if let Some(c) = clip_factor(norm, threshold) {
        grads.iter_mut().for_each(|g| g.scale_in_place(c));
    }
    norm
}

/// [`clip_arrays`] over every model gradient.
pub fn clip_gradients(grads: &mut Weights<Array>, threshold: f64) -> f64 {
    let mut sq = 0.0;
    grads.for_each(|_, g| sq += g.sq_norm());
    let norm = sq.sqrt();
    if let Some(c) = clip_factor(norm, threshold) {
        grads.for_each_mut(|_, g| g.scale_in_place(c));
    }
    norm
}

/// Token-id pairs: sources and references both end with EOS.
pub type IdPair = (Vec<usize>, Vec<usize>);

/// Held-out data scored after every epoch.
pub struct DevSet<'a> {
    pub sources: &'a [Vec<usize>],
    pub gold: &'a [M2Sentence],
    pub tgt_vocab: &'a Vocabulary,
    /// Reference ids (ending with EOS) for the dev loss; may be empty.
    pub references: &'a [Vec<usize>],
}

/// Decodes `sources` and joins subwords back into words.
pub fn decode_words(
    models: &[&ModelParams],
    sources: &[Vec<usize>],
    tgt_vocab: &Vocabulary,
    beam: &BeamConfig,
) -> Result<Vec<Vec<String>>> {
    sources
        .iter()
        .map(|s| {
            let nb = decode_sentence(models, s, beam)?;
            let best = nb.best().map(|h| h.content().to_vec()).unwrap_or_default();
            Ok(desegment(&tgt_vocab.decode(&best)))
        })
        .collect()
}

/// Dev-set precision, recall and F0.5 for `params`.
pub fn evaluate_dev(params: &ModelParams, dev: &DevSet<'_>, beam: usize) -> Result<ScoreReport> {
    if dev.sources.len() != dev.gold.len() {
        return Err(Error::Alignment {
            source_lines: dev.sources.len(),
            target_lines: dev.gold.len(),
        });
    }
    let hyps = decode_words(&[params], dev.sources, dev.tgt_vocab, &BeamConfig::new(beam))?;
    m2_score(dev.gold, &hyps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub nll: f64,
    pub dev: ScoreReport,
    /// Teacher-forced dev loss, when references are available.
    pub dev_nll: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
    /// The best checkpoint was replaced by this epoch's parameters.
    pub new_best: bool,
    /// Dev F0.5 or dev loss reached a new best; otherwise the rate anneals.
    pub progress: bool,
    /// Best dev F0.5 so far, this epoch included.
    pub best_f05: f64,
    /// Learning rate for the next epoch.
    pub next_lr: f64,
}

impl EpochReport {
    pub fn to_log_line(&self) -> String {
        format!(
            "epoch={} nll={:.6} dev_nll={} dev_p={:.4} dev_r={:.4} dev_f05={:.4} best_f05={:.4} lr={:e} next_lr={:e} new_best={} progress={} time_s={:.2}",
            self.epoch,
            self.nll,
            self.dev_nll.map_or("na".to_string(), |v| format!("{v:.6}")),
            self.dev.precision,
            self.dev.recall,
            self.dev.f05,
            self.best_f05,
            self.lr,
            self.next_lr,
            self.new_best,
            self.progress,
            self.seconds
        )
    }
}

/// Checkpoint selection: higher dev F0.5 wins, a lower dev loss breaks ties.
pub fn is_better_checkpoint(f05: f64, dev_nll: Option<f64>, best_f05: Option<f64>, best_nll: Option<f64>) -> bool {
    match best_f05 {
        None => true,
        Some(b) if f05 > b => true,
        Some(b) if f05 == b => matches!((dev_nll, best_nll), (Some(n), Some(bn)) if n < bn),
        _ => false,
    }
}

/// Mutable optimizer state.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub velocity: Vec<Array>,
    pub lr: f64,
    pub best_f05: Option<f64>,
    /// Dev loss of the best checkpoint.
    pub best_dev_nll: Option<f64>,
    /// Lowest dev loss seen in any epoch.
    pub lowest_dev_nll: Option<f64>,
    pub best_epoch: usize,
    pub since_progress: usize,
}

impl TrainState {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            epoch: 0,
            step: 0,
            velocity: params.weights.arrays().into_iter().map(|a| Array::zeros(a.shape())).collect(),
            lr,
            best_f05: None,
            best_dev_nll: None,
            lowest_dev_nll: None,
            best_epoch: 0,
            since_progress: 0,
        }
    }
}

pub struct TrainOutcome {
    pub best: ModelParams,
    pub best_f05: f64,
    pub epochs: Vec<EpochReport>,
    /// Training pairs dropped for exceeding the position limit.
    pub dropped: usize,
}

/// Shuffles, then groups pairs of similar length; batch order is shuffled too.
pub fn make_batches(pairs: &[IdPair], batch_size: usize, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| pairs[i].0.len().max(pairs[i].1.len()));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    batches.shuffle(rng);
    batches
}

/// Mean loss and summed-then-averaged gradients of one batch.
fn batch_gradients(
    params: &ModelParams,
    pairs: &[IdPair],
    batch: &[usize],
    seed: u64,
    step: u64,
    threads: usize,
) -> Result<(f64, Weights<Array>)> {
    let run = |j: usize| -> Result<(f64, Weights<Array>)> {
        let (s, t) = &pairs[batch[j]];
        let mut rng = step_rng(seed, (step << 20) + j as u64);
        let r = forward_nll(params, s, t, Mode::Training(&mut rng), true)?;
        if !r.loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        Ok((r.loss, r.grads.expect("gradients requested")))
    };
    let results: Vec<Result<(f64, Weights<Array>)>> = if threads <= 1 || batch.len() == 1 {
        (0..batch.len()).map(run).collect()
    } else {
        let mut slots: Vec<Option<Result<(f64, Weights<Array>)>>> = (0..batch.len()).map(|_| None).collect();
        let chunk = batch.len().div_ceil(threads);
        std::thread::scope(|scope| {
            for (c, out) in slots.chunks_mut(chunk).enumerate() {
                let run = &run;
                scope.spawn(move || {
                    for (k, slot) in out.iter_mut().enumerate() {
                        *slot = Some(run(c * chunk + k));
                    }
                });
            }
        });
        slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
    };
    // reduce in batch order so thread count never changes the sums
    let mut total = 0.0;
    let mut acc = params.zeros_like();
    for r in results {
        let (loss, g) = r?;
        total += loss;
        let ga = g.arrays();
        let mut i = 0;
        acc.for_each_mut(|_, a| {
            a.add_assign(ga[i]);
            i += 1;
        });
    }
    let inv = 1.0 / batch.len() as f64;
    acc.for_each_mut(|_, a| a.scale_in_place(inv));
    Ok((total * inv, acc))
}

/// Trains `params` in place and returns the best parameters by dev F0.5.
/// `on_epoch` sees every epoch report as soon as it is available.
pub fn train(
    params: &mut ModelParams,
    pairs: &[IdPair],
    dev: &DevSet<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport, &ModelParams),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let limit = params.config.max_positions;
    let kept: Vec<IdPair> = pairs
        .iter()
        .filter(|(s, t)| !s.is_empty() && !t.is_empty() && s.len() <= limit && t.len() <= limit)
        .cloned()
        .collect();
    let dropped = pairs.len() - kept.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} training pairs longer than {limit} positions");
    }
    if kept.is_empty() {
        return Err(Error::EmptyInput("training corpus"));
    }

    let mut state = TrainState::new(params, cfg.lr);
    let mut best = params.clone();
    let mut epochs = Vec::new();
    while state.epoch < cfg.max_epochs {
        state.epoch += 1;
        let start = Instant::now();
        let mut rng = SeededRng::seed_from_u64(cfg.seed.wrapping_add(state.epoch as u64));
        let mut total = 0.0;
        for batch in make_batches(&kept, cfg.batch_size, &mut rng) {
            state.step += 1;
            let (loss, mut grads) = batch_gradients(params, &kept, &batch, cfg.seed, state.step, cfg.threads)?;
            total += loss * batch.len() as f64;
            clip_gradients(&mut grads, cfg.clip);
            nag_step(&mut params.weights, &grads, &mut state.velocity, state.lr, cfg.momentum)?;
        }
        let nll = total / kept.len() as f64;

        let report = evaluate_dev(params, dev, cfg.dev_beam)?;
        let dev_nll = if dev.references.is_empty() {
            None
        } else {
            let pairs: Vec<IdPair> = dev.sources.iter().cloned().zip(dev.references.iter().cloned()).collect();
            Some(batch_loss(params, &pairs)?)
        };
        let lr = state.lr;
        let f05_up = state.best_f05.is_none_or(|b| report.f05 > b);
        let nll_down = match (dev_nll, state.lowest_dev_nll) {
            (Some(n), Some(low)) => n < low,
            (Some(_), None) => true,
            _ => false,
        };
        let new_best = is_better_checkpoint(report.f05, dev_nll, state.best_f05, state.best_dev_nll);
        if new_best {
            state.best_f05 = Some(report.f05);
            state.best_dev_nll = dev_nll;
            state.best_epoch = state.epoch;
            best = params.clone();
        }
        if nll_down {
            state.lowest_dev_nll = dev_nll;
        }
        let progress = f05_up || nll_down;
        if progress {
            state.since_progress = 0;
        } else {
            state.since_progress += 1;
            state.lr *= cfg.anneal_factor;
            log::info!("no dev progress in epoch {}: annealing lr to {:e}", state.epoch, state.lr);
        }
        let epoch = EpochReport {
            epoch: state.epoch,
            nll,
            dev: report,
            dev_nll,
            lr,
            seconds: start.elapsed().as_secs_f64(),
            new_best,
            progress,
            best_f05: state.best_f05.unwrap_or(0.0),
            next_lr: state.lr,
        };
        log::info!("{}", epoch.to_log_line());
        on_epoch(&epoch, params);
        epochs.push(epoch);
        if state.since_progress > cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        best_f05: state.best_f05.unwrap_or(0.0),
        epochs,
        dropped,
    })
}
