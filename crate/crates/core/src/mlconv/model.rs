use rand::SeedableRng;

use super::params::{ModelParams, Weights};
use crate::error::{Error, Result};
use crate::numcore::{Array, Tape, Var};
use crate::textprep::{BOS_ID, EOS_ID};
use crate::SeededRng;

/// Training mode applies dropout with the given generator; inference is
/// deterministic.
pub enum Mode<'a> {
    Inference,
    Training(&'a mut SeededRng),
}

/// Encoder outputs `e_i` and the source embeddings `s_i` kept for attention.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub encoded: Array,
    pub embedded: Array,
}

impl EncoderOutput {
    pub fn len(&self) -> usize {
        self.encoded.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tape handles for one decoder pass.
pub struct DecoderTrace {
    /// `[n, |V_t|]` log-probabilities; row `k` predicts target token `k + 1`.
    pub log_probs: Var,
    /// Attention weights `[n, m]` per decoder layer.
    pub attention: Vec<Var>,
}

fn dropout(tape: &mut Tape, x: Var, p: f64, mode: &mut Mode<'_>) -> Result<Var> {
    match mode {
        Mode::Inference => Ok(x),
        Mode::Training(rng) => tape.dropout(x, p, true, &mut **rng),
    }
}

/// Puts every parameter on the tape as a leaf.
pub fn bind(tape: &mut Tape, params: &ModelParams) -> Weights<Var> {
    params.weights.map(|_, a| tape.leaf(a.clone()))
}

fn check_length(len: usize, params: &ModelParams, what: &str) -> Result<()> {
    if len == 0 {
        return Err(Error::Length(format!("empty {what}")));
    }
    if len > params.config.max_positions {
        return Err(Error::Length(format!(
            "{what} of {len} tokens exceeds max positions {}",
            params.config.max_positions
        )));
    }
    Ok(())
}

/// `w(token_i) + p(i)` for each position, followed by dropout.
pub fn embed_on(
    tape: &mut Tape,
    words: Var,
    positions: Var,
    tokens: &[usize],
    dropout_p: f64,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let w = tape.gather(words, tokens)?;
    let pos: Vec<usize> = (0..tokens.len()).collect();
    let p = tape.gather(positions, &pos)?;
    let s = tape.add(w, p)?;
    dropout(tape, s, dropout_p, mode)
}

/// Encoder on a tape; returns `(e, s)` handles, both `[m, d]`.
pub fn encode_on(
    tape: &mut Tape,
    w: &Weights<Var>,
    params: &ModelParams,
    source: &[usize],
    mode: &mut Mode<'_>,
) -> Result<(Var, Var)> {
    check_length(source.len(), params, "source")?;
    let p = params.config.dropout;
    let s = embed_on(tape, w.src_embed, w.src_pos, source, p, mode)?;
    let mut h = tape.linear(s, w.enc_in_w, Some(w.enc_in_b))?;
    for layer in &w.enc_layers {
        let x = dropout(tape, h, p, mode)?;
        let padded = tape.pad_rows(x, 1, 1)?;
        let f = tape.conv1d(padded, layer.conv_w, Some(layer.conv_b))?;
        let y = tape.glu(f)?;
        h = tape.add(y, h)?;
    }
    let e = tape.linear(h, w.enc_out_w, Some(w.enc_out_b))?;
    Ok((e, s))
}

/// Decoder on a tape over `inputs = [BOS, t_1, ..., t_{n-1}]`.
pub fn decode_on(
    tape: &mut Tape,
    w: &Weights<Var>,
    params: &ModelParams,
    encoded: Var,
    embedded: Var,
    inputs: &[usize],
    mode: &mut Mode<'_>,
) -> Result<DecoderTrace> {
    if inputs.first() != Some(&BOS_ID) {
        return Err(Error::Contract(
            "decoder prefix must start with the beginning-of-sentence marker".into(),
        ));
    }
    check_length(inputs.len(), params, "target prefix")?;
    let p = params.config.dropout;
    let t = embed_on(tape, w.tgt_embed, w.tgt_pos, inputs, p, mode)?;
    let attend_to = tape.add(encoded, embedded)?;
    let mut g = tape.linear(t, w.dec_in_w, Some(w.dec_in_b))?;
    let mut attention = Vec::with_capacity(w.dec_layers.len());
    for layer in &w.dec_layers {
        let x = dropout(tape, g, p, mode)?;
        // two zero rows on the left: the state for step j sees inputs j-2..j
        let padded = tape.pad_rows(x, 2, 0)?;
        let f = tape.conv1d(padded, layer.conv_w, Some(layer.conv_b))?;
        let y = tape.glu(f)?;
        let zq = tape.linear(y, layer.att_w, Some(layer.att_b))?;
        let z = tape.add(zq, t)?;
        let scores = tape.matmul_nt(z, encoded)?;
        let alpha = tape.softmax(scores);
        attention.push(alpha);
        let ctx = tape.matmul(alpha, attend_to)?;
        let c = tape.linear(ctx, layer.ctx_w, Some(layer.ctx_b))?;
        let yc = tape.add(y, c)?;
        g = tape.add(yc, g)?;
    }
    let d = tape.linear(g, w.dec_out_w, Some(w.dec_out_b))?;
    let d = dropout(tape, d, p, mode)?;
    let o = tape.linear(d, w.out_w, Some(w.out_b))?;
    Ok(DecoderTrace {
        log_probs: tape.log_softmax(o),
        attention,
    })
}

/// Source embedding rows `w(s_i) + p(i)` in inference mode.
pub fn embed(params: &ModelParams, tokens: &[usize], target_side: bool) -> Result<Array> {
    check_length(tokens.len(), params, "sequence")?;
    let mut tape = Tape::new();
    let (words, pos) = if target_side {
        (&params.weights.tgt_embed, &params.weights.tgt_pos)
    } else {
        (&params.weights.src_embed, &params.weights.src_pos)
    };
    let words = tape.leaf(words.clone());
    let pos = tape.leaf(pos.clone());
    let out = embed_on(&mut tape, words, pos, tokens, 0.0, &mut Mode::Inference)?;
    Ok(tape.value(out).clone())
}

/// Runs the encoder in inference mode.
pub fn encode(params: &ModelParams, source: &[usize]) -> Result<EncoderOutput> {
    let mut tape = Tape::new();
    let w = bind(&mut tape, params);
    let (e, s) = encode_on(&mut tape, &w, params, source, &mut Mode::Inference)?;
    Ok(EncoderOutput {
        encoded: tape.value(e).clone(),
        embedded: tape.value(s).clone(),
    })
}

/// Next-token log-probabilities after `prefix` (which starts with BOS).
pub fn decode_step(params: &ModelParams, enc: &EncoderOutput, prefix: &[usize]) -> Result<Vec<f64>> {
    let (logp, _) = decode_prefix(params, enc, prefix)?;
    let last = logp.rows() - 1;
    Ok(logp.row(last).to_vec())
}

/// All decoder rows for `prefix` plus the per-layer attention matrices.
pub fn decode_prefix(
    params: &ModelParams,
    enc: &EncoderOutput,
    prefix: &[usize],
) -> Result<(Array, Vec<Array>)> {
    let mut tape = Tape::new();
    let w = bind(&mut tape, params);
    let e = tape.leaf(enc.encoded.clone());
    let s = tape.leaf(enc.embedded.clone());
    let trace = decode_on(&mut tape, &w, params, e, s, prefix, &mut Mode::Inference)?;
    let attn = trace
        .attention
        .iter()
        .map(|&a| tape.value(a).clone())
        .collect();
    Ok((tape.value(trace.log_probs).clone(), attn))
}

/// Teacher-forced loss for one pair.
pub struct PairLoss {
    /// `-(1/T) Σ log p(t_j | t_<j, S)`.
    pub loss: f64,
    /// Log-probability of each reference token.
    pub token_log_probs: Vec<f64>,
    pub grads: Option<Weights<Array>>,
}

/// Builds the loss graph for one pair and returns the tape with handles.
pub fn nll_graph(
    tape: &mut Tape,
    w: &Weights<Var>,
    params: &ModelParams,
    source: &[usize],
    reference: &[usize],
    mode: &mut Mode<'_>,
) -> Result<(Var, Var)> {
    if reference.is_empty() {
        return Err(Error::Length("empty reference".into()));
    }
    if reference.last() != Some(&EOS_ID) {
        return Err(Error::Contract(
            "reference must end with the end-of-sentence marker".into(),
        ));
    }
    let (e, s) = encode_on(tape, w, params, source, mode)?;
    let mut inputs = Vec::with_capacity(reference.len());
    inputs.push(BOS_ID);
    inputs.extend_from_slice(&reference[..reference.len() - 1]);
    let trace = decode_on(tape, w, params, e, s, &inputs, mode)?;
    let loss = tape.nll_mean(trace.log_probs, reference)?;
    Ok((loss, trace.log_probs))
}

/// Loss, per-token log-probabilities and (optionally) gradients for one pair.
pub fn forward_nll(
    params: &ModelParams,
    source: &[usize],
    reference: &[usize],
    mut mode: Mode<'_>,
    with_grads: bool,
) -> Result<PairLoss> {
    let mut tape = Tape::new();
    let w = bind(&mut tape, params);
    let (loss, logp) = nll_graph(&mut tape, &w, params, source, reference, &mut mode)?;
    let lp = tape.value(logp);
    let token_log_probs = reference
        .iter()
        .enumerate()
        .map(|(j, &t)| lp.row(j)[t])
        .collect();
    let loss_value = tape.value(loss).data()[0];
    let grads = if with_grads {
        let mut g = tape.backward(loss)?;
        let mut out = w.map(|_, &v| g.take(v).unwrap_or_else(|| Array::zeros(tape.value(v).shape())));
        // padding rows never train
        out.src_embed.row_mut(crate::textprep::PAD_ID).fill(0.0);
        out.tgt_embed.row_mut(crate::textprep::PAD_ID).fill(0.0);
        Some(out)
    } else {
        None
    };
    Ok(PairLoss {
        loss: loss_value,
        token_log_probs,
        grads,
    })
}

/// Mean loss over pairs in inference mode.
pub fn batch_loss(params: &ModelParams, pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("batch_loss"));
    }
    let mut total = 0.0;
    for (s, t) in pairs {
        total += forward_nll(params, s, t, Mode::Inference, false)?.loss;
    }
    Ok(total / pairs.len() as f64)
}

/// Seeded generator for a training step.
pub fn step_rng(seed: u64, step: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
