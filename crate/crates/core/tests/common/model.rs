//! Whole-model checks against the straight-line reference.

use mlconv_gec::mlconv::{decode_prefix, decode_step, encode};
use mlconv_gec::textprep::BOS_ID;
use mlconv_gec::SeededRng;
use rand::{Rng, SeedableRng};

use super::{max_abs_diff, random_params, random_tokens, reference_decode, reference_encode, tiny_config};

/// Largest deviation of encoder, attention and output distributions from
/// the reference over `draws` random parameter sets.
pub fn architecture_deviation(draws: u64) -> f64 {
    let mut rng = SeededRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for draw in 0..draws {
        let cfg = tiny_config(9, 8, 3, 4, 2);
        let p = random_params(cfg, 1000 + draw, 0.5);
        let len = rng.gen_range(1..7);
        let src = random_tokens(&mut rng, len, 9);
        let mut prefix = vec![BOS_ID];
        prefix.extend((0..rng.gen_range(0..5)).map(|_| rng.gen_range(2..8)));

        let enc = encode(&p, &src).unwrap();
        let (e, s) = reference_encode(&p, &src);
        worst = worst.max(max_abs_diff(&enc.encoded, &e));
        worst = worst.max(max_abs_diff(&enc.embedded, &s));

        let (logp, attn) = decode_prefix(&p, &enc, &prefix).unwrap();
        let (ref_logp, ref_attn) = reference_decode(&p, &e, &s, &prefix);
        worst = worst.max(max_abs_diff(&logp, &ref_logp));
        for (a, r) in attn.iter().zip(&ref_attn) {
            worst = worst.max(max_abs_diff(a, r));
        }
        let step = decode_step(&p, &enc, &prefix).unwrap();
        let last = ref_logp.last().unwrap();
        worst = worst.max(step.iter().zip(last).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    worst
}

/// Violations of decoder causality: mutating targets from position `n` on
/// must leave rows `< n` (outputs and attention) bit-identical and change row `n`.
pub fn causality_violations() -> Vec<String> {
    let mut cfg = tiny_config(20, 20, 4, 6, 3);
    cfg.max_positions = 64;
    let p = random_params(cfg, 21, 0.3);
    let mut rng = SeededRng::seed_from_u64(4);
    let src = random_tokens(&mut rng, 12, 20);
    let enc = encode(&p, &src).unwrap();
    let mut prefix = vec![BOS_ID];
    prefix.extend((0..59).map(|_| rng.gen_range(4..20)));
    let (base, base_attn) = decode_prefix(&p, &enc, &prefix).unwrap();
    let mut bad = Vec::new();
    for n in [1, 2, 7, 30, 59] {
        let mut mutated = prefix.clone();
        for t in &mut mutated[n..] {
            *t = 4 + (*t + 3) % 16;
        }
        let (lp, attn) = decode_prefix(&p, &enc, &mutated).unwrap();
        for row in 0..n {
            if lp.row(row) != base.row(row) || attn.iter().zip(&base_attn).any(|(a, b)| a.row(row) != b.row(row)) {
                bad.push(format!("row {row} changed when mutating from {n}"));
            }
        }
        if lp.row(n) == base.row(n) {
            bad.push(format!("row {n} ignored its own input"));
        }
    }
    bad
}

/// Violations of the encoder receptive field on a 60-token input with 7
/// width-3 layers: changes beyond ±7 are invisible, a change at ±7 is not.
pub fn receptive_field_violations() -> Vec<String> {
    let mut cfg = tiny_config(20, 20, 4, 6, 7);
    cfg.max_positions = 64;
    let p = random_params(cfg, 8, 0.3);
    let mut rng = SeededRng::seed_from_u64(9);
    let src = random_tokens(&mut rng, 60, 20);
    let base = encode(&p, &src).unwrap();
    let reach = cfg.layers; // one neighbour per side per layer
    let mut bad = Vec::new();
    for i in [0, 10, 29, 45, 59] {
        let mut far = src.clone();
        for (j, t) in far.iter_mut().enumerate() {
            if j.abs_diff(i) > reach {
                *t = 4 + (*t + 5) % 16;
            }
        }
        if encode(&p, &far).unwrap().encoded.row(i) != base.encoded.row(i) {
            bad.push(format!("position {i} sees beyond its window"));
        }
        let edge = if i + reach < 60 { i + reach } else { i - reach };
        let mut near = src.clone();
        near[edge] = 4 + (near[edge] + 5) % 16;
        if encode(&p, &near).unwrap().encoded.row(i) == base.encoded.row(i) {
            bad.push(format!("position {i} blind to {edge}"));
        }
    }
    bad
}
