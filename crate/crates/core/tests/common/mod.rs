#![allow(dead_code)]

pub mod mert;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod toy;

use mlconv_gec::mlconv::{ModelConfig, ModelParams};
use mlconv_gec::numcore::Array;
use mlconv_gec::SeededRng;
use rand::{Rng, SeedableRng};

pub fn tiny_config(src_vocab: usize, tgt_vocab: usize, d: usize, h: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: d,
        hidden_dim: h,
        layers,
        src_vocab,
        tgt_vocab,
        max_positions: 128,
        dropout: 0.0,
    }
}

/// Parameters with every array (biases included) drawn at a useful scale.
pub fn random_params(cfg: ModelConfig, seed: u64, scale: f64) -> ModelParams {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut p = ModelParams::zeros(cfg).unwrap();
    p.weights.for_each_mut(|_, a| {
        for v in a.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    });
    p
}

pub fn random_tokens(rng: &mut SeededRng, len: usize, vocab: usize) -> Vec<usize> {
    // skip reserved ids 0..4 except the final end marker
    let mut t: Vec<usize> = (0..len - 1).map(|_| rng.gen_range(4..vocab)).collect();
    t.push(2);
    t
}

type Mat = Vec<Vec<f64>>;

fn rows(a: &Array) -> Mat {
    (0..a.rows()).map(|r| a.row(r).to_vec()).collect()
}

fn affine(w: &Array, b: &Array, x: &[f64]) -> Vec<f64> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    (0..out)
        .map(|o| (0..inp).map(|k| w.get(&[o, k]) * x[k]).sum::<f64>() + b.data()[o])
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Convolution for position `i` over rows `i + offset .. i + offset + 3`,
/// reading zeros outside `0..len`, followed by the gated linear unit.
fn conv_glu(w: &Array, b: &Array, input: &Mat, i: usize, offset: isize) -> Vec<f64> {
    let out2 = w.shape()[0];
    let h = w.shape()[2];
    let mut f = vec![0.0; out2];
    for (o, fo) in f.iter_mut().enumerate() {
        let mut acc = b.data()[o];
        for tap in 0..3 {
            let src = i as isize + offset + tap as isize;
            if src < 0 || src as usize >= input.len() {
                continue;
            }
            for c in 0..h {
                acc += w.get(&[o, tap, c]) * input[src as usize][c];
            }
        }
        *fo = acc;
    }
    let half = out2 / 2;
    (0..half).map(|k| f[k] * sigmoid(f[half + k])).collect()
}

/// Straight-line encoder: returns (e, s).
pub fn reference_encode(p: &ModelParams, src: &[usize]) -> (Mat, Mat) {
    let w = &p.weights;
    let s: Mat = src
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            (0..p.config.embed_dim)
                .map(|k| w.src_embed.get(&[t, k]) + w.src_pos.get(&[i, k]))
                .collect()
        })
        .collect();
    let mut h: Mat = s.iter().map(|si| affine(&w.enc_in_w, &w.enc_in_b, si)).collect();
    for layer in &w.enc_layers {
        let next: Mat = (0..h.len())
            .map(|i| {
                let g = conv_glu(&layer.conv_w, &layer.conv_b, &h, i, -1);
                g.iter().zip(&h[i]).map(|(a, b)| a + b).collect()
            })
            .collect();
        h = next;
    }
    let e = h.iter().map(|hi| affine(&w.enc_out_w, &w.enc_out_b, hi)).collect();
    (e, s)
}

/// Straight-line decoder: log-probabilities for every prefix position, and
/// attention weights per layer.
pub fn reference_decode(p: &ModelParams, e: &Mat, s: &Mat, inputs: &[usize]) -> (Mat, Vec<Mat>) {
    let w = &p.weights;
    let d = p.config.embed_dim;
    let t: Mat = inputs
        .iter()
        .enumerate()
        .map(|(j, &tok)| (0..d).map(|k| w.tgt_embed.get(&[tok, k]) + w.tgt_pos.get(&[j, k])).collect())
        .collect();
    let mut g: Mat = t.iter().map(|tj| affine(&w.dec_in_w, &w.dec_in_b, tj)).collect();
    let mut attn_all = Vec::new();
    for layer in &w.dec_layers {
        let mut next = Vec::new();
        let mut attn = Vec::new();
        for n in 0..g.len() {
            let y = conv_glu(&layer.conv_w, &layer.conv_b, &g, n, -2);
            let z: Vec<f64> = affine(&layer.att_w, &layer.att_b, &y)
                .iter()
                .zip(&t[n])
                .map(|(a, b)| a + b)
                .collect();
            let scores: Vec<f64> = e.iter().map(|ei| ei.iter().zip(&z).map(|(a, b)| a * b).sum()).collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = scores.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = ex.iter().sum();
            let alpha: Vec<f64> = ex.iter().map(|v| v / total).collect();
            let mut x = vec![0.0; d];
            for (i, a) in alpha.iter().enumerate() {
                for k in 0..d {
                    x[k] += a * (e[i][k] + s[i][k]);
                }
            }
            let c = affine(&layer.ctx_w, &layer.ctx_b, &x);
            next.push((0..y.len()).map(|k| y[k] + c[k] + g[n][k]).collect());
            attn.push(alpha);
        }
        g = next;
        attn_all.push(attn);
    }
    let logp = g
        .iter()
        .map(|gn| {
            let dn = affine(&w.dec_out_w, &w.dec_out_b, gn);
            let o = affine(&w.out_w, &w.out_b, &dn);
            let max = o.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + o.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            o.iter().map(|v| v - lse).collect()
        })
        .collect();
    (logp, attn_all)
}

pub fn max_abs_diff(a: &Array, b: &Mat) -> f64 {
    rows(a)
        .iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Largest relative error between backprop gradients of the pair loss and
/// central differences, over every parameter entry.
pub fn model_gradient_error(p: &ModelParams, src: &[usize], tgt: &[usize]) -> f64 {
    use mlconv_gec::mlconv::{forward_nll, Mode};
    use mlconv_gec::numcore::{relative_error, FD_STEP};
    use mlconv_gec::textprep::PAD_ID;

    let analytic = forward_nll(p, src, tgt, Mode::Inference, true)
        .unwrap()
        .grads
        .unwrap();
    let mut names = Vec::new();
    analytic.for_each(|n, a| names.push((n.to_string(), a.clone())));
    let mut worst: f64 = 0.0;
    for (name, grad) in names {
        let pad_table = name == "src_embed" || name == "tgt_embed";
        for k in 0..grad.len() {
            if pad_table && k / grad.shape()[1] == PAD_ID {
                continue;
            }
            let eval = |delta: f64| {
                let mut q = p.clone();
                q.weights.for_each_mut(|n, a| {
                    if n == name {
                        a.data_mut()[k] += delta;
                    }
                });
                forward_nll(&q, src, tgt, Mode::Inference, false).unwrap().loss
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grad.data()[k], numeric));
        }
    }
    worst
}

pub struct Overfit {
    pub final_nll: f64,
    pub exact: usize,
    pub total: usize,
    pub best_f05_trace: Vec<f64>,
    pub seconds: f64,
}

/// Trains the tiny configuration on the 50-pair synthetic corpus, using the
/// training pairs as the dev set.
pub fn overfit_run() -> Overfit {
    use mlconv_gec::decoder::BeamConfig;
    use mlconv_gec::mlconv::batch_loss;
    use mlconv_gec::synthetic::{synthetic_gold, synthetic_pairs};
    use mlconv_gec::textprep::Vocabulary;
    use mlconv_gec::trainer::{decode_words, train, DevSet, TrainConfig};

    let start = std::time::Instant::now();
    let pairs = synthetic_pairs(50, 11);
    let srcs: Vec<_> = pairs.iter().map(|p| p.0.clone()).collect();
    let tgts: Vec<_> = pairs.iter().map(|p| p.1.clone()).collect();
    let sv = Vocabulary::build(&srcs, 1000).unwrap();
    let tv = Vocabulary::build(&tgts, 1000).unwrap();
    let ids: Vec<_> = pairs
        .iter()
        .map(|(s, t)| (sv.encode_with_eos(s), tv.encode_with_eos(t)))
        .collect();
    let dev_src: Vec<_> = ids.iter().map(|p| p.0.clone()).collect();
    let dev_ref: Vec<_> = ids.iter().map(|p| p.1.clone()).collect();
    let gold = synthetic_gold(&pairs);
    let cfg = ModelConfig {
        embed_dim: 32,
        hidden_dim: 64,
        layers: 2,
        src_vocab: sv.len(),
        tgt_vocab: tv.len(),
        max_positions: 64,
        dropout: 0.0,
    };
    let mut rng = SeededRng::seed_from_u64(1);
    let mut p = ModelParams::init(cfg, &mut rng).unwrap();
    let tc = TrainConfig {
        max_epochs: 200,
        ..Default::default()
    };
    let dev = DevSet {
        sources: &dev_src,
        gold: &gold,
        tgt_vocab: &tv,
        references: &dev_ref,
    };
    let out = train(&mut p, &ids, &dev, &tc, |_, _| {}).unwrap();
    let hyps = decode_words(&[&out.best], &dev_src, &tv, &BeamConfig::new(1)).unwrap();
    Overfit {
        final_nll: batch_loss(&out.best, &ids).unwrap(),
        exact: hyps.iter().zip(&tgts).filter(|(h, t)| h == t).count(),
        total: tgts.len(),
        best_f05_trace: out.epochs.iter().map(|e| e.best_f05).collect(),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// `Σy² + Σy`: a scalar whose gradient touches every entry of `y`.
fn scalarize(t: &mut mlconv_gec::numcore::Tape, y: mlconv_gec::numcore::Var) -> mlconv_gec::Result<mlconv_gec::numcore::Var> {
    let q = t.sum_squares(y);
    let l = t.sum(y);
    t.add(q, l)
}

/// Largest finite-difference relative error for every differentiable
/// operation, each input checked separately.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    use mlconv_gec::numcore::check_gradients;

    let mut rng = SeededRng::seed_from_u64(seed);
    let mut u = |shape: &[usize]| Array::uniform(shape, -1.0, 1.0, &mut rng);
    let (x3, w, b, v) = (u(&[3, 4]), u(&[5, 4]), u(&[5]), u(&[4]));
    let (seq, filt, fb) = (u(&[6, 3]), u(&[4, 3, 3]), u(&[4]));
    let (a, bm, bt) = (u(&[3, 4]), u(&[4, 2]), u(&[2, 4]));
    let (table, wide) = (u(&[5, 3]), u(&[3, 6]));
    let logits = Array::uniform(&[4, 5], -3.0, 3.0, &mut rng);

    type F<'a> = Box<dyn Fn(&mut mlconv_gec::numcore::Tape, mlconv_gec::numcore::Var) -> mlconv_gec::Result<mlconv_gec::numcore::Var> + 'a>;
    let cases: Vec<(&'static str, F, &Array)> = vec![
        ("linear/x (matrix)", Box::new(|t, x| { let (w, b) = (t.leaf(w.clone()), t.leaf(b.clone())); let y = t.linear(x, w, Some(b))?; scalarize(t, y) }), &x3),
        ("linear/x (vector)", Box::new(|t, x| { let w = t.leaf(w.clone()); let y = t.linear(x, w, None)?; scalarize(t, y) }), &v),
        ("linear/W", Box::new(|t, w| { let (x, b) = (t.leaf(x3.clone()), t.leaf(b.clone())); let y = t.linear(x, w, Some(b))?; scalarize(t, y) }), &w),
        ("linear/b", Box::new(|t, b| { let (x, w) = (t.leaf(x3.clone()), t.leaf(w.clone())); let y = t.linear(x, w, Some(b))?; scalarize(t, y) }), &b),
        ("add", Box::new(|t, x| { let c = t.leaf(a.clone()); let y = t.add(x, c)?; scalarize(t, y) }), &x3),
        ("scale", Box::new(|t, x| { let y = t.scale(x, -1.7); scalarize(t, y) }), &x3),
        ("conv1d/seq", Box::new(|t, s| { let (f, b) = (t.leaf(filt.clone()), t.leaf(fb.clone())); let y = t.conv1d(s, f, Some(b))?; scalarize(t, y) }), &seq),
        ("conv1d/filters", Box::new(|t, f| { let (s, b) = (t.leaf(seq.clone()), t.leaf(fb.clone())); let y = t.conv1d(s, f, Some(b))?; scalarize(t, y) }), &filt),
        ("conv1d/bias", Box::new(|t, b| { let (s, f) = (t.leaf(seq.clone()), t.leaf(filt.clone())); let y = t.conv1d(s, f, Some(b))?; scalarize(t, y) }), &fb),
        ("glu", Box::new(|t, x| { let y = t.glu(x)?; scalarize(t, y) }), &wide),
        ("pad_rows", Box::new(|t, x| { let y = t.pad_rows(x, 2, 1)?; scalarize(t, y) }), &x3),
        ("gather", Box::new(|t, x| { let y = t.gather(x, &[4, 0, 4, 2])?; scalarize(t, y) }), &table),
        ("matmul/a", Box::new(|t, x| { let c = t.leaf(bm.clone()); let y = t.matmul(x, c)?; scalarize(t, y) }), &a),
        ("matmul/b", Box::new(|t, x| { let c = t.leaf(a.clone()); let y = t.matmul(c, x)?; scalarize(t, y) }), &bm),
        ("matmul_nt/a", Box::new(|t, x| { let c = t.leaf(bt.clone()); let y = t.matmul_nt(x, c)?; scalarize(t, y) }), &a),
        ("matmul_nt/b", Box::new(|t, x| { let c = t.leaf(a.clone()); let y = t.matmul_nt(c, x)?; scalarize(t, y) }), &bt),
        ("softmax", Box::new(|t, x| { let y = t.softmax(x); let z = t.scale(y, 3.0); scalarize(t, z) }), &logits),
        ("log_softmax", Box::new(|t, x| { let y = t.log_softmax(x); scalarize(t, y) }), &logits),
        ("dropout", Box::new(|t, x| { let mut r = SeededRng::seed_from_u64(9); let y = t.dropout(x, 0.3, true, &mut r)?; scalarize(t, y) }), &x3),
        ("nll_mean", Box::new(|t, x| { let y = t.log_softmax(x); t.nll_mean(y, &[0, 3, 4, 1]) }), &logits),
        ("sum", Box::new(|t, x| { let y = t.scale(x, 2.0); let s = t.sum(y); let q = t.sum_squares(x); t.add(s, q) }), &x3),
        ("sum_squares", Box::new(|t, x| Ok(t.sum_squares(x))), &x3),
    ];
    cases
        .into_iter()
        .map(|(name, f, x)| (name, check_gradients(|t, v| f(t, v), x).unwrap()))
        .collect()
}

/// Max |tape conv − loop conv| over random shapes.
pub fn conv_vs_loops(cases: usize, seed: u64) -> f64 {
    use mlconv_gec::numcore::Tape;
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (p, c, o) = (rng.gen_range(3..12), rng.gen_range(1..6), rng.gen_range(1..6));
        let seq = Array::uniform(&[p, c], -2.0, 2.0, &mut rng);
        let filt = Array::uniform(&[o, 3, c], -2.0, 2.0, &mut rng);
        let bias = Array::uniform(&[o], -2.0, 2.0, &mut rng);
        let mut t = Tape::new();
        let (s, f, b) = (t.leaf(seq.clone()), t.leaf(filt.clone()), t.leaf(bias.clone()));
        let y = t.conv1d(s, f, Some(b)).unwrap();
        let y = t.value(y);
        for i in 0..p - 2 {
            for oc in 0..o {
                let mut acc = bias.data()[oc];
                for k in 0..3 {
                    for ch in 0..c {
                        acc += filt.get(&[oc, k, ch]) * seq.get(&[i + k, ch]);
                    }
                }
                worst = worst.max((acc - y.get(&[i, oc])).abs());
            }
        }
    }
    worst
}

/// Largest |Σp − 1| over randomized cases, per distribution family.
#[derive(Debug)]
pub struct Normalization {
    pub softmax: f64,
    pub attention: f64,
    pub ensemble: f64,
    pub ngram: f64,
}

pub fn normalization_deviations(cases: usize, seed: u64) -> Normalization {
    use mlconv_gec::decoder::ensemble_logprobs;
    use mlconv_gec::mlconv::{decode_prefix, encode};
    use mlconv_gec::ngramlm::NGramModel;
    use mlconv_gec::numcore::{log_softmax_slice, softmax_slice};

    let mut rng = SeededRng::seed_from_u64(seed);
    let mut n = Normalization { softmax: 0.0, attention: 0.0, ensemble: 0.0, ngram: 0.0 };
    for case in 0..cases {
        let len = rng.gen_range(1..60);
        let scale = rng.gen_range(0.1..60.0);
        let mut v: Vec<f64> = (0..len).map(|_| rng.gen_range(-scale..scale)).collect();
        softmax_slice(&mut v);
        n.softmax = n.softmax.max((v.iter().sum::<f64>() - 1.0).abs());

        let k = rng.gen_range(1..6);
        let dists: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let mut d: Vec<f64> = (0..len).map(|_| rng.gen_range(-scale..scale)).collect();
                log_softmax_slice(&mut d);
                d
            })
            .collect();
        let e = ensemble_logprobs(&dists).unwrap();
        n.ensemble = n.ensemble.max((e.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs());

        let layers = rng.gen_range(1..4);
        let p = random_params(tiny_config(9, 9, 4, 6, layers), seed ^ case as u64, 1.0);
        let src_len = rng.gen_range(1..12);
        let src = random_tokens(&mut rng, src_len, 9);
        let pre_len = rng.gen_range(1..8);
        let mut prefix = vec![1];
        prefix.extend((1..pre_len).map(|_| rng.gen_range(4..9)));
        let enc = encode(&p, &src).unwrap();
        let (_, attn) = decode_prefix(&p, &enc, &prefix).unwrap();
        for a in &attn {
            for r in 0..a.rows() {
                n.attention = n.attention.max((a.row(r).iter().sum::<f64>() - 1.0).abs());
            }
        }

        let words = ["a", "b", "c", "d", "e"];
        let corpus: Vec<Vec<&str>> = (0..rng.gen_range(3..15))
            .map(|_| (0..rng.gen_range(2..8)).map(|_| words[rng.gen_range(0..5)]).collect())
            .collect();
        let order = rng.gen_range(1..6);
        let lm = NGramModel::train(&corpus, order).unwrap();
        let ctx: Vec<&str> = (0..rng.gen_range(0..5))
            .map(|_| ["a", "b", "c", "d", "e", "zz", "<s>"][rng.gen_range(0..7)])
            .collect();
        let vocab: Vec<String> = lm.vocabulary().filter(|w| *w != "<s>").map(String::from).collect();
        let total: f64 = vocab.iter().map(|w| lm.prob(&ctx, w)).sum();
        n.ngram = n.ngram.max((total - 1.0).abs());
    }
    n
}

pub const LM_TINY: &[&str] = &[
    "the cat sat on the mat",
    "the dog sat on the log",
    "a cat saw the dog",
    "the cat ate",
    "a dog ate the cat food",
    "the mat was on the floor",
    "a cat sat",
    "the the cat",
];

fn kn_discounts(counts: &std::collections::HashMap<Vec<String>, usize>) -> [f64; 3] {
    let n = |k: usize| counts.values().filter(|&&c| c == k).count() as f64;
    let (n1, n2, n3, n4) = (n(1), n(2), n(3), n(4));
    let single = if n1 > 0.0 && n2 > 0.0 { n1 / (n1 + 2.0 * n2) } else { 0.5 };
    if n1 == 0.0 || n2 == 0.0 || n3 == 0.0 || n4 == 0.0 {
        return [single; 3];
    }
    let y = n1 / (n1 + 2.0 * n2);
    let d = [1.0 - 2.0 * y * n2 / n1, 2.0 - 3.0 * y * n3 / n2, 3.0 - 4.0 * y * n4 / n3];
    let mut out = [single; 3];
    for k in 0..3 {
        if d[k] > 0.0 && d[k] <= (k + 1) as f64 {
            out[k] = d[k];
        }
    }
    out
}

fn kn_d(d: &[f64; 3], c: usize) -> f64 {
    match c {
        0 => 0.0,
        1 => d[0],
        2 => d[1],
        _ => d[2],
    }
}

/// Bigram interpolated modified Kneser-Ney straight from the token stream:
/// `p(w | v)` for every context and word of the tiny corpus.
pub fn bigram_kn_oracle(corpus: &[Vec<String>]) -> impl Fn(&str, &str) -> f64 {
    use std::collections::{BTreeSet, HashMap};
    let mut vocab: BTreeSet<String> = corpus.iter().flatten().cloned().collect();
    vocab.insert("</s>".into());
    vocab.insert("<unk>".into());
    let mut bigrams: HashMap<Vec<String>, usize> = HashMap::new();
    for s in corpus {
        let mut seq = vec!["<s>".to_string()];
        seq.extend(s.iter().cloned());
        seq.push("</s>".into());
        for p in seq.windows(2) {
            *bigrams.entry(p.to_vec()).or_default() += 1;
        }
    }
    // continuation counts: distinct left neighbours
    let mut cont: HashMap<Vec<String>, usize> = HashMap::new();
    for g in bigrams.keys() {
        *cont.entry(vec![g[1].clone()]).or_default() += 1;
    }
    let d1 = kn_discounts(&cont);
    let d2 = kn_discounts(&bigrams);
    let total1: usize = cont.values().sum();
    let gamma = |d: &[f64; 3], cs: &[usize]| {
        let t: usize = cs.iter().sum();
        (d[0] * cs.iter().filter(|&&c| c == 1).count() as f64
            + d[1] * cs.iter().filter(|&&c| c == 2).count() as f64
            + d[2] * cs.iter().filter(|&&c| c >= 3).count() as f64)
            / t as f64
    };
    let g1 = gamma(&d1, &cont.values().copied().collect::<Vec<_>>());
    let nv = vocab.len() as f64;
    let uni = move |w: &str| {
        let c = cont.get(&vec![w.to_string()]).copied().unwrap_or(0);
        (c as f64 - kn_d(&d1, c)).max(0.0) / total1 as f64 + g1 / nv
    };
    move |v: &str, w: &str| {
        let w = if vocab.contains(w) { w } else { "<unk>" };
        let row: Vec<usize> = bigrams.iter().filter(|(g, _)| g[0] == v).map(|(_, &c)| c).collect();
        if row.is_empty() {
            return uni(w);
        }
        let t: usize = row.iter().sum();
        let c = bigrams.get(&vec![v.to_string(), w.to_string()]).copied().unwrap_or(0);
        (c as f64 - kn_d(&d2, c)).max(0.0) / t as f64 + gamma(&d2, &row) * uni(w)
    }
}

/// Largest |model − oracle| over all (context, word) pairs of the tiny corpus,
/// plus the 3-word feature difference.
pub fn lm_oracle_diff() -> (f64, f64) {
    use mlconv_gec::ngramlm::NGramModel;
    let corpus: Vec<Vec<String>> = LM_TINY
        .iter()
        .map(|s| s.split_whitespace().map(String::from).collect())
        .collect();
    let lm = NGramModel::train(&corpus, 2).unwrap();
    let oracle = bigram_kn_oracle(&corpus);
    let mut words: Vec<String> = lm.vocabulary().map(String::from).collect();
    words.push("unseen".into());
    let mut worst: f64 = 0.0;
    for v in &words {
        for w in words.iter().filter(|w| *w != "<s>") {
            worst = worst.max((lm.prob(&[v.as_str()], w) - oracle(v, w)).abs());
        }
    }
    let hyp = ["the", "cat", "barked"];
    let expect: f64 = oracle("<s>", "the").ln() + oracle("the", "cat").ln() + oracle("cat", "barked").ln();
    let (got, n) = lm.score_words(&hyp);
    assert_eq!(n, 3);
    (worst, (got - expect).abs())
}

/// Held-out perplexities (5-gram, unigram) on a 90/10 split of synthetic text.
pub fn lm_perplexities() -> (f64, f64) {
    use mlconv_gec::ngramlm::NGramModel;
    use mlconv_gec::synthetic::synthetic_pairs;
    let text: Vec<Vec<String>> = synthetic_pairs(1000, 21).into_iter().map(|p| p.1).collect();
    let (train, test) = text.split_at(900);
    let five = NGramModel::train(train, 5).unwrap();
    let one = NGramModel::train(train, 1).unwrap();
    (five.perplexity(test), one.perplexity(test))
}

/// Hand-scored M2 cases: (gold, hypothesis, expected tp/fp/fn per sentence).
pub struct M2Fixtures {
    pub gold: Vec<mlconv_gec::gecmetrics::M2Sentence>,
    pub hypotheses: Vec<Vec<String>>,
    pub expected: Vec<(usize, usize, usize)>,
}

/// Counts worked out by hand, one row per fixture sentence.
pub const M2_EXPECTED: [(usize, usize, usize); 10] = [
    (1, 0, 0), // exact match
    (0, 0, 2), // unchanged hypothesis, two missed edits
    (0, 1, 0), // noop gold, spurious edit
    (1, 0, 0), // annotator 0 fully matched beats annotator 1
    (1, 0, 0), // deletion matches annotator 1 only
    (1, 0, 0), // insertion
    (1, 0, 0), // substitution + insertion merged into one span
    (0, 1, 1), // wrong replacement
    (1, 1, 1), // one hit, one miss, one spurious
    (0, 0, 0), // noop annotator preferred over an unmade edit
];

pub fn m2_fixtures() -> M2Fixtures {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let gold = mlconv_gec::gecmetrics::parse_m2(&std::fs::read_to_string(dir.join("m2_suite.m2")).unwrap()).unwrap();
    let hypotheses = std::fs::read_to_string(dir.join("m2_suite.hyp"))
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect();
    M2Fixtures {
        gold,
        hypotheses,
        expected: M2_EXPECTED.to_vec(),
    }
}

/// Mismatching sentences as `(index, got, expected)`, plus corpus totals.
pub fn m2_fixture_check() -> (Vec<(usize, (usize, usize, usize), (usize, usize, usize))>, mlconv_gec::gecmetrics::ScoreReport) {
    let fx = m2_fixtures();
    let mut bad = Vec::new();
    for (i, ((g, h), want)) in fx.gold.iter().zip(&fx.hypotheses).zip(&fx.expected).enumerate() {
        let st = mlconv_gec::gecmetrics::sentence_stats(g, h);
        let got = (st.tp, st.fp, st.fn_);
        if got != *want {
            bad.push((i, got, *want));
        }
    }
    let report = mlconv_gec::gecmetrics::m2_score(&fx.gold, &fx.hypotheses).unwrap();
    (bad, report)
}

/// 10k sentences of synthetic learner text plus random words drawn from a
/// small alphabet that includes `@`, digits, punctuation and non-ASCII.
pub fn bpe_corpus(sentences: usize, seed: u64) -> Vec<Vec<String>> {
    let alphabet: Vec<char> = "abcdeilmnorst@@-.'0é猫".chars().collect();
    let mut rng = SeededRng::seed_from_u64(seed);
    let base = mlconv_gec::synthetic::synthetic_pairs(sentences, seed);
    base.into_iter()
        .map(|(mut src, _)| {
            for _ in 0..rng.gen_range(0..4) {
                let len = rng.gen_range(1..9);
                let w: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
                let at = rng.gen_range(0..=src.len());
                src.insert(at, w);
            }
            src
        })
        .collect()
}

/// Sentences whose segmentation does not join back to the input.
pub fn bpe_round_trip_failures(corpus: &[Vec<String>], merges: usize) -> (usize, String) {
    use mlconv_gec::textprep::{desegment, learn_bpe};
    let model = learn_bpe(corpus, merges).unwrap();
    let bad = corpus.iter().filter(|s| desegment(&model.apply(s)) != **s).count();
    (bad, model.to_text())
}
