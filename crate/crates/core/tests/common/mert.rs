//! Brute-force references for MERT.

use mlconv_gec::gecmetrics::SentenceStats;
use mlconv_gec::rescorer::{corpus_f05, mert, Candidate, MertConfig};
use mlconv_gec::SeededRng;
use rand::{Rng, SeedableRng};

/// Straight F0.5 from counts, 0/0 read as 1.
pub fn f05(tp: usize, fp: usize, fn_: usize) -> f64 {
    let p = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        1.25 * p * r / (0.25 * p + r)
    }
}

/// Corpus F0.5 with score = f0 + λ f1, first index on ties.
pub fn oracle_f(lists: &[Vec<Candidate>], lambda: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for l in lists {
        let s = |c: &Candidate| c.features[0] + lambda * c.features[1];
        let mut best = 0;
        for i in 1..l.len() {
            if s(&l[i]) > s(&l[best]) {
                best = i;
            }
        }
        tp += l[best].stats.tp;
        fp += l[best].stats.fp;
        fn_ += l[best].stats.fn_;
    }
    f05(tp, fp, fn_)
}

pub fn grid_max(lists: &[Vec<Candidate>]) -> f64 {
    (0..=20_000)
        .map(|k| oracle_f(lists, -10.0 + k as f64 * 1e-3))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn stats(rng: &mut SeededRng) -> SentenceStats {
    SentenceStats {
        tp: rng.gen_range(0..3),
        fp: rng.gen_range(0..3),
        fn_: rng.gen_range(0..3),
    }
}

/// Two sentences, two hypotheses each, breakpoints inside [-8, 8] and at
/// least 2e-3 apart so a 1e-3 grid cannot miss an interval.
pub fn instance(rng: &mut SeededRng) -> Vec<Vec<Candidate>> {
    loop {
        let lists: Vec<Vec<Candidate>> = (0..2)
            .map(|_| {
                let f0a: f64 = rng.gen_range(-2.0..2.0);
                let f0b: f64 = rng.gen_range(-2.0..2.0);
                let f1a: f64 = rng.gen_range(-2.0..2.0);
                let gap = rng.gen_range(0.5..2.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                vec![
                    Candidate { features: vec![f0a, f1a], stats: stats(rng) },
                    Candidate { features: vec![f0b, f1a + gap], stats: stats(rng) },
                ]
            })
            .collect();
        let bp: Vec<f64> = lists
            .iter()
            .map(|l| (l[0].features[0] - l[1].features[0]) / (l[1].features[1] - l[0].features[1]))
            .collect();
        if (bp[0] - bp[1]).abs() > 2e-3 && bp.iter().all(|b| b.abs() < 8.0) {
            return lists;
        }
    }
}

pub fn one_free() -> MertConfig {
    MertConfig { frozen: vec![0], ..MertConfig::default() }
}

/// Largest gap between MERT and the grid optimum, plus instances where the
/// returned weight does not achieve the reported F0.5.
pub fn grid_gap(instances: usize, seed: u64) -> (f64, usize) {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut inconsistent = 0;
    for _ in 0..instances {
        let lists = instance(&mut rng);
        let r = mert(&lists, &[1.0, 0.0], &one_free()).unwrap();
        worst = worst.max((r.f05 - grid_max(&lists)).abs());
        if r.weights[0] != 1.0 || (oracle_f(&lists, r.weights[1]) - r.f05).abs() >= 1e-12 {
            inconsistent += 1;
        }
    }
    (worst, inconsistent)
}

/// Random 10-sentence, 5-best problems where the 8-restart result is below
/// the incumbent, misreports its F0.5, or is not reproducible.
pub fn regressions(problems: u64, seed: u64) -> Vec<u64> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut bad = Vec::new();
    for k in 0..problems {
        let lists: Vec<Vec<Candidate>> = (0..10)
            .map(|_| {
                (0..5)
                    .map(|_| Candidate {
                        features: (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect(),
                        stats: stats(&mut rng),
                    })
                    .collect()
            })
            .collect();
        let init = [1.0, 0.0, 0.0, 0.0];
        let cfg = MertConfig { seed: k, random_directions: 2, ..MertConfig::default() };
        let r = mert(&lists, &init, &cfg).unwrap();
        if r.f05 < r.initial_f05
            || r.initial_f05 != corpus_f05(&lists, &init)
            || r.f05 != corpus_f05(&lists, &r.weights)
            || r != mert(&lists, &init, &cfg).unwrap()
        {
            bad.push(k);
        }
    }
    bad
}
