//! Small end-to-end experiment configurations.

use std::fs;
use std::path::{Path, PathBuf};

use mlconv_gec::pipeline::{self, DecodeOptions, ExperimentConfig};
use mlconv_gec::synthetic::synthetic_pairs;

pub fn write_corpus(dir: &Path, n: usize, identical_every: Option<usize>) -> (PathBuf, PathBuf) {
    let pairs = synthetic_pairs(n, 4);
    let mut src = String::new();
    let mut tgt = String::new();
    for (i, (s, t)) in pairs.iter().enumerate() {
        let s = if identical_every.is_some_and(|k| i % k == 0) { t } else { s };
        src += &(s.join(" ") + "\n");
        tgt += &(t.join(" ") + "\n");
    }
    let (a, b) = (dir.join("train.src"), dir.join("train.tgt"));
    fs::write(&a, src).unwrap();
    fs::write(&b, tgt).unwrap();
    (a, b)
}

pub fn tiny(dir: &Path, work: &str) -> ExperimentConfig {
    let (s, t) = write_corpus(dir, 60, None);
    let mut c = ExperimentConfig {
        train_source: Some(s),
        train_target: Some(t),
        work_dir: dir.join(work),
        bpe_merges: 40,
        vocab_cap: 500,
        dev_size: 8,
        embed_dim: 8,
        hidden_dim: 16,
        layers: 1,
        max_positions: 64,
        dropout: 0.1,
        seeds: vec![1],
        lm_order: 3,
        beam: 3,
        ..ExperimentConfig::default()
    };
    c.train.max_epochs = 2;
    c.train.batch_size = 16;
    c.pretrain.buckets = 1024;
    c.mert.restarts = 2;
    c
}

pub fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

/// Stages whose files differ between two identically seeded runs of
/// preprocess, pretrain, single-threaded train and decode.
pub fn determinism_mismatches(dir: &Path) -> Vec<String> {
    let a = ExperimentConfig {
        parallel_seeds: false,
        seeds: vec![1, 2],
        ..tiny(dir, "a")
    };
    let b = ExperimentConfig {
        work_dir: dir.join("b"),
        ..a.clone()
    };
    for cfg in [&a, &b] {
        pipeline::preprocess(cfg).unwrap();
        pipeline::pretrain(cfg).unwrap();
        pipeline::train_models(cfg).unwrap();
        pipeline::decode(cfg, &DecodeOptions::default()).unwrap();
    }
    ["preprocess", "pretrain", "train", "decode"]
        .into_iter()
        .filter(|s| files(&a.work_dir.join(s)) != files(&b.work_dir.join(s)))
        .map(String::from)
        .collect()
}
