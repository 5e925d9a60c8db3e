//! Batch workflow: preprocess → pretrain → train → train-lm → decode →
//! tune → rescore → evaluate. Every stage lives in its own directory under
//! the work dir and records input/output hashes in a manifest.

pub mod config;
pub mod manifest;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;

pub use config::{existing, parse_features, parse_seeds, ExperimentConfig, Overrides};
pub use manifest::{sha256_file, Manifest, Stage, StageWriter};

use crate::decoder::{decode_sentence, greedy_search, BeamConfig, EncodedModel, NBest};
use crate::error::{Error, Result};
use crate::gecmetrics::{
    extract_system_edits, gleu, m2_score, parse_m2, sentence_stats, write_m2, M2Sentence, ScoreReport,
};
use crate::mlconv::{Checkpoint, ModelParams};
use crate::ngramlm::NGramModel;
use crate::pretrain::{train_embeddings, EmbeddingTable};
use crate::rescorer::{
    compute_features, mert, parse_feature_nbest, rescore, to_candidates, write_feature_nbest, FeatureToggles,
    MertConfig, ScoredHypothesis, WeightVector, MODEL_SCORE,
};
use crate::textprep::{desegment, learn_bpe, load_parallel, read_tokenized, BpeModel, Sentence, Vocabulary};
use crate::trainer::{train, DevSet, IdPair, TrainConfig};
use crate::SeededRng;

pub const PREPROCESS: &str = "preprocess";
pub const PRETRAIN: &str = "pretrain";
pub const TRAIN: &str = "train";
pub const TRAIN_LM: &str = "lm";
pub const DECODE: &str = "decode";
pub const TUNE: &str = "tune";
pub const RESCORE: &str = "rescore";
pub const EVALUATE: &str = "evaluate";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

fn lines<S: AsRef<str>>(sentences: &[Vec<S>]) -> String {
    let mut out = String::new();
    for s in sentences {
        let words: Vec<&str> = s.iter().map(AsRef::as_ref).collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

fn first_correction(g: &M2Sentence) -> Vec<String> {
    g.annotators.keys().next().map_or_else(|| g.source.clone(), |&a| g.corrected(a))
}

impl StageWriter {
    /// Resolves an upstream artifact and records its hash as an input.
    pub fn depend(&mut self, stage: &Stage, file: &str) -> Result<PathBuf> {
        let p = stage.artifact(file)?;
        let hash = stage.manifest.get(&format!("output.{file}")).unwrap_or_default().to_string();
        self.manifest.set(format!("input.{}/{file}", stage.name), hash);
        Ok(p)
    }
}

/// Fails when `consumer` was built from a different `producer` output than
/// the one currently on disk.
fn check_fresh(consumer: &Stage, producer: &Stage, file: &str) -> Result<()> {
    let used = consumer.manifest.get(&format!("input.{}/{file}", producer.name));
    let now = producer.manifest.get(&format!("output.{file}"));
    if used != now {
        return Err(Error::Dependency(format!(
            "stage `{}` was built from an older `{}` output ({file}); rerun `{}`",
            consumer.name, producer.name, consumer.name
        )));
    }
    Ok(())
}

/// Splits off the dev set, learns BPE on the training side and builds
/// both vocabularies.
pub fn preprocess(cfg: &ExperimentConfig) -> Result<Stage> {
    cfg.validate()?;
    let src_path = existing(&cfg.train_source, "paths.train_source")?;
    let tgt_path = existing(&cfg.train_target, "paths.train_target")?;
    let dev_m2 = cfg.dev_m2.as_ref().map(|_| existing(&cfg.dev_m2, "paths.dev_m2")).transpose()?;

    let (corpus, report) = load_parallel(&src_path, &tgt_path)?;
    let pairs = corpus.into_pairs();
    let (train, gold): (Vec<(Sentence, Sentence)>, Vec<M2Sentence>) = match &dev_m2 {
        Some(p) => (pairs, parse_m2(&read(p)?)?),
        None => {
            if cfg.dev_size >= pairs.len() {
                return Err(Error::Config(format!(
                    "dev_size {} leaves no training pairs: the corpus keeps {} pairs",
                    cfg.dev_size,
                    pairs.len()
                )));
            }
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            order.shuffle(&mut SeededRng::seed_from_u64(cfg.seed));
            let mut is_dev = vec![false; pairs.len()];
            for &i in &order[..cfg.dev_size] {
                is_dev[i] = true;
            }
            let mut train = Vec::new();
            let mut gold = Vec::new();
            for ((s, t), dev) in pairs.into_iter().zip(is_dev) {
                if dev {
                    let mut m = M2Sentence::new(s.clone());
                    m.annotators.insert(0, extract_system_edits(&s, &t));
                    gold.push(m);
                } else {
                    train.push((s, t));
                }
            }
            (train, gold)
        }
    };
    if gold.is_empty() {
        return Err(Error::Config("the dev set is empty; set preprocess.dev_size or paths.dev_m2".into()));
    }
    if train.is_empty() {
        return Err(Error::Ingestion("no training pairs left after filtering".into()));
    }

    let both: Vec<Sentence> = train.iter().flat_map(|(s, t)| [s.clone(), t.clone()]).collect();
    let bpe = learn_bpe(&both, cfg.bpe_merges)?;
    let seg_src: Vec<Vec<String>> = train.iter().map(|(s, _)| bpe.apply(s)).collect();
    let seg_tgt: Vec<Vec<String>> = train.iter().map(|(_, t)| bpe.apply(t)).collect();
    let src_vocab = Vocabulary::build(&seg_src, cfg.vocab_cap)?;
    let tgt_vocab = Vocabulary::build(&seg_tgt, cfg.vocab_cap)?;
    let dev_src: Vec<Vec<String>> = gold.iter().map(|g| g.source.clone()).collect();

    let mut w = StageWriter::begin(&cfg.work_dir, PREPROCESS)?;
    w.manifest.input("train_source", &src_path)?;
    w.manifest.input("train_target", &tgt_path)?;
    if let Some(p) = &dev_m2 {
        w.manifest.input("dev_m2", p)?;
    }
    w.write("bpe.merges", bpe.to_text())?;
    w.write("vocab.src", src_vocab.to_text())?;
    w.write("vocab.tgt", tgt_vocab.to_text())?;
    w.write("train.src", lines(&seg_src))?;
    w.write("train.tgt", lines(&seg_tgt))?;
    w.write("dev.src", lines(&dev_src))?;
    w.write("dev.m2", write_m2(&gold))?;
    let m = &mut w.manifest;
    m.set("count.read", report.read);
    m.set("count.kept", report.kept);
    m.set("count.discarded_identical", report.read - report.kept);
    m.set("count.train", train.len());
    m.set("count.dev", gold.len());
    m.set("count.merges", bpe.len());
    m.set("count.src_vocab", src_vocab.len());
    m.set("count.tgt_vocab", tgt_vocab.len());
    m.set("seed", cfg.seed);
    log::info!(
        "preprocess: read {} pairs, kept {}, train {}, dev {}",
        report.read,
        report.kept,
        train.len(),
        gold.len()
    );
    w.commit()
}

/// Everything later stages read from the preprocess output.
pub struct Prepared {
    pub stage: Stage,
    pub bpe: BpeModel,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    /// Segmented training pairs.
    pub train: Vec<(Sentence, Sentence)>,
    pub dev_src: Vec<Sentence>,
    pub dev_gold: Vec<M2Sentence>,
}

pub fn load_prepared(work: &Path) -> Result<Prepared> {
    let stage = Stage::require(work, PREPROCESS)?;
    let bpe = BpeModel::from_text(&read(&stage.artifact("bpe.merges")?)?)?;
    let src_vocab = Vocabulary::from_text(&read(&stage.artifact("vocab.src")?)?)?;
    let tgt_vocab = Vocabulary::from_text(&read(&stage.artifact("vocab.tgt")?)?)?;
    let src = read_tokenized(&stage.artifact("train.src")?)?;
    let tgt = read_tokenized(&stage.artifact("train.tgt")?)?;
    let dev_src = read_tokenized(&stage.artifact("dev.src")?)?;
    let dev_gold = parse_m2(&read(&stage.artifact("dev.m2")?)?)?;
    Ok(Prepared {
        stage,
        bpe,
        src_vocab,
        tgt_vocab,
        train: src.into_iter().zip(tgt).collect(),
        dev_src,
        dev_gold,
    })
}

impl Prepared {
    fn record_inputs(&self, w: &mut StageWriter, files: &[&str]) -> Result<()> {
        for f in files {
            w.depend(&self.stage, f)?;
        }
        Ok(())
    }
}

/// Subword embeddings over the segmented monolingual text (or, without
/// one, both sides of the training corpus).
pub fn pretrain(cfg: &ExperimentConfig) -> Result<Stage> {
    cfg.validate()?;
    let data = load_prepared(&cfg.work_dir)?;
    let mut w = StageWriter::begin(&cfg.work_dir, PRETRAIN)?;
    data.record_inputs(&mut w, &["bpe.merges", "train.src", "train.tgt"])?;
    let corpus: Vec<Sentence> = match &cfg.monolingual {
        Some(_) => {
            let p = existing(&cfg.monolingual, "paths.monolingual")?;
            w.manifest.input("monolingual", &p)?;
            read_tokenized(&p)?.iter().map(|s| data.bpe.apply(s)).collect()
        }
        None => data.train.iter().flat_map(|(s, t)| [s.clone(), t.clone()]).collect(),
    };
    let pc = cfg.pretrain_config();
    let out = train_embeddings(&corpus, &pc)?;
    let table = out.embeddings.to_table();
    w.write("embeddings.vec", table.to_text())?;
    let m = &mut w.manifest;
    m.set("mode", format!("{:?}", pc.mode).to_lowercase());
    m.set("dim", pc.dim);
    m.set("seed", pc.seed);
    m.set("count.tokens", table.tokens.len());
    if let Some(l) = out.epoch_losses.last() {
        m.set("final_loss", format!("{l:.6}"));
    }
    w.commit()
}

fn strip_time(line: &str) -> &str {
    line.rsplit_once(" time_s=").map_or(line, |(a, _)| a)
}

/// One best checkpoint per configured seed.
pub fn train_models(cfg: &ExperimentConfig) -> Result<Stage> {
    cfg.validate()?;
    let mut seen = cfg.seeds.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != cfg.seeds.len() {
        return Err(Error::Config("the training seed list repeats a seed".into()));
    }
    let data = load_prepared(&cfg.work_dir)?;
    let mut w = StageWriter::begin(&cfg.work_dir, TRAIN)?;
    data.record_inputs(&mut w, &["bpe.merges", "vocab.src", "vocab.tgt", "train.src", "train.tgt", "dev.m2"])?;
    let table = if cfg.use_pretrained {
        let st = Stage::require(&cfg.work_dir, PRETRAIN)?;
        let t = EmbeddingTable::from_text(&read(&w.depend(&st, "embeddings.vec")?)?)?;
        if t.dim != cfg.embed_dim {
            return Err(Error::Contract(format!(
                "embeddings have {} dimensions but the model uses {}; rerun `pretrain`",
                t.dim, cfg.embed_dim
            )));
        }
        Some(t)
    } else {
        None
    };

    let (sv, tv) = (&data.src_vocab, &data.tgt_vocab);
    let pairs: Vec<IdPair> = data
        .train
        .iter()
        .map(|(s, t)| (sv.encode_with_eos(s), tv.encode_with_eos(t)))
        .collect();
    let dev_sources: Vec<Vec<usize>> = data.dev_src.iter().map(|s| sv.encode_with_eos(&data.bpe.apply(s))).collect();
    let references: Vec<Vec<usize>> = data
        .dev_gold
        .iter()
        .map(|g| tv.encode_with_eos(&data.bpe.apply(&first_correction(g))))
        .collect();
    let dev = DevSet {
        sources: &dev_sources,
        gold: &data.dev_gold,
        tgt_vocab: tv,
        references: &references,
    };
    let mc = cfg.model_config(sv.len(), tv.len());
    let lookup = table.as_ref().map(EmbeddingTable::lookup);

    let run = |seed: u64| -> Result<(ModelParams, f64, usize, String)> {
        let mut rng = SeededRng::seed_from_u64(seed);
        let mut params = ModelParams::init(mc, &mut rng)?;
        if let Some(lk) = &lookup {
            let (s, t) = params.load_embeddings(sv.tokens(), tv.tokens(), |tok| lk.get(tok).copied())?;
            log::info!("seed {seed}: initialized {s} source and {t} target embeddings from pretraining");
        }
        let tc = TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let mut log_text = String::new();
        let outcome = train(&mut params, &pairs, &dev, &tc, |r, _| {
            let _ = writeln!(log_text, "{}", strip_time(&r.to_log_line()));
        })?;
        Ok((outcome.best, outcome.best_f05, outcome.epochs.len(), log_text))
    };
    let results: Vec<Result<(ModelParams, f64, usize, String)>> = if cfg.parallel_seeds {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg.seeds.iter().map(|&seed| s.spawn(move || run(seed))).collect();
            handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
        })
    } else {
        cfg.seeds.iter().map(|&seed| run(seed)).collect()
    };

    let mut names = Vec::new();
    for (&seed, r) in cfg.seeds.iter().zip(results) {
        let (best, f05, epochs, log_text) = r?;
        let name = format!("model.seed{seed}.ckpt");
        Checkpoint::new(best, sv.clone(), tv.clone())?.save(&w.path(&name))?;
        w.record(&name)?;
        w.write(&format!("train.seed{seed}.log"), log_text)?;
        w.manifest.set(format!("seed{seed}.best_dev_f05"), format!("{f05:.6}"));
        w.manifest.set(format!("seed{seed}.epochs"), epochs);
        names.push(name);
    }
    w.manifest.set("checkpoints", names.join(","));
    w.commit()
}

/// Word-level n-gram LM over the monolingual text or the training targets.
pub fn train_lm(cfg: &ExperimentConfig) -> Result<Stage> {
    cfg.validate()?;
    let data = load_prepared(&cfg.work_dir)?;
    let mut w = StageWriter::begin(&cfg.work_dir, TRAIN_LM)?;
    let corpus: Vec<Sentence> = match &cfg.monolingual {
        Some(_) => {
            let p = existing(&cfg.monolingual, "paths.monolingual")?;
            w.manifest.input("monolingual", &p)?;
            read_tokenized(&p)?
        }
        None => {
            data.record_inputs(&mut w, &["train.tgt"])?;
            data.train.iter().map(|(_, t)| desegment(t)).collect()
        }
    };
    let lm = NGramModel::train(&corpus, cfg.lm_order)?;
    w.write("lm.arpa", lm.to_arpa())?;
    w.manifest.set("order", cfg.lm_order);
    w.manifest.set("count.sentences", corpus.len());
    w.commit()
}

#[derive(Clone, Debug, Default)]
pub struct DecodeOptions {
    /// Tokenized input; the dev sources by default.
    pub input: Option<PathBuf>,
    /// Step-wise argmax instead of beam search.
    pub greedy: bool,
}

fn ensemble_paths(cfg: &ExperimentConfig, pre: &Stage) -> Result<Vec<PathBuf>> {
    if !cfg.ensemble.is_empty() {
        for p in &cfg.ensemble {
            if !p.exists() {
                return Err(Error::Config(format!("checkpoint {} does not exist", p.display())));
            }
        }
        return Ok(cfg.ensemble.clone());
    }
    let tr = Stage::require(&cfg.work_dir, TRAIN)?;
    check_fresh(&tr, pre, "vocab.src")?;
    check_fresh(&tr, pre, "vocab.tgt")?;
    tr.manifest
        .get("checkpoints")
        .unwrap_or_default()
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|n| tr.artifact(n))
        .collect()
}

/// Ensemble beam search over an input file; writes the n-best list with
/// model scores and the top-1 output.
pub fn decode(cfg: &ExperimentConfig, opts: &DecodeOptions) -> Result<Stage> {
    cfg.validate()?;
    let pre = Stage::require(&cfg.work_dir, PREPROCESS)?;
    let paths = ensemble_paths(cfg, &pre)?;
    if paths.is_empty() {
        return Err(Error::Config("the ensemble list is empty".into()));
    }
    let mut w = StageWriter::begin(&cfg.work_dir, DECODE)?;
    let bpe = BpeModel::from_text(&read(&w.depend(&pre, "bpe.merges")?)?)?;
    let src_vocab = Vocabulary::from_text(&read(&w.depend(&pre, "vocab.src")?)?)?;
    let tgt_vocab = Vocabulary::from_text(&read(&w.depend(&pre, "vocab.tgt")?)?)?;

    let mut ckpts = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        let c = Checkpoint::load(p)?;
        if c.src_vocab != src_vocab || c.tgt_vocab != tgt_vocab {
            return Err(Error::Contract(format!(
                "checkpoint {} was trained with different vocabularies than the preprocess output",
                p.display()
            )));
        }
        w.manifest.input(&format!("checkpoint{i}"), p)?;
        ckpts.push(c);
    }
    let models: Vec<&ModelParams> = ckpts.iter().map(|c| &c.params).collect();

    let input = match &opts.input {
        Some(p) => {
            if !p.exists() {
                return Err(Error::Config(format!("decode input {} does not exist", p.display())));
            }
            p.clone()
        }
        None => pre.artifact("dev.src")?,
    };
    w.manifest.input("source", &input)?;
    let sentences = read_tokenized(&input)?;
    let beam = if opts.greedy { BeamConfig::new(1) } else { BeamConfig::new(cfg.beam) };
    let mut lists = Vec::with_capacity(sentences.len());
    let mut truncated = 0;
    for words in &sentences {
        let ids = src_vocab.encode_with_eos(&bpe.apply(words));
        let nb = if opts.greedy {
            let bound = models
                .iter()
                .map(|p| EncodedModel::new(p, &ids))
                .collect::<Result<Vec<_>>>()?;
            let h = greedy_search(&bound, &beam.banned, beam.max_len_for(ids.len()))?;
            let truncated = !h.finished;
            NBest {
                hypotheses: vec![h],
                truncated,
            }
        } else {
            decode_sentence(&models, &ids, &beam)?
        };
        truncated += usize::from(nb.truncated);
        lists.push(
            nb.hypotheses
                .iter()
                .map(|h| ScoredHypothesis {
                    text: desegment(&tgt_vocab.decode(h.content())),
                    features: vec![(MODEL_SCORE.to_string(), h.model_score)],
                })
                .collect::<Vec<_>>(),
        );
    }
    if truncated > 0 {
        log::warn!("{truncated} sentences reached the length limit without finishing");
    }
    let top: Vec<Vec<String>> = lists
        .iter()
        .map(|l| l.first().map(|h| h.text.clone()).unwrap_or_default())
        .collect();
    w.write("input.txt", lines(&sentences))?;
    w.write("nbest.txt", write_feature_nbest(&lists))?;
    w.write("output.txt", lines(&top))?;
    let m = &mut w.manifest;
    m.set("beam", beam.beam);
    m.set("greedy", opts.greedy);
    m.set("count.sentences", sentences.len());
    m.set("count.truncated", truncated);
    w.commit()
}

fn load_decoded(dec: &Stage) -> Result<(Vec<Vec<ScoredHypothesis>>, Vec<Sentence>)> {
    let sources = read_tokenized(&dec.artifact("input.txt")?)?;
    let lists = parse_feature_nbest(&read(&dec.artifact("nbest.txt")?)?, sources.len())?;
    Ok((lists, sources))
}

fn load_lm(cfg: &ExperimentConfig, w: &mut StageWriter) -> Result<Option<NGramModel>> {
    if !cfg.features.lm {
        return Ok(None);
    }
    let st = Stage::require(&cfg.work_dir, TRAIN_LM)?;
    Ok(Some(NGramModel::from_arpa(&read(&w.depend(&st, "lm.arpa")?)?)?))
}

/// Recomputes the configured features for every decoded hypothesis.
pub fn featurize(
    lists: &[Vec<ScoredHypothesis>],
    sources: &[Sentence],
    toggles: FeatureToggles,
    lm: Option<&NGramModel>,
) -> Result<Vec<Vec<ScoredHypothesis>>> {
    let names = [MODEL_SCORE.to_string()];
    lists
        .iter()
        .zip(sources)
        .enumerate()
        .map(|(sid, (list, src))| {
            list.iter()
                .enumerate()
                .map(|(r, h)| {
                    let ms = h.project(&names, sid, r)?[0];
                    Ok(ScoredHypothesis {
                        text: h.text.clone(),
                        features: compute_features(src, &h.text, ms, toggles, lm)?,
                    })
                })
                .collect()
        })
        .collect()
}

fn require_dev_decode(pre: &Stage, dec: &Stage) -> Result<()> {
    let dev = sha256_file(&pre.artifact("dev.src")?)?;
    if dec.manifest.get("input.source") != Some(dev.as_str()) {
        return Err(Error::Dependency(
            "the decode stage holds output for a different input than the dev set; rerun `decode` without --input".into(),
        ));
    }
    Ok(())
}

/// MERT of the feature weights against dev F0.5.
pub fn tune(cfg: &ExperimentConfig) -> Result<Stage> {
    cfg.validate()?;
    let pre = Stage::require(&cfg.work_dir, PREPROCESS)?;
    let dec = Stage::require(&cfg.work_dir, DECODE)?;
    require_dev_decode(&pre, &dec)?;
    let mut w = StageWriter::begin(&cfg.work_dir, TUNE)?;
    let gold = parse_m2(&read(&w.depend(&pre, "dev.m2")?)?)?;
    w.depend(&dec, "nbest.txt")?;
    let (lists, sources) = load_decoded(&dec)?;
    if gold.len() != lists.len() {
        return Err(Error::Contract(format!(
            "{} gold sentences but {} n-best lists",
            gold.len(),
            lists.len()
        )));
    }
    let lm = load_lm(cfg, &mut w)?;
    let scored = featurize(&lists, &sources, cfg.features, lm.as_ref())?;
    let names = cfg.features.names();
    let candidates = to_candidates(&scored, &names, |sid, h| sentence_stats(&gold[sid], &h.text))?;
    let init = WeightVector::initial(names.clone());
    let mc = MertConfig {
        seed: cfg.seed,
        ..cfg.mert.clone()
    };
    let result = mert(&candidates, &init.values, &mc)?;
    let weights = WeightVector {
        names,
        values: result.weights,
    };
    w.write("weights.txt", weights.to_text())?;
    w.write("features.nbest", write_feature_nbest(&scored))?;
    let m = &mut w.manifest;
    m.set("dev_f05", format!("{:.6}", result.f05));
    m.set("beam_order_dev_f05", format!("{:.6}", result.initial_f05));
    m.set("features", weights.names.join(","));
    log::info!("tune: dev F0.5 {:.4} (beam order {:.4})", result.f05, result.initial_f05);
    w.commit()
}

/// Reranks the decoded n-best lists with the tuned weights.
pub fn rescore_stage(cfg: &ExperimentConfig) -> Result<Stage> {
    cfg.validate()?;
    let dec = Stage::require(&cfg.work_dir, DECODE)?;
    let tuned = Stage::require(&cfg.work_dir, TUNE)?;
    let mut w = StageWriter::begin(&cfg.work_dir, RESCORE)?;
    let weights = WeightVector::from_text(&read(&w.depend(&tuned, "weights.txt")?)?)?;
    let names = cfg.features.names();
    if names != weights.names {
        return Err(Error::Contract(format!(
            "rescore features [{}] differ from the tuned weights [{}]",
            names.join(","),
            weights.names.join(",")
        )));
    }
    w.depend(&dec, "nbest.txt")?;
    w.depend(&dec, "input.txt")?;
    let (lists, sources) = load_decoded(&dec)?;
    let lm = load_lm(cfg, &mut w)?;
    let scored = featurize(&lists, &sources, cfg.features, lm.as_ref())?;
    let reranked = rescore(&scored, &weights)?;
    let top: Vec<Vec<String>> = reranked
        .iter()
        .map(|l| l.first().map(|h| h.text.clone()).unwrap_or_default())
        .collect();
    w.write("nbest.txt", write_feature_nbest(&reranked))?;
    w.write("output.txt", lines(&top))?;
    w.commit()
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub hypotheses: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    /// One file per reference set, line-aligned with the gold sentences.
    pub references: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: ScoreReport,
    pub gleu: Option<f64>,
}

impl Evaluation {
    pub fn to_human(&self) -> String {
        let r = &self.report;
        let mut s = format!(
            "Precision : {:.4}\nRecall    : {:.4}\nF0.5      : {:.4}\n",
            r.precision, r.recall, r.f05
        );
        if let Some(g) = self.gleu {
            let _ = writeln!(s, "GLEU      : {g:.4}");
        }
        s
    }

    pub fn to_kv(&self) -> String {
        match self.gleu {
            Some(g) => format!("{} gleu={g:.4}", self.report.to_kv()),
            None => self.report.to_kv(),
        }
    }
}

fn default_hypotheses(work: &Path) -> Result<PathBuf> {
    let dec = Stage::require(work, DECODE)?;
    if Stage::exists(work, RESCORE) {
        let rs = Stage::require(work, RESCORE)?;
        check_fresh(&rs, &dec, "nbest.txt")?;
        return rs.artifact("output.txt");
    }
    dec.artifact("output.txt")
}

/// M2 precision/recall/F0.5, plus GLEU when reference files are given.
pub fn evaluate(cfg: &ExperimentConfig, opts: &EvalOptions) -> Result<(Stage, Evaluation)> {
    let hyp_path = match &opts.hypotheses {
        Some(p) => existing(&Some(p.clone()), "hypothesis file")?,
        None => default_hypotheses(&cfg.work_dir)?,
    };
    let gold_path = match &opts.gold {
        Some(p) => existing(&Some(p.clone()), "gold M2 file")?,
        None => Stage::require(&cfg.work_dir, PREPROCESS)?.artifact("dev.m2")?,
    };
    let gold = parse_m2(&read(&gold_path)?)?;
    let hyps = read_tokenized(&hyp_path)?;
    let report = m2_score(&gold, &hyps)?;
    let gleu_score = if opts.references.is_empty() {
        None
    } else {
        let sets = opts
            .references
            .iter()
            .map(|p| read_tokenized(p))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<Vec<Sentence>> = (0..gold.len())
            .map(|i| {
                sets.iter()
                    .map(|s| {
                        s.get(i).cloned().ok_or_else(|| {
                            Error::Contract(format!("reference file has {} lines, expected {}", s.len(), gold.len()))
                        })
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let sources: Vec<Sentence> = gold.iter().map(|g| g.source.clone()).collect();
        Some(gleu(&sources, &hyps, &refs, 4)?)
    };
    let ev = Evaluation {
        report,
        gleu: gleu_score,
    };
    let mut w = StageWriter::begin(&cfg.work_dir, EVALUATE)?;
    w.manifest.input("hypotheses", &hyp_path)?;
    w.manifest.input("gold", &gold_path)?;
    w.write("report.txt", format!("{}{}\n", ev.to_human(), ev.to_kv()))?;
    Ok((w.commit()?, ev))
}

/// Every stage in order on one configuration.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Evaluation> {
    preprocess(cfg)?;
    if cfg.use_pretrained {
        pretrain(cfg)?;
    }
    train_models(cfg)?;
    if cfg.features.lm {
        train_lm(cfg)?;
    }
    decode(cfg, &DecodeOptions::default())?;
    tune(cfg)?;
    rescore_stage(cfg)?;
    Ok(evaluate(cfg, &EvalOptions::default())?.1)
}
