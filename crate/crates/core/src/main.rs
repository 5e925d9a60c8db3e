use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mlconv_gec::pipeline::{self, DecodeOptions, EvalOptions, ExperimentConfig, Overrides};
use mlconv_gec::synthetic::synthetic_pairs;
use mlconv_gec::Result;

/// Grammatical error correction with a convolutional encoder-decoder.
#[derive(Parser)]
#[command(name = "mlconv-gec", version)]
struct Cli {
    /// Experiment file (`[section]` + `key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// Seed for data splits, embeddings and tuning.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated training seeds, one model per seed.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, global = true)]
    beam: Option<usize>,
    /// Comma-separated checkpoint files to decode with.
    #[arg(long, global = true, value_delimiter = ',')]
    ensemble: Option<Vec<PathBuf>>,
    /// Rescoring feature groups: `eo`, `lm`, `eo,lm` or `none`.
    #[arg(long, global = true)]
    features: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dev split, BPE merges, vocabularies and segmented corpora.
    Preprocess,
    /// Subword embeddings for model initialization.
    Pretrain,
    /// One best checkpoint per training seed.
    Train,
    /// Word-level n-gram language model for rescoring.
    TrainLm,
    /// Ensemble beam search; writes n-best and top-1 files.
    Decode {
        /// Tokenized input, one sentence per line (dev sources by default).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Greedy search instead of beam search.
        #[arg(long)]
        greedy: bool,
    },
    /// Tunes rescoring weights on the dev n-best lists.
    Tune,
    /// Reranks the n-best lists with the tuned weights.
    Rescore,
    /// Precision, recall and F0.5 (and GLEU with references).
    Evaluate {
        #[arg(long)]
        hypotheses: Option<PathBuf>,
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Reference files for GLEU; repeat for several references.
        #[arg(long)]
        references: Vec<PathBuf>,
    },
    /// All stages in order.
    RunAll,
    /// Writes a synthetic learner corpus (`train.src`, `train.tgt`).
    Synthetic {
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        work_dir: cli.work_dir.clone(),
        seed: cli.seed,
        seeds: cli.seeds.clone(),
        beam: cli.beam,
        ensemble: cli.ensemble.clone(),
        features: cli.features.as_deref().map(pipeline::parse_features).transpose()?,
    });
    Ok(cfg)
}

fn write_lines(path: PathBuf, sentences: impl Iterator<Item = String>) -> Result<()> {
    let text: String = sentences.map(|s| s + "\n").collect();
    fs::write(path, text)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::Preprocess => {
            let st = pipeline::preprocess(&cfg)?;
            println!("{}", st.manifest.to_text().trim_end());
        }
        Command::Pretrain => {
            pipeline::pretrain(&cfg)?;
        }
        Command::Train => {
            let st = pipeline::train_models(&cfg)?;
            println!("checkpoints={}", st.manifest.get("checkpoints").unwrap_or_default());
        }
        Command::TrainLm => {
            pipeline::train_lm(&cfg)?;
        }
        Command::Decode { input, greedy } => {
            let st = pipeline::decode(
                &cfg,
                &DecodeOptions {
                    input: input.clone(),
                    greedy: *greedy,
                },
            )?;
            println!("output={}", st.dir.join("output.txt").display());
        }
        Command::Tune => {
            let st = pipeline::tune(&cfg)?;
            println!(
                "dev_f05={} beam_order_dev_f05={}",
                st.manifest.get("dev_f05").unwrap_or_default(),
                st.manifest.get("beam_order_dev_f05").unwrap_or_default()
            );
        }
        Command::Rescore => {
            let st = pipeline::rescore_stage(&cfg)?;
            println!("output={}", st.dir.join("output.txt").display());
        }
        Command::Evaluate {
            hypotheses,
            gold,
            references,
        } => {
            let (_, ev) = pipeline::evaluate(
                &cfg,
                &EvalOptions {
                    hypotheses: hypotheses.clone(),
                    gold: gold.clone(),
                    references: references.clone(),
                },
            )?;
            print!("{}", ev.to_human());
            println!("{}", ev.to_kv());
        }
        Command::RunAll => {
            let ev = pipeline::run_all(&cfg)?;
            print!("{}", ev.to_human());
            println!("{}", ev.to_kv());
        }
        Command::Synthetic { pairs, out } => {
            fs::create_dir_all(out)?;
            let data = synthetic_pairs(*pairs, cfg.seed);
            write_lines(out.join("train.src"), data.iter().map(|(s, _)| s.join(" ")))?;
            write_lines(out.join("train.tgt"), data.iter().map(|(_, t)| t.join(" ")))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error category={} {msg}", e.category());
            ExitCode::from(2)
        }
    }
}
