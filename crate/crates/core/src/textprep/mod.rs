//! Corpus ingestion, BPE subword segmentation and vocabularies.

mod bpe;
mod corpus;
mod vocab;

pub use bpe::{desegment, learn_bpe, BpeModel, CONTINUATION, END_OF_WORD};
pub use corpus::{
    load_parallel, pair_lines, read_lines, read_tokenized, tokenize, LoadReport, ParallelCorpus,
    Sentence,
};
pub use vocab::{Vocabulary, BOS, BOS_ID, EOS, EOS_ID, PAD, PAD_ID, UNK, UNK_ID};
