//! Corpus ingestion, vocabularies, padded batches with per-example copy
//! vocabularies, and the synthetic headline corpus.

mod batch;
mod corpus;
mod synth;
mod vocab;

pub use batch::{make_batch, Batch};
pub use corpus::{load_corpus, parse_corpus, write_corpus, Example, LoadReport};
pub use synth::{gen_synthetic_corpus, SynthConfig};
pub use vocab::{Vocab, Vocabs, DEP_VOCAB_MAX, EOS, POS_VOCAB_MAX, PAD, SOS, UNK, WORD_VOCAB_MAX};
