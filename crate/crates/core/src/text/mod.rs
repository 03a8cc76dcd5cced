//! Text preparation: normalization, vocabulary, fixed-length encoding and
//! skip-gram pretraining of the word embeddings.

mod normalize;
mod skipgram;
mod vocab;

pub use normalize::{normalize, number_words, NUM_TOKEN, URL_TOKEN};
pub use skipgram::{pretrain_embeddings, EmbeddingMatrix, EmbeddingTrainer, SkipGram, SkipGramConfig};
pub use vocab::{build_vocab, encode, TokenSequence, Vocabulary, PAD_ID, UNK_ID};

/// Maximum encoded length of a submission text.
pub const SUBMISSION_MAX_LEN: usize = 50;
/// Maximum encoded length of a news text.
pub const NEWS_MAX_LEN: usize = 100;
