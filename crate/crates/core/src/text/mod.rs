//! Raw text to annotated, indexed sentences.

mod embeddings;
mod idf;
mod overlap;
mod tokenize;
mod vocab;

pub use embeddings::{
    embeddings_from_word2vec, init_oov, load_word_embeddings, load_word_embeddings_from,
    read_word2vec, write_word2vec, EmbeddingError, EmbeddingFormat, EmbeddingTable,
    LoadedEmbeddings, Position, Provenance, Word2Vec, DEFAULT_OOV_RANGE,
};
pub use idf::{build_idf, IdfTable};
pub use overlap::{
    annotate_overlap, is_punctuation_token, overlap_count_features, AnnotatedSentence, Stopwords,
    FEATURE_COUNT,
};
pub use tokenize::{tokenize_normalize, tokenize_with, TokenizerOptions};
pub use vocab::{build_vocab, Vocabulary, UNK_INDEX, UNK_TOKEN};

use sha2::{Digest, Sha256};

/// Hex SHA-256 of the given lines joined by `\n`.
pub(crate) fn hash_lines<'a>(lines: impl IntoIterator<Item = &'a str>) -> String {
    let mut hasher = Sha256::new();
    for (i, line) in lines.into_iter().enumerate() {
        if i > 0 {
            hasher.update(b"\n");
        }
        hasher.update(line.as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
