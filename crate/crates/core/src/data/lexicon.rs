use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};
use crate::container::{self, Format, Tensor};
use crate::numeric::DenseMatrix;
use crate::text::{
    build_idf, build_vocab, init_oov, EmbeddingError, EmbeddingTable, IdfTable, Provenance,
    Stopwords, TokenizerOptions, Vocabulary,
};

pub const LEXICON_FORMAT: Format = Format {
    magic: b"RCNQL1",
    version: 1,
};

/// Everything shared by the splits of one preprocessing run: vocabulary,
/// word vectors, idf weights, stopwords and tokenizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub embeddings: EmbeddingTable,
    pub idf: IdfTable,
    pub stopwords: Stopwords,
    pub tokenizer: TokenizerOptions,
}

impl Lexicon {
    /// Indexes, annotates and attaches overlap-count features to `ds`.
    pub fn prepare(&self, ds: &mut Dataset) {
        ds.index(self.embeddings.vocab());
        ds.annotate(&self.stopwords);
        ds.attach_features(&self.idf);
    }
}

/// Builds the vocabulary and idf weights over every sentence of `splits`,
/// obtains word vectors from `embeddings` and fills the rows it could not
/// supply with `U[-r, r]` samples drawn from `oov_seed`.
pub fn build_lexicon(
    splits: &[&Dataset],
    embeddings: impl FnOnce(Vocabulary) -> Result<EmbeddingTable, EmbeddingError>,
    oov_range: f64,
    oov_seed: u64,
    stopwords: Stopwords,
    tokenizer: TokenizerOptions,
) -> Result<Lexicon, EmbeddingError> {
    let vocab = build_vocab(splits.iter().flat_map(|d| d.sentences()));
    let idf = build_idf(splits.iter().flat_map(|d| d.sentences()));
    let mut table = embeddings(vocab)?;
    init_oov(&mut table, oov_range, oov_seed)?;
    Ok(Lexicon {
        embeddings: table,
        idf,
        stopwords,
        tokenizer,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    vocab: Vocabulary,
    provenance: Vec<Provenance>,
    idf: IdfTable,
    stopwords: Vec<String>,
    tokenizer: TokenizerOptions,
}

pub fn save_lexicon(lex: &Lexicon, path: impl AsRef<Path>) -> Result<(), DataError> {
    let e = &lex.embeddings;
    let meta = Meta {
        vocab: e.vocab().clone(),
        provenance: e.provenance().to_vec(),
        idf: lex.idf.clone(),
        stopwords: lex.stopwords.iter().map(str::to_string).collect(),
        tokenizer: lex.tokenizer,
    };
    let (rows, cols) = e.vectors().shape();
    let tensors = [Tensor::f64(
        "embeddings",
        vec![rows, cols],
        e.vectors().as_slice().to_vec(),
    )];
    Ok(container::write_file(
        path,
        LEXICON_FORMAT,
        &meta,
        &tensors,
    )?)
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon, DataError> {
    let mut c = container::read_file::<Meta>(path, LEXICON_FORMAT)?;
    let t = c.take("embeddings")?;
    let [rows, cols] = t.shape[..] else {
        return Err(DataError::Inconsistent(
            "embedding tensor is not a matrix".into(),
        ));
    };
    let crate::container::TensorData::F64(values) = t.data else {
        return Err(DataError::Inconsistent(
            "embedding tensor is not f64".into(),
        ));
    };
    let vectors = DenseMatrix::from_vec(rows, cols, values)
        .map_err(|e| DataError::Inconsistent(e.to_string()))?;
    let embeddings = EmbeddingTable::from_parts(c.meta.vocab, vectors, c.meta.provenance)
        .map_err(|e| DataError::Inconsistent(e.to_string()))?;
    Ok(Lexicon {
        embeddings,
        idf: c.meta.idf,
        stopwords: c.meta.stopwords.into_iter().collect(),
        tokenizer: c.meta.tokenizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::init_oov;

    #[test]
    fn roundtrip_is_exact() {
        let mut vocab = Vocabulary::new();
        vocab.insert("alpha");
        vocab.insert("beta");
        let mut embeddings = EmbeddingTable::random(vocab, 3);
        init_oov(&mut embeddings, 0.25, 5).unwrap();
        let lex = Lexicon {
            idf: crate::text::build_idf([["alpha".to_string()].as_slice()]),
            embeddings,
            stopwords: Stopwords::english(),
            tokenizer: TokenizerOptions {
                collapse_digit_runs: true,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.bin");
        save_lexicon(&lex, &path).unwrap();
        assert_eq!(load_lexicon(&path).unwrap(), lex);
    }
}
