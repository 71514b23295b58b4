//! word2vec text/binary readers and writers plus the embedding table `W`.

use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Vocabulary;
use crate::numeric::DenseMatrix;

pub const DEFAULT_OOV_RANGE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Line(usize),
    Byte(u64),
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Position::Line(l) => write!(f, "line {l}"),
            Position::Byte(b) => write!(f, "byte {b}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed word2vec header at {0}: expected `<count> <dim>`")]
    MalformedHeader(Position),
    #[error("dimension mismatch at {position}: expected {expected} values, found {found}")]
    DimensionMismatch {
        position: Position,
        expected: usize,
        found: usize,
    },
    #[error("invalid number `{value}` at {position}")]
    BadValue { position: Position, value: String },
    #[error("truncated binary payload at {position} (entry {entry})")]
    Truncated { position: Position, entry: usize },
    #[error("token is not valid UTF-8 at {0}")]
    InvalidUtf8(Position),
    #[error("header declares {declared} entries, file has {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("OOV range half-width must be positive, got {0}")]
    InvalidRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingFormat {
    #[serde(rename = "word2vec-text")]
    Text,
    #[serde(rename = "word2vec-binary")]
    Binary,
}

impl std::str::FromStr for EmbeddingFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word2vec-text" | "text" => Ok(EmbeddingFormat::Text),
            "word2vec-binary" | "binary" => Ok(EmbeddingFormat::Binary),
            other => Err(format!("unknown embedding format `{other}`")),
        }
    }
}

/// Entries of a word2vec file, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Word2Vec {
    pub dim: usize,
    pub words: Vec<String>,
    pub vectors: Vec<Vec<f32>>,
}

fn parse_header(line: &str, position: Position) -> Result<(usize, usize), EmbeddingError> {
    let mut it = line.split_whitespace();
    let parsed = (
        it.next().and_then(|s| s.parse::<usize>().ok()),
        it.next().and_then(|s| s.parse::<usize>().ok()),
        it.next(),
    );
    match parsed {
        (Some(count), Some(dim), None) if dim > 0 => Ok((count, dim)),
        _ => Err(EmbeddingError::MalformedHeader(position)),
    }
}

/// Streams entries to `visit` without materializing the whole file.
/// Returns the declared dimension.
fn visit_text<R: BufRead>(
    reader: R,
    mut visit: impl FnMut(&str, &[f32]),
) -> Result<usize, EmbeddingError> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or(EmbeddingError::MalformedHeader(Position::Line(1)))?;
    let (count, dim) = parse_header(&header, Position::Line(1))?;
    let mut found = 0;
    let mut values = Vec::with_capacity(dim);
    for (i, line) in lines.enumerate() {
        let line = line?;
        let position = Position::Line(i + 2);
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        values.clear();
        for field in fields {
            let v = field.parse::<f32>().map_err(|_| EmbeddingError::BadValue {
                position,
                value: field.to_string(),
            })?;
            values.push(v);
        }
        if values.len() != dim {
            return Err(EmbeddingError::DimensionMismatch {
                position,
                expected: dim,
                found: values.len(),
            });
        }
        found += 1;
        if found > count {
            break;
        }
        visit(word, &values);
    }
    if found != count {
        return Err(EmbeddingError::CountMismatch {
            declared: count,
            found,
        });
    }
    Ok(dim)
}

fn visit_binary<R: BufRead>(
    mut reader: R,
    mut visit: impl FnMut(&str, &[f32]),
) -> Result<usize, EmbeddingError> {
    let mut header = Vec::new();
    reader.read_until(b'\n', &mut header)?;
    let header_str = std::str::from_utf8(&header)
        .map_err(|_| EmbeddingError::MalformedHeader(Position::Byte(0)))?;
    let (count, dim) = parse_header(header_str, Position::Byte(0))?;
    let mut offset = header.len() as u64;
    let mut token = Vec::new();
    let mut payload = vec![0u8; dim * 4];
    let mut values = vec![0f32; dim];
    for entry in 0..count {
        // the reference tool writes a newline after each vector; skip it
        loop {
            let buf = reader.fill_buf()?;
            match buf.first() {
                Some(b'\n') | Some(b' ') => {
                    reader.consume(1);
                    offset += 1;
                }
                Some(_) => break,
                None => {
                    return Err(EmbeddingError::Truncated {
                        position: Position::Byte(offset),
                        entry,
                    })
                }
            }
        }
        token.clear();
        let n = reader.read_until(b' ', &mut token)?;
        if token.last() != Some(&b' ') {
            return Err(EmbeddingError::Truncated {
                position: Position::Byte(offset + n as u64),
                entry,
            });
        }
        token.pop();
        let word = std::str::from_utf8(&token)
            .map_err(|_| EmbeddingError::InvalidUtf8(Position::Byte(offset)))?;
        offset += n as u64;
        let mut filled = 0;
        while filled < payload.len() {
            let got = reader.read(&mut payload[filled..])?;
            if got == 0 {
                return Err(EmbeddingError::Truncated {
                    position: Position::Byte(offset + filled as u64),
                    entry,
                });
            }
            filled += got;
        }
        offset += payload.len() as u64;
        for (v, chunk) in values.iter_mut().zip(payload.chunks_exact(4)) {
            *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        visit(word, &values);
    }
    Ok(dim)
}

fn visit_word2vec<R: BufRead>(
    reader: R,
    format: EmbeddingFormat,
    visit: impl FnMut(&str, &[f32]),
) -> Result<usize, EmbeddingError> {
    match format {
        EmbeddingFormat::Text => visit_text(reader, visit),
        EmbeddingFormat::Binary => visit_binary(reader, visit),
    }
}

/// Reads a complete word2vec file into memory.
pub fn read_word2vec<R: BufRead>(
    reader: R,
    format: EmbeddingFormat,
) -> Result<Word2Vec, EmbeddingError> {
    let mut words = Vec::new();
    let mut vectors = Vec::new();
    let dim = visit_word2vec(reader, format, |w, v| {
        words.push(w.to_string());
        vectors.push(v.to_vec());
    })?;
    Ok(Word2Vec {
        dim,
        words,
        vectors,
    })
}

/// Writes entries in word2vec format. Text values use the shortest decimal
/// representation that parses back to the same `f32`.
pub fn write_word2vec<W: Write>(
    mut w: W,
    format: EmbeddingFormat,
    words: &[String],
    vectors: &[Vec<f32>],
) -> io::Result<()> {
    let dim = vectors.first().map_or(0, Vec::len);
    writeln!(w, "{} {}", words.len(), dim)?;
    for (word, vector) in words.iter().zip(vectors) {
        match format {
            EmbeddingFormat::Text => {
                write!(w, "{word}")?;
                for v in vector {
                    write!(w, " {v}")?;
                }
                writeln!(w)?;
            }
            EmbeddingFormat::Binary => {
                write!(w, "{word} ")?;
                for v in vector {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(b"\n")?;
            }
        }
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Pretrained,
    Random,
}

/// Word embedding matrix `W`, one row of `d_w` values per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    vectors: DenseMatrix,
    provenance: Vec<Provenance>,
}

impl EmbeddingTable {
    /// All rows zero and flagged random; fill them with [`init_oov`].
    pub fn random(vocab: Vocabulary, dim: usize) -> Self {
        let n = vocab.len();
        EmbeddingTable {
            vectors: DenseMatrix::zeros(n, dim),
            provenance: vec![Provenance::Random; n],
            vocab,
        }
    }

    pub fn from_parts(
        vocab: Vocabulary,
        vectors: DenseMatrix,
        provenance: Vec<Provenance>,
    ) -> Result<Self, String> {
        if vectors.rows() != vocab.len() || provenance.len() != vocab.len() {
            return Err(format!(
                "embedding table has {} rows and {} flags for a vocabulary of {}",
                vectors.rows(),
                provenance.len(),
                vocab.len()
            ));
        }
        Ok(EmbeddingTable {
            vocab,
            vectors,
            provenance,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vectors(&self) -> &DenseMatrix {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.vocab.get(token).map(|i| self.vectors.row(i))
    }

    /// Fraction of rows initialized from a pretrained file.
    pub fn coverage(&self) -> f64 {
        let pretrained = self
            .provenance
            .iter()
            .filter(|p| **p == Provenance::Pretrained)
            .count();
        pretrained as f64 / self.provenance.len() as f64
    }

    pub fn into_parts(self) -> (Vocabulary, DenseMatrix, Vec<Provenance>) {
        (self.vocab, self.vectors, self.provenance)
    }

    /// Writes the table in word2vec format (values narrowed to `f32`).
    pub fn save<W: Write>(&self, w: W, format: EmbeddingFormat) -> io::Result<()> {
        let vectors: Vec<Vec<f32>> = (0..self.vectors.rows())
            .map(|r| self.vectors.row(r).iter().map(|&v| v as f32).collect())
            .collect();
        write_word2vec(w, format, self.vocab.tokens(), &vectors)
    }
}

#[derive(Debug, Clone)]
pub struct LoadedEmbeddings {
    pub table: EmbeddingTable,
    pub coverage: f64,
}

/// Copies the vectors of vocabulary tokens found in the file. Rows for the
/// remaining tokens are zero and flagged [`Provenance::Random`]; fill them
/// with [`init_oov`]. The first occurrence of a duplicated word wins.
pub fn load_word_embeddings(
    path: impl AsRef<Path>,
    format: EmbeddingFormat,
    vocab: Vocabulary,
) -> Result<LoadedEmbeddings, EmbeddingError> {
    let reader = BufReader::new(File::open(path)?);
    load_word_embeddings_from(reader, format, vocab)
}

pub fn load_word_embeddings_from<R: BufRead>(
    reader: R,
    format: EmbeddingFormat,
    vocab: Vocabulary,
) -> Result<LoadedEmbeddings, EmbeddingError> {
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let dim = visit_word2vec(reader, format, |word, values| {
        if let Some(i) = vocab.get(word) {
            rows[i].get_or_insert_with(|| values.iter().map(|&v| f64::from(v)).collect());
        }
    })?;
    Ok(assemble(vocab, dim, rows))
}

/// [`load_word_embeddings`] over entries already in memory.
pub fn embeddings_from_word2vec(w2v: &Word2Vec, vocab: Vocabulary) -> LoadedEmbeddings {
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (word, values) in w2v.words.iter().zip(&w2v.vectors) {
        if let Some(i) = vocab.get(word) {
            rows[i].get_or_insert_with(|| values.iter().map(|&v| f64::from(v)).collect());
        }
    }
    assemble(vocab, w2v.dim, rows)
}

fn assemble(vocab: Vocabulary, dim: usize, rows: Vec<Option<Vec<f64>>>) -> LoadedEmbeddings {
    let mut vectors = DenseMatrix::zeros(vocab.len(), dim);
    let mut provenance = vec![Provenance::Random; vocab.len()];
    for (i, row) in rows.into_iter().enumerate() {
        if let Some(row) = row {
            vectors.row_mut(i).copy_from_slice(&row);
            provenance[i] = Provenance::Pretrained;
        }
    }
    let table = EmbeddingTable {
        vocab,
        vectors,
        provenance,
    };
    LoadedEmbeddings {
        coverage: table.coverage(),
        table,
    }
}

/// Fills every random-flagged row with i.i.d. samples from `U[-r, r]`.
pub fn init_oov(
    table: &mut EmbeddingTable,
    half_width: f64,
    seed: u64,
) -> Result<(), EmbeddingError> {
    if !(half_width > 0.0 && half_width.is_finite()) {
        return Err(EmbeddingError::InvalidRange(half_width));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new_inclusive(-half_width, half_width);
    for (i, p) in table.provenance.iter().enumerate() {
        if *p == Provenance::Random {
            for v in table.vectors.row_mut(i) {
                *v = dist.sample(&mut rng);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn vocab(words: &[&str]) -> Vocabulary {
        let mut v = Vocabulary::new();
        for w in words {
            v.insert(w);
        }
        v
    }

    const TEXT: &str = "2 3\ncat 0.5 -1.25 3\ndog 1e-3 0.1 -0.2\n";

    #[test]
    fn text_roundtrip_bit_equal() {
        let loaded = load_word_embeddings_from(
            Cursor::new(TEXT),
            EmbeddingFormat::Text,
            vocab(&["cat", "dog"]),
        )
        .unwrap();
        let t = &loaded.table;
        assert_eq!(t.vector("cat").unwrap(), &[0.5, -1.25, 3.0]);
        assert_eq!(t.vector("dog").unwrap()[1], f64::from(0.1f32));
        // two of three rows (unk is random)
        assert!((loaded.coverage - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            t.provenance(),
            [
                Provenance::Random,
                Provenance::Pretrained,
                Provenance::Pretrained
            ]
        );

        let mut out = Vec::new();
        t.save(&mut out, EmbeddingFormat::Text).unwrap();
        let back = read_word2vec(Cursor::new(out), EmbeddingFormat::Text).unwrap();
        assert_eq!(back.vectors[1], vec![0.5, -1.25, 3.0]);
        assert_eq!(back.vectors[2], vec![1e-3, 0.1, -0.2]);
    }

    #[test]
    fn empty_intersection() {
        let loaded =
            load_word_embeddings_from(Cursor::new(TEXT), EmbeddingFormat::Text, vocab(&["emu"]))
                .unwrap();
        assert_eq!(loaded.coverage, 0.0);
        assert!(loaded
            .table
            .provenance()
            .iter()
            .all(|p| *p == Provenance::Random));
    }

    /// Binary fixture assembled byte by byte, independent of `write_word2vec`.
    fn binary_fixture() -> Vec<u8> {
        let mut bytes = b"2 3\n".to_vec();
        for (word, vals) in [("cat", [0.5f32, -1.25, 3.0]), ("dog", [1e-3, 0.1, -0.2])] {
            bytes.extend_from_slice(word.as_bytes());
            bytes.push(b' ');
            for v in vals {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            bytes.push(b'\n');
        }
        bytes
    }

    #[test]
    fn binary_matches_text() {
        let v = vocab(&["dog", "cat", "emu"]);
        let text =
            load_word_embeddings_from(Cursor::new(TEXT), EmbeddingFormat::Text, v.clone()).unwrap();
        let bin =
            load_word_embeddings_from(Cursor::new(binary_fixture()), EmbeddingFormat::Binary, v)
                .unwrap();
        assert_eq!(text.table, bin.table);
        assert_eq!(text.coverage, bin.coverage);

        let mut written = Vec::new();
        let parsed = read_word2vec(Cursor::new(binary_fixture()), EmbeddingFormat::Binary).unwrap();
        write_word2vec(
            &mut written,
            EmbeddingFormat::Binary,
            &parsed.words,
            &parsed.vectors,
        )
        .unwrap();
        assert_eq!(written, binary_fixture());
    }

    #[test]
    fn binary_without_newlines() {
        let bytes: Vec<u8> = binary_fixture();
        // drop the separator newline between entries
        let mut compact = bytes[..4 + 4 + 12].to_vec();
        compact.extend_from_slice(&bytes[4 + 4 + 12 + 1..bytes.len() - 1]);
        let parsed = read_word2vec(Cursor::new(compact), EmbeddingFormat::Binary).unwrap();
        assert_eq!(parsed.words, ["cat", "dog"]);
    }

    #[test]
    fn parse_errors_are_distinct() {
        let err = |input: &[u8], f| read_word2vec(Cursor::new(input.to_vec()), f).unwrap_err();
        assert!(matches!(
            err(b"two 3\n", EmbeddingFormat::Text),
            EmbeddingError::MalformedHeader(Position::Line(1))
        ));
        assert!(matches!(
            err(b"1 3\ncat 1 2\n", EmbeddingFormat::Text),
            EmbeddingError::DimensionMismatch {
                position: Position::Line(2),
                expected: 3,
                found: 2
            }
        ));
        assert!(matches!(
            err(b"1 2\ncat 1 x\n", EmbeddingFormat::Text),
            EmbeddingError::BadValue {
                position: Position::Line(2),
                ..
            }
        ));
        assert!(matches!(
            err(b"3 2\ncat 1 2\n", EmbeddingFormat::Text),
            EmbeddingError::CountMismatch {
                declared: 3,
                found: 1
            }
        ));
        let fixture = binary_fixture();
        assert!(matches!(
            err(&fixture[..fixture.len() - 3], EmbeddingFormat::Binary),
            EmbeddingError::Truncated { entry: 1, .. }
        ));
        assert!(matches!(
            err(b"x\n", EmbeddingFormat::Binary),
            EmbeddingError::MalformedHeader(Position::Byte(0))
        ));
    }

    #[test]
    fn oov_init_is_seeded_and_bounded() {
        let v = vocab(&["a", "b", "c"]);
        let mut t1 = EmbeddingTable::random(v.clone(), 8);
        let mut t2 = EmbeddingTable::random(v, 8);
        init_oov(&mut t1, DEFAULT_OOV_RANGE, 11).unwrap();
        init_oov(&mut t2, DEFAULT_OOV_RANGE, 11).unwrap();
        assert_eq!(t1, t2);
        assert!(t1.vectors().as_slice().iter().all(|v| v.abs() <= 0.25));
        assert!(init_oov(&mut t1, 0.0, 1).is_err());
    }

    #[test]
    fn oov_leaves_pretrained_rows() {
        let mut loaded = load_word_embeddings_from(
            Cursor::new(TEXT),
            EmbeddingFormat::Text,
            vocab(&["cat", "emu"]),
        )
        .unwrap();
        init_oov(&mut loaded.table, 0.25, 3).unwrap();
        assert_eq!(loaded.table.vector("cat").unwrap(), &[0.5, -1.25, 3.0]);
        assert!(loaded
            .table
            .vector("emu")
            .unwrap()
            .iter()
            .any(|&v| v != 0.0));
    }

    #[test]
    fn oov_sample_mean_is_near_zero() {
        // U[-r, r] has variance r^2 / 3; the mean of N samples has sd r / sqrt(3N)
        let mut vocab = Vocabulary::new();
        for i in 0..99 {
            vocab.insert(&format!("w{i}"));
        }
        let mut t = EmbeddingTable::random(vocab, 100);
        init_oov(&mut t, 0.25, 5).unwrap();
        let values = t.vectors().as_slice();
        assert_eq!(values.len(), 10_000);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let sd = 0.25 / (3.0 * values.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd, "mean {mean} vs 3 sd {}", 3.0 * sd);
    }
}
