use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::{IngestError, Vocabulary, PAD_ID};
use crate::numerics::Tensor;

/// Half-width of the uniform range for vectors missing from the pretrained file.
pub const RANDOM_INIT_BOUND: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSource {
    Pretrained,
    Random,
}

/// `|V| × dim` word vectors recording whether each row was pretrained or random.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub vectors: Tensor,
    pub sources: Vec<RowSource>,
}

impl EmbeddingMatrix {
    /// All rows random, except the padding row which is zero.
    pub fn random<R: Rng + ?Sized>(vocab: &Vocabulary, dim: usize, rng: &mut R) -> Self {
        let mut vectors = Tensor::uniform(vec![vocab.len(), dim], RANDOM_INIT_BOUND, rng);
        if vocab.len() > PAD_ID {
            vectors.values_mut()[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
        }
        Self {
            vectors,
            sources: vec![RowSource::Random; vocab.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    /// Fraction of non-special rows copied from the pretrained file; 0 when there are none.
    pub fn coverage(&self) -> f64 {
        let regular = self.sources.len().saturating_sub(2);
        if regular == 0 {
            return 0.0;
        }
        let hits = self
            .sources
            .iter()
            .skip(2)
            .filter(|s| **s == RowSource::Pretrained)
            .count();
        hits as f64 / regular as f64
    }
}

/// Read a whitespace-separated vector file (`token v_1 … v_dim` per line).
///
/// Tokens may themselves contain spaces; the last `dim` fields are the vector.
/// The first occurrence of a token wins. Rows with no match keep a uniform
/// random draw from `[-0.1, 0.1]`.
pub fn load_embeddings<R: Rng + ?Sized>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    rng: &mut R,
) -> Result<EmbeddingMatrix, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut matrix = EmbeddingMatrix::random(vocab, dim, rng);
    let reader = BufReader::new(file);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if fields.len() < dim + 1 {
            return Err(IngestError::VectorWidth {
                path: path.to_path_buf(),
                line: lineno + 1,
                expected: dim,
                found: fields.len().saturating_sub(1),
            });
        }
        let split = fields.len() - dim;
        let token = fields[..split].join(" ");
        if !vocab.contains(&token) {
            continue;
        }
        let id = vocab.id(&token);
        if id == PAD_ID || matrix.sources[id] == RowSource::Pretrained {
            continue;
        }
        let row = &mut matrix.vectors.values_mut()[id * dim..(id + 1) * dim];
        for (slot, field) in row.iter_mut().zip(&fields[split..]) {
            *slot = field.parse::<f64>().map_err(|e| IngestError::Parse {
                location: format!("{}:{}", path.display(), lineno + 1),
                message: format!("bad vector component `{field}`: {e}"),
            })?;
        }
        matrix.sources[id] = RowSource::Pretrained;
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn copies_present_rows_and_randomizes_the_rest() {
        let f = write("food 0.5 -0.25 1e-3\n. . . 1 2 3\nfood 9 9 9\n");
        let vocab = Vocabulary::from_tokens(["food", "cheap"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = load_embeddings(f.path(), &vocab, 3, &mut rng).unwrap();
        let food = vocab.id("food");
        assert_eq!(m.vectors.row_slice(food), &[0.5, -0.25, 1e-3]);
        assert_eq!(m.sources[food], RowSource::Pretrained);
        let cheap = vocab.id("cheap");
        assert_eq!(m.sources[cheap], RowSource::Random);
        assert!(m.vectors.row_slice(cheap).iter().all(|v| v.abs() <= 0.1));
        assert!((m.coverage() - 0.5).abs() < 1e-15);
        assert_eq!(m.vectors.row_slice(PAD_ID), &[0.0; 3]);
    }

    #[test]
    fn wrong_width_names_the_line() {
        let f = write("a 1 2 3\nb 1 2\n");
        let vocab = Vocabulary::from_tokens(["a"]);
        let err = load_embeddings(f.path(), &vocab, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, IngestError::VectorWidth { line: 2, found: 2, .. }), "{err}");
    }

    #[test]
    fn empty_vocab_has_zero_coverage() {
        let f = write("a 1 2 3\n");
        let m = load_embeddings(f.path(), &Vocabulary::default(), 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.coverage(), 0.0);
        assert_eq!(m.vectors.shape(), &[2, 3]);
    }
}
