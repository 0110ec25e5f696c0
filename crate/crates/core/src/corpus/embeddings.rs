use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::vocab::{Vocabulary, PAD_ID};
use super::{CorpusError, Result};
use crate::autodiff::Tensor;

/// Default word-vector width.
pub const EMBEDDING_DIM: usize = 300;

/// `V x d_w` word vectors with per-row coverage flags.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub covered: Vec<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub vocab_size: usize,
    pub covered: usize,
    pub coverage: f64,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn coverage(&self) -> CoverageReport {
        let covered = self.covered.iter().filter(|c| **c).count();
        CoverageReport {
            vocab_size: self.covered.len(),
            covered,
            coverage: covered as f64 / self.covered.len().max(1) as f64,
            dim: self.matrix.cols(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }
}

/// Reads word2vec text vectors for the words of `vocab`.
///
/// Rows of words present in the file are copied verbatim; every other row
/// keeps its Xavier initialization, and the `<pad>` row is zero. An optional
/// `count dim` header line is accepted.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matrix = Tensor::xavier(vocab.len(), dim, &mut rng);
    let mut covered = vec![false; vocab.len()];
    let reader = BufReader::new(std::fs::File::open(path)?);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if i == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
            let header_dim: usize = values[0].parse().map_err(|_| CorpusError::Parse {
                line: 1,
                reason: "bad header".into(),
            })?;
            if header_dim != dim {
                return Err(CorpusError::EmbeddingDimension {
                    line: 1,
                    expected: dim,
                    found: header_dim,
                });
            }
            continue;
        }
        if values.len() != dim {
            return Err(CorpusError::EmbeddingDimension {
                line: i + 1,
                expected: dim,
                found: values.len(),
            });
        }
        let Some(id) = vocab.id(word) else { continue };
        let row: Vec<f64> = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CorpusError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
        matrix.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&row);
        covered[id] = true;
    }
    matrix.data_mut()[PAD_ID * dim..(PAD_ID + 1) * dim].fill(0.0);
    covered[PAD_ID] = false;
    Ok(EmbeddingTable { matrix, covered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;
    use std::io::Write;

    fn vocab() -> Vocabulary {
        let toks = [tokenize("good bad good bad movie")];
        Vocabulary::build(toks.iter().map(|t| t.as_slice()), 1)
    }

    fn vec_line(word: &str, dim: usize, base: f64) -> String {
        let vals: Vec<String> = (0..dim)
            .map(|i| format!("{}", base + i as f64 * 0.01))
            .collect();
        format!("{word} {}", vals.join(" "))
    }

    #[test]
    fn copies_covered_rows_and_initializes_the_rest() {
        let v = vocab();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "2 300").unwrap();
        writeln!(f, "{}", vec_line("good", 300, 0.5)).unwrap();
        writeln!(f, "{}", vec_line("<pad>", 300, 9.0)).unwrap();
        let t = load_embeddings(f.path(), &v, 300, 1).unwrap();
        let good = v.id("good").unwrap();
        assert_eq!(t.matrix.row_slice(good)[0], 0.5);
        assert!((t.matrix.row_slice(good)[299] - (0.5 + 2.99)).abs() < 1e-12);
        assert!(t.covered[good]);
        let bad = v.id("bad").unwrap();
        assert!(!t.covered[bad]);
        assert!(t.matrix.row_slice(bad).iter().any(|x| *x != 0.0));
        assert!(t.matrix.row_slice(PAD_ID).iter().all(|x| *x == 0.0));
        assert_eq!(t.coverage().covered, 1);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{}", vec_line("good", 200, 0.1)).unwrap();
        let err = load_embeddings(f.path(), &vocab(), 300, 1).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::EmbeddingDimension {
                expected: 300,
                found: 200,
                ..
            }
        ));
    }
}
