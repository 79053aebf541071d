use std::collections::HashMap;
use std::path::Path;

use crate::data::{read_embeddings, CorpusEntry};
use crate::error::{Error, Result};
use crate::linalg::EmbeddingMatrix;

use super::Embedder;

/// Teacher backed by precomputed embeddings: row `i` belongs to corpus
/// entry `i`.
#[derive(Debug, Clone)]
pub struct StoredTeacher {
    embeddings: EmbeddingMatrix,
    by_id: HashMap<u64, usize>,
    by_text: HashMap<String, usize>,
}

impl StoredTeacher {
    pub fn new(embeddings: EmbeddingMatrix, corpus: &[CorpusEntry]) -> Result<Self> {
        if embeddings.rows() != corpus.len() {
            return Err(Error::Input(format!(
                "{} stored vectors for {} corpus entries",
                embeddings.rows(),
                corpus.len()
            )));
        }
        let mut by_id = HashMap::with_capacity(corpus.len());
        let mut by_text = HashMap::with_capacity(corpus.len());
        for (row, e) in corpus.iter().enumerate() {
            if by_id.insert(e.id, row).is_some() {
                return Err(Error::Input(format!("duplicate corpus id {}", e.id)));
            }
            by_text.entry(e.text.clone()).or_insert(row);
        }
        Ok(Self {
            embeddings,
            by_id,
            by_text,
        })
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn embed_id(&self, id: u64) -> Result<&[f64]> {
        self.by_id
            .get(&id)
            .map(|&r| self.embeddings.row(r))
            .ok_or_else(|| Error::Lookup(format!("no stored embedding for id {id}")))
    }
}

impl Embedder for StoredTeacher {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.by_text
            .get(text)
            .map(|&r| self.embeddings.row(r).to_vec())
            .ok_or_else(|| Error::Lookup(format!("no stored embedding for sentence {text:?}")))
    }

    fn dim(&self) -> usize {
        self.embeddings.cols()
    }
}

pub fn teacher_from_file(path: &Path, corpus: &[CorpusEntry]) -> Result<StoredTeacher> {
    StoredTeacher::new(read_embeddings(path)?, corpus).map_err(|e| e.context(format!("reading {}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_embeddings;
    use crate::linalg::Matrix;

    fn corpus() -> Vec<CorpusEntry> {
        ["zero", "one", "two"]
            .iter()
            .enumerate()
            .map(|(i, t)| CorpusEntry {
                id: i as u64,
                text: t.to_string(),
            })
            .collect()
    }

    #[test]
    fn lookup_by_id_and_text() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.hpde");
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.5, 0.25], [-2.0, 4.0]]).unwrap();
        write_embeddings(&p, &m).unwrap();
        let t = teacher_from_file(&p, &corpus()).unwrap();
        assert_eq!(t.embed_id(2).unwrap(), &[-2.0, 4.0]);
        assert_eq!(t.embed("one").unwrap(), vec![0.5, 0.25]);
        assert!(matches!(t.embed_id(9), Err(Error::Lookup(_))));
        assert!(matches!(t.embed("nine"), Err(Error::Lookup(_))));
        assert_eq!(t.dim(), 2);
    }

    #[test]
    fn count_mismatch() {
        let m = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!(matches!(StoredTeacher::new(m, &corpus()), Err(Error::Input(_))));
    }
}
