use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

/// Static word vectors keyed by surface form.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    vectors: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            words: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        })
    }

    /// Builds a table from `words.len() × dim` row-major values.
    pub fn from_rows(dim: usize, words: Vec<String>, vectors: Vec<f64>) -> Result<Self> {
        let mut t = Self::new(dim)?;
        if vectors.len() != words.len() * dim {
            return Err(Error::dim("EmbeddingTable::from_rows", "value count is not words × dim"));
        }
        for (w, v) in words.into_iter().zip(vectors.chunks(dim)) {
            t.insert(w, v)?;
        }
        Ok(t)
    }

    /// Adds or replaces a vector; returns true when the word was already present.
    pub fn insert(&mut self, word: String, v: &[f64]) -> Result<bool> {
        if v.len() != self.dim {
            return Err(Error::dim(
                "EmbeddingTable::insert",
                format!("vector has length {}, table dim is {}", v.len(), self.dim),
            ));
        }
        if let Some(&i) = self.index.get(&word) {
            self.vectors[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
            return Ok(true);
        }
        self.index.insert(word.clone(), self.words.len());
        self.words.push(word);
        self.vectors.extend_from_slice(v);
        Ok(false)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn values(&self) -> &[f64] {
        &self.vectors
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Copies the vector for `word` into `out`, or zeros when absent.
    pub fn lookup_into(&self, word: &str, out: &mut [f64]) {
        match self.get(word) {
            Some(v) => out.copy_from_slice(v),
            None => out.iter_mut().for_each(|x| *x = 0.0),
        }
    }

    /// Parses `word v1 .. vd` lines. A leading `count dim` header line is
    /// skipped. Returns the table and the number of duplicate words.
    pub fn parse(text: &str) -> Result<(Self, usize)> {
        let mut table: Option<Self> = None;
        let mut dups = 0;
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.is_empty() {
                continue;
            }
            if n == 0 && parts.len() == 2 && parts.iter().all(|p| p.parse::<usize>().is_ok()) {
                continue;
            }
            let vals = parts[1..]
                .iter()
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: lineno,
                    msg: format!("bad number: {e}"),
                })?;
            let t = match &mut table {
                Some(t) => t,
                None => table.insert(Self::new(vals.len()).map_err(|_| Error::Parse {
                    line: lineno,
                    msg: "word without a vector".into(),
                })?),
            };
            if vals.len() != t.dim {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("vector has {} values, expected {}", vals.len(), t.dim),
                });
            }
            if t.insert(parts[0].to_string(), &vals)? {
                dups += 1;
            }
        }
        if dups > 0 {
            warn!("{dups} duplicate embedding words; the last occurrence wins");
        }
        let table = table.ok_or_else(|| Error::Parse {
            line: 0,
            msg: "embedding file has no vectors".into(),
        })?;
        Ok((table, dups))
    }

    pub fn load(path: &Path) -> Result<(Self, usize)> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, w) in self.words.iter().enumerate() {
            s.push_str(w);
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                write!(s, " {v:?}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_small_file() {
        let (t, d) = EmbeddingTable::parse("a 1 2 3\nb 4 5 6\n").unwrap();
        assert_eq!((t.len(), t.dim(), d), (2, 3, 0));
        assert_eq!(t.get("b").unwrap(), &[4.0, 5.0, 6.0]);
        let mut out = [9.0; 3];
        t.lookup_into("zzz", &mut out);
        assert_eq!(out, [0.0; 3]);
    }

    #[test]
    fn header_duplicates_and_errors() {
        let (t, d) = EmbeddingTable::parse("2 2\na 1 2\na 3 4\n").unwrap();
        assert_eq!((t.len(), d), (1, 1));
        assert_eq!(t.get("a").unwrap(), &[3.0, 4.0]);
        match EmbeddingTable::parse("a 1 2\nb 1 2 3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let t = EmbeddingTable::from_rows(2, vec!["x".into(), "y".into()], vec![0.1, -1e-17, 3.0, 1.0 / 3.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.txt");
        t.save(&p).unwrap();
        assert_eq!(EmbeddingTable::load(&p).unwrap().0, t);
    }
}
