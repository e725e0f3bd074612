//! Embedding-distance difficulty annotation for the textual and visual
//! analogy datasets, plus the portable vector file loader.
//!
//! Vector files are UTF-8 text: a `DIM <d>` header, then one
//! `key<TAB>v1 v2 ... vd` row per key. Lines starting with `#` are comments.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DatasetKind, Difficulty, TaskBody, TaskInstance};

#[derive(Debug, Error, PartialEq)]
pub enum VectorError {
    #[error("{0}")]
    Io(String),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("key `{key}` has dimension {found}, expected {expected}")]
    Dimension {
        key: String,
        found: usize,
        expected: usize,
    },
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("key `{0}` not in vector store")]
    MissingKey(String),
    #[error("zero vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    Mismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    #[default]
    WordEmbedding,
    ImageEncoder,
}

#[derive(Debug, Clone, Default)]
pub struct VectorStore {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    pub source: SourceTag,
}

impl VectorStore {
    pub fn new(dim: usize, source: SourceTag) -> Self {
        VectorStore {
            dim,
            vectors: HashMap::new(),
            source,
        }
    }

    pub fn insert(&mut self, key: &str, v: Vec<f64>) -> Result<(), VectorError> {
        if v.len() != self.dim {
            return Err(VectorError::Dimension {
                key: key.to_string(),
                found: v.len(),
                expected: self.dim,
            });
        }
        if self.vectors.contains_key(key) {
            return Err(VectorError::DuplicateKey(key.to_string()));
        }
        self.vectors.insert(key.to_string(), v);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    /// Exact key first, then the mean of its whitespace-separated words.
    pub fn lookup(&self, key: &str) -> Result<Vec<f64>, VectorError> {
        if let Some(v) = self.get(key) {
            return Ok(v.to_vec());
        }
        let words: Vec<&str> = key.split_whitespace().collect();
        if words.len() < 2 {
            return Err(VectorError::MissingKey(key.to_string()));
        }
        let mut acc = vec![0.0; self.dim];
        for w in &words {
            let v = self
                .get(w)
                .ok_or_else(|| VectorError::MissingKey(w.to_string()))?;
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        let n = words.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }

    pub fn to_text(&self) -> String {
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        let mut out = format!("DIM {}\n", self.dim);
        for k in keys {
            let vals: Vec<String> = self.vectors[k].iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&format!("{k}\t{}\n", vals.join(" ")));
        }
        out
    }
}

pub fn parse_vectors(text: &str) -> Result<VectorStore, VectorError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or(VectorError::Format {
        line: 1,
        msg: "missing `DIM <d>` header".into(),
    })?;
    let dim = header
        .strip_prefix("DIM ")
        .and_then(|d| d.trim().parse::<usize>().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| VectorError::Format {
            line: hline,
            msg: format!("bad header `{header}`"),
        })?;
    let mut store = VectorStore::new(dim, SourceTag::default());
    for (line, l) in lines {
        let (key, rest) = l.split_once('\t').ok_or_else(|| VectorError::Format {
            line,
            msg: "expected `key<TAB>values`".into(),
        })?;
        let v = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| VectorError::Format {
                line,
                msg: format!("non-numeric or non-finite value for `{key}`"),
            })?;
        store.insert(key, v)?;
    }
    Ok(store)
}

pub fn load_vectors(path: &Path) -> Result<VectorStore, VectorError> {
    let text = fs::read_to_string(path)
        .map_err(|e| VectorError::Io(format!("{}: {e}", path.display())))?;
    parse_vectors(&text)
}

pub fn cos_dist(u: &[f64], v: &[f64]) -> Result<f64, VectorError> {
    if u.len() != v.len() {
        return Err(VectorError::Mismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    Ok((1.0 - dot / (nu * nv)).clamp(0.0, 2.0))
}

/// Mean of the two cross-pair cosine distances.
pub fn sem_dist(
    source: (&str, &str),
    target: (&str, &str),
    store: &VectorStore,
) -> Result<f64, VectorError> {
    let a = store.lookup(source.0)?;
    let a2 = store.lookup(source.1)?;
    let b = store.lookup(target.0)?;
    let b2 = store.lookup(target.1)?;
    Ok((cos_dist(&a, &b)? + cos_dist(&a2, &b2)?) / 2.0)
}

/// Tier cut-offs; both endpoints of `[low, high]` belong to the medium tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub low: f64,
    pub high: f64,
}

pub const EKAR_THRESHOLDS: ThresholdSpec = ThresholdSpec {
    low: 0.70,
    high: 0.80,
};
pub const VASR_THRESHOLDS: ThresholdSpec = ThresholdSpec {
    low: 0.70,
    high: 0.76,
};

pub fn classify_threshold(value: f64, spec: ThresholdSpec) -> Difficulty {
    debug_assert!(spec.low < spec.high);
    if value < spec.low {
        Difficulty::Easy
    } else if value <= spec.high {
        Difficulty::Medium
    } else {
        Difficulty::Hard
    }
}

pub fn thresholds_for(kind: DatasetKind) -> Option<ThresholdSpec> {
    match kind {
        DatasetKind::Ekar => Some(EKAR_THRESHOLDS),
        DatasetKind::Vasr => Some(VASR_THRESHOLDS),
        _ => None,
    }
}

/// Recomputes difficulty for an analogy instance from its (A, A') and
/// (B, gold B') pairs. Returns the distance that drove the label.
pub fn annotate(
    instance: &mut TaskInstance,
    store: &VectorStore,
    spec: ThresholdSpec,
) -> Result<f64, VectorError> {
    let TaskBody::Analogy(a) = &instance.body else {
        return Err(VectorError::MissingKey(instance.id.clone()));
    };
    let d = sem_dist((&a.source.0, &a.source.1), (&a.target, &a.gold), store)?;
    instance.difficulty = classify_threshold(d, spec);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn store() -> VectorStore {
        parse_vectors("DIM 2\na\t1 0\nb\t0 1\nc\t-1 0\nd\t1 1\n").unwrap()
    }

    #[test]
    fn loads_and_validates() {
        let s = parse_vectors("DIM 4\nx\t1 2 3 4\ny\t0 0 0 1\nz\t1 1 1 1\n").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.dim(), 4);
        let e = parse_vectors("DIM 4\nx\t1 2 3 4\nbad\t1 2 3 4 5\n").unwrap_err();
        assert!(matches!(e, VectorError::Dimension { ref key, found: 5, .. } if key == "bad"));
        assert!(parse_vectors("DIM 4\n").unwrap().is_empty());
        assert!(matches!(
            parse_vectors("DIM 1\nx\t1\nx\t2\n"),
            Err(VectorError::DuplicateKey(_))
        ));
        assert!(parse_vectors("DIM 1\nx\tNaN\n").is_err());
        assert!(parse_vectors("x\t1\n").is_err());
        assert_eq!(
            parse_vectors("# layer fc7\nDIM 1\n# note\nx\t1\n")
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn round_trips_through_text() {
        let s = store();
        let back = parse_vectors(&s.to_text()).unwrap();
        for k in ["a", "b", "c", "d"] {
            assert_eq!(s.get(k), back.get(k));
        }
    }

    #[test]
    fn cosine_distances() {
        assert_abs_diff_eq!(
            cos_dist(&[1.0, 2.0], &[1.0, 2.0]).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cos_dist(&[1.0, 0.0], &[0.0, 1.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            cos_dist(&[1.0, 2.0], &[-1.0, -2.0]).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        assert_eq!(
            cos_dist(&[0.0, 0.0], &[1.0, 0.0]),
            Err(VectorError::ZeroVector)
        );
        assert_eq!(
            cos_dist(&[1.0], &[1.0, 0.0]),
            Err(VectorError::Mismatch(1, 2))
        );
    }

    #[test]
    fn semantic_distance() {
        let s = store();
        assert_abs_diff_eq!(
            sem_dist(("a", "b"), ("a", "b"), &s).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // cos_dist(a, b) = 1, cos_dist(b, c) = 1; cos_dist(a, c) = 2
        assert_abs_diff_eq!(
            sem_dist(("a", "b"), ("b", "c"), &s).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            sem_dist(("a", "a"), ("c", "b"), &s).unwrap(),
            1.5,
            epsilon = 1e-12
        );
        assert_eq!(
            sem_dist(("a", "zz"), ("a", "b"), &s),
            Err(VectorError::MissingKey("zz".into()))
        );
    }

    #[test]
    fn multi_word_keys_mean_pool() {
        let s = store();
        assert_eq!(s.lookup("a b").unwrap(), vec![0.5, 0.5]);
        assert_abs_diff_eq!(
            cos_dist(&s.lookup("a b").unwrap(), s.get("d").unwrap()).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn thresholds() {
        assert_eq!(classify_threshold(0.65, EKAR_THRESHOLDS), Difficulty::Easy);
        assert_eq!(
            classify_threshold(0.70, EKAR_THRESHOLDS),
            Difficulty::Medium
        );
        assert_eq!(
            classify_threshold(0.75, EKAR_THRESHOLDS),
            Difficulty::Medium
        );
        assert_eq!(
            classify_threshold(0.80, EKAR_THRESHOLDS),
            Difficulty::Medium
        );
        assert_eq!(classify_threshold(0.85, EKAR_THRESHOLDS), Difficulty::Hard);
        assert_eq!(
            classify_threshold(0.76, VASR_THRESHOLDS),
            Difficulty::Medium
        );
        assert_eq!(classify_threshold(0.77, VASR_THRESHOLDS), Difficulty::Hard);
    }
}
