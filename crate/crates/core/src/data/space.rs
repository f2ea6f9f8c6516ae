use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::matrix::dot;
use crate::numerics::Matrix;

/// Class names with unit-norm semantic embeddings, split into disjoint seen and
/// unseen groups. Rows are ordered seen classes first, then unseen classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticSpace {
    class_names: Vec<String>,
    embeddings: Matrix,
    n_seen: usize,
}

impl SemanticSpace {
    /// `embeddings` rows are normalized; the first `n_seen` rows are the seen group.
    pub fn new(class_names: Vec<String>, embeddings: Matrix, n_seen: usize) -> Result<Self> {
        if class_names.len() != embeddings.rows() {
            return Err(Error::Format(format!(
                "{} class names for {} embedding rows",
                class_names.len(),
                embeddings.rows()
            )));
        }
        if n_seen > class_names.len() {
            return Err(Error::param(format!(
                "{n_seen} seen classes requested out of {}",
                class_names.len()
            )));
        }
        let mut names = HashSet::new();
        for n in &class_names {
            if !names.insert(n.as_str()) {
                return Err(Error::Format(format!("duplicate class name '{n}'")));
            }
        }
        if !embeddings.is_finite() {
            return Err(Error::Format("non-finite semantic embedding".into()));
        }
        let (embeddings, zero) = embeddings.l2_normalize_rows();
        if let Some(&r) = zero.first() {
            return Err(Error::Degenerate(format!(
                "semantic embedding of '{}' is the zero vector",
                class_names[r]
            )));
        }
        Ok(Self {
            class_names,
            embeddings,
            n_seen,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn name(&self, class: usize) -> &str {
        &self.class_names[class]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    /// Unit-norm semantic rows, one per class.
    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn embedding(&self, class: usize) -> &[f64] {
        self.embeddings.row(class)
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_seen(&self) -> usize {
        self.n_seen
    }

    pub fn num_unseen(&self) -> usize {
        self.class_names.len() - self.n_seen
    }

    pub fn seen_ids(&self) -> std::ops::Range<usize> {
        0..self.n_seen
    }

    pub fn unseen_ids(&self) -> std::ops::Range<usize> {
        self.n_seen..self.class_names.len()
    }

    pub fn is_seen(&self, class: usize) -> bool {
        class < self.n_seen
    }

    /// Embedding rows for the given classes, in order.
    pub fn rows_for(&self, classes: &[usize]) -> Result<Matrix> {
        self.embeddings.select_rows(classes)
    }

    /// Cosine similarity between two classes' embeddings.
    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        dot(self.embedding(a), self.embedding(b))
    }

    /// Reads a word2vec-style text file (`N D` header, then `name v1 … vD` per
    /// line) and keeps the requested classes: seen names first, then unseen.
    pub fn load(path: &Path, seen_names: &[String], unseen_names: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, seen_names, unseen_names)
    }

    pub fn parse(text: &str, seen_names: &[String], unseen_names: &[String]) -> Result<Self> {
        let table = parse_embedding_text(text)?;
        let dim = table.dim;

        let mut wanted = HashSet::new();
        for n in seen_names.iter().chain(unseen_names) {
            if !wanted.insert(n.as_str()) {
                return Err(Error::param(format!(
                    "class '{n}' requested twice (seen and unseen groups must be disjoint)"
                )));
            }
        }
        let missing: Vec<String> = seen_names
            .iter()
            .chain(unseen_names)
            .filter(|n| !table.index.contains_key(n.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::Lookup(missing));
        }

        let names: Vec<String> = seen_names.iter().chain(unseen_names).cloned().collect();
        let mut data = Vec::with_capacity(names.len() * dim);
        for n in &names {
            data.extend_from_slice(&table.vectors[table.index[n.as_str()]]);
        }
        Self::new(names, Matrix::new(seen_names.len() + unseen_names.len(), dim, data)?, seen_names.len())
    }

    /// Writes the space in the same text format `load` reads.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("{} {}\n", self.num_classes(), self.dim());
        for (name, row) in self.class_names.iter().zip(self.embeddings.row_iter()) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(" {v:.16e}"));
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Attribute-composed toy space used by the default benchmark.
    pub fn synthetic(spec: &ToySpaceSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (attrs, _) = Matrix::randn(spec.attributes, spec.dim, 1.0, &mut rng).l2_normalize_rows();
        let total = spec.n_seen + spec.n_unseen;
        let mut data = Vec::with_capacity(total * spec.dim);
        for _ in 0..total {
            let mut v = vec![0.0; spec.dim];
            for k in sample(&mut rng, spec.attributes, spec.attributes_per_class) {
                let w: f64 = rng.random_range(0.5..1.0);
                for (o, a) in v.iter_mut().zip(attrs.row(k)) {
                    *o += w * a;
                }
            }
            let norm = dot(&v, &v).sqrt();
            let private = Matrix::randn(1, spec.dim, 1.0, &mut rng);
            let pn = private.frobenius_norm();
            for (o, p) in v.iter_mut().zip(private.as_slice()) {
                *o = *o / norm + spec.private_weight * p / pn;
            }
            data.extend(v);
        }
        let names = (0..total)
            .map(|i| {
                if i < spec.n_seen {
                    format!("seen{i:02}")
                } else {
                    format!("unseen{:02}", i - spec.n_seen)
                }
            })
            .collect();
        Self::new(names, Matrix::new(total, spec.dim, data)?, spec.n_seen)
    }
}

/// Layout of the synthetic semantic space: every class mixes a few shared
/// attribute directions plus a class-private direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySpaceSpec {
    pub n_seen: usize,
    pub n_unseen: usize,
    pub dim: usize,
    pub attributes: usize,
    pub attributes_per_class: usize,
    pub private_weight: f64,
    pub seed: u64,
}

impl Default for ToySpaceSpec {
    fn default() -> Self {
        Self {
            n_seen: 12,
            n_unseen: 4,
            dim: 16,
            attributes: 10,
            attributes_per_class: 3,
            private_weight: 2.0,
            seed: 0,
        }
    }
}

impl ToySpaceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_seen == 0 || self.n_unseen == 0 {
            return Err(Error::param("toy space needs at least one seen and one unseen class"));
        }
        if self.dim == 0 || self.attributes == 0 {
            return Err(Error::param("toy space dimensions must be positive"));
        }
        if self.attributes_per_class == 0 || self.attributes_per_class > self.attributes {
            return Err(Error::param(format!(
                "attributes_per_class must lie in 1..={}",
                self.attributes
            )));
        }
        if !(self.private_weight >= 0.0) {
            return Err(Error::param("private_weight must be non-negative"));
        }
        Ok(())
    }
}

struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f64>>,
}

fn parse_embedding_text(text: &str) -> Result<EmbeddingTable> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing 'N D' header".into(),
    })?;
    let mut parts = header.split_whitespace();
    let mut header_field = |what: &str| -> Result<usize> {
        parts
            .next()
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("header lacks {what}"),
            })?
            .parse()
            .map_err(|e| Error::Parse {
                line: 1,
                message: format!("bad {what} in header: {e}"),
            })
    };
    let count = header_field("vocabulary size")?;
    let dim = header_field("dimension")?;

    let mut index = HashMap::with_capacity(count);
    let mut vectors = Vec::with_capacity(count);
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let name = fields.next().unwrap_or_default().to_owned();
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("'{f}': {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if values.len() != dim {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {dim} values for '{name}', found {}", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("non-finite value for '{name}'"),
            });
        }
        if index.insert(name.clone(), vectors.len()).is_some() {
            return Err(Error::Format(format!("duplicate name '{name}' at line {lineno}")));
        }
        vectors.push(values);
    }
    if vectors.len() != count {
        return Err(Error::Format(format!(
            "header announces {count} entries but the file has {}",
            vectors.len()
        )));
    }
    Ok(EmbeddingTable { dim, index, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    const FILE: &str = "3 4\na 1 0 0 0\nb 0 2 0 0\nc 1 1 1 1\n";

    #[test]
    fn loads_requested_split() {
        let s = SemanticSpace::parse(FILE, &names(&["a", "b"]), &names(&["c"])).unwrap();
        assert_eq!(s.num_seen(), 2);
        assert_eq!(s.num_unseen(), 1);
        assert_eq!(s.class_names(), &names(&["a", "b", "c"])[..]);
        assert_eq!(s.embedding(1), &[0.0, 1.0, 0.0, 0.0]);
        for r in 0..3 {
            let n = dot(s.embedding(r), s.embedding(r)).sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn row_order_is_seen_then_unseen() {
        let s = SemanticSpace::parse(FILE, &names(&["c", "a"]), &names(&["b"])).unwrap();
        assert_eq!(s.class_names(), &names(&["c", "a", "b"])[..]);
        assert_eq!(s.seen_ids(), 0..2);
        assert_eq!(s.unseen_ids(), 2..3);
    }

    #[test]
    fn missing_name_is_listed() {
        let err = SemanticSpace::parse(FILE, &names(&["a", "zebra"]), &names(&["okapi"])).unwrap_err();
        match err {
            Error::Lookup(missing) => assert_eq!(missing, names(&["zebra", "okapi"])),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = SemanticSpace::parse("2 2\na 1 0\nb 1 x\n", &names(&["a"]), &names(&["b"])).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = SemanticSpace::parse("2 2\na 1 0\nb 1\n", &names(&["a"]), &names(&["b"])).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn duplicate_name_is_a_format_error() {
        let err = SemanticSpace::parse("2 2\na 1 0\na 0 1\n", &names(&["a"]), &[]).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err:?}");
    }

    #[test]
    fn overlapping_split_is_rejected() {
        assert!(SemanticSpace::parse(FILE, &names(&["a"]), &names(&["a"])).is_err());
    }

    #[test]
    fn save_then_load_round_trips() {
        let space = SemanticSpace::synthetic(&ToySpaceSpec::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        space.save(&path).unwrap();
        let seen: Vec<String> = space.class_names()[..space.num_seen()].to_vec();
        let unseen: Vec<String> = space.class_names()[space.num_seen()..].to_vec();
        let back = SemanticSpace::load(&path, &seen, &unseen).unwrap();
        assert!(back.embeddings().max_abs_diff(space.embeddings()) < 1e-15);
    }

    #[test]
    fn synthetic_space_is_normalized_and_disjoint() {
        let spec = ToySpaceSpec::default();
        let s = SemanticSpace::synthetic(&spec).unwrap();
        assert_eq!((s.num_seen(), s.num_unseen(), s.dim()), (12, 4, 16));
        let seen: HashSet<usize> = s.seen_ids().collect();
        assert!(s.unseen_ids().all(|u| !seen.contains(&u)));
        for r in 0..s.num_classes() {
            assert!((dot(s.embedding(r), s.embedding(r)) - 1.0).abs() < 1e-9);
        }
        assert_eq!(s, SemanticSpace::synthetic(&spec).unwrap());
    }
}
