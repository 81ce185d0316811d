//! Embedding tables: word2vec-style text I/O, problem-vector composition,
//! nearest-neighbour transfer between vocabularies and vocabulary
//! intersection statistics. Site-specific vectors are trained by
//! [`skipgram`].

pub mod skipgram;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::code::{Code, RelationKind};
use crate::encounters::Vocabulary;
use crate::error::{Error, Result};
use crate::kb::Problem;

pub use skipgram::{train_skipgram, SkipGramConfig};

/// Neighbour count used for vocabulary transfer unless overridden.
pub const DEFAULT_KNN_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceTag {
    External,
    SiteSpecific,
    Combined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    source: SourceTag,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, source: SourceTag) -> Self {
        EmbeddingTable {
            dim,
            source,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn get_code(&self, code: &Code) -> Option<&[f64]> {
        self.get(&code.token())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Insert or replace a vector. Rejects wrong lengths and non-finite
    /// entries.
    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("embedding vectors must be finite".into()));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> EmbeddingTable {
        let mut out = self.clone();
        for v in out.vectors.values_mut() {
            v.iter_mut().for_each(|x| *x *= factor);
        }
        out
    }

    /// Parse the text format: a `N dim` header, then `token x1 .. xdim` per
    /// line. When `dim` is given the header must agree with it.
    pub fn from_text(text: &str, dim: Option<usize>, source: SourceTag) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing `N dim` header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let parse_usize = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: 1,
                message: format!("bad header `{header}`"),
            })
        };
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: 1,
                message: format!("bad header `{header}`"),
            });
        }
        let n = parse_usize(fields[0])?;
        let header_dim = parse_usize(fields[1])?;
        if let Some(d) = dim {
            if d != header_dim {
                return Err(Error::DimensionMismatch {
                    line: 1,
                    expected: d,
                    found: header_dim,
                });
            }
        }

        let mut table = EmbeddingTable::new(header_dim, source);
        for (i, line) in lines {
            let line_no = i + 1;
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line");
            let values: Vec<f64> = parts
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Parse {
                            line: line_no,
                            message: format!("`{s}` is not a finite number"),
                        })
                })
                .collect::<Result<_>>()?;
            if values.len() != header_dim {
                return Err(Error::DimensionMismatch {
                    line: line_no,
                    expected: header_dim,
                    found: values.len(),
                });
            }
            if table.vectors.contains_key(token) {
                return Err(Error::DuplicateToken {
                    line: line_no,
                    token: token.to_string(),
                });
            }
            table.vectors.insert(token.to_string(), values);
        }
        if table.len() != n {
            return Err(Error::Parse {
                line: 1,
                message: format!("header promises {n} vectors, found {}", table.len()),
            });
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>, dim: Option<usize>, source: SourceTag) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, dim, source)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.len(), self.dim);
        for (token, v) in &self.vectors {
            out.push_str(token);
            for x in v {
                out.push(' ');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Seeded uniform draw in `[-0.5/dim, 0.5/dim]`.
pub fn random_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let half = 0.5 / dim.max(1) as f64;
    (0..dim).map(|_| rng.gen_range(-half..=half)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Weighting {
    /// Weights proportional to each definition code's dataset frequency.
    Frequency,
    Uniform,
}

/// An initial vector plus whether it had to be drawn at random.
#[derive(Debug, Clone, PartialEq)]
pub struct InitVector {
    pub vector: Vec<f64>,
    pub random: bool,
    pub neighbors: Vec<String>,
    pub warning: Option<String>,
}

impl InitVector {
    fn random(rng: &mut impl Rng, dim: usize, why: String) -> Self {
        InitVector {
            vector: random_vector(rng, dim),
            random: true,
            neighbors: Vec::new(),
            warning: Some(why),
        }
    }
}

/// Convex combination of the problem's definition-code vectors. Codes
/// without a vector are dropped before the weights are normalized.
pub fn init_problem_embedding(
    problem: &Problem,
    table: &EmbeddingTable,
    weighting: Weighting,
    frequencies: &BTreeMap<Code, u64>,
    rng: &mut impl Rng,
) -> InitVector {
    let present: Vec<(&Code, &[f64])> = problem
        .definition
        .iter()
        .filter_map(|c| table.get_code(c).map(|v| (c, v)))
        .collect();
    if present.is_empty() {
        return InitVector::random(
            rng,
            table.dim(),
            format!("no definition code of `{}` has a vector", problem.id),
        );
    }
    let mut weights: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0; present.len()],
        Weighting::Frequency => present
            .iter()
            .map(|(c, _)| frequencies.get(*c).copied().unwrap_or(0) as f64)
            .collect(),
    };
    let mut total: f64 = weights.iter().sum();
    if total == 0.0 {
        weights = vec![1.0; present.len()];
        total = present.len() as f64;
    }
    let mut out = vec![0.0; table.dim()];
    for ((_, v), w) in present.iter().zip(&weights) {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w / total * x;
        }
    }
    InitVector {
        vector: out,
        random: false,
        neighbors: Vec::new(),
        warning: None,
    }
}

/// Vector for a token missing from `external`: the element-wise mean of the
/// external vectors of its `k` cosine-nearest internal neighbours that do
/// exist externally.
pub fn knn_transfer(
    missing: &str,
    internal: &EmbeddingTable,
    external: &EmbeddingTable,
    k: usize,
    rng: &mut impl Rng,
) -> InitVector {
    let Some(query) = internal.get(missing) else {
        return InitVector::random(
            rng,
            external.dim(),
            format!("`{missing}` has no internal vector"),
        );
    };
    let mut scored: Vec<(f64, &str)> = internal
        .iter()
        .filter(|(t, _)| *t != missing && external.contains(t))
        .map(|(t, v)| (cosine(query, v), t))
        .collect();
    if scored.is_empty() || k == 0 {
        return InitVector::random(
            rng,
            external.dim(),
            format!("no eligible neighbours for `{missing}`"),
        );
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let warning = (scored.len() < k).then(|| {
        format!(
            "only {} eligible neighbours for `{missing}`, wanted {k}",
            scored.len()
        )
    });
    scored.truncate(k);

    let mut mean = vec![0.0; external.dim()];
    for (_, t) in &scored {
        let v = external.get(t).expect("filtered on membership");
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = scored.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    InitVector {
        vector: mean,
        random: false,
        neighbors: scored.into_iter().map(|(_, t)| t.to_string()).collect(),
        warning,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionRow {
    pub kind: RelationKind,
    pub internal: usize,
    pub external: usize,
    pub shared: usize,
    pub fraction: f64,
}

/// Per kind: internal vocabulary size, external table size and the fraction
/// of internal codes that the external table covers.
pub fn vocab_intersection(
    internal: &Vocabulary,
    external: &EmbeddingTable,
) -> Vec<IntersectionRow> {
    let mut external_by_kind: BTreeMap<RelationKind, BTreeSet<&str>> = BTreeMap::new();
    for token in external.tokens() {
        let Ok(code) = token.parse::<Code>() else {
            continue;
        };
        let kind = RelationKind::for_system(code.system).or_else(|| internal.kind_of(&code));
        if let Some(k) = kind {
            external_by_kind.entry(k).or_default().insert(token);
        }
    }
    RelationKind::ALL
        .iter()
        .map(|&kind| {
            let codes: Vec<&Code> = internal.codes(kind).collect();
            let shared = codes
                .iter()
                .filter(|c| external.contains(&c.token()))
                .count();
            IntersectionRow {
                kind,
                internal: codes.len(),
                external: external_by_kind.get(&kind).map_or(0, BTreeSet::len),
                shared,
                fraction: if codes.is_empty() {
                    0.0
                } else {
                    shared as f64 / codes.len() as f64
                },
            }
        })
        .collect()
}

/// Three-column CSV (`vocab,statistic,value`) of an intersection report.
pub fn intersection_csv(rows: &[IntersectionRow]) -> String {
    let label = |k: RelationKind| match k {
        RelationKind::Medication => "Medication",
        RelationKind::Procedure => "Procedure",
        RelationKind::Lab => "Lab",
    };
    let mut out = String::from("vocab,statistic,value\n");
    for r in rows {
        out.push_str(&format!(
            "Site-specific,# {} codes,{}\n",
            label(r.kind),
            r.internal
        ));
    }
    for r in rows {
        out.push_str(&format!(
            "External,# {} codes,{}\n",
            label(r.kind),
            r.external
        ));
    }
    for r in rows {
        out.push_str(&format!(
            "Intersection,Fraction of site-specific {} codes,{:.1}%\n",
            label(r.kind).to_lowercase(),
            100.0 * r.fraction
        ));
    }
    out
}
