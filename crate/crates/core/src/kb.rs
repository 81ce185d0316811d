//! Knowledge base of annotated (problem, relation, target) triplets, its
//! file format, the annotation audit trail, and the two split protocols.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code::{Code, RelationKind};
use crate::encounters::Vocabulary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub name: String,
    pub definition: BTreeSet<Code>,
}

impl Problem {
    pub fn is_defined_by(&self, code: &Code) -> bool {
        self.definition.contains(code)
    }
}

/// Binary relevance judgment. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.bit())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bit = u8::deserialize(d)?;
        Label::from_bit(bit)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {bit}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub problem: String,
    pub relation: RelationKind,
    pub target: Code,
    pub label: Label,
    pub round: u32,
}

/// Identity of a triplet within a knowledge base.
pub type TripletKey = (String, RelationKind, Code);

impl Triplet {
    pub fn key(&self) -> TripletKey {
        (self.problem.clone(), self.relation, self.target.clone())
    }

    fn sort_key(&self) -> (&str, RelationKind, &Code) {
        (&self.problem, self.relation, &self.target)
    }
}

/// One expert judgment, as recorded in the append-only audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub annotator: String,
    pub problem: String,
    pub relation: RelationKind,
    pub target: Code,
    pub label: Label,
    pub round: u32,
    /// ISO-8601 timestamp.
    pub timestamp: String,
}

impl AnnotationEvent {
    pub fn triplet(&self) -> Triplet {
        Triplet {
            problem: self.problem.clone(),
            relation: self.relation,
            target: self.target.clone(),
            label: self.label,
            round: self.round,
        }
    }

    pub fn key(&self) -> TripletKey {
        (self.problem.clone(), self.relation, self.target.clone())
    }
}

#[derive(Serialize, Deserialize)]
struct KbFile {
    problems: Vec<Problem>,
    triplets: Vec<Triplet>,
}

/// Validated set of problems and triplets. Triplets are kept in canonical
/// order `(problem, relation, system, id)`; split indices refer to it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeBase {
    problems: BTreeMap<String, Problem>,
    triplets: Vec<Triplet>,
    audit: Vec<AnnotationEvent>,
}

impl KnowledgeBase {
    /// Build from in-memory parts, applying the same validation as
    /// [`KnowledgeBase::load`].
    pub fn new(problems: Vec<Problem>, triplets: Vec<Triplet>) -> Result<Self> {
        let lines_p: Vec<usize> = (1..=problems.len()).collect();
        let lines_t: Vec<usize> = (1..=triplets.len()).collect();
        Self::validated(problems, triplets, &lines_p, &lines_t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: KbFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        let lines_p = array_element_lines(text, "problems");
        let lines_t = array_element_lines(text, "triplets");
        Self::validated(file.problems, file.triplets, &lines_p, &lines_t)
    }

    fn validated(
        problems: Vec<Problem>,
        triplets: Vec<Triplet>,
        lines_p: &[usize],
        lines_t: &[usize],
    ) -> Result<Self> {
        let line_of = |lines: &[usize], i: usize| lines.get(i).copied().unwrap_or(0);
        let mut by_id = BTreeMap::new();
        for (i, p) in problems.into_iter().enumerate() {
            let line = line_of(lines_p, i);
            if p.id.trim().is_empty() {
                return Err(Error::InvalidProblem {
                    line,
                    message: "empty problem id".into(),
                });
            }
            if p.definition.is_empty() {
                return Err(Error::InvalidProblem {
                    line,
                    message: format!("problem `{}` has an empty definition", p.id),
                });
            }
            if let Some(c) = p.definition.iter().find(|c| !c.system.is_diagnosis()) {
                return Err(Error::InvalidProblem {
                    line,
                    message: format!("definition code {c} is not a diagnosis code"),
                });
            }
            if by_id.contains_key(&p.id) {
                return Err(Error::InvalidProblem {
                    line,
                    message: format!("duplicate problem id `{}`", p.id),
                });
            }
            by_id.insert(p.id.clone(), p);
        }

        let mut latest: BTreeMap<TripletKey, Triplet> = BTreeMap::new();
        for (i, t) in triplets.into_iter().enumerate() {
            let line = line_of(lines_t, i);
            if !by_id.contains_key(&t.problem) {
                return Err(Error::DanglingProblem {
                    line,
                    problem: t.problem,
                });
            }
            if !t.relation.admits(t.target.system) {
                return Err(Error::Parse {
                    line,
                    message: format!("target {} is not a valid {} code", t.target, t.relation),
                });
            }
            if t.round < 1 {
                return Err(Error::Parse {
                    line,
                    message: "annotation round must be >= 1".into(),
                });
            }
            match latest.get(&t.key()) {
                Some(prev) if prev.round == t.round => {
                    return Err(Error::DuplicateTriplet {
                        line,
                        problem: t.problem,
                        relation: t.relation,
                        target: t.target,
                        round: t.round,
                    });
                }
                Some(prev) if prev.round > t.round => {}
                _ => {
                    latest.insert(t.key(), t);
                }
            }
        }

        Ok(KnowledgeBase {
            problems: by_id,
            triplets: latest.into_values().collect(),
            audit: Vec::new(),
        })
    }

    /// Canonical serialization: problems by id, triplets by
    /// `(problem, relation, system, id)`.
    pub fn to_canonical_json(&self) -> String {
        let file = KbFile {
            problems: self.problems.values().cloned().collect(),
            triplets: self.triplets.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("KB serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_canonical_json()).map_err(|e| Error::io(path, e))
    }

    pub fn problems(&self) -> impl Iterator<Item = &Problem> {
        self.problems.values()
    }

    pub fn problem(&self, id: &str) -> Option<&Problem> {
        self.problems.get(id)
    }

    pub fn problem_ids(&self) -> Vec<&str> {
        self.problems.keys().map(String::as_str).collect()
    }

    pub fn triplets(&self) -> &[Triplet] {
        &self.triplets
    }

    pub fn audit(&self) -> &[AnnotationEvent] {
        &self.audit
    }

    pub fn find(&self, problem: &str, relation: RelationKind, target: &Code) -> Option<&Triplet> {
        self.triplets
            .binary_search_by(|t| t.sort_key().cmp(&(problem, relation, target)))
            .ok()
            .map(|i| &self.triplets[i])
    }

    /// Set of annotated keys, for excluding already-judged candidates.
    pub fn annotated_keys(&self) -> BTreeSet<TripletKey> {
        self.triplets.iter().map(Triplet::key).collect()
    }

    /// Insert or replace the triplet carried by `event` and append the event
    /// to the audit trail. With a vocabulary, the target must be in it under
    /// the event's relation; without one, only the coding system is checked.
    pub fn add_annotation(
        &self,
        event: &AnnotationEvent,
        vocabulary: Option<&Vocabulary>,
    ) -> Result<KnowledgeBase> {
        if !self.problems.contains_key(&event.problem) {
            return Err(Error::UnknownProblem(event.problem.clone()));
        }
        match vocabulary {
            Some(v) => match v.kind_of(&event.target) {
                None => return Err(Error::OutOfVocabulary(event.target.clone())),
                Some(k) if k != event.relation => {
                    return Err(Error::KindMismatch {
                        relation: event.relation,
                        target: event.target.clone(),
                    })
                }
                Some(_) => {}
            },
            None => {
                if !event.relation.admits(event.target.system) {
                    return Err(Error::KindMismatch {
                        relation: event.relation,
                        target: event.target.clone(),
                    });
                }
            }
        }
        if event.round < 1 {
            return Err(Error::Config("annotation round must be >= 1".into()));
        }

        let mut next = self.clone();
        let triplet = event.triplet();
        match next
            .triplets
            .binary_search_by(|t| t.sort_key().cmp(&triplet.sort_key()))
        {
            Ok(i) => next.triplets[i] = triplet,
            Err(i) => next.triplets.insert(i, triplet),
        }
        next.audit.push(event.clone());
        Ok(next)
    }

    /// Apply events in log order (latest wins per key).
    pub fn replay<'a>(
        &self,
        events: impl IntoIterator<Item = &'a AnnotationEvent>,
        vocabulary: Option<&Vocabulary>,
    ) -> Result<KnowledgeBase> {
        let mut kb = self.clone();
        for e in events {
            kb = kb.add_annotation(e, vocabulary)?;
        }
        Ok(kb)
    }

    pub fn positives(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter().filter(|t| t.label.is_positive())
    }

    /// All distinct targets referenced by triplets, per relation.
    pub fn targets(&self) -> BTreeMap<RelationKind, BTreeSet<Code>> {
        let mut out: BTreeMap<RelationKind, BTreeSet<Code>> = BTreeMap::new();
        for t in &self.triplets {
            out.entry(t.relation).or_default().insert(t.target.clone());
        }
        out
    }
}

/// Read an append-only JSONL annotation log. Missing file reads as empty.
pub fn read_audit_log(path: impl AsRef<Path>) -> Result<Vec<AnnotationEvent>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ev);
    }
    Ok(out)
}

pub fn append_audit_event(path: impl AsRef<Path>, event: &AnnotationEvent) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_string(event)?;
    line.push('\n');
    f.write_all(line.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

/// Line number (1-based) of each element of the top-level array `key`.
/// Used only to attach line numbers to validation diagnostics.
fn array_element_lines(text: &str, key: &str) -> Vec<usize> {
    let mut lines = Vec::new();
    let mut line = 1usize;
    let mut depth = 0i32;
    let mut in_str = false;
    let mut escaped = false;
    let mut buf = String::new();
    let mut last_key = String::new();
    let mut target: Option<i32> = None;
    let mut expecting = false;

    for ch in text.chars() {
        if in_str {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_str = false;
                if depth == 1 {
                    last_key = std::mem::take(&mut buf);
                }
            } else if depth == 1 {
                buf.push(ch);
            }
            continue;
        }
        match ch {
            '\n' => line += 1,
            c if c.is_whitespace() => {}
            '"' => {
                if target == Some(depth) && expecting {
                    lines.push(line);
                    expecting = false;
                }
                in_str = true;
                buf.clear();
            }
            '{' | '[' => {
                if target == Some(depth) && expecting {
                    lines.push(line);
                    expecting = false;
                }
                if ch == '[' && depth == 1 && last_key == key && target.is_none() {
                    target = Some(2);
                    expecting = true;
                }
                depth += 1;
            }
            '}' | ']' => {
                depth -= 1;
                if ch == ']' && target == Some(depth + 1) {
                    target = None;
                    last_key.clear();
                }
            }
            ',' => {
                if target == Some(depth) {
                    expecting = true;
                }
            }
            _ => {
                if target == Some(depth) && expecting {
                    lines.push(line);
                    expecting = false;
                }
            }
        }
    }
    lines
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitMode {
    RandomTriplet,
    HeldOutProblem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

/// Three disjoint, exhaustive sets of indices into
/// [`KnowledgeBase::triplets`], each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub mode: SplitMode,
    pub seed: u64,
}

impl Split {
    pub fn part(&self, part: SplitPart) -> &[usize] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Validation => &self.validation,
            SplitPart::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

/// Seeded shuffle of all triplets; validation and test take
/// `floor(fraction * n)` items each and train gets the remainder.
pub fn split_random(kb: &KnowledgeBase, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidFractions(fractions));
    }
    let n = kb.triplets.len();
    if n < 3 {
        return Err(Error::TooFewTriplets(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    // The epsilon keeps exact products such as 0.15 * 100 from flooring down.
    let take = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
    let n_val = take(fractions[1]);
    let n_test = take(fractions[2]);
    let n_train = n - n_val - n_test;

    let mut train = idx[..n_train].to_vec();
    let mut validation = idx[n_train..n_train + n_val].to_vec();
    let mut test = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        validation,
        test,
        mode: SplitMode::RandomTriplet,
        seed,
    })
}

/// Hold out all triplets of `n_test` then `n_val` problems chosen by a
/// seeded shuffle of the problem ids.
pub fn split_by_problem(
    kb: &KnowledgeBase,
    n_val_problems: usize,
    n_test_problems: usize,
    seed: u64,
) -> Result<Split> {
    let requested = n_val_problems + n_test_problems;
    let mut ids = kb.problem_ids();
    if ids.len() <= requested {
        return Err(Error::TooFewProblems {
            requested,
            available: ids.len(),
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids: BTreeSet<&str> = ids[..n_test_problems].iter().copied().collect();
    let val_ids: BTreeSet<&str> = ids[n_test_problems..requested].iter().copied().collect();

    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (i, t) in kb.triplets.iter().enumerate() {
        if test_ids.contains(t.problem.as_str()) {
            test.push(i);
        } else if val_ids.contains(t.problem.as_str()) {
            validation.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(Split {
        train,
        validation,
        test,
        mode: SplitMode::HeldOutProblem,
        seed,
    })
}
