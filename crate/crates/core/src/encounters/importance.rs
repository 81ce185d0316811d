use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::EncounterStore;
use crate::code::{Code, RelationKind};
use crate::kb::{Problem, TripletKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImportanceOptions {
    /// Only encounters with at least one diagnosis code enter either stratum.
    pub require_diagnosis: bool,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        ImportanceOptions {
            require_diagnosis: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub value: f64,
    /// Set when no qualifying encounter carries the problem, in which case
    /// `value` is 0.
    pub degenerate: bool,
}

/// Posting lists over qualifying encounters, so importance scores for many
/// targets can be computed without rescanning the log.
#[derive(Debug, Clone)]
pub struct ImportanceIndex {
    n_qualifying: usize,
    n_encounters: usize,
    targets: HashMap<Code, Vec<usize>>,
    diagnoses: HashMap<Code, Vec<usize>>,
}

impl ImportanceIndex {
    pub fn new(store: &EncounterStore, opts: ImportanceOptions) -> Self {
        let mut targets: HashMap<Code, Vec<usize>> = HashMap::new();
        let mut diagnoses: HashMap<Code, Vec<usize>> = HashMap::new();
        let mut n_qualifying = 0;
        for (i, e) in store.encounters().iter().enumerate() {
            if opts.require_diagnosis && e.diagnoses.is_empty() {
                continue;
            }
            n_qualifying += 1;
            for d in &e.diagnoses {
                diagnoses.entry(d.clone()).or_default().push(i);
            }
            let present: BTreeSet<&Code> = e.orders.iter().map(|o| &o.code).collect();
            for c in present {
                targets.entry(c.clone()).or_default().push(i);
            }
        }
        ImportanceIndex {
            n_qualifying,
            n_encounters: store.len(),
            targets,
            diagnoses,
        }
    }

    fn problem_mask(&self, problem: &Problem) -> (Vec<bool>, usize) {
        let mut mask = vec![false; self.n_encounters];
        let mut n = 0;
        for c in &problem.definition {
            for &i in self.diagnoses.get(c).into_iter().flatten() {
                if !mask[i] {
                    mask[i] = true;
                    n += 1;
                }
            }
        }
        (mask, n)
    }

    fn score_masked(&self, mask: &[bool], n_with: usize, target: &Code) -> Importance {
        if n_with == 0 {
            return Importance {
                value: 0.0,
                degenerate: true,
            };
        }
        let n_without = self.n_qualifying - n_with;
        let posting = self.targets.get(target).map_or(&[][..], Vec::as_slice);
        let with = posting.iter().filter(|&&i| mask[i]).count();
        let without = posting.len() - with;
        // Laplace add-one estimate of a Bernoulli rate per stratum.
        let rate = |hits: usize, n: usize| (hits as f64 + 1.0) / (n as f64 + 2.0);
        Importance {
            value: rate(with, n_with).ln() - rate(without, n_without).ln(),
            degenerate: false,
        }
    }

    /// Log-likelihood ratio of the target being ordered in encounters that
    /// carry the problem versus encounters that do not.
    pub fn score(&self, problem: &Problem, target: &Code) -> Importance {
        let (mask, n) = self.problem_mask(problem);
        self.score_masked(&mask, n, target)
    }

    pub fn score_many(&self, problem: &Problem, targets: &[&Code]) -> Vec<Importance> {
        let (mask, n) = self.problem_mask(problem);
        targets
            .iter()
            .map(|t| self.score_masked(&mask, n, t))
            .collect()
    }
}

pub fn importance_score(
    store: &EncounterStore,
    problem: &Problem,
    target: &Code,
    opts: ImportanceOptions,
) -> Importance {
    ImportanceIndex::new(store, opts).score(problem, target)
}

/// Anything that can rank candidate targets for a problem.
pub trait CandidateScorer {
    fn score_candidates(
        &self,
        problem: &Problem,
        kind: RelationKind,
        targets: &[&Code],
    ) -> Vec<f64>;
}

impl CandidateScorer for ImportanceIndex {
    fn score_candidates(
        &self,
        problem: &Problem,
        _kind: RelationKind,
        targets: &[&Code],
    ) -> Vec<f64> {
        self.score_many(problem, targets)
            .into_iter()
            .map(|i| i.value)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub code: Code,
    pub score: f64,
}

/// Top `top_n` eligible targets by descending score, ties broken by code.
/// Keys in `exclude` (already-annotated pairs) are skipped.
pub fn candidate_list<'c>(
    scorer: &dyn CandidateScorer,
    problem: &Problem,
    kind: RelationKind,
    eligible: impl IntoIterator<Item = &'c Code>,
    top_n: usize,
    exclude: &BTreeSet<TripletKey>,
) -> Vec<Candidate> {
    let targets: Vec<&Code> = eligible
        .into_iter()
        .filter(|c| !exclude.contains(&(problem.id.clone(), kind, (*c).clone())))
        .collect();
    let scores = scorer.score_candidates(problem, kind, &targets);
    let mut ranked: Vec<Candidate> = targets
        .into_iter()
        .zip(scores)
        .map(|(c, s)| Candidate {
            code: c.clone(),
            score: s,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.code.cmp(&b.code))
    });
    ranked.truncate(top_n);
    ranked
}
