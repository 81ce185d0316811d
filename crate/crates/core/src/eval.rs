//! Ranking evaluation against same-pair negatives, report breakdowns,
//! nearest-problem analysis and inter-annotator agreement.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::code::{Code, RelationKind};
use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::kb::{AnnotationEvent, KnowledgeBase, Label, Triplet, TripletKey};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TiePolicy {
    /// Ties resolved against the positive: it is placed after every
    /// negative with an equal score.
    Strict,
    /// Every member of a group of equal scores gets the group's median
    /// position.
    Median,
}

/// Rank of a positive among its negatives (1 = best).
pub fn rank_one(pos_score: f64, neg_scores: &[f64], policy: TiePolicy) -> Result<f64> {
    if !pos_score.is_finite() || neg_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore);
    }
    let above = neg_scores.iter().filter(|&&s| s > pos_score).count() as f64;
    let tied = neg_scores.iter().filter(|&&s| s == pos_score).count() as f64;
    Ok(match policy {
        TiePolicy::Strict => 1.0 + above + tied,
        TiePolicy::Median => 1.0 + above + tied / 2.0,
    })
}

/// Scores triplets for evaluation. `None` means the scorer does not cover
/// this triplet and it is left out.
pub trait TripletScorer: Sync {
    fn score(&self, problem: &str, relation: RelationKind, target: &Code) -> Result<Option<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits5: f64,
}

impl Metrics {
    pub fn from_ranks(ranks: &[f64]) -> Option<Metrics> {
        if ranks.is_empty() {
            return None;
        }
        let n = ranks.len() as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Some(Metrics {
            count: ranks.len(),
            mr: ranks.iter().sum::<f64>() / n,
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hits1: hits(1.0),
            hits5: hits(5.0),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTriplet {
    pub problem: String,
    pub relation: RelationKind,
    pub target: Code,
    pub rank: f64,
    pub n_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ranks: Vec<RankedTriplet>,
    /// Positives with no same-pair negative in the evaluated part.
    pub excluded_no_negatives: usize,
    /// Positives the scorer declined to score.
    pub unsupported: usize,
    pub overall: Option<Metrics>,
    pub per_kind: BTreeMap<RelationKind, Metrics>,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub policy: Option<TiePolicy>,
    /// Only triplets whose target is in this set are evaluated.
    pub restrict_targets: Option<BTreeSet<Code>>,
}

impl EvalOptions {
    pub fn with_policy(policy: TiePolicy) -> Self {
        EvalOptions {
            policy: Some(policy),
            restrict_targets: None,
        }
    }
}

/// Rank every positive in `part` against the negatives of the same
/// (problem, relation) in `part`.
pub fn evaluate(
    scorer: &dyn TripletScorer,
    kb: &KnowledgeBase,
    part: &[usize],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let policy = opts.policy.unwrap_or(TiePolicy::Strict);
    let mut groups: BTreeMap<(&str, RelationKind), (Vec<&Triplet>, Vec<&Triplet>)> =
        BTreeMap::new();
    for &i in part {
        let t = &kb.triplets()[i];
        if let Some(allowed) = &opts.restrict_targets {
            if !allowed.contains(&t.target) {
                continue;
            }
        }
        let slot = groups.entry((t.problem.as_str(), t.relation)).or_default();
        match t.label {
            Label::Positive => slot.0.push(t),
            Label::Negative => slot.1.push(t),
        }
    }

    struct GroupResult {
        ranks: Vec<RankedTriplet>,
        excluded: usize,
        unsupported: usize,
    }

    let results: Vec<GroupResult> = groups
        .into_par_iter()
        .map(|((problem, relation), (pos, neg))| -> Result<GroupResult> {
            let mut neg_scores = Vec::with_capacity(neg.len());
            for t in &neg {
                if let Some(s) = scorer.score(problem, relation, &t.target)? {
                    neg_scores.push(s);
                }
            }
            let mut out = GroupResult {
                ranks: Vec::new(),
                excluded: 0,
                unsupported: 0,
            };
            for t in pos {
                let Some(s) = scorer.score(problem, relation, &t.target)? else {
                    out.unsupported += 1;
                    continue;
                };
                if neg_scores.is_empty() {
                    out.excluded += 1;
                    continue;
                }
                out.ranks.push(RankedTriplet {
                    problem: problem.to_string(),
                    relation,
                    target: t.target.clone(),
                    rank: rank_one(s, &neg_scores, policy)?,
                    n_negatives: neg_scores.len(),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut ranks = Vec::new();
    let (mut excluded, mut unsupported) = (0, 0);
    for r in results {
        ranks.extend(r.ranks);
        excluded += r.excluded;
        unsupported += r.unsupported;
    }
    Ok(summarize(ranks, excluded, unsupported))
}

fn summarize(ranks: Vec<RankedTriplet>, excluded: usize, unsupported: usize) -> EvalReport {
    let all: Vec<f64> = ranks.iter().map(|r| r.rank).collect();
    let per_kind = RelationKind::ALL
        .iter()
        .filter_map(|&k| {
            let rs: Vec<f64> = ranks
                .iter()
                .filter(|r| r.relation == k)
                .map(|r| r.rank)
                .collect();
            Metrics::from_ranks(&rs).map(|m| (k, m))
        })
        .collect();
    EvalReport {
        overall: Metrics::from_ranks(&all),
        per_kind,
        ranks,
        excluded_no_negatives: excluded,
        unsupported,
    }
}

impl EvalReport {
    /// One row per relation kind plus an overall row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("relation,count,mr,mrr,hits1,hits5\n");
        let row = |name: &str, m: &Metrics| {
            format!(
                "{name},{},{},{},{},{}\n",
                m.count, m.mr, m.mrr, m.hits1, m.hits5
            )
        };
        for (k, m) in &self.per_kind {
            out.push_str(&row(k.as_str(), m));
        }
        if let Some(m) = &self.overall {
            out.push_str(&row("ALL", m));
        }
        out
    }
}

/// Hits@5 per (problem, kind); `None` where the problem has no evaluated
/// positive of that kind.
pub fn per_problem_report(
    report: &EvalReport,
    kb: &KnowledgeBase,
) -> BTreeMap<String, BTreeMap<RelationKind, Option<f64>>> {
    kb.problems()
        .map(|p| {
            let row = RelationKind::ALL
                .iter()
                .map(|&k| {
                    let rs: Vec<f64> = report
                        .ranks
                        .iter()
                        .filter(|r| r.problem == p.id && r.relation == k)
                        .map(|r| r.rank)
                        .collect();
                    (k, Metrics::from_ranks(&rs).map(|m| m.hits5))
                })
                .collect();
            (p.id.clone(), row)
        })
        .filter(|(_, row): &(String, BTreeMap<RelationKind, Option<f64>>)| {
            row.values().any(Option::is_some)
        })
        .collect()
}

pub fn per_problem_csv(table: &BTreeMap<String, BTreeMap<RelationKind, Option<f64>>>) -> String {
    let mut out = String::from("problem,MEDICATION,PROCEDURE,LAB\n");
    for (p, row) in table {
        out.push_str(p);
        for k in RelationKind::ALL {
            out.push(',');
            if let Some(Some(v)) = row.get(&k) {
                out.push_str(&format!("{v:.2}"));
            }
        }
        out.push('\n');
    }
    out
}

/// Bin index of each value when `[min, max]` is cut into `n_bins` equal
/// widths; the top edge belongs to the last bin. Returns the number of bins
/// actually used (1 when all values are equal).
pub fn equal_width_bins(values: &[f64], n_bins: usize) -> (Vec<usize>, usize, f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || n_bins <= 1 || hi <= lo {
        return (vec![0; values.len()], 1, lo, hi);
    }
    let width = (hi - lo) / n_bins as f64;
    let idx = values
        .iter()
        .map(|v| (((v - lo) / width).floor() as usize).min(n_bins - 1))
        .collect();
    (idx, n_bins, lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBin {
    pub log_lo: f64,
    pub log_hi: f64,
    pub size: usize,
    pub metrics: Option<Metrics>,
}

/// Metrics grouped by `ln(count)` of each evaluated target, equal-width
/// bins over the observed range. Unseen targets count as 1.
pub fn frequency_bin_report(
    report: &EvalReport,
    counts: &BTreeMap<Code, u64>,
    n_bins: usize,
) -> Vec<FrequencyBin> {
    let logs: Vec<f64> = report
        .ranks
        .iter()
        .map(|r| (counts.get(&r.target).copied().unwrap_or(1).max(1) as f64).ln())
        .collect();
    log_binned(report, &logs, n_bins)
}

pub(crate) fn log_binned(report: &EvalReport, logs: &[f64], n_bins: usize) -> Vec<FrequencyBin> {
    let (idx, used, lo, hi) = equal_width_bins(logs, n_bins);
    let width = if used > 1 {
        (hi - lo) / used as f64
    } else {
        0.0
    };
    (0..used)
        .filter(|_| !logs.is_empty())
        .map(|b| {
            let ranks: Vec<f64> = report
                .ranks
                .iter()
                .zip(&idx)
                .filter(|(_, &i)| i == b)
                .map(|(r, _)| r.rank)
                .collect();
            FrequencyBin {
                log_lo: lo + width * b as f64,
                log_hi: if used > 1 {
                    lo + width * (b + 1) as f64
                } else {
                    hi
                },
                size: ranks.len(),
                metrics: Metrics::from_ranks(&ranks),
            }
        })
        .collect()
}

pub fn frequency_bins_csv(bins: &[FrequencyBin]) -> String {
    let mut out = String::from("bin,log_lo,log_hi,size,mrr,hits5\n");
    for (i, b) in bins.iter().enumerate() {
        let (mrr, h5) = b.metrics.map_or((String::new(), String::new()), |m| {
            (m.mrr.to_string(), m.hits5.to_string())
        });
        out.push_str(&format!(
            "{i},{},{},{},{mrr},{h5}\n",
            b.log_lo, b.log_hi, b.size
        ));
    }
    out
}

/// The `k` problems whose embeddings are most cosine-similar to `problem`.
pub fn nearest_problems(
    params: &ModelParams,
    problem: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let query = params
        .problem_embedding(problem)
        .ok_or_else(|| Error::UnknownProblem(problem.to_string()))?;
    let mut scored: Vec<(String, f64)> = params
        .problem_ids()
        .iter()
        .enumerate()
        .filter(|(_, id)| id.as_str() != problem)
        .map(|(i, id)| (id.clone(), cosine(query, params.problem_vec(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Chance-corrected agreement between two aligned binary label sequences.
pub fn cohen_kappa(a: &[Label], b: &[Label]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let pa = a.iter().filter(|l| l.is_positive()).count() as f64 / n;
    let pb = b.iter().filter(|l| l.is_positive()).count() as f64 / n;
    let chance = pa * pb + (1.0 - pa) * (1.0 - pb);
    if chance == 1.0 {
        return Ok(1.0);
    }
    Ok((agree - chance) / (1.0 - chance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub n: usize,
    pub kappa: f64,
    /// Keys the two annotators labelled differently.
    pub disagreements: Vec<TripletKey>,
}

/// Kappa over the keys both annotators labelled; each annotator's latest
/// event per key counts.
pub fn agreement(a: &[AnnotationEvent], b: &[AnnotationEvent]) -> Result<Agreement> {
    let latest = |events: &[AnnotationEvent]| {
        let mut m: BTreeMap<TripletKey, Label> = BTreeMap::new();
        for e in events {
            m.insert(e.key(), e.label);
        }
        m
    };
    let (la, lb) = (latest(a), latest(b));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut disagreements = Vec::new();
    for (key, x) in &la {
        if let Some(y) = lb.get(key) {
            xs.push(*x);
            ys.push(*y);
            if x != y {
                disagreements.push(key.clone());
            }
        }
    }
    Ok(Agreement {
        n: xs.len(),
        kappa: cohen_kappa(&xs, &ys)?,
        disagreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::Problem;
    use proptest::prelude::*;

    #[test]
    fn median_ties_worked_example() {
        // 4 relevant negatives, 5 irrelevant
        let negs = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(rank_one(1.0, &negs, TiePolicy::Median).unwrap(), 3.0);
        assert_eq!(rank_one(0.0, &negs, TiePolicy::Median).unwrap(), 7.5);
    }

    #[test]
    fn strict_ranks() {
        assert_eq!(rank_one(5.0, &[1.0, 2.0], TiePolicy::Strict).unwrap(), 1.0);
        assert_eq!(
            rank_one(0.0, &[1.0, 2.0, 3.0], TiePolicy::Strict).unwrap(),
            4.0
        );
        assert_eq!(rank_one(1.0, &[1.0, 0.0], TiePolicy::Strict).unwrap(), 2.0);
        assert_eq!(rank_one(1.0, &[], TiePolicy::Strict).unwrap(), 1.0);
        assert!(rank_one(f64::NAN, &[1.0], TiePolicy::Strict).is_err());
    }

    #[test]
    fn metric_formulas() {
        let m = Metrics::from_ranks(&[1.0, 4.0]).unwrap();
        assert_eq!(m.mr, 2.5);
        assert_eq!(m.mrr, 0.625);
        assert_eq!(m.hits1, 0.5);
        assert_eq!(m.hits5, 1.0);
        assert!(Metrics::from_ranks(&[]).is_none());
    }

    #[test]
    fn log_bins_one_per_decade() {
        let logs: Vec<f64> = (0..5).map(|k| (k as f64).exp().ln()).collect();
        let (idx, used, _, _) = equal_width_bins(&logs, 5);
        assert_eq!(used, 5);
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        let (idx, used, _, _) = equal_width_bins(&[2.0, 2.0, 2.0], 5);
        assert_eq!((idx, used), (vec![0, 0, 0], 1));
    }

    #[test]
    fn kappa_cases() {
        let l = |bits: &[u8]| {
            bits.iter()
                .map(|&b| Label::from_bit(b).unwrap())
                .collect::<Vec<_>>()
        };
        let a = l(&[1, 0, 1, 0]);
        assert_eq!(cohen_kappa(&a, &a).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&a, &l(&[0, 1, 0, 1])).unwrap(), -1.0);
        assert_eq!(cohen_kappa(&l(&[1, 1]), &l(&[1, 1])).unwrap(), 1.0);
        assert!(cohen_kappa(&a, &l(&[1])).is_err());
    }

    struct Table(BTreeMap<Code, f64>);

    impl TripletScorer for Table {
        fn score(&self, _: &str, _: RelationKind, t: &Code) -> Result<Option<f64>> {
            Ok(self.0.get(t).copied())
        }
    }

    fn kb_with(labels: &[(u32, bool)]) -> KnowledgeBase {
        let problem = Problem {
            id: "P".into(),
            name: "P".into(),
            definition: ["ICD10:X".parse().unwrap()].into_iter().collect(),
        };
        let ts = labels
            .iter()
            .map(|(id, pos)| Triplet {
                problem: "P".into(),
                relation: RelationKind::Medication,
                target: format!("RXNORM:{id}").parse().unwrap(),
                label: if *pos {
                    Label::Positive
                } else {
                    Label::Negative
                },
                round: 1,
            })
            .collect();
        KnowledgeBase::new(vec![problem], ts).unwrap()
    }

    #[test]
    fn evaluate_counts_exclusions() {
        let kb = kb_with(&[(1, true), (2, true)]);
        let scorer = Table(BTreeMap::new());
        let all: Vec<usize> = (0..2).collect();
        let r = evaluate(&scorer, &kb, &all, &EvalOptions::default()).unwrap();
        assert_eq!(r.unsupported, 2);
        let scorer = Table(
            kb.triplets()
                .iter()
                .map(|t| (t.target.clone(), 1.0))
                .collect(),
        );
        let r = evaluate(&scorer, &kb, &all, &EvalOptions::default()).unwrap();
        assert_eq!(r.excluded_no_negatives, 2);
        assert!(r.overall.is_none());
    }

    #[test]
    fn perfect_scorer() {
        let kb = kb_with(&[(1, true), (2, false), (3, true), (4, false)]);
        let scorer = Table(
            kb.triplets()
                .iter()
                .map(|t| {
                    (
                        t.target.clone(),
                        if t.label.is_positive() { 1.0 } else { 0.0 },
                    )
                })
                .collect(),
        );
        let all: Vec<usize> = (0..4).collect();
        let r = evaluate(&scorer, &kb, &all, &EvalOptions::default()).unwrap();
        let m = r.overall.unwrap();
        assert_eq!((m.mrr, m.hits1, m.count), (1.0, 1.0, 2));
        let table = per_problem_report(&r, &kb);
        assert_eq!(table["P"][&RelationKind::Medication], Some(1.0));
        assert_eq!(table["P"][&RelationKind::Lab], None);
        assert_eq!(
            per_problem_csv(&table),
            "problem,MEDICATION,PROCEDURE,LAB\nP,1.00,,\n"
        );
    }

    proptest! {
        #[test]
        fn median_ranks_sum_to_triangular(scores in prop::collection::vec(0u8..4, 1..30)) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let n = scores.len() as f64;
            let total: f64 = (0..scores.len())
                .map(|i| {
                    let others: Vec<f64> = scores.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, s)| *s).collect();
                    rank_one(scores[i], &others, TiePolicy::Median).unwrap()
                })
                .sum();
            prop_assert_eq!(total, n * (n + 1.0) / 2.0);
        }

        #[test]
        fn ranks_invariant_to_positive_scaling(
            pos in -5.0f64..5.0,
            negs in prop::collection::vec(-5.0f64..5.0, 0..20),
            exp in -3i32..4,
        ) {
            let c = 2f64.powi(exp);
            let scaled: Vec<f64> = negs.iter().map(|s| s * c).collect();
            for policy in [TiePolicy::Strict, TiePolicy::Median] {
                prop_assert_eq!(rank_one(pos, &negs, policy).unwrap(), rank_one(pos * c, &scaled, policy).unwrap());
            }
        }

        #[test]
        fn lower_negative_never_changes_strict_rank(
            pos in -5.0f64..5.0,
            negs in prop::collection::vec(-5.0f64..5.0, 0..20),
            gap in 1e-6f64..10.0,
        ) {
            let before = rank_one(pos, &negs, TiePolicy::Strict).unwrap();
            let mut more = negs.clone();
            more.push(pos - gap);
            prop_assert_eq!(rank_one(pos, &more, TiePolicy::Strict).unwrap(), before);
        }
    }
}
