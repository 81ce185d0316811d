//! Negative sampling for the margin loss.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code::{Code, RelationKind};
use crate::kb::{KnowledgeBase, Triplet};

use super::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NegativeStrategy {
    /// Annotated negatives of the same (problem, relation), cycled in a
    /// shuffled order; one per positive.
    Annotated,
    /// Uniform draws from every known target of the relation's kind that is
    /// not a training positive for the problem.
    RandomVocab,
}

pub struct NegativeSampler {
    strategy: NegativeStrategy,
    per_positive: usize,
    pools: BTreeMap<(String, RelationKind), (Vec<Code>, usize)>,
    vocab: BTreeMap<RelationKind, Vec<Code>>,
    positives: BTreeSet<(String, RelationKind, Code)>,
}

impl NegativeSampler {
    /// `train` indexes [`KnowledgeBase::triplets`]; only those triplets are
    /// visible to the sampler.
    pub fn new(
        strategy: NegativeStrategy,
        per_positive: usize,
        kb: &KnowledgeBase,
        train: &[usize],
        params: &ModelParams,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut pools: BTreeMap<(String, RelationKind), (Vec<Code>, usize)> = BTreeMap::new();
        let mut positives = BTreeSet::new();
        for &i in train {
            let t = &kb.triplets()[i];
            if t.label.is_positive() {
                positives.insert(t.key());
            } else {
                pools
                    .entry((t.problem.clone(), t.relation))
                    .or_default()
                    .0
                    .push(t.target.clone());
            }
        }
        for (pool, _) in pools.values_mut() {
            pool.shuffle(rng);
        }
        let vocab = RelationKind::ALL
            .iter()
            .map(|&k| (k, params.targets_of(k).cloned().collect()))
            .collect();
        NegativeSampler {
            strategy,
            per_positive: per_positive.max(1),
            pools,
            vocab,
            positives,
        }
    }

    /// Negatives for one positive. Empty when none are available, in which
    /// case the caller skips the positive.
    pub fn sample(&mut self, positive: &Triplet, rng: &mut ChaCha8Rng) -> Vec<Code> {
        match self.strategy {
            NegativeStrategy::Annotated => {
                let Some((pool, cursor)) = self
                    .pools
                    .get_mut(&(positive.problem.clone(), positive.relation))
                else {
                    return Vec::new();
                };
                if pool.is_empty() {
                    return Vec::new();
                }
                let code = pool[*cursor % pool.len()].clone();
                *cursor += 1;
                vec![code]
            }
            NegativeStrategy::RandomVocab => {
                let candidates: Vec<&Code> = self.vocab[&positive.relation]
                    .iter()
                    .filter(|c| {
                        **c != positive.target
                            && !self.positives.contains(&(
                                positive.problem.clone(),
                                positive.relation,
                                (*c).clone(),
                            ))
                    })
                    .collect();
                if candidates.is_empty() {
                    return Vec::new();
                }
                (0..self.per_positive)
                    .map(|_| candidates[rng.gen_range(0..candidates.len())].clone())
                    .collect()
            }
        }
    }
}
