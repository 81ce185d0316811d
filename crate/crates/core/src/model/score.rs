//! Triplet scoring: the three-way product over embeddings, the matching
//! product over specialty vectors, and the linear head over both plus the
//! pair features.

use crate::code::{Code, RelationKind};
use crate::encounters::FeatureSet;
use crate::error::{Error, Result};

use super::ModelParams;

/// `sum_i a[i] * r[i] * b[i]`.
pub fn trilinear(a: &[f64], r: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(r).zip(b).map(|((x, y), z)| x * y * z).sum()
}

/// Per-pair data the feature-augmented scorer consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInputs {
    pub spec_problem: Vec<f64>,
    pub spec_target: Vec<f64>,
    pub features: Vec<f64>,
}

/// L1-normalize raw specialty counts, then apply `ln(1 + x)`.
pub fn scale_specialty(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|x| (x / total).ln_1p()).collect()
}

pub fn pair_inputs(features: &FeatureSet, problem: &str, target: &Code) -> PairInputs {
    PairInputs {
        spec_problem: scale_specialty(&features.problem_specialty(problem)),
        spec_target: scale_specialty(&features.target_specialty(target)),
        features: features.pair_features(problem, target).vector().to_vec(),
    }
}

impl ModelParams {
    fn lookup(&self, problem: &str, target: &Code) -> Result<(usize, usize)> {
        let p = self
            .problem_idx(problem)
            .ok_or_else(|| Error::MissingEmbedding(problem.to_string()))?;
        let t = self
            .target_idx(target)
            .ok_or_else(|| Error::MissingEmbedding(target.token()))?;
        Ok((p, t))
    }

    pub fn score_emb(&self, problem: &str, relation: RelationKind, target: &Code) -> Result<f64> {
        let (p, t) = self.lookup(problem, target)?;
        Ok(self.score_emb_idx(p, relation, t))
    }

    pub(crate) fn score_emb_idx(&self, p: usize, relation: RelationKind, t: usize) -> f64 {
        trilinear(
            self.problem_vec(p),
            self.relation(relation),
            self.target_vec(t),
        )
    }

    pub fn score_spec(
        &self,
        spec_problem: &[f64],
        relation: RelationKind,
        spec_target: &[f64],
    ) -> Result<f64> {
        for v in [spec_problem, spec_target] {
            if v.len() != self.spec_dim() {
                return Err(Error::LengthMismatch {
                    expected: self.spec_dim(),
                    found: v.len(),
                });
            }
        }
        Ok(trilinear(
            spec_problem,
            self.spec_relation(relation),
            spec_target,
        ))
    }

    /// `head . [emb score, specialty score, features..]`.
    pub fn score_full(
        &self,
        problem: &str,
        relation: RelationKind,
        target: &Code,
        inputs: &PairInputs,
    ) -> Result<f64> {
        let (p, t) = self.lookup(problem, target)?;
        self.score_full_idx(p, relation, t, inputs)
    }

    pub(crate) fn score_full_idx(
        &self,
        p: usize,
        relation: RelationKind,
        t: usize,
        inputs: &PairInputs,
    ) -> Result<f64> {
        if inputs.features.len() != self.n_features() {
            return Err(Error::LengthMismatch {
                expected: self.n_features(),
                found: inputs.features.len(),
            });
        }
        let g_emb = self.score_emb_idx(p, relation, t);
        let g_spec = self.score_spec(&inputs.spec_problem, relation, &inputs.spec_target)?;
        let head = self.head();
        Ok(head[0] * g_emb
            + head[1] * g_spec
            + head[2..]
                .iter()
                .zip(&inputs.features)
                .map(|(w, f)| w * f)
                .sum::<f64>())
    }

    /// Score with or without the feature path.
    pub fn score(
        &self,
        problem: &str,
        relation: RelationKind,
        target: &Code,
        inputs: Option<&PairInputs>,
    ) -> Result<f64> {
        match inputs {
            Some(i) => self.score_full(problem, relation, target, i),
            None => self.score_emb(problem, relation, target),
        }
    }
}
