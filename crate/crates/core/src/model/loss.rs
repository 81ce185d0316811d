//! Margin ranking loss and its analytic gradients.

use std::sync::Arc;

use crate::code::RelationKind;
use crate::error::{Error, Result};

use super::score::{trilinear, PairInputs};
use super::{ModelParams, ParamGroup};

/// `max(0, margin - pos + neg)`.
pub fn margin_loss(pos_score: f64, neg_score: f64, margin: f64) -> f64 {
    (margin - pos_score + neg_score).max(0.0)
}

/// A triplet resolved to parameter indices. `inputs` is present exactly
/// when the feature path is in use.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub problem: usize,
    pub relation: RelationKind,
    pub target: usize,
    pub inputs: Option<Arc<PairInputs>>,
}

impl Example {
    pub fn new(
        params: &ModelParams,
        problem: usize,
        relation: RelationKind,
        target: usize,
        inputs: Option<Arc<PairInputs>>,
    ) -> Result<Self> {
        if let Some(i) = &inputs {
            if i.features.len() != params.n_features() {
                return Err(Error::LengthMismatch {
                    expected: params.n_features(),
                    found: i.features.len(),
                });
            }
            for v in [&i.spec_problem, &i.spec_target] {
                if v.len() != params.spec_dim() {
                    return Err(Error::LengthMismatch {
                        expected: params.spec_dim(),
                        found: v.len(),
                    });
                }
            }
        }
        Ok(Example {
            problem,
            relation,
            target,
            inputs,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub positive: Example,
    pub negative: Example,
}

impl ModelParams {
    pub fn score_example(&self, ex: &Example) -> f64 {
        let g_emb = self.score_emb_idx(ex.problem, ex.relation, ex.target);
        match &ex.inputs {
            None => g_emb,
            Some(i) => {
                let head = self.head();
                let g_spec = trilinear(
                    &i.spec_problem,
                    self.spec_relation(ex.relation),
                    &i.spec_target,
                );
                head[0] * g_emb
                    + head[1] * g_spec
                    + head[2..]
                        .iter()
                        .zip(&i.features)
                        .map(|(w, f)| w * f)
                        .sum::<f64>()
            }
        }
    }
}

/// Gradient buffers shaped like [`ModelParams`] groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    groups: [Vec<f64>; 5],
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ParamGrads {
            groups: ParamGroup::ALL.map(|g| vec![0.0; params.values(g).len()]),
        }
    }

    pub fn get(&self, group: ParamGroup) -> &[f64] {
        &self.groups[group as usize]
    }

    pub fn get_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        &mut self.groups[group as usize]
    }

    pub fn max_abs(&self) -> f64 {
        self.groups
            .iter()
            .flatten()
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Mean hinge loss over the batch.
pub fn batch_loss(params: &ModelParams, batch: &[TrainingPair], margin: f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch
        .iter()
        .map(|pair| {
            margin_loss(
                params.score_example(&pair.positive),
                params.score_example(&pair.negative),
                margin,
            )
        })
        .sum::<f64>()
        / batch.len() as f64
}

fn accumulate(params: &ModelParams, ex: &Example, weight: f64, grads: &mut ParamGrads) {
    let freeze = params.freeze;
    let dim = params.dim();
    let es = params.problem_vec(ex.problem);
    let er = params.relation(ex.relation);
    let et = params.target_vec(ex.target);
    let emb_coef = match &ex.inputs {
        Some(_) => weight * params.head()[0],
        None => weight,
    };

    if !freeze.problems {
        let g = &mut grads.get_mut(ParamGroup::Problems)[ex.problem * dim..(ex.problem + 1) * dim];
        for i in 0..dim {
            g[i] += emb_coef * er[i] * et[i];
        }
    }
    if !freeze.targets {
        let g = &mut grads.get_mut(ParamGroup::Targets)[ex.target * dim..(ex.target + 1) * dim];
        for i in 0..dim {
            g[i] += emb_coef * es[i] * er[i];
        }
    }
    if !freeze.relations {
        let k = ex.relation.index();
        let g = &mut grads.get_mut(ParamGroup::Relations)[k * dim..(k + 1) * dim];
        for i in 0..dim {
            g[i] += emb_coef * es[i] * et[i];
        }
    }

    let Some(inputs) = &ex.inputs else { return };
    let head = params.head();
    if !freeze.spec_relations {
        let m = params.spec_dim();
        let k = ex.relation.index();
        let g = &mut grads.get_mut(ParamGroup::SpecRelations)[k * m..(k + 1) * m];
        for i in 0..m {
            g[i] += weight * head[1] * inputs.spec_problem[i] * inputs.spec_target[i];
        }
    }
    if !freeze.head {
        let g_emb = trilinear(es, er, et);
        let g_spec = trilinear(
            &inputs.spec_problem,
            params.spec_relation(ex.relation),
            &inputs.spec_target,
        );
        let g = grads.get_mut(ParamGroup::Head);
        g[0] += weight * g_emb;
        g[1] += weight * g_spec;
        for (gj, f) in g[2..].iter_mut().zip(&inputs.features) {
            *gj += weight * f;
        }
    }
}

/// Mean hinge loss and its exact gradient with respect to every unfrozen
/// group. Frozen groups, and pairs whose hinge is inactive (including
/// exactly at the margin), contribute zero.
pub fn gradients(params: &ModelParams, batch: &[TrainingPair], margin: f64) -> (f64, ParamGrads) {
    let mut grads = ParamGrads::zeros_like(params);
    if batch.is_empty() {
        return (0.0, grads);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for pair in batch {
        let pos = params.score_example(&pair.positive);
        let neg = params.score_example(&pair.negative);
        let l = margin_loss(pos, neg, margin);
        if l > 0.0 {
            loss += l;
            accumulate(params, &pair.positive, -scale, &mut grads);
            accumulate(params, &pair.negative, scale, &mut grads);
        }
    }
    (loss * scale, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::Code;

    #[test]
    fn hinge_values() {
        assert_eq!(margin_loss(5.0, 1.0, 1.0), 0.0);
        assert_eq!(margin_loss(1.0, 1.0, 1.0), 1.0);
        assert_eq!(margin_loss(0.0, 2.0, 1.0), 3.0);
        assert_eq!(margin_loss(2.0, 1.0, 1.0), 0.0);
    }

    fn toy() -> ModelParams {
        let mut p = ModelParams::new(
            2,
            0,
            0,
            vec!["P".into()],
            vec![
                (RelationKind::Lab, "LOINC:A".parse::<Code>().unwrap()),
                (RelationKind::Lab, "LOINC:B".parse::<Code>().unwrap()),
            ],
        );
        p.problem_vec_mut(0).copy_from_slice(&[1.0, 2.0]);
        p.target_vec_mut(0).copy_from_slice(&[0.5, 0.25]);
        p.target_vec_mut(1).copy_from_slice(&[3.0, -1.0]);
        p.relation_mut(RelationKind::Lab)
            .copy_from_slice(&[2.0, 0.5]);
        p
    }

    fn pair(pos: usize, neg: usize) -> TrainingPair {
        let ex = |t| Example {
            problem: 0,
            relation: RelationKind::Lab,
            target: t,
            inputs: None,
        };
        TrainingPair {
            positive: ex(pos),
            negative: ex(neg),
        }
    }

    #[test]
    fn relation_gradient_by_hand() {
        let p = toy();
        // pos score 1*2*.5 + 2*.5*.25 = 1.25, neg 1*2*3 + 2*.5*-1 = 5: active
        let (loss, g) = gradients(&p, &[pair(0, 1)], 1.0);
        assert_eq!(loss, 1.0 - 1.25 + 5.0);
        let rel = &g.get(ParamGroup::Relations)[RelationKind::Lab.index() * 2..][..2];
        // -(es*et_pos) + (es*et_neg)
        assert_eq!(rel, &[-0.5 + 3.0, -0.5 + -2.0]);
    }

    #[test]
    fn inactive_pair_has_zero_gradient() {
        let p = toy();
        let (loss, g) = gradients(&p, &[pair(1, 0)], 1.0);
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
        // exactly at the kink counts as inactive
        let (loss, g) = gradients(&p, &[pair(1, 0)], 5.0 - 1.25);
        assert_eq!(loss, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn frozen_groups_get_zero() {
        let mut p = toy();
        p.freeze.relations = true;
        p.freeze.problems = true;
        let (_, g) = gradients(&p, &[pair(0, 1)], 1.0);
        assert!(g.get(ParamGroup::Relations).iter().all(|&x| x == 0.0));
        assert!(g.get(ParamGroup::Problems).iter().all(|&x| x == 0.0));
        assert!(g.get(ParamGroup::Targets).iter().any(|&x| x != 0.0));
    }
}
