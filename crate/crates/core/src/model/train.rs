//! Mini-batch training with early stopping, ablation presets and
//! checkpoints.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::code::{Code, RelationKind};
use crate::encounters::{CandidateScorer, FeatureSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, TiePolicy, TripletScorer};
use crate::kb::{KnowledgeBase, Problem, Split};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{gradients, Example, TrainingPair};
use super::negatives::{NegativeSampler, NegativeStrategy};
use super::score::{pair_inputs, PairInputs};
use super::{FreezeFlags, ModelParams};

/// Which parameter groups are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Ablation {
    Frozen,
    ProblemOnly,
    RelationOnly,
    RelationPlusTarget,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Frozen,
        Ablation::ProblemOnly,
        Ablation::RelationOnly,
        Ablation::RelationPlusTarget,
        Ablation::Full,
    ];

    pub fn freeze_flags(self) -> FreezeFlags {
        let frozen = FreezeFlags::all();
        match self {
            Ablation::Frozen => frozen,
            Ablation::ProblemOnly => FreezeFlags {
                problems: false,
                ..frozen
            },
            Ablation::RelationOnly => FreezeFlags {
                relations: false,
                spec_relations: false,
                ..frozen
            },
            Ablation::RelationPlusTarget => FreezeFlags {
                problems: true,
                ..FreezeFlags::default()
            },
            Ablation::Full => FreezeFlags::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub negatives: NegativeStrategy,
    /// Only used by [`NegativeStrategy::RandomVocab`].
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub use_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 1.0,
            learning_rate: 0.01,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            negatives: NegativeStrategy::Annotated,
            negatives_per_positive: 4,
            seed: 1,
            ablation: Ablation::Full,
            use_features: true,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// `None` for the evaluation before any update.
    pub train_loss: Option<f64>,
    pub val_mr: Option<f64>,
    pub val_mrr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub skipped_positives: usize,
    pub warnings: Vec<String>,
}

/// Scores with a trained model; pair inputs come from `features` when given.
pub struct ModelScorer<'a> {
    pub params: &'a ModelParams,
    pub features: Option<&'a FeatureSet>,
}

impl TripletScorer for ModelScorer<'_> {
    fn score(&self, problem: &str, relation: RelationKind, target: &Code) -> Result<Option<f64>> {
        let inputs = self.features.map(|f| pair_inputs(f, problem, target));
        let s = self
            .params
            .score(problem, relation, target, inputs.as_ref())?;
        if !s.is_finite() {
            return Err(Error::NonFiniteScore);
        }
        Ok(Some(s))
    }
}

impl CandidateScorer for ModelScorer<'_> {
    fn score_candidates(
        &self,
        problem: &Problem,
        kind: RelationKind,
        targets: &[&Code],
    ) -> Vec<f64> {
        targets
            .iter()
            .map(|t| {
                TripletScorer::score(self, &problem.id, kind, t)
                    .ok()
                    .flatten()
                    .unwrap_or(f64::NEG_INFINITY)
            })
            .collect()
    }
}

struct InputCache<'a> {
    features: Option<&'a FeatureSet>,
    cache: HashMap<(usize, usize), Arc<PairInputs>>,
}

impl InputCache<'_> {
    fn example(
        &mut self,
        params: &ModelParams,
        problem: &str,
        relation: RelationKind,
        target: &Code,
    ) -> Result<Option<Example>> {
        let (Some(p), Some(t)) = (params.problem_idx(problem), params.target_idx(target)) else {
            return Ok(None);
        };
        let inputs = match self.features {
            None => None,
            Some(f) => Some(
                self.cache
                    .entry((p, t))
                    .or_insert_with(|| Arc::new(pair_inputs(f, problem, target)))
                    .clone(),
            ),
        };
        Example::new(params, p, relation, t, inputs).map(Some)
    }
}

fn validate(
    params: &ModelParams,
    kb: &KnowledgeBase,
    split: &Split,
    features: Option<&FeatureSet>,
) -> Result<Option<(f64, f64)>> {
    if split.validation.is_empty() {
        return Ok(None);
    }
    let scorer = ModelScorer { params, features };
    let report = evaluate(
        &scorer,
        kb,
        &split.validation,
        &EvalOptions::with_policy(TiePolicy::Strict),
    )?;
    Ok(report.overall.map(|m| (m.mr, m.mrr)))
}

/// Train `params` on the training part of `split`. The returned parameters
/// are the snapshot with the best validation mean rank (strict ties), or
/// the lowest training loss when validation has nothing to rank.
pub fn train(
    kb: &KnowledgeBase,
    split: &Split,
    mut params: ModelParams,
    features: Option<&FeatureSet>,
    cfg: &TrainConfig,
) -> Result<(ModelParams, History)> {
    if cfg.use_features && features.is_none() {
        return Err(Error::Config(
            "use_features is set but no feature set was given".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let features = if cfg.use_features { features } else { None };
    params.freeze = cfg.ablation.freeze_flags();

    let positives: Vec<usize> = split
        .train
        .iter()
        .copied()
        .filter(|&i| kb.triplets()[i].label.is_positive())
        .collect();
    if positives.is_empty() {
        return Err(Error::EmptyTrainingSplit);
    }

    let mut history = History::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sampler = NegativeSampler::new(
        cfg.negatives,
        cfg.negatives_per_positive,
        kb,
        &split.train,
        &params,
        &mut rng,
    );
    let mut cache = InputCache {
        features,
        cache: HashMap::new(),
    };
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut state = AdamState::new(&params);

    let val = validate(&params, kb, split, features)?;
    history.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: None,
        val_mr: val.map(|v| v.0),
        val_mrr: val.map(|v| v.1),
    });
    if cfg.ablation == Ablation::Frozen {
        return Ok((params, history));
    }

    let mut best = params.clone();
    let mut best_score = val.map_or(f64::INFINITY, |v| v.0);
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut pairs = Vec::new();
        let mut skipped = 0;
        for &i in &positives {
            let t = &kb.triplets()[i];
            let negs = sampler.sample(t, &mut rng);
            let Some(pos) = cache.example(&params, &t.problem, t.relation, &t.target)? else {
                skipped += 1;
                continue;
            };
            if negs.is_empty() {
                skipped += 1;
                continue;
            }
            for n in negs {
                if let Some(neg) = cache.example(&params, &t.problem, t.relation, &n)? {
                    pairs.push(TrainingPair {
                        positive: pos.clone(),
                        negative: neg,
                    });
                }
            }
        }
        if epoch == 1 && skipped > 0 {
            let msg =
                format!("{skipped} training positives have no usable negative and were skipped");
            log::warn!("{msg}");
            history.warnings.push(msg);
            history.skipped_positives = skipped;
        }
        if pairs.is_empty() {
            return Err(Error::EmptyTrainingSplit);
        }
        pairs.shuffle(&mut rng);

        let mut total = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let (loss, grads) = gradients(&params, batch, cfg.margin);
            total += loss * batch.len() as f64;
            adam_step(&mut params, &grads, &mut state, &adam);
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteScore);
        }
        let train_loss = total / pairs.len() as f64;
        let val = validate(&params, kb, split, features)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: Some(train_loss),
            val_mr: val.map(|v| v.0),
            val_mrr: val.map(|v| v.1),
        });

        let score = val.map_or(train_loss, |v| v.0);
        if score < best_score {
            best_score = score;
            best = params.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, history))
}

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// Everything needed to reproduce or reuse a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub params: ModelParams,
    pub config: TrainConfig,
    pub history: History,
    pub split: Option<Split>,
}

impl Checkpoint {
    pub fn new(
        params: ModelParams,
        config: TrainConfig,
        history: History,
        split: Option<Split>,
    ) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            params,
            config,
            history,
            split,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint schema version {}",
                c.schema_version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
