//! Skip-gram with negative sampling where each encounter is one context
//! window: every code in an encounter predicts every other code in it.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{random_vector, EmbeddingTable, SourceTag};
use crate::encounters::{EncounterStore, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub epochs: usize,
    /// Negative samples per (center, context) pair.
    pub negative: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Encounters with more distinct codes are subsampled to this many per
    /// epoch.
    pub max_context: usize,
    /// Worker threads. `1` is deterministic; more threads update shared
    /// weights without locks and are not reproducible.
    pub threads: usize,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 300,
            epochs: 5,
            negative: 5,
            learning_rate: 0.025,
            seed: 1,
            max_context: 64,
            threads: 1,
        }
    }
}

/// Weights stored as `f64` bit patterns so concurrent workers can race on
/// them without `unsafe`.
struct SharedWeights {
    dim: usize,
    data: Vec<AtomicU64>,
}

impl SharedWeights {
    fn from_rows(dim: usize, rows: impl Iterator<Item = Vec<f64>>) -> Self {
        SharedWeights {
            dim,
            data: rows
                .flatten()
                .map(|x| AtomicU64::new(x.to_bits()))
                .collect(),
        }
    }

    fn zeros(dim: usize, n: usize) -> Self {
        Self::from_rows(dim, std::iter::repeat_n(vec![0.0; dim], n))
    }

    fn row(&self, i: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = f64::from_bits(self.data[i * self.dim + j].load(Ordering::Relaxed));
        }
    }

    fn add(&self, i: usize, delta: &[f64]) {
        for (j, d) in delta.iter().enumerate() {
            let cell = &self.data[i * self.dim + j];
            let v = f64::from_bits(cell.load(Ordering::Relaxed)) + d;
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_rows(self) -> Vec<Vec<f64>> {
        let dim = self.dim;
        let flat: Vec<f64> = self
            .data
            .into_iter()
            .map(|a| f64::from_bits(a.into_inner()))
            .collect();
        flat.chunks(dim).map(<[f64]>::to_vec).collect()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cumulative unigram^(3/4) distribution for negative draws.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c.max(1) as f64).powf(0.75);
                acc
            })
            .collect();
        NoiseTable { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let u = rng.gen::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

struct Trainer<'a> {
    cfg: &'a SkipGramConfig,
    input: SharedWeights,
    output: SharedWeights,
    noise: NoiseTable,
    total_steps: f64,
}

impl Trainer<'_> {
    fn train_unit(&self, unit: &[usize], step: usize, rng: &mut ChaCha8Rng) {
        let dim = self.cfg.dim;
        let lr = (self.cfg.learning_rate * (1.0 - step as f64 / self.total_steps))
            .max(self.cfg.learning_rate * 1e-4);
        let mut center = vec![0.0; dim];
        let mut ctx = vec![0.0; dim];
        let mut grad_center = vec![0.0; dim];
        let mut delta = vec![0.0; dim];
        for &c in unit {
            for &o in unit {
                if o == c {
                    continue;
                }
                self.input.row(c, &mut center);
                grad_center.iter_mut().for_each(|g| *g = 0.0);
                for n in 0..=self.cfg.negative {
                    let (target, label) = if n == 0 {
                        (o, 1.0)
                    } else {
                        let t = self.noise.sample(rng);
                        if t == o {
                            continue;
                        }
                        (t, 0.0)
                    };
                    self.output.row(target, &mut ctx);
                    let g = lr * (label - sigmoid(super::dot(&center, &ctx)));
                    for j in 0..dim {
                        grad_center[j] += g * ctx[j];
                        delta[j] = g * center[j];
                    }
                    self.output.add(target, &delta);
                }
                self.input.add(c, &grad_center);
            }
        }
    }
}

/// Train site-specific vectors over the vocabulary's codes (targets and
/// diagnoses). Returns the input vectors.
pub fn train_skipgram(
    store: &EncounterStore,
    vocab: &Vocabulary,
    cfg: &SkipGramConfig,
) -> Result<EmbeddingTable> {
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    if cfg.dim == 0 || cfg.max_context < 2 {
        return Err(Error::Config(
            "skip-gram needs dim >= 1 and max_context >= 2".into(),
        ));
    }
    let tokens: Vec<_> = vocab
        .diagnoses
        .iter()
        .chain(vocab.all_targets().map(|(_, c)| c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<_, usize> = tokens.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let units: Vec<Vec<usize>> = store
        .encounters()
        .iter()
        .map(|e| {
            e.diagnoses
                .iter()
                .chain(e.orders.iter().map(|o| &o.code))
                .filter_map(|c| index.get(c).copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let input = SharedWeights::from_rows(
        cfg.dim,
        (0..tokens.len()).map(|_| random_vector(&mut rng, cfg.dim)),
    );
    let counts: Vec<u64> = tokens.iter().map(|c| vocab.count(c)).collect();
    let trainer = Trainer {
        cfg,
        input,
        output: SharedWeights::zeros(cfg.dim, tokens.len()),
        noise: NoiseTable::new(&counts),
        total_steps: (cfg.epochs * units.len()).max(1) as f64,
    };

    let mut order: Vec<usize> = (0..units.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let sample_unit = |rng: &mut ChaCha8Rng, u: &[usize]| -> Vec<usize> {
            if u.len() > cfg.max_context {
                u.choose_multiple(rng, cfg.max_context).copied().collect()
            } else {
                u.to_vec()
            }
        };
        if cfg.threads <= 1 {
            for (i, &u) in order.iter().enumerate() {
                let unit = sample_unit(&mut rng, &units[u]);
                trainer.train_unit(&unit, epoch * units.len() + i, &mut rng);
            }
        } else {
            let chunk = order.len().div_ceil(cfg.threads).max(1);
            let seeds: Vec<u64> = (0..cfg.threads).map(|_| rng.gen()).collect();
            std::thread::scope(|s| {
                for (w, part) in order.chunks(chunk).enumerate() {
                    let trainer = &trainer;
                    let units = &units;
                    let seed = seeds[w];
                    s.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        for (i, &u) in part.iter().enumerate() {
                            let unit = sample_unit(&mut rng, &units[u]);
                            trainer.train_unit(
                                &unit,
                                epoch * units.len() + w * chunk + i,
                                &mut rng,
                            );
                        }
                    });
                }
            });
        }
    }

    let mut table = EmbeddingTable::new(cfg.dim, SourceTag::SiteSpecific);
    for (code, v) in tokens.iter().zip(trainer.input.into_rows()) {
        table.insert(code.token(), v)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::cosine;
    use crate::encounters::tests::enc;
    use crate::encounters::IngestOptions;

    #[test]
    fn single_encounter_covers_vocabulary() {
        let store = EncounterStore::from_records(
            vec![enc(
                "p",
                "e",
                "2020-01-01",
                "f",
                &["ICD10:A"],
                &[("RXNORM:1", None), ("CPT:2", None)],
                None,
            )],
            IngestOptions::default(),
        )
        .unwrap();
        let vocab = store.build_vocabulary(1);
        let cfg = SkipGramConfig {
            dim: 8,
            epochs: 1,
            ..Default::default()
        };
        let table = train_skipgram(&store, &vocab, &cfg).unwrap();
        assert_eq!(table.len(), 3);
        for t in ["ICD10:A", "RXNORM:1", "CPT:2"] {
            assert_eq!(table.get(t).unwrap().len(), 8);
        }
        assert_eq!(train_skipgram(&store, &vocab, &cfg).unwrap(), table);
    }

    #[test]
    fn empty_store_rejected() {
        let store = EncounterStore::default();
        assert!(matches!(
            train_skipgram(&store, &Vocabulary::default(), &SkipGramConfig::default()),
            Err(Error::EmptyStore)
        ));
    }

    #[test]
    fn parallel_mode_runs() {
        let records = (0..40)
            .map(|i| {
                enc(
                    "p",
                    &format!("e{i}"),
                    "2020-01-01",
                    "f",
                    &["ICD10:A"],
                    &[("RXNORM:1", None), ("CPT:2", None)],
                    None,
                )
            })
            .collect();
        let store = EncounterStore::from_records(records, IngestOptions::default()).unwrap();
        let vocab = store.build_vocabulary(1);
        let cfg = SkipGramConfig {
            dim: 8,
            epochs: 3,
            threads: 4,
            ..Default::default()
        };
        let table = train_skipgram(&store, &vocab, &cfg).unwrap();
        let a = table.get("RXNORM:1").unwrap();
        let b = table.get("CPT:2").unwrap();
        assert!(cosine(a, b).is_finite());
    }
}
