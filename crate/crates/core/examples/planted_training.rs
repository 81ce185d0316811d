//! Train on planted synthetic data and compare against frozen embeddings.
//!
//! cargo run --release --example planted_training -- [seed]

use std::collections::BTreeMap;

use pomr::encounters::{FeatureSet, DEFAULT_SPECIALTY_VOCAB_SIZE};
use pomr::eval::{evaluate, EvalOptions, TiePolicy};
use pomr::kb::{split_random, DEFAULT_FRACTIONS};
use pomr::model::{
    initialize, model_targets, train, Ablation, InitConfig, ModelScorer, TrainConfig,
};
use pomr::synth::{generate, PlantSpec};

fn main() -> pomr::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let data = generate(&PlantSpec {
        seed,
        ..PlantSpec::default()
    })?;
    let problems: Vec<_> = data.kb.problems().collect();
    let features = FeatureSet::build(&data.store, &problems, DEFAULT_SPECIALTY_VOCAB_SIZE);
    let vocab = data.store.build_vocabulary(1);
    let targets = model_targets(&data.kb, &vocab);
    let (init, _) = initialize(
        &data.kb,
        &targets,
        None,
        None,
        &BTreeMap::new(),
        features.specialty_dim(),
        &InitConfig {
            seed,
            ..InitConfig::default()
        },
    )?;
    let split = split_random(&data.kb, DEFAULT_FRACTIONS, seed)?;

    for ablation in [Ablation::Frozen, Ablation::Full] {
        let cfg = TrainConfig {
            ablation,
            seed,
            ..TrainConfig::default()
        };
        let start = std::time::Instant::now();
        let (params, history) = train(&data.kb, &split, init.clone(), Some(&features), &cfg)?;
        let scorer = ModelScorer {
            params: &params,
            features: Some(&features),
        };
        let report = evaluate(
            &scorer,
            &data.kb,
            &split.test,
            &EvalOptions::with_policy(TiePolicy::Strict),
        )?;
        let m = report.overall.expect("test positives with negatives");
        println!(
            "{ablation:?}: test MRR {:.3}  H@1 {:.3}  MR {:.2}  ({} ranked, {} epochs, best {}, {:.1?})",
            m.mrr,
            m.hits1,
            m.mr,
            m.count,
            history.epochs.len() - 1,
            history.best_epoch,
            start.elapsed()
        );
    }
    Ok(())
}
