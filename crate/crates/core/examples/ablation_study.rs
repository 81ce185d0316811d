//! Compare which parameter groups are allowed to move, with and without the
//! feature path, on problems never seen during training.
//!
//! cargo run --release --example ablation_study -- [seed]

use std::collections::BTreeMap;

use pomr::encounters::{FeatureSet, DEFAULT_SPECIALTY_VOCAB_SIZE};
use pomr::eval::{evaluate, EvalOptions};
use pomr::kb::split_by_problem;
use pomr::model::{
    initialize, model_targets, train, Ablation, InitConfig, ModelScorer, TrainConfig,
};
use pomr::synth::{generate, PlantSpec};

fn main() -> pomr::Result<()> {
    let seed = std::env::args()
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
    let (init, _) = initialize(
        &data.kb,
        &model_targets(&data.kb, &vocab),
        None,
        None,
        &BTreeMap::new(),
        features.specialty_dim(),
        &InitConfig {
            seed,
            ..InitConfig::default()
        },
    )?;
    let split = split_by_problem(&data.kb, 3, 5, seed)?;

    println!(
        "{:<22} {:>10} {:>12}",
        "ablation", "features", "no features"
    );
    for ablation in Ablation::ALL {
        let mut row = Vec::new();
        for use_features in [true, false] {
            let fs = use_features.then_some(&features);
            let cfg = TrainConfig {
                ablation,
                use_features,
                seed,
                ..TrainConfig::default()
            };
            let (params, _) = train(&data.kb, &split, init.clone(), fs, &cfg)?;
            let report = evaluate(
                &ModelScorer {
                    params: &params,
                    features: fs,
                },
                &data.kb,
                &split.test,
                &EvalOptions::default(),
            )?;
            row.push(report.overall.map_or(0.0, |m| m.mrr));
        }
        println!(
            "{:<22} {:>10.3} {:>12.3}",
            format!("{ablation:?}"),
            row[0],
            row[1]
        );
    }
    Ok(())
}
