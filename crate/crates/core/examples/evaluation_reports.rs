//! Train a model and break its test performance down by tie policy,
//! problem and target frequency.
//!
//! cargo run --release --example evaluation_reports

use std::collections::BTreeMap;

use pomr::encounters::{FeatureSet, DEFAULT_SPECIALTY_VOCAB_SIZE};
use pomr::eval::{
    evaluate, frequency_bin_report, frequency_bins_csv, nearest_problems, per_problem_csv,
    per_problem_report, EvalOptions, TiePolicy,
};
use pomr::kb::{split_random, DEFAULT_FRACTIONS};
use pomr::model::{initialize, model_targets, train, InitConfig, ModelScorer, TrainConfig};
use pomr::synth::{generate, PlantSpec};

fn main() -> pomr::Result<()> {
    let data = generate(&PlantSpec {
        n_problems: 8,
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
        &InitConfig::default(),
    )?;
    let split = split_random(&data.kb, DEFAULT_FRACTIONS, 1)?;
    let (params, history) = train(
        &data.kb,
        &split,
        init,
        Some(&features),
        &TrainConfig {
            max_epochs: 60,
            ..TrainConfig::default()
        },
    )?;
    println!(
        "best epoch {} of {}",
        history.best_epoch,
        history.epochs.len() - 1
    );

    let scorer = ModelScorer {
        params: &params,
        features: Some(&features),
    };
    for policy in [TiePolicy::Strict, TiePolicy::Median] {
        let report = evaluate(
            &scorer,
            &data.kb,
            &split.test,
            &EvalOptions::with_policy(policy),
        )?;
        if let Some(m) = report.overall {
            println!(
                "{policy:?}: MR {:.3} MRR {:.3} H@1 {:.3} H@5 {:.3}",
                m.mr, m.mrr, m.hits1, m.hits5
            );
        }
    }

    let report = evaluate(&scorer, &data.kb, &split.test, &EvalOptions::default())?;
    print!(
        "{}",
        per_problem_csv(&per_problem_report(&report, &data.kb))
    );
    print!(
        "{}",
        frequency_bins_csv(&frequency_bin_report(
            &report,
            &data.store.occurrence_counts(),
            4
        ))
    );
    for (id, cos) in nearest_problems(&params, "PROB000", 3)? {
        println!("PROB000 ~ {id} ({cos:.3})");
    }
    Ok(())
}
