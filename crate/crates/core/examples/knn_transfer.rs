//! Fill gaps in an external embedding table with nearest-neighbour transfer
//! from site-trained vectors, then initialize a model from the result.
//!
//! cargo run --release --example knn_transfer

use pomr::embedding::{train_skipgram, EmbeddingTable, SkipGramConfig, SourceTag};
use pomr::model::{initialize, model_targets, InitConfig, InitSource};
use pomr::synth::{generate, PlantSpec};

fn main() -> pomr::Result<()> {
    let data = generate(&PlantSpec {
        n_problems: 6,
        n_targets_per_kind: 20,
        n_patients: 200,
        ..PlantSpec::default()
    })?;
    let vocab = data.store.build_vocabulary(1);
    let site = train_skipgram(
        &data.store,
        &vocab,
        &SkipGramConfig {
            dim: 16,
            epochs: 5,
            ..SkipGramConfig::default()
        },
    )?;

    // External vectors live in their own space: a rescaled copy of two thirds of the site table.
    let mut external = EmbeddingTable::new(site.dim(), SourceTag::External);
    for (i, (t, v)) in site.iter().enumerate() {
        if i % 3 != 0 {
            external.insert(t, v.iter().map(|x| 2.0 * x).collect())?;
        }
    }
    println!(
        "site table {} codes, external table {} codes",
        site.len(),
        external.len()
    );

    let targets = model_targets(&data.kb, &vocab);
    let freqs = data.store.occurrence_counts();
    for source in [InitSource::External, InitSource::Combined] {
        let (params, report) = initialize(
            &data.kb,
            &targets,
            Some(&external),
            Some(&site),
            &freqs,
            0,
            &InitConfig {
                source,
                ..InitConfig::default()
            },
        )?;
        println!(
            "{source:?}: {} targets, {} random, {} transferred, {} random problems",
            params.targets().len(),
            report.random_targets,
            report.transferred,
            report.random_problems
        );
    }
    Ok(())
}
