//! Train skip-gram code embeddings on patient timelines and list each
//! code's nearest neighbours.
//!
//! cargo run --release --example skipgram_embeddings -- [seed]

use pomr::embedding::{
    cosine, train_skipgram, vocab_intersection, EmbeddingTable, SkipGramConfig, SourceTag,
};
use pomr::synth::{generate, PlantSpec};

fn main() -> pomr::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let data = generate(&PlantSpec {
        seed,
        n_problems: 5,
        n_targets_per_kind: 15,
        n_patients: 50,
        p_in: 1.0,
        p_out: 0.0,
        negatives_per_kind: 5,
        ..PlantSpec::default()
    })?;
    let vocab = data.store.build_vocabulary(1);
    let table = train_skipgram(
        &data.store,
        &vocab,
        &SkipGramConfig {
            dim: 32,
            epochs: 20,
            seed,
            ..SkipGramConfig::default()
        },
    )?;
    println!("{} vectors of dimension {}", table.len(), table.dim());

    for (problem, row) in data.truth.iter().take(2) {
        let Some(anchor) = row.values().flatten().find(|c| table.get_code(c).is_some()) else {
            continue;
        };
        let query = table.get_code(anchor).unwrap();
        let mut near: Vec<(f64, &str)> = table
            .iter()
            .filter(|(t, _)| *t != anchor.token())
            .map(|(t, v)| (cosine(query, v), t))
            .collect();
        near.sort_by(|a, b| b.0.total_cmp(&a.0));
        println!("{problem}: neighbours of {anchor}");
        for (c, t) in near.iter().take(5) {
            println!("  {t:<16} {c:.3}");
        }
    }

    // Pretend half the codes are covered by an external table.
    let mut external = EmbeddingTable::new(table.dim(), SourceTag::External);
    for (t, v) in table.iter().step_by(2) {
        external.insert(t, v.to_vec())?;
    }
    for row in vocab_intersection(&vocab, &external) {
        println!(
            "{:?}: {} of {} covered ({:.2})",
            row.kind, row.shared, row.internal, row.fraction
        );
    }
    Ok(())
}
