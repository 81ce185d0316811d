//! Propose annotation candidates for a problem by ranking codes on how much
//! more often they appear in encounters that carry the problem's diagnosis.
//!
//! cargo run --release --example candidate_generation -- [problem-id]

use std::collections::BTreeSet;

use pomr::encounters::{candidate_list, ImportanceIndex, ImportanceOptions};
use pomr::synth::{generate, PlantSpec};
use pomr::RelationKind;

fn main() -> pomr::Result<()> {
    let id = std::env::args().nth(1).unwrap_or_else(|| "PROB000".into());
    let data = generate(&PlantSpec::default())?;
    let problem = data
        .kb
        .problem(&id)
        .ok_or_else(|| pomr::Error::UnknownProblem(id.clone()))?;
    let vocab = data.store.build_vocabulary(1);
    let index = ImportanceIndex::new(&data.store, ImportanceOptions::default());
    let truth = &data.truth[&id];
    for kind in RelationKind::ALL {
        let top = candidate_list(
            &index,
            problem,
            kind,
            vocab.codes(kind),
            10,
            &BTreeSet::new(),
        );
        let hits = top
            .iter()
            .filter(|c| truth[&kind].contains(&c.code))
            .count();
        println!(
            "{kind:?}: top {} holds {hits} of {} planted codes",
            top.len(),
            truth[&kind].len()
        );
        for c in top.iter().take(3) {
            println!("  {:<16} {:.3}", c.code.to_string(), c.score);
        }
    }
    Ok(())
}
