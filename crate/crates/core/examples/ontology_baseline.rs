//! Rank candidates with ontology lookups only and report how much of the
//! knowledge base the medication map reaches.
//!
//! cargo run --release --example ontology_baseline

use pomr::baseline::{medication_coverage, BaselineScorer};
use pomr::eval::{evaluate, EvalOptions, TiePolicy};
use pomr::synth::{generate, PlantSpec};

fn main() -> pomr::Result<()> {
    let data = generate(&PlantSpec::default())?;
    let all: Vec<usize> = (0..data.kb.triplets().len()).collect();
    let scorer = BaselineScorer {
        maps: &data.maps,
        kb: &data.kb,
    };
    let report = evaluate(
        &scorer,
        &data.kb,
        &all,
        &EvalOptions::with_policy(TiePolicy::Median),
    )?;
    for (kind, m) in &report.per_kind {
        println!(
            "{kind:?}: MR {:.2} MRR {:.3} H@1 {:.3} H@5 {:.3} ({} positives)",
            m.mr, m.mrr, m.hits1, m.hits5, m.count
        );
    }
    println!("{} positives skipped as unsupported", report.unsupported);
    let cov = medication_coverage(&data.maps, &data.kb, &all);
    println!(
        "{} medications: {:.1}% mapped, {:.1}% relevant to a problem",
        cov.medications,
        100.0 * cov.mapped,
        100.0 * cov.matching
    );
    Ok(())
}
