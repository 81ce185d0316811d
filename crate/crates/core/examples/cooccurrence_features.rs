//! Mine co-occurrence, specialty and importance features from a synthetic
//! encounter log and dump them as CSV.
//!
//! cargo run --release --example cooccurrence_features -- [seed]

use pomr::encounters::{CoocDefinition, FeatureSet, DEFAULT_SPECIALTY_VOCAB_SIZE, FEATURE_NAMES};
use pomr::synth::{generate, PlantSpec};

fn main() -> pomr::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let data = generate(&PlantSpec {
        seed,
        n_problems: 4,
        n_targets_per_kind: 12,
        n_patients: 200,
        ..PlantSpec::default()
    })?;
    println!(
        "{} encounters from {} patients",
        data.store.len(),
        data.store.n_patients()
    );

    let problems: Vec<_> = data.kb.problems().collect();
    let features = FeatureSet::build(&data.store, &problems, DEFAULT_SPECIALTY_VOCAB_SIZE);
    println!("specialty dimension {}", features.specialty_dim());
    println!("features: {}", FEATURE_NAMES.join(", "));
    for (i, d) in CoocDefinition::ALL.iter().enumerate() {
        println!("  cooccurrence[{i}] = {d:?}");
    }

    let ids: Vec<&str> = problems.iter().map(|p| p.id.as_str()).collect();
    let mut csv = Vec::new();
    features.write_csv(&ids[..1], &mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
