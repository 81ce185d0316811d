//! Simulate two annotators labelling the same candidates and measure their
//! agreement; the later of two events on the same key wins.
//!
//! cargo run --example annotator_agreement

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pomr::eval::agreement;
use pomr::kb::{AnnotationEvent, Label};
use pomr::RelationKind;

fn main() -> pomr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..40 {
        let truth = rng.gen_bool(0.4);
        for (who, log, noise) in [("alice", &mut a, 0.1), ("bob", &mut b, 0.2)] {
            let label = if rng.gen_bool(noise) { !truth } else { truth };
            log.push(AnnotationEvent {
                annotator: who.into(),
                problem: "PROB000".into(),
                relation: RelationKind::Medication,
                target: format!("RXNORM:{}", 100000 + i).parse()?,
                label: if label {
                    Label::Positive
                } else {
                    Label::Negative
                },
                round: 1,
                timestamp: format!("2024-03-01T10:{:02}:00Z", i),
            });
        }
    }
    let first = agreement(&a, &b)?;
    println!(
        "{} shared items, kappa {:.3}, {} disagreements",
        first.n,
        first.kappa,
        first.disagreements.len()
    );

    // Bob revisits his disagreements and adopts Alice's labels.
    for key in &first.disagreements {
        let mine = a
            .iter()
            .find(|e| (&e.problem, e.relation, &e.target) == (&key.0, key.1, &key.2))
            .unwrap();
        b.push(AnnotationEvent {
            annotator: "bob".into(),
            timestamp: "2024-03-02T09:00:00Z".into(),
            ..mine.clone()
        });
    }
    let second = agreement(&a, &b)?;
    println!("after review: kappa {:.3}", second.kappa);
    Ok(())
}
