//! Score a triplet by hand: the bilinear embedding term, the specialty term
//! and the linear head over co-occurrence features.
//!
//! cargo run --example distmult_scoring

use pomr::model::{scale_specialty, ModelParams, PairInputs};
use pomr::{Code, RelationKind};

fn main() -> pomr::Result<()> {
    let metformin: Code = "RXNORM:6809".parse()?;
    let a1c: Code = "LOINC:4548-4".parse()?;
    let mut params = ModelParams::new(
        2,
        3,
        6,
        vec!["DIABETES".into()],
        vec![
            (RelationKind::Medication, metformin.clone()),
            (RelationKind::Lab, a1c.clone()),
        ],
    );
    params.problem_vec_mut(0).copy_from_slice(&[1.0, 2.0]);
    params.target_vec_mut(0).copy_from_slice(&[3.0, 4.0]);
    params.target_vec_mut(1).copy_from_slice(&[0.5, -1.0]);

    // Relation vectors start at all ones, so the embedding term is a dot product.
    for (t, code) in [
        (RelationKind::Medication, &metformin),
        (RelationKind::Lab, &a1c),
    ] {
        println!(
            "g_emb(DIABETES, {t}, {code}) = {}",
            params.score_emb("DIABETES", t, code)?
        );
    }

    params
        .relation_mut(RelationKind::Medication)
        .copy_from_slice(&[0.5, 2.0]);
    println!(
        "after reweighting MEDICATION: {}",
        params.score_emb("DIABETES", RelationKind::Medication, &metformin)?
    );

    let inputs = PairInputs {
        spec_problem: scale_specialty(&[30.0, 5.0, 0.0]),
        spec_target: scale_specialty(&[12.0, 0.0, 3.0]),
        features: vec![0.8, 0.7, 0.5, 0.4, 1.6, 2.1],
    };
    println!("head = {:?}", params.head());
    println!(
        "full score = {:.4}",
        params.score_full("DIABETES", RelationKind::Medication, &metformin, &inputs)?
    );
    Ok(())
}
