use std::collections::BTreeMap;

use super::EncounterStore;
use crate::code::Code;
use crate::kb::Problem;

pub const DEFAULT_SPECIALTY_VOCAB_SIZE: usize = 24;

/// The `size` specialties listed on the most encounters, ties broken by name.
pub fn specialty_vocabulary(store: &EncounterStore, size: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for e in store.encounters() {
        if let Some(s) = &e.provider_specialty {
            *counts.entry(s.as_str()).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(size)
        .map(|(s, _)| s.to_string())
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub enum SpecialtyToken<'a> {
    Code(&'a Code),
    Problem(&'a Problem),
}

/// Number of encounters that contain `token` and list each specialty.
pub fn specialty_vector(
    store: &EncounterStore,
    token: SpecialtyToken<'_>,
    vocab: &[String],
) -> Vec<f64> {
    let index: BTreeMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut v = vec![0.0; vocab.len()];
    for e in store.encounters() {
        let Some(slot) = e.provider_specialty.as_deref().and_then(|s| index.get(s)) else {
            continue;
        };
        let hit = match token {
            SpecialtyToken::Code(c) => e.mentions(c),
            SpecialtyToken::Problem(p) => e.diagnoses.iter().any(|d| p.is_defined_by(d)),
        };
        if hit {
            v[*slot] += 1.0;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encounters::tests::{code, enc};
    use crate::encounters::IngestOptions;

    fn store() -> EncounterStore {
        EncounterStore::from_records(
            vec![
                enc(
                    "p",
                    "e1",
                    "2020-01-01",
                    "f",
                    &[],
                    &[("RXNORM:T", None)],
                    Some("cardiology"),
                ),
                enc(
                    "p",
                    "e2",
                    "2020-01-02",
                    "f",
                    &[],
                    &[("RXNORM:T", None)],
                    Some("cardiology"),
                ),
                enc(
                    "p",
                    "e3",
                    "2020-01-03",
                    "f",
                    &[],
                    &[("RXNORM:T", None)],
                    None,
                ),
                enc(
                    "q",
                    "e4",
                    "2020-01-03",
                    "f",
                    &["ICD10:A"],
                    &[],
                    Some("neurology"),
                ),
                enc(
                    "q",
                    "e5",
                    "2020-01-04",
                    "f",
                    &["ICD10:A"],
                    &[],
                    Some("podiatry"),
                ),
            ],
            IngestOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn vocabulary_ranked_by_coverage() {
        let s = store();
        assert_eq!(
            specialty_vocabulary(&s, 24),
            vec!["cardiology", "neurology", "podiatry"]
        );
        assert_eq!(specialty_vocabulary(&s, 2), vec!["cardiology", "neurology"]);
    }

    #[test]
    fn counts_encounters_per_specialty() {
        let s = store();
        let vocab = specialty_vocabulary(&s, 2);
        let t = code("RXNORM:T");
        assert_eq!(
            specialty_vector(&s, SpecialtyToken::Code(&t), &vocab),
            vec![2.0, 0.0]
        );
        let absent = code("RXNORM:NOPE");
        assert_eq!(
            specialty_vector(&s, SpecialtyToken::Code(&absent), &vocab),
            vec![0.0, 0.0]
        );
        let p = Problem {
            id: "P".into(),
            name: "P".into(),
            definition: [code("ICD10:A")].into_iter().collect(),
        };
        // podiatry is out of vocabulary and contributes nothing
        assert_eq!(
            specialty_vector(&s, SpecialtyToken::Problem(&p), &vocab),
            vec![0.0, 1.0]
        );
    }
}
