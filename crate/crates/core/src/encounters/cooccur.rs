use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EncounterRecord, EncounterStore};
use crate::code::Code;
use crate::kb::Problem;

/// Maximum gap, in days, for the two-week co-occurrence windows (inclusive).
pub const TWO_WEEKS_DAYS: i64 = 14;

/// When a problem and a target are said to co-occur for one patient.
/// Ordered from most to least restrictive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CoocDefinition {
    /// An order for the target lists one of the problem's codes as its
    /// linked diagnosis.
    Explicit,
    SameEncounter,
    TwoWeeksSameFacility,
    TwoWeeksAnyFacility,
}

impl CoocDefinition {
    pub const ALL: [CoocDefinition; 4] = [
        CoocDefinition::Explicit,
        CoocDefinition::SameEncounter,
        CoocDefinition::TwoWeeksSameFacility,
        CoocDefinition::TwoWeeksAnyFacility,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-patient co-occurrence counts for every (problem, target) pair, for
/// all four definitions at once.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooccurrenceCounts {
    /// Distinct patients co-occurring under each definition.
    pub numerators: BTreeMap<(String, Code), [u64; 4]>,
    /// Distinct patients with an order for the target.
    pub target_patients: BTreeMap<Code, u64>,
    /// Distinct patients with any of the problem's definition codes.
    pub problem_patients: BTreeMap<String, u64>,
}

#[derive(Clone, Copy)]
struct Event<'a> {
    encounter: usize,
    date: NaiveDate,
    facility: &'a str,
}

impl CooccurrenceCounts {
    pub fn compute<'p>(
        store: &EncounterStore,
        problems: impl IntoIterator<Item = &'p Problem>,
    ) -> Self {
        let problems: Vec<&Problem> = problems.into_iter().collect();
        let mut by_dx: HashMap<&Code, Vec<usize>> = HashMap::new();
        for (i, p) in problems.iter().enumerate() {
            for c in &p.definition {
                by_dx.entry(c).or_default().push(i);
            }
        }

        let timelines: Vec<&[EncounterRecord]> =
            store.patient_timelines().map(|(_, t)| t).collect();
        let partials: Vec<CooccurrenceCounts> = timelines
            .par_iter()
            .map(|timeline| patient_counts(timeline, &problems, &by_dx))
            .collect();

        let mut total = CooccurrenceCounts::default();
        for part in partials {
            total.merge(part);
        }
        total
    }

    fn merge(&mut self, other: CooccurrenceCounts) {
        for (k, v) in other.numerators {
            let slot = self.numerators.entry(k).or_insert([0; 4]);
            for (a, b) in slot.iter_mut().zip(v) {
                *a += b;
            }
        }
        for (k, v) in other.target_patients {
            *self.target_patients.entry(k).or_insert(0) += v;
        }
        for (k, v) in other.problem_patients {
            *self.problem_patients.entry(k).or_insert(0) += v;
        }
    }

    /// Normalized co-occurrence under `definition`. Pairs whose target has
    /// no patients are absent; pairs that never co-occur are absent too and
    /// read as 0.
    pub fn normalized(&self, definition: CoocDefinition) -> BTreeMap<(String, Code), f64> {
        self.numerators
            .iter()
            .filter_map(|((p, t), nums)| {
                let denom = *self.target_patients.get(t)?;
                let num = nums[definition.index()];
                (denom > 0 && num > 0).then(|| ((p.clone(), t.clone()), num as f64 / denom as f64))
            })
            .collect()
    }

    pub fn value(&self, problem: &str, target: &Code, definition: CoocDefinition) -> f64 {
        let denom = self.target_patients.get(target).copied().unwrap_or(0);
        if denom == 0 {
            return 0.0;
        }
        self.numerators
            .get(&(problem.to_string(), target.clone()))
            .map_or(0.0, |n| n[definition.index()] as f64 / denom as f64)
    }
}

fn patient_counts(
    timeline: &[EncounterRecord],
    problems: &[&Problem],
    by_dx: &HashMap<&Code, Vec<usize>>,
) -> CooccurrenceCounts {
    let mut problem_events: BTreeMap<usize, Vec<Event>> = BTreeMap::new();
    let mut explicit: BTreeMap<usize, BTreeSet<&Code>> = BTreeMap::new();
    let mut target_events: BTreeMap<&Code, Vec<Event>> = BTreeMap::new();

    for (i, e) in timeline.iter().enumerate() {
        let ev = Event {
            encounter: i,
            date: e.date,
            facility: &e.facility_id,
        };
        let present: BTreeSet<usize> = e
            .diagnoses
            .iter()
            .filter_map(|d| by_dx.get(d))
            .flatten()
            .copied()
            .collect();
        for p in present {
            problem_events.entry(p).or_default().push(ev);
        }
        for o in &e.orders {
            let events = target_events.entry(&o.code).or_default();
            if events.last().is_none_or(|l| l.encounter != i) {
                events.push(ev);
            }
            if let Some(link) = &o.linked_diagnosis {
                for &p in by_dx.get(link).into_iter().flatten() {
                    explicit.entry(p).or_default().insert(&o.code);
                }
            }
        }
    }

    let mut out = CooccurrenceCounts::default();
    for t in target_events.keys() {
        out.target_patients.insert((*t).clone(), 1);
    }
    for (&p, p_events) in &problem_events {
        out.problem_patients.insert(problems[p].id.clone(), 1);
        for (&t, t_events) in &target_events {
            let mut flags = [0u64; 4];
            if explicit.get(&p).is_some_and(|s| s.contains(t)) {
                flags[CoocDefinition::Explicit.index()] = 1;
            }
            for a in p_events {
                for b in t_events {
                    let near = (a.date - b.date).num_days().abs() <= TWO_WEEKS_DAYS;
                    if a.encounter == b.encounter {
                        flags[CoocDefinition::SameEncounter.index()] = 1;
                    }
                    if near && a.facility == b.facility {
                        flags[CoocDefinition::TwoWeeksSameFacility.index()] = 1;
                    }
                    if near {
                        flags[CoocDefinition::TwoWeeksAnyFacility.index()] = 1;
                    }
                }
            }
            if flags.iter().any(|&f| f > 0) {
                out.numerators
                    .insert((problems[p].id.clone(), t.clone()), flags);
            }
        }
    }
    out
}

/// Normalized co-occurrence for every (problem, target) pair under one
/// definition.
pub fn cooccurrence<'p>(
    store: &EncounterStore,
    problems: impl IntoIterator<Item = &'p Problem>,
    definition: CoocDefinition,
) -> BTreeMap<(String, Code), f64> {
    CooccurrenceCounts::compute(store, problems).normalized(definition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encounters::tests::{code, enc};
    use crate::encounters::IngestOptions;
    use proptest::prelude::*;

    fn problem(id: &str, codes: &[&str]) -> Problem {
        Problem {
            id: id.into(),
            name: id.into(),
            definition: codes.iter().map(|c| code(c)).collect(),
        }
    }

    #[test]
    fn single_patient_same_encounter() {
        let store = EncounterStore::from_records(
            vec![enc(
                "p",
                "e",
                "2020-01-01",
                "f",
                &["ICD10:D"],
                &[("RXNORM:M", None)],
                None,
            )],
            IngestOptions::default(),
        )
        .unwrap();
        let p = problem("P", &["ICD10:D"]);
        let same = cooccurrence(&store, [&p], CoocDefinition::SameEncounter);
        assert_eq!(same[&("P".to_string(), code("RXNORM:M"))], 1.0);
        let explicit = CooccurrenceCounts::compute(&store, [&p]);
        assert_eq!(
            explicit.value("P", &code("RXNORM:M"), CoocDefinition::Explicit),
            0.0
        );
    }

    /// Independent oracle: for each patient, scan every pair of encounters.
    fn brute_force(records: &[EncounterRecord], p: &Problem, m: &Code, same_facility: bool) -> f64 {
        let patients: BTreeSet<&str> = records.iter().map(|r| r.patient_id.as_str()).collect();
        let (mut num, mut den) = (0, 0);
        for pid in patients {
            let mine: Vec<&EncounterRecord> =
                records.iter().filter(|r| r.patient_id == pid).collect();
            if !mine.iter().any(|r| r.orders.iter().any(|o| &o.code == m)) {
                continue;
            }
            den += 1;
            let hit = mine.iter().any(|a| {
                a.diagnoses.iter().any(|d| p.definition.contains(d))
                    && mine.iter().any(|b| {
                        b.orders.iter().any(|o| &o.code == m)
                            && (a.date - b.date).num_days().abs() <= 14
                            && (!same_facility || a.facility_id == b.facility_id)
                    })
            });
            if hit {
                num += 1;
            }
        }
        num as f64 / den as f64
    }

    #[test]
    fn six_patient_two_week_same_facility() {
        let records = vec![
            // p1: d then m 10 days later, same facility -> hit
            enc("p1", "a1", "2020-03-01", "F1", &["ICD10:D"], &[], None),
            enc(
                "p1",
                "a2",
                "2020-03-11",
                "F1",
                &[],
                &[("RXNORM:M", None)],
                None,
            ),
            // p2: m then d exactly 14 days later, same facility -> hit
            enc(
                "p2",
                "b1",
                "2020-03-01",
                "F2",
                &[],
                &[("RXNORM:M", None)],
                None,
            ),
            enc("p2", "b2", "2020-03-15", "F2", &["ICD10:D"], &[], None),
            // p3: 15 days apart -> miss
            enc("p3", "c1", "2020-03-01", "F1", &["ICD10:D"], &[], None),
            enc(
                "p3",
                "c2",
                "2020-03-16",
                "F1",
                &[],
                &[("RXNORM:M", None)],
                None,
            ),
            // p4: within window but different facility -> miss
            enc("p4", "d1", "2020-03-01", "F1", &["ICD10:D"], &[], None),
            enc(
                "p4",
                "d2",
                "2020-03-03",
                "F2",
                &[],
                &[("RXNORM:M", None)],
                None,
            ),
            // p5: d only, p6: unrelated
            enc("p5", "e1", "2020-03-01", "F1", &["ICD10:D"], &[], None),
            enc(
                "p6",
                "f1",
                "2020-03-01",
                "F1",
                &["ICD10:Z"],
                &[("CPT:X", None)],
                None,
            ),
        ];
        let p = problem("P", &["ICD10:D"]);
        let m = code("RXNORM:M");
        let oracle = brute_force(&records, &p, &m, true);
        assert_eq!(oracle, 0.5);
        let store =
            EncounterStore::from_records(records.clone(), IngestOptions::default()).unwrap();
        let counts = CooccurrenceCounts::compute(&store, [&p]);
        assert_eq!(
            counts.value("P", &m, CoocDefinition::TwoWeeksSameFacility),
            0.5
        );
        assert_eq!(
            counts.value("P", &m, CoocDefinition::TwoWeeksAnyFacility),
            brute_force(&records, &p, &m, false)
        );
        assert_eq!(
            counts.value("P", &m, CoocDefinition::TwoWeeksAnyFacility),
            0.75
        );
        assert_eq!(counts.value("P", &m, CoocDefinition::SameEncounter), 0.0);
        assert_eq!(counts.problem_patients["P"], 5);
        assert_eq!(counts.target_patients[&m], 4);
    }

    #[test]
    fn duplicated_orders_count_once_per_patient() {
        let store = EncounterStore::from_records(
            vec![
                enc(
                    "p",
                    "e1",
                    "2020-01-01",
                    "f",
                    &["ICD10:D"],
                    &[("RXNORM:M", Some("ICD10:D")), ("RXNORM:M", None)],
                    None,
                ),
                enc(
                    "p",
                    "e2",
                    "2020-01-02",
                    "f",
                    &["ICD10:D"],
                    &[("RXNORM:M", Some("ICD10:D"))],
                    None,
                ),
            ],
            IngestOptions::default(),
        )
        .unwrap();
        let counts = CooccurrenceCounts::compute(&store, [&problem("P", &["ICD10:D"])]);
        assert_eq!(
            counts.numerators[&("P".to_string(), code("RXNORM:M"))],
            [1, 1, 1, 1]
        );
    }

    pub(crate) fn arb_store() -> impl Strategy<Value = EncounterStore> {
        let order = (0usize..5, prop::option::of(0usize..3));
        let record = (
            0usize..6,
            0i64..60,
            0usize..2,
            prop::collection::vec(0usize..3, 0..3),
            prop::collection::vec(order, 0..4),
        );
        prop::collection::vec(record, 0..40).prop_map(|recs| {
            let base: NaiveDate = "2021-01-01".parse().unwrap();
            let records = recs
                .into_iter()
                .enumerate()
                .map(|(i, (p, day, fac, dx, orders))| {
                    let dx_codes: Vec<String> = dx.iter().map(|d| format!("ICD10:D{d}")).collect();
                    let mut e = enc(
                        &format!("p{p}"),
                        &format!("e{i}"),
                        &(base + chrono::Duration::days(day)).to_string(),
                        &format!("F{fac}"),
                        &dx_codes.iter().map(String::as_str).collect::<Vec<_>>(),
                        &[],
                        None,
                    );
                    for (m, link) in orders {
                        let linked = link
                            .map(|l| code(&format!("ICD10:D{l}")))
                            .filter(|l| e.diagnoses.contains(l));
                        e.orders.push(crate::encounters::Order {
                            kind: crate::code::RelationKind::Medication,
                            code: code(&format!("RXNORM:M{m}")),
                            linked_diagnosis: linked,
                        });
                    }
                    e
                })
                .collect();
            EncounterStore::from_records(records, IngestOptions::default()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn definitions_are_nested(store in arb_store()) {
            let problems = [problem("A", &["ICD10:D0"]), problem("B", &["ICD10:D1", "ICD10:D2"])];
            let counts = CooccurrenceCounts::compute(&store, problems.iter());
            for (key, nums) in &counts.numerators {
                let denom = counts.target_patients[&key.1];
                prop_assert!(nums[3] <= denom);
                prop_assert!(nums[0] <= nums[1] && nums[1] <= nums[2] && nums[2] <= nums[3], "{:?} {:?}", key, nums);
            }
        }
    }
}
