use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cooccur::{CoocDefinition, CooccurrenceCounts};
use super::specialty::specialty_vocabulary;
use super::EncounterStore;
use crate::code::{Code, CodeSystem};
use crate::error::{Error, Result};
use crate::kb::Problem;

/// Column order of [`PairFeatures::vector`].
pub const FEATURE_NAMES: [&str; 6] = [
    "cooc_explicit",
    "cooc_encounter",
    "cooc_2wk_same_facility",
    "cooc_2wk_any_facility",
    "log_problem_patients",
    "log_target_patients",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    pub cooc_explicit: f64,
    pub cooc_encounter: f64,
    pub cooc_2wk_same_facility: f64,
    pub cooc_2wk_any_facility: f64,
    pub problem_patient_count: u64,
    pub target_patient_count: u64,
    pub log_problem_patients: f64,
    pub log_target_patients: f64,
}

impl PairFeatures {
    /// Model-facing feature vector, ordered as [`FEATURE_NAMES`].
    pub fn vector(&self) -> [f64; 6] {
        [
            self.cooc_explicit,
            self.cooc_encounter,
            self.cooc_2wk_same_facility,
            self.cooc_2wk_any_facility,
            self.log_problem_patients,
            self.log_target_patients,
        ]
    }
}

/// Everything the feature-augmented scorer reads from the encounter log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSet {
    pub specialty_vocab: Vec<String>,
    pub counts: CooccurrenceCounts,
    pub problem_specialty: BTreeMap<String, Vec<f64>>,
    pub target_specialty: BTreeMap<Code, Vec<f64>>,
}

impl FeatureSet {
    pub fn build(
        store: &EncounterStore,
        problems: &[&Problem],
        specialty_vocab_size: usize,
    ) -> Self {
        let specialty_vocab = specialty_vocabulary(store, specialty_vocab_size);
        let counts = CooccurrenceCounts::compute(store, problems.iter().copied());

        let slot: HashMap<&str, usize> = specialty_vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut by_dx: HashMap<&Code, Vec<&str>> = HashMap::new();
        for p in problems {
            for c in &p.definition {
                by_dx.entry(c).or_default().push(&p.id);
            }
        }
        let dim = specialty_vocab.len();
        let mut problem_specialty: BTreeMap<String, Vec<f64>> = problems
            .iter()
            .map(|p| (p.id.clone(), vec![0.0; dim]))
            .collect();
        let mut target_specialty: BTreeMap<Code, Vec<f64>> = BTreeMap::new();
        for e in store.encounters() {
            let Some(&s) = e.provider_specialty.as_deref().and_then(|s| slot.get(s)) else {
                continue;
            };
            let problems_here: BTreeSet<&str> = e
                .diagnoses
                .iter()
                .filter_map(|d| by_dx.get(d))
                .flatten()
                .copied()
                .collect();
            for p in problems_here {
                problem_specialty.get_mut(p).expect("known problem")[s] += 1.0;
            }
            let codes: BTreeSet<&Code> = e.orders.iter().map(|o| &o.code).collect();
            for c in codes {
                target_specialty
                    .entry(c.clone())
                    .or_insert_with(|| vec![0.0; dim])[s] += 1.0;
            }
        }

        FeatureSet {
            specialty_vocab,
            counts,
            problem_specialty,
            target_specialty,
        }
    }

    pub fn specialty_dim(&self) -> usize {
        self.specialty_vocab.len()
    }

    /// Features of a pair; anything not observed reads as zero.
    pub fn pair_features(&self, problem: &str, target: &Code) -> PairFeatures {
        let c = &self.counts;
        let value = |d: CoocDefinition| c.value(problem, target, d);
        let np = c.problem_patients.get(problem).copied().unwrap_or(0);
        let nt = c.target_patients.get(target).copied().unwrap_or(0);
        PairFeatures {
            cooc_explicit: value(CoocDefinition::Explicit),
            cooc_encounter: value(CoocDefinition::SameEncounter),
            cooc_2wk_same_facility: value(CoocDefinition::TwoWeeksSameFacility),
            cooc_2wk_any_facility: value(CoocDefinition::TwoWeeksAnyFacility),
            problem_patient_count: np,
            target_patient_count: nt,
            log_problem_patients: (np as f64).ln_1p(),
            log_target_patients: (nt as f64).ln_1p(),
        }
    }

    pub fn problem_specialty(&self, problem: &str) -> Vec<f64> {
        self.problem_specialty
            .get(problem)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.specialty_dim()])
    }

    pub fn target_specialty(&self, target: &Code) -> Vec<f64> {
        self.target_specialty
            .get(target)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.specialty_dim()])
    }

    pub fn to_json(&self) -> String {
        let file = FeatureFile {
            specialty_vocab: self.specialty_vocab.clone(),
            problems: self
                .problem_specialty
                .keys()
                .chain(self.counts.problem_patients.keys())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(|id| ProblemRow {
                    id: id.clone(),
                    patients: self.counts.problem_patients.get(id).copied().unwrap_or(0),
                    specialty: self.problem_specialty(id),
                })
                .collect(),
            targets: self
                .counts
                .target_patients
                .keys()
                .chain(self.target_specialty.keys())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(|code| TargetRow {
                    code: code.clone(),
                    patients: self.counts.target_patients.get(code).copied().unwrap_or(0),
                    specialty: self.target_specialty(code),
                })
                .collect(),
            pairs: self
                .counts
                .numerators
                .iter()
                .map(|((p, t), n)| PairRow {
                    problem: p.clone(),
                    target: t.clone(),
                    patients: *n,
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("features serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FeatureFile = serde_json::from_str(text)?;
        let dim = file.specialty_vocab.len();
        let mut out = FeatureSet {
            specialty_vocab: file.specialty_vocab,
            ..Default::default()
        };
        for p in file.problems {
            check_dim(dim, &p.specialty)?;
            if p.patients > 0 {
                out.counts.problem_patients.insert(p.id.clone(), p.patients);
            }
            out.problem_specialty.insert(p.id, p.specialty);
        }
        for t in file.targets {
            check_dim(dim, &t.specialty)?;
            if t.patients > 0 {
                out.counts
                    .target_patients
                    .insert(t.code.clone(), t.patients);
            }
            if t.specialty.iter().any(|&x| x != 0.0) {
                out.target_specialty.insert(t.code, t.specialty);
            }
        }
        for row in file.pairs {
            out.counts
                .numerators
                .insert((row.problem, row.target), row.patients);
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Columnar pair-feature cache: one row per (problem, observed target).
    pub fn write_csv<W: std::io::Write>(&self, problems: &[&str], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["problem_id", "system", "id"];
        header.extend(FEATURE_NAMES.iter().take(4));
        header.extend(["problem_patients", "target_patients"]);
        w.write_record(&header)?;
        for p in problems {
            for t in self.counts.target_patients.keys() {
                let f = self.pair_features(p, t);
                let mut row = vec![p.to_string(), t.system.to_string(), t.id.clone()];
                row.extend(f.vector()[..4].iter().map(|v| v.to_string()));
                row.push(f.problem_patient_count.to_string());
                row.push(f.target_patient_count.to_string());
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Rebuild pair features (not specialty vectors) from a CSV cache.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut out = FeatureSet::default();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |j: usize| rec.get(j).unwrap_or("");
            let bad = |what: &str| Error::Parse {
                line,
                message: format!("bad {what}"),
            };
            let problem = field(0).to_string();
            let system: CodeSystem = field(1).parse()?;
            let target = Code::new(system, field(2))?;
            let values: Vec<f64> = (3..7)
                .map(|j| {
                    field(j)
                        .parse::<f64>()
                        .map_err(|_| bad(FEATURE_NAMES[j - 3]))
                })
                .collect::<Result<_>>()?;
            let np: u64 = field(7).parse().map_err(|_| bad("problem_patients"))?;
            let nt: u64 = field(8).parse().map_err(|_| bad("target_patients"))?;
            if np > 0 {
                out.counts.problem_patients.insert(problem.clone(), np);
            }
            if nt > 0 {
                out.counts.target_patients.insert(target.clone(), nt);
            }
            let nums: Vec<u64> = values
                .iter()
                .map(|v| (v * nt as f64).round() as u64)
                .collect();
            if nums.iter().any(|&n| n > 0) {
                out.counts
                    .numerators
                    .insert((problem, target), [nums[0], nums[1], nums[2], nums[3]]);
            }
        }
        Ok(out)
    }
}

fn check_dim(dim: usize, v: &[f64]) -> Result<()> {
    if v.len() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct FeatureFile {
    specialty_vocab: Vec<String>,
    problems: Vec<ProblemRow>,
    targets: Vec<TargetRow>,
    pairs: Vec<PairRow>,
}

#[derive(Serialize, Deserialize)]
struct ProblemRow {
    id: String,
    patients: u64,
    specialty: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TargetRow {
    code: Code,
    patients: u64,
    specialty: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PairRow {
    problem: String,
    target: Code,
    patients: [u64; 4],
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encounters::tests::{code, enc};
    use crate::encounters::IngestOptions;

    fn fixture() -> (EncounterStore, Problem) {
        let store = EncounterStore::from_records(
            vec![
                enc(
                    "p1",
                    "e1",
                    "2020-01-01",
                    "f",
                    &["ICD10:D"],
                    &[("RXNORM:M", Some("ICD10:D"))],
                    Some("cardiology"),
                ),
                enc(
                    "p2",
                    "e2",
                    "2020-01-01",
                    "f",
                    &["ICD10:D"],
                    &[],
                    Some("cardiology"),
                ),
                enc(
                    "p3",
                    "e3",
                    "2020-01-01",
                    "f",
                    &[],
                    &[("RXNORM:M", None), ("CPT:X", None)],
                    Some("surgery"),
                ),
            ],
            IngestOptions::default(),
        )
        .unwrap();
        let p = Problem {
            id: "P".into(),
            name: "P".into(),
            definition: [code("ICD10:D")].into_iter().collect(),
        };
        (store, p)
    }

    #[test]
    fn assembles_pair_features() {
        let (store, p) = fixture();
        let fs = FeatureSet::build(&store, &[&p], 24);
        let f = fs.pair_features("P", &code("RXNORM:M"));
        assert_eq!(f.cooc_explicit, 0.5);
        assert_eq!(f.cooc_encounter, 0.5);
        assert_eq!(f.problem_patient_count, 2);
        assert_eq!(f.target_patient_count, 2);
        assert!((f.log_target_patients - 3f64.ln()).abs() < 1e-15);

        let unseen = fs.pair_features("P", &code("CPT:X"));
        assert_eq!(unseen.vector()[..4], [0.0; 4]);
        let never = fs.pair_features("P", &code("LOINC:NOPE"));
        assert_eq!(never.target_patient_count, 0);
        assert_eq!(never.log_target_patients, 0.0);

        assert_eq!(fs.specialty_vocab, vec!["cardiology", "surgery"]);
        assert_eq!(fs.problem_specialty("P"), vec![2.0, 0.0]);
        assert_eq!(fs.target_specialty(&code("RXNORM:M")), vec![1.0, 1.0]);
        assert_eq!(FeatureSet::build(&store, &[&p], 24), fs);
    }

    #[test]
    fn json_and_csv_round_trip() {
        let (store, p) = fixture();
        let fs = FeatureSet::build(&store, &[&p], 24);
        let again = FeatureSet::from_json(&fs.to_json()).unwrap();
        assert_eq!(again.to_json(), fs.to_json());
        for t in ["RXNORM:M", "CPT:X"] {
            assert_eq!(
                again.pair_features("P", &code(t)),
                fs.pair_features("P", &code(t))
            );
        }

        let mut buf = Vec::new();
        fs.write_csv(&["P"], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("problem_id,system,id,cooc_explicit"));
        let from_csv = FeatureSet::read_csv(&buf[..]).unwrap();
        assert_eq!(
            from_csv.pair_features("P", &code("RXNORM:M")),
            fs.pair_features("P", &code("RXNORM:M"))
        );
    }
}
