//! Encounter-log ingest and the usage statistics mined from it:
//! vocabularies, co-occurrence features, specialty vectors, importance
//! scores and candidate lists.

mod cooccur;
mod features;
mod importance;
mod specialty;

pub use cooccur::{cooccurrence, CoocDefinition, CooccurrenceCounts};
pub use features::{FeatureSet, PairFeatures, FEATURE_NAMES};
pub use importance::{
    candidate_list, importance_score, Candidate, CandidateScorer, Importance, ImportanceIndex,
    ImportanceOptions,
};
pub use specialty::{
    specialty_vector, specialty_vocabulary, SpecialtyToken, DEFAULT_SPECIALTY_VOCAB_SIZE,
};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::code::{Code, RelationKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Setting {
    Inpatient,
    Outpatient,
    Ed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Order {
    pub kind: RelationKind,
    pub code: Code,
    /// Diagnosis the ordering provider attached to this order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linked_diagnosis: Option<Code>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub patient_id: String,
    pub encounter_id: String,
    pub date: NaiveDate,
    pub facility_id: String,
    pub setting: Setting,
    #[serde(default)]
    pub diagnoses: BTreeSet<Code>,
    #[serde(default)]
    pub orders: Vec<Order>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_specialty: Option<String>,
}

impl EncounterRecord {
    pub fn has_order(&self, code: &Code) -> bool {
        self.orders.iter().any(|o| &o.code == code)
    }

    /// Whether `code` appears anywhere on the record.
    pub fn mentions(&self, code: &Code) -> bool {
        self.diagnoses.contains(code) || self.has_order(code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// Reject orders whose linked diagnosis is missing from the encounter's
    /// diagnosis list. When false the link is kept and a warning recorded.
    pub strict_links: bool,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions { strict_links: true }
    }
}

/// Read-only, indexed encounter log. Encounters are ordered by
/// `(patient, date, encounter_id)`.
#[derive(Debug, Clone, Default)]
pub struct EncounterStore {
    encounters: Vec<EncounterRecord>,
    patients: Vec<(String, Range<usize>)>,
    code_kind: HashMap<Code, RelationKind>,
    warnings: Vec<String>,
}

impl EncounterStore {
    pub fn ingest(path: impl AsRef<Path>, opts: IngestOptions) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, opts)
    }

    pub fn from_jsonl(text: &str, opts: IngestOptions) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: EncounterRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push((i + 1, rec));
        }
        Self::build(records, opts)
    }

    pub fn from_records(records: Vec<EncounterRecord>, opts: IngestOptions) -> Result<Self> {
        Self::build(
            records
                .into_iter()
                .enumerate()
                .map(|(i, r)| (i + 1, r))
                .collect(),
            opts,
        )
    }

    fn build(records: Vec<(usize, EncounterRecord)>, opts: IngestOptions) -> Result<Self> {
        let mut seen_ids = HashSet::new();
        let mut code_kind: HashMap<Code, RelationKind> = HashMap::new();
        let mut warnings = Vec::new();

        for (line, rec) in &records {
            let line = *line;
            if !seen_ids.insert(rec.encounter_id.clone()) {
                return Err(Error::DuplicateEncounter {
                    line,
                    id: rec.encounter_id.clone(),
                });
            }
            if let Some(c) = rec.diagnoses.iter().find(|c| !c.system.is_diagnosis()) {
                return Err(Error::InvalidEncounter {
                    line,
                    message: format!("{c} is not a diagnosis code"),
                });
            }
            for order in &rec.orders {
                if !order.kind.admits(order.code.system) {
                    return Err(Error::InvalidEncounter {
                        line,
                        message: format!("{} is not a valid {} code", order.code, order.kind),
                    });
                }
                match code_kind.get(&order.code) {
                    Some(&first) if first != order.kind => {
                        return Err(Error::KindConflict {
                            line,
                            code: order.code.clone(),
                            first,
                            second: order.kind,
                        });
                    }
                    Some(_) => {}
                    None => {
                        code_kind.insert(order.code.clone(), order.kind);
                    }
                }
                if let Some(link) = &order.linked_diagnosis {
                    if !link.system.is_diagnosis() {
                        return Err(Error::InvalidEncounter {
                            line,
                            message: format!("linked diagnosis {link} is not a diagnosis code"),
                        });
                    }
                    if !rec.diagnoses.contains(link) {
                        let msg = format!(
                            "order {} links {link}, which is not on encounter {}",
                            order.code, rec.encounter_id
                        );
                        if opts.strict_links {
                            return Err(Error::InvalidEncounter { line, message: msg });
                        }
                        warnings.push(format!("line {line}: {msg}"));
                    }
                }
            }
        }

        let mut encounters: Vec<EncounterRecord> = records.into_iter().map(|(_, r)| r).collect();
        encounters.sort_by(|a, b| {
            (&a.patient_id, a.date, &a.encounter_id).cmp(&(&b.patient_id, b.date, &b.encounter_id))
        });
        let mut patients: Vec<(String, Range<usize>)> = Vec::new();
        for (i, e) in encounters.iter().enumerate() {
            match patients.last_mut() {
                Some((pid, range)) if *pid == e.patient_id => range.end = i + 1,
                _ => patients.push((e.patient_id.clone(), i..i + 1)),
            }
        }

        Ok(EncounterStore {
            encounters,
            patients,
            code_kind,
            warnings,
        })
    }

    pub fn len(&self) -> usize {
        self.encounters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encounters.is_empty()
    }

    pub fn encounters(&self) -> &[EncounterRecord] {
        &self.encounters
    }

    pub fn n_patients(&self) -> usize {
        self.patients.len()
    }

    /// Chronological encounters of each patient.
    pub fn patient_timelines(&self) -> impl Iterator<Item = (&str, &[EncounterRecord])> {
        self.patients
            .iter()
            .map(|(p, r)| (p.as_str(), &self.encounters[r.clone()]))
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Kind of an order code, as fixed by ingest.
    pub fn kind_of(&self, code: &Code) -> Option<RelationKind> {
        self.code_kind.get(code).copied()
    }

    /// Total occurrences of each code: one per diagnosis-list entry and one
    /// per order line.
    pub fn occurrence_counts(&self) -> BTreeMap<Code, u64> {
        let mut counts = BTreeMap::new();
        for e in &self.encounters {
            for c in e.diagnoses.iter().chain(e.orders.iter().map(|o| &o.code)) {
                *counts.entry(c.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Number of distinct patients on whose records each code appears.
    pub fn patient_counts(&self) -> BTreeMap<Code, u64> {
        let mut counts = BTreeMap::new();
        for (_, timeline) in self.patient_timelines() {
            let codes: BTreeSet<&Code> = timeline
                .iter()
                .flat_map(|e| e.diagnoses.iter().chain(e.orders.iter().map(|o| &o.code)))
                .collect();
            for c in codes {
                *counts.entry(c.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.encounters {
            out.push_str(&serde_json::to_string(e).expect("encounter serializes"));
            out.push('\n');
        }
        out
    }

    pub fn build_vocabulary(&self, min_count: u64) -> Vocabulary {
        let mut targets: BTreeMap<RelationKind, BTreeSet<Code>> = RelationKind::ALL
            .iter()
            .map(|k| (*k, BTreeSet::new()))
            .collect();
        let mut diagnoses = BTreeSet::new();
        let mut counts = BTreeMap::new();
        for e in &self.encounters {
            diagnoses.extend(e.diagnoses.iter().cloned());
        }
        for (code, n) in self.occurrence_counts() {
            if let Some(kind) = self.kind_of(&code) {
                if n >= min_count {
                    targets
                        .get_mut(&kind)
                        .expect("all kinds present")
                        .insert(code.clone());
                    counts.insert(code.token(), n);
                }
            } else {
                counts.insert(code.token(), n);
            }
        }
        Vocabulary {
            min_count,
            targets,
            diagnoses,
            counts,
        }
    }
}

/// Target codes per kind whose dataset frequency reaches `min_count`, plus
/// every diagnosis code seen.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub min_count: u64,
    pub targets: BTreeMap<RelationKind, BTreeSet<Code>>,
    pub diagnoses: BTreeSet<Code>,
    /// Occurrence counts of the retained targets and all diagnosis codes,
    /// keyed by token.
    pub counts: BTreeMap<String, u64>,
}

impl Vocabulary {
    pub fn kind_of(&self, code: &Code) -> Option<RelationKind> {
        self.targets
            .iter()
            .find(|(_, set)| set.contains(code))
            .map(|(k, _)| *k)
    }

    pub fn codes(&self, kind: RelationKind) -> impl Iterator<Item = &Code> {
        self.targets.get(&kind).into_iter().flatten()
    }

    pub fn len(&self, kind: RelationKind) -> usize {
        self.targets.get(&kind).map_or(0, BTreeSet::len)
    }

    pub fn count(&self, code: &Code) -> u64 {
        self.counts.get(&code.token()).copied().unwrap_or(0)
    }

    pub fn all_targets(&self) -> impl Iterator<Item = (RelationKind, &Code)> {
        self.targets
            .iter()
            .flat_map(|(k, set)| set.iter().map(move |c| (*k, c)))
    }
}
