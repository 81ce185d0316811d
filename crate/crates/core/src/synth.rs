//! Seeded generator for encounter logs and annotated knowledge bases with a
//! planted problem-to-target block structure.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{ChapterRange, OntologyMaps};
use crate::code::{Code, CodeSystem, RelationKind};
use crate::encounters::{EncounterRecord, EncounterStore, IngestOptions, Order, Setting};
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Label, Problem, Triplet};

pub const ENCOUNTERS_FILE: &str = "encounters.jsonl";
pub const KB_FILE: &str = "kb.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const MAPS_DIR: &str = "maps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSpec {
    pub n_problems: usize,
    pub n_targets_per_kind: usize,
    pub n_patients: usize,
    /// Chance a relevant target is ordered at an encounter for the problem.
    pub p_in: f64,
    /// Chance any other target is ordered at an encounter.
    pub p_out: f64,
    pub seed: u64,
    /// Relevant targets per (problem, kind).
    pub block_size: usize,
    pub encounters_per_patient: usize,
    /// Fraction of relevant orders carrying an explicit diagnosis link.
    pub explicit_link_fraction: f64,
    pub n_facilities: usize,
    pub n_specialties: usize,
    /// Annotated negatives per (problem, kind), drawn from outside the block.
    pub negatives_per_kind: usize,
    /// Fraction of block medications the synthetic drug map covers.
    pub med_map_coverage: f64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        PlantSpec {
            n_problems: 20,
            n_targets_per_kind: 60,
            n_patients: 500,
            p_in: 0.9,
            p_out: 0.05,
            seed: 1,
            block_size: 3,
            encounters_per_patient: 4,
            explicit_link_fraction: 0.5,
            n_facilities: 3,
            n_specialties: 6,
            negatives_per_kind: 20,
            med_map_coverage: 0.65,
        }
    }
}

impl PlantSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.p_in > 0.0 && self.p_in <= 1.0) {
            return bad("p_in must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.p_out) || self.p_out >= self.p_in {
            return bad("p_out must lie in [0, 1) and be below p_in");
        }
        if self.n_problems == 0
            || self.n_patients == 0
            || self.encounters_per_patient == 0
            || self.block_size == 0
        {
            return bad("problem, patient, encounter and block counts must be positive");
        }
        if self.n_problems * self.block_size > self.n_targets_per_kind {
            return bad("n_targets_per_kind must cover one disjoint block per problem");
        }
        if self.n_facilities == 0 || self.n_specialties == 0 {
            return bad("need at least one facility and one specialty");
        }
        for f in [self.explicit_link_fraction, self.med_map_coverage] {
            if !(0.0..=1.0).contains(&f) {
                return bad("fractions must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Relevant targets per problem and kind.
pub type Truth = BTreeMap<String, BTreeMap<RelationKind, BTreeSet<Code>>>;

#[derive(Debug, Clone)]
pub struct SynthData {
    pub store: EncounterStore,
    pub kb: KnowledgeBase,
    pub truth: Truth,
    pub maps: OntologyMaps,
}

pub fn problem_id(p: usize) -> String {
    format!("PROB{p:03}")
}

fn definition_codes(p: usize) -> [Code; 2] {
    let id = format!("X{p:02}");
    [
        Code {
            system: CodeSystem::Icd10,
            id: id.clone(),
        },
        Code {
            system: CodeSystem::Icd10,
            id: format!("{id}.1"),
        },
    ]
}

/// Target `i` of `kind`.
pub fn target_code(kind: RelationKind, i: usize) -> Code {
    let (system, base) = match kind {
        RelationKind::Medication => (CodeSystem::Rxnorm, 100_000),
        RelationKind::Procedure => (CodeSystem::Cpt, 10_000),
        RelationKind::Lab => (CodeSystem::Loinc, 20_000),
    };
    Code {
        system,
        id: (base + i).to_string(),
    }
}

fn specialty(k: usize) -> String {
    format!("specialty-{k:02}")
}

/// Build everything in memory. Identical specs give identical data.
pub fn generate(spec: &PlantSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // disjoint blocks: target slot j of problem p is a shuffled index
    let mut blocks: BTreeMap<RelationKind, Vec<Vec<usize>>> = BTreeMap::new();
    for kind in RelationKind::ALL {
        let mut idx: Vec<usize> = (0..spec.n_targets_per_kind).collect();
        idx.shuffle(&mut rng);
        let per_problem = idx
            .chunks(spec.block_size)
            .take(spec.n_problems)
            .map(|c| c.to_vec())
            .collect();
        blocks.insert(kind, per_problem);
    }

    let problems: Vec<Problem> = (0..spec.n_problems)
        .map(|p| Problem {
            id: problem_id(p),
            name: format!("Planted problem {p}"),
            definition: definition_codes(p).into_iter().collect(),
        })
        .collect();

    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let settings = [
        Setting::Outpatient,
        Setting::Outpatient,
        Setting::Inpatient,
        Setting::Ed,
    ];
    let mut records = Vec::new();
    for patient in 0..spec.n_patients {
        let p = rng.gen_range(0..spec.n_problems);
        let home = rng.gen_range(0..spec.n_facilities);
        let mut date = start + Duration::days(rng.gen_range(0..365));
        let defs = definition_codes(p);
        for e in 0..spec.encounters_per_patient {
            let dx = defs[rng.gen_range(0..2)].clone();
            let facility = if rng.gen_bool(0.8) {
                home
            } else {
                rng.gen_range(0..spec.n_facilities)
            };
            let spec_idx = if rng.gen_bool(0.8) {
                p % spec.n_specialties
            } else {
                rng.gen_range(0..spec.n_specialties)
            };
            let mut orders = Vec::new();
            for kind in RelationKind::ALL {
                let block = &blocks[&kind][p];
                for i in 0..spec.n_targets_per_kind {
                    let relevant = block.contains(&i);
                    let prob = if relevant { spec.p_in } else { spec.p_out };
                    if rng.gen_bool(prob) {
                        let linked = relevant && rng.gen_bool(spec.explicit_link_fraction);
                        orders.push(Order {
                            kind,
                            code: target_code(kind, i),
                            linked_diagnosis: linked.then(|| dx.clone()),
                        });
                    }
                }
            }
            records.push(EncounterRecord {
                patient_id: format!("PT{patient:05}"),
                encounter_id: format!("PT{patient:05}-E{e:02}"),
                date,
                facility_id: format!("FAC{facility:02}"),
                setting: settings[rng.gen_range(0..settings.len())],
                diagnoses: [dx].into_iter().collect(),
                orders,
                provider_specialty: Some(specialty(spec_idx)),
            });
            date += Duration::days(rng.gen_range(1..30));
        }
    }
    let store = EncounterStore::from_records(records, IngestOptions::default())?;

    let mut truth = Truth::new();
    let mut triplets = Vec::new();
    for (p, problem) in problems.iter().enumerate() {
        let row = truth.entry(problem.id.clone()).or_default();
        for kind in RelationKind::ALL {
            let block = &blocks[&kind][p];
            row.insert(kind, block.iter().map(|&i| target_code(kind, i)).collect());
            let triplet = |i: usize, label| Triplet {
                problem: problem.id.clone(),
                relation: kind,
                target: target_code(kind, i),
                label,
                round: 1,
            };
            triplets.extend(block.iter().map(|&i| triplet(i, Label::Positive)));
            let mut others: Vec<usize> = (0..spec.n_targets_per_kind)
                .filter(|i| !block.contains(i))
                .collect();
            others.shuffle(&mut rng);
            triplets.extend(
                others
                    .into_iter()
                    .take(spec.negatives_per_kind)
                    .map(|i| triplet(i, Label::Negative)),
            );
        }
    }
    let kb = KnowledgeBase::new(problems, triplets)?;
    let maps = synthetic_maps(spec, &blocks, &mut rng);
    Ok(SynthData {
        store,
        kb,
        truth,
        maps,
    })
}

/// Drug map covering part of each medication block, plus one procedure
/// discipline per problem whose chapter is the problem's own code prefix.
fn synthetic_maps(
    spec: &PlantSpec,
    blocks: &BTreeMap<RelationKind, Vec<Vec<usize>>>,
    rng: &mut ChaCha8Rng,
) -> OntologyMaps {
    let mut maps = OntologyMaps::default();
    // drugs mapped only to diagnoses no problem uses
    for i in 0..spec.n_targets_per_kind {
        if rng.gen_bool(0.3) {
            maps.med_to_diagnoses
                .entry(target_code(RelationKind::Medication, i))
                .or_default()
                .insert(Code {
                    system: CodeSystem::Icd10,
                    id: format!("Z{:02}", i % 10),
                });
        }
    }
    for p in 0..spec.n_problems {
        let defs = definition_codes(p);
        for &i in &blocks[&RelationKind::Medication][p] {
            if rng.gen_bool(spec.med_map_coverage) {
                maps.med_to_diagnoses
                    .entry(target_code(RelationKind::Medication, i))
                    .or_default()
                    .insert(defs[0].clone());
            }
        }
        let parent = format!("PARENT{p:03}");
        for &i in &blocks[&RelationKind::Procedure][p] {
            maps.proc_parent
                .insert(target_code(RelationKind::Procedure, i), parent.clone());
        }
        maps.parent_discipline.insert(parent, format!("DISC{p:03}"));
        maps.chapters.push(ChapterRange {
            system: CodeSystem::Icd10,
            lo: defs[0].id.clone(),
            hi: defs[0].id.clone(),
            discipline: format!("DISC{p:03}"),
        });
    }
    maps
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn truth_json(truth: &Truth) -> String {
    pretty(truth)
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<Truth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Write encounters, KB, truth map and ontology maps under `dir`.
pub fn write_dir(data: &SynthData, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(ENCOUNTERS_FILE, data.store.to_jsonl())?;
    write(KB_FILE, data.kb.to_canonical_json())?;
    write(TRUTH_FILE, truth_json(&data.truth))?;
    data.maps.save_dir(dir.join(MAPS_DIR))
}
