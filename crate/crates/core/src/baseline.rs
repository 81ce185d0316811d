//! Rule-based relevance from terminology maps: medications through
//! precomposed drug-to-diagnosis chains, procedures through hierarchy
//! parents and clinical disciplines. Scores are 0/1 and meant to be ranked
//! with [`TiePolicy::Median`](crate::eval::TiePolicy::Median).

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::code::{Code, CodeSystem, RelationKind};
use crate::error::{Error, Result};
use crate::eval::TripletScorer;
use crate::kb::{KnowledgeBase, Problem};

pub const MED_TO_DX_FILE: &str = "med_to_dx.csv";
pub const PROC_PARENT_FILE: &str = "proc_parent.csv";
pub const PARENT_DISCIPLINE_FILE: &str = "parent_discipline.csv";
pub const CHAPTER_DISCIPLINE_FILE: &str = "chapter_discipline.csv";

/// An inclusive range of diagnosis-code prefixes, e.g. `I00`..`I99`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChapterRange {
    pub system: CodeSystem,
    pub lo: String,
    pub hi: String,
    pub discipline: String,
}

impl ChapterRange {
    /// Compares the code's leading characters (dots removed) against both
    /// bounds at the bounds' own lengths.
    pub fn contains(&self, code: &Code) -> bool {
        if code.system != self.system {
            return false;
        }
        let id: String = code.id.chars().filter(|c| *c != '.').collect();
        let prefix = |n: usize| id.chars().take(n).collect::<String>();
        prefix(self.lo.len()) >= self.lo && prefix(self.hi.len()) <= self.hi
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OntologyMaps {
    pub med_to_diagnoses: BTreeMap<Code, BTreeSet<Code>>,
    pub proc_parent: BTreeMap<Code, String>,
    pub parent_discipline: BTreeMap<String, String>,
    pub chapters: Vec<ChapterRange>,
}

#[derive(Deserialize)]
struct MedRow {
    med_system: String,
    med_id: String,
    dx_system: String,
    dx_id: String,
}

#[derive(Deserialize)]
struct ProcRow {
    proc_system: String,
    proc_id: String,
    parent_id: String,
}

#[derive(Deserialize)]
struct ParentRow {
    parent_id: String,
    discipline: String,
}

#[derive(Deserialize)]
struct ChapterRow {
    system: String,
    chapter_lo: String,
    chapter_hi: String,
    discipline: String,
}

fn rows<T: for<'de> Deserialize<'de>>(input: impl Read) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn code(system: &str, id: &str) -> Result<Code> {
    format!("{system}:{id}").parse()
}

fn norm_prefix(s: &str) -> String {
    s.trim().to_uppercase().replace('.', "")
}

impl OntologyMaps {
    pub fn from_readers(
        med_to_dx: impl Read,
        proc_parent: impl Read,
        parent_discipline: impl Read,
        chapter_discipline: impl Read,
    ) -> Result<Self> {
        let mut maps = OntologyMaps::default();
        for r in rows::<MedRow>(med_to_dx)? {
            maps.med_to_diagnoses
                .entry(code(&r.med_system, &r.med_id)?)
                .or_default()
                .insert(code(&r.dx_system, &r.dx_id)?);
        }
        for r in rows::<ProcRow>(proc_parent)? {
            maps.proc_parent
                .insert(code(&r.proc_system, &r.proc_id)?, r.parent_id);
        }
        for r in rows::<ParentRow>(parent_discipline)? {
            maps.parent_discipline.insert(r.parent_id, r.discipline);
        }
        for r in rows::<ChapterRow>(chapter_discipline)? {
            let (lo, hi) = (norm_prefix(&r.chapter_lo), norm_prefix(&r.chapter_hi));
            if lo.is_empty() || hi.is_empty() || lo > hi {
                return Err(Error::Config(format!("bad chapter range {lo}..{hi}")));
            }
            maps.chapters.push(ChapterRange {
                system: r.system.parse()?,
                lo,
                hi,
                discipline: r.discipline,
            });
        }
        Ok(maps)
    }

    /// Reads the four map files from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let open = |name: &str| {
            let p = dir.join(name);
            std::fs::File::open(&p).map_err(|e| Error::io(&p, e))
        };
        Self::from_readers(
            open(MED_TO_DX_FILE)?,
            open(PROC_PARENT_FILE)?,
            open(PARENT_DISCIPLINE_FILE)?,
            open(CHAPTER_DISCIPLINE_FILE)?,
        )
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        let mut med = String::from("med_system,med_id,dx_system,dx_id\n");
        for (m, dxs) in &self.med_to_diagnoses {
            for d in dxs {
                med.push_str(&format!("{},{},{},{}\n", m.system, m.id, d.system, d.id));
            }
        }
        write(MED_TO_DX_FILE, med)?;
        let mut proc = String::from("proc_system,proc_id,parent_id\n");
        for (p, parent) in &self.proc_parent {
            proc.push_str(&format!("{},{},{parent}\n", p.system, p.id));
        }
        write(PROC_PARENT_FILE, proc)?;
        let mut par = String::from("parent_id,discipline\n");
        for (p, d) in &self.parent_discipline {
            par.push_str(&format!("{p},{d}\n"));
        }
        write(PARENT_DISCIPLINE_FILE, par)?;
        let mut ch = String::from("system,chapter_lo,chapter_hi,discipline\n");
        for c in &self.chapters {
            ch.push_str(&format!(
                "{},{},{},{}\n",
                c.system, c.lo, c.hi, c.discipline
            ));
        }
        write(CHAPTER_DISCIPLINE_FILE, ch)
    }

    /// Disciplines of every chapter range containing one of the codes.
    fn disciplines_of<'a>(
        &'a self,
        codes: impl IntoIterator<Item = &'a Code>,
    ) -> BTreeSet<&'a str> {
        let codes: Vec<&Code> = codes.into_iter().collect();
        self.chapters
            .iter()
            .filter(|c| codes.iter().any(|code| c.contains(code)))
            .map(|c| c.discipline.as_str())
            .collect()
    }
}

pub fn med_relevant(maps: &OntologyMaps, med: &Code, problem: &Problem) -> bool {
    maps.med_to_diagnoses
        .get(med)
        .is_some_and(|dxs| dxs.iter().any(|d| problem.definition.contains(d)))
}

pub fn proc_relevant(maps: &OntologyMaps, proc: &Code, problem: &Problem) -> bool {
    let Some(discipline) = maps
        .proc_parent
        .get(proc)
        .and_then(|p| maps.parent_discipline.get(p))
    else {
        return false;
    };
    maps.disciplines_of(&problem.definition)
        .contains(discipline.as_str())
}

/// 1.0 for relevant, 0.0 otherwise; labs are not covered.
pub struct BaselineScorer<'a> {
    pub maps: &'a OntologyMaps,
    pub kb: &'a KnowledgeBase,
}

impl TripletScorer for BaselineScorer<'_> {
    fn score(&self, problem: &str, relation: RelationKind, target: &Code) -> Result<Option<f64>> {
        let p = self
            .kb
            .problem(problem)
            .ok_or_else(|| Error::UnknownProblem(problem.to_string()))?;
        let hit = match relation {
            RelationKind::Medication => med_relevant(self.maps, target, p),
            RelationKind::Procedure => proc_relevant(self.maps, target, p),
            RelationKind::Lab => return Ok(None),
        };
        Ok(Some(if hit { 1.0 } else { 0.0 }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub medications: usize,
    /// Fraction with at least one mapped diagnosis.
    pub mapped: f64,
    /// Fraction relevant to at least one KB problem.
    pub matching: f64,
}

/// Coverage of the medication map over the medication targets of `part`.
pub fn medication_coverage(maps: &OntologyMaps, kb: &KnowledgeBase, part: &[usize]) -> Coverage {
    let meds: BTreeSet<&Code> = part
        .iter()
        .map(|&i| &kb.triplets()[i])
        .filter(|t| t.relation == RelationKind::Medication)
        .map(|t| &t.target)
        .collect();
    let n = meds.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let mapped = meds
        .iter()
        .filter(|m| {
            maps.med_to_diagnoses
                .get(**m)
                .is_some_and(|d| !d.is_empty())
        })
        .count();
    let matching = meds
        .iter()
        .filter(|m| kb.problems().any(|p| med_relevant(maps, m, p)))
        .count();
    Coverage {
        medications: n,
        mapped: frac(mapped),
        matching: frac(matching),
    }
}
