//! Coded concepts and the three relation kinds linking problems to targets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Coding system of a [`Code`].
///
/// Variants are declared in lexicographic order of their tags so the derived
/// `Ord` matches string ordering of the system name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CodeSystem {
    Cpt,
    Icd10,
    Icd9,
    Internal,
    Loinc,
    Rxnorm,
    Snomed,
}

impl CodeSystem {
    pub const ALL: [CodeSystem; 7] = [
        CodeSystem::Cpt,
        CodeSystem::Icd10,
        CodeSystem::Icd9,
        CodeSystem::Internal,
        CodeSystem::Loinc,
        CodeSystem::Rxnorm,
        CodeSystem::Snomed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CodeSystem::Cpt => "CPT",
            CodeSystem::Icd10 => "ICD10",
            CodeSystem::Icd9 => "ICD9",
            CodeSystem::Internal => "INTERNAL",
            CodeSystem::Loinc => "LOINC",
            CodeSystem::Rxnorm => "RXNORM",
            CodeSystem::Snomed => "SNOMED",
        }
    }

    /// Systems that may appear in a problem definition or an encounter's
    /// diagnosis list.
    pub fn is_diagnosis(self) -> bool {
        matches!(
            self,
            CodeSystem::Icd9 | CodeSystem::Icd10 | CodeSystem::Snomed | CodeSystem::Internal
        )
    }
}

impl fmt::Display for CodeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CodeSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        CodeSystem::ALL
            .into_iter()
            .find(|sys| sys.as_str() == upper)
            .ok_or_else(|| Error::InvalidCode(format!("unknown coding system `{s}`")))
    }
}

/// A coded concept. Identity is the `(system, id)` pair after the id is
/// trimmed and uppercased.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCode")]
pub struct Code {
    pub system: CodeSystem,
    pub id: String,
}

#[derive(Deserialize)]
struct RawCode {
    system: String,
    id: String,
}

impl TryFrom<RawCode> for Code {
    type Error = Error;

    fn try_from(raw: RawCode) -> Result<Self, Self::Error> {
        Code::new(raw.system.parse()?, &raw.id)
    }
}

impl Code {
    pub fn new(system: CodeSystem, id: &str) -> Result<Self, Error> {
        let id = id.trim().to_ascii_uppercase();
        if id.is_empty() {
            return Err(Error::InvalidCode(format!("empty id for system {system}")));
        }
        if id.contains(char::is_whitespace) {
            return Err(Error::InvalidCode(format!("whitespace in id `{id}`")));
        }
        Ok(Code { system, id })
    }

    /// Token used for embedding tables and flat files: `SYSTEM:ID`.
    pub fn token(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.system, self.id)
    }
}

impl FromStr for Code {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (system, id) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidCode(format!("expected SYSTEM:ID, got `{s}`")))?;
        Code::new(system.parse()?, id)
    }
}

/// The kind of data a target belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RelationKind {
    Medication,
    Procedure,
    Lab,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [
        RelationKind::Medication,
        RelationKind::Procedure,
        RelationKind::Lab,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Medication => "MEDICATION",
            RelationKind::Procedure => "PROCEDURE",
            RelationKind::Lab => "LAB",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether a code from `system` can be a target of this relation.
    /// `INTERNAL` codes are admitted everywhere; their kind comes from the
    /// encounter data.
    pub fn admits(self, system: CodeSystem) -> bool {
        match system {
            CodeSystem::Internal => true,
            CodeSystem::Rxnorm => self == RelationKind::Medication,
            CodeSystem::Cpt => self == RelationKind::Procedure,
            CodeSystem::Loinc => self == RelationKind::Lab,
            CodeSystem::Icd9 | CodeSystem::Icd10 | CodeSystem::Snomed => false,
        }
    }

    /// The single kind implied by a standard coding system, if any.
    pub fn for_system(system: CodeSystem) -> Option<RelationKind> {
        match system {
            CodeSystem::Rxnorm => Some(RelationKind::Medication),
            CodeSystem::Cpt => Some(RelationKind::Procedure),
            CodeSystem::Loinc => Some(RelationKind::Lab),
            _ => None,
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        RelationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == upper)
            .ok_or_else(|| Error::UnknownRelation(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_trimmed_and_uppercased() {
        let a = Code::new(CodeSystem::Icd10, " i48.91 ").unwrap();
        let b: Code = "ICD10:I48.91".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.token(), "ICD10:I48.91");
    }

    #[test]
    fn empty_id_rejected() {
        assert!(Code::new(CodeSystem::Cpt, "   ").is_err());
        assert!("RXNORM:".parse::<Code>().is_err());
    }

    #[test]
    fn deserialize_normalizes() {
        let c: Code = serde_json::from_str(r#"{"system":"rxnorm","id":" 123a "}"#).unwrap();
        assert_eq!(c, Code::new(CodeSystem::Rxnorm, "123A").unwrap());
        assert!(serde_json::from_str::<Code>(r#"{"system":"FOO","id":"1"}"#).is_err());
    }

    #[test]
    fn ordering_is_lexicographic_by_system_tag() {
        let mut tags: Vec<&str> = CodeSystem::ALL.iter().map(|s| s.as_str()).collect();
        let sorted = {
            let mut t = tags.clone();
            t.sort();
            t
        };
        tags.sort_by_key(|t| t.parse::<CodeSystem>().unwrap());
        assert_eq!(tags, sorted);
    }

    #[test]
    fn relation_admits_systems() {
        assert!(RelationKind::Medication.admits(CodeSystem::Rxnorm));
        assert!(!RelationKind::Lab.admits(CodeSystem::Rxnorm));
        assert!(RelationKind::Lab.admits(CodeSystem::Internal));
        assert!(!RelationKind::Procedure.admits(CodeSystem::Icd10));
        assert_eq!("lab".parse::<RelationKind>().unwrap(), RelationKind::Lab);
        assert!("diagnosis".parse::<RelationKind>().is_err());
    }
}
