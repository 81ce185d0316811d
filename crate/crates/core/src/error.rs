use std::path::PathBuf;

use crate::code::{Code, RelationKind};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("invalid code: {0}")]
    InvalidCode(String),

    #[error("unknown relation kind `{0}`")]
    UnknownRelation(String),

    #[error("line {line}: duplicate triplet ({problem}, {relation}, {target}) in round {round}")]
    DuplicateTriplet {
        line: usize,
        problem: String,
        relation: RelationKind,
        target: Code,
        round: u32,
    },

    #[error("line {line}: triplet references unknown problem `{problem}`")]
    DanglingProblem { line: usize, problem: String },

    #[error("line {line}: {message}")]
    InvalidProblem { line: usize, message: String },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),

    #[error("target {target} is not a valid {relation} code")]
    KindMismatch {
        relation: RelationKind,
        target: Code,
    },

    #[error("target {0} is not in the vocabulary")]
    OutOfVocabulary(Code),

    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),

    #[error("need at least 3 triplets to split, got {0}")]
    TooFewTriplets(usize),

    #[error("need more than {requested} problems to hold out, KB has {available}")]
    TooFewProblems { requested: usize, available: usize },

    #[error("line {line}: duplicate encounter id `{id}`")]
    DuplicateEncounter { line: usize, id: String },

    #[error("line {line}: code {code} used as {second} but previously seen as {first}")]
    KindConflict {
        line: usize,
        code: Code,
        first: RelationKind,
        second: RelationKind,
    },

    #[error("line {line}: {message}")]
    InvalidEncounter { line: usize, message: String },

    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate embedding token `{token}`")]
    DuplicateToken { line: usize, token: String },

    #[error("vector length {found} does not match expected {expected}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("no embedding for `{0}`")]
    MissingEmbedding(String),

    #[error("encounter store is empty")]
    EmptyStore,

    #[error("training split contains no usable positive/negative pairs")]
    EmptyTrainingSplit,

    #[error("non-finite score encountered")]
    NonFiniteScore,

    #[error("annotators share no annotated keys")]
    EmptyIntersection,

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
