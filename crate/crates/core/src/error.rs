use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("protected attribute `{0}` cannot be used for conditioning")]
    ProtectedUsedAsConditioning(String),
    #[error("outcome attribute `{0}` cannot be used for conditioning")]
    OutcomeUsedAsConditioning(String),
    #[error("attribute `{0}` listed more than once")]
    DuplicateAttribute(String),
    #[error("unknown protected class value `{0}`")]
    UnknownClassValue(String),
    #[error("no observations for cell {0}")]
    UnknownCell(String),
    #[error("threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(String),
    #[error("population share {0} must lie in [0, 1]")]
    InvalidPopulationShare(String),
    #[error("both cohort proportions are undefined")]
    BothProportionsUndefined,
    #[error("table has no conditioning attributes")]
    NoConditioningAttributes,
    #[error("no cell has both an advantaged and a disadvantaged cohort")]
    NoUsableCells,
    #[error("class `{class}` has no members in the {cohort} cohort of cell {cell}")]
    ZeroClassCount {
        class: String,
        cohort: &'static str,
        cell: String,
    },
    #[error("`{0}` cannot be used as a partition attribute")]
    InvalidPartitionAttribute(String),
    #[error("intersectional class needs at least one attribute=value pair")]
    EmptyIntersection,
    #[error("max depth must be at least 1")]
    InvalidDepth,
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid number `{0}`")]
    InvalidNumber(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}missing column `{name}`", line_prefix(*.line))]
    MissingColumn { name: String, line: Option<u64> },
    #[error("{}value `{value}` is not declared for attribute `{attribute}`", line_prefix(*.line))]
    UnknownValue {
        attribute: String,
        value: String,
        line: Option<u64>,
    },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: negative count `{value}`")]
    NegativeCount { line: u64, value: String },
    #[error("line {line}: count `{value}` is not a non-negative integer")]
    NonIntegerCount { line: u64, value: String },
    #[error("dataset contains no observations")]
    EmptyDataset,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<Error>,
    },
}

fn line_prefix(line: Option<u64>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

impl Error {
    /// True for problems with the input data itself, as opposed to the
    /// way the audit was configured.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::MissingColumn { .. }
            | Error::MalformedRow { .. }
            | Error::NegativeCount { .. }
            | Error::NonIntegerCount { .. }
            | Error::EmptyDataset
            | Error::Csv(_)
            | Error::Io(_) => true,
            Error::UnknownValue { line, .. } => line.is_some(),
            Error::InFile { source, .. } => source.is_data_error(),
            _ => false,
        }
    }

    pub(crate) fn in_file(self, path: impl Into<String>) -> Error {
        Error::InFile {
            path: path.into(),
            source: Box::new(self),
        }
    }
}
