use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Training,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("training error: {0}")]
    Training(String),

    #[error("archive section `{section}`: {reason}")]
    Archive { section: String, reason: String },

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    /// Error annotated with where it happened, e.g. a sweep cell.
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Pipeline stage tags attached to propagated errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Features,
    Gbdt,
    Sequences,
    Gru,
    RandomForest,
    Scoring,
    Archive,
    Evaluation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Features => "features",
            Stage::Gbdt => "gbdt",
            Stage::Sequences => "sequences",
            Stage::Gru => "gru",
            Stage::RandomForest => "random_forest",
            Stage::Scoring => "scoring",
            Stage::Archive => "archive",
            Stage::Evaluation => "evaluation",
        };
        f.write_str(name)
    }
}

impl Error {
    pub fn dimension(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn archive(section: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Archive {
            section: section.into(),
            reason: reason.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage tags and context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self.root() {
            Error::Config(_) => ErrorClass::Config,
            Error::Data(_)
            | Error::Precondition(_)
            | Error::Dimension { .. }
            | Error::Archive { .. }
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::Training(_) => ErrorClass::Training,
            Error::Io(_) => ErrorClass::Io,
            Error::Stage { .. } | Error::Context { .. } => unreachable!("root() strips wrappers"),
        }
    }
}

/// Attaches a stage tag to the error side of a result.
pub trait StageContext<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| match e {
            // keep the innermost tag; it names the stage that actually failed
            tagged @ Error::Stage { .. } => tagged,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        })
    }
}
