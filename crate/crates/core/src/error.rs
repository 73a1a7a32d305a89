use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "a passive router needs an odd node count, got {count}; plan for {} nodes and leave one router port unused",
        count + 1
    )]
    EvenNodeCount { count: usize },

    #[error("no self link: {0} -> {0}")]
    SelfLink(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("unknown wavelength index {0}")]
    UnknownWavelength(usize),

    #[error("unknown link `{0}`")]
    UnknownLink(String),

    #[error("missing fiber data for node `{0}` and no measured attenuation override")]
    MissingFiber(String),

    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

/// Problems found while reading a scenario document.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{0} required")]
    Missing(String),

    #[error("invalid value for `{field}`: {message}")]
    Semantic { field: String, message: String },
}

impl ScenarioError {
    pub(crate) fn semantic(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Semantic {
            field: field.into(),
            message: message.into(),
        }
    }
}
