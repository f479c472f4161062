//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero direction")]
    ZeroDirection,

    #[error("empty polygon input")]
    EmptyPolygon,

    #[error("malformed graph: {0}")]
    MalformedGraph(String),

    #[error("malformed curve: {0}")]
    MalformedCurve(String),

    #[error("degree does not close up: total end vector is ({0}, {1})")]
    OpenDegree(i64, i64),

    #[error("point ({0}, {1}) is not on the curve image")]
    PointNotOnCurve(String, String),

    #[error("unbalanced embedded curve at ({0}, {1})")]
    Unbalanced(String, String),

    #[error("curve is empty: support has a single monomial")]
    EmptySupport,

    #[error("invalid involution: {0}")]
    InvalidInvolution(String),

    #[error("edge {0} has odd weight and cannot be doubled")]
    OddWeightDouble(usize),

    #[error("combinatorial type is not regular: {0}")]
    NotRegular(String),

    #[error("hypothesis {rule} violated: {message}")]
    Hypothesis { rule: String, message: String },

    #[error("no curve of the requested type matches the configuration")]
    NoSolution,

    #[error("configuration is degenerate for this type: {0}")]
    DegenerateConfiguration(String),

    #[error("genericity failure persisted after {0} reseeds")]
    GenericityExhausted(u32),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn hypothesis(rule: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Hypothesis {
            rule: rule.into(),
            message: message.into(),
        }
    }
}

/// Outcome of a single rule check inside a [`ValidationReport`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

/// One rule verdict: rule id, optional location, human-readable message.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RuleCheck {
    pub rule: String,
    pub status: CheckStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    pub message: String,
}

/// Itemized validation outcome. Empty of failures iff the object passed.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<RuleCheck>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pass(&mut self, rule: &str, message: impl Into<String>) {
        self.checks.push(RuleCheck {
            rule: rule.to_string(),
            status: CheckStatus::Pass,
            location: None,
            message: message.into(),
        });
    }

    pub fn fail(&mut self, rule: &str, message: impl Into<String>) {
        self.checks.push(RuleCheck {
            rule: rule.to_string(),
            status: CheckStatus::Fail,
            location: None,
            message: message.into(),
        });
    }

    pub fn fail_at(&mut self, rule: &str, location: impl Into<String>, message: impl Into<String>) {
        self.checks.push(RuleCheck {
            rule: rule.to_string(),
            status: CheckStatus::Fail,
            location: Some(location.into()),
            message: message.into(),
        });
    }

    pub fn inconclusive(&mut self, rule: &str, message: impl Into<String>) {
        self.checks.push(RuleCheck {
            rule: rule.to_string(),
            status: CheckStatus::Inconclusive,
            location: None,
            message: message.into(),
        });
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.checks.extend(other.checks);
    }

    /// True when no check failed (inconclusive checks do not fail a report).
    pub fn is_clean(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RuleCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    /// Verdict for a single rule id, if it was checked.
    pub fn status_of(&self, rule: &str) -> Option<CheckStatus> {
        self.checks.iter().find(|c| c.rule == rule).map(|c| c.status)
    }
}
