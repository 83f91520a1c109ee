//! Failure taxonomy for candidate runs.

use std::fmt;
use std::str::FromStr;

use super::PatchError;
use crate::experiment::RunError;
use crate::spec::{GuardrailFinding, SpecError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FailureKind {
    /// The candidate could not be produced or parsed: bad diff, context
    /// mismatch, unparseable spec, empty model output.
    SyntaxCodeError,
    /// Diff markup ended up inside a whole-document proposal.
    FileCorruption,
    /// The model service could not be reached or timed out.
    Infrastructure,
    /// The candidate parsed but could not be evaluated, or its parameters
    /// were rejected by the guardrails.
    RuntimeIncompat,
}

impl FailureKind {
    pub const ALL: [FailureKind; 4] = [
        FailureKind::SyntaxCodeError,
        FailureKind::FileCorruption,
        FailureKind::Infrastructure,
        FailureKind::RuntimeIncompat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::SyntaxCodeError => "syntax_code_error",
            FailureKind::FileCorruption => "file_corruption",
            FailureKind::Infrastructure => "infrastructure",
            FailureKind::RuntimeIncompat => "runtime_incompat",
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FailureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown failure class '{s}'"))
    }
}

/// A classified failure with a one-line detail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureClass {
    pub kind: FailureKind,
    pub detail: String,
}

impl FailureClass {
    pub fn new(kind: FailureKind, detail: impl Into<String>) -> Self {
        let detail: String = detail.into();
        Self {
            kind,
            detail: detail.split_whitespace().collect::<Vec<_>>().join(" "),
        }
    }

    /// `FAIL <class> <detail>`
    pub fn log_line(&self) -> String {
        format!("FAIL {} {}", self.kind, self.detail)
    }
}

impl fmt::Display for FailureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

/// What went wrong while turning a proposal into an evaluated candidate.
#[derive(Debug)]
pub enum RunDiagnostics {
    /// The model service failed (connection, HTTP status, timeout).
    Transport(String),
    /// The model answered with nothing usable.
    EmptyResponse(String),
    Patch(PatchError),
    Spec(SpecError),
    /// Strict-mode guardrail rejections.
    Guardrail(Vec<GuardrailFinding>),
    Run(RunError),
}

/// Maps diagnostics onto the failure taxonomy.
pub fn classify_failure(diag: &RunDiagnostics) -> FailureClass {
    match diag {
        RunDiagnostics::Transport(msg) => FailureClass::new(FailureKind::Infrastructure, msg.as_str()),
        RunDiagnostics::EmptyResponse(msg) => FailureClass::new(FailureKind::SyntaxCodeError, msg.as_str()),
        RunDiagnostics::Patch(e @ PatchError::FileCorruption { .. }) => {
            FailureClass::new(FailureKind::FileCorruption, e.to_string())
        }
        RunDiagnostics::Patch(e) => FailureClass::new(FailureKind::SyntaxCodeError, e.to_string()),
        RunDiagnostics::Spec(e) => FailureClass::new(FailureKind::SyntaxCodeError, e.to_string()),
        RunDiagnostics::Guardrail(findings) => {
            let detail = findings
                .iter()
                .map(|f| format!("guardrail {} {}={}", f.rule, f.key, f.value))
                .collect::<Vec<_>>()
                .join("; ");
            FailureClass::new(FailureKind::RuntimeIncompat, detail)
        }
        RunDiagnostics::Run(e) => FailureClass::new(FailureKind::RuntimeIncompat, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorError;
    use crate::spec::parse_spec;

    #[test]
    fn taxonomy() {
        let corrupt = RunDiagnostics::Patch(PatchError::FileCorruption {
            line: 1,
            text: "--- a/main.py".into(),
        });
        assert_eq!(classify_failure(&corrupt).kind, FailureKind::FileCorruption);

        let mismatch = RunDiagnostics::Patch(PatchError::ContextMismatch {
            hunk: 1,
            line: 3,
            expected: "a".into(),
            found: "b".into(),
        });
        assert_eq!(classify_failure(&mismatch).kind, FailureKind::SyntaxCodeError);

        let spec = RunDiagnostics::Spec(parse_spec("reward_model.gamma = 0.99\n").unwrap_err());
        let class = classify_failure(&spec);
        assert_eq!(class.kind, FailureKind::SyntaxCodeError);
        assert!(class.detail.contains("reward_model.gamma"));

        let timeout = RunDiagnostics::Transport("RetryError: Timeout of 600.0s exceeded".into());
        assert_eq!(classify_failure(&timeout).kind, FailureKind::Infrastructure);

        let run = RunDiagnostics::Run(RunError::Estimator(EstimatorError::DegenerateSelfNormalization));
        assert_eq!(classify_failure(&run).kind, FailureKind::RuntimeIncompat);
    }

    #[test]
    fn log_line_is_single_line() {
        let c = FailureClass::new(FailureKind::Infrastructure, "line one\nline two");
        assert_eq!(c.log_line(), "FAIL infrastructure line one line two");
        for k in FailureKind::ALL {
            assert_eq!(k.as_str().parse::<FailureKind>().unwrap(), k);
        }
    }
}
