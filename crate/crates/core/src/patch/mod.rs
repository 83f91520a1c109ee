//! Unified diffs and the three ways a proposal can become a candidate spec.
//!
//! - `whole_code`: the proposal is the full new document ([`accept_whole`]).
//! - `manual_patch`: the proposal is a diff applied with zero fuzz at the exact
//!   stated offsets ([`apply_strict`]), like `patch -F0` without offset search.
//! - `agent_applies`: the proposal is a diff whose hunks are located by
//!   searching near the stated offsets, optionally ignoring outer context
//!   lines ([`apply_fuzzy`]).
//!
//! Texts are handled as lines that keep their `\n` terminator, so a final line
//! without a newline is distinct from one with it and survives round trips via
//! the `\ No newline at end of file` marker.

mod apply;
mod classify;
mod diff;
mod parse;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use apply::{accept_whole, apply_fuzzy, apply_strict, FuzzOptions, FuzzyApplied};
pub use classify::{classify_failure, FailureClass, FailureKind, RunDiagnostics};
pub use diff::diff;
pub use parse::parse_diff;

/// Marker emitted after a line that has no trailing newline.
pub const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatchError {
    #[error("malformed header at line {line}: '{text}'")]
    MalformedHeader { line: usize, text: String },
    #[error("hunk length mismatch, hunk {hunk}: {detail}")]
    LengthMismatch { hunk: usize, detail: String },
    #[error("overlapping or unordered hunks, hunk {hunk}")]
    Overlapping { hunk: usize },
    #[error("diff touches more than one file")]
    MultipleFiles,
    #[error("context mismatch, hunk {hunk} at line {line}: expected '{expected}', found '{found}'")]
    ContextMismatch {
        hunk: usize,
        line: usize,
        expected: String,
        found: String,
    },
    #[error("offset out of range, hunk {hunk}: needs lines {start}..{end} of {available}")]
    OffsetOutOfRange {
        hunk: usize,
        start: usize,
        end: usize,
        available: usize,
    },
    #[error("hunk {hunk} not found within {window} lines")]
    NotFound { hunk: usize, window: usize },
    #[error("ambiguous placement, hunk {hunk}: matches at lines {first} and {second}")]
    Ambiguous { hunk: usize, first: usize, second: usize },
    #[error("file corruption: diff syntax at line {line}: '{text}'")]
    FileCorruption { line: usize, text: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiffLine {
    Context(String),
    Delete(String),
    Add(String),
}

impl DiffLine {
    pub fn text(&self) -> &str {
        match self {
            DiffLine::Context(s) | DiffLine::Delete(s) | DiffLine::Add(s) => s,
        }
    }

    fn prefix(&self) -> char {
        match self {
            DiffLine::Context(_) => ' ',
            DiffLine::Delete(_) => '-',
            DiffLine::Add(_) => '+',
        }
    }

    fn text_mut(&mut self) -> &mut String {
        match self {
            DiffLine::Context(s) | DiffLine::Delete(s) | DiffLine::Add(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    /// 1-based first old line; for an empty old side, the line after which
    /// the new lines go (0 = start of file).
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub lines: Vec<DiffLine>,
}

impl Hunk {
    /// 0-based index of the first old line this hunk replaces.
    pub fn position(&self) -> usize {
        if self.old_len == 0 {
            self.old_start
        } else {
            self.old_start - 1
        }
    }

    pub fn old_lines(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter_map(|l| match l {
            DiffLine::Context(s) | DiffLine::Delete(s) => Some(s.as_str()),
            DiffLine::Add(_) => None,
        })
    }

    pub fn new_lines(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().filter_map(|l| match l {
            DiffLine::Context(s) | DiffLine::Add(s) => Some(s.as_str()),
            DiffLine::Delete(_) => None,
        })
    }
}

fn fmt_range(start: usize, len: usize) -> String {
    if len == 1 {
        start.to_string()
    } else {
        format!("{start},{len}")
    }
}

impl fmt::Display for Hunk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "@@ -{} +{} @@",
            fmt_range(self.old_start, self.old_len),
            fmt_range(self.new_start, self.new_len)
        )?;
        for line in &self.lines {
            let text = line.text();
            write!(f, "{}{}", line.prefix(), text)?;
            if !text.ends_with('\n') {
                writeln!(f)?;
                writeln!(f, "{NO_NEWLINE_MARKER}")?;
            }
        }
        Ok(())
    }
}

/// A single-file unified diff.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UnifiedDiff {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub hunks: Vec<Hunk>,
}

impl UnifiedDiff {
    pub fn is_empty(&self) -> bool {
        self.hunks.is_empty()
    }

    /// Sets `--- a/<path>` / `+++ b/<path>` headers.
    pub fn with_paths(mut self, path: &str) -> Self {
        self.old_path = Some(format!("a/{path}"));
        self.new_path = Some(format!("b/{path}"));
        self
    }
}

impl fmt::Display for UnifiedDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let (Some(old), Some(new)) = (&self.old_path, &self.new_path) {
            writeln!(f, "--- {old}")?;
            writeln!(f, "+++ {new}")?;
        }
        for hunk in &self.hunks {
            write!(f, "{hunk}")?;
        }
        Ok(())
    }
}

/// How a proposal is turned into a candidate document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModificationMode {
    WholeCode,
    ManualPatch,
    AgentApplies(FuzzOptions),
}

impl ModificationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModificationMode::WholeCode => "whole_code",
            ModificationMode::ManualPatch => "manual_patch",
            ModificationMode::AgentApplies(_) => "agent_applies",
        }
    }

    /// Whether proposals in this mode are diffs rather than whole documents.
    pub fn expects_diff(&self) -> bool {
        !matches!(self, ModificationMode::WholeCode)
    }

    pub fn fuzz(&self) -> usize {
        match self {
            ModificationMode::AgentApplies(o) => o.fuzz,
            _ => 0,
        }
    }
}

impl fmt::Display for ModificationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModificationMode {
    type Err = String;

    /// Parses a mode name; `agent_applies` gets the default fuzz options.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whole_code" => Ok(ModificationMode::WholeCode),
            "manual_patch" => Ok(ModificationMode::ManualPatch),
            "agent_applies" => Ok(ModificationMode::AgentApplies(FuzzOptions::default())),
            other => Err(format!(
                "unknown mode '{other}' (expected whole_code, manual_patch or agent_applies)"
            )),
        }
    }
}

/// Produces the candidate document from `proposal` under `mode`.
pub fn apply_proposal(mode: ModificationMode, original: &str, proposal: &str) -> Result<String, PatchError> {
    match mode {
        ModificationMode::WholeCode => accept_whole(proposal),
        ModificationMode::ManualPatch => apply_strict(&parse_diff(proposal)?, original),
        ModificationMode::AgentApplies(opts) => Ok(apply_fuzzy(&parse_diff(proposal)?, original, opts)?.text),
    }
}

pub(crate) fn split_lines(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}
