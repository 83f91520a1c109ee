use std::sync::LazyLock;

use regex::Regex;

use super::{split_lines, DiffLine, Hunk, PatchError, UnifiedDiff};

fn visible(line: &str) -> String {
    line.strip_suffix('\n').unwrap_or(line).to_string()
}

fn assemble(lines: &[&str], edits: &[(usize, usize, Vec<&str>)]) -> String {
    let mut out = String::new();
    let mut cursor = 0;
    for (start, len, replacement) in edits {
        for l in &lines[cursor..*start] {
            out.push_str(l);
        }
        for l in replacement {
            out.push_str(l);
        }
        cursor = start + len;
    }
    for l in &lines[cursor..] {
        out.push_str(l);
    }
    out
}

/// Applies `patch` with zero fuzz at exactly the stated offsets. Either every
/// hunk applies or the original is left untouched and an error names the
/// first hunk that failed.
pub fn apply_strict(patch: &UnifiedDiff, original: &str) -> Result<String, PatchError> {
    let lines = split_lines(original);
    let mut edits = Vec::with_capacity(patch.hunks.len());
    let mut min_pos = 0;
    for (k, hunk) in patch.hunks.iter().enumerate() {
        let n = k + 1;
        let pos = hunk.position();
        let end = pos + hunk.old_len;
        if pos < min_pos {
            return Err(PatchError::Overlapping { hunk: n });
        }
        if end > lines.len() {
            return Err(PatchError::OffsetOutOfRange {
                hunk: n,
                start: pos + 1,
                end,
                available: lines.len(),
            });
        }
        for (j, expected) in hunk.old_lines().enumerate() {
            if lines[pos + j] != expected {
                return Err(PatchError::ContextMismatch {
                    hunk: n,
                    line: pos + j + 1,
                    expected: visible(expected),
                    found: visible(lines[pos + j]),
                });
            }
        }
        edits.push((pos, hunk.old_len, hunk.new_lines().collect()));
        min_pos = end;
    }
    Ok(assemble(&lines, &edits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuzzOptions {
    /// Maximum number of leading and trailing context lines that may be
    /// ignored per hunk.
    pub fuzz: usize,
    /// Maximum distance, in lines, from the expected position to search.
    pub window: usize,
}

impl Default for FuzzOptions {
    fn default() -> Self {
        Self { fuzz: 2, window: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzyApplied {
    pub text: String,
    /// Per-hunk displacement, in lines, between where each hunk applied and
    /// where its header said it would.
    pub offsets: Vec<isize>,
    /// Per-hunk fuzz level that was needed.
    pub fuzz_used: Vec<usize>,
}

/// Context lines at either end of a hunk that fuzz may drop.
fn outer_context(hunk: &Hunk) -> (usize, usize) {
    let lead = hunk
        .lines
        .iter()
        .take_while(|l| matches!(l, DiffLine::Context(_)))
        .count();
    let trail = hunk.lines[lead..]
        .iter()
        .rev()
        .take_while(|l| matches!(l, DiffLine::Context(_)))
        .count();
    (lead, trail)
}

fn matches_at(lines: &[&str], at: usize, block: &[&str]) -> bool {
    at + block.len() <= lines.len() && lines[at..at + block.len()] == *block
}

/// Applies `patch` by searching for each hunk near its expected position.
///
/// For each hunk, fuzz levels `0..=fuzz` are tried in order; level `f` drops
/// up to `f` context lines from each end of the hunk, never delete lines. At
/// each level, distances `0..=window` from the expected position are scanned
/// in order and the nearest match wins. Two matches at the same distance are
/// an ambiguity error. The offset found for one hunk carries over to the
/// expected position of the next.
pub fn apply_fuzzy(patch: &UnifiedDiff, original: &str, opts: FuzzOptions) -> Result<FuzzyApplied, PatchError> {
    let lines = split_lines(original);
    let mut edits = Vec::with_capacity(patch.hunks.len());
    let mut offsets = Vec::with_capacity(patch.hunks.len());
    let mut fuzz_used = Vec::with_capacity(patch.hunks.len());
    let mut carried: isize = 0;
    let mut min_pos = 0usize;

    for (k, hunk) in patch.hunks.iter().enumerate() {
        let n = k + 1;
        let (lead, trail) = outer_context(hunk);
        let mut placed = None;
        'levels: for f in 0..=opts.fuzz {
            let (drop_lead, drop_trail) = (f.min(lead), f.min(trail));
            if f > 0 && f > lead.max(trail) {
                // same block as the previous level
                break;
            }
            let kept = &hunk.lines[drop_lead..hunk.lines.len() - drop_trail];
            let block: Vec<&str> = kept
                .iter()
                .filter(|l| !matches!(l, DiffLine::Add(_)))
                .map(|l| l.text())
                .collect();
            let expected = hunk.position() as isize + carried + drop_lead as isize;
            for d in 0..=opts.window as isize {
                let candidates: Vec<usize> = [expected - d, expected + d]
                    .into_iter()
                    .take(if d == 0 { 1 } else { 2 })
                    .filter(|&c| c >= min_pos as isize)
                    .map(|c| c as usize)
                    .filter(|&c| matches_at(&lines, c, &block))
                    .collect();
                match candidates.as_slice() {
                    [] => continue,
                    [at] => {
                        placed = Some((*at, f, drop_lead, block.len(), kept));
                        break 'levels;
                    }
                    [first, second, ..] => {
                        return Err(PatchError::Ambiguous {
                            hunk: n,
                            first: first + 1,
                            second: second + 1,
                        })
                    }
                }
            }
        }
        let Some((at, f, drop_lead, block_len, kept)) = placed else {
            return Err(PatchError::NotFound {
                hunk: n,
                window: opts.window,
            });
        };
        let offset = at as isize - drop_lead as isize - hunk.position() as isize;
        let replacement: Vec<&str> = kept
            .iter()
            .filter(|l| !matches!(l, DiffLine::Delete(_)))
            .map(|l| l.text())
            .collect();
        edits.push((at, block_len, replacement));
        offsets.push(offset);
        fuzz_used.push(f);
        carried = offset;
        min_pos = at + block_len;
    }

    Ok(FuzzyApplied {
        text: assemble(&lines, &edits),
        offsets,
        fuzz_used,
    })
}

static DIFF_SYNTAX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:--- a/|\+\+\+ b/|@@ -\d+(?:,\d+)? \+\d+(?:,\d+)? @@)").unwrap()
});

/// Accepts a whole-document proposal unless it contains unified-diff syntax
/// (`--- a/`, `+++ b/`, or a hunk header at the start of a line), which
/// means diff text leaked into the document.
pub fn accept_whole(proposal: &str) -> Result<String, PatchError> {
    for (i, line) in proposal.lines().enumerate() {
        if DIFF_SYNTAX.is_match(line) {
            return Err(PatchError::FileCorruption {
                line: i + 1,
                text: line.to_string(),
            });
        }
    }
    Ok(proposal.to_string())
}

#[cfg(test)]
mod tests {
    use super::super::{diff, parse_diff};
    use super::*;

    fn numbered(n: usize) -> String {
        (1..=n).map(|i| format!("line {i}\n")).collect()
    }

    #[test]
    fn strict_applies_at_stated_offsets() {
        let old = numbered(10);
        let new = old.replace("line 5\n", "five\n");
        let d = diff(&old, &new);
        assert_eq!(apply_strict(&d, &old).unwrap(), new);
    }

    #[test]
    fn strict_reports_first_mismatching_line() {
        let old = numbered(10);
        let d = diff(&old, &old.replace("line 5\n", "five\n"));
        let drifted = old.replace("line 4\n", "line four\n");
        let err = apply_strict(&d, &drifted).unwrap_err();
        assert_eq!(
            err,
            PatchError::ContextMismatch {
                hunk: 1,
                line: 4,
                expected: "line 4".into(),
                found: "line four".into()
            }
        );
        assert!(err.to_string().starts_with("context mismatch, hunk 1"));
    }

    #[test]
    fn strict_rejects_out_of_range() {
        let d = parse_diff("@@ -9,2 +9,2 @@\n a\n-b\n+c\n").unwrap();
        assert!(matches!(
            apply_strict(&d, "a\nb\n"),
            Err(PatchError::OffsetOutOfRange { hunk: 1, .. })
        ));
    }

    #[test]
    fn strict_is_all_or_nothing() {
        let old = numbered(40);
        let new = old.replace("line 3\n", "x\n").replace("line 30\n", "y\n");
        let d = diff(&old, &new);
        assert_eq!(d.hunks.len(), 2);
        let broken = old.replace("line 31\n", "changed\n");
        let err = apply_strict(&d, &broken).unwrap_err();
        assert!(matches!(err, PatchError::ContextMismatch { hunk: 2, .. }));
    }

    #[test]
    fn fuzzy_finds_shifted_hunk() {
        let old = numbered(30);
        let new = old.replace("line 15\n", "fifteen\n");
        let d = diff(&old, &new);
        let shifted = format!("extra a\nextra b\nextra c\n{old}");
        let applied = apply_fuzzy(&d, &shifted, FuzzOptions::default()).unwrap();
        assert_eq!(applied.offsets, vec![3]);
        assert_eq!(applied.fuzz_used, vec![0]);
        assert_eq!(applied.text, format!("extra a\nextra b\nextra c\n{new}"));
        assert!(apply_strict(&d, &shifted).is_err());
    }

    #[test]
    fn fuzzy_drops_outer_context() {
        let old = numbered(30);
        let new = old.replace("line 15\n", "fifteen\n");
        let d = diff(&old, &new);
        let edited = old.replace("line 12\n", "twelve\n");
        let applied = apply_fuzzy(&d, &edited, FuzzOptions::default()).unwrap();
        assert_eq!(applied.fuzz_used, vec![1]);
        assert_eq!(applied.text, edited.replace("line 15\n", "fifteen\n"));
        let none = FuzzOptions { fuzz: 0, window: 20 };
        assert!(matches!(apply_fuzzy(&d, &edited, none), Err(PatchError::NotFound { .. })));
    }

    #[test]
    fn fuzz_never_ignores_deleted_lines() {
        let d = parse_diff("@@ -2,3 +2,3 @@\n a\n-b\n+B\n c\n").unwrap();
        let opts = FuzzOptions { fuzz: 10, window: 20 };
        assert!(matches!(
            apply_fuzzy(&d, "x\na\nq\nc\n", opts),
            Err(PatchError::NotFound { hunk: 1, .. })
        ));
    }

    #[test]
    fn equidistant_matches_are_ambiguous() {
        let d = parse_diff("@@ -3 +3 @@\n-b\n+B\n").unwrap();
        let err = apply_fuzzy(&d, "b\nx\ny\nz\nb\n", FuzzOptions::default()).unwrap_err();
        assert_eq!(err, PatchError::Ambiguous { hunk: 1, first: 1, second: 5 });
        assert!(err.to_string().starts_with("ambiguous placement"));
    }

    #[test]
    fn window_limits_search() {
        let d = parse_diff("@@ -1 +1 @@\n-target\n+T\n").unwrap();
        let text = format!("{}target\n", numbered(5));
        let narrow = FuzzOptions { fuzz: 0, window: 4 };
        assert!(apply_fuzzy(&d, &text, narrow).is_err());
        let wide = FuzzOptions { fuzz: 0, window: 5 };
        assert_eq!(apply_fuzzy(&d, &text, wide).unwrap().offsets, vec![5]);
    }

    #[test]
    fn offset_carries_to_next_hunk() {
        let old = numbered(60);
        let new = old.replace("line 10\n", "ten\n").replace("line 50\n", "fifty\n");
        let d = diff(&old, &new);
        // shift everything by 15 so the second hunk alone is out of window
        let pad: String = (0..15).map(|i| format!("pad {i}\n")).collect();
        let opts = FuzzOptions { fuzz: 0, window: 15 };
        let applied = apply_fuzzy(&d, &format!("{pad}{old}"), opts).unwrap();
        assert_eq!(applied.offsets, vec![15, 15]);
        assert_eq!(applied.text, format!("{pad}{new}"));
    }

    #[test]
    fn accept_whole_detects_diff_syntax() {
        assert_eq!(accept_whole("env.contexts = 4\n").unwrap(), "env.contexts = 4\n");
        let err = accept_whole("a = 1\n@@ -3,2 +3,2 @@\nb = 2\n").unwrap_err();
        assert_eq!(err, PatchError::FileCorruption { line: 2, text: "@@ -3,2 +3,2 @@".into() });
        assert!(accept_whole("x\n--- a/main.py\n").is_err());
        assert!(accept_whole("+++ b/main.py\n").is_err());
        // a bare @@ without hunk arithmetic is fine
        assert!(accept_whole("@@ note\n").is_ok());
    }
}
