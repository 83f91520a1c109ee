use std::sync::LazyLock;

use regex::Regex;

use super::{DiffLine, Hunk, PatchError, UnifiedDiff};

static HUNK_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@").unwrap());

fn parse_header(line_no: usize, text: &str) -> Result<(usize, usize, usize, usize), PatchError> {
    let malformed = || PatchError::MalformedHeader {
        line: line_no,
        text: text.trim_end().to_string(),
    };
    let caps = HUNK_HEADER.captures(text).ok_or_else(malformed)?;
    let num = |i: usize, default: usize| -> Result<usize, PatchError> {
        match caps.get(i) {
            Some(m) => m.as_str().parse().map_err(|_| malformed()),
            None => Ok(default),
        }
    };
    let (old_start, old_len, new_start, new_len) = (num(1, 0)?, num(2, 1)?, num(3, 0)?, num(4, 1)?);
    if (old_start == 0 && old_len > 0) || (new_start == 0 && new_len > 0) {
        return Err(malformed());
    }
    Ok((old_start, old_len, new_start, new_len))
}

fn strip_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

/// Parses a single-file unified diff.
///
/// Lines before the first `---`/`@@` header (commit messages, `diff --git`,
/// `index` lines) and trailing lines after the last hunk that cannot be hunk
/// content are ignored. An empty input is an empty diff.
pub fn parse_diff(text: &str) -> Result<UnifiedDiff, PatchError> {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut out = UnifiedDiff::default();
    let mut i = 0;

    // preamble
    while i < lines.len() && !lines[i].starts_with("--- ") && !lines[i].starts_with("@@") {
        i += 1;
    }
    if i < lines.len() && lines[i].starts_with("--- ") {
        let plus = lines.get(i + 1).filter(|l| l.starts_with("+++ "));
        let Some(plus) = plus else {
            return Err(PatchError::MalformedHeader {
                line: i + 2,
                text: lines.get(i + 1).map(|l| strip_newline(l)).unwrap_or("").to_string(),
            });
        };
        out.old_path = Some(path_field(&lines[i][4..]));
        out.new_path = Some(path_field(&plus[4..]));
        i += 2;
    }

    while i < lines.len() {
        let line = lines[i];
        if line.starts_with("@@") {
            let hunk_no = out.hunks.len() + 1;
            let (old_start, old_len, new_start, new_len) = parse_header(i + 1, line)?;
            i += 1;
            let mut body = Vec::new();
            let (mut old_seen, mut new_seen) = (0, 0);
            while old_seen < old_len || new_seen < new_len {
                let Some(&raw) = lines.get(i) else {
                    return Err(PatchError::LengthMismatch {
                        hunk: hunk_no,
                        detail: format!(
                            "header declares -{old_len} +{new_len}, body ends after -{old_seen} +{new_seen}"
                        ),
                    });
                };
                let entry = match raw.as_bytes()[0] {
                    b' ' => DiffLine::Context(raw[1..].to_string()),
                    b'-' => DiffLine::Delete(raw[1..].to_string()),
                    b'+' => DiffLine::Add(raw[1..].to_string()),
                    // some tools drop the space on empty context lines
                    b'\n' => DiffLine::Context("\n".to_string()),
                    b'\\' => {
                        mark_no_newline(&mut body, hunk_no)?;
                        i += 1;
                        continue;
                    }
                    _ => {
                        return Err(PatchError::LengthMismatch {
                            hunk: hunk_no,
                            detail: format!(
                                "header declares -{old_len} +{new_len}, body ends after -{old_seen} +{new_seen}"
                            ),
                        })
                    }
                };
                match entry {
                    DiffLine::Context(_) => {
                        old_seen += 1;
                        new_seen += 1;
                    }
                    DiffLine::Delete(_) => old_seen += 1,
                    DiffLine::Add(_) => new_seen += 1,
                }
                if old_seen > old_len || new_seen > new_len {
                    return Err(PatchError::LengthMismatch {
                        hunk: hunk_no,
                        detail: format!("header declares -{old_len} +{new_len}, body has more lines"),
                    });
                }
                body.push(entry);
                i += 1;
            }
            if lines.get(i).is_some_and(|l| l.starts_with('\\')) {
                mark_no_newline(&mut body, hunk_no)?;
                i += 1;
            }
            out.hunks.push(Hunk {
                old_start,
                old_len,
                new_start,
                new_len,
                lines: body,
            });
        } else if line.starts_with("--- ") && lines.get(i + 1).is_some_and(|l| l.starts_with("+++ ")) {
            return Err(PatchError::MultipleFiles);
        } else if !out.hunks.is_empty() && matches!(line.as_bytes()[0], b' ' | b'+' | b'-') {
            return Err(PatchError::LengthMismatch {
                hunk: out.hunks.len(),
                detail: format!("line {} follows a complete hunk", i + 1),
            });
        } else {
            i += 1;
        }
    }

    check_order(&out.hunks)?;
    Ok(out)
}

fn path_field(s: &str) -> String {
    // drop a trailing timestamp separated by a tab
    strip_newline(s).split('\t').next().unwrap_or("").trim_end().to_string()
}

fn mark_no_newline(body: &mut [DiffLine], hunk: usize) -> Result<(), PatchError> {
    let last = body.last_mut().ok_or_else(|| PatchError::LengthMismatch {
        hunk,
        detail: "no-newline marker before any line".into(),
    })?;
    let text = last.text_mut();
    if text.ends_with('\n') {
        text.pop();
    }
    Ok(())
}

fn check_order(hunks: &[Hunk]) -> Result<(), PatchError> {
    for (k, pair) in hunks.windows(2).enumerate() {
        if pair[0].position() + pair[0].old_len > pair[1].position() {
            return Err(PatchError::Overlapping { hunk: k + 2 });
        }
    }
    Ok(())
}
