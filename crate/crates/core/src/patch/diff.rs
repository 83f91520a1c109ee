use super::{split_lines, DiffLine, Hunk, UnifiedDiff};

const CONTEXT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Equal(usize, usize),
    Delete(usize),
    Insert(usize),
}

/// Longest-common-subsequence edit script over the region between the common
/// prefix and suffix.
fn edit_script(a: &[&str], b: &[&str]) -> Vec<Op> {
    let prefix = a.iter().zip(b).take_while(|(x, y)| x == y).count();
    let suffix = a[prefix..]
        .iter()
        .rev()
        .zip(b[prefix..].iter().rev())
        .take_while(|(x, y)| x == y)
        .count();
    let (ma, mb) = (&a[prefix..a.len() - suffix], &b[prefix..b.len() - suffix]);
    let (n, m) = (ma.len(), mb.len());

    // lcs[i][j] = LCS length of ma[i..], mb[j..]
    let width = m + 1;
    let mut lcs = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i * width + j] = if ma[i] == mb[j] {
                lcs[(i + 1) * width + j + 1] + 1
            } else {
                lcs[(i + 1) * width + j].max(lcs[i * width + j + 1])
            };
        }
    }

    let mut ops: Vec<Op> = (0..prefix).map(|k| Op::Equal(k, k)).collect();
    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && ma[i] == mb[j] {
            ops.push(Op::Equal(prefix + i, prefix + j));
            i += 1;
            j += 1;
        } else if j == m || (i < n && lcs[(i + 1) * width + j] >= lcs[i * width + j + 1]) {
            ops.push(Op::Delete(prefix + i));
            i += 1;
        } else {
            ops.push(Op::Insert(prefix + j));
            j += 1;
        }
    }
    ops.extend((0..suffix).map(|k| Op::Equal(a.len() - suffix + k, b.len() - suffix + k)));
    ops
}

/// Computes a unified diff (3 context lines, nearby hunks merged) such that
/// strictly applying it to `old` yields `new`.
pub fn diff(old: &str, new: &str) -> UnifiedDiff {
    let a = split_lines(old);
    let b = split_lines(new);
    let ops = edit_script(&a, &b);

    // group change indices into hunk ranges over `ops`
    let changes: Vec<usize> = ops
        .iter()
        .enumerate()
        .filter(|(_, op)| !matches!(op, Op::Equal(..)))
        .map(|(k, _)| k)
        .collect();
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    for &k in &changes {
        let lo = k.saturating_sub(CONTEXT);
        let hi = (k + CONTEXT + 1).min(ops.len());
        match ranges.last_mut() {
            Some(last) if lo <= last.1 => last.1 = hi,
            _ => ranges.push((lo, hi)),
        }
    }

    let hunks = ranges
        .into_iter()
        .map(|(lo, hi)| {
            let slice = &ops[lo..hi];
            // first old / new index covered by the hunk
            let mut old_pos = None;
            let mut new_pos = None;
            let mut lines = Vec::with_capacity(slice.len());
            let (mut old_len, mut new_len) = (0, 0);
            for op in slice {
                match *op {
                    Op::Equal(i, j) => {
                        old_pos.get_or_insert(i);
                        new_pos.get_or_insert(j);
                        old_len += 1;
                        new_len += 1;
                        lines.push(DiffLine::Context(a[i].to_string()));
                    }
                    Op::Delete(i) => {
                        old_pos.get_or_insert(i);
                        old_len += 1;
                        lines.push(DiffLine::Delete(a[i].to_string()));
                    }
                    Op::Insert(j) => {
                        new_pos.get_or_insert(j);
                        new_len += 1;
                        lines.push(DiffLine::Add(b[j].to_string()));
                    }
                }
            }
            // an empty side is anchored where the other side's lines sit
            let old_pos = old_pos.unwrap_or_else(|| anchor_old(&ops, lo));
            let new_pos = new_pos.unwrap_or_else(|| anchor_new(&ops, lo));
            Hunk {
                old_start: if old_len == 0 { old_pos } else { old_pos + 1 },
                old_len,
                new_start: if new_len == 0 { new_pos } else { new_pos + 1 },
                new_len,
                lines,
            }
        })
        .collect();

    UnifiedDiff {
        old_path: None,
        new_path: None,
        hunks,
    }
}

/// Number of old lines consumed before `ops[lo]`.
fn anchor_old(ops: &[Op], lo: usize) -> usize {
    ops[..lo]
        .iter()
        .filter(|op| matches!(op, Op::Equal(..) | Op::Delete(_)))
        .count()
}

fn anchor_new(ops: &[Op], lo: usize) -> usize {
    ops[..lo]
        .iter()
        .filter(|op| matches!(op, Op::Equal(..) | Op::Insert(_)))
        .count()
}

#[cfg(test)]
mod tests {
    use super::super::{apply_strict, parse_diff};
    use super::*;

    fn roundtrip(old: &str, new: &str) {
        let d = diff(old, new);
        let text = d.to_string();
        let parsed = parse_diff(&text).unwrap();
        assert_eq!(parsed, d, "diff text:\n{text}");
        assert_eq!(apply_strict(&parsed, old).unwrap(), new, "diff text:\n{text}");
    }

    #[test]
    fn identical_texts_give_empty_diff() {
        assert!(diff("a\nb\n", "a\nb\n").is_empty());
        assert!(diff("", "").is_empty());
    }

    #[test]
    fn single_replacement() {
        let old = "1\n2\n3\n4\n5\n6\n7\n8\n9\n";
        let new = "1\n2\n3\n4\nfive\n6\n7\n8\n9\n";
        let d = diff(old, new);
        assert_eq!(
            d.to_string(),
            "@@ -2,7 +2,7 @@\n 2\n 3\n 4\n-5\n+five\n 6\n 7\n 8\n"
        );
        roundtrip(old, new);
    }

    #[test]
    fn distant_changes_make_two_hunks() {
        let old: String = (0..30).map(|i| format!("n{i}\n")).collect();
        let new = old.replace("n2\n", "two\n").replace("n25\n", "twentyfive\n");
        assert_eq!(diff(&old, &new).hunks.len(), 2);
        roundtrip(&old, &new);
    }

    #[test]
    fn edge_cases() {
        roundtrip("", "a\n");
        roundtrip("a\n", "");
        roundtrip("a", "a\n");
        roundtrip("a\n", "a");
        roundtrip("a\nb", "a\nc");
        roundtrip("x\n", "y\nx\n");
        roundtrip("x\n", "x\ny\n");
        roundtrip("a\nb\nc\n", "c\nb\na\n");
    }
}
