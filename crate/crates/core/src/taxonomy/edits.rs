//! Line-oriented taxonomy edit files.
//!
//! ```text
//! # comments and blank lines are ignored
//! merge "Care (2)" "Care" -> "Care"
//! rename "Kindness" -> "Compassion"
//! move "being on time" -> "Punctuality"
//! drop "stuff"
//! ```

use super::{normalize, TaxonomyError, ValueCluster, ValueTaxonomy};
use crate::rng::content_hash;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Edit {
    Merge { a: String, b: String, label: String },
    Rename { from: String, label: String },
    Move { expression: String, cluster: String },
    Drop { expression: String },
}

fn edit_err(line: usize, message: impl Into<String>) -> TaxonomyError {
    TaxonomyError::Edit {
        line,
        message: message.into(),
    }
}

/// Splits a line into bare words, quoted strings (with `\"` and `\\`
/// escapes) and the `->` arrow.
fn tokens(line: &str, lineno: usize) -> Result<Vec<(bool, String)>, TaxonomyError> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some(e) => s.push(e),
                        None => return Err(edit_err(lineno, "dangling escape")),
                    },
                    Some(ch) => s.push(ch),
                    None => return Err(edit_err(lineno, "unterminated quote")),
                }
            }
            out.push((true, s));
        } else {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() || ch == '"' {
                    break;
                }
                s.push(ch);
                chars.next();
            }
            out.push((false, s));
        }
    }
    Ok(out)
}

/// Parses an edit file; errors carry the 1-based line number.
pub fn parse_edits(text: &str) -> Result<Vec<(usize, Edit)>, TaxonomyError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks = tokens(line, lineno)?;
        let q = |t: &(bool, String)| t.0.then(|| t.1.clone());
        let arrow = |t: &(bool, String)| !t.0 && t.1 == "->";
        let edit = match toks.as_slice() {
            [(false, verb), a, b, ar, l] if verb == "merge" && arrow(ar) => Edit::Merge {
                a: q(a).ok_or_else(|| edit_err(lineno, "merge operands must be quoted"))?,
                b: q(b).ok_or_else(|| edit_err(lineno, "merge operands must be quoted"))?,
                label: q(l).ok_or_else(|| edit_err(lineno, "merge label must be quoted"))?,
            },
            [(false, verb), a, ar, l] if verb == "rename" && arrow(ar) => Edit::Rename {
                from: q(a).ok_or_else(|| edit_err(lineno, "rename operands must be quoted"))?,
                label: q(l).ok_or_else(|| edit_err(lineno, "rename operands must be quoted"))?,
            },
            [(false, verb), e, ar, c] if verb == "move" && arrow(ar) => Edit::Move {
                expression: q(e).ok_or_else(|| edit_err(lineno, "move operands must be quoted"))?,
                cluster: q(c).ok_or_else(|| edit_err(lineno, "move operands must be quoted"))?,
            },
            [(false, verb), e] if verb == "drop" => Edit::Drop {
                expression: q(e).ok_or_else(|| edit_err(lineno, "drop operand must be quoted"))?,
            },
            _ => return Err(edit_err(lineno, format!("unrecognised edit {line:?}"))),
        };
        out.push((lineno, edit));
    }
    Ok(out)
}

fn find_label(t: &ValueTaxonomy, label: &str) -> Option<usize> {
    t.clusters.iter().position(|c| c.label == label)
}

fn find_member(t: &ValueTaxonomy, expression: &str) -> Option<(usize, usize)> {
    let key = normalize(expression);
    t.clusters
        .iter()
        .enumerate()
        .find_map(|(ci, c)| c.members.iter().position(|m| *m == key).map(|mi| (ci, mi)))
}

fn apply_one(t: &mut ValueTaxonomy, lineno: usize, edit: &Edit) -> Result<(), TaxonomyError> {
    let unknown = |what: &str, name: &str| edit_err(lineno, format!("unknown {what} {name:?}"));
    match edit {
        Edit::Merge { a, b, label } => {
            let ia = find_label(t, a).ok_or_else(|| unknown("cluster", a))?;
            let ib = find_label(t, b).ok_or_else(|| unknown("cluster", b))?;
            if ia == ib {
                return Err(edit_err(lineno, "cannot merge a cluster with itself"));
            }
            if label != a && label != b && find_label(t, label).is_some() {
                return Err(edit_err(lineno, format!("label {label:?} already exists")));
            }
            let moved = std::mem::take(&mut t.clusters[ib].members);
            let keep = &mut t.clusters[ia];
            keep.members.extend(moved);
            keep.members.sort();
            keep.members.dedup();
            keep.label = label.clone();
            t.clusters.remove(ib);
        }
        Edit::Rename { from, label } => {
            let i = find_label(t, from).ok_or_else(|| unknown("cluster", from))?;
            if label != from && find_label(t, label).is_some() {
                return Err(edit_err(lineno, format!("label {label:?} already exists; use merge")));
            }
            t.clusters[i].label = label.clone();
        }
        Edit::Move { expression, cluster } => {
            let (ci, mi) = find_member(t, expression).ok_or_else(|| unknown("expression", expression))?;
            let target = find_label(t, cluster).ok_or_else(|| unknown("cluster", cluster))?;
            if target != ci {
                let m = t.clusters[ci].members.remove(mi);
                t.clusters[target].members.push(m);
                t.clusters[target].members.sort();
            }
        }
        Edit::Drop { expression } => {
            let (ci, mi) = find_member(t, expression).ok_or_else(|| unknown("expression", expression))?;
            t.clusters[ci].members.remove(mi);
        }
    }
    t.clusters.retain(|c: &ValueCluster| !c.members.is_empty());
    Ok(())
}

/// Applies edits in file order. Each applied line extends the version hash
/// chain.
pub fn apply_edits(taxonomy: &ValueTaxonomy, edit_text: &str) -> Result<ValueTaxonomy, TaxonomyError> {
    let mut t = taxonomy.clone();
    for (lineno, edit) in parse_edits(edit_text)? {
        apply_one(&mut t, lineno, &edit)?;
        let line = edit_text.lines().nth(lineno - 1).unwrap_or("").trim();
        t.version = content_hash([t.version.as_bytes(), line.as_bytes()]);
    }
    Ok(t)
}
