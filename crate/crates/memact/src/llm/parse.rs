//! Response grammars: one parser per structured prompt kind, plus the
//! matching renderers. Every parser is total over arbitrary input — it
//! returns a value or a [`ParseError`], never panics.

use crate::error::ParseError;

/// Completion status of a subgoal as judged by the evaluation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    Complete,
    Incomplete,
}

fn violation(msg: impl Into<String>) -> ParseError {
    ParseError::FormatViolation(msg.into())
}

// ---------------------------------------------------------------------------
// Summary
// ---------------------------------------------------------------------------

/// Extract the text after the first `Summary:` marker, trimmed.
pub fn parse_summary(raw: &str) -> Result<String, ParseError> {
    let lower = raw.to_ascii_lowercase();
    let pos = lower
        .find("summary:")
        .ok_or_else(|| violation("missing Summary: marker"))?;
    let text = raw[pos + "summary:".len()..].trim();
    if text.is_empty() {
        return Err(violation("empty summary after marker"));
    }
    Ok(text.to_string())
}

pub fn render_summary(summary: &str) -> String {
    format!("Summary: {summary}")
}

// ---------------------------------------------------------------------------
// Evaluation (subgoal status)
// ---------------------------------------------------------------------------

/// Parse `Subgoal k: <text> -Complete|-Incomplete` entries. Entries may sit
/// on one line or many; the status token is matched case-insensitively and
/// `in complete` is accepted for `incomplete`.
pub fn parse_evaluation(raw: &str) -> Result<Vec<(String, Completion)>, ParseError> {
    let markers = subgoal_markers(raw);
    if markers.is_empty() {
        return Err(violation("no Subgoal entries"));
    }
    let mut entries = Vec::with_capacity(markers.len());
    for (i, &(_, content_start)) in markers.iter().enumerate() {
        let end = markers.get(i + 1).map_or(raw.len(), |&(start, _)| start);
        let segment = raw[content_start..end].trim();
        entries.push(parse_subgoal_segment(segment)?);
    }
    Ok(entries)
}

/// Byte offsets of each `subgoal <k>:` marker as (marker start, content start).
fn subgoal_markers(raw: &str) -> Vec<(usize, usize)> {
    let lower = raw.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = lower[from..].find("subgoal") {
        let start = from + rel;
        let mut cursor = start + "subgoal".len();
        while bytes.get(cursor).is_some_and(|b| b.is_ascii_whitespace()) {
            cursor += 1;
        }
        let digits_start = cursor;
        while bytes.get(cursor).is_some_and(|b| b.is_ascii_digit()) {
            cursor += 1;
        }
        let has_digits = cursor > digits_start;
        while bytes.get(cursor).is_some_and(|b| b.is_ascii_whitespace()) {
            cursor += 1;
        }
        if has_digits && bytes.get(cursor) == Some(&b':') {
            out.push((start, cursor + 1));
            from = cursor + 1;
        } else {
            from = start + "subgoal".len();
        }
    }
    out
}

fn parse_subgoal_segment(segment: &str) -> Result<(String, Completion), ParseError> {
    let trimmed = segment.trim_end_matches(['.', ' ', '\t', '\n', '\r']);
    let lower = trimmed.to_ascii_lowercase();
    let (status, status_len) = if lower.ends_with("incomplete") {
        (Completion::Incomplete, "incomplete".len())
    } else if lower.ends_with("in complete") {
        (Completion::Incomplete, "in complete".len())
    } else if lower.ends_with("complete") {
        (Completion::Complete, "complete".len())
    } else {
        return Err(violation(format!("no status token in segment {segment:?}")));
    };
    let text = trimmed[..trimmed.len() - status_len]
        .trim_end()
        .trim_end_matches(['-', '–'])
        .trim();
    Ok((text.to_string(), status))
}

pub fn render_evaluation(entries: &[(String, Completion)]) -> String {
    entries
        .iter()
        .enumerate()
        .map(|(i, (text, status))| {
            let status = match status {
                Completion::Complete => "Complete",
                Completion::Incomplete => "Incomplete",
            };
            format!("Subgoal {}: {} -{}", i + 1, text, status)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

/// One cluster from a `High-level TypeK: name [i][j]` response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterEntry {
    pub name: String,
    pub members: Vec<u32>,
}

/// Parse `High-level TypeK:` lines into named clusters with their bracketed
/// member ids. Member ids must be positive and disjoint across clusters.
pub fn parse_cluster(raw: &str) -> Result<Vec<ClusterEntry>, ParseError> {
    let mut entries = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for line in raw.lines() {
        let Some(rest) = strip_cluster_marker(line.trim()) else {
            continue;
        };
        let name_end = rest.find('[').unwrap_or(rest.len());
        let name = rest[..name_end].trim().to_string();
        if name.is_empty() {
            return Err(violation(format!("cluster line without a name: {line:?}")));
        }
        let mut members = Vec::new();
        for group in bracket_groups(&rest[name_end..]) {
            let id = parse_positive(group)
                .ok_or_else(|| violation(format!("bad member id {group:?}")))?;
            if !seen.insert(id) {
                return Err(ParseError::DuplicateMember(id));
            }
            members.push(id);
        }
        entries.push(ClusterEntry { name, members });
    }
    if entries.is_empty() {
        return Err(violation("no High-level Type lines"));
    }
    Ok(entries)
}

/// Strip a leading `high-level type<digits>:` marker, case-insensitively.
fn strip_cluster_marker(line: &str) -> Option<&str> {
    let lower = line.to_ascii_lowercase();
    let rest = lower.strip_prefix("high-level type")?;
    let digits = rest.bytes().take_while(|b| b.is_ascii_digit()).count();
    if digits == 0 || rest.as_bytes().get(digits) != Some(&b':') {
        return None;
    }
    Some(&line["high-level type".len() + digits + 1..])
}

/// Contents of each `[...]` group, left to right.
fn bracket_groups(text: &str) -> Vec<&str> {
    let mut groups = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let Some(close) = rest[open..].find(']') else {
            break;
        };
        groups.push(&rest[open + 1..open + close]);
        rest = &rest[open + close + 1..];
    }
    groups
}

fn parse_positive(text: &str) -> Option<u32> {
    let text = text.trim();
    if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    text.parse::<u32>().ok().filter(|&n| n > 0)
}

pub fn render_cluster(entries: &[ClusterEntry]) -> String {
    entries
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let members: String = entry.members.iter().map(|m| format!("[{m}]")).collect();
            if members.is_empty() {
                format!("High-level Type{}: {}", i + 1, entry.name)
            } else {
                format!("High-level Type{}: {} {}", i + 1, entry.name, members)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Return the first bracketed positive integer, e.g. `2` from `[2]: reason`.
pub fn parse_classification(raw: &str) -> Result<u32, ParseError> {
    for group in bracket_groups(raw) {
        if let Some(id) = parse_positive(group) {
            return Ok(id);
        }
    }
    Err(violation("no bracketed type number"))
}

pub fn render_classification(type_id: u32, reason: &str) -> String {
    format!("[{type_id}]: {reason}")
}

// ---------------------------------------------------------------------------
// Action proposals
// ---------------------------------------------------------------------------

/// Parse `<action> | <confidence>` lines. The separator is the last
/// ` | ` on the line, so action text may itself contain pipes (WebShop
/// option labels do). Duplicate actions are merged by summing confidence,
/// non-positive entries are dropped, and the result is renormalized to sum
/// to one whenever the raw sum deviates by more than 1e-9.
pub fn parse_proposals(raw: &str) -> Result<Vec<(String, f64)>, ParseError> {
    let mut proposals: Vec<(String, f64)> = Vec::new();
    let mut any_line = false;
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        any_line = true;
        let (action, conf) = line
            .rsplit_once(" | ")
            .ok_or_else(|| violation(format!("no ` | ` separator in {line:?}")))?;
        let action = action.trim();
        if action.is_empty() {
            return Err(violation("empty action text"));
        }
        let conf: f64 = conf
            .trim()
            .parse()
            .map_err(|_| violation(format!("bad confidence {conf:?}")))?;
        if !conf.is_finite() {
            return Err(violation(format!("non-finite confidence {conf}")));
        }
        match proposals.iter_mut().find(|(a, _)| a == action) {
            Some((_, existing)) => *existing += conf,
            None => proposals.push((action.to_string(), conf)),
        }
    }
    if !any_line {
        return Err(violation("empty proposal list"));
    }
    proposals.retain(|&(_, c)| c > 0.0);
    if proposals.is_empty() {
        return Err(ParseError::NoValidProposal);
    }
    let sum: f64 = proposals.iter().map(|&(_, c)| c).sum();
    if (sum - 1.0).abs() > 1e-9 {
        for (_, c) in &mut proposals {
            *c /= sum;
        }
    }
    Ok(proposals)
}

/// One proposal per line: action text, ASCII space, `|`, space, decimal
/// confidence. This layout is fixed; [`parse_proposals`] reads it back.
pub fn render_proposals(proposals: &[(String, f64)]) -> String {
    proposals
        .iter()
        .map(|(action, conf)| format!("{action} | {conf}"))
        .collect::<Vec<_>>()
        .join("\n")
}

// ---------------------------------------------------------------------------
// Key step
// ---------------------------------------------------------------------------

/// Return the leading positive integer before the first colon, e.g. `3`
/// from `3: The first process clicks Prev.`.
pub fn parse_key_step(raw: &str) -> Result<usize, ParseError> {
    let trimmed = raw.trim_start();
    let digits = trimmed
        .bytes()
        .take_while(|b| b.is_ascii_digit())
        .count();
    if digits == 0 {
        return Err(violation("no leading step number"));
    }
    let rest = trimmed[digits..].trim_start();
    if !rest.starts_with(':') {
        return Err(violation("step number not followed by a colon"));
    }
    let n: usize = trimmed[..digits]
        .parse()
        .map_err(|_| violation("step number out of range"))?;
    if n == 0 {
        return Err(violation("step number must be positive"));
    }
    Ok(n)
}

pub fn render_key_step(step: usize, reason: &str) -> String {
    format!("{step}: {reason}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_extracts_after_marker() {
        assert_eq!(
            parse_summary("Summary: Looked and went to sink basin 1.").unwrap(),
            "Looked and went to sink basin 1."
        );
        assert_eq!(
            parse_summary("Summary: Unknown. More information is needed to provide a summary.")
                .unwrap(),
            "Unknown. More information is needed to provide a summary."
        );
    }

    #[test]
    fn summary_rejects_missing_marker() {
        assert!(matches!(
            parse_summary("I think you went left"),
            Err(ParseError::FormatViolation(_))
        ));
        assert!(parse_summary("Summary:   ").is_err());
    }

    #[test]
    fn evaluation_parses_inline_entries() {
        let parsed = parse_evaluation(
            "Subgoal 1: take apple from somewhere -Incomplete Subgoal 2: cool apple -Incomplete",
        )
        .unwrap();
        assert_eq!(
            parsed,
            vec![
                ("take apple from somewhere".to_string(), Completion::Incomplete),
                ("cool apple".to_string(), Completion::Incomplete),
            ]
        );
    }

    #[test]
    fn evaluation_status_is_case_insensitive() {
        let parsed = parse_evaluation("Subgoal 1: cool apple -complete").unwrap();
        assert_eq!(parsed, vec![("cool apple".to_string(), Completion::Complete)]);
        let spaced = parse_evaluation("subgoal 1: cool apple - in complete").unwrap();
        assert_eq!(spaced[0].1, Completion::Incomplete);
    }

    #[test]
    fn evaluation_rejects_markerless_text() {
        assert!(parse_evaluation("all done").is_err());
    }

    #[test]
    fn cluster_parses_names_and_members() {
        let parsed =
            parse_cluster("High-level Type1: Footwear [1][3]\nHigh-level Type2: Clothing [2][4]")
                .unwrap();
        assert_eq!(
            parsed,
            vec![
                ClusterEntry { name: "Footwear".into(), members: vec![1, 3] },
                ClusterEntry { name: "Clothing".into(), members: vec![2, 4] },
            ]
        );
    }

    #[test]
    fn cluster_rejects_duplicate_members() {
        let err = parse_cluster("High-level Type1: A [1]\nHigh-level Type2: B [1]").unwrap_err();
        assert_eq!(err, ParseError::DuplicateMember(1));
    }

    #[test]
    fn cluster_rejects_empty_input() {
        assert!(matches!(parse_cluster(""), Err(ParseError::FormatViolation(_))));
    }

    #[test]
    fn classification_takes_first_bracketed_integer() {
        assert_eq!(parse_classification("[2]: the goal mentions shoes").unwrap(), 2);
        assert_eq!(parse_classification("[10]: household appliance").unwrap(), 10);
        assert!(parse_classification("type 2 probably").is_err());
    }

    #[test]
    fn proposals_keep_unit_sum_untouched() {
        let parsed = parse_proposals("click[black] | 0.6\nclick[buy now] | 0.4").unwrap();
        assert_eq!(parsed[0], ("click[black]".to_string(), 0.6));
        assert_eq!(parsed[1], ("click[buy now]".to_string(), 0.4));
    }

    #[test]
    fn proposals_renormalize_deviating_sum() {
        let parsed = parse_proposals("a | 0.5\nb | 0.4").unwrap();
        assert!((parsed[0].1 - 5.0 / 9.0).abs() < 1e-12);
        assert!((parsed[1].1 - 4.0 / 9.0).abs() < 1e-12);
        let sum: f64 = parsed.iter().map(|&(_, c)| c).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn proposals_reject_all_zero_confidence() {
        assert_eq!(parse_proposals("a | 0\nb | 0").unwrap_err(), ParseError::NoValidProposal);
    }

    #[test]
    fn proposals_split_on_last_pipe() {
        let parsed = parse_proposals("click[11 women | 9 men] | 1.0").unwrap();
        assert_eq!(parsed, vec![("click[11 women | 9 men]".to_string(), 1.0)]);
    }

    #[test]
    fn proposals_merge_duplicate_actions() {
        let parsed = parse_proposals("a | 0.5\nb | 0.25\na | 0.25").unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].0, "a");
        assert!((parsed[0].1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn key_step_takes_leading_integer() {
        assert_eq!(
            parse_key_step("3: The first process clicks Prev to find another product.").unwrap(),
            3
        );
        assert_eq!(parse_key_step("1: differs at the search query.").unwrap(), 1);
        assert!(parse_key_step("they differ early").is_err());
        assert!(parse_key_step("0: zero is not a step").is_err());
    }
}
