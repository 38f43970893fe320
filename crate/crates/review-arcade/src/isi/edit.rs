//! Parsing of model-proposed edits and their application to a paper body.
//!
//! Three output formats are accepted: git-style/unified diffs (`-`/`+` or
//! `---`/`+++` marker lines), the arrow form `[original] -> [new]`, and
//! structured JSON with `exact_original_text`/`new_text` pairs. The selected
//! edit action is the first bracketed taxonomy name (or the JSON
//! `selected_action` field) and must belong to the active setting's taxonomy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::EditType;

#[derive(Debug, Error, PartialEq)]
pub enum EditError {
    #[error("no parseable hunk in edit output")]
    NoParseableHunk,
    #[error("no edit action found in output")]
    ActionMissing,
    #[error("action '{action}' is not allowed in this setting")]
    DisallowedAction { action: String },
    #[error("hunk {index}: original text not found in body")]
    OriginalNotFound { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditFormat {
    GitDiff,
    Arrow,
    ExactPair,
}

/// One replacement: `original` is located in the body and replaced by `new`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hunk {
    pub original: String,
    pub new: String,
}

/// A parsed edit: one selected action and an ordered hunk list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditProposal {
    pub selected_action: String,
    pub hunks: Vec<Hunk>,
    pub format: EditFormat,
    pub raw: String,
}

fn is_file_header(line: &str) -> bool {
    line == "---"
        || line == "+++"
        || line.starts_with("--- a/")
        || line.starts_with("+++ b/")
        || line.starts_with("--- /dev/null")
        || line.starts_with("+++ /dev/null")
}

enum DiffLine<'a> {
    Minus(&'a str),
    Plus(&'a str),
    Other,
}

fn classify_line(line: &str) -> DiffLine<'_> {
    if is_file_header(line) || line.starts_with("@@") {
        return DiffLine::Other;
    }
    if let Some(rest) = line.strip_prefix("---") {
        return DiffLine::Minus(rest.strip_prefix(' ').unwrap_or(rest));
    }
    if let Some(rest) = line.strip_prefix("+++") {
        return DiffLine::Plus(rest.strip_prefix(' ').unwrap_or(rest));
    }
    if let Some(rest) = line.strip_prefix('-') {
        return DiffLine::Minus(rest);
    }
    if let Some(rest) = line.strip_prefix('+') {
        return DiffLine::Plus(rest);
    }
    DiffLine::Other
}

/// Group consecutive minus lines followed by consecutive plus lines into
/// hunks. Context and header lines close the current hunk.
fn parse_diff_hunks(text: &str) -> Vec<Hunk> {
    let mut hunks = Vec::new();
    let mut minus: Vec<&str> = Vec::new();
    let mut plus: Vec<&str> = Vec::new();
    let flush = |minus: &mut Vec<&str>, plus: &mut Vec<&str>, hunks: &mut Vec<Hunk>| {
        if !minus.is_empty() || !plus.is_empty() {
            hunks.push(Hunk {
                original: minus.join("\n"),
                new: plus.join("\n"),
            });
            minus.clear();
            plus.clear();
        }
    };
    for line in text.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        match classify_line(line) {
            DiffLine::Minus(content) => {
                // A minus after plus lines starts a new hunk.
                if !plus.is_empty() {
                    flush(&mut minus, &mut plus, &mut hunks);
                }
                minus.push(content);
            }
            DiffLine::Plus(content) => plus.push(content),
            DiffLine::Other => flush(&mut minus, &mut plus, &mut hunks),
        }
    }
    flush(&mut minus, &mut plus, &mut hunks);
    hunks
}

/// Bracketed spans `[...]` with their byte ranges, non-nested scan.
fn bracketed_spans(text: &str) -> Vec<(usize, usize, &str)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            if let Some(close) = text[i + 1..].find(']') {
                let end = i + 1 + close;
                spans.push((i, end + 1, &text[i + 1..end]));
                i = end + 1;
                continue;
            }
        }
        i += 1;
    }
    spans
}

/// Arrow-form hunks `[original] -> [new]`; returns hunks plus the byte spans
/// of the brackets consumed, so action extraction can skip them.
fn parse_arrow_hunks(text: &str) -> (Vec<Hunk>, Vec<(usize, usize)>) {
    let spans = bracketed_spans(text);
    let mut hunks = Vec::new();
    let mut consumed = Vec::new();
    let mut i = 0;
    while i + 1 < spans.len() {
        let (_, left_end, left) = spans[i];
        let (right_start, right_end, right) = spans[i + 1];
        let between = &text[left_end..right_start];
        if between.trim() == "->" {
            hunks.push(Hunk {
                original: left.to_string(),
                new: right.to_string(),
            });
            consumed.push((spans[i].0, left_end));
            consumed.push((right_start, right_end));
            i += 2;
        } else {
            i += 1;
        }
    }
    (hunks, consumed)
}

fn string_field(value: &serde_json::Value, names: &[&str]) -> Option<String> {
    let object = value.as_object()?;
    for (k, v) in object {
        if names.iter().any(|n| k.eq_ignore_ascii_case(n)) {
            if let Some(s) = v.as_str() {
                return Some(s.to_string());
            }
        }
    }
    None
}

fn pair_from_object(value: &serde_json::Value) -> Option<Hunk> {
    let original = string_field(value, &["exact_original_text", "original_text", "original"])?;
    let new = string_field(value, &["new_text", "new", "replacement"])?;
    Some(Hunk { original, new })
}

/// Structured-pair parse: a JSON object with `selected_action` and either
/// flat text fields or an array of pair objects.
fn parse_json_edit(text: &str) -> Option<(Option<String>, Vec<Hunk>)> {
    let object = crate::review::extract_first_object(text)?;
    let action = string_field(&object, &["selected_action", "action"]);
    let mut hunks = Vec::new();
    if let Some(h) = pair_from_object(&object) {
        hunks.push(h);
    }
    if let Some(map) = object.as_object() {
        for (k, v) in map {
            if ["edits", "changes", "hunks", "diffs"]
                .iter()
                .any(|n| k.eq_ignore_ascii_case(n))
            {
                if let Some(items) = v.as_array() {
                    hunks.extend(items.iter().filter_map(pair_from_object));
                }
            }
        }
    }
    if action.is_none() && hunks.is_empty() {
        return None;
    }
    Some((action, hunks))
}

/// Detect and parse an edit in any of the three formats, enforcing that the
/// selected action belongs to `allowed`.
pub fn parse_edit(text: &str, allowed: &[&EditType]) -> Result<EditProposal, EditError> {
    let (action, hunks, format) = if let Some((action, hunks)) = parse_json_edit(text) {
        (action, hunks, EditFormat::ExactPair)
    } else {
        let (arrow_hunks, consumed) = parse_arrow_hunks(text);
        let diff_hunks = parse_diff_hunks(text);
        // Prefer the richer structure; diff markers win when both appear
        // because arrow brackets often occur inside prose.
        let (hunks, format) = if !diff_hunks.is_empty() {
            (diff_hunks, EditFormat::GitDiff)
        } else {
            (arrow_hunks, EditFormat::Arrow)
        };
        let action = bracketed_spans(text)
            .into_iter()
            .filter(|(s, e, _)| {
                format != EditFormat::Arrow || !consumed.contains(&(*s, *e))
            })
            .map(|(_, _, name)| name.trim())
            .find(|name| looks_like_action(name))
            .map(str::to_string);
        (action, hunks, format)
    };

    if hunks.is_empty() {
        return Err(EditError::NoParseableHunk);
    }
    let action = action.ok_or(EditError::ActionMissing)?;
    if !allowed.iter().any(|t| t.name == action) {
        return Err(EditError::DisallowedAction { action });
    }
    Ok(EditProposal {
        selected_action: action,
        hunks,
        format,
        raw: text.to_string(),
    })
}

/// Heuristic for action-name brackets: short, single-line, hyphenated words
/// rather than edited text.
fn looks_like_action(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && !name.contains('\n')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Collapse whitespace runs to single spaces, recording for every normalized
/// char the byte offset it came from.
fn normalize_with_map(text: &str) -> (String, Vec<usize>) {
    let mut norm = String::with_capacity(text.len());
    let mut map = Vec::with_capacity(text.len());
    let mut in_ws = false;
    for (offset, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if !in_ws && !norm.is_empty() {
                norm.push(' ');
                map.push(offset);
            }
            in_ws = true;
        } else {
            norm.push(ch);
            map.push(offset);
            in_ws = false;
        }
    }
    // Trailing collapsed space maps to the run start; drop it so matches
    // never end on padding.
    if norm.ends_with(' ') {
        norm.pop();
        map.pop();
    }
    (norm, map)
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Byte range of the first occurrence of `needle` in `body`, matching first
/// exactly and then with whitespace runs collapsed.
fn locate(body: &str, needle: &str) -> Option<(usize, usize)> {
    if needle.is_empty() {
        return None;
    }
    if let Some(start) = body.find(needle) {
        return Some((start, start + needle.len()));
    }
    let needle_norm = normalize(needle);
    if needle_norm.is_empty() {
        return None;
    }
    let (body_norm, map) = normalize_with_map(body);
    let norm_start = body_norm.find(&needle_norm)?;
    let norm_end = norm_start + needle_norm.len();
    let start = map[norm_start];
    // End of the last matched char in the original body.
    let last_char_start = map[norm_end - 1];
    let end = body[last_char_start..]
        .chars()
        .next()
        .map(|c| last_char_start + c.len_utf8())
        .unwrap_or(body.len());
    Some((start, end))
}

/// Apply every hunk in order to `body`. Each hunk's original text is located
/// first by exact substring match, then by whitespace-normalized match, and
/// its first occurrence replaced. Any unlocatable hunk fails the whole
/// application and the caller keeps the body unchanged.
pub fn apply_edit(body: &str, edit: &EditProposal) -> Result<String, EditError> {
    let mut result = body.to_string();
    for (index, hunk) in edit.hunks.iter().enumerate() {
        let (start, end) =
            locate(&result, &hunk.original).ok_or(EditError::OriginalNotFound { index })?;
        result.replace_range(start..end, &hunk.new);
    }
    Ok(result)
}
