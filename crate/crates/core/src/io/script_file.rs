//! Flip-script text format.
//!
//! One line of whitespace-separated token ids per iteration (the group-exit
//! classifications), `#` comments, and optional predecessor-keyed override
//! lines:
//!
//! ```text
//! # three groups
//! 5 5 5
//! 4 7 7
//! @override 1 0 4 11
//! ```
//!
//! The override reads: iteration 1's group-0 exit classifies as 11 when the
//! iteration was started from token 4.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::TokenId;
use crate::scripted::FlipScript;

fn bad(path: &str, detail: String) -> Error {
    Error::Format { kind: "script", path: path.to_string(), detail }
}

/// Render a script in the text format (deterministic: overrides sorted).
pub fn script_to_string(script: &FlipScript) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "# flip script: {} iterations x {} groups, vocab {}\n",
        script.len(),
        script.groups(),
        script.vocab_size()
    ));
    for row in script.rows() {
        let cells: Vec<String> = row.iter().map(|t| t.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    for (iteration, group, pred, token) in script.overrides_sorted() {
        out.push_str(&format!("@override {iteration} {group} {pred} {token}\n"));
    }
    out
}

/// Parse the text format. `vocab_size` bounds every id; the group count is
/// inferred from the first row.
pub fn parse_script(text: &str, vocab_size: usize, path: &str) -> Result<FlipScript> {
    let mut rows: Vec<Vec<TokenId>> = Vec::new();
    let mut overrides: Vec<(usize, usize, TokenId, TokenId)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let n = lineno + 1;
        if let Some(rest) = line.strip_prefix("@override") {
            let fields: Vec<&str> = rest.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(bad(
                    path,
                    format!("line {n}: @override takes iteration, group, predecessor, token"),
                ));
            }
            let iteration: usize = fields[0]
                .parse()
                .map_err(|_| bad(path, format!("line {n}: bad iteration {:?}", fields[0])))?;
            let group: usize = fields[1]
                .parse()
                .map_err(|_| bad(path, format!("line {n}: bad group {:?}", fields[1])))?;
            let pred: TokenId = fields[2]
                .parse()
                .map_err(|_| bad(path, format!("line {n}: bad predecessor {:?}", fields[2])))?;
            let token: TokenId = fields[3]
                .parse()
                .map_err(|_| bad(path, format!("line {n}: bad token {:?}", fields[3])))?;
            overrides.push((iteration, group, pred, token));
            continue;
        }
        let row: Vec<TokenId> = line
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| bad(path, format!("line {n}: bad token {f:?}"))))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(bad(path, "no script rows".into()));
    }
    let groups = rows[0].len();
    let mut script = FlipScript::new(rows, groups, vocab_size)
        .map_err(|e| bad(path, e.to_string()))?;
    for (iteration, group, pred, token) in overrides {
        script
            .add_override(iteration, group, pred, token)
            .map_err(|e| bad(path, e.to_string()))?;
    }
    Ok(script)
}

pub fn save_script(script: &FlipScript, path: &Path) -> Result<()> {
    fs::write(path, script_to_string(script))
        .map_err(|e| Error::File(path.display().to_string(), e))
}

pub fn load_script(path: &Path, vocab_size: usize) -> Result<FlipScript> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::File(path.display().to_string(), e))?;
    parse_script(&text, vocab_size, &path.display().to_string())
}
