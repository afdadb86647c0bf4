//! Decode-trace file format: JSON lines.
//!
//! Line 1 carries the trace-level fields (kind, groups, totals, committed
//! sequence); each following line is one stage record. JSONL keeps huge
//! traces streamable and diffs line-per-stage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::{DecodeTrace, StageRecord, TraceKind};
use crate::error::{Error, Result};
use crate::model::TokenId;

#[derive(Serialize, Deserialize)]
struct TraceMeta {
    kind: TraceKind,
    groups: usize,
    prefix_len: usize,
    sequence: Vec<TokenId>,
    stages: usize,
    commits: usize,
    invalidations: usize,
    final_iteration_indices: Vec<i64>,
}

fn bad(path: &str, detail: String) -> Error {
    Error::Format { kind: "trace", path: path.to_string(), detail }
}

pub fn trace_to_string(trace: &DecodeTrace) -> Result<String> {
    let meta = TraceMeta {
        kind: trace.kind,
        groups: trace.groups,
        prefix_len: trace.prefix_len,
        sequence: trace.sequence.clone(),
        stages: trace.stages,
        commits: trace.commits,
        invalidations: trace.invalidations,
        final_iteration_indices: trace.final_iteration_indices.clone(),
    };
    let enc = |detail: String| bad("<memory>", detail);
    let mut out = serde_json::to_string(&meta).map_err(|e| enc(e.to_string()))?;
    out.push('\n');
    for rec in &trace.records {
        out.push_str(&serde_json::to_string(rec).map_err(|e| enc(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_trace(text: &str, path: &str) -> Result<DecodeTrace> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| bad(path, "empty trace file".into()))?;
    let meta: TraceMeta =
        serde_json::from_str(first).map_err(|e| bad(path, format!("meta line: {e}")))?;
    let mut records: Vec<StageRecord> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line)
            .map_err(|e| bad(path, format!("record line {}: {e}", i + 2)))?;
        records.push(rec);
    }
    if meta.stages != records.len() {
        return Err(bad(
            path,
            format!("meta says {} stages but {} records follow", meta.stages, records.len()),
        ));
    }
    Ok(DecodeTrace {
        kind: meta.kind,
        groups: meta.groups,
        prefix_len: meta.prefix_len,
        records,
        sequence: meta.sequence,
        stages: meta.stages,
        commits: meta.commits,
        invalidations: meta.invalidations,
        final_iteration_indices: meta.final_iteration_indices,
    })
}

pub fn save_trace(trace: &DecodeTrace, path: &Path) -> Result<()> {
    let text = trace_to_string(trace)?;
    fs::write(path, text).map_err(|e| Error::File(path.display().to_string(), e))
}

pub fn load_trace(path: &Path) -> Result<DecodeTrace> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::File(path.display().to_string(), e))?;
    parse_trace(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{decode_greedy, decode_speed};
    use crate::scripted::{random_flip_script, scripted_config, ScriptedModel};

    fn traces() -> (DecodeTrace, DecodeTrace) {
        let cfg = scripted_config(3, 16, 12, 0, 1, 2).unwrap();
        let script = random_flip_script(5, 12, &cfg, &[0.4, 0.2]).unwrap();
        let m = ScriptedModel::new(cfg, script).unwrap();
        let (_, speed) = decode_speed(&m, &[3, 4]).unwrap();
        let (_, greedy) = decode_greedy(&m, &[3, 4]).unwrap();
        (speed, greedy)
    }

    #[test]
    fn round_trips_both_kinds() {
        let (speed, greedy) = traces();
        for trace in [speed, greedy] {
            let text = trace_to_string(&trace).unwrap();
            let back = parse_trace(&text, "test").unwrap();
            assert_eq!(back, trace);
            assert_eq!(trace_to_string(&back).unwrap(), text);
        }
    }

    #[test]
    fn round_trips_through_a_file() {
        let (speed, _) = traces();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trace");
        save_trace(&speed, &path).unwrap();
        assert_eq!(load_trace(&path).unwrap(), speed);
    }

    #[test]
    fn rejects_garbage_and_inconsistency() {
        assert!(parse_trace("", "t").is_err());
        assert!(parse_trace("not json\n", "t").is_err());
        let (speed, _) = traces();
        let text = trace_to_string(&speed).unwrap();
        // Drop the last record: meta/record count mismatch.
        let cut = text.trim_end().rfind('\n').unwrap();
        assert!(parse_trace(&text[..cut + 1], "t").is_err());
    }
}
