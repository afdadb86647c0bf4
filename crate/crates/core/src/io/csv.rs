//! CSV emission (and parsing, so files round-trip) for flip profiles and
//! cost-model sweeps.
//!
//! Floats are written with Rust's shortest-round-trip formatting except the
//! derived `proportion` column, which is fixed to six decimals for stable
//! plotting; the integer columns it derives from carry the exact data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::FlipProfile;

fn bad(path: &str, detail: String) -> Error {
    Error::Format { kind: "csv", path: path.to_string(), detail }
}

pub const FLIP_CSV_HEADER: &str = "boundary,flipped,observed,proportion";

/// One line per group boundary, 1-based as in the compare that defines it.
pub fn flip_profile_csv(profile: &FlipProfile) -> String {
    let mut out = String::from(FLIP_CSV_HEADER);
    out.push('\n');
    let props = profile.proportions();
    let rows = profile.flipped.iter().zip(&profile.observed).zip(&props);
    for (b, ((&flipped, &observed), &proportion)) in rows.enumerate() {
        out.push_str(&format!("{},{flipped},{observed},{proportion:.6}\n", b + 1));
    }
    out
}

/// Rebuild a profile from its CSV. The `proportion` column is derived and
/// only checked for rough consistency.
pub fn parse_flip_profile_csv(text: &str, path: &str) -> Result<FlipProfile> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == FLIP_CSV_HEADER => {}
        other => return Err(bad(path, format!("bad header: {other:?}"))),
    }
    let mut flipped = Vec::new();
    let mut observed = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad(path, format!("line {n}: expected 4 fields")));
        }
        let boundary: usize =
            fields[0].parse().map_err(|_| bad(path, format!("line {n}: bad boundary")))?;
        if boundary != flipped.len() + 1 {
            return Err(bad(path, format!("line {n}: boundary {boundary} out of order")));
        }
        let f: u64 =
            fields[1].parse().map_err(|_| bad(path, format!("line {n}: bad flip count")))?;
        let o: u64 =
            fields[2].parse().map_err(|_| bad(path, format!("line {n}: bad observed count")))?;
        let p: f64 =
            fields[3].parse().map_err(|_| bad(path, format!("line {n}: bad proportion")))?;
        let expect = if o == 0 { 0.0 } else { f as f64 / o as f64 };
        if (p - expect).abs() > 5e-7 {
            return Err(bad(
                path,
                format!("line {n}: proportion {p} inconsistent with {f}/{o}"),
            ));
        }
        flipped.push(f);
        observed.push(o);
    }
    Ok(FlipProfile { groups: flipped.len() + 1, flipped, observed })
}

/// One cost-model sweep point: a sharing shape, a sequence length, an
/// embedding-to-layer byte ratio, and a stage-count scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub n_unique: usize,
    pub groups: usize,
    pub committed: u64,
    pub stages: u64,
    /// bytes_embedding / bytes_per_layer.
    pub emb_ratio: f64,
    /// How `stages` was chosen: `ideal` (S = L), `perfect` (S = L + G − 1),
    /// or `rate:<p>` (simulated with boundary flip probability p).
    pub scenario: String,
    pub speedup: f64,
    pub asymptotic: f64,
}

pub const COST_CSV_HEADER: &str =
    "n_unique,groups,committed,stages,emb_ratio,scenario,speedup,asymptotic";

pub fn cost_csv(rows: &[CostRow]) -> Result<String> {
    let mut out = String::from(COST_CSV_HEADER);
    out.push('\n');
    for row in rows {
        if row.scenario.contains(',') || row.scenario.contains('\n') {
            return Err(Error::InvalidCostInput(format!(
                "scenario {:?} would break the CSV",
                row.scenario
            )));
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.n_unique,
            row.groups,
            row.committed,
            row.stages,
            row.emb_ratio,
            row.scenario,
            row.speedup,
            row.asymptotic
        ));
    }
    Ok(out)
}

pub fn parse_cost_csv(text: &str, path: &str) -> Result<Vec<CostRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == COST_CSV_HEADER => {}
        other => return Err(bad(path, format!("bad header: {other:?}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(bad(path, format!("line {n}: expected 8 fields")));
        }
        let field = |j: usize, name: &str| -> Result<&str> {
            fields.get(j).copied().ok_or_else(|| bad(path, format!("line {n}: missing {name}")))
        };
        macro_rules! num {
            ($j:expr, $name:expr, $ty:ty) => {
                field($j, $name)?
                    .parse::<$ty>()
                    .map_err(|_| bad(path, format!("line {n}: bad {}", $name)))?
            };
        }
        rows.push(CostRow {
            n_unique: num!(0, "n_unique", usize),
            groups: num!(1, "groups", usize),
            committed: num!(2, "committed", u64),
            stages: num!(3, "stages", u64),
            emb_ratio: num!(4, "emb_ratio", f64),
            scenario: field(5, "scenario")?.to_string(),
            speedup: num!(6, "speedup", f64),
            asymptotic: num!(7, "asymptotic", f64),
        });
    }
    Ok(rows)
}

/// Write any rendered text artifact, mapping failures to the I/O error.
pub fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::File(path.display().to_string(), e))
}
