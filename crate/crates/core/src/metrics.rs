//! Decode-trace analysis: flip proportions, stage accounting, and the
//! weight-traffic cost model.
//!
//! Everything here is a pure function over an immutable [`DecodeTrace`] or
//! a plain input struct, so results are reproducible from saved traces.

use serde::{Deserialize, Serialize};

use crate::decode::{DecodeTrace, TraceKind};
use crate::error::{Error, Result};

/// Per-boundary counts of classification changes.
///
/// Boundary `b` (for `b` in `1..groups`) sits between group `b - 1` and
/// group `b`; index `b - 1` of the count vectors belongs to it. `observed`
/// counts classifications where both sides of the boundary were valid;
/// `flipped` counts those that changed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipProfile {
    pub groups: usize,
    pub flipped: Vec<u64>,
    pub observed: Vec<u64>,
}

impl FlipProfile {
    pub fn empty(groups: usize) -> Self {
        let n = groups.saturating_sub(1);
        Self { groups, flipped: vec![0; n], observed: vec![0; n] }
    }

    pub fn boundaries(&self) -> usize {
        self.groups.saturating_sub(1)
    }

    /// Flip rate per boundary; a boundary with no observations reports 0.
    pub fn proportions(&self) -> Vec<f64> {
        self.flipped
            .iter()
            .zip(&self.observed)
            .map(|(&f, &o)| if o == 0 { 0.0 } else { f as f64 / o as f64 })
            .collect()
    }

    /// Fold another profile (e.g. from another prompt) into this one.
    pub fn merge(&mut self, other: &FlipProfile) -> Result<()> {
        if other.groups != self.groups {
            return Err(Error::ShapeMismatch {
                op: "merge_flip_profiles",
                detail: format!("{} groups vs {}", self.groups, other.groups),
            });
        }
        for (a, b) in self.flipped.iter_mut().zip(&other.flipped) {
            *a += b;
        }
        for (a, b) in self.observed.iter_mut().zip(&other.observed) {
            *a += b;
        }
        Ok(())
    }
}

/// Count, per group boundary, how often a token's classification changed
/// as it crossed the boundary.
///
/// Pipelined traces pair each slot's exit with the same token's exit one
/// group shallower on the previous stage (the same comparison the engine's
/// invalidation logic performs, recomputed here from the recorded exits).
/// Greedy traces pair adjacent group exits within each position's record.
/// Only both-valid pairs count as observations.
pub fn flip_profile(trace: &DecodeTrace) -> Result<FlipProfile> {
    if trace.records.is_empty() {
        return Err(Error::EmptyInput("flip_profile: trace has no records"));
    }
    let g = trace.groups;
    let mut profile = FlipProfile::empty(g);
    match trace.kind {
        TraceKind::Greedy => {
            for rec in &trace.records {
                for b in 1..g {
                    let before = rec.exits[b - 1];
                    let after = rec.exits[b];
                    if before >= 0 && after >= 0 {
                        profile.observed[b - 1] += 1;
                        if before != after {
                            profile.flipped[b - 1] += 1;
                        }
                    }
                }
            }
        }
        TraceKind::Pipelined => {
            for t in 1..trace.records.len() {
                let prev = &trace.records[t - 1];
                let now = &trace.records[t];
                for b in 1..g {
                    let before = prev.exits_after_invalidation[b - 1];
                    let after = now.exits[b];
                    if before >= 0 && after >= 0 {
                        profile.observed[b - 1] += 1;
                        if before != after {
                            profile.flipped[b - 1] += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(profile)
}

/// Inputs to the weight-traffic model. Traffic counts weight and
/// embedding/classifier bytes only — KV-cache and activation traffic are
/// out of scope, since the speedup argument is about reusing weights
/// already resident while several tokens are in flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModelInput {
    /// Bytes of one unique decoder layer's weights.
    pub bytes_per_layer: f64,
    /// Bytes of the embedding/classifier matrix (charged once per stage:
    /// in-flight exits share one classifier application).
    pub bytes_embedding: f64,
    pub n_unique: usize,
    pub groups: usize,
    /// Pipelined stages executed.
    pub stages: u64,
    /// Tokens committed (also the baseline's iteration count).
    pub committed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub baseline_traffic: f64,
    pub speed_traffic: f64,
    /// baseline / pipelined traffic.
    pub speedup: f64,
    /// Bound as commits per stage approaches 1; tends to `groups` as the
    /// embedding share of traffic vanishes.
    pub asymptotic_speedup: f64,
}

/// Model the traffic ratio between one-token-at-a-time decoding (all
/// `groups * n_unique` virtual layers touched per token) and pipelined
/// decoding (each stage touches each unique layer once, serving every
/// in-flight token).
pub fn cost_model(input: &CostModelInput) -> Result<CostReport> {
    if !input.bytes_per_layer.is_finite() || input.bytes_per_layer <= 0.0 {
        return Err(Error::InvalidCostInput(format!(
            "bytes_per_layer must be positive and finite, got {}",
            input.bytes_per_layer
        )));
    }
    if !input.bytes_embedding.is_finite() || input.bytes_embedding < 0.0 {
        return Err(Error::InvalidCostInput(format!(
            "bytes_embedding must be nonnegative and finite, got {}",
            input.bytes_embedding
        )));
    }
    if input.n_unique == 0 || input.groups == 0 {
        return Err(Error::InvalidCostInput("n_unique and groups must be nonzero".into()));
    }
    if input.committed == 0 {
        return Err(Error::InvalidCostInput("committed length must be nonzero".into()));
    }
    if input.stages < input.committed {
        return Err(Error::InvalidCostInput(format!(
            "stages {} < committed {}: pipelining never commits more than one token per stage",
            input.stages, input.committed
        )));
    }
    let full_depth = (input.groups * input.n_unique) as f64 * input.bytes_per_layer;
    let per_stage = input.n_unique as f64 * input.bytes_per_layer + input.bytes_embedding;
    let baseline_traffic = input.committed as f64 * (full_depth + input.bytes_embedding);
    let speed_traffic = input.stages as f64 * per_stage;
    Ok(CostReport {
        baseline_traffic,
        speed_traffic,
        speedup: baseline_traffic / speed_traffic,
        asymptotic_speedup: (full_depth + input.bytes_embedding) / per_stage,
    })
}

/// Bookkeeping totals for one decode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stages: usize,
    pub commits: usize,
    /// Stages on which a correction forced a rollback.
    pub invalidation_events: usize,
    /// In-flight tokens flushed by corrections (re-entries recount).
    pub invalidated_tokens: usize,
    /// Tokens fed into the pipeline, including re-entries after a flush.
    pub injections: usize,
    /// Tokens still in flight when decoding stopped (speculation past eos).
    pub abandoned: usize,
    /// Group passes that never served a committed token:
    /// Σ occupancy − commits · groups.
    pub wasted_token_stages: usize,
    /// Valid slots at each stage's forward pass (group passes executed).
    pub occupancy: Vec<usize>,
}

/// Tally injections, flushes, commits, and per-stage occupancy from a
/// trace, checking the conservation identity
/// `injections == commits + invalidated + abandoned`.
pub fn stage_accounting(trace: &DecodeTrace) -> Result<StageSummary> {
    if trace.records.is_empty() {
        return Err(Error::EmptyInput("stage_accounting: trace has no records"));
    }
    let g = trace.groups;
    let (occupancy, invalidated_tokens, invalidation_events, injections, abandoned) =
        match trace.kind {
            TraceKind::Greedy => {
                // One record per position, each a full-depth pass.
                let occ = vec![g; trace.records.len()];
                (occ, 0usize, 0usize, trace.records.len(), 0usize)
            }
            TraceKind::Pipelined => {
                let mut occ = Vec::with_capacity(trace.records.len());
                let mut flushed = 0usize;
                let mut events = 0usize;
                // Iteration 0 enters at bootstrap, before any record.
                let mut injections = 1usize;
                for rec in &trace.records {
                    occ.push(rec.iteration_indices.iter().filter(|&&i| i >= 0).count());
                    flushed += rec.iteration_indices[..rec.last_invalid]
                        .iter()
                        .filter(|&&i| i >= 0)
                        .count();
                    if rec.rolled_back_from.is_some() {
                        events += 1;
                    }
                    if rec.injected.is_some() {
                        injections += 1;
                    }
                }
                let abandoned =
                    trace.final_iteration_indices.iter().filter(|&&i| i >= 0).count();
                (occ, flushed, events, injections, abandoned)
            }
        };
    let total_passes: usize = occupancy.iter().sum();
    let committed_passes = trace.sequence.len() * g;
    let wasted = total_passes.checked_sub(committed_passes).ok_or_else(|| {
        Error::StateCorrupt(format!(
            "trace records {total_passes} group passes but {} commits need {committed_passes}",
            trace.sequence.len()
        ))
    })?;
    if injections != trace.sequence.len() + invalidated_tokens + abandoned {
        return Err(Error::StateCorrupt(format!(
            "conservation violated: {injections} injections vs {} commits + \
             {invalidated_tokens} flushed + {abandoned} abandoned",
            trace.sequence.len()
        )));
    }
    Ok(StageSummary {
        stages: trace.stages,
        commits: trace.sequence.len(),
        invalidation_events,
        invalidated_tokens,
        injections,
        abandoned,
        wasted_token_stages: wasted,
        occupancy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{decode_greedy, decode_speed};
    use crate::model::TokenId;
    use crate::scripted::{random_flip_script, scripted_config, FlipScript, ScriptedModel};
    use proptest::prelude::*;

    fn scripted(rows: Vec<Vec<TokenId>>, max_len: usize) -> ScriptedModel {
        let g = rows[0].len();
        let script = FlipScript::new(rows, g, 16).unwrap();
        let cfg = scripted_config(g, 16, max_len, 0, 1, 2).unwrap();
        ScriptedModel::new(cfg, script).unwrap()
    }

    #[test]
    fn perfect_prediction_profiles_all_zero() {
        let m = scripted(vec![vec![5, 5, 5], vec![7, 7, 7], vec![9, 9, 9]], 3);
        let (_, trace) = decode_speed(&m, &[]).unwrap();
        let p = flip_profile(&trace).unwrap();
        assert_eq!(p.proportions(), vec![0.0, 0.0]);
        assert!(p.observed.iter().all(|&o| o > 0));
    }

    #[test]
    fn known_flip_counts_give_exact_proportion() {
        // Four iterations; iterations 1 and 3 flip at boundary 1 only.
        let rows = vec![
            vec![5, 5, 5],
            vec![4, 7, 7],
            vec![6, 6, 6],
            vec![3, 8, 8],
        ];
        let m = scripted(rows, 4);
        let (_, trace) = decode_speed(&m, &[]).unwrap();
        let p = flip_profile(&trace).unwrap();
        // Boundary 1: re-entries repeat the same row, so flips recount, but
        // every flip event the engine saw must be in the profile's count.
        let engine_flips: Vec<u64> = (1..3)
            .map(|b| {
                trace
                    .records
                    .iter()
                    .flat_map(|r| &r.flips)
                    .filter(|f| f.slot == b)
                    .count() as u64
            })
            .collect();
        assert_eq!(p.flipped, engine_flips);
        assert_eq!(p.flipped[1], 0); // boundary 2 never flips
        assert!(p.flipped[0] >= 2);
    }

    #[test]
    fn greedy_profile_counts_within_position_changes() {
        let rows = vec![vec![4, 7, 7], vec![6, 6, 6], vec![3, 8, 8]];
        let m = scripted(rows.clone(), 3);
        let (_, trace) = decode_greedy(&m, &[]).unwrap();
        let p = flip_profile(&trace).unwrap();
        assert_eq!(p.observed, vec![3, 3]);
        assert_eq!(p.flipped, vec![2, 0]);
        // Oracle: recount straight from the script rows.
        let flips_b1 = rows.iter().filter(|r| r[0] != r[1]).count() as u64;
        assert_eq!(p.flipped[0], flips_b1);
    }

    #[test]
    fn pipelined_flips_match_engine_events_on_random_scripts() {
        let cfg = scripted_config(4, 16, 48, 0, 1, 2).unwrap();
        for seed in 0..10 {
            let script =
                random_flip_script(seed, 48, &cfg, &[0.3, 0.15, 0.05]).unwrap();
            let m = ScriptedModel::new(cfg.clone(), script).unwrap();
            let (_, trace) = decode_speed(&m, &[]).unwrap();
            let p = flip_profile(&trace).unwrap();
            for b in 1..4 {
                let engine = trace
                    .records
                    .iter()
                    .flat_map(|r| &r.flips)
                    .filter(|f| f.slot == b)
                    .count() as u64;
                assert_eq!(p.flipped[b - 1], engine, "boundary {b}, seed {seed}");
            }
            // Deeper boundaries can't be observed more often than shallow
            // ones: every deep crossing implies the shallow ones happened.
            for w in p.observed.windows(2) {
                assert!(w[0] >= w[1], "observed not nonincreasing: {:?}", p.observed);
            }
        }
    }

    #[test]
    fn empty_trace_rejected() {
        let m = scripted(vec![vec![5, 5, 5]], 1);
        let (_, mut trace) = decode_speed(&m, &[]).unwrap();
        trace.records.clear();
        assert!(matches!(flip_profile(&trace), Err(Error::EmptyInput(_))));
        assert!(matches!(stage_accounting(&trace), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn merge_accumulates_counts() {
        let mut a = FlipProfile { groups: 3, flipped: vec![1, 0], observed: vec![4, 2] };
        let b = FlipProfile { groups: 3, flipped: vec![2, 1], observed: vec![6, 3] };
        a.merge(&b).unwrap();
        assert_eq!(a.flipped, vec![3, 1]);
        assert_eq!(a.observed, vec![10, 5]);
        let c = FlipProfile::empty(2);
        assert!(a.merge(&c).is_err());
    }

    #[test]
    fn proportions_handle_unobserved_boundaries() {
        let p = FlipProfile { groups: 3, flipped: vec![1, 0], observed: vec![4, 0] };
        assert_eq!(p.proportions(), vec![0.25, 0.0]);
    }

    #[test]
    fn cost_examples_from_the_formulas() {
        // S = L with a free classifier: speedup equals the group count.
        let r = cost_model(&CostModelInput {
            bytes_per_layer: 1.0e6,
            bytes_embedding: 0.0,
            n_unique: 4,
            groups: 3,
            stages: 1000,
            committed: 1000,
        })
        .unwrap();
        assert!((r.speedup - 3.0).abs() < 1e-12);
        assert!((r.asymptotic_speedup - 3.0).abs() < 1e-12);

        // Short sequence pays the fill/drain penalty: G=3, L=5, S=7.
        let r = cost_model(&CostModelInput {
            bytes_per_layer: 1.0,
            bytes_embedding: 0.0,
            n_unique: 1,
            groups: 3,
            stages: 7,
            committed: 5,
        })
        .unwrap();
        assert!((r.speedup - 15.0 / 7.0).abs() < 1e-12);

        // A heavy classifier drags the bound below the group count.
        let r = cost_model(&CostModelInput {
            bytes_per_layer: 1.0,
            bytes_embedding: 1.0,
            n_unique: 2,
            groups: 3,
            stages: 10,
            committed: 10,
        })
        .unwrap();
        assert!((r.asymptotic_speedup - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cost_rejects_bad_inputs() {
        let good = CostModelInput {
            bytes_per_layer: 1.0,
            bytes_embedding: 0.0,
            n_unique: 1,
            groups: 2,
            stages: 4,
            committed: 3,
        };
        let mut bad = good.clone();
        bad.bytes_per_layer = 0.0;
        assert!(cost_model(&bad).is_err());
        bad = good.clone();
        bad.bytes_embedding = -1.0;
        assert!(cost_model(&bad).is_err());
        bad = good.clone();
        bad.stages = 2; // fewer stages than commits
        assert!(cost_model(&bad).is_err());
        bad = good.clone();
        bad.committed = 0;
        assert!(cost_model(&bad).is_err());
        assert!(cost_model(&good).is_ok());
    }

    #[test]
    fn accounting_perfect_prediction_ramps_and_drains() {
        let rows: Vec<Vec<TokenId>> = (0..5).map(|p| vec![3 + p as TokenId % 4; 3]).collect();
        let m = scripted(rows, 5);
        let (_, trace) = decode_speed(&m, &[]).unwrap();
        let s = stage_accounting(&trace).unwrap();
        assert_eq!(s.occupancy, vec![1, 2, 3, 3, 3, 2, 1]);
        assert_eq!(s.stages, 7);
        assert_eq!(s.commits, 5);
        assert_eq!(s.invalidation_events, 0);
        assert_eq!(s.invalidated_tokens, 0);
        assert_eq!(s.wasted_token_stages, 0);
        assert_eq!(s.injections, 5);
        assert_eq!(s.abandoned, 0);
    }

    #[test]
    fn accounting_charges_flushed_passes_as_waste() {
        // Iteration 0 corrects itself at boundary 1; iteration 1's first
        // entry is flushed after one group pass.
        let m = scripted(vec![vec![4, 7], vec![9, 9]], 2);
        let (_, trace) = decode_speed(&m, &[]).unwrap();
        let s = stage_accounting(&trace).unwrap();
        assert_eq!(s.commits, 2);
        assert_eq!(s.invalidated_tokens, 1);
        assert_eq!(s.wasted_token_stages, 1);
        assert_eq!(s.injections, 3); // bootstrap + iter 1 twice
        assert_eq!(s.abandoned, 0);
    }

    #[test]
    fn accounting_counts_speculation_abandoned_at_eos() {
        // eos settles at iteration 0 but speculation has already launched
        // iteration 1 down the pipe; it is abandoned when decoding stops.
        let m = scripted(vec![vec![1, 1], vec![9, 9]], 4);
        let (seq, trace) = decode_speed(&m, &[]).unwrap();
        assert_eq!(seq, vec![1]);
        let s = stage_accounting(&trace).unwrap();
        assert_eq!(s.commits, 1);
        assert!(s.abandoned >= 1, "summary: {s:?}");
        assert_eq!(s.injections, s.commits + s.invalidated_tokens + s.abandoned);
    }

    #[test]
    fn greedy_accounting_has_no_waste() {
        let m = scripted(vec![vec![4, 7, 7], vec![6, 6, 6]], 2);
        let (_, trace) = decode_greedy(&m, &[]).unwrap();
        let s = stage_accounting(&trace).unwrap();
        assert_eq!(s.occupancy, vec![3, 3]);
        assert_eq!(s.wasted_token_stages, 0);
        assert_eq!(s.injections, 2);
    }

    proptest! {
        #[test]
        fn speedup_decreases_as_stages_grow(
            stages in 10u64..200,
            committed in 1u64..10,
            emb in 0.0f64..4.0,
        ) {
            let base = CostModelInput {
                bytes_per_layer: 1.0,
                bytes_embedding: emb,
                n_unique: 2,
                groups: 3,
                stages,
                committed,
            };
            let mut deeper = base.clone();
            deeper.stages += 1;
            let a = cost_model(&base).unwrap();
            let b = cost_model(&deeper).unwrap();
            prop_assert!(b.speedup < a.speedup);
            prop_assert!(a.speedup <= a.asymptotic_speedup + 1e-12);
        }

        #[test]
        fn heavier_classifier_lowers_the_bound(emb in 0.0f64..8.0) {
            let mk = |e: f64| CostModelInput {
                bytes_per_layer: 1.0,
                bytes_embedding: e,
                n_unique: 2,
                groups: 3,
                stages: 100,
                committed: 100,
            };
            let a = cost_model(&mk(emb)).unwrap();
            let b = cost_model(&mk(emb + 0.5)).unwrap();
            prop_assert!(b.asymptotic_speedup < a.asymptotic_speedup);
            // And it never drops below break-even.
            prop_assert!(b.asymptotic_speedup >= 1.0);
        }

        #[test]
        fn conservation_holds_on_random_scripts(seed in 0u64..40) {
            let cfg = scripted_config(3, 16, 24, 0, 1, 2).unwrap();
            let script = random_flip_script(seed, 24, &cfg, &[0.35, 0.1]).unwrap();
            let m = ScriptedModel::new(cfg, script).unwrap();
            let (_, trace) = decode_speed(&m, &[]).unwrap();
            let s = stage_accounting(&trace).unwrap();
            prop_assert_eq!(s.injections, s.commits + s.invalidated_tokens + s.abandoned);
            prop_assert_eq!(s.invalidation_events, trace.invalidations);
            let total: usize = s.occupancy.iter().sum();
            prop_assert_eq!(s.wasted_token_stages, total - s.commits * 3);
        }
    }
}
