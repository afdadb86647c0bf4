//! Cache-splice audit: after every stage — and in particular after every
//! rollback — the live KV cache must be bit-identical to one rebuilt from
//! scratch out of the committed history plus the surviving in-flight work.

mod common;

use common::rebuild::rebuild_cache;
use specpipe::decode::{decode_speed_observed, DecoderModel};
use specpipe::model::{tokenize_bytes, NeuralModel, TokenId};
use specpipe::scripted::{random_flip_script, scripted_config, ScriptedModel};
use specpipe::ShareConfig;

/// Runs a full decode, rebuilding and comparing the cache at every stage.
/// Returns how many rollback stages were audited.
fn audit_decode<M: DecoderModel>(model: &M, prompt: &[TokenId]) -> usize {
    let mut rollbacks = 0usize;
    let (_seq, _trace) = decode_speed_observed(model, prompt, |view| {
        let rebuilt = rebuild_cache(
            model,
            prompt,
            view.committed,
            view.iteration_indices,
            view.contents,
        )?;
        assert!(
            rebuilt.bits_eq(view.cache),
            "stage {} (rollback from {:?}): live cache diverged from rebuild",
            view.record.stage,
            view.record.rolled_back_from,
        );
        if view.record.rolled_back_from.is_some() {
            rollbacks += 1;
        }
        Ok(())
    })
    .expect("decode failed under observation");
    rollbacks
}

#[test]
fn perfect_run_cache_matches_rebuild_at_every_stage() {
    // No rollbacks at all: validates the rebuild oracle itself on the
    // easy path before it is trusted to judge rollbacks.
    let cfg = scripted_config(3, 16, 6, 0, 1, 2).unwrap();
    let script = random_flip_script(11, 6, &cfg, &[0.0, 0.0]).unwrap();
    let m = ScriptedModel::new(cfg, script).unwrap();
    assert_eq!(audit_decode(&m, &[]), 0);
}

#[test]
fn scripted_rollbacks_splice_cleanly() {
    let mut audited = 0usize;
    for seed in 0..24u64 {
        let groups = 2 + (seed as usize % 3); // 2..=4
        let len = 3 + (seed as usize % 6); // 3..=8
        let cfg = scripted_config(groups, 16, len, 0, 1, 2).unwrap();
        let probs = vec![0.5; groups - 1];
        let script = random_flip_script(seed, len, &cfg, &probs).unwrap();
        let m = ScriptedModel::new(cfg, script).unwrap();
        audited += audit_decode(&m, &[]);
    }
    assert!(audited >= 10, "only {audited} rollbacks exercised; flip harder");
}

#[test]
fn scripted_rollbacks_splice_cleanly_with_prompts() {
    let mut audited = 0usize;
    for seed in 100..112u64 {
        let cfg = scripted_config(4, 16, 6, 0, 1, 2).unwrap();
        let script = random_flip_script(seed, 6, &cfg, &[0.6, 0.4, 0.4]).unwrap();
        let m = ScriptedModel::new(cfg, script).unwrap().with_prompt_len(3);
        audited += audit_decode(&m, &[5, 9, 14]);
    }
    assert!(audited >= 5, "only {audited} rollbacks exercised; flip harder");
}

#[test]
fn neural_rollbacks_splice_cleanly() {
    // Real arithmetic, real attention: the splice has to preserve exact
    // floats, not just token ids. Seeds picked to actually mispredict.
    let mut audited = 0usize;
    for seed in 0..6u64 {
        let cfg = ShareConfig::byte_level(2, 3, 16, 2, 10).unwrap();
        let m = NeuralModel::generate(cfg, seed).unwrap();
        let prompt = tokenize_bytes(b"ab");
        audited += audit_decode(&m, &prompt);
    }
    assert!(audited >= 1, "no neural rollback was exercised; vary the seeds");
}
