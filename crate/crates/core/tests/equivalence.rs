//! The load-bearing property: the pipelined engine commits exactly the
//! greedy sequence, for every model kind, shape, prompt, and flip pattern.

mod common;

use proptest::prelude::*;
use specpipe::decode::{decode_greedy, decode_speed};
use specpipe::model::{tokenize_bytes, NeuralModel, TokenId};
use specpipe::scripted::{random_flip_script, scripted_config, ScriptedModel};
use specpipe::ShareConfig;

fn neural(
    n_unique: usize,
    groups: usize,
    d_model: usize,
    n_heads: usize,
    max_len: usize,
    seed: u64,
) -> NeuralModel {
    let cfg = ShareConfig::byte_level(n_unique, groups, d_model, n_heads, max_len).unwrap();
    NeuralModel::generate(cfg, seed).unwrap()
}

#[test]
fn neural_equivalence_at_the_edges() {
    // Degenerate pipeline (G=1), universal sharing (N_d=1), cap of one
    // token, deep narrow pipes, with empty and non-empty prompts.
    let shapes = [
        (1, 1, 16, 2, 8, 0u64),
        (1, 2, 16, 2, 1, 1),
        (2, 3, 16, 4, 12, 2),
        (4, 6, 32, 4, 9, 3),
        (3, 2, 24, 3, 16, 4),
    ];
    for (nd, g, d, h, len, seed) in shapes {
        let m = neural(nd, g, d, h, len, seed);
        for prompt in [&b""[..], &b"a"[..], b"hello world".as_slice()] {
            let ids = tokenize_bytes(prompt);
            let (gs, gt) = decode_greedy(&m, &ids).unwrap();
            let (ss, st) = decode_speed(&m, &ids).unwrap();
            assert_eq!(gs, ss, "nd={nd} g={g} seed={seed} prompt={prompt:?}");
            assert_eq!(gt.sequence, st.sequence);
            assert!(st.stages >= ss.len(), "at most one commit per stage");
        }
    }
}

#[test]
fn speculation_defers_to_the_settled_token_not_the_draft() {
    // A predecessor-keyed override makes an iteration's answer depend on
    // what it was speculated from; the pipeline must converge on the value
    // greedy computes from the settled predecessor, not the draft's value.
    let cfg = scripted_config(3, 16, 4, 0, 1, 2).unwrap();
    let mut script = specpipe::scripted::FlipScript::new(
        vec![
            vec![4, 9, 9], // settles to 9 after a flip at boundary 1
            vec![6, 6, 6],
            vec![7, 7, 7],
            vec![8, 8, 8],
        ],
        3,
        16,
    )
    .unwrap();
    // Speculated from the stale 4, iteration 1 would cascade wrongly...
    script.add_override(1, 0, 4, 12).unwrap();
    script.add_override(1, 1, 4, 13).unwrap();
    // ...and even its re-entry from 9 answers differently at depth.
    script.add_override(1, 2, 9, 6).unwrap();
    let m = ScriptedModel::new(cfg, script).unwrap();
    let (gs, _) = decode_greedy(&m, &[]).unwrap();
    let (ss, trace) = decode_speed(&m, &[]).unwrap();
    assert_eq!(gs, ss);
    assert_eq!(gs, vec![9, 6, 7, 8]);
    assert!(trace.invalidations > 0);
}

proptest! {
    // Neural decodes cost real arithmetic; keep the case count modest.
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn neural_equivalence_randomized(
        seed in 0u64..100_000,
        nd_idx in 0usize..3,
        g_idx in 0usize..4,
        prompt in proptest::collection::vec(0u8..=255u8, 0..12),
        max_len in 1usize..24,
    ) {
        let nd = [1usize, 2, 4][nd_idx];
        let g = [1usize, 2, 3, 6][g_idx];
        let m = neural(nd, g, 16, 2, max_len, seed);
        let ids = tokenize_bytes(&prompt);
        let (gs, _) = decode_greedy(&m, &ids).unwrap();
        let (ss, st) = decode_speed(&m, &ids).unwrap();
        prop_assert_eq!(&gs, &ss);
        prop_assert_eq!(st.commits, ss.len());
    }
}

proptest! {
    #[test]
    fn scripted_equivalence_randomized(
        seed in 0u64..1_000_000,
        g in 1usize..5,
        len in 1usize..12,
        cap_extra in 0usize..3,
        prompt in proptest::collection::vec(3 as TokenId..16, 0..4),
    ) {
        let max_len = len + cap_extra; // sometimes decode past the script
        let cfg = scripted_config(g, 16, max_len, 0, 1, 2).unwrap();
        let probs = vec![0.4; g - 1];
        let script = random_flip_script(seed, len, &cfg, &probs).unwrap();
        let truth = script.ground_truth(1, 2, max_len);
        let m = ScriptedModel::new(cfg, script).unwrap().with_prompt_len(prompt.len());
        let (gs, _) = decode_greedy(&m, &prompt).unwrap();
        let (ss, st) = decode_speed(&m, &prompt).unwrap();
        prop_assert_eq!(&gs, &ss);
        // Context-free scripts settle to their final column regardless of
        // engine, prompt, or flip pattern.
        prop_assert_eq!(&gs, &truth);
        prop_assert!(st.stages >= len + g - 1 || st.commits < len);
    }

    #[test]
    fn scripted_equivalence_with_predecessor_overrides(
        seed in 0u64..1_000_000,
        g in 2usize..5,
        len in 2usize..10,
        overrides in proptest::collection::vec(
            (0usize..10, 0usize..5, 3 as TokenId..16, 3 as TokenId..16),
            1..12,
        ),
    ) {
        let cfg = scripted_config(g, 16, len, 0, 1, 2).unwrap();
        let probs = vec![0.5; g - 1];
        let mut script = random_flip_script(seed, len, &cfg, &probs).unwrap();
        for (pos, grp, pred, tok) in overrides {
            let _ = script.add_override(pos % len, grp % g, pred, tok);
        }
        let m = ScriptedModel::new(cfg, script).unwrap();
        let (gs, _) = decode_greedy(&m, &[]).unwrap();
        let (ss, _) = decode_speed(&m, &[]).unwrap();
        prop_assert_eq!(gs, ss);
    }
}
