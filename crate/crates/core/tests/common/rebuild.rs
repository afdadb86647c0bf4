//! From-scratch cache reconstruction, for auditing rollbacks.
//!
//! Given what a decode claims survives at a stage boundary — committed
//! tokens plus the in-flight tokens' iterations and input tokens — rebuild
//! the KV cache non-speculatively: teacher-force the context, run every
//! committed iteration at full depth, then run each surviving in-flight
//! token through exactly the groups it has completed, oldest first. If the
//! engine's rollback ever leaves a stale or missing entry, the rebuilt
//! cache differs bit-for-bit.

use specpipe::decode::DecoderModel;
use specpipe::kvcache::KvCache;
use specpipe::model::TokenId;
use specpipe::Result;

pub fn rebuild_cache<M: DecoderModel>(
    model: &M,
    prompt: &[TokenId],
    committed: &[TokenId],
    iteration_indices: &[i64],
    contents: &[TokenId],
) -> Result<KvCache> {
    let config = model.config();
    let groups = config.groups;
    let mut cache = model.new_cache();

    let mut context = vec![config.bos_id];
    context.extend_from_slice(prompt);
    let prefix_len = context.len() - 1;

    let full_depth = |cache: &mut KvCache, input: TokenId, pos: usize| -> Result<()> {
        let mut carry = model.enter(input)?;
        for g in 0..groups {
            let (next, _) = model.advance_group(carry, g, pos, cache)?;
            carry = next;
        }
        Ok(())
    };

    // Teacher-forced context (the last context token enters the pipeline
    // instead and has no cache entries of its own yet).
    for (pos, &t) in context[..prefix_len].iter().enumerate() {
        full_depth(&mut cache, t, pos)?;
    }

    // Committed iterations: each was fed its predecessor's settled token.
    for i in 0..committed.len() {
        let input = if i == 0 { *context.last().unwrap() } else { committed[i - 1] };
        full_depth(&mut cache, input, prefix_len + i)?;
    }

    // Surviving in-flight tokens, oldest (deepest slot) first so positions
    // stay contiguous; slot index == groups completed. A token that just
    // committed may still sit in the deepest slot — already handled above.
    for s in (0..groups).rev() {
        let it = iteration_indices[s];
        if it < 0 || (it as usize) < committed.len() {
            continue;
        }
        let mut carry = model.enter(contents[s])?;
        for g in 0..=s {
            let (next, _) =
                model.advance_group(carry, g, prefix_len + it as usize, &mut cache)?;
            carry = next;
        }
    }
    Ok(cache)
}
