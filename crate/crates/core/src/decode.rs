//! The two decoding engines.
//!
//! [`decode_greedy`] is ordinary autoregressive greedy decoding: each token
//! runs the full virtual-layer depth before the next token starts. It is the
//! correctness oracle.
//!
//! [`decode_speed`] overlaps up to `groups` tokens in a pipeline: while the
//! oldest in-flight token passes the deepest layer group, younger tokens —
//! speculatively started from their predecessors' early-exit classifications
//! — occupy the shallower groups. After every stage, each in-flight token's
//! fresh classification is compared with its own classification one group
//! earlier; if any changed ("flipped"), every strictly younger speculation
//! is flushed, its KV-cache positions are rolled back, and speculation
//! restarts from the corrected token. A token graduating from the deepest
//! group is final, which makes the committed sequence provably identical to
//! the greedy one.
//!
//! Pipeline slots: slot 0 holds the newest token (largest position), slot
//! `groups - 1` the oldest; a slot's token enters layer group `slot` this
//! stage. `iteration_indices[slot]` is the token's generation iteration, or
//! -1 for an empty slot (a bubble). Generation iteration `i` corresponds to
//! absolute sequence position `prefix_len + i`, where `prefix_len` counts
//! the teacher-forced context tokens ahead of it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kvcache::KvCache;
use crate::model::{classify, GroupExitLogits, NeuralModel, ShareConfig, TokenId};

/// What a token's pass through one layer group produced: its argmax
/// classification at that group's exit, and the raw logits when the model
/// computes any (the table-driven oracle model does not).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupExit {
    pub token: TokenId,
    pub logits: Option<Vec<f32>>,
}

/// Anything the engines can drive: a model that advances one token's state
/// through one layer group at a time and classifies at each group exit.
pub trait DecoderModel {
    /// Per-token state carried between groups (the neural model's hidden
    /// vector; the scripted model's input token).
    type Carry: Clone;

    fn config(&self) -> &ShareConfig;

    /// Fresh cache shaped for this model (one slot per virtual layer).
    fn new_cache(&self) -> KvCache;

    /// Begin a token's pass: turn its id into a carry entering group 0.
    fn enter(&self, token: TokenId) -> Result<Self::Carry>;

    /// Advance through layer group `group` at absolute `position`, writing
    /// K/V at that group's virtual layers, and classify at the exit.
    fn advance_group(
        &self,
        carry: Self::Carry,
        group: usize,
        position: usize,
        cache: &mut KvCache,
    ) -> Result<(Self::Carry, GroupExit)>;
}

impl DecoderModel for NeuralModel {
    /// The hidden state between layer groups.
    type Carry = Vec<f32>;

    fn config(&self) -> &ShareConfig {
        NeuralModel::config(self)
    }

    fn new_cache(&self) -> KvCache {
        let c = NeuralModel::config(self);
        KvCache::new(c.total_layers(), c.n_heads, c.d_head)
    }

    fn enter(&self, token: TokenId) -> Result<Vec<f32>> {
        self.embed(token)
    }

    fn advance_group(
        &self,
        carry: Vec<f32>,
        group: usize,
        position: usize,
        cache: &mut KvCache,
    ) -> Result<(Vec<f32>, GroupExit)> {
        let (hidden, logits) = self.forward_group(&carry, group, position, cache)?;
        let token = classify(&logits);
        Ok((hidden, GroupExit { token, logits: Some(logits) }))
    }
}

/// Index of the last nonzero entry, or 0 when all entries are zero.
pub fn get_index_of_last_nonzero(arr: &[i32]) -> Result<usize> {
    if arr.is_empty() {
        return Err(Error::EmptyInput("get_index_of_last_nonzero"));
    }
    Ok(arr.iter().rposition(|&x| x != 0).unwrap_or(0))
}

/// The pipelined decoder's mutable state between stages.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineState {
    /// Committed output, `pad_id`-initialized, length `max_decode_length`.
    pub sequence: Vec<TokenId>,
    /// Masked classifications from the previous stage (slots `0..G-1`).
    pub previous_tokens: Vec<TokenId>,
    /// Generation iteration per slot; -1 marks a bubble.
    pub iteration_indices: Vec<i64>,
    /// Next index of `sequence` to commit to.
    pub current_index: usize,
    /// Token entering slot 0 at the next stage.
    pub current_token: TokenId,
    /// Most recently committed token (-1 before the first commit).
    pub graduated_token: TokenId,
}

impl PipelineState {
    /// Bootstrapped state: iteration 0 is already injected into slot 0, so
    /// the first stage does real work, with `first_input` (the last context
    /// token) about to enter the first group.
    pub fn new(config: &ShareConfig, first_input: TokenId) -> Self {
        let g = config.groups;
        let mut iteration_indices = vec![-1i64; g];
        iteration_indices[0] = 0;
        Self {
            sequence: vec![config.pad_id; config.max_decode_length],
            previous_tokens: vec![-1; g.saturating_sub(1)],
            iteration_indices,
            current_index: 0,
            current_token: first_input,
            graduated_token: -1,
        }
    }

    /// Structural invariants that hold between stages:
    /// - valid iteration indices, read from slot 0 to the deepest slot,
    ///   form a strictly decreasing run of consecutive integers;
    /// - the deepest valid entry equals `current_index` (the oldest
    ///   in-flight token is the next to commit);
    /// - every valid entry is below `max_decode_length`.
    pub fn check_invariants(&self, max_decode_length: usize) -> Result<()> {
        let valid: Vec<i64> = self.iteration_indices.iter().copied().filter(|&x| x >= 0).collect();
        for w in valid.windows(2) {
            if w[1] != w[0] - 1 {
                return Err(self.corrupt("valid iteration indices not consecutive"));
            }
        }
        if let Some(&deepest) = valid.last() {
            if deepest != self.current_index as i64 {
                return Err(self.corrupt("deepest in-flight iteration is not the next commit"));
            }
        }
        if valid.iter().any(|&x| x >= max_decode_length as i64) {
            return Err(self.corrupt("iteration index beyond max_decode_length"));
        }
        Ok(())
    }

    fn corrupt(&self, what: &str) -> Error {
        Error::StateCorrupt(format!("{what}; state: {self:?}"))
    }
}

/// Which engine produced a trace (the flip-profile pairing rule differs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceKind {
    Greedy,
    Pipelined,
}

/// One classification change caught by the stage compare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlipEvent {
    /// Slot where the change surfaced: the token's exit of group `slot`
    /// disagreed with its exit of group `slot - 1` last stage.
    pub slot: usize,
    pub old: TokenId,
    pub new: TokenId,
}

/// Everything observable about one stage.
///
/// For greedy traces a "stage" is one full-depth position: `exits` holds the
/// token's classification at every group exit and `iteration_indices`
/// repeats the position's iteration across all slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Slot occupancy at forward time (before this stage's invalidation).
    pub iteration_indices: Vec<i64>,
    /// Masked per-slot classifications (-1 for bubbles).
    pub exits: Vec<TokenId>,
    /// Same, re-masked after invalidation (what the next stage compares
    /// against).
    pub exits_after_invalidation: Vec<TokenId>,
    pub last_invalid: usize,
    pub committed: Option<TokenId>,
    /// Iteration injected into slot 0 at the end of the stage, if any.
    pub injected: Option<i64>,
    /// Absolute cache position truncated by this stage's rollback, if any.
    pub rolled_back_from: Option<usize>,
    pub flips: Vec<FlipEvent>,
}

/// Full decode audit trail: per-stage records plus totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub kind: TraceKind,
    pub groups: usize,
    /// Teacher-forced context length (positions ahead of generation).
    pub prefix_len: usize,
    pub records: Vec<StageRecord>,
    /// Committed sequence, up to and including eos (or the length cap).
    pub sequence: Vec<TokenId>,
    pub stages: usize,
    pub commits: usize,
    /// Stages on which at least a rollback was issued.
    pub invalidations: usize,
    /// Slot occupancy after the final shift (tokens abandoned in flight).
    pub final_iteration_indices: Vec<i64>,
}

/// Post-invalidation view of one completed stage, handed to an observer
/// before the shift. `contents[s]` is the input token of the in-flight
/// token at slot `s` (-1 for bubbles) — everything needed to rebuild the
/// cache from scratch, which is how the rollback tests audit it.
pub struct StageView<'a> {
    pub record: &'a StageRecord,
    pub cache: &'a KvCache,
    pub contents: &'a [TokenId],
    pub iteration_indices: &'a [i64],
    pub committed: &'a [TokenId],
    pub prefix_len: usize,
}

fn build_context(config: &ShareConfig, prompt: &[TokenId]) -> Result<Vec<TokenId>> {
    for &t in prompt {
        if !config.token_in_vocab(t) {
            return Err(Error::TokenOutOfRange(t as i64, config.vocab_size));
        }
    }
    let mut context = Vec::with_capacity(prompt.len() + 1);
    context.push(config.bos_id);
    context.extend_from_slice(prompt);
    Ok(context)
}

/// Teacher-force every context token but the last through the full depth,
/// populating the cache non-speculatively. The last context token is the
/// pipeline's first input, not prefill.
fn prefill<M: DecoderModel>(model: &M, context: &[TokenId], cache: &mut KvCache) -> Result<()> {
    let n = context.len() - 1;
    for (pos, &t) in context[..n].iter().enumerate() {
        let mut carry = model.enter(t)?;
        for g in 0..model.config().groups {
            let (next, _) = model.advance_group(carry, g, pos, cache)?;
            carry = next;
        }
    }
    cache.mark_committed(n);
    Ok(())
}

/// One pipeline stage's forward pass: every valid slot advances one layer
/// group. Slot 0 (when valid) first embeds `current_token`. Returns per-slot
/// exits, `None` for bubbles; `carries`/`contents` are updated in place.
pub fn pipeline_forward_pass<M: DecoderModel>(
    model: &M,
    current_token: TokenId,
    iteration_indices: &[i64],
    carries: &mut [Option<M::Carry>],
    contents: &mut [TokenId],
    prefix_len: usize,
    cache: &mut KvCache,
) -> Result<Vec<Option<GroupExit>>> {
    let g = iteration_indices.len();
    if iteration_indices[0] >= 0 {
        if current_token < 0 {
            return Err(Error::StateCorrupt(
                "slot 0 expects a token but current_token is the -1 sentinel".into(),
            ));
        }
        carries[0] = Some(model.enter(current_token)?);
        contents[0] = current_token;
    }
    let mut exits: Vec<Option<GroupExit>> = vec![None; g];
    for slot in 0..g {
        let it = iteration_indices[slot];
        if it < 0 {
            continue;
        }
        let carry = carries[slot].take().ok_or_else(|| {
            Error::StateCorrupt(format!("slot {slot} holds iteration {it} but no hidden state"))
        })?;
        let position = prefix_len + it as usize;
        let (next, exit) = model.advance_group(carry, slot, position, cache)?;
        carries[slot] = Some(next);
        exits[slot] = Some(exit);
    }
    Ok(exits)
}

/// Logits view of a stage's exits (bubbles stay absent).
pub fn to_group_exit_logits(exits: &[Option<GroupExit>]) -> GroupExitLogits {
    exits.iter().map(|e| e.as_ref().and_then(|x| x.logits.clone())).collect()
}

/// Baseline greedy decoding: one token at a time through the full depth.
pub fn decode_greedy<M: DecoderModel>(
    model: &M,
    prompt: &[TokenId],
) -> Result<(Vec<TokenId>, DecodeTrace)> {
    let config = model.config().clone();
    config.validate()?;
    let context = build_context(&config, prompt)?;
    let prefix_len = context.len() - 1;
    let mut cache = model.new_cache();
    prefill(model, &context, &mut cache)?;

    let g = config.groups;
    let mut token = *context.last().expect("context starts with bos");
    let mut sequence = Vec::new();
    let mut records = Vec::new();
    for i in 0..config.max_decode_length {
        let position = prefix_len + i;
        let mut carry = model.enter(token)?;
        let mut exits = Vec::with_capacity(g);
        for group in 0..g {
            let (next, exit) = model.advance_group(carry, group, position, &mut cache)?;
            carry = next;
            exits.push(exit.token);
        }
        let out = exits[g - 1];
        sequence.push(out);
        cache.mark_committed(position + 1);
        records.push(StageRecord {
            stage: i,
            iteration_indices: vec![i as i64; g],
            exits: exits.clone(),
            exits_after_invalidation: exits,
            last_invalid: 0,
            committed: Some(out),
            injected: None,
            rolled_back_from: None,
            flips: Vec::new(),
        });
        token = out;
        if out == config.eos_id {
            break;
        }
    }
    let trace = DecodeTrace {
        kind: TraceKind::Greedy,
        groups: g,
        prefix_len,
        stages: records.len(),
        commits: sequence.len(),
        invalidations: 0,
        final_iteration_indices: vec![-1; g],
        records,
        sequence: sequence.clone(),
    };
    Ok((sequence, trace))
}

/// Pipelined speculative decoding. Committed output is token-for-token
/// identical to [`decode_greedy`]'s.
pub fn decode_speed<M: DecoderModel>(
    model: &M,
    prompt: &[TokenId],
) -> Result<(Vec<TokenId>, DecodeTrace)> {
    decode_speed_observed(model, prompt, |_| Ok(()))
}

/// [`decode_speed`] with a per-stage observer, called after invalidation
/// but before the shift — the point where rollback tests can compare the
/// cache against a fresh rebuild of the surviving prefix.
pub fn decode_speed_observed<M: DecoderModel>(
    model: &M,
    prompt: &[TokenId],
    mut observe: impl FnMut(StageView<'_>) -> Result<()>,
) -> Result<(Vec<TokenId>, DecodeTrace)> {
    let config = model.config().clone();
    config.validate()?;
    let context = build_context(&config, prompt)?;
    let prefix_len = context.len() - 1;
    let mut cache = model.new_cache();
    prefill(model, &context, &mut cache)?;

    let g = config.groups;
    let max_len = config.max_decode_length;
    let mut state = PipelineState::new(&config, *context.last().expect("nonempty"));
    let mut carries: Vec<Option<M::Carry>> = vec![None; g];
    let mut contents: Vec<TokenId> = vec![-1; g];
    contents[0] = state.current_token;

    let mut records: Vec<StageRecord> = Vec::new();
    let mut invalidations = 0usize;

    while state.graduated_token != config.eos_id && state.current_index < max_len {
        let stage = records.len();
        let indices_at_forward = state.iteration_indices.clone();

        let raw_exits = pipeline_forward_pass(
            model,
            state.current_token,
            &state.iteration_indices,
            &mut carries,
            &mut contents,
            prefix_len,
            &mut cache,
        )?;

        // Classify and mask bubbles to -1.
        let mut tokens: Vec<TokenId> = (0..g)
            .map(|s| match &raw_exits[s] {
                Some(e) if state.iteration_indices[s] >= 0 => e.token,
                _ => -1,
            })
            .collect();
        let exits = tokens.clone();

        // Each slot's fresh classification against its own classification
        // one group earlier (taken from the previous stage). Slot 0 has no
        // earlier exit and never triggers.
        let mut compare = vec![0i32; g];
        for s in 1..g {
            if tokens[s] != state.previous_tokens[s - 1] {
                compare[s] = 1;
            }
        }
        let last_invalid = get_index_of_last_nonzero(&compare)?;
        let flips: Vec<FlipEvent> = (1..g)
            .filter(|&s| compare[s] != 0)
            .map(|s| FlipEvent { slot: s, old: state.previous_tokens[s - 1], new: tokens[s] })
            .collect();

        // Flush everything strictly younger than the deepest flipped token
        // and roll their cache positions back.
        let mut rolled_back_from = None;
        if last_invalid > 0 {
            let anchor = state.iteration_indices[last_invalid];
            debug_assert!(anchor >= 0, "a flip can only surface at an occupied slot");
            let from = prefix_len + (anchor + 1) as usize;
            cache.invalidate_from(from);
            rolled_back_from = Some(from);
            invalidations += 1;
            for s in 0..last_invalid {
                state.iteration_indices[s] = -1;
                carries[s] = None;
                contents[s] = -1;
            }
        }
        // Re-mask with invalidations applied.
        for (tok, &it) in tokens.iter_mut().zip(&state.iteration_indices) {
            if it < 0 {
                *tok = -1;
            }
        }
        state.previous_tokens.clear();
        state.previous_tokens.extend_from_slice(&tokens[..g - 1]);
        state.current_token = tokens[last_invalid];
        let start_idx = state.iteration_indices[last_invalid] + 1;

        // Graduation: a token leaving the deepest group is final.
        let mut committed = None;
        if state.iteration_indices[g - 1] >= 0 {
            let out = tokens[g - 1];
            state.sequence[state.current_index] = out;
            state.graduated_token = out;
            committed = Some(out);
            state.current_index += 1;
            cache.mark_committed(prefix_len + state.current_index);
        }

        // Next injection: the successor of the token at last_invalid — the
        // deepest corrected token, or the newest token when nothing flipped.
        // Nothing is injected past the length cap, or when that slot is a
        // bubble (current_token -1): a drained pipeline inserts bubbles.
        let inject = if (start_idx as usize) < max_len && state.current_token >= 0 {
            Some(start_idx)
        } else {
            None
        };

        let record = StageRecord {
            stage,
            iteration_indices: indices_at_forward,
            exits,
            exits_after_invalidation: tokens,
            last_invalid,
            committed,
            injected: inject,
            rolled_back_from,
            flips,
        };
        observe(StageView {
            record: &record,
            cache: &cache,
            contents: &contents,
            iteration_indices: &state.iteration_indices,
            committed: &state.sequence[..state.current_index],
            prefix_len,
        })?;
        records.push(record);

        // Shift the pipeline one group deeper and inject at slot 0.
        for s in (1..g).rev() {
            state.iteration_indices[s] = state.iteration_indices[s - 1];
            carries[s] = carries[s - 1].take();
            contents[s] = contents[s - 1];
        }
        state.iteration_indices[0] = inject.unwrap_or(-1);
        carries[0] = None;
        contents[0] = if inject.is_some() { state.current_token } else { -1 };

        state.check_invariants(max_len)?;
    }

    let sequence = state.sequence[..state.current_index].to_vec();
    let trace = DecodeTrace {
        kind: TraceKind::Pipelined,
        groups: g,
        prefix_len,
        stages: records.len(),
        commits: sequence.len(),
        invalidations,
        final_iteration_indices: state.iteration_indices.clone(),
        records,
        sequence: sequence.clone(),
    };
    Ok((sequence, trace))
}
