//! Table-driven oracle model for exercising the pipelined state machine.
//!
//! A [`FlipScript`] dictates, for every generation iteration and every layer
//! group, which token the model classifies at that group's exit. No numbers
//! are involved, so invalidation behavior, stage counts, and committed
//! sequences can be worked out by hand (or brute force) and compared against
//! the engines exactly.
//!
//! Two lookup modes:
//! - default rows are context-free: `(iteration, group) -> token`;
//! - overrides keyed by `(iteration, group, predecessor)` let the answer
//!   depend on the token the iteration was started from, which is what a
//!   real model does — this exercises re-speculation after a correction.
//!
//! The model still writes stub K/V entries per virtual layer, derived from
//! the in-flight token's content, so cache rollback is exercised for real:
//! a stale entry surviving a botched rollback would differ bit-for-bit from
//! a fresh rebuild's entry.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decode::{DecoderModel, GroupExit};
use crate::error::{Error, Result};
use crate::kvcache::KvCache;
use crate::model::{ShareConfig, TokenId};

/// Stub K/V entries are 1 head x 4 values.
pub const STUB_HEADS: usize = 1;
pub const STUB_WIDTH: usize = 4;

/// Per-(iteration, group) classification table, plus optional
/// predecessor-keyed overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipScript {
    rows: Vec<Vec<TokenId>>,
    groups: usize,
    vocab_size: usize,
    overrides: HashMap<(usize, usize, TokenId), TokenId>,
}

impl FlipScript {
    /// `rows[p][g]` is the classification emitted at group `g`'s exit for
    /// generation iteration `p`; the final entry of a row is the
    /// iteration's settled (ground-truth) token.
    pub fn new(rows: Vec<Vec<TokenId>>, groups: usize, vocab_size: usize) -> Result<Self> {
        if groups == 0 {
            return Err(Error::InvalidScript("a script needs at least one group".into()));
        }
        for (p, row) in rows.iter().enumerate() {
            if row.len() != groups {
                return Err(Error::InvalidScript(format!(
                    "row {p} has {} entries, expected {groups}",
                    row.len()
                )));
            }
            for &t in row {
                if t < 0 || t as usize >= vocab_size {
                    return Err(Error::InvalidScript(format!(
                        "row {p} holds token {t}, outside vocab of {vocab_size}"
                    )));
                }
            }
        }
        Ok(Self { rows, groups, vocab_size, overrides: HashMap::new() })
    }

    pub fn rows(&self) -> &[Vec<TokenId>] {
        &self.rows
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Make the answer at `(iteration, group)` depend on the predecessor
    /// token the iteration was speculated from.
    pub fn add_override(
        &mut self,
        iteration: usize,
        group: usize,
        predecessor: TokenId,
        token: TokenId,
    ) -> Result<()> {
        if group >= self.groups {
            return Err(Error::InvalidScript(format!(
                "override group {group} out of range ({} groups)",
                self.groups
            )));
        }
        if token < 0 || token as usize >= self.vocab_size {
            return Err(Error::InvalidScript(format!(
                "override token {token} outside vocab of {}",
                self.vocab_size
            )));
        }
        self.overrides.insert((iteration, group, predecessor), token);
        Ok(())
    }

    /// Overrides in deterministic order (sorted by key), for serialization.
    pub fn overrides_sorted(&self) -> Vec<(usize, usize, TokenId, TokenId)> {
        let mut v: Vec<_> =
            self.overrides.iter().map(|(&(p, g, pred), &t)| (p, g, pred, t)).collect();
        v.sort_unstable();
        v
    }

    /// The classification for `iteration` at group `group`'s exit, given the
    /// token the iteration was started from. Iterations past the script's
    /// end classify as `pad_sentinel` (speculation can run past the end).
    pub fn lookup(
        &self,
        iteration: usize,
        group: usize,
        predecessor: TokenId,
        pad_sentinel: TokenId,
    ) -> TokenId {
        if iteration >= self.rows.len() {
            return pad_sentinel;
        }
        self.overrides
            .get(&(iteration, group, predecessor))
            .copied()
            .unwrap_or(self.rows[iteration][group])
    }

    /// The settled sequence a context-free (no-override) script decodes to:
    /// final-column entries up to and including the first `eos`, padded with
    /// `pad` past the script's end, truncated at `max_len`.
    pub fn ground_truth(&self, eos: TokenId, pad: TokenId, max_len: usize) -> Vec<TokenId> {
        let mut out = Vec::new();
        for i in 0..max_len {
            let t = if i < self.rows.len() { self.rows[i][self.groups - 1] } else { pad };
            out.push(t);
            if t == eos {
                break;
            }
        }
        out
    }
}

/// Config for script-driven runs: shape fields are stub-sized, identity is
/// in `groups`, `vocab_size`, `max_decode_length`, and the control tokens.
pub fn scripted_config(
    groups: usize,
    vocab_size: usize,
    max_decode_length: usize,
    bos_id: TokenId,
    eos_id: TokenId,
    pad_id: TokenId,
) -> Result<ShareConfig> {
    let cfg = ShareConfig {
        n_unique: 1,
        groups,
        d_model: STUB_HEADS * STUB_WIDTH,
        n_heads: STUB_HEADS,
        d_head: STUB_WIDTH,
        d_ffn: STUB_WIDTH,
        vocab_size,
        max_decode_length,
        bos_id,
        eos_id,
        pad_id,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// [`DecoderModel`] whose classifications are read from a [`FlipScript`].
/// The carry is the token the iteration was started from.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    config: ShareConfig,
    script: FlipScript,
    /// Teacher-forced context length; script rows are indexed by
    /// `position - prefix_len`.
    prefix_len: usize,
}

impl ScriptedModel {
    pub fn new(config: ShareConfig, script: FlipScript) -> Result<Self> {
        config.validate()?;
        if script.groups() != config.groups {
            return Err(Error::ModelMismatch(format!(
                "script has {} groups, config has {}",
                script.groups(),
                config.groups
            )));
        }
        if script.vocab_size() != config.vocab_size {
            return Err(Error::ModelMismatch(format!(
                "script vocab {} vs config vocab {}",
                script.vocab_size(),
                config.vocab_size
            )));
        }
        Ok(Self { config, script, prefix_len: 0 })
    }

    /// Declare that decodes will run with a prompt of `n` tokens, so script
    /// row `p` serves absolute position `prefix_len + p`.
    pub fn with_prompt_len(mut self, n: usize) -> Self {
        self.prefix_len = n;
        self
    }

    pub fn script(&self) -> &FlipScript {
        &self.script
    }
}

/// Content-addressed stub entry: any change to what token occupies a
/// position changes the cached bits, so replay comparisons are meaningful.
fn stub_entry(layer: usize, position: usize, content: TokenId, tag: f32) -> Vec<f32> {
    vec![content as f32, layer as f32, position as f32, tag]
}

impl DecoderModel for ScriptedModel {
    type Carry = TokenId;

    fn config(&self) -> &ShareConfig {
        &self.config
    }

    fn new_cache(&self) -> KvCache {
        KvCache::new(self.config.total_layers(), STUB_HEADS, STUB_WIDTH)
    }

    fn enter(&self, token: TokenId) -> Result<TokenId> {
        if !self.config.token_in_vocab(token) {
            return Err(Error::TokenOutOfRange(token as i64, self.config.vocab_size));
        }
        Ok(token)
    }

    fn advance_group(
        &self,
        carry: TokenId,
        group: usize,
        position: usize,
        cache: &mut KvCache,
    ) -> Result<(TokenId, GroupExit)> {
        for l in self.config.group_layers(group) {
            cache.write(
                l,
                position,
                stub_entry(l, position, carry, 7.0),
                stub_entry(l, position, carry, 11.0),
            )?;
        }
        // Prefill positions carry no script meaning; their classifications
        // are discarded by the engines.
        let token = if position < self.prefix_len {
            self.config.pad_id
        } else {
            self.script.lookup(position - self.prefix_len, group, carry, self.config.pad_id)
        };
        Ok((carry, GroupExit { token, logits: None }))
    }
}

fn sample_excluding(rng: &mut ChaCha8Rng, vocab_size: usize, exclude: &[TokenId]) -> TokenId {
    let n_excluded = {
        let mut distinct: Vec<TokenId> = exclude.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        distinct.len()
    };
    let r = rng.gen_range(0..vocab_size - n_excluded);
    let mut seen = 0usize;
    for id in 0..vocab_size as TokenId {
        if exclude.contains(&id) {
            continue;
        }
        if seen == r {
            return id;
        }
        seen += 1;
    }
    unreachable!("exclusion list covered the whole vocabulary");
}

/// Deterministic random script with controlled flip rates.
///
/// `flip_probs[b - 1]` is the probability that an iteration's classification
/// changes crossing boundary `b` (between groups `b - 1` and `b`), for
/// `b` in `1..groups`. Rows are drawn backward from a uniformly random final
/// column; `eos` never appears, so decodes run to the length cap.
pub fn random_flip_script(
    seed: u64,
    length: usize,
    config: &ShareConfig,
    flip_probs: &[f64],
) -> Result<FlipScript> {
    let g = config.groups;
    if flip_probs.len() != g - 1 {
        return Err(Error::InvalidScript(format!(
            "need {} boundary probabilities for {} groups, got {}",
            g - 1,
            g,
            flip_probs.len()
        )));
    }
    for &p in flip_probs {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidProbability(p));
        }
    }
    // A flipped value must differ from its neighbor and avoid eos, so two
    // ids are off the table.
    if flip_probs.iter().any(|&p| p > 0.0) && config.vocab_size < 3 {
        return Err(Error::InvalidScript(
            "vocab too small to flip to a distinct non-eos token".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![vec![0 as TokenId; g]; length];
    for row in rows.iter_mut() {
        row[g - 1] = sample_excluding(&mut rng, config.vocab_size, &[config.eos_id]);
        for b in (1..g).rev() {
            let settled = row[b];
            row[b - 1] = if rng.gen::<f64>() < flip_probs[b - 1] {
                sample_excluding(&mut rng, config.vocab_size, &[settled, config.eos_id])
            } else {
                settled
            };
        }
    }
    FlipScript::new(rows, g, config.vocab_size)
}
