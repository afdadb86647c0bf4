//! Key/value store indexed by (virtual layer, position) with speculative
//! writes and suffix rollback.
//!
//! Each virtual layer holds a contiguous run of positions starting at 0, so
//! entries live in plain vectors and rollback is truncation. Two structural
//! invariants are maintained and auditable:
//!
//! - contiguity: cached positions at a layer are exactly `0..len`,
//! - depth monotonicity: a position cached at layer `l+1` is also cached at
//!   layer `l` (a token only reaches a layer after all shallower ones).
//!
//! Weights may be shared across layer groups, but activations are not: the
//! cache always keys by *virtual* layer, because attention at virtual layer
//! `l` needs the K/V produced at `l`, not at the unique layer that supplied
//! the weights.

use crate::error::{Error, Result};

/// One position's keys and values at one virtual layer, head-major
/// (`n_heads * d_head` values each).
#[derive(Debug, Clone, PartialEq)]
pub struct KvEntry {
    pub k: Vec<f32>,
    pub v: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct KvCache {
    layers: Vec<Vec<KvEntry>>,
    entry_len: usize,
    /// Positions below this are committed (non-speculative) at every layer.
    committed_frontier: usize,
}

impl KvCache {
    pub fn new(n_layers: usize, n_heads: usize, d_head: usize) -> Self {
        Self {
            layers: vec![Vec::new(); n_layers],
            entry_len: n_heads * d_head,
            committed_frontier: 0,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Number of contiguously cached positions at `layer`.
    pub fn layer_len(&self, layer: usize) -> usize {
        self.layers[layer].len()
    }

    pub fn committed_frontier(&self) -> usize {
        self.committed_frontier
    }

    /// Store `position`'s K/V at `layer`. Positions must arrive in order; a
    /// gap means the decode loop lost track of a token and is rejected.
    pub fn write(&mut self, layer: usize, position: usize, k: Vec<f32>, v: Vec<f32>) -> Result<()> {
        if layer >= self.layers.len() {
            return Err(Error::LayerOutOfRange(layer, self.layers.len()));
        }
        if k.len() != self.entry_len || v.len() != self.entry_len {
            return Err(Error::ShapeMismatch {
                op: "KvCache::write",
                detail: format!("entry len {} (k {}, v {})", self.entry_len, k.len(), v.len()),
            });
        }
        let expected = self.layers[layer].len();
        if position != expected {
            return Err(Error::CacheNonContiguous { layer, position, expected });
        }
        self.layers[layer].push(KvEntry { k, v });
        debug_assert!(self.audit().is_ok());
        Ok(())
    }

    /// Entries for positions `0..=upto_position` at `layer`, in order.
    /// `upto_position == -1` denotes an empty attention context.
    pub fn read_range(&self, layer: usize, upto_position: i64) -> Result<&[KvEntry]> {
        if layer >= self.layers.len() {
            return Err(Error::LayerOutOfRange(layer, self.layers.len()));
        }
        if upto_position < 0 {
            return Ok(&[]);
        }
        let upto = upto_position as usize;
        let have = self.layers[layer].len();
        if upto >= have {
            return Err(Error::CacheMissing { layer, position: upto });
        }
        Ok(&self.layers[layer][..=upto])
    }

    /// Drop every entry with position >= `position`, at every layer.
    /// Idempotent; truncation preserves both structural invariants.
    pub fn invalidate_from(&mut self, position: usize) {
        for layer in &mut self.layers {
            layer.truncate(position);
        }
        self.committed_frontier = self.committed_frontier.min(position);
        debug_assert!(self.audit().is_ok());
    }

    /// Mark positions below `position` as committed.
    pub fn mark_committed(&mut self, position: usize) {
        self.committed_frontier = self.committed_frontier.max(position);
    }

    /// Check the structural invariants. Contiguity is structural with vector
    /// storage; depth monotonicity and the frontier still need verifying.
    pub fn audit(&self) -> Result<()> {
        for w in self.layers.windows(2) {
            if w[1].len() > w[0].len() {
                return Err(Error::StateCorrupt(format!(
                    "depth monotonicity violated: {} entries above {}",
                    w[1].len(),
                    w[0].len()
                )));
            }
        }
        if let Some(last) = self.layers.last() {
            if self.committed_frontier > last.len() {
                return Err(Error::StateCorrupt(format!(
                    "committed frontier {} beyond deepest layer ({} entries)",
                    self.committed_frontier,
                    last.len()
                )));
            }
        }
        Ok(())
    }

    /// Structured text dump of per-layer cached ranges, for replay tests.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (l, entries) in self.layers.iter().enumerate() {
            out.push_str(&format!("layer {l}: positions 0..{}\n", entries.len()));
        }
        out.push_str(&format!("committed_frontier: {}\n", self.committed_frontier));
        out
    }

    /// Bit-exact equality of all cached entries (frontiers not compared).
    pub fn bits_eq(&self, other: &KvCache) -> bool {
        if self.layers.len() != other.layers.len() {
            return false;
        }
        self.layers.iter().zip(&other.layers).all(|(a, b)| {
            a.len() == b.len()
                && a.iter().zip(b).all(|(x, y)| {
                    x.k.iter().zip(&y.k).all(|(p, q)| p.to_bits() == q.to_bits())
                        && x.v.iter().zip(&y.v).all(|(p, q)| p.to_bits() == q.to_bits())
                })
        })
    }
}
