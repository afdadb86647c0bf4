//! Pipelined speculative decoding for transformer decoders with cyclic
//! parameter sharing.
//!
//! A decoder that reuses one group of `n_unique` layers `groups` times can
//! overlap the forward passes of several sequence positions: while the oldest
//! in-flight token finishes its last layer group, younger tokens — started
//! from the early-exit classifications of their predecessors — occupy the
//! earlier groups. Every stage then touches each shared weight matrix once
//! for up to `groups` tokens, amortizing weight memory traffic. Because a
//! predecessor's classification can change as it passes deeper groups, the
//! engine tracks classifications stage to stage and flushes (and rolls back
//! the KV cache of) every younger speculation whenever one changes, so the
//! committed output is always identical to ordinary greedy decoding.
//!
//! The crate provides:
//! - [`tensor`]: minimal deterministic f32 kernels (fixed reduction order),
//! - [`model`]: a toy decoder with cyclic weight sharing and tied classifier,
//! - [`kvcache`]: the per-(virtual layer, position) KV store with rollback,
//! - [`decode`]: the baseline greedy engine and the pipelined engine,
//! - [`scripted`]: a table-driven oracle model for state-machine testing,
//! - [`metrics`]: flip profiling, stage accounting, and the traffic model,
//! - [`io`]: model directory, script file, trace, and CSV formats.

pub mod decode;
pub mod error;
pub mod io;
pub mod kvcache;
pub mod metrics;
pub mod model;
pub mod scripted;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{ShareConfig, TokenId};
