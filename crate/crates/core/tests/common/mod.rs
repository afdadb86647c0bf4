//! Shared helpers for the integration suites: an independent step-by-step
//! simulator of the pipelined schedule, a from-scratch cache rebuilder, and
//! small constructors.

#![allow(dead_code)] // each test binary uses a subset

pub mod hand_sim;
pub mod rebuild;

use specpipe::model::TokenId;
use specpipe::scripted::{scripted_config, FlipScript, ScriptedModel};
use specpipe::ShareConfig;

/// Scripted config over a tiny vocab: bos=0, eos=1, pad=2, payload 3..16.
pub fn test_config(groups: usize, max_len: usize) -> ShareConfig {
    scripted_config(groups, 16, max_len, 0, 1, 2).expect("valid test config")
}

/// Model whose iteration-p, group-g exit is `rows[p][g]`.
pub fn scripted_model(rows: Vec<Vec<TokenId>>, max_len: usize) -> ScriptedModel {
    let groups = rows[0].len();
    let script = FlipScript::new(rows, groups, 16).expect("valid rows");
    ScriptedModel::new(test_config(groups, max_len), script).expect("matching config")
}
