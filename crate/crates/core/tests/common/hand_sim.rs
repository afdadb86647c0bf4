//! An independent, step-by-step simulation of the pipelined schedule,
//! written token-centrically (a list of in-flight tokens with depths)
//! rather than slot-centrically (index vectors with masks) so it shares no
//! structure with the engine it checks.
//!
//! Rules being simulated:
//! - every in-flight token advances one layer group per stage and is
//!   reclassified at the group exit;
//! - a token whose classification changed ("flipped") invalidates every
//!   strictly younger token; the oldest flipped token is the anchor and
//!   speculation restarts from its corrected classification;
//! - with no flips, speculation extends from the youngest token, provided
//!   that token entered the pipeline this very stage (otherwise the entry
//!   slot was idle and there is nothing new to speculate from);
//! - a token clearing the deepest group commits; eos or the length cap
//!   stops the run.

use specpipe::model::TokenId;
use specpipe::scripted::FlipScript;
use specpipe::ShareConfig;

#[derive(Debug, Clone)]
struct Live {
    iteration: usize,
    /// Token this iteration was speculated from.
    input: TokenId,
    /// Layer groups completed so far.
    depth: usize,
    /// Classification at the deepest completed group.
    last_class: Option<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimOutcome {
    pub sequence: Vec<TokenId>,
    pub stages: usize,
}

/// Simulate a scripted decode. `first_input` is what iteration 0 is fed
/// (bos for an empty prompt, else the last prompt token).
pub fn simulate(script: &FlipScript, config: &ShareConfig, first_input: TokenId) -> SimOutcome {
    let groups = config.groups;
    let max_len = config.max_decode_length;

    let mut live =
        vec![Live { iteration: 0, input: first_input, depth: 0, last_class: None }];
    let mut sequence: Vec<TokenId> = Vec::new();
    let mut stages = 0usize;
    // Every stage either commits, flushes at least one token-stage of work,
    // or fills the pipe; this bound is far beyond any legal schedule.
    let stage_cap = 4 * (max_len + groups + 2) * (groups + 1) + 16;

    loop {
        stages += 1;
        assert!(stages <= stage_cap, "simulated schedule exceeded {stage_cap} stages");

        // Advance and reclassify every in-flight token.
        let mut flipped: Vec<usize> = Vec::new();
        for (i, t) in live.iter_mut().enumerate() {
            let class = script.lookup(t.iteration, t.depth, t.input, config.pad_id);
            t.depth += 1;
            if t.last_class.is_some_and(|prev| prev != class) {
                flipped.push(i);
            }
            t.last_class = Some(class);
        }

        // Pick where speculation continues from.
        let anchor = flipped.iter().copied().min_by_key(|&i| live[i].iteration);
        let next = match anchor {
            Some(a) => {
                let anchor_iteration = live[a].iteration;
                let corrected = live[a].last_class.expect("anchor just classified");
                live.retain(|t| t.iteration <= anchor_iteration);
                Some((anchor_iteration + 1, corrected))
            }
            None => {
                let youngest =
                    live.iter().max_by_key(|t| t.iteration).expect("pipe never empties");
                if youngest.depth == 1 {
                    Some((youngest.iteration + 1, youngest.last_class.unwrap()))
                } else {
                    None // entry slot was idle this stage
                }
            }
        };

        // Graduation.
        let mut committed_eos = false;
        if let Some(pos) = live.iter().position(|t| t.depth == groups) {
            let done = live.remove(pos);
            let class = done.last_class.unwrap();
            assert_eq!(done.iteration, sequence.len(), "commits must be in order");
            sequence.push(class);
            committed_eos = class == config.eos_id;
        }

        // Inject the successor if the cap allows.
        if let Some((iteration, input)) = next {
            if iteration < max_len {
                live.push(Live { iteration, input, depth: 0, last_class: None });
            }
        }

        if committed_eos || sequence.len() == max_len {
            break;
        }
    }
    SimOutcome { sequence, stages }
}
