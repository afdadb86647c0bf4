//! File formats: model directories, flip-script files, decode traces, CSV
//! emission, and the run-configuration file.
//!
//! Every writer is deterministic (stable field order, no timestamps, sorted
//! collections), so identical inputs produce byte-identical files, and every
//! format has a reader that round-trips without loss.

mod csv;
mod model_dir;
mod run_config;
mod script_file;
mod trace_file;

pub use csv::{
    cost_csv, flip_profile_csv, parse_cost_csv, parse_flip_profile_csv, write_string,
    CostRow,
};
pub use model_dir::{load_model, save_model, ModelSummary};
pub use run_config::{load_run_config, save_run_config, RunConfig};
pub use script_file::{load_script, parse_script, save_script, script_to_string};
pub use trace_file::{load_trace, save_trace, trace_to_string};
