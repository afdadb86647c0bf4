//! Command-line front end: model generation, decoding (with equivalence
//! checking), flip profiling, and cost-model sweeps.
//!
//! Exit codes: 0 success (and equivalence PASS), 1 equivalence FAIL,
//! 2 usage error, 3 I/O or file-format error. Errors print one
//! machine-readable line to stderr: `error: kind=<usage|io|format> detail=…`.
//! All output is deterministic given the same inputs and seeds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use specpipe::decode::{decode_greedy, decode_speed, DecodeTrace, DecoderModel};
use specpipe::io::{
    cost_csv, flip_profile_csv, load_model, load_run_config, load_script, save_model,
    save_script, save_trace, write_string, CostRow, RunConfig,
};
use specpipe::metrics::{cost_model, flip_profile, stage_accounting, CostModelInput, FlipProfile};
use specpipe::model::{detokenize_bytes, tokenize_bytes, NeuralModel, BYTE_VOCAB_SIZE};
use specpipe::scripted::{random_flip_script, scripted_config, ScriptedModel};
use specpipe::{Error, Result, ShareConfig, TokenId};

#[derive(Parser)]
#[command(
    name = "specpipe",
    version,
    about = "Pipelined speculative decoding with cyclic weight sharing"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a deterministic random model directory (manifest + weights).
    GenModel(GenModelArgs),
    /// Decode with a neural model; "both" checks greedy/pipelined equivalence.
    Decode(DecodeArgs),
    /// Decode with a flip script instead of a neural model.
    ScriptRun(ScriptRunArgs),
    /// Aggregate flip proportions into a CSV.
    Profile(ProfileArgs),
    /// Sweep the weight-traffic cost model into a CSV.
    Cost(CostArgs),
}

#[derive(Args)]
struct ShapeArgs {
    /// Unique decoder layers shared cyclically.
    #[arg(long, default_value_t = 2)]
    n_unique: usize,
    /// Layer groups (pipeline depth).
    #[arg(long, default_value_t = 3)]
    groups: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    n_heads: usize,
    /// Generation length cap.
    #[arg(long, default_value_t = 64)]
    max_len: usize,
}

impl ShapeArgs {
    fn to_config(&self) -> Result<ShareConfig> {
        ShareConfig::byte_level(self.n_unique, self.groups, self.d_model, self.n_heads, self.max_len)
    }
}

#[derive(Args)]
struct GenModelArgs {
    /// Model directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    shape: ShapeArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecoderChoice {
    Greedy,
    Speed,
    Both,
}

#[derive(Args)]
struct DecodeArgs {
    /// JSON file mirroring these flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Load a model directory...
    #[arg(long)]
    model: Option<PathBuf>,
    /// ...or generate one in memory from this seed.
    #[arg(long)]
    gen_seed: Option<u64>,
    #[arg(long)]
    n_unique: Option<usize>,
    #[arg(long)]
    groups: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    /// Generation length cap (overrides the model's stored cap).
    #[arg(long)]
    max_len: Option<usize>,
    /// Prompt as a byte string...
    #[arg(long)]
    prompt: Option<String>,
    /// ...or as comma-separated token ids.
    #[arg(long)]
    prompt_ids: Option<String>,
    #[arg(long, value_enum)]
    decoder: Option<DecoderChoice>,
    /// Trace file to write (the pipelined trace when --decoder both).
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct ScriptRunArgs {
    /// Flip-script file (group count inferred from the rows).
    #[arg(long)]
    script: PathBuf,
    #[arg(long, default_value_t = 16)]
    vocab: usize,
    #[arg(long, default_value_t = 0)]
    bos: TokenId,
    #[arg(long, default_value_t = 1)]
    eos: TokenId,
    #[arg(long, default_value_t = 2)]
    pad: TokenId,
    /// Generation cap; defaults to the script's row count.
    #[arg(long)]
    max_len: Option<usize>,
    /// Comma-separated token ids to teacher-force before generation.
    #[arg(long)]
    prompt_ids: Option<String>,
    #[arg(long, value_enum, default_value_t = DecoderChoice::Both)]
    decoder: DecoderChoice,
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    /// Profile one scripted decode from a script file...
    #[arg(long)]
    script: Option<PathBuf>,
    /// ...or a generated random script with this seed...
    #[arg(long)]
    gen_script_seed: Option<u64>,
    /// ...or a neural model over a prompt corpus.
    #[arg(long)]
    model: Option<PathBuf>,
    /// One prompt per line (used with --model).
    #[arg(long)]
    prompts_file: Option<PathBuf>,
    /// Rows in the generated script (with --gen-script-seed).
    #[arg(long, default_value_t = 10_000)]
    length: usize,
    /// Groups in the generated script.
    #[arg(long, default_value_t = 3)]
    groups: usize,
    /// Boundary flip probabilities for the generated script, e.g. "0.15,0.05".
    #[arg(long, value_delimiter = ',')]
    probs: Vec<f64>,
    #[arg(long, default_value_t = 16)]
    vocab: usize,
    /// Cap for scripted runs; defaults to the script length.
    #[arg(long)]
    max_len: Option<usize>,
    /// Also save the script used (generated mode).
    #[arg(long)]
    script_out: Option<PathBuf>,
    /// CSV destination.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CostArgs {
    /// Grid of unique-layer counts, e.g. "1,2,4".
    #[arg(long, value_delimiter = ',', default_value = "4")]
    n_unique: Vec<usize>,
    /// Grid of group counts.
    #[arg(long, value_delimiter = ',', default_value = "3")]
    groups: Vec<usize>,
    /// Grid of committed sequence lengths.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    committed: Vec<u64>,
    /// Grid of embedding-to-layer byte ratios.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    emb_ratio: Vec<f64>,
    /// Stage scenarios: "ideal" (S=L), "perfect" (S=L+G-1), "rate:<p>"
    /// (simulate a random script with flip probability p at each boundary).
    #[arg(long, value_delimiter = ',', default_value = "perfect")]
    scenario: Vec<String>,
    /// Seed for rate:<p> simulations.
    #[arg(long, default_value_t = 0)]
    sim_seed: u64,
    /// CSV destination.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            let kind = match e {
                Error::File(..) => "io",
                Error::Format { .. } => "format",
                _ => "usage",
            };
            eprintln!("error: kind={kind} detail={e}");
            ExitCode::from(if kind == "usage" { 2 } else { 3 })
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::GenModel(args) => cmd_gen_model(args),
        Cmd::Decode(args) => cmd_decode(args),
        Cmd::ScriptRun(args) => cmd_script_run(args),
        Cmd::Profile(args) => cmd_profile(args),
        Cmd::Cost(args) => cmd_cost(args),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn parse_ids(text: &str) -> Result<Vec<TokenId>> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed
        .split(',')
        .map(|f| {
            f.trim().parse::<TokenId>().map_err(|_| usage(format!("bad token id {f:?}")))
        })
        .collect()
}

fn cmd_gen_model(args: GenModelArgs) -> Result<ExitCode> {
    let config = args.shape.to_config()?;
    let model = NeuralModel::generate(config, args.seed)?;
    let summary = save_model(&model, &args.out)?;
    println!("wrote model to {}", args.out.display());
    println!("seed: {}", args.seed);
    println!("tensors: {}", summary.tensors);
    println!("parameters: {}", summary.parameters);
    println!("weight-bytes: {}", summary.weight_bytes);
    Ok(ExitCode::SUCCESS)
}

/// Print the standard per-engine block and return the trace's summary line
/// data (the caller handles equivalence and trace output).
fn report_run(engine: &str, sequence: &[TokenId], trace: &DecodeTrace, byte_vocab: bool) {
    println!("engine: {engine}");
    let ids: Vec<String> = sequence.iter().map(|t| t.to_string()).collect();
    println!("sequence-ids: {}", ids.join(" "));
    if byte_vocab {
        let text = String::from_utf8_lossy(&detokenize_bytes(sequence)).into_owned();
        println!("sequence-text: {text:?}");
    }
    println!("stages: {}", trace.stages);
    println!("commits: {}", trace.commits);
    println!("invalidations: {}", trace.invalidations);
    // stage_accounting only fails on empty or inconsistent traces, which the
    // engines never produce.
    if let Ok(summary) = stage_accounting(trace) {
        println!("wasted-token-stages: {}", summary.wasted_token_stages);
    }
}

/// Run the chosen engines, report, check equivalence, write the trace.
fn run_engines<M: DecoderModel>(
    model: &M,
    prompt: &[TokenId],
    decoder: DecoderChoice,
    trace_out: Option<&Path>,
    byte_vocab: bool,
) -> Result<ExitCode> {
    let (failed, trace_to_save) = match decoder {
        DecoderChoice::Greedy => {
            let (seq, trace) = decode_greedy(model, prompt)?;
            report_run("greedy", &seq, &trace, byte_vocab);
            (false, Some(trace))
        }
        DecoderChoice::Speed => {
            let (seq, trace) = decode_speed(model, prompt)?;
            report_run("speed", &seq, &trace, byte_vocab);
            (false, Some(trace))
        }
        DecoderChoice::Both => {
            let (gseq, gtrace) = decode_greedy(model, prompt)?;
            report_run("greedy", &gseq, &gtrace, byte_vocab);
            let (sseq, strace) = decode_speed(model, prompt)?;
            report_run("speed", &sseq, &strace, byte_vocab);
            let failed = match first_divergence(&gseq, &sseq) {
                None => {
                    println!("equivalence: PASS ({} tokens)", gseq.len());
                    false
                }
                Some(i) => {
                    let g = gseq.get(i).map_or("<end>".into(), |t| t.to_string());
                    let s = sseq.get(i).map_or("<end>".into(), |t| t.to_string());
                    println!("equivalence: FAIL at index {i}: greedy={g} speed={s}");
                    true
                }
            };
            (failed, Some(strace))
        }
    };
    if let (Some(path), Some(trace)) = (trace_out, &trace_to_save) {
        save_trace(trace, path)?;
        println!("wrote trace to {}", path.display());
    }
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn first_divergence(a: &[TokenId], b: &[TokenId]) -> Option<usize> {
    if a == b {
        return None;
    }
    Some(a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len())))
}

/// Rebuild a loaded model with a different generation cap.
fn override_max_len(model: NeuralModel, max_len: usize) -> Result<NeuralModel> {
    let mut config = model.config().clone();
    if config.max_decode_length == max_len {
        return Ok(model);
    }
    config.max_decode_length = max_len;
    let (gain, bias) = model.final_norm();
    NeuralModel::from_parts(
        config,
        model.layers().to_vec(),
        model.embedding().clone(),
        gain.to_vec(),
        bias.to_vec(),
        model.seed(),
    )
}

fn cmd_decode(args: DecodeArgs) -> Result<ExitCode> {
    let file = match &args.config {
        Some(path) => load_run_config(path)?,
        None => RunConfig::default(),
    };
    // Flags override file values.
    let model_path = args.model.or(file.model.map(PathBuf::from));
    let gen_seed = args.gen_seed.or(file.gen_seed);
    let prompt_text = args.prompt.or(file.prompt);
    let prompt_ids_flag = match args.prompt_ids {
        Some(s) => Some(parse_ids(&s)?),
        None => file.prompt_ids,
    };
    let decoder = match args.decoder {
        Some(d) => d,
        None => match file.decoder.as_deref() {
            None => DecoderChoice::Both,
            Some("greedy") => DecoderChoice::Greedy,
            Some("speed") => DecoderChoice::Speed,
            Some("both") => DecoderChoice::Both,
            Some(other) => return Err(usage(format!("unknown decoder {other:?}"))),
        },
    };
    let trace_out = args.trace_out.or(file.trace_out.map(PathBuf::from));
    let max_len = args.max_len.or(file.max_decode_length);

    let model = match (model_path, gen_seed) {
        (Some(_), Some(_)) => {
            return Err(usage("give either a model directory or a generation seed, not both"))
        }
        (None, None) => {
            return Err(usage("give a model directory (--model) or a generation seed (--gen-seed)"))
        }
        (Some(path), None) => {
            let loaded = load_model(&path)?;
            match max_len {
                Some(n) => override_max_len(loaded, n)?,
                None => loaded,
            }
        }
        (None, Some(seed)) => {
            let shape = ShapeArgs {
                n_unique: args.n_unique.or(file.n_unique).unwrap_or(2),
                groups: args.groups.or(file.groups).unwrap_or(3),
                d_model: args.d_model.or(file.d_model).unwrap_or(32),
                n_heads: args.n_heads.or(file.n_heads).unwrap_or(4),
                max_len: max_len.unwrap_or(64),
            };
            NeuralModel::generate(shape.to_config()?, seed)?
        }
    };

    let prompt: Vec<TokenId> = match (prompt_text, prompt_ids_flag) {
        (Some(_), Some(_)) => return Err(usage("give --prompt or --prompt-ids, not both")),
        (Some(text), None) => tokenize_bytes(text.as_bytes()),
        (None, Some(ids)) => ids,
        (None, None) => Vec::new(),
    };

    let byte_vocab = model.config().vocab_size == BYTE_VOCAB_SIZE;
    println!(
        "model: n_unique={} groups={} d_model={} vocab={} max_len={}{}",
        model.config().n_unique,
        model.config().groups,
        model.config().d_model,
        model.config().vocab_size,
        model.config().max_decode_length,
        model.seed().map_or(String::new(), |s| format!(" seed={s}")),
    );
    run_engines(&model, &prompt, decoder, trace_out.as_deref(), byte_vocab)
}

fn cmd_script_run(args: ScriptRunArgs) -> Result<ExitCode> {
    let script = load_script(&args.script, args.vocab)?;
    let prompt = match &args.prompt_ids {
        Some(s) => parse_ids(s)?,
        None => Vec::new(),
    };
    let max_len = args.max_len.unwrap_or_else(|| script.len());
    let config =
        scripted_config(script.groups(), args.vocab, max_len, args.bos, args.eos, args.pad)?;
    println!(
        "script: {} (rows: {}, groups: {}, vocab: {})",
        args.script.display(),
        script.len(),
        script.groups(),
        args.vocab
    );
    let model = ScriptedModel::new(config, script)?.with_prompt_len(prompt.len());
    run_engines(&model, &prompt, args.decoder, args.trace_out.as_deref(), false)
}

fn cmd_profile(args: ProfileArgs) -> Result<ExitCode> {
    let modes = [args.script.is_some(), args.gen_script_seed.is_some(), args.model.is_some()];
    if modes.iter().filter(|&&m| m).count() != 1 {
        return Err(usage(
            "give exactly one of --script, --gen-script-seed, or --model",
        ));
    }

    let (profile, runs) = if let Some(path) = &args.script {
        let script = load_script(path, args.vocab)?;
        let max_len = args.max_len.unwrap_or_else(|| script.len());
        let config =
            scripted_config(script.groups(), args.vocab, max_len, 0, 1, 2)?;
        let model = ScriptedModel::new(config, script)?;
        let (_, trace) = decode_speed(&model, &[])?;
        (flip_profile(&trace)?, 1usize)
    } else if let Some(seed) = args.gen_script_seed {
        if args.groups == 0 {
            return Err(usage("--groups must be nonzero"));
        }
        if args.probs.len() != args.groups - 1 {
            return Err(usage(format!(
                "--probs needs {} values for {} groups, got {}",
                args.groups - 1,
                args.groups,
                args.probs.len()
            )));
        }
        let max_len = args.max_len.unwrap_or(args.length);
        let config = scripted_config(args.groups, args.vocab, max_len, 0, 1, 2)?;
        let script = random_flip_script(seed, args.length, &config, &args.probs)?;
        if let Some(out) = &args.script_out {
            save_script(&script, out)?;
            println!("wrote script to {}", out.display());
        }
        let model = ScriptedModel::new(config, script)?;
        let (_, trace) = decode_speed(&model, &[])?;
        (flip_profile(&trace)?, 1usize)
    } else {
        let model_dir = args.model.as_ref().expect("mode checked above");
        let prompts_path = args
            .prompts_file
            .as_ref()
            .ok_or_else(|| usage("--model mode needs --prompts-file"))?;
        let model = load_model(model_dir)?;
        let text = std::fs::read_to_string(prompts_path)
            .map_err(|e| Error::File(prompts_path.display().to_string(), e))?;
        let mut merged: Option<FlipProfile> = None;
        let mut runs = 0usize;
        for line in text.lines() {
            let prompt = tokenize_bytes(line.trim_end_matches('\r').as_bytes());
            let (_, trace) = decode_speed(&model, &prompt)?;
            let p = flip_profile(&trace)?;
            match &mut merged {
                None => merged = Some(p),
                Some(m) => m.merge(&p)?,
            }
            runs += 1;
        }
        let profile = merged.ok_or_else(|| usage("prompt corpus is empty"))?;
        (profile, runs)
    };

    write_string(&args.out, &flip_profile_csv(&profile))?;
    println!(
        "wrote flip profile to {} (boundaries: {}, runs: {runs})",
        args.out.display(),
        profile.boundaries()
    );
    Ok(ExitCode::SUCCESS)
}

enum Scenario {
    Ideal,
    Perfect,
    Rate(f64),
}

fn parse_scenario(s: &str) -> Result<Scenario> {
    match s {
        "ideal" => Ok(Scenario::Ideal),
        "perfect" => Ok(Scenario::Perfect),
        _ => match s.strip_prefix("rate:") {
            Some(p) => {
                let p: f64 =
                    p.parse().map_err(|_| usage(format!("bad flip rate in {s:?}")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidProbability(p));
                }
                Ok(Scenario::Rate(p))
            }
            None => Err(usage(format!(
                "unknown scenario {s:?} (expected ideal, perfect, or rate:<p>)"
            ))),
        },
    }
}

/// Stage count for a (groups, committed, scenario) cell.
fn scenario_stages(
    scenario: &Scenario,
    groups: usize,
    committed: u64,
    sim_seed: u64,
) -> Result<u64> {
    match scenario {
        Scenario::Ideal => Ok(committed),
        Scenario::Perfect => Ok(committed + groups as u64 - 1),
        Scenario::Rate(p) => {
            let length = committed as usize;
            let config = scripted_config(groups, 16, length, 0, 1, 2)?;
            let probs = vec![*p; groups - 1];
            let script = random_flip_script(sim_seed, length, &config, &probs)?;
            let model = ScriptedModel::new(config, script)?;
            let (seq, trace) = decode_speed(&model, &[])?;
            debug_assert_eq!(seq.len(), length);
            Ok(trace.stages as u64)
        }
    }
}

fn cmd_cost(args: CostArgs) -> Result<ExitCode> {
    for (name, empty) in [
        ("--n-unique", args.n_unique.is_empty()),
        ("--groups", args.groups.is_empty()),
        ("--committed", args.committed.is_empty()),
        ("--emb-ratio", args.emb_ratio.is_empty()),
        ("--scenario", args.scenario.is_empty()),
    ] {
        if empty {
            return Err(usage(format!("{name} grid is empty")));
        }
    }
    let mut rows = Vec::new();
    for scenario_name in &args.scenario {
        let scenario = parse_scenario(scenario_name)?;
        for &g in &args.groups {
            for &l in &args.committed {
                if l == 0 {
                    return Err(usage("--committed entries must be nonzero"));
                }
                // Stage counts depend only on (scenario, G, L); share them
                // across the n_unique and emb_ratio axes.
                let stages = scenario_stages(&scenario, g, l, args.sim_seed)?;
                for &nd in &args.n_unique {
                    for &ratio in &args.emb_ratio {
                        let report = cost_model(&CostModelInput {
                            bytes_per_layer: 1.0,
                            bytes_embedding: ratio,
                            n_unique: nd,
                            groups: g,
                            stages,
                            committed: l,
                        })?;
                        rows.push(CostRow {
                            n_unique: nd,
                            groups: g,
                            committed: l,
                            stages,
                            emb_ratio: ratio,
                            scenario: scenario_name.clone(),
                            speedup: report.speedup,
                            asymptotic: report.asymptotic_speedup,
                        });
                    }
                }
            }
        }
    }
    write_string(&args.out, &cost_csv(&rows)?)?;
    println!("wrote cost sweep to {} (rows: {})", args.out.display(), rows.len());
    Ok(ExitCode::SUCCESS)
}
