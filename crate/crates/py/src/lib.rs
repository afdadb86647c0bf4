//! Python bindings: model generation and persistence, both decoding
//! engines, flip scripts, the flip profiler, and the weight-traffic cost
//! model. Sequences cross the boundary as plain lists of token ids.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use specpipe::decode::{decode_greedy, decode_speed, DecodeTrace};
use specpipe::metrics::{cost_model, flip_profile, stage_accounting, CostModelInput};
use specpipe::model::{
    detokenize_bytes, tokenize_bytes, NeuralModel, TokenId, BYTE_VOCAB_SIZE,
};
use specpipe::scripted::{random_flip_script, scripted_config, FlipScript, ScriptedModel};
use specpipe::ShareConfig;

fn pyerr(e: specpipe::Error) -> PyErr {
    match &e {
        specpipe::Error::File(..) => PyIOError::new_err(e.to_string()),
        specpipe::Error::StateCorrupt(..) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Prompt argument for the byte-level model: either text (tokenized one id
/// per byte) or an explicit list of token ids.
#[derive(FromPyObject)]
enum Prompt {
    Text(String),
    Ids(Vec<TokenId>),
}

impl Prompt {
    fn into_ids(self) -> Vec<TokenId> {
        match self {
            Prompt::Text(text) => tokenize_bytes(text.as_bytes()),
            Prompt::Ids(ids) => ids,
        }
    }
}

/// Shape of a cyclically shared decoder over the byte-level vocabulary.
#[pyclass(frozen, skip_from_py_object, module = "specpipe_py")]
#[derive(Clone)]
struct Config {
    inner: ShareConfig,
}

#[pymethods]
impl Config {
    #[new]
    #[pyo3(signature = (n_unique, groups, d_model, n_heads, max_decode_length))]
    fn new(
        n_unique: usize,
        groups: usize,
        d_model: usize,
        n_heads: usize,
        max_decode_length: usize,
    ) -> PyResult<Self> {
        ShareConfig::byte_level(n_unique, groups, d_model, n_heads, max_decode_length)
            .map(|inner| Self { inner })
            .map_err(pyerr)
    }

    #[getter]
    fn n_unique(&self) -> usize {
        self.inner.n_unique
    }
    #[getter]
    fn groups(&self) -> usize {
        self.inner.groups
    }
    #[getter]
    fn d_model(&self) -> usize {
        self.inner.d_model
    }
    #[getter]
    fn n_heads(&self) -> usize {
        self.inner.n_heads
    }
    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size
    }
    #[getter]
    fn max_decode_length(&self) -> usize {
        self.inner.max_decode_length
    }
    #[getter]
    fn total_layers(&self) -> usize {
        self.inner.total_layers()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(n_unique={}, groups={}, d_model={}, n_heads={}, max_decode_length={})",
            self.inner.n_unique,
            self.inner.groups,
            self.inner.d_model,
            self.inner.n_heads,
            self.inner.max_decode_length
        )
    }
}

/// One finished decode: the committed sequence plus pipeline accounting.
#[pyclass(frozen, get_all, module = "specpipe_py")]
struct RunResult {
    /// Committed token ids, up to and including eos (or the cap).
    sequence: Vec<TokenId>,
    /// Decoded bytes for byte-vocabulary models, else None.
    text: Option<String>,
    engine: String,
    stages: usize,
    commits: usize,
    invalidations: usize,
    invalidated_tokens: usize,
    injections: usize,
    abandoned: usize,
    wasted_token_stages: usize,
    /// Per-boundary flip counts (length groups - 1).
    flipped: Vec<u64>,
    /// Per-boundary observation counts.
    observed: Vec<u64>,
    /// flipped / observed per boundary (0.0 where unobserved).
    flip_proportions: Vec<f64>,
}

#[pymethods]
impl RunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult(engine={:?}, tokens={}, stages={}, invalidations={})",
            self.engine,
            self.sequence.len(),
            self.stages,
            self.invalidations
        )
    }
}

fn run_result(
    engine: &str,
    sequence: Vec<TokenId>,
    trace: &DecodeTrace,
    byte_vocab: bool,
) -> PyResult<RunResult> {
    let accounting = stage_accounting(trace).map_err(pyerr)?;
    let profile = flip_profile(trace).map_err(pyerr)?;
    let flip_proportions = profile.proportions();
    let text = byte_vocab
        .then(|| String::from_utf8_lossy(&detokenize_bytes(&sequence)).into_owned());
    Ok(RunResult {
        sequence,
        text,
        engine: engine.into(),
        stages: trace.stages,
        commits: trace.commits,
        invalidations: trace.invalidations,
        invalidated_tokens: accounting.invalidated_tokens,
        injections: accounting.injections,
        abandoned: accounting.abandoned,
        wasted_token_stages: accounting.wasted_token_stages,
        flipped: profile.flipped,
        observed: profile.observed,
        flip_proportions,
    })
}

/// A deterministic randomly initialized decoder with cyclic layer sharing.
#[pyclass(frozen, module = "specpipe_py")]
struct Model {
    inner: NeuralModel,
}

#[pymethods]
impl Model {
    /// Generate weights from a seed (same seed, same bytes, every time).
    #[staticmethod]
    fn generate(config: &Config, seed: u64) -> PyResult<Self> {
        NeuralModel::generate(config.inner.clone(), seed)
            .map(|inner| Self { inner })
            .map_err(pyerr)
    }

    /// Load a model directory written by `save` (or the CLI).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        specpipe::io::load_model(path.as_ref()).map(|inner| Self { inner }).map_err(pyerr)
    }

    /// Write manifest + little-endian weights; loading restores bit-equal
    /// weights. Returns (tensor count, parameter count, weight bytes).
    fn save(&self, path: &str) -> PyResult<(usize, u64, u64)> {
        specpipe::io::save_model(&self.inner, path.as_ref())
            .map(|s| (s.tensors, s.parameters, s.weight_bytes))
            .map_err(pyerr)
    }

    #[getter]
    fn config(&self) -> Config {
        Config { inner: self.inner.config().clone() }
    }

    #[getter]
    fn seed(&self) -> Option<u64> {
        self.inner.seed()
    }

    /// Sequential baseline: one token at a time, full depth. The prompt is
    /// text or a list of token ids.
    #[pyo3(signature = (prompt=None))]
    fn decode_greedy(&self, prompt: Option<Prompt>) -> PyResult<RunResult> {
        let prompt = prompt.map(Prompt::into_ids).unwrap_or_default();
        let (seq, trace) = decode_greedy(&self.inner, &prompt).map_err(pyerr)?;
        run_result("greedy", seq, &trace, self.byte_vocab())
    }

    /// Pipelined speculative decoding; commits exactly the greedy sequence.
    /// The prompt is text or a list of token ids.
    #[pyo3(signature = (prompt=None))]
    fn decode_speed(&self, prompt: Option<Prompt>) -> PyResult<RunResult> {
        let prompt = prompt.map(Prompt::into_ids).unwrap_or_default();
        let (seq, trace) = decode_speed(&self.inner, &prompt).map_err(pyerr)?;
        run_result("speed", seq, &trace, self.byte_vocab())
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "Model(n_unique={}, groups={}, d_model={}, seed={:?})",
            c.n_unique,
            c.groups,
            c.d_model,
            self.inner.seed()
        )
    }
}

impl Model {
    fn byte_vocab(&self) -> bool {
        self.inner.config().vocab_size == BYTE_VOCAB_SIZE
    }
}

/// A flip script: per-iteration, per-group-exit classifications that drive
/// the pipeline deterministically (control ids: bos=0, eos=1, pad=2).
#[pyclass(module = "specpipe_py")]
struct Script {
    inner: FlipScript,
}

impl Script {
    fn config_for(&self, max_len: usize) -> PyResult<ShareConfig> {
        scripted_config(self.inner.groups(), self.inner.vocab_size(), max_len, 0, 1, 2)
            .map_err(pyerr)
    }
}

#[pymethods]
impl Script {
    /// rows[i][g] is iteration i's classification at group g's exit.
    #[new]
    fn new(rows: Vec<Vec<TokenId>>, vocab_size: usize) -> PyResult<Self> {
        let groups = rows.first().map_or(1, Vec::len);
        FlipScript::new(rows, groups, vocab_size).map(|inner| Self { inner }).map_err(pyerr)
    }

    /// Backward-generated random script hitting the given per-boundary
    /// flip probabilities (len(probs) == groups - 1); eos never appears,
    /// so decodes run to the cap.
    #[staticmethod]
    #[pyo3(signature = (seed, length, groups, probs, vocab_size=16))]
    fn random(
        seed: u64,
        length: usize,
        groups: usize,
        probs: Vec<f64>,
        vocab_size: usize,
    ) -> PyResult<Self> {
        let config = scripted_config(groups, vocab_size, length.max(1), 0, 1, 2).map_err(pyerr)?;
        random_flip_script(seed, length, &config, &probs)
            .map(|inner| Self { inner })
            .map_err(pyerr)
    }

    #[staticmethod]
    #[pyo3(signature = (path, vocab_size=16))]
    fn load(path: &str, vocab_size: usize) -> PyResult<Self> {
        specpipe::io::load_script(path.as_ref(), vocab_size)
            .map(|inner| Self { inner })
            .map_err(pyerr)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        specpipe::io::save_script(&self.inner, path.as_ref()).map_err(pyerr)
    }

    /// Make iteration `iteration`'s exit of group `group` depend on the
    /// token it was speculated from.
    fn add_override(
        &mut self,
        iteration: usize,
        group: usize,
        predecessor: TokenId,
        token: TokenId,
    ) -> PyResult<()> {
        self.inner.add_override(iteration, group, predecessor, token).map_err(pyerr)
    }

    /// The sequence any correct decode settles on (final column, cut at
    /// eos, padded to the cap).
    #[pyo3(signature = (max_len=None))]
    fn ground_truth(&self, max_len: Option<usize>) -> Vec<TokenId> {
        self.inner.ground_truth(1, 2, max_len.unwrap_or_else(|| self.inner.len()))
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<TokenId>> {
        self.inner.rows().to_vec()
    }
    #[getter]
    fn groups(&self) -> usize {
        self.inner.groups()
    }
    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Drive the pipelined engine with this script.
    #[pyo3(signature = (max_len=None, prompt=None))]
    fn run_speed(&self, max_len: Option<usize>, prompt: Option<Vec<TokenId>>) -> PyResult<RunResult> {
        let prompt = prompt.unwrap_or_default();
        let config = self.config_for(max_len.unwrap_or_else(|| self.inner.len()))?;
        let model = ScriptedModel::new(config, self.inner.clone())
            .map_err(pyerr)?
            .with_prompt_len(prompt.len());
        let (seq, trace) = decode_speed(&model, &prompt).map_err(pyerr)?;
        run_result("speed", seq, &trace, false)
    }

    /// Drive the sequential baseline with this script.
    #[pyo3(signature = (max_len=None, prompt=None))]
    fn run_greedy(&self, max_len: Option<usize>, prompt: Option<Vec<TokenId>>) -> PyResult<RunResult> {
        let prompt = prompt.unwrap_or_default();
        let config = self.config_for(max_len.unwrap_or_else(|| self.inner.len()))?;
        let model = ScriptedModel::new(config, self.inner.clone())
            .map_err(pyerr)?
            .with_prompt_len(prompt.len());
        let (seq, trace) = decode_greedy(&model, &prompt).map_err(pyerr)?;
        run_result("greedy", seq, &trace, false)
    }

    fn __repr__(&self) -> String {
        format!(
            "Script(rows={}, groups={}, vocab_size={})",
            self.inner.len(),
            self.inner.groups(),
            self.inner.vocab_size()
        )
    }
}

/// Byte-level tokenizer: one id per byte.
#[pyfunction]
fn tokenize(text: &str) -> Vec<TokenId> {
    tokenize_bytes(text.as_bytes())
}

/// Per-group loss weights w_i = i / sum(1..=groups): deeper exits weigh
/// more, and the weights sum to 1.
#[pyfunction]
fn linear_weights(groups: usize) -> PyResult<Vec<f64>> {
    specpipe::model::linear_weights(groups).map_err(pyerr)
}

/// Weighted sum of per-group-exit losses.
#[pyfunction]
fn weighted_loss(per_group_losses: Vec<f64>, weights: Vec<f64>) -> PyResult<f64> {
    specpipe::model::weighted_loss(&per_group_losses, &weights).map_err(pyerr)
}

/// Inverse of `tokenize` (control ids dropped, invalid UTF-8 replaced).
#[pyfunction]
fn detokenize(ids: Vec<TokenId>) -> String {
    String::from_utf8_lossy(&detokenize_bytes(&ids)).into_owned()
}

/// Weight-traffic model: bytes moved by the sequential baseline vs the
/// pipeline, the resulting speedup, and its large-L bound.
#[pyfunction]
#[pyo3(signature = (n_unique, groups, stages, committed, bytes_per_layer=1.0, bytes_embedding=0.0))]
fn traffic_model<'py>(
    py: Python<'py>,
    n_unique: usize,
    groups: usize,
    stages: u64,
    committed: u64,
    bytes_per_layer: f64,
    bytes_embedding: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let report = cost_model(&CostModelInput {
        bytes_per_layer,
        bytes_embedding,
        n_unique,
        groups,
        stages,
        committed,
    })
    .map_err(pyerr)?;
    let d = PyDict::new(py);
    d.set_item("baseline_traffic", report.baseline_traffic)?;
    d.set_item("speed_traffic", report.speed_traffic)?;
    d.set_item("speedup", report.speedup)?;
    d.set_item("asymptotic_speedup", report.asymptotic_speedup)?;
    Ok(d)
}

#[pymodule]
fn specpipe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add_class::<Model>()?;
    m.add_class::<Script>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(detokenize, m)?)?;
    m.add_function(wrap_pyfunction!(traffic_model, m)?)?;
    m.add_function(wrap_pyfunction!(linear_weights, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_loss, m)?)?;
    m.add("BYTE_VOCAB_SIZE", BYTE_VOCAB_SIZE)?;
    Ok(())
}
