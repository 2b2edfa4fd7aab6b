//! Python bindings for the `denselab` crate.
//!
//! Feature matrices cross the boundary as lists of rows; configurations as
//! JSON strings in the same schema the CLI reads.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use denselab::adaptation;
use denselab::harness::{self, Domain, SyntheticTaskSpec};
use denselab::langmodel::{self, NGramConfig, NGramModel};
use denselab::lattice::{self, CombinationWeights, MbrConfig, Scales};
use denselab::model::ModelParameters;
use denselab::tensor;
use denselab::topology::{self, ArchitectureSpec, CnnBlstmConfig, ConnectivityMode};
use denselab::training::{self, LabeledSequence, TrainingSchedule};

create_exception!(denselab_py, DenselabError, PyException);

fn py_err(e: denselab::Error) -> PyErr {
    DenselabError::new_err((e.to_string(), e.exit_code()))
}

fn from_json<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_str(s).map_err(|e| py_err(denselab::Error::config(format!("invalid JSON config: {e}"))))
}

fn to_tensor(rows: Vec<Vec<f64>>) -> PyResult<tensor::Tensor> {
    tensor::Tensor::from_rows(&rows).map_err(py_err)
}

fn rows(t: &tensor::Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

#[pyclass(name = "Tensor", module = "denselab_py", from_py_object)]
#[derive(Clone)]
struct PyTensor(tensor::Tensor);

#[pymethods]
impl PyTensor {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        to_tensor(rows).map(PyTensor)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    fn tolist(&self) -> Vec<Vec<f64>> {
        rows(&self.0)
    }

    fn matmul(&self, other: &PyTensor) -> PyResult<Self> {
        self.0.matmul(&other.0).map(PyTensor).map_err(py_err)
    }

    fn transpose(&self) -> PyResult<Self> {
        self.0.transpose().map(PyTensor).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.0.shape())
    }
}

/// One labelled feature sequence.
#[pyclass(name = "Sequence", module = "denselab_py", from_py_object)]
#[derive(Clone)]
struct PySequence(LabeledSequence);

#[pymethods]
impl PySequence {
    #[new]
    fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Self> {
        LabeledSequence::new(to_tensor(features)?, labels)
            .map(PySequence)
            .map_err(py_err)
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        rows(&self.0.features)
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels.clone()
    }

    fn __len__(&self) -> usize {
        self.0.labels.len()
    }
}

fn sequences(data: &[PySequence]) -> Vec<LabeledSequence> {
    data.iter().map(|s| s.0.clone()).collect()
}

#[pyclass(name = "Architecture", module = "denselab_py", from_py_object)]
#[derive(Clone)]
struct PyArchitecture(ArchitectureSpec);

#[pymethods]
impl PyArchitecture {
    /// Plain, residual or dense LSTM stack.
    #[staticmethod]
    #[pyo3(signature = (mode, layers, input_dim, cell_dim, num_classes, block_size = 2))]
    fn stack(
        mode: &str,
        layers: usize,
        input_dim: usize,
        cell_dim: usize,
        num_classes: usize,
        block_size: usize,
    ) -> PyResult<Self> {
        let mode: ConnectivityMode = from_json(&format!("\"{mode}\""))?;
        topology::build_stack(mode, layers, input_dim, cell_dim, block_size, num_classes)
            .map(PyArchitecture)
            .map_err(py_err)
    }

    #[staticmethod]
    fn dense_tdnn_lstm(num_classes: usize) -> PyResult<Self> {
        topology::build_dense_tdnn_lstm(num_classes)
            .map(PyArchitecture)
            .map_err(py_err)
    }

    /// CNN-bLSTM preset `"a"` to `"d"`.
    #[staticmethod]
    fn dense_cnn_blstm(preset: &str, num_classes: usize) -> PyResult<Self> {
        let cfg = CnnBlstmConfig::preset(preset).map_err(py_err)?;
        topology::build_dense_cnn_blstm(&cfg, num_classes)
            .map(PyArchitecture)
            .map_err(py_err)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        ArchitectureSpec::from_json(s).map(PyArchitecture).map_err(py_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.0.fingerprint()
    }

    #[getter]
    fn output_dim(&self) -> PyResult<usize> {
        self.0.output_feature_dim().map_err(py_err)
    }

    fn census<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.0.census();
        let d = PyDict::new(py);
        d.set_item("conv", c.conv)?;
        d.set_item("tdnn", c.tdnn)?;
        d.set_item("lstm", c.lstm)?;
        d.set_item("blstm", c.blstm)?;
        d.set_item("transition", c.transition)?;
        d.set_item("affine", c.affine)?;
        d.set_item("dense_blocks", c.dense_blocks)?;
        Ok(d)
    }
}

#[pyclass(name = "Model", module = "denselab_py", from_py_object)]
#[derive(Clone)]
struct PyModel(ModelParameters);

#[pymethods]
impl PyModel {
    /// Seeded initialisation for `arch`.
    #[staticmethod]
    fn init(arch: &PyArchitecture, seed: u64) -> PyResult<Self> {
        topology::Network::init(&arch.0, seed)
            .map(|n| PyModel(n.to_model()))
            .map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        harness::load_model(&path).map(PyModel).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        harness::save_model(&self.0, &path).map_err(py_err)
    }

    #[getter]
    fn checksum(&self) -> String {
        self.0.checksum()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.0.fingerprint.clone()
    }

    #[getter]
    fn num_values(&self) -> usize {
        self.0.num_values()
    }

    fn tensor_names(&self) -> Vec<String> {
        self.0.tensors.keys().cloned().collect()
    }

    /// `(1 − alpha)·self + alpha·other`.
    #[pyo3(signature = (other, alpha = 0.5))]
    fn average(&self, other: &PyModel, alpha: f64) -> PyResult<Self> {
        adaptation::average_parameters(&self.0, &other.0, alpha)
            .map(PyModel)
            .map_err(py_err)
    }

    /// Per-frame log-posteriors for one feature matrix.
    fn log_probs(&self, arch: &PyArchitecture, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let net = topology::Network::from_model(&arch.0, &self.0).map_err(py_err)?;
        let lp = net.log_probs(&to_tensor(features)?).map_err(py_err)?;
        Ok(rows(&lp))
    }

    fn bitwise_eq(&self, other: &PyModel) -> bool {
        self.0.bitwise_eq(&other.0)
    }
}

/// `n` sequences from domain `"a"` or `"b"` of the synthetic task.
#[pyfunction]
#[pyo3(signature = (n, seed, domain = "a", task_json = None))]
fn gen_data(n: usize, seed: u64, domain: &str, task_json: Option<&str>) -> PyResult<Vec<PySequence>> {
    let spec: SyntheticTaskSpec = task_json.map(from_json).transpose()?.unwrap_or_default();
    let domain = match domain {
        "a" | "A" => Domain::A,
        "b" | "B" => Domain::B,
        other => return Err(py_err(denselab::Error::config(format!("unknown domain `{other}`")))),
    };
    let data = harness::gen_domain(&spec, domain, n, seed).map_err(py_err)?;
    Ok(data.into_iter().map(PySequence).collect())
}

fn schedule(json: Option<&str>, default: fn() -> TrainingSchedule) -> PyResult<TrainingSchedule> {
    Ok(json.map(from_json).transpose()?.unwrap_or_else(default))
}

fn epoch_dicts<'py>(py: Python<'py>, log: &[training::EpochMetrics]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    log.iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("epoch", e.epoch)?;
            d.set_item("lr", e.lr)?;
            d.set_item("train_loss", e.train_loss)?;
            d.set_item("val_loss", e.val_loss)?;
            d.set_item("val_frame_error", e.val_frame_error)?;
            Ok(d)
        })
        .collect()
}

/// Trains `arch` from scratch. Returns the model and per-epoch metrics.
#[pyfunction]
#[pyo3(signature = (arch, data, schedule_json = None))]
fn train<'py>(
    py: Python<'py>,
    arch: &PyArchitecture,
    data: Vec<PySequence>,
    schedule_json: Option<&str>,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let s = schedule(schedule_json, harness::sweep_schedule)?;
    let out = training::train(&arch.0, &sequences(&data), &s).map_err(py_err)?;
    Ok((PyModel(out.model), epoch_dicts(py, &out.log)?))
}

/// Fine-tunes a copy of `model` on `data`.
#[pyfunction]
#[pyo3(signature = (arch, model, data, schedule_json = None))]
fn adapt<'py>(
    py: Python<'py>,
    arch: &PyArchitecture,
    model: &PyModel,
    data: Vec<PySequence>,
    schedule_json: Option<&str>,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let s = schedule(schedule_json, harness::adapt_study_schedule)?;
    let out = adaptation::adapt(&model.0, &arch.0, &sequences(&data), &s).map_err(py_err)?;
    Ok((PyModel(out.model), epoch_dicts(py, &out.log)?))
}

/// Frame-weighted loss and frame error rate.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    arch: &PyArchitecture,
    model: &PyModel,
    data: Vec<PySequence>,
) -> PyResult<Bound<'py, PyDict>> {
    let e = training::evaluate_model(&arch.0, &model.0, &sequences(&data)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("loss", e.loss)?;
    d.set_item("frame_error", e.frame_error)?;
    d.set_item("frames", e.frames)?;
    Ok(d)
}

#[pyclass(name = "Lattice", module = "denselab_py", from_py_object)]
#[derive(Clone)]
struct PyLattice(lattice::Lattice);

#[pymethods]
impl PyLattice {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        lattice::Lattice::from_text(text).map(PyLattice).map_err(py_err)
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.0.num_nodes()
    }

    #[getter]
    fn num_arcs(&self) -> usize {
        self.0.arcs().len()
    }

    #[getter]
    fn words(&self) -> Vec<String> {
        self.0.words().to_vec()
    }

    /// Minimum-Bayes-risk word sequence with its posterior and risk.
    #[pyo3(signature = (acoustic_scale = 1.0, lm_scale = 1.0, insertion_penalty = 0.0))]
    fn mbr_decode(
        &self,
        acoustic_scale: f64,
        lm_scale: f64,
        insertion_penalty: f64,
    ) -> PyResult<(Vec<String>, f64, f64)> {
        let s = Scales {
            acoustic: acoustic_scale,
            lm: lm_scale,
            insertion_penalty,
        };
        let h = lattice::mbr_decode(&self.0, &s, &MbrConfig::default()).map_err(py_err)?;
        Ok((h.words, h.posterior, h.risk))
    }

    /// Highest-scoring path's words and score.
    #[pyo3(signature = (acoustic_scale = 1.0, lm_scale = 1.0, insertion_penalty = 0.0))]
    fn best_path(&self, acoustic_scale: f64, lm_scale: f64, insertion_penalty: f64) -> (Vec<String>, f64) {
        let s = Scales {
            acoustic: acoustic_scale,
            lm: lm_scale,
            insertion_penalty,
        };
        let p = lattice::best_path(&self.0, &s);
        (self.0.word_strings(&p.words), p.score)
    }

    /// Weighted union of lattices; word tables are merged first.
    #[staticmethod]
    #[pyo3(signature = (lattices, weights = None))]
    fn union(lattices: Vec<PyLattice>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let ls: Vec<_> = lattices.into_iter().map(|l| l.0).collect();
        let shared = lattice::relabel_to_shared(&ls, |w| w.to_string()).map_err(py_err)?;
        let mut w = CombinationWeights::uniform(shared.len());
        if let Some(v) = weights {
            w.system = v;
        }
        lattice::lattice_union(&shared, &w).map(PyLattice).map_err(py_err)
    }

    /// Replaces LM scores with `lm_weight` times the n-gram log-probability.
    #[pyo3(signature = (lm, lm_weight = 1.0))]
    fn rescore(&self, lm: &PyNGram, lm_weight: f64) -> PyResult<Self> {
        lattice::rescore_lattice(&self.0, &lattice::Scorer::NGram(&lm.0), lm_weight)
            .map(PyLattice)
            .map_err(py_err)
    }
}

#[pyclass(name = "NGram", module = "denselab_py", from_py_object)]
#[derive(Clone)]
struct PyNGram(NGramModel);

#[pymethods]
impl PyNGram {
    /// Back-off model with absolute discounting (optionally Kneser-Ney).
    #[staticmethod]
    #[pyo3(signature = (corpus, order = 3, kneser_ney = false))]
    fn train(corpus: Vec<Vec<String>>, order: usize, kneser_ney: bool) -> PyResult<Self> {
        let cfg = NGramConfig {
            kneser_ney,
            ..NGramConfig::new(order)
        };
        langmodel::train_ngram(&corpus, &cfg).map(PyNGram).map_err(py_err)
    }

    #[staticmethod]
    fn from_arpa(text: &str) -> PyResult<Self> {
        NGramModel::from_arpa(text).map(PyNGram).map_err(py_err)
    }

    fn to_arpa(&self) -> String {
        self.0.to_arpa()
    }

    #[getter]
    fn order(&self) -> usize {
        self.0.order()
    }

    #[getter]
    fn num_entries(&self) -> usize {
        self.0.num_entries()
    }

    /// Natural-log probability of `word` after `context`.
    fn logprob(&self, context: Vec<String>, word: &str) -> PyResult<f64> {
        langmodel::ngram_logprob(&self.0, &context, word).map_err(py_err)
    }

    /// Relative-entropy pruning with one threshold per order from 2 up.
    fn prune(&self, thresholds: Vec<f64>) -> PyResult<Self> {
        langmodel::prune_ngram(&self.0, &thresholds)
            .map(PyNGram)
            .map_err(py_err)
    }
}

/// Levenshtein distance between two word sequences.
#[pyfunction]
fn edit_distance(reference: Vec<String>, hypothesis: Vec<String>) -> usize {
    lattice::edit_distance(&reference, &hypothesis).distance
}

#[pyfunction]
fn word_error_rate(refs: Vec<Vec<String>>, hyps: Vec<Vec<String>>) -> PyResult<f64> {
    lattice::word_error_rate(&refs, &hyps).map_err(py_err)
}

#[pymodule]
fn denselab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DenselabError", m.py().get_type::<DenselabError>())?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyArchitecture>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyLattice>()?;
    m.add_class::<PyNGram>()?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(adapt, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(word_error_rate, m)?)?;
    Ok(())
}
