//! Python bindings: metrics, schedules, vocabulary and scene-graph targets,
//! dataset generation, training, evaluation and a `Captioner`.

use std::path::{Path, PathBuf};

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use opcap::dataset::{self, SgMode, StatePairSample, TripletLabels, Viewpoint};
use opcap::decoder::SearchStrategy;
use opcap::encoder::ImageInput;
use opcap::metrics::{self, EvalOptions, PosClass, PosLexicon};
use opcap::model::PairInput;
use opcap::training::{self, AlphaMode, Checkpoint, LrSchedule, TrainConfig};

create_exception!(opcap_py, OpcapError, PyException);

fn err(e: opcap::Error) -> PyErr {
    OpcapError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = opcap::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

#[pyfunction]
#[pyo3(signature = (hyp, refs, max_n = 4))]
fn bleu(hyp: Vec<String>, refs: Vec<Vec<String>>, max_n: usize) -> Vec<f64> {
    metrics::bleu(&hyp, &refs, max_n)
}

#[pyfunction]
#[pyo3(signature = (hyps, refs, max_n = 4))]
fn corpus_bleu(hyps: Vec<Vec<String>>, refs: Vec<Vec<Vec<String>>>, max_n: usize) -> PyResult<Vec<f64>> {
    if hyps.len() != refs.len() {
        return Err(OpcapError::new_err("hyps and refs differ in length"));
    }
    Ok(metrics::corpus_bleu(&hyps, &refs, max_n))
}

#[pyfunction]
#[pyo3(signature = (hyp, refs, beta = metrics::ROUGE_BETA))]
fn rouge_l(hyp: Vec<String>, refs: Vec<Vec<String>>, beta: f64) -> f64 {
    metrics::rouge_l_multi(&hyp, &refs, beta)
}

/// Returns `(score, per_sample, degenerate)`.
#[pyfunction]
fn cider(hyps: Vec<Vec<String>>, refs: Vec<Vec<Vec<String>>>) -> PyResult<(f64, Vec<f64>, bool)> {
    if hyps.len() != refs.len() {
        return Err(OpcapError::new_err("hyps and refs differ in length"));
    }
    let c = metrics::cider(&hyps, &refs);
    Ok((c.score, c.per_sample, c.degenerate))
}

/// Micro-averaged `(precision, recall, f)` for `noun`, `verb` or
/// `verb_independent`, tagging tokens with a `token<TAB>tag` lexicon file.
#[pyfunction]
fn content_prf(hyps: Vec<Vec<String>>, refs: Vec<Vec<String>>, lexicon: PathBuf, class: &str) -> PyResult<(f64, f64, f64)> {
    let lex = PosLexicon::read(&lexicon).map_err(err)?;
    let p = metrics::content_word_prf(&hyps, &refs, &lex, parse::<PosClass>(class)?);
    Ok((p.precision, p.recall, p.f))
}

/// Mixing weight for `epoch` under a mode string such as `linear_int(0.9)`.
#[pyfunction]
fn alpha_schedule(epoch: usize, mode: &str) -> PyResult<f64> {
    let m: AlphaMode = parse(mode)?;
    m.validate().map_err(err)?;
    Ok(training::alpha_schedule(epoch, &m))
}

#[pyfunction]
#[pyo3(signature = (epoch, initial = 0.01, factor = 0.1, step_epochs = 20))]
fn lr_schedule(epoch: usize, initial: f64, factor: f64, step_epochs: usize) -> PyResult<f64> {
    let s = LrSchedule {
        initial,
        factor,
        step_epochs,
    };
    s.validate().map_err(err)?;
    Ok(s.at(epoch))
}

#[pyfunction]
fn normalize(text: &str) -> Vec<String> {
    dataset::normalize(text)
}

#[pyclass(module = "opcap_py", frozen)]
struct Vocabulary {
    inner: dataset::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    /// Reads a `vocab.txt` written by training.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Vocabulary {
            inner: dataset::Vocabulary::read(&path).map_err(err)?,
        })
    }

    /// Builds the training vocabulary of a dataset directory.
    #[staticmethod]
    #[pyo3(signature = (path, min_count = 1))]
    fn from_dataset(path: PathBuf, min_count: usize) -> PyResult<Self> {
        Ok(Vocabulary {
            inner: training::dataset_vocabulary(&path, min_count).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn id(&self, token: &str) -> u32 {
        self.inner.id(token)
    }

    fn token(&self, id: u32) -> Option<String> {
        self.inner.token(id).map(str::to_owned)
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    /// `[BOS, ids.., EOS, PAD..]` of length `max_len`.
    fn encode_caption(&self, text: &str, max_len: usize) -> Vec<u32> {
        dataset::tokenize_caption(text, &self.inner, max_len)
    }

    fn decode(&self, ids: Vec<u32>) -> Vec<String> {
        dataset::detokenize(&ids, &self.inner)
    }

    /// Flat `[s, r, o, ..., EOS, PAD..]` auxiliary targets for two states,
    /// each given as `(subject, relationship, object)` tuples.
    #[pyo3(signature = (graphs_a, graphs_b, mode = "all", max_triplets = 8))]
    fn scene_graph_targets(
        &self,
        graphs_a: Vec<(String, String, String)>,
        graphs_b: Vec<(String, String, String)>,
        mode: &str,
        max_triplets: usize,
    ) -> PyResult<Vec<u32>> {
        if max_triplets == 0 {
            return Err(OpcapError::new_err("max_triplets must be at least 1"));
        }
        let set = |g: Vec<(String, String, String)>| g.into_iter().map(|(s, r, o)| TripletLabels::new(s, r, o)).collect();
        let sample = StatePairSample {
            id: String::new(),
            image_a: String::new(),
            image_b: String::new(),
            viewpoint: Viewpoint::ThirdPerson,
            object_hint: String::new(),
            caption: String::new(),
            graphs_a: set(graphs_a),
            graphs_b: set(graphs_b),
        };
        Ok(dataset::scene_graph_targets(&sample, parse::<SgMode>(mode)?, &self.inner, max_triplets))
    }
}

/// Writes a synthetic dataset and returns its manifest checksum.
#[pyfunction]
#[pyo3(signature = (out, count = 1000, seed = 1, overrides = Vec::new()))]
fn generate_dataset(py: Python<'_>, out: PathBuf, count: usize, seed: u64, overrides: Vec<String>) -> PyResult<String> {
    let mut cfg: opcap::synthetic::GeneratorConfig =
        training::apply_overrides(&opcap::synthetic::GeneratorConfig::default(), &overrides).map_err(err)?;
    cfg.count = count;
    cfg.seed = seed;
    py.detach(|| opcap::synthetic::generate_dataset(&cfg, &out))
        .map(|m| m.checksum)
        .map_err(err)
}

/// `(t, frame_before, frame_after, (s, r, o), kind)` per extracted pair.
#[pyfunction]
#[pyo3(signature = (timeline, margin = 1.0))]
fn extract_state_pairs(timeline: PathBuf, margin: f64) -> PyResult<Vec<(f64, u64, u64, (String, String, String), String)>> {
    let tl = dataset::AnnotationTimeline::read(&timeline).map_err(err)?;
    let ex = dataset::extract_state_pairs(&tl, margin).map_err(err)?;
    Ok(ex
        .pairs
        .into_iter()
        .map(|p| {
            let t = p.triplet;
            (p.t, p.frame_before, p.frame_after, (t.subject, t.relationship, t.object), p.kind.to_string())
        })
        .collect())
}

/// Trains on a dataset directory and returns `(best_epoch, best_dev_bleu4)`.
#[pyfunction]
#[pyo3(signature = (data, out, config = None, overrides = Vec::new()))]
fn train(py: Python<'_>, data: PathBuf, out: PathBuf, config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<(usize, f64)> {
    let base = match config {
        Some(p) => TrainConfig::read(&p).map_err(err)?,
        None => TrainConfig::default(),
    };
    let mut cfg = base.with_overrides(&overrides).map_err(err)?;
    cfg.data = data.display().to_string();
    let o = py.detach(|| training::train(&data, &cfg, &out, |_| {})).map_err(err)?;
    Ok((o.best_epoch, o.best_dev_bleu4))
}

/// Scores a checkpoint on one split; returns the report row as a dict.
#[pyfunction]
#[pyo3(signature = (checkpoint, data, split = "test", strategy = "greedy", system = "model"))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    data: PathBuf,
    split: &str,
    strategy: &str,
    system: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = EvalOptions {
        split: parse(split)?,
        strategy: parse(strategy)?,
        system: system.to_string(),
        lexicon: None,
    };
    let ev = py.detach(|| metrics::evaluate(&checkpoint, &data, &opts)).map_err(err)?;
    let r = ev.report;
    let d = PyDict::new(py);
    d.set_item("system", &r.system)?;
    d.set_item("samples", r.samples)?;
    d.set_item("bleu", r.bleu.to_vec())?;
    d.set_item("corpus_bleu", r.corpus_bleu.to_vec())?;
    d.set_item("rouge_l", r.rouge_l)?;
    d.set_item("cider", r.cider)?;
    d.set_item("cider_degenerate", r.cider_degenerate)?;
    for class in PosClass::ALL {
        let p = r.prf(class);
        d.set_item(class.to_string(), (p.precision, p.recall, p.f))?;
    }
    d.set_item("captions", ev.captions)?;
    Ok(d)
}

/// A trained model loaded from a checkpoint.
#[pyclass(module = "opcap_py", frozen)]
struct Captioner {
    ck: Checkpoint,
}

#[pymethods]
impl Captioner {
    #[new]
    fn new(checkpoint: PathBuf) -> PyResult<Self> {
        Ok(Captioner {
            ck: Checkpoint::load(&checkpoint).map_err(err)?,
        })
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.ck.epoch
    }

    #[getter]
    fn dev_bleu4(&self) -> f64 {
        self.ck.dev_bleu4
    }

    #[getter]
    fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            inner: self.ck.vocab.clone(),
        }
    }

    /// Captions the change between two PNG files.
    #[pyo3(signature = (image_a, image_b, strategy = "greedy"))]
    fn caption(&self, py: Python<'_>, image_a: PathBuf, image_b: PathBuf, strategy: &str) -> PyResult<String> {
        let strategy: SearchStrategy = parse(strategy)?;
        let load = |p: &Path| dataset::load_image(p).map(|i| ImageInput::from_rgb(&i));
        let (a, b) = (load(&image_a).map_err(err)?, load(&image_b).map_err(err)?);
        let ids = py
            .detach(|| self.ck.model.caption(PairInput::Images(&a, &b), strategy))
            .map_err(err)?;
        Ok(dataset::detokenize(&ids, &self.ck.vocab).join(" "))
    }

    /// Role-masked triplet predictions of the auxiliary head.
    fn triplets(&self, image_a: PathBuf, image_b: PathBuf) -> PyResult<Vec<(String, String, String)>> {
        let load = |p: &Path| dataset::load_image(p).map(|i| ImageInput::from_rgb(&i));
        let (a, b) = (load(&image_a).map_err(err)?, load(&image_b).map_err(err)?);
        let masks = opcap::sg_head::RoleMasks::from_vocab(&self.ck.vocab);
        let pred = self.ck.model.predict_triplets(PairInput::Images(&a, &b), &masks).map_err(err)?;
        let tok = |id: u32| self.ck.vocab.token(id).unwrap_or("<unk>").to_string();
        Ok(pred
            .triplets
            .iter()
            .map(|t| (tok(t.subject), tok(t.relationship), tok(t.object)))
            .collect())
    }
}

#[pymodule]
fn opcap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("OpcapError", m.py().get_type::<OpcapError>())?;
    m.add_class::<Vocabulary>()?;
    m.add_class::<Captioner>()?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(cider, m)?)?;
    m.add_function(wrap_pyfunction!(content_prf, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(lr_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(extract_state_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
