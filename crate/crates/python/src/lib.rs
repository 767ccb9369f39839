//! Python bindings for the heartvec pipeline.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use heartvec::eval::evaluate_at;
use heartvec::pipeline::{cmd_score, cmd_train};
use heartvec::{
    extract_mfcc, load_reference, sweep_curve, AudioRecord, Error, EvalWeights, Label, LabelTable, MfccConfig,
    PipelineConfig, Quality,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e.root() {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn config_from(text: Option<&str>) -> PyResult<PipelineConfig> {
    let mut c = PipelineConfig::default();
    if let Some(t) = text {
        c.apply_text(t).map_err(to_py)?;
    }
    Ok(c)
}

/// MFCC matrix (frames × 12) of a mono signal in [-1, 1].
#[pyfunction]
#[pyo3(signature = (samples, sample_rate_hz = 2000))]
fn mfcc(samples: Vec<f64>, sample_rate_hz: u32) -> PyResult<Vec<Vec<f64>>> {
    let rec = AudioRecord::new("py", samples, sample_rate_hz).map_err(to_py)?;
    let config = MfccConfig {
        sample_rate_hz,
        ..Default::default()
    };
    Ok(extract_mfcc(&rec, &config).map_err(to_py)?.to_rows())
}

/// Trains a bundle; `config` is optional `key = value` text. Returns the
/// number of training records.
#[pyfunction]
#[pyo3(signature = (data_dir, labels_file, out_dir, config = None))]
fn train(data_dir: PathBuf, labels_file: PathBuf, out_dir: PathBuf, config: Option<&str>) -> PyResult<usize> {
    let cfg = config_from(config)?;
    Ok(cmd_train(data_dir, labels_file, &cfg, out_dir).map_err(to_py)?.records)
}

/// Scores a directory of WAVs with a trained bundle.
#[pyfunction]
fn score(data_dir: PathBuf, bundle_dir: PathBuf, out_file: PathBuf) -> PyResult<HashMap<String, f64>> {
    Ok(cmd_score(data_dir, bundle_dir, out_file)
        .map_err(to_py)?
        .into_iter()
        .collect())
}

fn table_from(labels: HashMap<String, (i32, bool)>) -> PyResult<LabelTable> {
    let mut t = LabelTable::new();
    for (id, (code, good)) in labels {
        let label = match code {
            -1 => Label::Normal,
            1 => Label::Abnormal,
            _ => return Err(PyValueError::new_err(format!("label for {id} must be -1 or 1"))),
        };
        let q = if good { Quality::Good } else { Quality::Poor };
        t.insert(id, label, q).map_err(to_py)?;
    }
    Ok(t)
}

/// `(Se, Sp, MAcc, threshold)`. Labels map id to `(code, good_quality)`
/// with code -1 normal and 1 abnormal. Without a threshold the best
/// operating point of a full sweep is returned.
#[pyfunction]
#[pyo3(signature = (scores, labels, threshold = None, weights = None))]
fn evaluate(
    scores: HashMap<String, f64>,
    labels: HashMap<String, (i32, bool)>,
    threshold: Option<f64>,
    weights: Option<(f64, f64, f64, f64)>,
) -> PyResult<(f64, f64, f64, f64)> {
    let scores: BTreeMap<String, f64> = scores.into_iter().collect();
    let table = table_from(labels)?;
    let w = match weights {
        Some((a, b, c, d)) => EvalWeights::new(a, b, c, d).map_err(to_py)?,
        None => EvalWeights::default(),
    };
    let r = match threshold {
        Some(t) => evaluate_at(&scores, &table, &w, t),
        None => sweep_curve(&scores, &table, &w, 2),
    }
    .map_err(to_py)?;
    Ok((r.se, r.sp, r.macc, r.threshold))
}

/// Reads a `REFERENCE.csv`-style file into the mapping `evaluate` expects.
#[pyfunction]
fn read_labels(path: PathBuf) -> PyResult<HashMap<String, (i32, bool)>> {
    let t = load_reference(path).map_err(to_py)?;
    Ok(t.iter()
        .map(|(id, l, q)| {
            let code = if l == Label::Normal { -1 } else { 1 };
            (id.to_string(), (code, q == Quality::Good))
        })
        .collect())
}

#[pymodule]
#[pyo3(name = "heartvec")]
fn heartvec_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mfcc, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(read_labels, m)?)?;
    Ok(())
}
