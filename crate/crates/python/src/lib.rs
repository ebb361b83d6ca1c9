//! Python bindings: the KPI, k-NN imputer, SOM, warning rules, fault
//! classifier network and the energy helpers. Models cross the boundary as
//! plain lists, dicts or JSON strings.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pvmaint_core::fpm::nn::{train_nn, NnConfig, NnModel, TrainData};
use pvmaint_core::impute::{knn_impute as core_knn, ImputeConfig};
use pvmaint_core::metrics_econ::{self, ConfusionCounts};
use pvmaint_core::scada_data::{self, format_timestamp, InverterDatasheet, Tag};
use pvmaint_core::sdm::kpi::{kpi as core_kpi, OccupancyHistogram};
use pvmaint_core::sdm::som::{train_som, SomHyperParams, SomModel};
use pvmaint_core::sdm::warnings::{update_warnings as core_warnings, WarningConfig};
use pvmaint_core::synth::{self, SynthConfig};
use pvmaint_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Numeric(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn histogram(rows: usize, cols: usize, probs: Vec<f64>) -> PyResult<OccupancyHistogram> {
    OccupancyHistogram::from_probs(rows, cols, probs).map_err(py_err)
}

/// Similarity of two occupancy histograms given as row-major probabilities.
#[pyfunction]
fn kpi(rows: usize, cols: usize, train: Vec<f64>, test: Vec<f64>) -> PyResult<f64> {
    Ok(core_kpi(&histogram(rows, cols, train)?, &histogram(rows, cols, test)?))
}

/// Fills the `None` entries of `query` from the k nearest complete rows of
/// `reference`. Returns `(values, neighbor_indices)`.
#[pyfunction]
#[pyo3(signature = (query, reference, k = 5))]
fn knn_impute(query: Vec<Option<f64>>, reference: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let imp = core_knn(&query, &reference, &ImputeConfig { k }).map_err(py_err)?;
    Ok((imp.values, imp.neighbors))
}

/// Self-organizing map trained on scaled feature rows.
#[pyclass(name = "Som", module = "pvmaint")]
struct PySom {
    model: SomModel,
}

#[pymethods]
impl PySom {
    #[staticmethod]
    #[pyo3(signature = (data, rows = 20, cols = 20, epochs = 20, seed = 0))]
    fn train(data: Vec<Vec<f64>>, rows: usize, cols: usize, epochs: usize, seed: u64) -> PyResult<Self> {
        let hyper = SomHyperParams {
            rows,
            cols,
            epochs,
            radius_initial: SomHyperParams::default().radius_initial.min(rows.max(cols) as f64),
            seed,
            ..SomHyperParams::default()
        };
        Ok(PySom {
            model: train_som(&data, &hyper).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PySom {
            model: serde_json::from_str(text).map_err(json_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.model).map_err(json_err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.model.rows, self.model.cols)
    }

    fn bmu(&self, x: Vec<f64>) -> PyResult<(usize, usize)> {
        self.model.bmu(&x).map_err(py_err)
    }

    /// Normalized hit frequencies of `samples`, row-major.
    fn occupancy(&self, samples: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.model.occupancy(&samples).map_err(py_err)?.probs)
    }

    fn train_histogram(&self) -> Vec<f64> {
        self.model.train_histogram.probs.clone()
    }

    /// KPI of `samples` against the training occupancy.
    fn kpi(&self, samples: Vec<Vec<f64>>) -> PyResult<f64> {
        let test = self.model.occupancy(&samples).map_err(py_err)?;
        Ok(core_kpi(&self.model.train_histogram, &test))
    }
}

/// Warning level (0..=4) per day for a filtered KPI series.
#[pyfunction]
fn update_warnings(filtered: Vec<Option<f64>>, mu_train: f64, sigma_train: f64) -> PyResult<Vec<u32>> {
    let cfg = WarningConfig::new(mu_train, sigma_train).map_err(py_err)?;
    Ok(core_warnings(&filtered, &cfg).into_iter().map(|s| u32::from(s.level)).collect())
}

/// Fault/normal classifier network with Bayesian regularization.
#[pyclass(name = "NeuralNet", module = "pvmaint")]
struct PyNeuralNet {
    model: NnModel,
}

#[pymethods]
impl PyNeuralNet {
    #[staticmethod]
    #[pyo3(signature = (inputs, is_fault, hidden = 10, max_epochs = 400, seed = 0))]
    fn train(
        inputs: Vec<Vec<f64>>,
        is_fault: Vec<bool>,
        hidden: usize,
        max_epochs: usize,
        seed: u64,
    ) -> PyResult<Self> {
        if inputs.is_empty() {
            return Err(PyValueError::new_err("no training rows"));
        }
        let cfg = NnConfig {
            hidden,
            max_epochs,
            ..NnConfig::default()
        };
        let data = TrainData {
            inputs: &inputs,
            is_fault: &is_fault,
        };
        Ok(PyNeuralNet {
            model: train_nn(data, &cfg, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyNeuralNet {
            model: serde_json::from_str(text).map_err(json_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.model).map_err(json_err)
    }

    /// `(p_fault, p_normal)` for one input row.
    fn predict(&self, x: Vec<f64>) -> PyResult<(f64, f64)> {
        self.model.predict(&x).map_err(py_err)
    }

    fn predicts_fault(&self, x: Vec<f64>) -> PyResult<bool> {
        self.model.predicts_fault(&x).map_err(py_err)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.model.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.model.beta
    }

    #[getter]
    fn epochs_run(&self) -> usize {
        self.model.epochs_run
    }
}

/// Theoretical AC power in kW.
#[pyfunction]
#[pyo3(signature = (gti, t_cell, p_nom_kw, gamma_pct_per_c, max_active_power_kw = None))]
fn theoretical_power(
    gti: f64,
    t_cell: f64,
    p_nom_kw: f64,
    gamma_pct_per_c: f64,
    max_active_power_kw: Option<f64>,
) -> PyResult<f64> {
    let ds = InverterDatasheet {
        p_nom_kw,
        gamma_pct_per_c,
        max_active_power_kw: max_active_power_kw.unwrap_or(p_nom_kw),
        tag_ranges: Default::default(),
    };
    ds.validate().map_err(py_err)?;
    Ok(metrics_econ::theoretical_power(gti, t_cell, &ds))
}

/// Cumulative lost production in kWh at each sample.
#[pyfunction]
#[pyo3(signature = (p_th, p_ac, step_minutes = 5.0))]
fn lost_production(p_th: Vec<f64>, p_ac: Vec<Option<f64>>, step_minutes: f64) -> PyResult<Vec<f64>> {
    metrics_econ::lost_production(&p_th, &p_ac, step_minutes).map_err(py_err)
}

/// Accuracy, sensitivity and specificity; `None` where undefined.
#[pyfunction]
fn classification_metrics<'py>(py: Python<'py>, tp: u64, fn_: u64, tn: u64, fp: u64) -> PyResult<Bound<'py, PyDict>> {
    let m = metrics_econ::metrics(&ConfusionCounts { tp, fn_, tn, fp });
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("sensitivity", m.sensitivity)?;
    d.set_item("specificity", m.specificity)?;
    Ok(d)
}

/// Runs the synthetic plant generator on a JSON config. With `out_dir` the
/// four input files are written there. Returns a dict with the SCADA rows and
/// the serialized files.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir = None))]
fn generate_synthetic<'py>(py: Python<'py>, config_json: &str, out_dir: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SynthConfig::from_json(config_json).map_err(py_err)?;
    let out = synth::generate(&cfg).map_err(py_err)?;
    if let Some(dir) = out_dir {
        synth::write_to_dir(&out, dir).map_err(py_err)?;
    }
    let d = PyDict::new(py);
    d.set_item("records", records_dict(py, &out.records)?)?;
    d.set_item("n_events", out.events.len())?;
    d.set_item("scada_csv", out.scada_csv)?;
    d.set_item("logbook_csv", out.logbook_csv)?;
    d.set_item("taxonomy_csv", out.taxonomy_csv)?;
    d.set_item("datasheet_json", out.datasheet_json)?;
    Ok(d)
}

/// Reads a SCADA CSV into a column dict: `timestamp` plus one list per tag,
/// with `None` for missing values.
#[pyfunction]
fn load_scada_csv<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyDict>> {
    let records = scada_data::load_scada_csv(path).map_err(py_err)?;
    records_dict(py, &records)
}

fn records_dict<'py>(py: Python<'py>, records: &[scada_data::ScadaRecord]) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let ts: Vec<String> = records.iter().map(|r| format_timestamp(&r.timestamp)).collect();
    d.set_item("timestamp", ts)?;
    for tag in Tag::ALL {
        let col: Vec<Option<f64>> = records.iter().map(|r| r.get(tag)).collect();
        d.set_item(tag.name(), col)?;
    }
    Ok(d)
}

#[pymodule]
fn pvmaint(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(kpi, m)?)?;
    m.add_function(wrap_pyfunction!(knn_impute, m)?)?;
    m.add_function(wrap_pyfunction!(update_warnings, m)?)?;
    m.add_function(wrap_pyfunction!(theoretical_power, m)?)?;
    m.add_function(wrap_pyfunction!(lost_production, m)?)?;
    m.add_function(wrap_pyfunction!(classification_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_scada_csv, m)?)?;
    m.add_class::<PySom>()?;
    m.add_class::<PyNeuralNet>()?;
    Ok(())
}
