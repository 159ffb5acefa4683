//! Python bindings: graphs, splits, training, evaluation, t-tests and the
//! experiment runner.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use slnlink::eval::{paired_t_one_sided, TTestResult};
use slnlink::experiments::{self, ExperimentReport, ExperimentSpec, RunOptions};
use slnlink::graph::Pair;
use slnlink::model::{forward, load_params, save_params, score_pairs};
use slnlink::splits::{make_split, SplitConfig, SplitPlan};
use slnlink::train::{grad_check as core_grad_check, GradCheckOptions};
use slnlink::{
    generate_synthetic_sln, load_edge_csv, merge, save_edge_csv, train, weighted_bce as core_bce, welch_t_one_sided,
    DatasetManifest, Error, GeneratorConfig, ModelParams, SnapshotView, TemporalGraph, TiePolicy, TrainConfig,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn ties(name: &str) -> PyResult<TiePolicy> {
    name.parse().map_err(PyValueError::new_err)
}

/// A temporal interaction graph of one or more classrooms.
#[pyclass(name = "TemporalGraph", module = "slnlink")]
struct PyGraph {
    inner: TemporalGraph,
}

#[pymethods]
impl PyGraph {
    /// Generates a shipped synthetic classroom preset.
    #[staticmethod]
    #[pyo3(signature = (name, students = None, seed = None, tag = None))]
    fn preset(name: &str, students: Option<usize>, seed: Option<u64>, tag: Option<String>) -> PyResult<Self> {
        let mut cfg = GeneratorConfig::preset(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))?;
        if let Some(n) = students {
            cfg = cfg.scaled_to(n);
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let tag = tag.unwrap_or_else(|| name.to_string());
        Ok(Self {
            inner: generate_synthetic_sln(&cfg, &tag).map_err(to_py)?,
        })
    }

    /// Reads an edge CSV (`src,dst,week`).
    #[staticmethod]
    fn load_csv(path: PathBuf, duration_weeks: f64, tag: String) -> PyResult<Self> {
        let manifest = DatasetManifest::new(tag, path, duration_weeks);
        Ok(Self {
            inner: load_edge_csv(&manifest).map_err(to_py)?,
        })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        save_edge_csv(&self.inner, &path).map_err(to_py)
    }

    /// Disjoint union, node indices shifted in list order.
    #[staticmethod]
    fn merge(graphs: Vec<PyRef<'_, PyGraph>>) -> PyResult<Self> {
        let owned: Vec<TemporalGraph> = graphs.iter().map(|g| g.inner.clone()).collect();
        Ok(Self {
            inner: merge(&owned).map_err(to_py)?,
        })
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn num_events(&self) -> usize {
        self.inner.events().len()
    }

    #[getter]
    fn tags(&self) -> Vec<String> {
        self.inner.provenance().iter().map(|s| s.tag.clone()).collect()
    }

    /// Distinct edges present at `progress`, lexicographically ordered.
    fn snapshot_edges(&self, progress: f64) -> PyResult<Vec<Pair>> {
        Ok(self.inner.snapshot(progress).map_err(to_py)?.edges().collect())
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.inner.stats();
        let d = PyDict::new(py);
        d.set_item("nodes", s.nodes)?;
        d.set_item("distinct_edges", s.distinct_edges)?;
        d.set_item("events", s.events)?;
        d.set_item("duration_weeks", s.duration_weeks)?;
        d.set_item("density", s.density)?;
        d.set_item("degree_min", s.degree_min)?;
        d.set_item("degree_median", s.degree_median)?;
        d.set_item("degree_max", s.degree_max)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "TemporalGraph(tags={:?}, nodes={}, events={})",
            self.tags(),
            self.inner.num_nodes(),
            self.inner.events().len()
        )
    }
}

/// An observed snapshot with its future links dealt into k folds.
#[pyclass(name = "SplitPlan", module = "slnlink")]
struct PySplit {
    inner: SplitPlan,
}

#[pymethods]
impl PySplit {
    #[getter]
    fn progress(&self) -> f64 {
        self.inner.progress
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn positives(&self) -> Vec<Pair> {
        self.inner.positives.clone()
    }

    #[getter]
    fn observed_edges(&self) -> Vec<Pair> {
        self.inner.observed.edges().collect()
    }

    /// `{"train_positives", "test_positives", "test_negatives"}` for one fold.
    fn fold<'py>(&self, py: Python<'py>, fold: usize) -> PyResult<Bound<'py, PyDict>> {
        let t = self.inner.fold_task(fold).map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("train_positives", t.train_positives)?;
        d.set_item("test_positives", t.test_positives)?;
        d.set_item("test_negatives", t.test_negatives)?;
        Ok(d)
    }
}

/// Builds a temporal k-fold split at `progress`.
#[pyfunction]
#[pyo3(signature = (graph, progress, k = 10, seed = 42))]
fn split(graph: &PyGraph, progress: f64, k: usize, seed: u64) -> PyResult<PySplit> {
    Ok(PySplit {
        inner: make_split(&graph.inner, &SplitConfig::new(progress, k, seed)).map_err(to_py)?,
    })
}

/// Trained parameters together with the snapshot they propagate over.
#[pyclass(name = "Model", module = "slnlink")]
struct PyModel {
    params: ModelParams,
    snapshot: SnapshotView,
    #[pyo3(get)]
    loss_history: Vec<f64>,
    #[pyo3(get)]
    warnings: Vec<String>,
}

#[pymethods]
impl PyModel {
    /// Raw dot-product scores and sigmoid probabilities for `pairs`.
    fn score(&self, pairs: Vec<Pair>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let trace = forward(&self.params, &self.snapshot).map_err(to_py)?;
        let s = score_pairs(&trace, &pairs).map_err(to_py)?;
        Ok((s.raw, s.prob))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_params(&self.params, &path).map_err(to_py)
    }

    /// Loads a checkpoint to score over `plan`'s observed snapshot.
    #[staticmethod]
    fn load(path: PathBuf, plan: &PySplit) -> PyResult<Self> {
        Ok(Self {
            params: load_params(&path).map_err(to_py)?,
            snapshot: plan.inner.observed.clone(),
            loss_history: Vec::new(),
            warnings: Vec::new(),
        })
    }
}

/// Trains on one fold's training positives; releases the GIL while running.
#[pyfunction]
#[pyo3(signature = (plan, fold, epochs = 1500, learning_rate = 5e-4, pcw = 20.0, seed = 42, final_activation = true))]
#[allow(clippy::too_many_arguments)]
fn train_fold(
    py: Python<'_>,
    plan: &PySplit,
    fold: usize,
    epochs: usize,
    learning_rate: f64,
    pcw: f64,
    seed: u64,
    final_activation: bool,
) -> PyResult<PyModel> {
    let cfg = TrainConfig {
        epochs,
        learning_rate,
        pcw,
        seed,
        final_activation,
        ..TrainConfig::default()
    };
    let plan = &plan.inner;
    let outcome = py
        .detach(|| {
            let task = plan.fold_task(fold)?;
            train(
                &plan.observed,
                &task.train_positives,
                &plan.training_exclusions(&task),
                &cfg,
                Default::default(),
            )
        })
        .map_err(to_py)?;
    Ok(PyModel {
        params: outcome.params,
        snapshot: plan.observed.clone(),
        loss_history: outcome.history.iter().map(|l| l.total_loss).collect(),
        warnings: outcome.warnings,
    })
}

/// Test AUC and counts for one fold.
#[pyfunction]
#[pyo3(signature = (model, plan, fold, ties = "half"))]
fn evaluate_fold<'py>(
    py: Python<'py>,
    model: &PyModel,
    plan: &PySplit,
    fold: usize,
    ties: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let task = plan.inner.fold_task(fold).map_err(to_py)?;
    let r = slnlink::evaluate_fold(&model.params, &plan.inner.observed, &task, self::ties(ties)?).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("auc", r.auc)?;
    d.set_item("n_pos", r.n_pos)?;
    d.set_item("n_neg", r.n_neg)?;
    d.set_item("true_positives", r.confusion.true_positives)?;
    d.set_item("false_positives", r.confusion.false_positives)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (pos, neg, ties = "half"))]
fn auc(pos: Vec<f64>, neg: Vec<f64>, ties: &str) -> PyResult<f64> {
    slnlink::eval::auc(&pos, &neg, self::ties(ties)?).map_err(to_py)
}

/// Imbalance-weighted BCE on raw scores.
#[pyfunction]
#[pyo3(signature = (s_pos, s_neg, pcw = 20.0))]
fn weighted_bce(s_pos: Vec<f64>, s_neg: Vec<f64>, pcw: f64) -> f64 {
    core_bce(&s_pos, &s_neg, pcw).total_loss
}

fn ttest_dict<'py>(py: Python<'py>, r: TTestResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", r.t_statistic)?;
    d.set_item("df", r.degrees_of_freedom)?;
    d.set_item("p", r.p_value)?;
    d.set_item("alpha", r.alpha)?;
    d.set_item("decision", r.decision.to_string())?;
    Ok(d)
}

/// One-sided Welch test of mean(a) > mean(b).
#[pyfunction]
#[pyo3(signature = (a, b, alpha = 0.10))]
fn welch_t_test<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>, alpha: f64) -> PyResult<Bound<'py, PyDict>> {
    ttest_dict(py, welch_t_one_sided(&a, &b, alpha).map_err(to_py)?)
}

/// One-sided paired test of mean(a - b) > 0.
#[pyfunction]
#[pyo3(signature = (a, b, alpha = 0.10))]
fn paired_t_test<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>, alpha: f64) -> PyResult<Bound<'py, PyDict>> {
    ttest_dict(py, paired_t_one_sided(&a, &b, alpha).map_err(to_py)?)
}

/// Finite-difference gradient check; returns (passed, max relative error).
#[pyfunction]
#[pyo3(signature = (size = 8, seed = 1, tolerance = 1e-4))]
fn grad_check(size: usize, seed: u64, tolerance: f64) -> PyResult<(bool, f64)> {
    let r = core_grad_check(&GradCheckOptions {
        graph_size: size,
        seed,
        tolerance,
        ..GradCheckOptions::default()
    })
    .map_err(to_py)?;
    let worst = r.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    Ok((r.passed, worst))
}

/// Runs a TOML experiment spec and returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (spec_toml, base_dir = PathBuf::from("."), cache_dir = None, jobs = 1))]
fn run_experiment(
    py: Python<'_>,
    spec_toml: &str,
    base_dir: PathBuf,
    cache_dir: Option<PathBuf>,
    jobs: usize,
) -> PyResult<String> {
    let spec = ExperimentSpec::from_toml(spec_toml, &base_dir.join("<spec>")).map_err(to_py)?;
    let opts = RunOptions {
        resume: cache_dir.is_some(),
        cache_dir,
        jobs,
    };
    let report = py
        .detach(|| experiments::run_matrix(&spec, &base_dir, &opts))
        .map_err(to_py)?;
    report.to_json().map_err(to_py)
}

/// Renders the AUC grid and t-test rows of a JSON report.
#[pyfunction]
fn render_tables(report_json: &str) -> PyResult<String> {
    let report = ExperimentReport::from_json(report_json).map_err(to_py)?;
    Ok(experiments::render_tables(&report))
}

#[pymodule]
#[pyo3(name = "slnlink")]
fn slnlink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PySplit>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(train_fold, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_fold, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_bce, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(render_tables, m)?)?;
    Ok(())
}
