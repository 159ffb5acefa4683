//! Experiment matrix: iso and combined training over datasets and progress
//! points, t-tests between the two modes, and report tables.
//!
//! Spec files are TOML:
//!
//! ```toml
//! master_seed = 42
//! progress_points = [0.25, 0.75]
//! modes = ["iso", "combined"]
//! k = 10
//!
//! [train]
//! epochs = 1500
//!
//! [[datasets]]
//! tag = "vs"
//! preset = "vs-like"
//!
//! [[datasets]]
//! tag = "cs101"
//! path = "data/cs101.csv"
//! duration_weeks = 8
//! ```
//!
//! A dataset is a shipped preset (optionally rescaled with `students` and
//! reseeded with `seed`), an inline `[datasets.generator]` table, or an edge
//! CSV with its manifest fields.
//!
//! Cache layout: `<cache_dir>/<key>.json`, one file per cell, where `key` is
//! the SHA-256 of the cell's dataset contents, seeds and every setting that
//! influences its result.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{evaluate_fold, paired_t_one_sided, welch_t_one_sided, Confusion, TTestResult, TiePolicy};
use crate::graph::{merge, GraphStats, Pair, TemporalGraph};
use crate::io::{load_edge_csv, render_grid, DatasetManifest};
use crate::model::Dims;
use crate::seed;
use crate::splits::{make_split, FoldTask, Horizon, NegativeCount, PairSet, SplitConfig, SplitPlan};
use crate::synth::{generate_synthetic_sln, GeneratorConfig};
use crate::train::{train, train_grouped, NegativeGroup, TrainConfig};

pub const REPORT_FORMAT: &str = "slnlink-report v1";
const CELL_FORMAT: &str = "slnlink-cell v1";
const MISSING: &str = "—";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Iso,
    Combined,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Iso => "GNN iso",
            Mode::Combined => "GNN all",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Iso => "iso",
            Mode::Combined => "combined",
        })
    }
}

/// One `[[datasets]]` entry.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Rescales a preset to this many students.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub students: Option<usize>,
    /// Overrides the generator seed of a preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_weeks: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_events: Option<usize>,
}

/// Where a dataset's graph comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Generator(GeneratorConfig),
    File(DatasetManifest),
}

impl DatasetEntry {
    pub fn preset(tag: &str, preset: &str) -> Self {
        Self {
            tag: tag.into(),
            preset: Some(preset.into()),
            ..Self::default()
        }
    }

    pub fn source(&self, base_dir: &Path) -> Result<DatasetSource> {
        let bad = |msg: String| Err(Error::config("experiments", format!("dataset {:?}: {msg}", self.tag)));
        let kinds = [self.preset.is_some(), self.generator.is_some(), self.path.is_some()];
        if kinds.iter().filter(|&&k| k).count() != 1 {
            return bad("give exactly one of preset, generator or path".into());
        }
        let file_fields = self.duration_weeks.is_some() || self.expected_nodes.is_some() || self.expected_events.is_some();
        if self.path.is_none() && file_fields {
            return bad("duration_weeks and expected_* apply to path datasets only".into());
        }
        if self.preset.is_none() && (self.students.is_some() || self.seed.is_some()) {
            return bad("students and seed apply to preset datasets only".into());
        }
        if let Some(name) = &self.preset {
            let Some(mut cfg) = GeneratorConfig::preset(name) else {
                return bad(format!("unknown preset {name:?}"));
            };
            if let Some(n) = self.students {
                cfg = cfg.scaled_to(n);
            }
            if let Some(s) = self.seed {
                cfg.seed = s;
            }
            return Ok(DatasetSource::Generator(cfg));
        }
        if let Some(cfg) = &self.generator {
            return Ok(DatasetSource::Generator(cfg.clone()));
        }
        let path = self.path.clone().unwrap_or_default();
        let Some(duration) = self.duration_weeks else {
            return bad("path datasets need duration_weeks".into());
        };
        let mut manifest = DatasetManifest::new(self.tag.clone(), base_dir.join(path), duration);
        manifest.expected_nodes = self.expected_nodes;
        manifest.expected_events = self.expected_events;
        Ok(DatasetSource::File(manifest))
    }

    pub fn load(&self, base_dir: &Path) -> Result<TemporalGraph> {
        match self.source(base_dir)? {
            DatasetSource::Generator(cfg) => generate_synthetic_sln(&cfg, &self.tag),
            DatasetSource::File(manifest) => load_edge_csv(&manifest),
        }
    }
}

fn default_progress() -> Vec<f64> {
    vec![0.25, 0.5, 0.75, 0.9]
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Iso]
}

fn default_k() -> usize {
    10
}

fn default_alpha() -> f64 {
    0.10
}

fn default_master_seed() -> u64 {
    42
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub datasets: Vec<DatasetEntry>,
    #[serde(default = "default_progress")]
    pub progress_points: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub dims: Dims,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub tie_policy: TiePolicy,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default)]
    pub horizon: Horizon,
    #[serde(default)]
    pub eval_negatives: NegativeCount,
    /// Tags merged in combined mode; all datasets when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combine_with: Option<Vec<String>>,
    /// Tags that get combined-mode cells; every merged tag when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combined_targets: Option<Vec<String>>,
}

impl ExperimentSpec {
    /// Spec with every default and the given datasets.
    pub fn new(datasets: Vec<DatasetEntry>) -> Self {
        Self {
            datasets,
            progress_points: default_progress(),
            modes: default_modes(),
            k: default_k(),
            dims: Dims::default(),
            train: TrainConfig::default(),
            tie_policy: TiePolicy::default(),
            alpha: default_alpha(),
            master_seed: default_master_seed(),
            horizon: Horizon::default(),
            eval_negatives: NegativeCount::default(),
            combine_with: None,
            combined_targets: None,
        }
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e
                .span()
                .map(|s| text[..s.start].matches('\n').count() + 1)
                .unwrap_or(0),
            message: e.message().to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde {
            component: "experiments",
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config("experiments", msg));
        if self.datasets.is_empty() {
            return bad("spec lists no datasets".into());
        }
        let mut tags = HashSet::new();
        for d in &self.datasets {
            if d.tag.is_empty() {
                return bad("dataset tag must be non-empty".into());
            }
            if !tags.insert(d.tag.as_str()) {
                return Err(Error::DuplicateTag(d.tag.clone()));
            }
            d.source(Path::new(""))?;
        }
        if self.progress_points.is_empty() {
            return bad("progress_points is empty".into());
        }
        for (i, &p) in self.progress_points.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::ProgressOutOfRange(p));
            }
            if self.progress_points[..i].contains(&p) {
                return bad(format!("progress point {p} listed twice"));
            }
        }
        if self.modes.is_empty() {
            return bad("modes is empty".into());
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.dims.input == 0 || self.dims.hidden == 0 || self.dims.output == 0 {
            return bad("dims must be at least 1".into());
        }
        self.train.validate()?;
        for list in [&self.combine_with, &self.combined_targets].into_iter().flatten() {
            if let Some(t) = list.iter().find(|t| !tags.contains(t.as_str())) {
                return Err(Error::UnknownTag(t.clone()));
            }
        }
        if self.modes.contains(&Mode::Combined) {
            let merged = self.combine_tags();
            if merged.len() < 2 {
                return bad("combined mode needs at least two datasets".into());
            }
            if let Some(t) = self.combined_target_tags().iter().find(|t| !merged.contains(t)) {
                return bad(format!("combined target {t:?} is not among the merged datasets"));
            }
        }
        Ok(())
    }

    fn combine_tags(&self) -> Vec<String> {
        self.combine_with
            .clone()
            .unwrap_or_else(|| self.datasets.iter().map(|d| d.tag.clone()).collect())
    }

    fn combined_target_tags(&self) -> Vec<String> {
        self.combined_targets.clone().unwrap_or_else(|| self.combine_tags())
    }

    /// Generates or loads every dataset, in spec order.
    pub fn load_datasets(&self, base_dir: &Path) -> Result<Vec<TemporalGraph>> {
        self.datasets.iter().map(|d| d.load(base_dir)).collect()
    }

    /// Split seed shared by every mode for `(tag, progress)`.
    pub fn split_seed(&self, tag: &str, progress: f64) -> u64 {
        seed::derive(self.master_seed, &["split", tag, &progress.to_string()])
    }

    pub fn train_seed(&self, mode: Mode, tag: &str, progress: f64, fold: usize) -> u64 {
        seed::derive(
            self.master_seed,
            &["train", &mode.to_string(), tag, &progress.to_string(), &fold.to_string()],
        )
    }

    fn split_config(&self, tag: &str, progress: f64) -> SplitConfig {
        SplitConfig {
            progress,
            horizon: self.horizon,
            k: self.k,
            eval_negatives: self.eval_negatives,
            seed: self.split_seed(tag, progress),
        }
    }
}

/// Outcome of one training/evaluation fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub confusion: Confusion,
    pub final_loss: f64,
    pub train_seed: u64,
    /// SHA-256 of the sorted test positives in target-local indices.
    pub test_positive_digest: String,
}

/// Fold results of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub split_seed: u64,
    pub folds: Vec<FoldResult>,
    pub warnings: Vec<String>,
}

impl CellRun {
    pub fn aucs(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.auc).collect()
    }
}

fn pairs_digest(pairs: &[Pair], offset: usize) -> String {
    let mut local: Vec<Pair> = pairs.iter().map(|&(a, b)| (a - offset, b - offset)).collect();
    local.sort_unstable();
    let mut h = Sha256::new();
    for (a, b) in local {
        h.update((a as u64).to_le_bytes());
        h.update((b as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn single_tag(graph: &TemporalGraph) -> String {
    graph
        .provenance()
        .iter()
        .map(|s| s.tag.as_str())
        .collect::<Vec<_>>()
        .join("+")
}

/// Re-trains once per fold on a single classroom and evaluates each fold.
pub fn run_iso(graph: &TemporalGraph, progress: f64, spec: &ExperimentSpec) -> Result<CellRun> {
    let tag = single_tag(graph);
    let cell = |e: Error| e.context(format!("iso cell {tag} at progress {progress}"));
    let plan = make_split(graph, &spec.split_config(&tag, progress)).map_err(cell)?;
    let mut run = CellRun {
        split_seed: plan.seed,
        folds: Vec::with_capacity(spec.k),
        warnings: Vec::new(),
    };
    for f in 0..spec.k {
        let task = plan.fold_task(f).map_err(cell)?;
        let exclusions = plan.training_exclusions(&task);
        let cfg = TrainConfig {
            seed: spec.train_seed(Mode::Iso, &tag, progress, f),
            ..spec.train.clone()
        };
        let outcome = train(&plan.observed, &task.train_positives, &exclusions, &cfg, spec.dims).map_err(cell)?;
        let report = evaluate_fold(&outcome.params, &plan.observed, &task, spec.tie_policy).map_err(cell)?;
        run.warnings
            .extend(outcome.warnings.iter().map(|w| format!("fold {f}: {w}")));
        run.folds.push(FoldResult {
            fold: f,
            auc: report.auc,
            n_pos: report.n_pos,
            n_neg: report.n_neg,
            confusion: report.confusion,
            final_loss: outcome.history.last().map_or(f64::NAN, |l| l.total_loss),
            train_seed: cfg.seed,
            test_positive_digest: pairs_digest(&task.test_positives, 0),
        });
    }
    Ok(run)
}

fn offset_pairs(pairs: &[Pair], offset: usize) -> Vec<Pair> {
    pairs.iter().map(|&(a, b)| (a + offset, b + offset)).collect()
}

/// Trains on the disjoint union of `graphs` and evaluates on `target` only.
///
/// Every classroom is split on its own with the seed iso mode uses, so the
/// target's test folds (positives and negatives) are exactly those of the
/// iso cell. Fold `f` trains on every classroom's fold-`f` training
/// positives; negatives are drawn within each classroom's own node block in
/// proportion to its positives.
pub fn run_combined(graphs: &[TemporalGraph], target: &str, progress: f64, spec: &ExperimentSpec) -> Result<CellRun> {
    let cell = |e: Error| e.context(format!("combined cell {target} at progress {progress}"));
    if graphs.len() < 2 {
        return Err(cell(Error::config(
            "experiments",
            format!("combined mode needs at least two datasets, got {}", graphs.len()),
        )));
    }
    let merged = merge(graphs).map_err(cell)?;
    let target_range = merged.source(target).map_err(cell)?.clone();
    let mut warnings = Vec::new();
    // (plan, node offset, node count) per classroom with something to predict
    let mut plans: Vec<(SplitPlan, usize, usize)> = Vec::new();
    let mut target_plan = None;
    let mut offset = 0;
    for g in graphs {
        let tag = single_tag(g);
        match make_split(g, &spec.split_config(&tag, progress)) {
            Ok(plan) if tag == target => {
                target_plan = Some(plans.len());
                plans.push((plan, offset, g.num_nodes()));
            }
            Ok(plan) => plans.push((plan, offset, g.num_nodes())),
            Err(e) if tag == target => return Err(cell(e.context(format!("target dataset {tag}")))),
            Err(Error::NothingToPredict { .. }) => {
                warnings.push(format!("dataset {tag} has no future links at progress {progress}; it contributes structure only"));
            }
            Err(e) => return Err(cell(e.context(format!("dataset {tag}")))),
        }
        offset += g.num_nodes();
    }
    let target_plan = target_plan.ok_or_else(|| cell(Error::UnknownTag(target.into())))?;
    let observed = merged.snapshot(progress).map_err(cell)?;
    let mut base_exclusions = PairSet::new();
    for (plan, off, _) in &plans {
        base_exclusions.extend(plan.target.edges().map(|(a, b)| (a + off, b + off)));
    }

    let mut run = CellRun {
        split_seed: plans[target_plan].0.seed,
        folds: Vec::with_capacity(spec.k),
        warnings,
    };
    for f in 0..spec.k {
        let local = plans[target_plan].0.fold_task(f).map_err(cell)?;
        let test_positives = offset_pairs(&local.test_positives, target_range.start);
        let test_negatives = offset_pairs(&local.test_negatives, target_range.start);
        debug_assert_eq!(merged.restrict_pairs(target, &test_positives).unwrap(), test_positives);
        debug_assert_eq!(merged.restrict_pairs(target, &test_negatives).unwrap(), test_negatives);

        let mut train_positives = Vec::new();
        let mut groups = Vec::new();
        for (plan, off, len) in &plans {
            let pos = plan.train_positives(f);
            if pos.is_empty() {
                continue;
            }
            groups.push(NegativeGroup {
                nodes: *off..off + len,
                count: ((spec.train.train_negative_ratio * pos.len() as f64).round() as usize).max(1),
            });
            train_positives.extend(offset_pairs(&pos, *off));
        }
        let mut exclusions = base_exclusions.clone();
        exclusions.extend(test_negatives.iter().copied());
        let cfg = TrainConfig {
            seed: spec.train_seed(Mode::Combined, target, progress, f),
            ..spec.train.clone()
        };
        let outcome = train_grouped(&observed, &train_positives, &exclusions, &groups, &cfg, spec.dims).map_err(cell)?;
        let task = FoldTask {
            fold_index: f,
            train_positives,
            test_positives,
            test_negatives,
        };
        let report = evaluate_fold(&outcome.params, &observed, &task, spec.tie_policy).map_err(cell)?;
        run.warnings
            .extend(outcome.warnings.iter().map(|w| format!("fold {f}: {w}")));
        run.folds.push(FoldResult {
            fold: f,
            auc: report.auc,
            n_pos: report.n_pos,
            n_neg: report.n_neg,
            confusion: report.confusion,
            final_loss: outcome.history.last().map_or(f64::NAN, |l| l.total_loss),
            train_seed: cfg.seed,
            test_positive_digest: pairs_digest(&task.test_positives, target_range.start),
        });
    }
    Ok(run)
}

/// SHA-256 of a graph's node count, provenance and event list.
pub fn graph_digest(graph: &TemporalGraph) -> String {
    let mut h = Sha256::new();
    h.update((graph.num_nodes() as u64).to_le_bytes());
    for s in graph.provenance() {
        h.update((s.tag.len() as u64).to_le_bytes());
        h.update(s.tag.as_bytes());
        h.update((s.start as u64).to_le_bytes());
        h.update((s.len as u64).to_le_bytes());
        h.update(s.duration_weeks.to_bits().to_le_bytes());
    }
    for e in graph.events() {
        h.update((e.u as u64).to_le_bytes());
        h.update((e.v as u64).to_le_bytes());
        h.update(e.timestamp.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub tag: String,
    pub stats: GraphStats,
    pub digest: String,
}

/// One (dataset, progress, mode) cell of the matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub progress: f64,
    pub mode: Mode,
    pub cache_key: String,
    pub fold_aucs: Vec<f64>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub split_seed: Option<u64>,
    pub folds: Vec<FoldResult>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

/// Sample mean and standard deviation (n - 1 denominator).
pub fn mean_std(x: &[f64]) -> (Option<f64>, Option<f64>) {
    if x.is_empty() {
        return (None, None);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.len() >= 2).then(|| (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

impl CellResult {
    fn from_run(dataset: &str, progress: f64, mode: Mode, cache_key: String, run: Result<CellRun>) -> Self {
        let mut cell = Self {
            dataset: dataset.into(),
            progress,
            mode,
            cache_key,
            fold_aucs: Vec::new(),
            mean: None,
            std: None,
            split_seed: None,
            folds: Vec::new(),
            warnings: Vec::new(),
            error: None,
        };
        match run {
            Ok(run) => {
                cell.fold_aucs = run.aucs();
                (cell.mean, cell.std) = mean_std(&cell.fold_aucs);
                cell.split_seed = Some(run.split_seed);
                cell.folds = run.folds;
                cell.warnings = run.warnings;
            }
            Err(e) => cell.error = Some(e.to_string()),
        }
        cell
    }
}

/// Combined-vs-iso t-tests for one (dataset, progress).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: String,
    pub progress: f64,
    /// Alternative hypothesis: mean combined AUC exceeds mean iso AUC.
    pub welch: Option<TTestResult>,
    pub paired: Option<TTestResult>,
    /// Whether both cells used identical test-positive folds.
    pub folds_aligned: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub spec: ExperimentSpec,
    pub datasets: Vec<DatasetSummary>,
    pub cells: Vec<CellResult>,
    pub comparisons: Vec<Comparison>,
}

impl ExperimentReport {
    pub fn cell(&self, dataset: &str, progress: f64, mode: Mode) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.dataset == dataset && c.progress == progress && c.mode == mode)
    }

    pub fn failed_cells(&self) -> Vec<&CellResult> {
        self.cells.iter().filter(|c| c.error.is_some()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Serde {
            component: "experiments",
            message: e.to_string(),
        })?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serde {
            component: "experiments",
            message: e.to_string(),
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Cell cache directory; nothing is cached when absent.
    pub cache_dir: Option<PathBuf>,
    /// Reuse cells already present in the cache.
    pub resume: bool,
    /// Cells evaluated concurrently; 0 or 1 runs sequentially.
    pub jobs: usize,
}

#[derive(Serialize)]
struct CellKeyMaterial<'a> {
    format: &'a str,
    mode: Mode,
    target: &'a str,
    progress: f64,
    master_seed: u64,
    split_seed: u64,
    k: usize,
    horizon: Horizon,
    eval_negatives: NegativeCount,
    dims: Dims,
    train: &'a TrainConfig,
    tie_policy: TiePolicy,
    graphs: Vec<(&'a str, &'a str)>,
}

struct CellJob {
    mode: Mode,
    target: usize,
    progress: f64,
    /// Indices of the graphs involved, in merge order.
    members: Vec<usize>,
    key: String,
}

/// Runs every (dataset, progress, mode) cell of `spec`. Relative dataset
/// paths resolve against `base_dir`. Cell failures are recorded, not raised.
pub fn run_matrix(spec: &ExperimentSpec, base_dir: &Path, opts: &RunOptions) -> Result<ExperimentReport> {
    spec.validate()?;
    let graphs = spec.load_datasets(base_dir)?;
    run_matrix_on(spec, &graphs, opts)
}

/// As [`run_matrix`] with the datasets already loaded, in spec order.
pub fn run_matrix_on(spec: &ExperimentSpec, graphs: &[TemporalGraph], opts: &RunOptions) -> Result<ExperimentReport> {
    spec.validate()?;
    if graphs.len() != spec.datasets.len() {
        return Err(Error::config(
            "experiments",
            format!("{} graphs supplied for {} datasets", graphs.len(), spec.datasets.len()),
        ));
    }
    let tags: Vec<&str> = spec.datasets.iter().map(|d| d.tag.as_str()).collect();
    let digests: Vec<String> = graphs.iter().map(graph_digest).collect();
    let index_of = |t: &str| tags.iter().position(|&x| x == t).expect("validated tag");
    let merged_members: Vec<usize> = spec.combine_tags().iter().map(|t| index_of(t)).collect();
    let targets: Vec<usize> = spec.combined_target_tags().iter().map(|t| index_of(t)).collect();

    let key_for = |mode: Mode, target: usize, progress: f64, members: &[usize]| -> Result<String> {
        let material = CellKeyMaterial {
            format: CELL_FORMAT,
            mode,
            target: tags[target],
            progress,
            master_seed: spec.master_seed,
            split_seed: spec.split_seed(tags[target], progress),
            k: spec.k,
            horizon: spec.horizon,
            eval_negatives: spec.eval_negatives,
            dims: spec.dims,
            train: &spec.train,
            tie_policy: spec.tie_policy,
            graphs: members.iter().map(|&i| (tags[i], digests[i].as_str())).collect(),
        };
        let json = serde_json::to_vec(&material).map_err(|e| Error::Serde {
            component: "experiments",
            message: e.to_string(),
        })?;
        Ok(hex::encode(Sha256::digest(&json)))
    };

    let mut jobs = Vec::new();
    for (d, _) in tags.iter().enumerate() {
        for &progress in &spec.progress_points {
            for &mode in &spec.modes {
                let members = match mode {
                    Mode::Iso => vec![d],
                    Mode::Combined if targets.contains(&d) => merged_members.clone(),
                    Mode::Combined => continue,
                };
                let key = key_for(mode, d, progress, &members)?;
                jobs.push(CellJob {
                    mode,
                    target: d,
                    progress,
                    members,
                    key,
                });
            }
        }
    }
    if let Some(dir) = &opts.cache_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let run_job = |job: &CellJob| -> CellResult {
        let tag = tags[job.target];
        if let (Some(dir), true) = (&opts.cache_dir, opts.resume) {
            if let Some(cell) = read_cached(&dir.join(format!("{}.json", job.key))) {
                log::info!("experiments: {} {tag} @ {}: cached", job.mode, job.progress);
                return cell;
            }
        }
        log::info!("experiments: {} {tag} @ {}: running", job.mode, job.progress);
        let run = match job.mode {
            Mode::Iso => run_iso(&graphs[job.target], job.progress, spec),
            Mode::Combined => {
                let members: Vec<TemporalGraph> = job.members.iter().map(|&i| graphs[i].clone()).collect();
                run_combined(&members, tag, job.progress, spec)
            }
        };
        let cell = CellResult::from_run(tag, job.progress, job.mode, job.key.clone(), run);
        if let Some(dir) = &opts.cache_dir {
            // Failed cells are not cached so a resume retries them.
            if cell.error.is_none() {
                if let Err(e) = write_cached(&dir.join(format!("{}.json", job.key)), &cell) {
                    log::warn!("{e}");
                }
            }
        }
        cell
    };

    let cells: Vec<CellResult> = if opts.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::config("experiments", format!("thread pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run_job).collect())
    } else {
        jobs.iter().map(run_job).collect()
    };

    let mut comparisons = Vec::new();
    if spec.modes.contains(&Mode::Iso) && spec.modes.contains(&Mode::Combined) {
        for &d in &targets {
            for &progress in &spec.progress_points {
                let find = |mode| {
                    cells
                        .iter()
                        .find(|c| c.dataset == tags[d] && c.progress == progress && c.mode == mode)
                        .expect("cell scheduled")
                };
                comparisons.push(compare(find(Mode::Iso), find(Mode::Combined), spec.alpha));
            }
        }
    }

    Ok(ExperimentReport {
        format: REPORT_FORMAT.into(),
        spec: spec.clone(),
        datasets: tags
            .iter()
            .zip(graphs)
            .zip(&digests)
            .map(|((t, g), digest)| DatasetSummary {
                tag: t.to_string(),
                stats: g.stats(),
                digest: digest.clone(),
            })
            .collect(),
        cells,
        comparisons,
    })
}

fn compare(iso: &CellResult, combined: &CellResult, alpha: f64) -> Comparison {
    let mut cmp = Comparison {
        dataset: iso.dataset.clone(),
        progress: iso.progress,
        welch: None,
        paired: None,
        folds_aligned: false,
        error: None,
    };
    if let Some(e) = iso.error.as_ref().or(combined.error.as_ref()) {
        cmp.error = Some(format!("missing cell: {e}"));
        return cmp;
    }
    cmp.folds_aligned = iso.folds.len() == combined.folds.len()
        && iso
            .folds
            .iter()
            .zip(&combined.folds)
            .all(|(a, b)| a.test_positive_digest == b.test_positive_digest);
    match welch_t_one_sided(&combined.fold_aucs, &iso.fold_aucs, alpha) {
        Ok(t) => cmp.welch = Some(t),
        Err(e) => cmp.error = Some(e.to_string()),
    }
    if cmp.folds_aligned {
        cmp.paired = paired_t_one_sided(&combined.fold_aucs, &iso.fold_aucs, alpha).ok();
    }
    cmp
}

fn read_cached(path: &Path) -> Option<CellResult> {
    let text = fs::read_to_string(path).ok()?;
    match serde_json::from_str(&text) {
        Ok(cell) => Some(cell),
        Err(e) => {
            log::warn!("experiments: ignoring unreadable cache file {}: {e}", path.display());
            None
        }
    }
}

fn write_cached(path: &Path, cell: &CellResult) -> Result<()> {
    let text = serde_json::to_string_pretty(cell).map_err(|e| Error::Serde {
        component: "experiments",
        message: e.to_string(),
    })?;
    // Write then rename so an interrupted run never leaves a torn file.
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `0.25` -> `25%`.
pub fn format_progress(p: f64) -> String {
    let pct = (p * 100.0 * 1e6).round() / 1e6;
    format!("{pct}%")
}

/// Three significant digits in scientific notation, e.g. `4.18e-1`.
pub fn format_p_value(p: f64) -> String {
    format!("{p:.2e}")
}

/// Mean-AUC grid and combined-vs-iso t-test rows.
pub fn render_tables(report: &ExperimentReport) -> String {
    let modes = &report.spec.modes;
    let mut out = String::from("Mean test AUC (std over folds)\n\n");

    let mut grid: Vec<Vec<String>> = vec![{
        let mut h = vec!["Dataset".to_string(), "Progress".to_string()];
        h.extend(modes.iter().map(|m| m.label().to_string()));
        h
    }];
    let mut seen: Vec<(&str, f64)> = Vec::new();
    for c in &report.cells {
        if !seen.contains(&(c.dataset.as_str(), c.progress)) {
            seen.push((c.dataset.as_str(), c.progress));
        }
    }
    for (tag, progress) in seen {
        let mut row = vec![tag.to_string(), format_progress(progress)];
        for &m in modes {
            row.push(match report.cell(tag, progress, m) {
                Some(CellResult { mean: Some(mean), std, .. }) => match std {
                    Some(s) => format!("{mean:.4} ({s:.4})"),
                    None => format!("{mean:.4}"),
                },
                _ => MISSING.to_string(),
            });
        }
        grid.push(row);
    }
    out.push_str(&render_rows(&grid));
    if report.comparisons.is_empty() {
        return out;
    }

    out.push_str(&format!(
        "\nOne-sided Welch t-test, H1: combined > iso, alpha = {}\n\n",
        report.spec.alpha
    ));
    let mut rows = vec![[
        "Models".to_string(),
        "Dataset".to_string(),
        "Progress".to_string(),
        "p-value".to_string(),
        "Decision".to_string(),
    ]];
    for c in &report.comparisons {
        let (p, decision) = match &c.welch {
            Some(t) => (format_p_value(t.p_value), t.decision.to_string()),
            None => (MISSING.to_string(), MISSING.to_string()),
        };
        rows.push([
            "IS vs CO".to_string(),
            c.dataset.clone(),
            format_progress(c.progress),
            p,
            decision,
        ]);
    }
    out.push_str(&render_grid(&rows));
    out
}

fn render_rows(rows: &[Vec<String>]) -> String {
    // render_grid wants a fixed width; the mode count is 1 or 2.
    match rows.first().map(Vec::len) {
        Some(3) => render_grid(&rows.iter().map(|r| [r[0].clone(), r[1].clone(), r[2].clone()]).collect::<Vec<_>>()),
        Some(4) => render_grid(
            &rows
                .iter()
                .map(|r| [r[0].clone(), r[1].clone(), r[2].clone(), r[3].clone()])
                .collect::<Vec<_>>(),
        ),
        _ => String::new(),
    }
}

/// Writes `report.json` and `tables.txt` into `out_dir`.
pub fn write_report(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = out_dir.join("report.json");
    fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))?;
    let tables = out_dir.join("tables.txt");
    fs::write(&tables, render_tables(report)).map_err(|e| Error::io(&tables, e))
}
