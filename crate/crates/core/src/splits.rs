//! Supervised link-prediction tasks cut from a temporal graph.
//!
//! The structure observed at progress `p` is held fixed. Pairs that first
//! connect in `(p, p + horizon]` are the positives; they are shuffled and
//! dealt round-robin into `k` folds. Each fold in turn is the test set while
//! the others supervise training.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::{canonical, Pair, SnapshotView, TemporalGraph};
use crate::seed;

pub type PairSet = HashSet<Pair>;

/// How far past the snapshot the prediction target reaches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Horizon {
    #[default]
    EndOfCourse,
    Fraction(f64),
}

impl Horizon {
    fn end(self, progress: f64) -> f64 {
        match self {
            Horizon::EndOfCourse => 1.0,
            Horizon::Fraction(h) => progress + h,
        }
    }
}

/// Number of test negatives per fold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NegativeCount {
    /// `ratio * |test positives|`, rounded to the nearest integer.
    Ratio(f64),
    /// Every pair absent from the target snapshot.
    All,
}

impl Default for NegativeCount {
    fn default() -> Self {
        NegativeCount::Ratio(1.0)
    }
}

#[derive(Clone, Debug)]
pub struct SplitConfig {
    pub progress: f64,
    pub horizon: Horizon,
    pub k: usize,
    pub eval_negatives: NegativeCount,
    pub seed: u64,
}

impl SplitConfig {
    pub fn new(progress: f64, k: usize, seed: u64) -> Self {
        Self {
            progress,
            horizon: Horizon::EndOfCourse,
            k,
            eval_negatives: NegativeCount::default(),
            seed,
        }
    }
}

/// A fixed observed snapshot with its future positives partitioned into folds.
#[derive(Clone, Debug, Serialize)]
pub struct SplitPlan {
    pub progress: f64,
    pub horizon: Horizon,
    pub k: usize,
    pub eval_negatives: NegativeCount,
    pub seed: u64,
    /// Positives in shuffled order.
    pub positives: Vec<Pair>,
    pub folds: Vec<Vec<Pair>>,
    #[serde(skip)]
    pub observed: SnapshotView,
    /// Snapshot at `progress + horizon`.
    #[serde(skip)]
    pub target: SnapshotView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldTask {
    pub fold_index: usize,
    pub train_positives: Vec<Pair>,
    pub test_positives: Vec<Pair>,
    pub test_negatives: Vec<Pair>,
}

pub fn make_split(g: &TemporalGraph, cfg: &SplitConfig) -> Result<SplitPlan> {
    let p = cfg.progress;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::ProgressOutOfRange(p));
    }
    if cfg.k < 2 {
        return Err(Error::config("splits", format!("k must be at least 2, got {}", cfg.k)));
    }
    if let Horizon::Fraction(h) = cfg.horizon {
        if !(h > 0.0 && p + h <= 1.0) {
            return Err(Error::HorizonOutOfRange {
                progress: p,
                horizon: h,
            });
        }
    }
    if let NegativeCount::Ratio(r) = cfg.eval_negatives {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::config("splits", format!("eval negative ratio must be positive, got {r}")));
        }
    }
    let observed = g.snapshot(p)?;
    let target = g.snapshot(cfg.horizon.end(p))?;
    let mut positives: Vec<Pair> = target
        .edges()
        .filter(|&(a, b)| !observed.has_edge(a, b))
        .collect();
    if positives.is_empty() {
        return Err(Error::NothingToPredict { progress: p });
    }
    if positives.len() < cfg.k {
        log::warn!(
            "splits: only {} positives for k = {}; some folds are empty",
            positives.len(),
            cfg.k
        );
    }
    let mut rng = seed::rng(cfg.seed);
    positives.shuffle(&mut rng);
    let mut folds = vec![Vec::new(); cfg.k];
    for (i, &pair) in positives.iter().enumerate() {
        folds[i % cfg.k].push(pair);
    }
    Ok(SplitPlan {
        progress: p,
        horizon: cfg.horizon,
        k: cfg.k,
        eval_negatives: cfg.eval_negatives,
        seed: cfg.seed,
        positives,
        folds,
        observed,
        target,
    })
}

impl SplitPlan {
    /// Pairs that may never be used as negatives: everything connected in
    /// the target snapshot (observed edges and all positives).
    pub fn target_edges(&self) -> PairSet {
        self.target.edges().collect()
    }

    pub fn fold_seed(&self, fold: usize) -> u64 {
        seed::derive(self.seed, &["fold", &fold.to_string()])
    }

    pub fn fold_task(&self, fold: usize) -> Result<FoldTask> {
        if fold >= self.k {
            return Err(Error::config("splits", format!("fold {fold} out of range for k = {}", self.k)));
        }
        let train_positives = self.train_positives(fold);
        let test_positives = self.folds[fold].clone();
        let forbidden = self.target_edges();
        let test_negatives = match self.eval_negatives {
            NegativeCount::All => all_non_edges(&self.observed, &forbidden),
            NegativeCount::Ratio(r) => {
                let count = (r * test_positives.len() as f64).round() as usize;
                sample_negatives(&self.observed, &forbidden, count, self.fold_seed(fold))?
            }
        };
        Ok(FoldTask {
            fold_index: fold,
            train_positives,
            test_positives,
            test_negatives,
        })
    }

    /// Positives of every fold except `fold`, in fold order.
    pub fn train_positives(&self, fold: usize) -> Vec<Pair> {
        self.folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }

    pub fn fold_tasks(&self) -> Result<Vec<FoldTask>> {
        (0..self.k).map(|f| self.fold_task(f)).collect()
    }

    /// Negatives forbidden during training on `task`: target-snapshot edges
    /// and the fold's test negatives.
    pub fn training_exclusions(&self, task: &FoldTask) -> PairSet {
        let mut set = self.target_edges();
        set.extend(task.test_negatives.iter().copied());
        set
    }
}

/// Every unordered non-self pair absent from `observed` and `forbidden`,
/// in lexicographic order.
pub fn all_non_edges(observed: &SnapshotView, forbidden: &PairSet) -> Vec<Pair> {
    NegativeSampler::new(observed, forbidden, 0..observed.num_nodes()).all()
}

/// Uniform sample without replacement of `count` unordered pairs that are
/// neither self-pairs, observed edges nor in `forbidden`.
pub fn sample_negatives(
    observed: &SnapshotView,
    forbidden: &PairSet,
    count: usize,
    seed: u64,
) -> Result<Vec<Pair>> {
    let mut rng = seed::rng(seed);
    NegativeSampler::new(observed, forbidden, 0..observed.num_nodes()).sample(count, &mut rng)
}

/// Draws non-edges among the nodes of one index range.
#[derive(Debug)]
pub struct NegativeSampler<'a> {
    observed: &'a SnapshotView,
    forbidden: &'a PairSet,
    nodes: Range<usize>,
    available: usize,
}

impl<'a> NegativeSampler<'a> {
    pub fn new(observed: &'a SnapshotView, forbidden: &'a PairSet, nodes: Range<usize>) -> Self {
        let nodes = nodes.start.min(observed.num_nodes())..nodes.end.min(observed.num_nodes());
        let inside = |a: usize| nodes.contains(&a);
        let len = nodes.len();
        let observed_inside = nodes
            .clone()
            .map(|i| observed.neighbors(i).iter().filter(|&&j| j > i && inside(j)).count())
            .sum::<usize>();
        let forbidden_inside = forbidden
            .iter()
            .filter(|&&(a, b)| a != b && inside(a) && inside(b) && !observed.has_edge(a, b))
            .count();
        let available = len * len.saturating_sub(1) / 2 - observed_inside - forbidden_inside;
        Self {
            observed,
            forbidden,
            nodes,
            available,
        }
    }

    /// Number of distinct pairs that can be drawn.
    pub fn available(&self) -> usize {
        self.available
    }

    fn allowed(&self, a: usize, b: usize) -> bool {
        !self.observed.has_edge(a, b) && !self.forbidden.contains(&canonical(a, b))
    }

    /// Every drawable pair in lexicographic order.
    pub fn all(&self) -> Vec<Pair> {
        let mut out = Vec::with_capacity(self.available);
        for i in self.nodes.clone() {
            for j in i + 1..self.nodes.end {
                if self.allowed(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn sample(&self, count: usize, rng: &mut seed::Rng) -> Result<Vec<Pair>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        if count > self.available {
            return Err(Error::InsufficientNonEdges {
                requested: count,
                available: self.available,
            });
        }
        if 4 * count > self.available {
            // Dense request: partial Fisher-Yates over the enumerated pool.
            let mut pool = self.all();
            let (chosen, _) = pool.partial_shuffle(rng, count);
            return Ok(chosen.to_vec());
        }
        let mut chosen = Vec::with_capacity(count);
        let mut taken = PairSet::with_capacity(count);
        while chosen.len() < count {
            let a = rng.random_range(self.nodes.clone());
            let b = rng.random_range(self.nodes.clone());
            if a == b || !self.allowed(a, b) {
                continue;
            }
            let pair = canonical(a, b);
            if taken.insert(pair) {
                chosen.push(pair);
            }
        }
        Ok(chosen)
    }
}

impl fmt::Display for Horizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Horizon::EndOfCourse => f.write_str("end"),
            Horizon::Fraction(h) => write!(f, "{h}"),
        }
    }
}

impl FromStr for Horizon {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "end" {
            return Ok(Horizon::EndOfCourse);
        }
        s.parse()
            .map(Horizon::Fraction)
            .map_err(|_| format!("horizon must be \"end\" or a fraction, got {s:?}"))
    }
}

impl fmt::Display for NegativeCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NegativeCount::All => f.write_str("all"),
            NegativeCount::Ratio(r) => write!(f, "{r}"),
        }
    }
}

impl FromStr for NegativeCount {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "all" {
            return Ok(NegativeCount::All);
        }
        s.parse()
            .map(NegativeCount::Ratio)
            .map_err(|_| format!("negative count must be \"all\" or a ratio, got {s:?}"))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NumberOrWord {
    Number(f64),
    Word(String),
}

macro_rules! serde_number_or_word {
    ($ty:ty, $word:literal, $unit:expr, $wrap:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                match self.as_number() {
                    Some(x) => s.serialize_f64(x),
                    None => s.serialize_str($word),
                }
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                match NumberOrWord::deserialize(d)? {
                    NumberOrWord::Number(x) => Ok($wrap(x)),
                    NumberOrWord::Word(w) if w == $word => Ok($unit),
                    NumberOrWord::Word(w) => Err(serde::de::Error::custom(format!(
                        "expected a number or {:?}, got {w:?}",
                        $word
                    ))),
                }
            }
        }
    };
}

impl Horizon {
    fn as_number(&self) -> Option<f64> {
        match *self {
            Horizon::Fraction(h) => Some(h),
            Horizon::EndOfCourse => None,
        }
    }
}

impl NegativeCount {
    fn as_number(&self) -> Option<f64> {
        match *self {
            NegativeCount::Ratio(r) => Some(r),
            NegativeCount::All => None,
        }
    }
}

serde_number_or_word!(Horizon, "end", Horizon::EndOfCourse, Horizon::Fraction);
serde_number_or_word!(NegativeCount, "all", NegativeCount::All, NegativeCount::Ratio);
