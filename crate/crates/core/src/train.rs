//! Imbalance-weighted BCE, exact gradients through the encoder and decoder,
//! Adam, and a finite-difference gradient check.
//!
//! Per pair with raw score `s`:
//!
//! ```text
//! positive: pcw * ln(1 + e^-s)     d/ds = -pcw * sigmoid(-s)
//! negative:       ln(1 + e^s)      d/ds =        sigmoid(s)
//! ```

use std::fmt::Write as _;
use std::ops::Range;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{canonical, Pair, SnapshotView};
use crate::model::{dot_rows, forward, init_params, mean_aggregate_adjoint, sigmoid, Dims, ForwardTrace, ModelParams};
use crate::seed;
use crate::splits::{NegativeSampler, PairSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub pcw: f64,
    pub train_negative_ratio: f64,
    pub resample_negatives_each_epoch: bool,
    pub final_activation: bool,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1500,
            learning_rate: 5e-4,
            pcw: 20.0,
            train_negative_ratio: 1.0,
            resample_negatives_each_epoch: true,
            final_activation: true,
            seed: 42,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config("train", m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.pcw.is_finite() && self.pcw > 0.0) {
            return bad(format!("pcw must be positive, got {}", self.pcw));
        }
        if !(self.train_negative_ratio.is_finite() && self.train_negative_ratio > 0.0) {
            return bad(format!(
                "train_negative_ratio must be positive, got {}",
                self.train_negative_ratio
            ));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_epsilon > 0.0) {
            return bad("Adam constants must satisfy 0 <= beta < 1 and epsilon > 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub epoch: usize,
    pub total_loss: f64,
    pub positive_term: f64,
    pub negative_term: f64,
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn weighted_bce(s_pos: &[f64], s_neg: &[f64], pcw: f64) -> LossReport {
    let positive_term = pcw * s_pos.iter().map(|&s| softplus(-s)).sum::<f64>();
    let negative_term = s_neg.iter().map(|&s| softplus(s)).sum::<f64>();
    LossReport {
        epoch: 0,
        total_loss: positive_term + negative_term,
        positive_term,
        negative_term,
    }
}

fn check_pairs(pairs: &[Pair], n: usize) -> Result<()> {
    for &(a, b) in pairs {
        let node = a.max(b);
        if node >= n {
            return Err(Error::NodeOutOfRange {
                component: "train",
                node,
                count: n,
            });
        }
    }
    Ok(())
}

fn loss_of(trace: &ForwardTrace, pos: &[Pair], neg: &[Pair], pcw: f64) -> LossReport {
    let sp: Vec<f64> = pos.iter().map(|&(a, b)| dot_rows(&trace.h2, a, b)).collect();
    let sn: Vec<f64> = neg.iter().map(|&(a, b)| dot_rows(&trace.h2, a, b)).collect();
    weighted_bce(&sp, &sn, pcw)
}

/// Loss of `params` on the given supervision.
pub fn loss(params: &ModelParams, snapshot: &SnapshotView, pos: &[Pair], neg: &[Pair], pcw: f64) -> Result<LossReport> {
    check_pairs(pos, snapshot.num_nodes())?;
    check_pairs(neg, snapshot.num_nodes())?;
    let trace = forward(params, snapshot)?;
    Ok(loss_of(&trace, pos, neg, pcw))
}

fn relu_mask(pre: &Array2<f64>, upstream: &mut Array2<f64>) {
    Zip::from(upstream).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}

/// Loss and its exact gradient with respect to every parameter block.
pub fn backward(
    params: &ModelParams,
    snapshot: &SnapshotView,
    pos: &[Pair],
    neg: &[Pair],
    pcw: f64,
) -> Result<(LossReport, ModelParams)> {
    check_pairs(pos, snapshot.num_nodes())?;
    check_pairs(neg, snapshot.num_nodes())?;
    let trace = forward(params, snapshot)?;
    let h2 = &trace.h2;
    let mut grad_h2 = Array2::<f64>::zeros(h2.raw_dim());
    let mut pos_term = 0.0;
    let mut neg_term = 0.0;
    let mut push = |a: usize, b: usize, g: f64| {
        grad_h2.row_mut(a).scaled_add(g, &h2.row(b));
        grad_h2.row_mut(b).scaled_add(g, &h2.row(a));
    };
    for &(a, b) in pos {
        let s = dot_rows(h2, a, b);
        pos_term += softplus(-s);
        push(a, b, -pcw * sigmoid(-s));
    }
    for &(a, b) in neg {
        let s = dot_rows(h2, a, b);
        neg_term += softplus(s);
        push(a, b, sigmoid(s));
    }
    let report = LossReport {
        epoch: 0,
        total_loss: pcw * pos_term + neg_term,
        positive_term: pcw * pos_term,
        negative_term: neg_term,
    };

    let mut d_pre2 = grad_h2;
    if params.final_activation {
        relu_mask(&trace.pre2, &mut d_pre2);
    }
    let w2 = trace.mean1.t().dot(&d_pre2);
    let b2 = d_pre2.sum_axis(Axis(0));
    let d_mean1 = d_pre2.dot(&params.w2.t());
    let mut d_pre1 = mean_aggregate_adjoint(snapshot, d_mean1.view());
    relu_mask(&trace.pre1, &mut d_pre1);
    let w1 = trace.mean0.t().dot(&d_pre1);
    let b1 = d_pre1.sum_axis(Axis(0));
    let d_mean0 = d_pre1.dot(&params.w1.t());
    let embeddings = mean_aggregate_adjoint(snapshot, d_mean0.view());

    Ok((
        report,
        ModelParams {
            embeddings,
            w1,
            b1,
            w2,
            b2,
            final_activation: params.final_activation,
        },
    ))
}

/// Adam moments shaped like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step_count: 0,
        }
    }
}

fn blocks(p: &ModelParams) -> [(&'static str, &[f64]); 5] {
    [
        ("embeddings", p.embeddings.as_slice().expect("standard layout")),
        ("w1", p.w1.as_slice().expect("standard layout")),
        ("b1", p.b1.as_slice().expect("standard layout")),
        ("w2", p.w2.as_slice().expect("standard layout")),
        ("b2", p.b2.as_slice().expect("standard layout")),
    ]
}

fn blocks_mut(p: &mut ModelParams) -> [&mut [f64]; 5] {
    [
        p.embeddings.as_slice_mut().expect("standard layout"),
        p.w1.as_slice_mut().expect("standard layout"),
        p.b1.as_slice_mut().expect("standard layout"),
        p.w2.as_slice_mut().expect("standard layout"),
        p.b2.as_slice_mut().expect("standard layout"),
    ]
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if grads.dims() != params.dims() || grads.num_nodes() != params.num_nodes() {
        return Err(Error::Dimension("gradient shape differs from parameters".into()));
    }
    for (name, g) in blocks(grads) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let grads = blocks(grads);
    let ms = blocks_mut(&mut state.first_moment);
    let vs = blocks_mut(&mut state.second_moment);
    let ps = blocks_mut(params);
    for (((p, m), v), (_, g)) in ps.into_iter().zip(ms).zip(vs).zip(grads) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<LossReport>,
    pub warnings: Vec<String>,
}

/// Negatives drawn each epoch from one block of node indices.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeGroup {
    pub nodes: Range<usize>,
    pub count: usize,
}

/// Full-graph training on `positives` with seeded negatives drawn from
/// pairs absent from the snapshot, `exclusions` and the positives.
/// `train_negative_ratio` negatives per positive are drawn over all nodes.
pub fn train(
    snapshot: &SnapshotView,
    positives: &[Pair],
    exclusions: &PairSet,
    cfg: &TrainConfig,
    dims: Dims,
) -> Result<TrainOutcome> {
    let group = NegativeGroup {
        nodes: 0..snapshot.num_nodes(),
        count: ((cfg.train_negative_ratio * positives.len() as f64).round() as usize).max(1),
    };
    train_grouped(snapshot, positives, exclusions, &[group], cfg, dims)
}

/// As [`train`], with the negative sample split across node blocks (one
/// block per merged classroom, for instance).
pub fn train_grouped(
    snapshot: &SnapshotView,
    positives: &[Pair],
    exclusions: &PairSet,
    groups: &[NegativeGroup],
    cfg: &TrainConfig,
    dims: Dims,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if positives.is_empty() {
        return Err(Error::Empty {
            component: "train",
            what: "no training positives",
        });
    }
    check_pairs(positives, snapshot.num_nodes())?;
    let mut params = init_params(snapshot.num_nodes(), dims, seed::derive(cfg.seed, &["init"]))?;
    params.final_activation = cfg.final_activation;
    let mut state = AdamState::new(&params);
    let mut forbidden = exclusions.clone();
    forbidden.extend(positives.iter().map(|&(a, b)| canonical(a, b)));
    let samplers: Vec<(NegativeSampler, usize)> = groups
        .iter()
        .map(|g| (NegativeSampler::new(snapshot, &forbidden, g.nodes.clone()), g.count))
        .collect();
    let mut rng = seed::rng(seed::derive(cfg.seed, &["negatives"]));
    let draw = |rng: &mut seed::Rng| -> Result<Vec<Pair>> {
        let mut out = Vec::new();
        for (sampler, count) in &samplers {
            out.extend(sampler.sample(*count, rng)?);
        }
        Ok(out)
    };
    let mut negatives = draw(&mut rng)?;

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.resample_negatives_each_epoch {
            negatives = draw(&mut rng)?;
        }
        let (mut report, grads) = backward(&params, snapshot, positives, &negatives, cfg.pcw)?;
        report.epoch = epoch;
        history.push(report);
        adam_step(&mut params, &grads, &mut state, cfg)?;
    }

    let mut warnings = Vec::new();
    if history.len() > 100 {
        let last = history[history.len() - 1].total_loss;
        let earlier = history[history.len() - 101].total_loss;
        if last >= earlier {
            let msg = format!("train: loss did not decrease over the final 100 epochs ({earlier} -> {last})");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(TrainOutcome {
        params,
        history,
        warnings,
    })
}

/// `epoch,total,pos,neg` rows with a header.
pub fn history_csv(history: &[LossReport]) -> String {
    let mut out = String::from("epoch,total,pos,neg\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.total_loss, r.positive_term, r.negative_term);
    }
    out
}

/// Largest graph accepted by [`grad_check`].
pub const GRAD_CHECK_MAX_NODES: usize = 32;

/// Gradient entries smaller than this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

pub const BLOCK_NAMES: [&str; 5] = ["embeddings", "w1", "b1", "w2", "b2"];

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub dims: Dims,
    pub graph_size: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub step: f64,
    pub pcw: f64,
    /// Adds this offset to every analytic entry of the named block.
    pub corrupt: Option<(&'static str, f64)>,
    /// Biases pushed far negative so every rectifier is off.
    pub dead_units: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            dims: Dims::default(),
            graph_size: 8,
            seed: 1,
            tolerance: 1e-4,
            step: 1e-5,
            pcw: 20.0,
            corrupt: None,
            dead_units: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub name: String,
    pub checked: usize,
    /// Entries whose perturbation flips a rectifier.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub blocks: Vec<BlockCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn failing_blocks(&self) -> Vec<&str> {
        self.blocks
            .iter()
            .filter(|b| !(b.max_rel_error < self.tolerance))
            .map(|b| b.name.as_str())
            .collect()
    }
}

/// Relative error with the denominator floored at [`GRAD_CHECK_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Random instance for gradient checking: an Erdos-Renyi snapshot plus
/// disjoint random positive and negative pairs.
pub fn grad_check_instance(n: usize, seed: u64) -> (SnapshotView, Vec<Pair>, Vec<Pair>) {
    let mut rng = seed::rng(seed::derive(seed, &["gradcheck-graph"]));
    let mut edges = Vec::new();
    let mut others = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < 0.3 {
                edges.push((i, j));
            } else {
                others.push((i, j));
            }
        }
    }
    let snapshot = SnapshotView::from_pairs(n, edges, 1.0);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for pair in others {
        match rng.random_range(0..4) {
            0 => pos.push(pair),
            1 => neg.push(pair),
            _ => {}
        }
    }
    (snapshot, pos, neg)
}

fn pattern(trace: &ForwardTrace) -> (Vec<bool>, Vec<bool>) {
    (
        trace.pre1.iter().map(|&v| v > 0.0).collect(),
        trace.pre2.iter().map(|&v| v > 0.0).collect(),
    )
}

/// Compares [`backward`] with central finite differences on every scalar.
pub fn grad_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    if opts.graph_size < 2 || opts.graph_size > GRAD_CHECK_MAX_NODES {
        return Err(Error::config(
            "train",
            format!(
                "gradient check graph size must be in 2..={GRAD_CHECK_MAX_NODES}, got {}",
                opts.graph_size
            ),
        ));
    }
    let (snapshot, pos, neg) = grad_check_instance(opts.graph_size, opts.seed);
    let mut params = init_params(opts.graph_size, opts.dims, opts.seed)?;
    if opts.dead_units {
        params.b1.fill(-1e3);
        params.b2.fill(-1.0);
    }
    let (_, mut analytic) = backward(&params, &snapshot, &pos, &neg, opts.pcw)?;
    if let Some((name, offset)) = opts.corrupt {
        let idx = BLOCK_NAMES
            .iter()
            .position(|&b| b == name)
            .ok_or_else(|| Error::config("train", format!("unknown parameter block {name:?}")))?;
        blocks_mut(&mut analytic)[idx].iter_mut().for_each(|v| *v += offset);
    }
    let base_pattern = pattern(&forward(&params, &snapshot)?);
    let analytic_blocks: Vec<Vec<f64>> = blocks(&analytic).iter().map(|(_, s)| s.to_vec()).collect();

    let mut report = Vec::new();
    for (b, name) in BLOCK_NAMES.iter().enumerate() {
        let len = analytic_blocks[b].len();
        let mut check = BlockCheck {
            name: name.to_string(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            max_abs_analytic: 0.0,
            max_abs_numeric: 0.0,
        };
        for i in 0..len {
            let original = blocks(&params)[b].1[i];
            let mut eval = |delta: f64| -> Result<(f64, bool)> {
                blocks_mut(&mut params)[b][i] = original + delta;
                let trace = forward(&params, &snapshot)?;
                let same = pattern(&trace) == base_pattern;
                Ok((loss_of(&trace, &pos, &neg, opts.pcw).total_loss, same))
            };
            let (plus, same_plus) = eval(opts.step)?;
            let (minus, same_minus) = eval(-opts.step)?;
            blocks_mut(&mut params)[b][i] = original;
            if !(same_plus && same_minus) {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic_blocks[b][i];
            check.checked += 1;
            check.max_rel_error = check.max_rel_error.max(relative_error(a, numeric));
            check.max_abs_analytic = check.max_abs_analytic.max(a.abs());
            check.max_abs_numeric = check.max_abs_numeric.max(numeric.abs());
        }
        report.push(check);
    }
    let passed = report.iter().all(|b| b.max_rel_error < opts.tolerance);
    Ok(GradCheckReport {
        tolerance: opts.tolerance,
        blocks: report,
        passed,
    })
}

/// Gradient of the loss with respect to each raw score, for inspection.
pub fn score_gradients(s_pos: &[f64], s_neg: &[f64], pcw: f64) -> (Array1<f64>, Array1<f64>) {
    (
        s_pos.iter().map(|&s| -pcw * sigmoid(-s)).collect(),
        s_neg.iter().map(|&s| sigmoid(s)).collect(),
    )
}
