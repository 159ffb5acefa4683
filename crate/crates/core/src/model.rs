//! Two-layer mean-aggregation GraphSAGE encoder with trainable input
//! embeddings, and the sigmoid dot-product link decoder.
//!
//! For every node `i` with neighborhood `N(i)` in the snapshot:
//!
//! ```text
//! mean0_i = mean { x_j : j in N(i) + {i} }
//! h1_i    = relu(mean0_i . W1 + b1)
//! mean1_i = mean { h1_j : j in N(i) + {i} }
//! h2_i    = relu(mean1_i . W2 + b2)        (final relu can be switched off)
//! score(i, j) = h2_i . h2_j,  p(i, j) = sigmoid(score)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Pair, SnapshotView};
use crate::seed;

/// Layer widths: input embedding `F`, hidden `d1`, output `d2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            input: 16,
            hidden: 16,
            output: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// `|V| x F`, one trainable row per node.
    pub embeddings: Array2<f64>,
    /// `F x d1`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `d1 x d2`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Apply the rectifier to the output layer as well.
    pub final_activation: bool,
}

impl ModelParams {
    pub fn num_nodes(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            input: self.embeddings.ncols(),
            hidden: self.w1.ncols(),
            output: self.w2.ncols(),
        }
    }

    /// Shape and finiteness audit.
    pub fn check(&self) -> Result<()> {
        let d = self.dims();
        let shape_ok = self.w1.nrows() == d.input
            && self.b1.len() == d.hidden
            && self.w2.nrows() == d.hidden
            && self.b2.len() == d.output;
        if !shape_ok {
            return Err(Error::Dimension(format!(
                "embeddings {:?}, w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                self.embeddings.dim(),
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        let finite = self.embeddings.iter().all(|v| v.is_finite())
            && self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Dimension("parameters contain non-finite values".into()));
        }
        Ok(())
    }

    /// Same-shaped parameters filled with zeros (used for gradients and
    /// optimizer moments).
    pub fn zeros_like(&self) -> Self {
        Self {
            embeddings: Array2::zeros(self.embeddings.raw_dim()),
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
            final_activation: self.final_activation,
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.embeddings.len() + self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
}

/// Uniform `[-a, a]` initialization with `a = 1 / sqrt(fan_in)` per block;
/// biases start at zero.
pub fn init_params(num_nodes: usize, dims: Dims, seed: u64) -> Result<ModelParams> {
    if num_nodes == 0 {
        return Err(Error::Dimension("model needs at least one node".into()));
    }
    if dims.input == 0 || dims.hidden == 0 || dims.output == 0 {
        return Err(Error::Dimension(format!("all layer widths must be >= 1, got {dims:?}")));
    }
    let mut rng = seed::rng(seed);
    let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
        let a = 1.0 / (fan_in as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..=a))
    };
    let embeddings = uniform(num_nodes, dims.input, dims.input);
    let w1 = uniform(dims.input, dims.hidden, dims.input);
    let w2 = uniform(dims.hidden, dims.output, dims.hidden);
    Ok(ModelParams {
        embeddings,
        w1,
        b1: Array1::zeros(dims.hidden),
        w2,
        b2: Array1::zeros(dims.output),
        final_activation: true,
    })
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub mean0: Array2<f64>,
    pub pre1: Array2<f64>,
    pub h1: Array2<f64>,
    pub mean1: Array2<f64>,
    pub pre2: Array2<f64>,
    pub h2: Array2<f64>,
}

/// Per-node neighbor lists used by one aggregation layer.
pub(crate) trait Neighborhood {
    fn num_nodes(&self) -> usize;
    fn neighbors(&self, node: usize) -> &[usize];
}

impl Neighborhood for SnapshotView {
    fn num_nodes(&self) -> usize {
        SnapshotView::num_nodes(self)
    }

    fn neighbors(&self, node: usize) -> &[usize] {
        SnapshotView::neighbors(self, node)
    }
}

struct SampledNeighborhood(Vec<Vec<usize>>);

impl Neighborhood for SampledNeighborhood {
    fn num_nodes(&self) -> usize {
        self.0.len()
    }

    fn neighbors(&self, node: usize) -> &[usize] {
        &self.0[node]
    }
}

/// `out_i = (x_i + sum_{j in N(i)} x_j) / (|N(i)| + 1)`
pub(crate) fn mean_aggregate<N: Neighborhood>(nbrs: &N, x: ArrayView2<f64>) -> Array2<f64> {
    let cols = x.ncols();
    let mut out = Array2::<f64>::zeros(x.raw_dim());
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        row.copy_from_slice(x.row(i).as_slice().expect("standard layout"));
        let list = nbrs.neighbors(i);
        for &j in list {
            let src = x.row(j);
            let src = src.as_slice().expect("standard layout");
            for c in 0..cols {
                row[c] += src[c];
            }
        }
        let scale = 1.0 / (list.len() + 1) as f64;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    out
}

/// Adjoint of [`mean_aggregate`]: routes each node's upstream gradient
/// equally to itself and its neighbors.
pub(crate) fn mean_aggregate_adjoint<N: Neighborhood>(nbrs: &N, upstream: ArrayView2<f64>) -> Array2<f64> {
    let cols = upstream.ncols();
    let mut out = Array2::<f64>::zeros(upstream.raw_dim());
    let out_slice = out.as_slice_mut().expect("standard layout");
    let up = upstream.as_standard_layout();
    let up = up.as_slice().expect("standard layout");
    for i in 0..nbrs.num_nodes() {
        let list = nbrs.neighbors(i);
        let scale = 1.0 / (list.len() + 1) as f64;
        let g = &up[i * cols..(i + 1) * cols];
        for &j in std::iter::once(&i).chain(list) {
            let dst = &mut out_slice[j * cols..(j + 1) * cols];
            for c in 0..cols {
                dst[c] += scale * g[c];
            }
        }
    }
    out
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

fn check_compatible(params: &ModelParams, num_nodes: usize) -> Result<()> {
    params.check()?;
    if num_nodes != params.num_nodes() {
        return Err(Error::Dimension(format!(
            "snapshot has {num_nodes} nodes but the embedding table has {} rows",
            params.num_nodes()
        )));
    }
    Ok(())
}

fn forward_with<A: Neighborhood, B: Neighborhood>(params: &ModelParams, layer1: &A, layer2: &B) -> ForwardTrace {
    let mean0 = mean_aggregate(layer1, params.embeddings.view());
    let pre1 = mean0.dot(&params.w1) + &params.b1;
    let h1 = relu(&pre1);
    let mean1 = mean_aggregate(layer2, h1.view());
    let pre2 = mean1.dot(&params.w2) + &params.b2;
    let h2 = if params.final_activation {
        relu(&pre2)
    } else {
        pre2.clone()
    };
    ForwardTrace {
        mean0,
        pre1,
        h1,
        mean1,
        pre2,
        h2,
    }
}

/// Full-neighborhood forward pass.
pub fn forward(params: &ModelParams, snapshot: &SnapshotView) -> Result<ForwardTrace> {
    check_compatible(params, snapshot.num_nodes())?;
    Ok(forward_with(params, snapshot, snapshot))
}

/// Forward pass where each layer averages over at most `fanouts.0` /
/// `fanouts.1` neighbors (plus self), sampled uniformly without replacement.
/// Nodes whose degree fits the fanout use their full neighbor list.
pub fn forward_sampled(
    params: &ModelParams,
    snapshot: &SnapshotView,
    fanouts: (usize, usize),
    seed: u64,
) -> Result<ForwardTrace> {
    if fanouts.0 == 0 || fanouts.1 == 0 {
        return Err(Error::config("model", format!("fanouts must be >= 1, got {fanouts:?}")));
    }
    check_compatible(params, snapshot.num_nodes())?;
    let mut rng = seed::rng(seed);
    let mut sample = |fanout: usize| {
        SampledNeighborhood(
            (0..snapshot.num_nodes())
                .map(|i| {
                    let list = snapshot.neighbors(i);
                    if list.len() <= fanout {
                        list.to_vec()
                    } else {
                        let mut picked: Vec<usize> = index::sample(&mut rng, list.len(), fanout)
                            .into_iter()
                            .map(|k| list[k])
                            .collect();
                        picked.sort_unstable();
                        picked
                    }
                })
                .collect(),
        )
    };
    let layer1 = sample(fanouts.0);
    let layer2 = sample(fanouts.1);
    Ok(forward_with(params, &layer1, &layer2))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Raw dot-product scores and their sigmoid probabilities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub raw: Vec<f64>,
    pub prob: Vec<f64>,
}

#[inline]
pub(crate) fn dot_rows(h: &Array2<f64>, a: usize, b: usize) -> f64 {
    h.row(a).dot(&h.row(b))
}

pub fn score_pairs(trace: &ForwardTrace, pairs: &[Pair]) -> Result<PairScores> {
    let n = trace.h2.nrows();
    let mut raw = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        for node in [a, b] {
            if node >= n {
                return Err(Error::NodeOutOfRange {
                    component: "model",
                    node,
                    count: n,
                });
            }
        }
        raw.push(dot_rows(&trace.h2, a, b));
    }
    let prob = raw.iter().map(|&s| sigmoid(s)).collect();
    Ok(PairScores { raw, prob })
}

const CHECKPOINT_MAGIC: &str = "slnlink-params v1";

/// Text checkpoint.
///
/// ```text
/// slnlink-params v1
/// nodes <N> input <F> hidden <d1> output <d2> final_activation <on|off>
/// embeddings
/// <N rows of F values>
/// w1
/// <F rows of d1 values>
/// b1
/// <1 row of d1 values>
/// w2
/// <d1 rows of d2 values>
/// b2
/// <1 row of d2 values>
/// ```
///
/// Values are written in shortest round-trip form, so loading restores the
/// parameters bit-for-bit.
pub fn params_to_text(params: &ModelParams) -> String {
    let d = params.dims();
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(
        out,
        "nodes {} input {} hidden {} output {} final_activation {}",
        params.num_nodes(),
        d.input,
        d.hidden,
        d.output,
        if params.final_activation { "on" } else { "off" }
    );
    let mut block = |name: &str, rows: &mut dyn Iterator<Item = Vec<f64>>| {
        let _ = writeln!(out, "{name}");
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
    };
    let rows = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    block("embeddings", &mut rows(&params.embeddings).into_iter());
    block("w1", &mut rows(&params.w1).into_iter());
    block("b1", &mut std::iter::once(params.b1.to_vec()));
    block("w2", &mut rows(&params.w2).into_iter());
    block("b2", &mut std::iter::once(params.b2.to_vec()));
    out
}

pub fn params_from_text(text: &str) -> Result<ModelParams> {
    let bad = |msg: String| Error::Serde {
        component: "model",
        message: format!("checkpoint: {msg}"),
    };
    let mut lines = text.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad(format!("missing {CHECKPOINT_MAGIC:?} header")));
    }
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("missing dimension line".into()))?
        .split_whitespace()
        .collect();
    let field = |name: &str| -> Result<&str> {
        header
            .iter()
            .position(|&t| t == name)
            .and_then(|i| header.get(i + 1).copied())
            .ok_or_else(|| bad(format!("dimension line lacks {name:?}")))
    };
    let num = |name: &str| -> Result<usize> {
        field(name)?
            .parse()
            .map_err(|_| bad(format!("bad value for {name:?}")))
    };
    let (n, f, d1, d2) = (num("nodes")?, num("input")?, num("hidden")?, num("output")?);
    let final_activation = match field("final_activation")? {
        "on" => true,
        "off" => false,
        other => return Err(bad(format!("final_activation must be on|off, got {other:?}"))),
    };
    let mut read_block = |name: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
        if lines.next() != Some(name) {
            return Err(bad(format!("expected block {name:?}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("block {name:?} truncated at row {r}")))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(tok.parse::<f64>().map_err(|_| bad(format!("bad number {tok:?} in {name:?}")))?);
            }
            if data.len() - before != cols {
                return Err(bad(format!("block {name:?} row {r} has {} values, expected {cols}", data.len() - before)));
            }
        }
        Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(e.to_string()))
    };
    let embeddings = read_block("embeddings", n, f)?;
    let w1 = read_block("w1", f, d1)?;
    let b1 = read_block("b1", 1, d1)?.row(0).to_owned();
    let w2 = read_block("w2", d1, d2)?;
    let b2 = read_block("b2", 1, d2)?.row(0).to_owned();
    let params = ModelParams {
        embeddings,
        w1,
        b1,
        w2,
        b2,
        final_activation,
    };
    params.check()?;
    Ok(params)
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, params_to_text(params)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    params_from_text(&text)
}
