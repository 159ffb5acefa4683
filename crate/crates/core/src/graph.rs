//! Temporal interaction graphs, progress snapshots and disjoint merging.
//!
//! A [`TemporalGraph`] is an immutable multiset of undirected, timestamped
//! interaction events. Timestamps are fractions of the course elapsed, so
//! graphs from courses of different lengths share one axis and can be merged.
//! Repeated interactions between the same pair stay as separate events and are
//! collapsed into one binary edge only when a [`SnapshotView`] is taken.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An unordered node pair stored with the smaller index first.
pub type Pair = (usize, usize);

/// Orders the endpoints of an undirected pair.
#[inline]
pub fn canonical(a: usize, b: usize) -> Pair {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Identity of a node: the dataset it came from and its index there.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub dataset_tag: String,
    pub local_index: usize,
}

/// One interaction between two distinct nodes. `u < v` always holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub u: usize,
    pub v: usize,
    pub timestamp: f64,
}

impl EdgeEvent {
    pub fn pair(&self) -> Pair {
        (self.u, self.v)
    }
}

/// The contiguous block of global node indices contributed by one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceRange {
    pub tag: String,
    pub start: usize,
    pub len: usize,
    pub duration_weeks: f64,
}

impl SourceRange {
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, node: usize) -> bool {
        node >= self.start && node < self.end()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalGraph {
    num_nodes: usize,
    events: Vec<EdgeEvent>,
    provenance: Vec<SourceRange>,
}

impl TemporalGraph {
    /// Builds and validates a single-dataset graph.
    ///
    /// Events are canonicalized (`u < v`) and sorted by `(timestamp, u, v)`.
    /// Duplicate events are kept.
    pub fn new<I>(num_nodes: usize, events: I, duration_weeks: f64, tag: &str) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if tag.is_empty() {
            return Err(Error::config("graph", "dataset tag must be non-empty"));
        }
        if !(duration_weeks.is_finite() && duration_weeks > 0.0) {
            return Err(Error::config(
                "graph",
                format!("duration_weeks must be positive, got {duration_weeks}"),
            ));
        }
        let mut out = Vec::new();
        for (index, (a, b, t)) in events.into_iter().enumerate() {
            for node in [a, b] {
                if node >= num_nodes {
                    return Err(Error::EndpointOutOfRange {
                        index,
                        node,
                        count: num_nodes,
                    });
                }
            }
            if a == b {
                return Err(Error::SelfLoop { index, node: a });
            }
            if !(t.is_finite() && (0.0..=1.0).contains(&t)) {
                return Err(Error::TimestampOutOfRange { index, value: t });
            }
            let (u, v) = canonical(a, b);
            out.push(EdgeEvent { u, v, timestamp: t });
        }
        sort_events(&mut out);
        Ok(Self {
            num_nodes,
            events: out,
            provenance: vec![SourceRange {
                tag: tag.to_string(),
                start: 0,
                len: num_nodes,
                duration_weeks,
            }],
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn events(&self) -> &[EdgeEvent] {
        &self.events
    }

    pub fn provenance(&self) -> &[SourceRange] {
        &self.provenance
    }

    /// Course length in weeks, or `None` when merged sources disagree.
    pub fn duration_weeks(&self) -> Option<f64> {
        let first = self.provenance.first()?.duration_weeks;
        self.provenance
            .iter()
            .all(|s| s.duration_weeks == first)
            .then_some(first)
    }

    pub fn source(&self, tag: &str) -> Result<&SourceRange> {
        self.provenance
            .iter()
            .find(|s| s.tag == tag)
            .ok_or_else(|| Error::UnknownTag(tag.to_string()))
    }

    pub fn source_of(&self, node: usize) -> Option<&SourceRange> {
        self.provenance.iter().find(|s| s.contains(node))
    }

    pub fn node_id(&self, node: usize) -> Option<NodeId> {
        self.source_of(node).map(|s| NodeId {
            dataset_tag: s.tag.clone(),
            local_index: node - s.start,
        })
    }

    /// Sorted list of distinct pairs that interacted at any time.
    pub fn distinct_edges(&self) -> Vec<Pair> {
        let mut pairs: Vec<Pair> = self.events.iter().map(EdgeEvent::pair).collect();
        pairs.sort_unstable();
        pairs.dedup();
        pairs
    }

    /// Binary adjacency of every pair with an event at or before `progress`.
    pub fn snapshot(&self, progress: f64) -> Result<SnapshotView> {
        if !(0.0..=1.0).contains(&progress) {
            return Err(Error::ProgressOutOfRange(progress));
        }
        let pairs = self
            .events
            .iter()
            .take_while(|e| e.timestamp <= progress)
            .map(EdgeEvent::pair);
        Ok(SnapshotView::from_pairs(self.num_nodes, pairs, progress))
    }

    /// Keeps the pairs whose endpoints both belong to dataset `tag`.
    pub fn restrict_pairs(&self, tag: &str, pairs: &[Pair]) -> Result<Vec<Pair>> {
        let range = self.source(tag)?;
        Ok(pairs
            .iter()
            .copied()
            .filter(|&(a, b)| range.contains(a) && range.contains(b))
            .collect())
    }

    pub fn stats(&self) -> GraphStats {
        let full = SnapshotView::from_pairs(self.num_nodes, self.events.iter().map(EdgeEvent::pair), 1.0);
        let n = self.num_nodes;
        let edges = full.num_edges();
        let density = if n < 2 {
            0.0
        } else {
            2.0 * edges as f64 / (n as f64 * (n as f64 - 1.0))
        };
        let mut degrees: Vec<usize> = (0..n).map(|i| full.degree(i)).collect();
        degrees.sort_unstable();
        let median = match degrees.len() {
            0 => 0.0,
            len if len % 2 == 1 => degrees[len / 2] as f64,
            len => (degrees[len / 2 - 1] + degrees[len / 2]) as f64 / 2.0,
        };
        GraphStats {
            nodes: n,
            distinct_edges: edges,
            events: self.events.len(),
            duration_weeks: self.duration_weeks(),
            density,
            degree_min: degrees.first().copied().unwrap_or(0),
            degree_median: median,
            degree_max: degrees.last().copied().unwrap_or(0),
        }
    }
}

fn sort_events(events: &mut [EdgeEvent]) {
    events.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then(a.u.cmp(&b.u))
            .then(a.v.cmp(&b.v))
    });
}

/// Disjoint union of several graphs. Node indices of the `k`-th input are
/// shifted by the total node count of the inputs before it.
pub fn merge(graphs: &[TemporalGraph]) -> Result<TemporalGraph> {
    if graphs.is_empty() {
        return Err(Error::Empty {
            component: "graph",
            what: "merge needs at least one graph",
        });
    }
    let mut provenance: Vec<SourceRange> = Vec::new();
    let mut events = Vec::with_capacity(graphs.iter().map(|g| g.events.len()).sum());
    let mut offset = 0;
    for g in graphs {
        for src in &g.provenance {
            if provenance.iter().any(|p| p.tag == src.tag) {
                return Err(Error::DuplicateTag(src.tag.clone()));
            }
            provenance.push(SourceRange {
                start: src.start + offset,
                ..src.clone()
            });
        }
        events.extend(g.events.iter().map(|e| EdgeEvent {
            u: e.u + offset,
            v: e.v + offset,
            timestamp: e.timestamp,
        }));
        offset += g.num_nodes;
    }
    sort_events(&mut events);
    Ok(TemporalGraph {
        num_nodes: offset,
        events,
        provenance,
    })
}

/// Summary counts for one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub distinct_edges: usize,
    pub events: usize,
    pub duration_weeks: Option<f64>,
    pub density: f64,
    pub degree_min: usize,
    pub degree_median: f64,
    pub degree_max: usize,
}

/// Frozen binary adjacency at one progress point, in compressed sparse rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotView {
    progress: f64,
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl SnapshotView {
    /// Builds a symmetric adjacency from arbitrary pairs. Self-pairs are
    /// ignored and duplicates collapse.
    pub fn from_pairs<I>(num_nodes: usize, pairs: I, progress: f64) -> Self
    where
        I: IntoIterator<Item = Pair>,
    {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for (a, b) in pairs {
            if a != b {
                lists[a].push(b);
                lists[b].push(a);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            list.dedup();
            targets.extend(list);
            offsets.push(targets.len());
        }
        Self {
            progress,
            offsets,
            targets,
        }
    }

    pub fn progress(&self) -> f64 {
        self.progress
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    /// Sorted neighbors of `node`.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        a < self.num_nodes() && self.neighbors(a).binary_search(&b).is_ok()
    }

    /// Canonical edges in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = Pair> + '_ {
        (0..self.num_nodes()).flat_map(move |i| {
            self.neighbors(i)
                .iter()
                .copied()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
    }
}
