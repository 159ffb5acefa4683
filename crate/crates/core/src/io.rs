//! Edge-list files, dataset manifests and summary tables.
//!
//! Edge CSV layout:
//!
//! ```text
//! # nodes: 677
//! src,dst,week
//! 0,1,0.25
//! 3,1,4.5
//! ```
//!
//! Lines starting with `#` are comments. The optional `# nodes: N` comment
//! pins the node count so isolated nodes survive a save/load cycle; without
//! it, node indices are compacted to `0..distinct_ids` in ascending order.
//! Week values are divided by the manifest duration to give progress
//! fractions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TemporalGraph;

const HEADER: &str = "src,dst,week";
const NODES_DIRECTIVE: &str = "nodes:";

/// Where to find a dataset and what it should contain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tag: String,
    pub path: PathBuf,
    pub duration_weeks: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_events: Option<usize>,
}

impl DatasetManifest {
    pub fn new(tag: impl Into<String>, path: impl Into<PathBuf>, duration_weeks: f64) -> Self {
        Self {
            tag: tag.into(),
            path: path.into(),
            duration_weeks,
            expected_nodes: None,
            expected_events: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tag.is_empty() {
            return Err(Error::config("io", "manifest tag must be non-empty"));
        }
        if !(self.duration_weeks.is_finite() && self.duration_weeks > 0.0) {
            return Err(Error::config(
                "io",
                format!(
                    "manifest {:?}: duration_weeks must be positive, got {}",
                    self.tag, self.duration_weeks
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ManifestFile {
    #[serde(default)]
    dataset: Vec<DatasetManifest>,
}

/// Reads a TOML manifest file with one `[[dataset]]` table per dataset.
/// Relative data paths resolve against the manifest's directory.
pub fn load_manifests(path: &Path) -> Result<Vec<DatasetManifest>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e
            .span()
            .map(|s| text[..s.start].matches('\n').count() + 1)
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    file.dataset
        .into_iter()
        .map(|mut m| {
            m.validate()?;
            if m.path.is_relative() {
                m.path = base.join(&m.path);
            }
            Ok(m)
        })
        .collect()
}

/// Loads the edge CSV named by `manifest`, normalizing weeks to progress.
pub fn load_edge_csv(manifest: &DatasetManifest) -> Result<TemporalGraph> {
    manifest.validate()?;
    let path = manifest.path.as_path();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut declared_nodes: Option<usize> = None;
    let mut seen_header = false;
    // (line, src, dst, week)
    let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(n) = comment.trim().strip_prefix(NODES_DIRECTIVE) {
                let n = n
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad node count {:?}", n.trim())))?;
                declared_nodes = Some(n);
            }
            continue;
        }
        if !seen_header {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.join(",") != HEADER {
                return Err(parse_err(line_no, format!("expected header {HEADER:?}, found {line:?}")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let node = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(line_no, format!("bad node index {s:?}")))
        };
        let src = node(fields[0])?;
        let dst = node(fields[1])?;
        let week: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad week value {:?}", fields[2])))?;
        if src == dst {
            return Err(parse_err(line_no, format!("self-loop on node {src}")));
        }
        if !(week.is_finite() && week >= 0.0) {
            return Err(parse_err(line_no, format!("week {week} must be a non-negative number")));
        }
        if week > manifest.duration_weeks {
            return Err(parse_err(
                line_no,
                format!("week {week} exceeds course duration {}", manifest.duration_weeks),
            ));
        }
        rows.push((line_no, src, dst, week));
    }
    if !seen_header {
        return Err(parse_err(0, format!("missing header {HEADER:?}")));
    }

    let (num_nodes, remap): (usize, Option<BTreeMap<usize, usize>>) = match declared_nodes {
        Some(n) => {
            if let Some(&(line, src, dst, _)) = rows.iter().find(|r| r.1 >= n || r.2 >= n) {
                return Err(parse_err(
                    line,
                    format!("node index {} out of range for declared {n} nodes", src.max(dst)),
                ));
            }
            (n, None)
        }
        None => {
            let mut ids = BTreeMap::new();
            for &(_, s, d, _) in &rows {
                ids.insert(s, 0);
                ids.insert(d, 0);
            }
            for (compact, slot) in ids.values_mut().enumerate() {
                *slot = compact;
            }
            (ids.len(), Some(ids))
        }
    };

    if let Some(expected) = manifest.expected_nodes {
        if expected != num_nodes {
            return Err(Error::ManifestMismatch {
                path: path.to_path_buf(),
                tag: manifest.tag.clone(),
                what: "nodes",
                expected,
                observed: num_nodes,
            });
        }
    }
    if let Some(expected) = manifest.expected_events {
        if expected != rows.len() {
            return Err(Error::ManifestMismatch {
                path: path.to_path_buf(),
                tag: manifest.tag.clone(),
                what: "events",
                expected,
                observed: rows.len(),
            });
        }
    }

    let d = manifest.duration_weeks;
    let events = rows.iter().map(|&(_, s, t, w)| match &remap {
        Some(m) => (m[&s], m[&t], w / d),
        None => (s, t, w / d),
    });
    TemporalGraph::new(num_nodes, events, d, &manifest.tag)
}

/// Week value whose normalization by `duration` gives back `progress`
/// exactly, when one exists next to the naive product.
pub fn progress_to_week(progress: f64, duration: f64) -> f64 {
    let naive = progress * duration;
    if naive / duration == progress {
        return naive;
    }
    let (mut up, mut down) = (naive, naive);
    for _ in 0..4 {
        up = up.next_up();
        down = down.next_down();
        if up / duration == progress {
            return up;
        }
        if down >= 0.0 && down / duration == progress {
            return down;
        }
    }
    naive
}

/// Writes `graph` as an edge CSV with a `# nodes:` comment.
///
/// Progress values produced by dividing a week value by the duration (as
/// the loader and the generator do) survive the round trip bit-for-bit.
pub fn save_edge_csv(graph: &TemporalGraph, path: &Path) -> Result<()> {
    let duration = graph.duration_weeks().ok_or_else(|| {
        Error::config(
            "io",
            "cannot save a merged graph whose sources have different durations",
        )
    })?;
    let mut out = String::with_capacity(32 * graph.events().len() + 64);
    let _ = writeln!(out, "# {NODES_DIRECTIVE} {}", graph.num_nodes());
    let _ = writeln!(out, "{HEADER}");
    for e in graph.events() {
        let _ = writeln!(out, "{},{},{}", e.u, e.v, progress_to_week(e.timestamp, duration));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One row per graph: nodes, distinct edges, duration, events (posts) and
/// density. Durations that differ across merged sources print as `mixed`.
pub fn stats_table(graphs: &[&TemporalGraph]) -> String {
    let mut rows = vec![[
        "Dataset".to_string(),
        "# Nodes".to_string(),
        "# Edges".to_string(),
        "Duration".to_string(),
        "# Posts".to_string(),
        "Density".to_string(),
    ]];
    for g in graphs {
        let s = g.stats();
        let tag = g
            .provenance()
            .iter()
            .map(|p| p.tag.as_str())
            .collect::<Vec<_>>()
            .join("+");
        rows.push([
            tag,
            s.nodes.to_string(),
            s.distinct_edges.to_string(),
            s.duration_weeks
                .map(|d| d.to_string())
                .unwrap_or_else(|| "mixed".to_string()),
            s.events.to_string(),
            format!("{:.5}", s.density),
        ]);
    }
    render_grid(&rows)
}

/// Left-aligned first column, right-aligned others, `|` separated.
pub(crate) fn render_grid<const N: usize>(rows: &[[String; N]]) -> String {
    let mut widths = [0usize; N];
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for (r, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = widths[c])
                } else {
                    format!("{cell:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
        if r == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}
