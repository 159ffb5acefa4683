//! Strategies shared by the property suite and the acceptance runner.
#![allow(dead_code)]

use std::collections::HashSet;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use slnlink::graph::canonical;
use slnlink::splits::{sample_negatives, NegativeSampler, PairSet};
use slnlink::{make_split, merge, Error, SnapshotView, SplitConfig, TemporalGraph};

pub const DURATION: f64 = 10.0;

/// Timestamps are quarter-week values divided by the duration, the same
/// way the loader normalizes them, so CSV round trips are exact.
pub fn week_timestamp(quarter_weeks: u32) -> f64 {
    (quarter_weeks as f64 * 0.25) / DURATION
}

/// Random single-source graph with `2..=max_nodes` nodes and up to
/// `max_events` events (repeats allowed).
pub fn arb_graph(max_nodes: usize, max_events: usize, tag: &'static str) -> impl Strategy<Value = TemporalGraph> {
    (2..=max_nodes).prop_flat_map(move |n| {
        prop::collection::vec((0..n, 0..n - 1, 0u32..=40), 0..=max_events).prop_map(move |raw| {
            let events = raw.into_iter().map(|(u, v, w)| {
                let v = if v >= u { v + 1 } else { v };
                (u, v, week_timestamp(w))
            });
            TemporalGraph::new(n, events, DURATION, tag).expect("valid by construction")
        })
    })
}

/// Progress point strictly inside (0, 1) on the quarter-week grid or off it.
pub fn arb_progress() -> impl Strategy<Value = f64> {
    prop_oneof![(1u32..40).prop_map(week_timestamp), 0.01f64..0.99]
}

pub fn edge_set(s: &SnapshotView) -> HashSet<(usize, usize)> {
    s.edges().collect()
}

/// Snapshots at `p <= q` are nested and the full snapshot holds every pair.
pub fn check_snapshot_monotone(g: &TemporalGraph, p: f64, q: f64) -> Result<(), TestCaseError> {
    let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
    let a = edge_set(&g.snapshot(lo).unwrap());
    let b = edge_set(&g.snapshot(hi).unwrap());
    prop_assert!(a.is_subset(&b));
    prop_assert_eq!(g.snapshot(1.0).unwrap().num_edges(), g.distinct_edges().len());
    Ok(())
}

/// Merged snapshots are the offset disjoint union of the parts.
pub fn check_merge_additive(a: &TemporalGraph, b: &TemporalGraph, p: f64) -> Result<(), TestCaseError> {
    let m = merge(&[a.clone(), b.clone()]).unwrap();
    prop_assert_eq!(m.num_nodes(), a.num_nodes() + b.num_nodes());
    prop_assert_eq!(m.events().len(), a.events().len() + b.events().len());
    let sm = m.snapshot(p).unwrap();
    let sa = a.snapshot(p).unwrap();
    let sb = b.snapshot(p).unwrap();
    prop_assert_eq!(sm.num_edges(), sa.num_edges() + sb.num_edges());
    let off = a.num_nodes();
    let mut expected = edge_set(&sa);
    expected.extend(sb.edges().map(|(x, y)| (x + off, y + off)));
    prop_assert_eq!(edge_set(&sm), expected);
    prop_assert!(sm.edges().all(|(x, y)| (x < off) == (y < off)));
    let rb = m.source("b").unwrap();
    prop_assert_eq!((rb.start, rb.len), (off, b.num_nodes()));
    Ok(())
}

/// Folds partition the future links; test pairs never leak into training.
pub fn check_fold_partition(g: &TemporalGraph, p: f64, k: usize, seed: u64) -> Result<(), TestCaseError> {
    let Ok(plan) = make_split(&g, &SplitConfig::new(p, k, seed)) else {
        // only acceptable failure: nothing to predict
        let future = g.snapshot(1.0).unwrap().num_edges() - g.snapshot(p).unwrap().num_edges();
        prop_assert_eq!(future, 0);
        return Ok(());
    };
    let observed = edge_set(&plan.observed);
    let target = edge_set(&plan.target);
    let expected: HashSet<_> = target.difference(&observed).copied().collect();
    let mut seen = HashSet::new();
    for fold in &plan.folds {
        for &pair in fold {
            prop_assert!(seen.insert(pair), "pair {pair:?} in two folds");
        }
    }
    prop_assert_eq!(&seen, &expected);
    let sizes: Vec<_> = plan.folds.iter().map(Vec::len).collect();
    prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    for f in 0..k {
        let task = match plan.fold_task(f) {
            Ok(t) => t,
            // dense toy graphs can run out of non-edges for the test negatives
            Err(Error::InsufficientNonEdges { requested, available }) => {
                prop_assert!(requested > available);
                prop_assert_eq!(requested, plan.folds[f].len());
                continue;
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let train: HashSet<_> = task.train_positives.iter().copied().collect();
        let test: HashSet<_> = task.test_positives.iter().copied().collect();
        prop_assert!(train.is_disjoint(&test));
        prop_assert_eq!(train.len() + test.len(), expected.len());
        prop_assert!(test.is_disjoint(&observed));
        for &(x, y) in &task.test_negatives {
            prop_assert!(x < y);
            prop_assert!(!target.contains(&(x, y)));
        }
        let negs: HashSet<_> = task.test_negatives.iter().collect();
        prop_assert_eq!(negs.len(), task.test_negatives.len());
        let excl = plan.training_exclusions(&task);
        prop_assert!(target.iter().all(|pair| excl.contains(pair)));
        prop_assert!(task.test_negatives.iter().all(|pair| excl.contains(pair)));
    }
    Ok(())
}

/// Sampled negatives are distinct non-edges outside the forbidden set.
pub fn check_negative_exclusion(
    g: &TemporalGraph,
    p: f64,
    forbid: &[(usize, usize)],
    frac: f64,
    seed: u64,
) -> Result<(), TestCaseError> {
    let s = g.snapshot(p).unwrap();
    let n = s.num_nodes();
    let forbidden: PairSet = forbid
        .iter()
        .map(|&(x, y)| (x % n, y % n))
        .filter(|(x, y)| x != y)
        .map(|(x, y)| canonical(x, y))
        .collect();
    let sampler = NegativeSampler::new(&s, &forbidden, 0..n);
    let all = sampler.all();
    prop_assert_eq!(all.len(), sampler.available());
    let count = (frac * sampler.available() as f64).floor() as usize;
    let drawn = sample_negatives(&s, &forbidden, count, seed).unwrap();
    prop_assert_eq!(drawn.len(), count);
    let unique: HashSet<_> = drawn.iter().copied().collect();
    prop_assert_eq!(unique.len(), count);
    for &(x, y) in &drawn {
        prop_assert!(x < y);
        prop_assert!(!s.has_edge(x, y));
        prop_assert!(!forbidden.contains(&(x, y)));
    }
    prop_assert!(sample_negatives(&s, &forbidden, sampler.available() + 1, seed).is_err());
    Ok(())
}
