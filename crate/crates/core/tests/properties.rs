//! Randomized invariants of graphs, splits, sampling, metrics and the model.

mod common;

use std::collections::HashSet;

use common::{
    arb_graph, arb_progress, check_fold_partition, check_merge_additive, check_negative_exclusion, check_snapshot_monotone,
    edge_set,
};
use ndarray::Array2;
use proptest::prelude::*;
use slnlink::model::forward;
use slnlink::{
    auc_pairwise, auc_rank, generate_synthetic_sln, init_params, merge, welch_t_one_sided, Dims,
    GeneratorConfig, SnapshotView, TemporalGraph, TiePolicy,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn snapshots_grow_with_progress(g in arb_graph(20, 60, "g"), p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
        check_snapshot_monotone(&g, p, q)?;
    }

    #[test]
    fn snapshot_adjacency_is_symmetric(g in arb_graph(20, 60, "g"), p in arb_progress()) {
        let s = g.snapshot(p).unwrap();
        let mut half_edges = 0;
        for i in 0..s.num_nodes() {
            for &j in s.neighbors(i) {
                prop_assert!(i != j);
                prop_assert!(s.has_edge(j, i));
                half_edges += 1;
            }
        }
        prop_assert_eq!(half_edges, 2 * s.num_edges());
        let expected: HashSet<_> = g
            .events()
            .iter()
            .filter(|e| e.timestamp <= p)
            .map(|e| (e.u, e.v))
            .collect();
        prop_assert_eq!(edge_set(&s), expected);
    }

    #[test]
    fn merge_is_additive(a in arb_graph(15, 40, "a"), b in arb_graph(15, 40, "b"), p in arb_progress()) {
        check_merge_additive(&a, &b, p)?;
    }

    #[test]
    fn restrict_pairs_keeps_internal_pairs(
        a in arb_graph(10, 10, "a"),
        b in arb_graph(10, 10, "b"),
        raw in prop::collection::vec((0usize..20, 0usize..20), 0..40),
    ) {
        let m = merge(&[a.clone(), b]).unwrap();
        let n = m.num_nodes();
        let pairs: Vec<_> = raw.into_iter().map(|(x, y)| (x % n, y % n)).collect();
        let kept = m.restrict_pairs("a", &pairs).unwrap();
        let inside = |x: usize| x < a.num_nodes();
        let expected: Vec<_> = pairs.iter().copied().filter(|&(x, y)| inside(x) && inside(y)).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn folds_partition_future_links(g in arb_graph(20, 80, "g"), p in arb_progress(), k in 2usize..8, seed in any::<u64>()) {
        check_fold_partition(&g, p, k, seed)?;
    }

    #[test]
    fn negatives_avoid_edges_and_exclusions(
        g in arb_graph(25, 60, "g"),
        p in arb_progress(),
        forbid in prop::collection::vec((0usize..25, 0usize..25), 0..30),
        frac in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        check_negative_exclusion(&g, p, &forbid, frac, seed)?;
    }
}

fn arb_scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    // Coarse grids make ties common.
    let value = prop_oneof![(0u8..6).prop_map(|v| v as f64 / 5.0), -3.0f64..3.0];
    (
        prop::collection::vec(value.clone(), 1..40),
        prop::collection::vec(value, 1..40),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn auc_rank_matches_enumeration((pos, neg) in arb_scores()) {
        let a = auc_rank(&pos, &neg).unwrap();
        let b = auc_pairwise(&pos, &neg, TiePolicy::Half).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
        let strict = auc_pairwise(&pos, &neg, TiePolicy::Strict).unwrap();
        prop_assert!(strict <= a);
    }

    #[test]
    fn auc_complement((pos, neg) in arb_scores()) {
        let a = auc_rank(&pos, &neg).unwrap();
        let b = auc_rank(&neg, &pos).unwrap();
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn auc_invariant_under_increasing_maps((pos, neg) in arb_scores(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let base = auc_rank(&pos, &neg).unwrap();
        for f in [|x: f64, a: f64, b: f64| a * x + b, |x: f64, a: f64, _: f64| (a * x).exp()] {
            let p: Vec<f64> = pos.iter().map(|&x| f(x, scale, shift)).collect();
            let n: Vec<f64> = neg.iter().map(|&x| f(x, scale, shift)).collect();
            prop_assert!((auc_rank(&p, &n).unwrap() - base).abs() <= 1e-12);
        }
    }

    #[test]
    fn raising_a_lowers_the_p_value(
        a in prop::collection::vec(0.0f64..1.0, 3..12),
        b in prop::collection::vec(0.0f64..1.0, 3..12),
        delta in 0.001f64..0.5,
    ) {
        let Ok(base) = welch_t_one_sided(&a, &b, 0.1) else { return Ok(()) };
        let lifted: Vec<f64> = a.iter().map(|x| x + delta).collect();
        let up = welch_t_one_sided(&lifted, &b, 0.1).unwrap();
        prop_assert!(up.p_value <= base.p_value);
        prop_assert!((0.0..=1.0).contains(&up.p_value));
        let swapped = welch_t_one_sided(&b, &a, 0.1).unwrap();
        prop_assert!((swapped.p_value + base.p_value - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn forward_is_permutation_equivariant(
        edges in prop::collection::vec((0usize..8, 0usize..8), 0..20),
        perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle(),
        seed in any::<u64>(),
        final_activation in any::<bool>(),
    ) {
        let edges: Vec<_> = edges.into_iter().filter(|(a, b)| a != b).collect();
        let s = SnapshotView::from_pairs(8, edges.iter().copied(), 1.0);
        let sp = SnapshotView::from_pairs(8, edges.iter().map(|&(a, b)| (perm[a], perm[b])), 1.0);
        let mut params = init_params(8, Dims { input: 4, hidden: 5, output: 3 }, seed).unwrap();
        params.final_activation = final_activation;
        let mut permuted = params.clone();
        let mut emb = Array2::zeros(params.embeddings.raw_dim());
        for i in 0..8 {
            emb.row_mut(perm[i]).assign(&params.embeddings.row(i));
        }
        permuted.embeddings = emb;
        let h = forward(&params, &s).unwrap().h2;
        let hp = forward(&permuted, &sp).unwrap().h2;
        for i in 0..8 {
            for c in 0..3 {
                prop_assert!((h[[i, c]] - hp[[perm[i], c]]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip(g in arb_graph(30, 80, "rt")) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        slnlink::save_edge_csv(&g, &path).unwrap();
        let back = slnlink::load_edge_csv(&slnlink::DatasetManifest::new("rt", &path, common::DURATION)).unwrap();
        prop_assert_eq!(back, g);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generator_is_deterministic(seed in any::<u64>(), n in 10usize..80) {
        let cfg = GeneratorConfig::preset("al-like").unwrap().scaled_to(n).with_seed(seed);
        let a = generate_synthetic_sln(&cfg, "x").unwrap();
        let b = generate_synthetic_sln(&cfg, "x").unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.num_nodes(), n);
        prop_assert!(a.events().iter().all(|e| e.u < e.v && e.v < n && (0.0..=1.0).contains(&e.timestamp)));
    }
}

#[test]
fn presets_are_heavy_tailed() {
    for name in ["vs-like", "al-like", "cp-like"] {
        let g: TemporalGraph = generate_synthetic_sln(&GeneratorConfig::preset(name).unwrap(), name).unwrap();
        let s = g.stats();
        assert!(
            s.degree_max as f64 >= 5.0 * s.degree_median,
            "{name}: max {} median {}",
            s.degree_max,
            s.degree_median
        );
    }
}
