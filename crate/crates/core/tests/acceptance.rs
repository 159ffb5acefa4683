//! Acceptance criteria, one PASS/FAIL line each. Pass criterion numbers as
//! arguments to run a subset: `cargo test --test acceptance -- 1 4`.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    arb_graph, arb_progress, check_fold_partition, check_merge_additive, check_negative_exclusion,
    check_snapshot_monotone,
};
use slnlink::eval::auc;
use slnlink::experiments::{format_p_value, write_report};
use slnlink::splits::{NegativeSampler, PairSet};
use slnlink::synth::PRESET_NAMES;
use slnlink::train::{grad_check, GradCheckOptions};
use slnlink::{
    auc_pairwise, auc_rank, generate_synthetic_sln, load_edge_csv, make_split, render_tables, run_matrix, save_edge_csv,
    score_pairs, train, weighted_bce, welch_t_one_sided, DatasetEntry, DatasetManifest, Error, ExperimentSpec,
    GeneratorConfig, Mode, RunOptions, SplitConfig, TiePolicy, TrainConfig,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grad_correctness() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for (seed, size) in [(1, 8), (2, 12), (3, 16)] {
        let r = grad_check(&GradCheckOptions {
            graph_size: size,
            seed,
            ..GradCheckOptions::default()
        })
        .map_err(|e| e.to_string())?;
        let err = r.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
        worst = worst.max(err);
        ensure(r.passed && err < 1e-4, || format!("seed {seed}, {size} nodes: failing {:?}", r.failing_blocks()))?;
    }
    let elapsed = t0.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("max rel error {worst:.2e} in {:.1}s", elapsed.as_secs_f64()))
}

fn explicit_strict_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0u64;
    for p in pos {
        for n in neg {
            if p > n {
                wins += 1;
            }
        }
    }
    wins as f64 / (pos.len() * neg.len()) as f64
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut with_ties = 0;
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let (np, nn) = (rng.random_range(1..60), rng.random_range(1..60));
        // every other instance draws from a 6-value grid
        let coarse = i % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| {
            if coarse {
                rng.random_range(0..6) as f64 / 5.0
            } else {
                rng.random_range(-4.0..4.0)
            }
        };
        let pos: Vec<f64> = (0..np).map(|_| draw(&mut rng)).collect();
        let neg: Vec<f64> = (0..nn).map(|_| draw(&mut rng)).collect();
        if pos.iter().any(|p| neg.contains(p)) {
            with_ties += 1;
        }
        let rank = auc_rank(&pos, &neg).map_err(|e| e.to_string())?;
        let half = auc_pairwise(&pos, &neg, TiePolicy::Half).map_err(|e| e.to_string())?;
        worst = worst.max((rank - half).abs());
        ensure((rank - half).abs() <= 1e-12, || format!("instance {i}: rank {rank} vs pairwise {half}"))?;
        let expected = explicit_strict_auc(&pos, &neg);
        for strict in [
            auc_pairwise(&pos, &neg, TiePolicy::Strict),
            auc(&pos, &neg, TiePolicy::Strict),
        ] {
            let strict = strict.map_err(|e| e.to_string())?;
            ensure(strict == expected, || format!("instance {i}: strict {strict} vs enumeration {expected}"))?;
        }
    }
    ensure(with_ties >= 40, || format!("only {with_ties}/200 instances had ties"))?;
    Ok(format!("200 instances, {with_ties} with ties, max |rank - pairwise| {worst:.1e}"))
}

fn loss_value() -> Outcome {
    let got = weighted_bce(&[0.0], &[0.0], 20.0).total_loss;
    let want = 21.0 * std::f64::consts::LN_2;
    ensure((got - want).abs() <= 1e-12, || format!("{got} vs {want}"))?;
    Ok(format!("{got:.15}"))
}

struct WelchCase {
    a: &'static [f64],
    b: &'static [f64],
    t: Option<f64>,
    df: Option<f64>,
    p: f64,
}

/// Reference values from 50-digit arbitrary-precision evaluation.
const WELCH_CASES: [WelchCase; 5] = [
    WelchCase {
        a: &[0.9, 0.91, 0.92],
        b: &[0.80, 0.81, 0.82],
        t: Some(12.24744871391591542),
        df: Some(4.0),
        p: 0.00012760837472096235422,
    },
    WelchCase {
        a: &[0.71, 0.74, 0.69, 0.77, 0.73, 0.70, 0.75, 0.72, 0.76, 0.74],
        b: &[0.70, 0.72, 0.68, 0.75, 0.71, 0.69, 0.73, 0.70, 0.74, 0.72],
        t: None,
        df: Some(17.568630868442313291),
        p: 0.066933365306575042451,
    },
    WelchCase {
        a: &[0.55, 0.61, 0.58, 0.66],
        b: &[0.60, 0.59, 0.63, 0.57, 0.62, 0.64],
        t: Some(-0.3228831748798883),
        df: None,
        p: 0.61903559692230602329,
    },
    WelchCase {
        a: &[0.93, 0.95, 0.90, 0.97, 0.94],
        b: &[0.88, 0.96, 0.80, 0.99, 0.85],
        t: None,
        df: None,
        p: 0.15385721208904651637,
    },
    WelchCase {
        a: &[0.5, 0.52],
        b: &[0.51, 0.49, 0.53],
        t: Some(0.0),
        df: None,
        p: 0.5,
    },
];

fn t_test_accuracy() -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, c) in WELCH_CASES.iter().enumerate() {
        let r = welch_t_one_sided(c.a, c.b, 0.10).map_err(|e| e.to_string())?;
        worst = worst.max((r.p_value - c.p).abs());
        ensure((r.p_value - c.p).abs() <= 1e-6, || format!("case {i}: p {} vs {}", r.p_value, c.p))?;
        if let Some(t) = c.t {
            ensure((r.t_statistic - t).abs() <= 1e-9, || format!("case {i}: t {} vs {t}", r.t_statistic))?;
        }
        if let Some(df) = c.df {
            ensure((r.degrees_of_freedom - df).abs() <= 1e-9, || {
                format!("case {i}: df {} vs {df}", r.degrees_of_freedom)
            })?;
        }
    }
    let same = [0.8, 0.82, 0.85, 0.79];
    let r = welch_t_one_sided(&same, &same, 0.10).map_err(|e| e.to_string())?;
    ensure((r.p_value - 0.5).abs() <= 1e-12, || format!("identical samples: p = {}", r.p_value))?;
    Ok(format!("5 oracle cases, max |dp| {worst:.1e}; identical samples p = {}", r.p_value))
}

fn determinism() -> Outcome {
    let t0 = Instant::now();
    let mut spec = ExperimentSpec::new(vec![DatasetEntry::preset("vs-like", "vs-like")]);
    spec.progress_points = vec![0.25, 0.75];
    spec.modes = vec![Mode::Iso];
    spec.master_seed = 42;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    for run in ["first", "second"] {
        let report = run_matrix(&spec, Path::new("."), &RunOptions::default()).map_err(|e| e.to_string())?;
        ensure(report.failed_cells().is_empty(), || format!("{run} run had failed cells"))?;
        let out = dir.path().join(run);
        write_report(&report, &out).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(out.join("report.json")).map_err(|e| e.to_string())?);
    }
    ensure(bytes[0] == bytes[1], || "reports differ between runs".into())?;
    let elapsed = t0.elapsed();
    ensure(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    Ok(format!("{} identical bytes, {:.0}s for both runs", bytes[0].len(), elapsed.as_secs_f64()))
}

/// Training-set AUC of the 50-node overfit run.
const OVERFIT_GOLDEN: f64 = 0.8372;

fn overfit_sanity() -> Outcome {
    let cfg = GeneratorConfig::preset("vs-like").unwrap().scaled_to(50).with_seed(42);
    let g = generate_synthetic_sln(&cfg, "vs-like").map_err(|e| e.to_string())?;
    let plan = make_split(&g, &SplitConfig::new(0.5, 10, 42)).map_err(|e| e.to_string())?;
    let task = plan.fold_task(0).map_err(|e| e.to_string())?;
    let tc = TrainConfig::default();
    let exclusions = plan.training_exclusions(&task);
    let out = train(&plan.observed, &task.train_positives, &exclusions, &tc, Default::default())
        .map_err(|e| e.to_string())?;

    // fresh negatives, disjoint from everything the target snapshot connects
    let mut forbidden: PairSet = exclusions;
    forbidden.extend(task.train_positives.iter().copied());
    let sampler = NegativeSampler::new(&plan.observed, &forbidden, 0..g.num_nodes());
    let mut rng = slnlink::seed::rng(7);
    let count = task.train_positives.len().min(sampler.available());
    let negatives = sampler.sample(count, &mut rng).map_err(|e| e.to_string())?;

    let trace = slnlink::forward(&out.params, &plan.observed).map_err(|e| e.to_string())?;
    let pos = score_pairs(&trace, &task.train_positives).map_err(|e| e.to_string())?;
    let neg = score_pairs(&trace, &negatives).map_err(|e| e.to_string())?;
    let train_auc = auc(&pos.raw, &neg.raw, TiePolicy::Half).map_err(|e| e.to_string())?;
    ensure(train_auc >= 0.90, || format!("training AUC {train_auc:.4} < 0.90"))?;
    ensure((train_auc - OVERFIT_GOLDEN).abs() <= 0.01, || {
        format!("training AUC {train_auc:.6} drifted from golden {OVERFIT_GOLDEN}")
    })?;
    Ok(format!(
        "training AUC {train_auc:.4} on {} positives / {} negatives",
        pos.raw.len(),
        neg.raw.len()
    ))
}

/// Seed-42 iso mean AUC per preset at progress (0.25, 0.75).
const ISO_GOLDEN: [(&str, f64, f64); 4] = [
    ("vs-like", 0.8522, 0.8929),
    ("ml-like", 0.6353, 0.6287),
    ("al-like", 0.9128, 0.9238),
    ("cp-like", 0.9226, 0.9310),
];

/// Golden means are compared at this tolerance: float kernels differ
/// slightly across CPUs and 1500 epochs of Adam amplify the difference.
const GOLDEN_TOL: f64 = 0.01;

fn preset_suite() -> Vec<DatasetEntry> {
    PRESET_NAMES.iter().map(|p| DatasetEntry::preset(p, p)).collect()
}

fn progress_direction(cache: &Path) -> Outcome {
    let mut spec = ExperimentSpec::new(preset_suite());
    spec.progress_points = vec![0.25, 0.75];
    spec.modes = vec![Mode::Iso];
    let opts = RunOptions {
        cache_dir: Some(cache.to_path_buf()),
        resume: true,
        jobs: 1,
    };
    let report = run_matrix(&spec, Path::new("."), &opts).map_err(|e| e.to_string())?;
    let mut improved = 0;
    let mut summary = Vec::new();
    for (tag, early_golden, late_golden) in ISO_GOLDEN {
        let mean = |p: f64| {
            report
                .cell(tag, p, Mode::Iso)
                .and_then(|c| c.mean)
                .ok_or_else(|| format!("{tag} at {p}: no result"))
        };
        let (early, late) = (mean(0.25)?, mean(0.75)?);
        ensure((early - early_golden).abs() <= GOLDEN_TOL && (late - late_golden).abs() <= GOLDEN_TOL, || {
            format!("{tag}: ({early:.4}, {late:.4}) drifted from golden ({early_golden}, {late_golden})")
        })?;
        if late > early - 0.02 {
            improved += 1;
        }
        summary.push(format!("{tag} {early:.3}->{late:.3}"));
    }
    ensure(improved >= 3, || format!("only {improved}/4 datasets hold: {}", summary.join(", ")))?;
    Ok(format!("{improved}/4 hold: {}", summary.join(", ")))
}

/// Seed-42 combined-mode result on the sparsest classroom at progress 0.25.
const COMBINED_GOLDEN: (&str, f64, &str) = ("cp-like", 0.9224, "5.14e-1");

fn sparsest_by_mean_degree() -> Result<String, String> {
    let mut best: Option<(f64, &str)> = None;
    for name in PRESET_NAMES {
        let cfg = GeneratorConfig::preset(name).unwrap();
        let s = generate_synthetic_sln(&cfg, name).map_err(|e| e.to_string())?.stats();
        let mean_degree = 2.0 * s.distinct_edges as f64 / s.nodes as f64;
        if best.is_none_or(|(d, _)| mean_degree < d) {
            best = Some((mean_degree, name));
        }
    }
    Ok(best.unwrap().1.to_string())
}

fn is_p_value_text(s: &str) -> bool {
    // d.dde-d (or e+d, e0)
    let Some((mantissa, exponent)) = s.split_once('e') else {
        return false;
    };
    let m = mantissa.as_bytes();
    let digits = exponent.strip_prefix('-').unwrap_or(exponent);
    m.len() == 4
        && m[0].is_ascii_digit()
        && m[1] == b'.'
        && m[2].is_ascii_digit()
        && m[3].is_ascii_digit()
        && !digits.is_empty()
        && digits.bytes().all(|b| b.is_ascii_digit())
}

fn combined_direction(cache: &Path) -> Outcome {
    let target = sparsest_by_mean_degree()?;
    ensure(target == COMBINED_GOLDEN.0, || format!("sparsest classroom is {target}"))?;
    let mut spec = ExperimentSpec::new(preset_suite());
    spec.progress_points = vec![0.25];
    spec.modes = vec![Mode::Iso, Mode::Combined];
    spec.combined_targets = Some(vec![target.clone()]);
    let opts = RunOptions {
        cache_dir: Some(cache.to_path_buf()),
        resume: true,
        jobs: 1,
    };
    let report = run_matrix(&spec, Path::new("."), &opts).map_err(|e| e.to_string())?;
    let mean = |mode| {
        report
            .cell(&target, 0.25, mode)
            .and_then(|c| c.mean)
            .ok_or_else(|| format!("{target} {mode:?}: no result"))
    };
    let (iso, combined) = (mean(Mode::Iso)?, mean(Mode::Combined)?);
    ensure(combined >= iso - 0.01, || format!("combined {combined:.4} < iso {iso:.4} - 0.01"))?;
    ensure((combined - COMBINED_GOLDEN.1).abs() <= GOLDEN_TOL, || {
        format!("combined {combined:.4} drifted from golden {}", COMBINED_GOLDEN.1)
    })?;

    let cmp = report
        .comparisons
        .iter()
        .find(|c| c.dataset == target && c.progress == 0.25)
        .ok_or("no comparison recorded")?;
    let welch = cmp.welch.as_ref().ok_or_else(|| format!("t-test failed: {:?}", cmp.error))?;
    let tables = render_tables(&report);
    let row = tables
        .lines()
        .find(|l| l.starts_with("IS vs CO"))
        .ok_or_else(|| format!("no comparison row in:\n{tables}"))?;
    let cols: Vec<&str> = row.split('|').map(str::trim).collect();
    ensure(cols.len() == 5, || format!("malformed row {row:?}"))?;
    ensure(cols[1] == target && cols[2] == "25%", || format!("row {row:?}"))?;
    ensure(is_p_value_text(cols[3]), || format!("p-value cell {:?}", cols[3]))?;
    ensure(cols[3] == format_p_value(welch.p_value), || format!("row p {} vs {}", cols[3], welch.p_value))?;
    let expected_decision = if welch.p_value < spec.alpha {
        "Reject H0"
    } else {
        "Fail to Reject H0"
    };
    ensure(cols[4] == expected_decision, || format!("decision {:?} with p = {}", cols[4], welch.p_value))?;
    let p_golden: f64 = COMBINED_GOLDEN.2.parse().unwrap();
    ensure((welch.p_value - p_golden).abs() <= 0.1, || {
        format!("p {} drifted from golden {}", welch.p_value, COMBINED_GOLDEN.2)
    })?;
    Ok(format!("iso {iso:.4}, combined {combined:.4}; row: {row}"))
}

fn run_property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn leakage_invariants() -> Outcome {
    run_property(
        "snapshot monotonicity",
        (arb_graph(20, 60, "g"), 0.0f64..=1.0, 0.0f64..=1.0),
        |(g, p, q)| check_snapshot_monotone(&g, p, q),
    )?;
    run_property(
        "fold partition",
        (arb_graph(20, 80, "g"), arb_progress(), 2usize..8, any::<u64>()),
        |(g, p, k, seed)| check_fold_partition(&g, p, k, seed),
    )?;
    run_property(
        "negative exclusion",
        (
            arb_graph(25, 60, "g"),
            arb_progress(),
            prop::collection::vec((0usize..25, 0usize..25), 0..30),
            0.0f64..=1.0,
            any::<u64>(),
        ),
        |(g, p, forbid, frac, seed)| check_negative_exclusion(&g, p, &forbid, frac, seed),
    )?;
    run_property(
        "merge additivity",
        (arb_graph(15, 40, "a"), arb_graph(15, 40, "b"), arb_progress()),
        |(a, b, p)| check_merge_additive(&a, &b, p),
    )?;
    Ok("4 properties x 1000 cases".into())
}

fn round_trip_io() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("g.csv");
    let mut runner = TestRunner::new(Config {
        cases: 100,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&arb_graph(30, 80, "rt"), |g| {
            save_edge_csv(&g, &path).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = load_edge_csv(&DatasetManifest::new("rt", &path, common::DURATION))
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(back, g);
            Ok(())
        })
        .map_err(|e| format!("round trip: {e}"))?;

    let cfg = GeneratorConfig::preset("cp-like").unwrap().scaled_to(60);
    let g = generate_synthetic_sln(&cfg, "cp").map_err(|e| e.to_string())?;
    save_edge_csv(&g, &path).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    let truncated = lines[..lines.len() - 5].join("\n") + "\n";
    std::fs::write(&path, truncated).map_err(|e| e.to_string())?;
    let mut manifest = DatasetManifest::new("cp", &path, cfg.duration_weeks);
    manifest.expected_nodes = Some(g.num_nodes());
    manifest.expected_events = Some(g.events().len());
    match load_edge_csv(&manifest) {
        Err(Error::ManifestMismatch {
            what,
            expected,
            observed,
            ..
        }) => Ok(format!(
            "100 graphs identical; truncated file: {what} expected {expected}, observed {observed}"
        )),
        other => Err(format!("truncated file loaded as {other:?}")),
    }
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let cache = tempfile::tempdir().expect("temp dir");
    let cache_path = cache.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("gradient correctness", Box::new(grad_correctness)),
        ("AUC oracle equivalence", Box::new(auc_oracle)),
        ("loss value", Box::new(loss_value)),
        ("t-test accuracy", Box::new(t_test_accuracy)),
        ("determinism", Box::new(determinism)),
        ("overfit sanity", Box::new(overfit_sanity)),
        ("progress direction", Box::new({
            let c = cache_path.clone();
            move || progress_direction(&c)
        })),
        ("combined direction", Box::new({
            let c = cache_path.clone();
            move || combined_direction(&c)
        })),
        ("leakage and partition invariants", Box::new(leakage_invariants)),
        ("round-trip I/O", Box::new(round_trip_io)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
