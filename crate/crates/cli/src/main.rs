use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slnlink::eval::{paired_t_one_sided, TTestResult};
use slnlink::experiments::{render_tables, run_matrix, write_report, ExperimentSpec, RunOptions};
use slnlink::io::load_manifests;
use slnlink::model::{load_params, save_params};
use slnlink::splits::{make_split, Horizon, NegativeCount, SplitConfig, SplitPlan};
use slnlink::synth::PRESET_NAMES;
use slnlink::train::{history_csv, GradCheckOptions, BLOCK_NAMES, GRAD_CHECK_MAX_NODES};
use slnlink::{
    evaluate_fold, generate_synthetic_sln, grad_check, load_edge_csv, merge, save_edge_csv, stats_table, train,
    welch_t_one_sided, DatasetManifest, Dims, Error, GeneratorConfig, TemporalGraph, TiePolicy, TrainConfig,
};

/// Temporal link prediction on social learning networks.
///
/// Exit codes: 0 success, 1 domain error, 2 usage error.
#[derive(Parser)]
#[command(name = "slnlink", version)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic classroom edge CSV plus a `.stats.json` sidecar.
    Generate(GenerateArgs),
    /// Print summary statistics for one or more datasets.
    Stats(StatsArgs),
    /// Build a temporal k-fold split and write its folds as JSON.
    Split(SplitArgs),
    /// Train on one fold's training positives and write a checkpoint.
    Train(TrainArgs),
    /// Score one fold's test pairs with a checkpoint.
    Eval(EvalArgs),
    /// Run an experiment spec and write report.json and tables.txt.
    Experiment(ExperimentArgs),
    /// One-sided t-test that mean(a) exceeds mean(b).
    Ttest(TtestArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

enum Failure {
    Usage(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(|e| Failure::Domain(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn parse_dims(s: &str) -> Result<Dims, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [input, hidden, output] if input > 0 && hidden > 0 && output > 0 => Ok(Dims { input, hidden, output }),
        _ => Err("expected three positive widths, e.g. 16,16,16".into()),
    }
}

fn parse_preset(s: &str) -> Result<String, String> {
    if PRESET_NAMES.contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!("unknown preset {s:?}; expected one of {}", PRESET_NAMES.join(", ")))
    }
}

#[derive(Clone, Debug)]
struct Samples(Vec<f64>);

fn parse_samples(s: &str) -> Result<Samples, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<_, _>>()
        .map(Samples)
}

/// Where the input graph comes from.
#[derive(Args)]
struct GraphArgs {
    /// Edge CSV with header `src,dst,week`.
    #[arg(long, conflicts_with = "preset")]
    csv: Option<PathBuf>,
    /// Course length in weeks (required with --csv).
    #[arg(long, requires = "csv")]
    duration: Option<f64>,
    /// Generate a shipped preset in memory instead of reading a file.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<String>,
    /// Rescale the preset to this many students.
    #[arg(long, requires = "preset")]
    students: Option<usize>,
    /// Generator seed for --preset [default: the preset's own seed, 42].
    #[arg(long, requires = "preset")]
    gen_seed: Option<u64>,
    /// Dataset tag [default: the preset name or the file stem].
    #[arg(long)]
    tag: Option<String>,
}

impl GraphArgs {
    fn load(&self) -> CliResult<TemporalGraph> {
        if let Some(name) = &self.preset {
            let cfg = preset_config(name, self.students, self.gen_seed)?;
            eprintln!("generator seed: {}", cfg.seed);
            let tag = self.tag.clone().unwrap_or_else(|| name.clone());
            return Ok(generate_synthetic_sln(&cfg, &tag)?);
        }
        let Some(path) = self.csv.clone() else {
            return usage("give --csv or --preset");
        };
        let Some(duration) = self.duration else {
            return usage("--csv needs --duration");
        };
        let tag = self.tag.clone().unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into())
        });
        Ok(load_edge_csv(&DatasetManifest::new(tag, path, duration))?)
    }
}

fn preset_config(name: &str, students: Option<usize>, seed: Option<u64>) -> CliResult<GeneratorConfig> {
    let Some(mut cfg) = GeneratorConfig::preset(name) else {
        return usage(format!("unknown preset {name:?}; expected one of {}", PRESET_NAMES.join(", ")));
    };
    if let Some(n) = students {
        cfg = cfg.scaled_to(n);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[derive(Args)]
struct GenerateArgs {
    /// Shipped preset: vs-like, ml-like, al-like or cp-like.
    #[arg(long, value_parser = parse_preset, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// TOML file with every generator field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generator seed [default: from the preset or config].
    #[arg(long)]
    seed: Option<u64>,
    /// Rescale the preset to this many students.
    #[arg(long, requires = "preset")]
    students: Option<usize>,
    /// Dataset tag shown in the stats row.
    #[arg(long)]
    tag: Option<String>,
    /// Output edge CSV; the sidecar is written next to it as `<out>.stats.json`.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_generate(a: &GenerateArgs) -> CliResult {
    let (mut cfg, default_tag) = match (&a.preset, &a.config) {
        (Some(name), _) => (preset_config(name, a.students, None)?, name.clone()),
        (None, Some(path)) => {
            let cfg = match GeneratorConfig::load(path) {
                Ok(c) => c,
                Err(e @ Error::Io { .. }) => return Err(e.into()),
                Err(e) => return usage(e.to_string()),
            };
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
            (cfg, stem.unwrap_or_else(|| "synthetic".into()))
        }
        (None, None) => return usage("give --preset or --config"),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let tag = a.tag.clone().unwrap_or(default_tag);
    let graph = generate_synthetic_sln(&cfg, &tag)?;
    save_edge_csv(&graph, &a.out)?;
    let sidecar = PathBuf::from(format!("{}.stats.json", a.out.display()));
    let stats = serde_json::json!({
        "tag": tag,
        "generator": cfg,
        "stats": graph.stats(),
    });
    write_file(&sidecar, &to_json(&stats))?;
    print!("{}", stats_table(&[&graph]));
    println!("seed: {}", cfg.seed);
    println!("wrote {} and {}", a.out.display(), sidecar.display());
    Ok(())
}

#[derive(Args)]
struct StatsArgs {
    /// TOML manifest with one [[dataset]] table per dataset.
    #[arg(long, conflicts_with_all = ["csv", "preset"])]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    graph: Option<GraphArgs>,
    /// Append a row for the disjoint union of all datasets.
    #[arg(long)]
    merged: bool,
}

fn cmd_stats(a: &StatsArgs) -> CliResult {
    let mut graphs = match (&a.manifest, &a.graph) {
        (Some(path), _) => load_manifests(path)?
            .iter()
            .map(load_edge_csv)
            .collect::<Result<Vec<_>, _>>()?,
        (None, Some(g)) => vec![g.load()?],
        (None, None) => return usage("give --manifest, --csv or --preset"),
    };
    if a.merged && graphs.len() > 1 {
        let all = merge(&graphs)?;
        graphs.push(all);
    }
    let refs: Vec<&TemporalGraph> = graphs.iter().collect();
    print!("{}", stats_table(&refs));
    Ok(())
}

#[derive(Args)]
struct SplitOpts {
    #[command(flatten)]
    graph: GraphArgs,
    /// Snapshot position as a fraction of the course, in (0, 1).
    #[arg(long)]
    progress: f64,
    /// Number of folds.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Split seed (fold assignment and test negatives).
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Target window: "end" or a course fraction past the snapshot.
    #[arg(long, default_value = "end")]
    horizon: Horizon,
    /// Test negatives per fold: a ratio to test positives, or "all".
    #[arg(long, default_value = "1")]
    eval_negatives: NegativeCount,
}

impl SplitOpts {
    fn plan(&self) -> CliResult<SplitPlan> {
        let graph = self.graph.load()?;
        let cfg = SplitConfig {
            progress: self.progress,
            horizon: self.horizon,
            k: self.k,
            eval_negatives: self.eval_negatives,
            seed: self.seed,
        };
        Ok(make_split(&graph, &cfg)?)
    }
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    split: SplitOpts,
    /// Output JSON with the plan and every fold's pairs.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_split(a: &SplitArgs) -> CliResult {
    let plan = a.split.plan()?;
    let tasks = plan.fold_tasks()?;
    let doc = serde_json::json!({
        "progress": plan.progress,
        "horizon": plan.horizon,
        "k": plan.k,
        "eval_negatives": plan.eval_negatives,
        "seed": plan.seed,
        "observed_edges": plan.observed.num_edges(),
        "positives": plan.positives.len(),
        "folds": tasks,
    });
    write_file(&a.out, &to_json(&doc))?;
    println!("seed: {}", plan.seed);
    println!(
        "observed edges: {}, future positives: {}",
        plan.observed.num_edges(),
        plan.positives.len()
    );
    for t in &tasks {
        println!(
            "fold {}: train {} test {} negatives {}",
            t.fold_index,
            t.train_positives.len(),
            t.test_positives.len(),
            t.test_negatives.len()
        );
    }
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    split: SplitOpts,
    /// Fold whose training positives supervise the model.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = 1500)]
    epochs: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    /// Positive class weight.
    #[arg(long, default_value_t = 20.0)]
    pcw: f64,
    /// Training negatives per training positive.
    #[arg(long, default_value_t = 1.0)]
    negative_ratio: f64,
    /// Keep one negative sample for the whole run.
    #[arg(long)]
    fixed_negatives: bool,
    /// Drop the rectifier on the output layer.
    #[arg(long)]
    no_final_activation: bool,
    /// Initialization and negative-sampling seed.
    #[arg(long, default_value_t = 42)]
    train_seed: u64,
    /// Layer widths input,hidden,output.
    #[arg(long, default_value = "16,16,16", value_parser = parse_dims)]
    dims: Dims,
    /// Checkpoint output.
    #[arg(long)]
    out: PathBuf,
    /// Loss history CSV (epoch,total,pos,neg).
    #[arg(long)]
    history: Option<PathBuf>,
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let plan = a.split.plan()?;
    let task = plan.fold_task(a.fold)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        pcw: a.pcw,
        train_negative_ratio: a.negative_ratio,
        resample_negatives_each_epoch: !a.fixed_negatives,
        final_activation: !a.no_final_activation,
        seed: a.train_seed,
        ..TrainConfig::default()
    };
    let outcome = train(&plan.observed, &task.train_positives, &plan.training_exclusions(&task), &cfg, a.dims)?;
    save_params(&outcome.params, &a.out)?;
    if let Some(h) = &a.history {
        write_file(h, &history_csv(&outcome.history))?;
    }
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    println!("split seed: {}", plan.seed);
    println!("train seed: {}", cfg.seed);
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: loss {:.6} (pos {:.6}, neg {:.6})",
            last.epoch, last.total_loss, last.positive_term, last.negative_term
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    split: SplitOpts,
    /// Fold whose test pairs are scored.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Checkpoint written by `train`.
    #[arg(long)]
    params: PathBuf,
    /// Tie handling: half or strict.
    #[arg(long, default_value = "half")]
    ties: TiePolicy,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let plan = a.split.plan()?;
    let task = plan.fold_task(a.fold)?;
    let params = load_params(&a.params)?;
    let report = evaluate_fold(&params, &plan.observed, &task, a.ties)?;
    if let Some(out) = &a.out {
        write_file(out, &to_json(&report))?;
    }
    println!("split seed: {}", plan.seed);
    println!(
        "fold {}: AUC {:.6} over {} positives and {} negatives",
        a.fold, report.auc, report.n_pos, report.n_neg
    );
    let c = &report.confusion;
    println!(
        "at threshold 0.5: TP {} FP {} TN {} FN {}",
        c.true_positives, c.false_positives, c.true_negatives, c.false_negatives
    );
    if let Some(note) = &report.note {
        println!("note: {note}");
    }
    Ok(())
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Output directory for report.json, tables.txt and cache/.
    #[arg(long)]
    out: PathBuf,
    /// Reuse finished cells from <out>/cache.
    #[arg(long)]
    resume: bool,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

fn cmd_experiment(a: &ExperimentArgs) -> CliResult {
    let spec = match ExperimentSpec::load(&a.spec) {
        Ok(s) => s,
        Err(e @ Error::Io { .. }) => return Err(e.into()),
        Err(e) => return usage(e.to_string()),
    };
    println!("master seed: {}", spec.master_seed);
    let base = a.spec.parent().unwrap_or(Path::new(""));
    let opts = RunOptions {
        cache_dir: Some(a.out.join("cache")),
        resume: a.resume,
        jobs: a.jobs,
    };
    let report = run_matrix(&spec, base, &opts)?;
    write_report(&report, &a.out)?;
    print!("{}", render_tables(&report));
    let failed = report.failed_cells();
    if !failed.is_empty() {
        eprintln!("warning: {} of {} cells failed:", failed.len(), report.cells.len());
        for c in failed {
            eprintln!("  {} {} @ {}: {}", c.mode, c.dataset, c.progress, c.error.as_deref().unwrap_or(""));
        }
    }
    println!("wrote {}", a.out.join("report.json").display());
    Ok(())
}

#[derive(Args)]
struct TtestArgs {
    /// Comma-separated sample whose mean is claimed larger.
    #[arg(long, value_parser = parse_samples, allow_hyphen_values = true)]
    a: Samples,
    /// Comma-separated baseline sample.
    #[arg(long, value_parser = parse_samples, allow_hyphen_values = true)]
    b: Samples,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    /// Paired test on a[i] - b[i] instead of Welch.
    #[arg(long)]
    paired: bool,
}

fn cmd_ttest(a: &TtestArgs) -> CliResult {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return usage(format!("--alpha must lie in (0, 1), got {}", a.alpha));
    }
    let r: TTestResult = if a.paired {
        paired_t_one_sided(&a.a.0, &a.b.0, a.alpha)?
    } else {
        welch_t_one_sided(&a.a.0, &a.b.0, a.alpha)?
    };
    println!("t = {:.6}", r.t_statistic);
    println!("df = {:.6}", r.degrees_of_freedom);
    println!("p = {:.6e}", r.p_value);
    println!("{} (alpha = {})", r.decision, r.alpha);
    Ok(())
}

#[derive(Args)]
struct GradcheckArgs {
    /// Layer widths input,hidden,output.
    #[arg(long, default_value = "16,16,16", value_parser = parse_dims)]
    dims: Dims,
    /// Nodes in the random test graph (at most 32).
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Largest relative error accepted.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Debugging aid: corrupt the analytic gradient of one block
    /// (embeddings, w1, b1, w2 or b2) to confirm the check catches it.
    #[arg(long, value_name = "BLOCK")]
    inject_fault: Option<String>,
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<bool> {
    if a.size < 2 || a.size > GRAD_CHECK_MAX_NODES {
        return usage(format!(
            "--size {} is out of range: finite differences are limited to 2..={GRAD_CHECK_MAX_NODES} nodes",
            a.size
        ));
    }
    let corrupt = match &a.inject_fault {
        None => None,
        Some(name) => match BLOCK_NAMES.iter().find(|&&b| b == name) {
            Some(&block) => Some((block, 1e-2)),
            None => return usage(format!("unknown block {name:?}; expected one of {}", BLOCK_NAMES.join(", "))),
        },
    };
    let report = grad_check(&GradCheckOptions {
        dims: a.dims,
        graph_size: a.size,
        seed: a.seed,
        tolerance: a.tol,
        corrupt,
        ..GradCheckOptions::default()
    })?;
    println!("seed: {}", a.seed);
    for b in &report.blocks {
        println!(
            "{:<10} checked {:>5} skipped {:>3} max rel error {:.3e}",
            b.name, b.checked, b.skipped, b.max_rel_error
        );
    }
    if report.passed {
        println!("PASS (tolerance {:e})", report.tolerance);
    } else {
        println!(
            "FAIL (tolerance {:e}): {}",
            report.tolerance,
            report.failing_blocks().join(", ")
        );
    }
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Ttest(a) => cmd_ttest(a),
        Command::Gradcheck(a) => match cmd_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
