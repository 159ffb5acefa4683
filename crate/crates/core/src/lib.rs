//! Temporal link prediction on social learning networks.
//!
//! Student interaction graphs are snapshotted at a point of course progress;
//! a two-layer mean-aggregation GraphSAGE with trainable node embeddings is
//! trained with an imbalance-weighted BCE loss to score which student pairs
//! will interact later. Models are compared by AUC under k-fold
//! cross-validation of the future edges and one-sided t-tests.

pub mod error;
pub mod eval;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod model;
pub mod seed;
pub mod splits;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use eval::{auc_pairwise, auc_rank, evaluate_fold, welch_t_one_sided, EvalReport, TTestResult, TiePolicy};
pub use experiments::{
    render_tables, run_combined, run_iso, run_matrix, CellResult, DatasetEntry, ExperimentReport, ExperimentSpec, Mode,
    RunOptions,
};
pub use graph::{merge, EdgeEvent, NodeId, Pair, SnapshotView, TemporalGraph};
pub use io::{load_edge_csv, save_edge_csv, stats_table, DatasetManifest};
pub use model::{forward, init_params, score_pairs, Dims, ForwardTrace, ModelParams};
pub use splits::{make_split, FoldTask, Horizon, NegativeCount, SplitConfig, SplitPlan};
pub use synth::{generate_synthetic_sln, GeneratorConfig};
pub use train::{grad_check, train, train_grouped, weighted_bce, LossReport, NegativeGroup, TrainConfig};
