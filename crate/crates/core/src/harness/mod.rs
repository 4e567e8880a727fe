//! Configuration, optimization, the training loop, ablations and reports.

mod ablation;
mod checkpoint;
mod config;
mod optim;
mod report;
mod train;

pub use ablation::{run_ablation, AblationReport, AblationRun, Variant};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{TrainConfig, DESK_SCALE_LR};
pub use optim::{poly_lr, Sgd};
pub use report::{
    build_panels, convergence_stats, read_loss_csv, smooth, write_loss_csv, write_report, ConvergenceStats, Panel,
    SMOOTHING_WINDOW,
};
pub use train::{
    argmax_map, entropy_maps, evaluate, max_iterations, predict_scenes, run_training, to_input,
    train_from_config, Dataset, EvalSummary, MetricsRecord, RunOptions, TrainOutcome,
};
