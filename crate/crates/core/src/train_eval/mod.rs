//! Training, evaluation, the identity probe and the ablation sweep.

pub mod ablation;
pub mod data;
pub mod evaluate;
pub mod metrics;
pub mod optim;
pub mod probe;
pub mod train;

pub use ablation::{run_ablation, write_table, AblationRow};
pub use evaluate::{evaluate, FramePrediction};
pub use metrics::{Confusion, MetricsReport};
pub use optim::{lr_at, AdamW};
pub use probe::{probe_accuracy, probe_audit};
pub use train::{train, CurvePoint, TrainOutcome};
