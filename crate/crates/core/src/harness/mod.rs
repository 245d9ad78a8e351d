//! Synthetic streams, metrics and the end-to-end driver.

mod metrics;
mod run;
mod stream;

pub use metrics::{accuracy, AccuracyMatrix};
pub use run::{run_pal, run_plan, EvalHead, Method, Plan, RunOutcome, StepReport, TrainedModel};
pub use stream::{
    apply_missingness, class_centers, generate_stream, missing_counts, ClassCenters, MissingMode,
    SampleShape, StreamConfig, TaskBatch, TaskData,
};
