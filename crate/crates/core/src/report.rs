//! Run artifacts on disk: metrics, CSV tables, loss traces, checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{PalError, Result};
use crate::harness::{AccuracyMatrix, Method, RunOutcome, TrainedModel};

pub const CHECKPOINT_FORMAT: &str = "pal-checkpoint/1";

pub const METRICS_FILE: &str = "metrics.json";
pub const MATRIX_FILE: &str = "matrix.csv";
pub const STEPS_FILE: &str = "steps.csv";
pub const LOSSES_FILE: &str = "losses.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub method: Method,
    pub num_tasks: usize,
    pub total_classes: usize,
    pub acc: f64,
    /// Absent for single-task streams.
    pub fg: Option<f64>,
    pub first_task_acc: Option<f64>,
    pub rest_acc: Option<f64>,
    /// Mean accuracy over seen tasks after each step.
    pub step_accuracy: Vec<f64>,
    pub run_seed: u64,
    pub data_seed: u64,
    pub backbone_seed: u64,
}

impl Metrics {
    pub fn new(cfg: &RunConfig, outcome: &RunOutcome) -> Metrics {
        let split = outcome.matrix.stability_plasticity().ok();
        Metrics {
            method: outcome.method,
            num_tasks: outcome.matrix.num_tasks(),
            total_classes: cfg.stream.total_classes,
            acc: outcome.average_accuracy(),
            fg: outcome.forgetting(),
            first_task_acc: split.map(|s| s.0),
            rest_acc: split.map(|s| s.1),
            step_accuracy: outcome.steps.iter().map(|s| s.mean_accuracy).collect(),
            run_seed: cfg.seeds.run_seed,
            data_seed: cfg.seeds.data_seed,
            backbone_seed: cfg.seeds.backbone_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: RunConfig,
    pub model: TrainedModel,
    pub matrix: AccuracyMatrix,
}

impl Checkpoint {
    pub fn new(cfg: &RunConfig, outcome: &RunOutcome) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: cfg.clone(),
            model: outcome.model.clone(),
            matrix: outcome.matrix.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint always serializes")
    }

    /// Parses a checkpoint, refusing any other format tag.
    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| PalError::Checkpoint(format!("not valid JSON: {e}")))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            Some(other) => {
                return Err(PalError::Checkpoint(format!(
                    "format `{other}` is not supported (expected `{CHECKPOINT_FORMAT}`)"
                )))
            }
            None => return Err(PalError::Checkpoint("missing format tag".to_string())),
        }
        serde_json::from_value(value).map_err(|e| PalError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_json(&fs::read_to_string(path)?)
    }
}

pub fn steps_csv(outcome: &RunOutcome) -> String {
    let mut out = String::from(
        "step,classes_seen,train_samples,complete,image_only,text_only,status,mean_accuracy\n",
    );
    for s in &outcome.steps {
        let status = serde_json::to_value(s.status).expect("status serializes");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.step + 1,
            s.classes_seen,
            s.train_samples,
            s.complete,
            s.image_only,
            s.text_only,
            status.as_str().unwrap_or_default(),
            s.mean_accuracy
        ));
    }
    out
}

pub fn losses_jsonl(outcome: &RunOutcome) -> String {
    outcome
        .losses
        .iter()
        .map(|l| serde_json::to_string(l).expect("loss serializes") + "\n")
        .collect()
}

/// Writes the five run artifacts into `dir` and returns their paths.
pub fn write_run(dir: &Path, cfg: &RunConfig, outcome: &RunOutcome) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let metrics = serde_json::to_string_pretty(&Metrics::new(cfg, outcome))
        .expect("metrics serialize")
        + "\n";
    let files = [
        (METRICS_FILE, metrics),
        (MATRIX_FILE, outcome.matrix.to_csv()),
        (STEPS_FILE, steps_csv(outcome)),
        (LOSSES_FILE, losses_jsonl(outcome)),
        (CHECKPOINT_FILE, Checkpoint::new(cfg, outcome).to_json()),
    ];
    let mut paths = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body)?;
        paths.push(path);
    }
    Ok(paths)
}
