//! The class-incremental driver: per task, train prompts by backprop, embed
//! with the current prompts, absorb into the ridge head, evaluate.

use serde::{Deserialize, Serialize};

use crate::analytic::{one_hot, AnalyticState};
use crate::backbone::{FrozenEncoder, ModalInput, TokenSequence};
use crate::bp_trainer::{prepare, train_task_bp, BpHead, EpochLoss, TrainStatus};
use crate::config::RunConfig;
use crate::error::{input_err, Result};
use crate::numerics::{argmax, Matrix, SeededRng};
use crate::prompts::{PromptLayout, PromptModule};

use super::metrics::{accuracy, AccuracyMatrix};
use super::stream::{generate_stream, TaskData};

const PROMPT_INIT_STREAM: u64 = 0x5052_4F4D;
const UPSAMPLER_STREAM: u64 = 0x5550_5341;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Prompts trained by backprop, analytic head.
    #[default]
    Pal,
    /// No prompts, no backprop: analytic head on frozen features.
    AlOnly,
    /// Prompts and a linear head trained by backprop, no analytic head.
    BpOnly,
    /// One pool serves both modalities.
    SharedPool,
    /// A single fixed prompt per modality instead of a pool.
    PromptVector,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Pal,
        Method::AlOnly,
        Method::BpOnly,
        Method::SharedPool,
        Method::PromptVector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pal => "pal",
            Method::AlOnly => "al_only",
            Method::BpOnly => "bp_only",
            Method::SharedPool => "shared_pool",
            Method::PromptVector => "prompt_vector",
        }
    }

    pub fn plan(self, bp_epochs: usize) -> Plan {
        let pal = Plan {
            layout: Some(PromptLayout::ModalitySpecific),
            bp_epochs,
            eval: EvalHead::Analytic,
        };
        match self {
            Method::Pal => pal,
            Method::AlOnly => Plan {
                layout: None,
                bp_epochs: 0,
                ..pal
            },
            Method::BpOnly => Plan {
                eval: EvalHead::Backprop,
                ..pal
            },
            Method::SharedPool => Plan {
                layout: Some(PromptLayout::Shared),
                ..pal
            },
            Method::PromptVector => Plan {
                layout: Some(PromptLayout::Vector),
                ..pal
            },
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalHead {
    Analytic,
    Backprop,
}

/// What a method does, as data. Every method runs through the same driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plan {
    pub layout: Option<PromptLayout>,
    pub bp_epochs: usize,
    pub eval: EvalHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub classes_seen: usize,
    pub train_samples: usize,
    pub complete: usize,
    pub image_only: usize,
    pub text_only: usize,
    pub status: TrainStatus,
    /// Mean test accuracy over the tasks seen so far.
    pub mean_accuracy: f64,
}

/// Everything needed to reproduce predictions after the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub prompts: Option<PromptModule>,
    pub bp_head: BpHead,
    pub analytic: Option<AnalyticState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub method: Method,
    pub matrix: AccuracyMatrix,
    pub losses: Vec<EpochLoss>,
    pub steps: Vec<StepReport>,
    pub model: TrainedModel,
}

impl RunOutcome {
    pub fn average_accuracy(&self) -> f64 {
        self.matrix.average_accuracy().expect("complete matrix")
    }

    /// `None` for single-task streams.
    pub fn forgetting(&self) -> Option<f64> {
        self.matrix.forgetting().ok()
    }
}

/// A sample's sequence and prompt-free pass, reused across steps.
struct CachedSample {
    seq: TokenSequence,
    q_text: Vec<f64>,
    q_image: Vec<f64>,
    joint: Vec<f64>,
}

fn cache(encoder: &FrozenEncoder, samples: &[ModalInput]) -> Result<Vec<CachedSample>> {
    samples
        .iter()
        .map(|s| {
            let seq = encoder.build_sequence(s)?;
            let out = encoder.encode(&seq, None)?;
            Ok(CachedSample {
                seq,
                q_text: out.q_text,
                q_image: out.q_image,
                joint: out.joint,
            })
        })
        .collect()
}

fn joints(
    encoder: &FrozenEncoder,
    prompts: Option<&PromptModule>,
    cached: &[CachedSample],
) -> Result<Matrix> {
    let mut out = Matrix::zeros(cached.len(), encoder.embed_dim());
    for (i, c) in cached.iter().enumerate() {
        match prompts {
            Some(module) => {
                let sel = module.select(&c.q_text, &c.q_image)?;
                let joint = encoder.encode(&c.seq, Some(&sel.prompts))?.joint;
                out.row_mut(i).copy_from_slice(&joint);
            }
            None => out.row_mut(i).copy_from_slice(&c.joint),
        }
    }
    Ok(out)
}

/// Predicted global class per sample under the model's evaluation head.
fn predict(
    encoder: &FrozenEncoder,
    model: &TrainedModel,
    eval: EvalHead,
    cached: &[CachedSample],
) -> Result<Vec<usize>> {
    let z = joints(encoder, model.prompts.as_ref(), cached)?;
    match eval {
        EvalHead::Analytic => {
            let state = model.analytic.as_ref().expect("analytic plan keeps a head");
            state.head.predict(&state.upsampler.transform(&z)?)
        }
        EvalHead::Backprop => Ok((0..z.rows())
            .map(|r| argmax(&model.bp_head.logits(z.row(r))))
            .collect()),
    }
}

/// Generates the stream and backbone from `cfg` and runs its method.
pub fn run_pal(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let encoder = FrozenEncoder::new(&cfg.encoder, cfg.seeds.backbone_seed)?;
    let stream = generate_stream(&cfg.stream, cfg.sample_shape(), cfg.seeds.data_seed)?;
    run_plan(cfg, cfg.method.plan(cfg.trainer.epochs), &encoder, &stream)
}

/// Runs `plan` over a prepared stream. `cfg.method` is only recorded.
pub fn run_plan(
    cfg: &RunConfig,
    plan: Plan,
    encoder: &FrozenEncoder,
    stream: &[TaskData],
) -> Result<RunOutcome> {
    if stream.is_empty() {
        return input_err("stream has no tasks");
    }
    let dim = encoder.embed_dim();
    let run_seed = cfg.seeds.run_seed;
    let prompts = match plan.layout {
        Some(layout) => Some(PromptModule::new(
            layout,
            dim,
            &cfg.pool,
            &mut SeededRng::derived(run_seed, &[PROMPT_INIT_STREAM]),
        )?),
        None => None,
    };
    let analytic = match plan.eval {
        EvalHead::Analytic => Some(AnalyticState::new(
            dim,
            &cfg.analytic,
            &mut SeededRng::derived(run_seed, &[UPSAMPLER_STREAM]),
        )?),
        EvalHead::Backprop => None,
    };
    let mut model = TrainedModel {
        prompts,
        bp_head: BpHead::new(dim),
        analytic,
    };
    let trainer = crate::bp_trainer::TrainerConfig {
        epochs: plan.bp_epochs,
        ..cfg.trainer.clone()
    };

    let tests: Vec<Vec<CachedSample>> = stream
        .iter()
        .map(|t| cache(encoder, &t.test.samples))
        .collect::<Result<_>>()?;
    let mut matrix = AccuracyMatrix::new(stream.len());
    let mut losses = Vec::new();
    let mut steps = Vec::new();
    let mut classes_seen = 0;

    for (k, task) in stream.iter().enumerate() {
        let train = &task.train;
        if let Some(&bad) = train.labels.iter().find(|l| !train.classes.contains(l)) {
            return input_err(format!(
                "task {k} holds label {bad} outside its class range"
            ));
        }
        if train.classes.start != classes_seen {
            return input_err(format!("task {k} classes do not continue the label space"));
        }
        let new_classes = train.classes.len();
        classes_seen += new_classes;
        model.bp_head.expand(new_classes);

        let mut status = TrainStatus::Trained;
        if let Some(module) = model.prompts.as_mut() {
            if trainer.epochs > 0 {
                let prepared = prepare(encoder, &train.samples, &train.labels)?;
                let trace = train_task_bp(
                    encoder,
                    module,
                    &mut model.bp_head,
                    &prepared,
                    &trainer,
                    run_seed,
                    k,
                )?;
                status = trace.status;
                losses.extend(trace.epochs);
            }
        }

        if let Some(state) = model.analytic.as_mut() {
            let z = joints(
                encoder,
                model.prompts.as_ref(),
                &cache(encoder, &train.samples)?,
            )?;
            let h = state.upsampler.transform(&z)?;
            let y = one_hot(&train.labels, classes_seen)?;
            if k == 0 {
                state.head = crate::analytic::RlsHead::init_first(&h, &y, cfg.analytic.reg)?;
            } else {
                state.head.expand_classes(new_classes)?;
                state.head.rls_update(&h, &y)?;
            }
        }

        for (i, cached) in tests.iter().enumerate().take(k + 1) {
            let predicted = predict(encoder, &model, plan.eval, cached)?;
            matrix.set(i, k, accuracy(&predicted, &stream[i].test.labels)?)?;
        }
        let (complete, image_only, text_only) = train.presence_counts();
        steps.push(StepReport {
            step: k,
            classes_seen,
            train_samples: train.len(),
            complete,
            image_only,
            text_only,
            status,
            mean_accuracy: matrix.step_mean(k)?,
        });
    }

    Ok(RunOutcome {
        method: cfg.method,
        matrix,
        losses,
        steps,
        model,
    })
}
