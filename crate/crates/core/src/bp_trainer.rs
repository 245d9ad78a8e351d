//! Back-propagation phase: tunes the prompt pools and a linear softmax head
//! on the current task under `L = L_c + λ·L_r`.
//!
//! The backbone stays frozen, so each sample's prompt-free queries and its
//! counterparts' queries are computed once per task ([`PreparedSample`]).

use serde::{Deserialize, Serialize};

use crate::backbone::{FrozenEncoder, ModalInput, TokenSequence};
use crate::error::{config_err, input_err, Result};
use crate::numerics::{softmax, Matrix, SeededRng};
use crate::prompts::{reconstruction_from_cache, CounterpartCache, PromptModule};

/// Label of the shuffling stream in seed derivation.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Reconstruction weight λ.
    pub recon_weight: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            recon_weight: 0.01,
            lr: 1e-4,
            epochs: 20,
            batch_size: 4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.recon_weight >= 0.0) || !self.recon_weight.is_finite() {
            return config_err("trainer.recon_weight", "must be non-negative");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return config_err("trainer.lr", "must be positive");
        }
        if self.batch_size == 0 {
            return config_err("trainer.batch_size", "must be at least 1");
        }
        if !(self.weight_decay >= 0.0) {
            return config_err("trainer.weight_decay", "must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return config_err("trainer.beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return config_err("trainer.beta2", "must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return config_err("trainer.eps", "must be positive");
        }
        Ok(())
    }
}

/// Bias-free linear classifier used only to give the prompts a training
/// signal. Grows a zero column per new class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpHead {
    pub weights: Matrix,
}

impl BpHead {
    pub fn new(dim: usize) -> Self {
        BpHead {
            weights: Matrix::zeros(dim, 0),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn expand(&mut self, count: usize) {
        self.weights.append_zero_cols(count);
    }

    pub fn logits(&self, joint: &[f64]) -> Vec<f64> {
        self.weights.vec_mul(joint)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub reconstruction: f64,
    pub recon_weight: f64,
}

/// Gradients of the joint loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub prompts: PromptModule,
    pub head: Matrix,
}

/// Per-sample constants for a task: the token sequence, the prompt-free
/// queries and, for complete samples, the counterpart passes.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub seq: TokenSequence,
    pub q_text: Vec<f64>,
    pub q_image: Vec<f64>,
    pub label: usize,
    pub counterparts: Option<CounterpartCache>,
}

impl PreparedSample {
    pub fn new(encoder: &FrozenEncoder, sample: &ModalInput, label: usize) -> Result<Self> {
        let seq = encoder.build_sequence(sample)?;
        let q = encoder.encode(&seq, None)?;
        let counterparts = if sample.is_complete() {
            Some(CounterpartCache::new(encoder, sample)?)
        } else {
            None
        };
        Ok(PreparedSample {
            seq,
            q_text: q.q_text,
            q_image: q.q_image,
            label,
            counterparts,
        })
    }
}

pub fn prepare(
    encoder: &FrozenEncoder,
    samples: &[ModalInput],
    labels: &[usize],
) -> Result<Vec<PreparedSample>> {
    if samples.len() != labels.len() {
        return input_err("sample and label counts differ");
    }
    samples
        .iter()
        .zip(labels)
        .map(|(s, &l)| PreparedSample::new(encoder, s, l))
        .collect()
}

/// Class probabilities of the BP head for one sample, with prompts selected
/// from the sample's own prompt-free queries.
pub fn forward_classify(
    encoder: &FrozenEncoder,
    prompts: &PromptModule,
    head: &BpHead,
    sample: &ModalInput,
) -> Result<Vec<f64>> {
    if head.weights.rows() != encoder.embed_dim() {
        return input_err("head width does not match the encoder");
    }
    let seq = encoder.build_sequence(sample)?;
    let q = encoder.encode(&seq, None)?;
    let sel = prompts.select(&q.q_text, &q.q_image)?;
    let out = encoder.encode(&seq, Some(&sel.prompts))?;
    Ok(softmax(&head.logits(&out.joint)))
}

/// Joint loss over a batch and, when `want_grad`, its gradients with
/// respect to the pools and the head.
pub fn total_loss(
    encoder: &FrozenEncoder,
    prompts: &PromptModule,
    head: &BpHead,
    batch: &[&PreparedSample],
    recon_weight: f64,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>)> {
    if batch.is_empty() {
        return input_err("total_loss needs a non-empty batch");
    }
    let classes = head.num_classes();
    if let Some(bad) = batch.iter().find(|s| s.label >= classes) {
        return input_err(format!(
            "label {} outside the head's {} classes",
            bad.label, classes
        ));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut grads = want_grad.then(|| Gradients {
        prompts: prompts.zeros_like(),
        head: Matrix::zeros(head.weights.rows(), classes),
    });

    let mut ce = 0.0;
    for s in batch {
        let sel = prompts.select(&s.q_text, &s.q_image)?;
        let (out, trace) = encoder.encode_traced(&s.seq, Some(&sel.prompts))?;
        let p = softmax(&head.logits(&out.joint));
        ce -= p[s.label].max(f64::MIN_POSITIVE).ln();
        if let Some(g) = grads.as_mut() {
            let mut dlogits: Vec<f64> = p.iter().map(|x| x * inv).collect();
            dlogits[s.label] -= inv;
            for (r, &j) in out.joint.iter().enumerate() {
                for (dst, &dl) in g.head.row_mut(r).iter_mut().zip(&dlogits) {
                    *dst += j * dl;
                }
            }
            let djoint = head.weights.mul_vec(&dlogits);
            let half: Vec<f64> = djoint.iter().map(|x| 0.5 * x).collect();
            let dp = encoder.backward(&trace, &half, &half);
            prompts.accumulate_grad(&s.q_text, &s.q_image, &sel, &dp, &mut g.prompts);
        }
    }
    let classification = ce * inv;

    let caches: Vec<&CounterpartCache> = batch
        .iter()
        .filter_map(|s| s.counterparts.as_ref())
        .collect();
    let reconstruction = reconstruction_from_cache(
        encoder,
        prompts,
        &caches,
        recon_weight,
        grads.as_mut().map(|g| &mut g.prompts),
    )?;

    Ok((
        LossBreakdown {
            total: classification + recon_weight * reconstruction,
            classification,
            reconstruction,
            recon_weight,
        },
        grads,
    ))
}

/// AdamW with decoupled weight decay over a fixed list of parameter blocks.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: &TrainerConfig, block_sizes: &[usize]) -> Self {
        AdamW {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            first: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(
            params.len(),
            self.first.len(),
            "parameter block count changed"
        );
        assert_eq!(
            grads.len(),
            self.first.len(),
            "gradient block count changed"
        );
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (b, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first[b];
            let v = &mut self.second[b];
            assert_eq!(p.len(), m.len(), "moment shape must mirror parameter shape");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * p[i]);
            }
        }
    }
}

/// Central-difference agreement for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: String,
    /// `‖analytic − numeric‖ / ‖numeric‖` over the group.
    pub rel_error: f64,
}

fn group_names(prompts: &PromptModule) -> Vec<String> {
    let tags: &[&str] = if prompts.pools.len() == 1 {
        &["shared"]
    } else {
        &["text", "image"]
    };
    let mut names = Vec::new();
    for (pool, tag) in prompts.pools.iter().zip(tags) {
        for n in 0..pool.size() {
            names.push(format!("{tag}.component[{n}]"));
        }
        names.push(format!("{tag}.attention"));
        names.push(format!("{tag}.keys"));
    }
    names.push("head".to_string());
    names
}

/// Compares the gradients of [`total_loss`] with central differences of
/// step `h`, one entry at a time, for every parameter group.
pub fn gradient_check(
    encoder: &FrozenEncoder,
    prompts: &PromptModule,
    head: &BpHead,
    batch: &[&PreparedSample],
    recon_weight: f64,
    h: f64,
) -> Result<Vec<GroupCheck>> {
    let (_, grads) = total_loss(encoder, prompts, head, batch, recon_weight, true)?;
    let grads = grads.expect("gradients requested");
    let names = group_names(prompts);
    let n_blocks = prompts.blocks().len();
    let mut out = Vec::with_capacity(n_blocks + 1);
    for (b, group) in names.into_iter().enumerate() {
        let len = if b < n_blocks {
            prompts.blocks()[b].len()
        } else {
            head.weights.as_slice().len()
        };
        let mut m = prompts.clone();
        let mut hd = head.clone();
        let mut fd = Vec::with_capacity(len);
        for i in 0..len {
            let mut eval = |delta: f64| -> Result<f64> {
                let slot = if b < n_blocks {
                    &mut m.blocks_mut()[b][i]
                } else {
                    &mut hd.weights.as_mut_slice()[i]
                };
                let orig = *slot;
                *slot = orig + delta;
                let loss = total_loss(encoder, &m, &hd, batch, recon_weight, false);
                let slot = if b < n_blocks {
                    &mut m.blocks_mut()[b][i]
                } else {
                    &mut hd.weights.as_mut_slice()[i]
                };
                *slot = orig;
                Ok(loss?.0.total)
            };
            fd.push((eval(h)? - eval(-h)?) / (2.0 * h));
        }
        let an = if b < n_blocks {
            grads.prompts.blocks()[b]
        } else {
            grads.head.as_slice()
        };
        let diff = an
            .iter()
            .zip(&fd)
            .map(|(a, f)| (a - f) * (a - f))
            .sum::<f64>()
            .sqrt();
        let base = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
        out.push(GroupCheck {
            group,
            rel_error: diff / base.max(1e-8),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub task: usize,
    pub epoch: usize,
    pub total: f64,
    pub classification: f64,
    pub reconstruction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Trained,
    /// Nothing to train on; parameters untouched.
    EmptyTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTrace {
    pub status: TrainStatus,
    pub epochs: Vec<EpochLoss>,
}

/// Runs `cfg.epochs` epochs of AdamW on one task. Batches are shuffled by a
/// stream keyed on `(run_seed, task, epoch)`.
pub fn train_task_bp(
    encoder: &FrozenEncoder,
    prompts: &mut PromptModule,
    head: &mut BpHead,
    samples: &[PreparedSample],
    cfg: &TrainerConfig,
    run_seed: u64,
    task: usize,
) -> Result<TaskTrace> {
    cfg.validate()?;
    if samples.is_empty() {
        return Ok(TaskTrace {
            status: TrainStatus::EmptyTask,
            epochs: Vec::new(),
        });
    }
    if let Some(bad) = samples.iter().find(|s| s.label >= head.num_classes()) {
        return input_err(format!(
            "label {} not registered with the head ({} classes); expand first",
            bad.label,
            head.num_classes()
        ));
    }
    let mut sizes: Vec<usize> = prompts.blocks().iter().map(|b| b.len()).collect();
    sizes.push(head.weights.as_slice().len());
    let mut opt = AdamW::new(cfg, &sizes);

    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let order = SeededRng::derived(run_seed, &[SHUFFLE_STREAM, task as u64, epoch as u64])
            .permutation(samples.len());
        let mut sums = [0.0f64; 3];
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = total_loss(encoder, prompts, head, &batch, cfg.recon_weight, true)?;
            let grads = grads.expect("gradients requested");
            let mut params = prompts.blocks_mut();
            params.push(head.weights.as_mut_slice());
            let mut gblocks = grads.prompts.blocks();
            gblocks.push(grads.head.as_slice());
            opt.step(params, gblocks);
            sums[0] += loss.total;
            sums[1] += loss.classification;
            sums[2] += loss.reconstruction;
            batches += 1;
        }
        let n = batches as f64;
        epochs.push(EpochLoss {
            task,
            epoch,
            total: sums[0] / n,
            classification: sums[1] / n,
            reconstruction: sums[2] / n,
        });
    }
    Ok(TaskTrace {
        status: TrainStatus::Trained,
        epochs,
    })
}
