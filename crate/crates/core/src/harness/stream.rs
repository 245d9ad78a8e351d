//! Synthetic paired-modality class streams and the missing-modality protocol.
//!
//! Every class owns an image center and a text center. Classes come in
//! overlapping pairs: classes `2j, 2j+1` share most of their image center,
//! classes `2j+1, 2j+2` share most of their text center, and a small
//! class-specific offset common to both modalities tells pair members
//! apart. Either modality alone therefore pins a class down to a pair and
//! only weakly beyond it, while the two together identify it.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::analytic::one_hot;
use crate::backbone::ModalInput;
use crate::error::{config_err, input_err, Result};
use crate::numerics::{seeded_normal, Matrix, SeededRng};

const CENTER_STREAM: u64 = 0x4345_4E54;
const TRAIN_STREAM: u64 = 0x0054_524E;
const TEST_STREAM: u64 = 0x5445_5354;
const MISSING_STREAM: u64 = 0x4D49_5353;

/// Which modality goes missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingMode {
    /// Text is dropped: affected samples become image-only.
    Text,
    /// Image is dropped: affected samples become text-only.
    Image,
    /// Half of the affected samples lose each modality.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamConfig {
    pub total_classes: usize,
    pub num_tasks: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Width of each raw token feature.
    pub feature_dim: usize,
    /// Scale of the class centers in units of the token noise.
    pub separation: f64,
    /// Size of the class-specific offset relative to the shared pair center.
    pub class_signal: f64,
    pub noise_std: f64,
    pub missing_rate: f64,
    pub missing_mode: MissingMode,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            total_classes: 20,
            num_tasks: 5,
            train_per_class: 25,
            test_per_class: 25,
            feature_dim: 32,
            separation: 3.0,
            class_signal: 0.09,
            noise_std: 1.0,
            missing_rate: 0.7,
            missing_mode: MissingMode::Both,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_classes == 0 {
            return config_err("stream.total_classes", "must be positive");
        }
        if self.num_tasks == 0 || !self.total_classes.is_multiple_of(self.num_tasks) {
            return config_err(
                "stream.num_tasks",
                format!(
                    "{} tasks do not evenly split {} classes",
                    self.num_tasks, self.total_classes
                ),
            );
        }
        if self.train_per_class == 0 {
            return config_err("stream.train_per_class", "must be positive");
        }
        if self.test_per_class == 0 {
            return config_err("stream.test_per_class", "must be positive");
        }
        if self.feature_dim == 0 {
            return config_err("stream.feature_dim", "must be positive");
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return config_err("stream.separation", "must be non-negative and finite");
        }
        if !(self.class_signal >= 0.0) || !self.class_signal.is_finite() {
            return config_err("stream.class_signal", "must be non-negative and finite");
        }
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return config_err("stream.noise_std", "must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return config_err("stream.missing_rate", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn classes_per_task(&self) -> usize {
        self.total_classes / self.num_tasks
    }

    pub fn task_classes(&self, task: usize) -> Range<usize> {
        let c = self.classes_per_task();
        task * c..(task + 1) * c
    }
}

/// Token counts of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleShape {
    pub image_tokens: usize,
    pub text_tokens: usize,
}

/// Samples of one task split with global class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    pub task_index: usize,
    pub classes: Range<usize>,
    pub samples: Vec<ModalInput>,
    pub labels: Vec<usize>,
}

impl TaskBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// One-hot labels over `num_classes` global columns.
    pub fn one_hot(&self, num_classes: usize) -> Result<Matrix> {
        one_hot(&self.labels, num_classes)
    }

    /// `(complete, image_only, text_only)` counts.
    pub fn presence_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for s in &self.samples {
            match (s.has_image, s.has_text) {
                (true, true) => counts.0 += 1,
                (true, false) => counts.1 += 1,
                (false, true) => counts.2 += 1,
                (false, false) => {}
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: TaskBatch,
    pub test: TaskBatch,
}

/// Class centers `(image, text)` for every class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCenters {
    pub image: Vec<Vec<f64>>,
    pub text: Vec<Vec<f64>>,
}

pub fn class_centers(cfg: &StreamConfig, seed: u64) -> Result<ClassCenters> {
    let c = cfg.total_classes;
    let d = cfg.feature_dim;
    let groups = c / 2 + 1;
    let mut rng = SeededRng::derived(seed, &[CENTER_STREAM]);
    let std = 1.0 / (d as f64).sqrt();
    let image_groups = seeded_normal(&mut rng, groups, d, std)?;
    let text_groups = seeded_normal(&mut rng, groups, d, std)?;
    let offsets = seeded_normal(&mut rng, c, d, std)?;
    let mut image = Vec::with_capacity(c);
    let mut text = Vec::with_capacity(c);
    for class in 0..c {
        let gi = class / 2;
        let gt = ((class + 1) % c) / 2;
        let mk = |g: &[f64]| -> Vec<f64> {
            g.iter()
                .zip(offsets.row(class))
                .map(|(a, b)| cfg.separation * (a + cfg.class_signal * b))
                .collect()
        };
        image.push(mk(image_groups.row(gi)));
        text.push(mk(text_groups.row(gt)));
    }
    Ok(ClassCenters { image, text })
}

fn draw_tokens(rng: &mut SeededRng, center: &[f64], tokens: usize, noise: f64) -> Matrix {
    let mut m = Matrix::zeros(tokens, center.len());
    for r in 0..tokens {
        for (dst, &mu) in m.row_mut(r).iter_mut().zip(center) {
            *dst = mu + noise * rng.normal();
        }
    }
    m
}

fn draw_class(
    cfg: &StreamConfig,
    centers: &ClassCenters,
    shape: SampleShape,
    class: usize,
    count: usize,
    rng: &mut SeededRng,
) -> Vec<ModalInput> {
    (0..count)
        .map(|_| {
            let image = draw_tokens(
                rng,
                &centers.image[class],
                shape.image_tokens,
                cfg.noise_std,
            );
            let text = draw_tokens(rng, &centers.text[class], shape.text_tokens, cfg.noise_std);
            ModalInput::complete(image, text)
        })
        .collect()
}

/// Number of `(image_only, text_only)` samples out of `n`, rounding half up.
pub fn missing_counts(n: usize, rate: f64, mode: MissingMode) -> (usize, usize) {
    let round = |x: f64| (x + 0.5 + 1e-9).floor() as usize;
    match mode {
        MissingMode::Text => (round(rate * n as f64).min(n), 0),
        MissingMode::Image => (0, round(rate * n as f64).min(n)),
        MissingMode::Both => {
            let half = round(rate * n as f64 / 2.0).min(n / 2);
            (half, half)
        }
    }
}

/// Masks a batch in place: a seeded choice of samples loses its text (or
/// image), gets the zero dummy and the matching presence flag cleared.
/// Sample count, order and labels never change.
pub fn apply_missingness(
    batch: &mut TaskBatch,
    rate: f64,
    mode: MissingMode,
    seed: u64,
) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return input_err(format!("missing rate {rate} outside [0, 1)"));
    }
    let n = batch.samples.len();
    let (image_only, text_only) = missing_counts(n, rate, mode);
    if image_only + text_only == 0 {
        return Ok(());
    }
    let order = SeededRng::new(seed).permutation(n);
    for &i in &order[..image_only] {
        batch.samples[i].drop_text();
    }
    for &i in &order[image_only..image_only + text_only] {
        batch.samples[i].drop_image();
    }
    Ok(())
}

/// Builds the full stream: per-class data is drawn independently of the
/// task split, so changing `num_tasks` only regroups the same samples.
pub fn generate_stream(cfg: &StreamConfig, shape: SampleShape, seed: u64) -> Result<Vec<TaskData>> {
    cfg.validate()?;
    if shape.image_tokens == 0 || shape.text_tokens == 0 {
        return input_err("samples need at least one token per modality");
    }
    let centers = class_centers(cfg, seed)?;
    let mut tasks = Vec::with_capacity(cfg.num_tasks);
    for task in 0..cfg.num_tasks {
        let classes = cfg.task_classes(task);
        let mut train = TaskBatch {
            task_index: task,
            classes: classes.clone(),
            samples: Vec::new(),
            labels: Vec::new(),
        };
        let mut test = train.clone();
        for class in classes {
            let mut rng = SeededRng::derived(seed, &[TRAIN_STREAM, class as u64]);
            train.samples.extend(draw_class(
                cfg,
                &centers,
                shape,
                class,
                cfg.train_per_class,
                &mut rng,
            ));
            train
                .labels
                .extend(std::iter::repeat_n(class, cfg.train_per_class));
            let mut rng = SeededRng::derived(seed, &[TEST_STREAM, class as u64]);
            test.samples.extend(draw_class(
                cfg,
                &centers,
                shape,
                class,
                cfg.test_per_class,
                &mut rng,
            ));
            test.labels
                .extend(std::iter::repeat_n(class, cfg.test_per_class));
        }
        let nt = cfg.num_tasks as u64;
        apply_missingness(
            &mut train,
            cfg.missing_rate,
            cfg.missing_mode,
            crate::numerics::derive_seed(seed, &[MISSING_STREAM, nt, task as u64, 0]),
        )?;
        apply_missingness(
            &mut test,
            cfg.missing_rate,
            cfg.missing_mode,
            crate::numerics::derive_seed(seed, &[MISSING_STREAM, nt, task as u64, 1]),
        )?;
        tasks.push(TaskData { train, test });
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPE: SampleShape = SampleShape {
        image_tokens: 8,
        text_tokens: 8,
    };

    fn batch_of(n: usize) -> TaskBatch {
        let cfg = StreamConfig {
            total_classes: 1,
            num_tasks: 1,
            train_per_class: n,
            test_per_class: 1,
            missing_rate: 0.0,
            ..StreamConfig::default()
        };
        generate_stream(&cfg, SHAPE, 3).unwrap().remove(0).train
    }

    #[test]
    fn protocol_counts() {
        let table = [
            (MissingMode::Both, 0.9, (10, 45, 45)),
            (MissingMode::Text, 0.7, (30, 70, 0)),
            (MissingMode::Image, 0.3, (70, 0, 30)),
            (MissingMode::Both, 0.1, (90, 5, 5)),
        ];
        for (mode, rate, expected) in table {
            let mut b = batch_of(100);
            let labels = b.labels.clone();
            apply_missingness(&mut b, rate, mode, 8).unwrap();
            assert_eq!(b.presence_counts(), expected, "{mode:?} {rate}");
            assert_eq!(b.len(), 100);
            assert_eq!(b.labels, labels);
        }
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let mut b = batch_of(10);
        let before = b.clone();
        apply_missingness(&mut b, 0.0, MissingMode::Both, 1).unwrap();
        assert_eq!(b, before);
        assert!(apply_missingness(&mut b, 1.0, MissingMode::Both, 1).is_err());
    }

    #[test]
    fn masked_samples_hold_zero_dummies() {
        let mut b = batch_of(20);
        apply_missingness(&mut b, 0.5, MissingMode::Both, 2).unwrap();
        for s in &b.samples {
            if !s.has_text {
                assert_eq!(s.text.max_abs(), 0.0);
            }
            if !s.has_image {
                assert_eq!(s.image.max_abs(), 0.0);
            }
            assert_eq!(s.image.shape(), (8, 32));
        }
    }

    #[test]
    fn one_class_per_task_and_disjoint_ranges() {
        let cfg = StreamConfig {
            num_tasks: 20,
            ..StreamConfig::default()
        };
        let stream = generate_stream(&cfg, SHAPE, 1).unwrap();
        assert_eq!(stream.len(), 20);
        let mut covered = Vec::new();
        for (k, t) in stream.iter().enumerate() {
            assert_eq!(t.train.classes.len(), 1);
            assert!(t.train.labels.iter().all(|l| t.train.classes.contains(l)));
            assert!(t.test.labels.iter().all(|l| t.test.classes.contains(l)));
            assert_eq!(t.train.task_index, k);
            covered.extend(t.train.classes.clone());
        }
        assert_eq!(covered, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_stream() {
        let cfg = StreamConfig::default();
        assert_eq!(
            generate_stream(&cfg, SHAPE, 4).unwrap(),
            generate_stream(&cfg, SHAPE, 4).unwrap()
        );
        assert_ne!(
            generate_stream(&cfg, SHAPE, 4).unwrap(),
            generate_stream(&cfg, SHAPE, 5).unwrap()
        );
    }

    #[test]
    fn indivisible_split_rejected() {
        let cfg = StreamConfig {
            num_tasks: 3,
            ..StreamConfig::default()
        };
        assert!(generate_stream(&cfg, SHAPE, 1).is_err());
    }

    #[test]
    fn regrouping_keeps_complete_samples() {
        let base = StreamConfig {
            missing_rate: 0.0,
            ..StreamConfig::default()
        };
        let five = generate_stream(&base, SHAPE, 9).unwrap();
        let twenty = generate_stream(
            &StreamConfig {
                num_tasks: 20,
                ..base
            },
            SHAPE,
            9,
        )
        .unwrap();
        let flat = |s: &[TaskData]| {
            s.iter()
                .flat_map(|t| t.train.samples.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(flat(&five), flat(&twenty));
    }
}
