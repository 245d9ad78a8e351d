//! Closed-form classifier on frozen features.
//!
//! Features pass through a fixed random up-sampling layer with ReLU, then a
//! ridge-regression head is fitted in closed form on the first task and
//! updated recursively afterwards:
//!
//! ```text
//! R_k = R_{k-1} − R_{k-1} H_kᵀ (H_k R_{k-1} H_kᵀ + I)⁻¹ H_k R_{k-1}
//! W_k = W_{k-1} − R_k H_kᵀ H_k W_{k-1} + R_k H_kᵀ Y_k
//! ```
//!
//! which reproduces the ridge solution on all data seen so far without
//! keeping any of it. [`JointCache`] keeps the data anyway and solves the
//! stacked problem directly; it exists to check the recursion.

use serde::{Deserialize, Serialize};

use crate::backbone::{FrozenEncoder, ModalInput};
use crate::error::{config_err, input_err, Result};
use crate::numerics::{argmax, seeded_normal, spd_inverse, Cholesky, Matrix, SeededRng};
use crate::prompts::PromptModule;

/// Rows per inner solve in [`RlsHead::rls_update`].
pub const UPDATE_CHUNK_ROWS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticConfig {
    /// Width of the up-sampled feature space.
    pub up_dim: usize,
    /// Ridge weight.
    pub reg: f64,
}

impl Default for AnalyticConfig {
    fn default() -> Self {
        AnalyticConfig {
            up_dim: 512,
            reg: 1.0,
        }
    }
}

impl AnalyticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.up_dim == 0 {
            return config_err("analytic.up_dim", "must be positive");
        }
        if !(self.reg > 0.0) || !self.reg.is_finite() {
            return config_err("analytic.reg", "ridge weight must be positive and finite");
        }
        Ok(())
    }
}

/// Frozen random projection followed by ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Upsampler {
    pub weights: Matrix,
}

impl Upsampler {
    /// Entries drawn from `N(0, 1/D)`.
    pub fn new(input_dim: usize, up_dim: usize, rng: &mut SeededRng) -> Result<Self> {
        let std = 1.0 / (input_dim as f64).sqrt();
        Ok(Upsampler {
            weights: seeded_normal(rng, input_dim, up_dim, std)?,
        })
    }

    pub fn up_dim(&self) -> usize {
        self.weights.cols()
    }

    /// `ReLU(X · W_up)`, one output row per input row.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.weights.rows() {
            return input_err(format!(
                "features have width {}, up-sampler expects {}",
                x.cols(),
                self.weights.rows()
            ));
        }
        let mut h = x.matmul(&self.weights);
        crate::numerics::relu_in_place(h.as_mut_slice());
        Ok(h)
    }
}

/// Joint embeddings of `samples`, one row each. Prompts are selected from
/// each sample's own prompt-free queries when a module is given.
pub fn joint_embeddings(
    encoder: &FrozenEncoder,
    prompts: Option<&PromptModule>,
    samples: &[ModalInput],
) -> Result<Matrix> {
    let d = encoder.embed_dim();
    let mut out = Matrix::zeros(samples.len(), d);
    for (i, s) in samples.iter().enumerate() {
        let seq = encoder.build_sequence(s)?;
        let joint = match prompts {
            Some(module) => {
                let q = encoder.encode(&seq, None)?;
                let sel = module.select(&q.q_text, &q.q_image)?;
                encoder.encode(&seq, Some(&sel.prompts))?.joint
            }
            None => encoder.encode(&seq, None)?.joint,
        };
        out.row_mut(i).copy_from_slice(&joint);
    }
    Ok(out)
}

/// Up-sampled features `H` for a batch of samples.
pub fn embed(
    encoder: &FrozenEncoder,
    prompts: Option<&PromptModule>,
    upsampler: &Upsampler,
    samples: &[ModalInput],
) -> Result<Matrix> {
    upsampler.transform(&joint_embeddings(encoder, prompts, samples)?)
}

fn check_targets(h: &Matrix, y: &Matrix) -> Result<()> {
    if h.rows() != y.rows() {
        return input_err(format!(
            "feature rows ({}) and target rows ({}) differ",
            h.rows(),
            y.rows()
        ));
    }
    if !h.is_finite() || !y.is_finite() {
        return input_err("features or targets contain non-finite values");
    }
    Ok(())
}

/// Ridge head with its regularized inverse autocorrelation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlsHead {
    /// `d × C_seen`.
    pub weights: Matrix,
    /// `(Hᵀ H + η I)⁻¹` over every row absorbed so far.
    pub r: Matrix,
    pub reg: f64,
}

impl RlsHead {
    /// Prior-only head: `R = I/η`, no classes.
    pub fn empty(dim: usize, reg: f64) -> Result<Self> {
        if !(reg > 0.0) || !reg.is_finite() {
            return input_err(format!("ridge weight must be positive, got {reg}"));
        }
        Ok(RlsHead {
            weights: Matrix::zeros(dim, 0),
            r: Matrix::identity(dim).scale(1.0 / reg),
            reg,
        })
    }

    /// Closed-form ridge fit on the first task:
    /// `W = (HᵀH + ηI)⁻¹ HᵀY`, `R = (HᵀH + ηI)⁻¹`.
    pub fn init_first(h: &Matrix, y: &Matrix, reg: f64) -> Result<Self> {
        if !(reg > 0.0) || !reg.is_finite() {
            return input_err(format!("ridge weight must be positive, got {reg}"));
        }
        check_targets(h, y)?;
        let mut gram = h.t_matmul(h);
        gram.add_diag(reg);
        gram.symmetrize();
        let chol = Cholesky::factor(&gram)?;
        let weights = chol.solve(&h.t_matmul(y))?;
        let r = chol.inverse()?;
        Ok(RlsHead { weights, r, reg })
    }

    pub fn dim(&self) -> usize {
        self.r.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    /// Appends zero columns for `count` new classes.
    pub fn expand_classes(&mut self, count: usize) -> Result<()> {
        if count == 0 {
            return input_err("expand_classes needs at least one new class");
        }
        self.weights.append_zero_cols(count);
        Ok(())
    }

    /// Absorbs a block of rows. `y` spans every class seen so far (zeros in
    /// the columns of earlier tasks). Large blocks are processed in chunks
    /// of [`UPDATE_CHUNK_ROWS`].
    pub fn rls_update(&mut self, h: &Matrix, y: &Matrix) -> Result<()> {
        self.update_with_sign(h, y, 1.0)
    }

    /// Mutation hook for the verify suite: flips the sign of the
    /// `R_k H_kᵀ H_k W_{k-1}` term.
    #[doc(hidden)]
    pub fn rls_update_corrupted(&mut self, h: &Matrix, y: &Matrix) -> Result<()> {
        self.update_with_sign(h, y, -1.0)
    }

    fn update_with_sign(&mut self, h: &Matrix, y: &Matrix, sign: f64) -> Result<()> {
        check_targets(h, y)?;
        if h.cols() != self.dim() {
            return input_err(format!(
                "features have width {}, head expects {}",
                h.cols(),
                self.dim()
            ));
        }
        if y.cols() != self.num_classes() {
            return input_err(format!(
                "targets have {} columns, head has {} classes",
                y.cols(),
                self.num_classes()
            ));
        }
        let mut start = 0;
        while start < h.rows() {
            let end = (start + UPDATE_CHUNK_ROWS).min(h.rows());
            self.update_block(&h.row_range(start, end), &y.row_range(start, end), sign)?;
            start = end;
        }
        Ok(())
    }

    fn update_block(&mut self, h: &Matrix, y: &Matrix, sign: f64) -> Result<()> {
        // R_{k-1} H_kᵀ, d × m
        let rh = self.r.matmul_t(h);
        let mut inner = h.matmul(&rh);
        inner.add_diag(1.0);
        inner.symmetrize();
        // (H R Hᵀ + I)⁻¹ H R, with H R = (R Hᵀ)ᵀ
        let gain = Cholesky::factor(&inner)?.solve(&rh.transpose())?;
        self.r = self.r.sub(&rh.matmul(&gain));
        self.r.symmetrize();
        // W_k = W_{k-1} + R_k H_kᵀ (Y_k − H_k W_{k-1})
        let mut residual = h.matmul(&self.weights).scale(-sign);
        residual.add_assign(y);
        let correction = self.r.matmul(&h.t_matmul(&residual));
        self.weights.add_assign(&correction);
        Ok(())
    }

    pub fn logits(&self, h: &Matrix) -> Result<Matrix> {
        if h.cols() != self.dim() {
            return input_err(format!(
                "features have width {}, head expects {}",
                h.cols(),
                self.dim()
            ));
        }
        Ok(h.matmul(&self.weights))
    }

    /// Arg-max class per row; ties go to the lowest index.
    pub fn predict(&self, h: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits(h)?;
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }
}

/// Up-sampler plus recursive ridge head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticState {
    pub upsampler: Upsampler,
    pub head: RlsHead,
}

impl AnalyticState {
    pub fn new(embed_dim: usize, cfg: &AnalyticConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        Ok(AnalyticState {
            upsampler: Upsampler::new(embed_dim, cfg.up_dim, rng)?,
            head: RlsHead::empty(cfg.up_dim, cfg.reg)?,
        })
    }

    pub fn classes_seen(&self) -> usize {
        self.head.num_classes()
    }
}

/// Keeps every absorbed block so the stacked ridge problem can be solved
/// directly. Only used to check [`RlsHead`].
#[derive(Debug, Clone, PartialEq)]
pub struct JointCache {
    pub h: Matrix,
    /// Block-diagonal label stack; grows a column block per task.
    pub y: Matrix,
    /// Running `Hᵀ Y`.
    pub q: Matrix,
}

impl JointCache {
    pub fn new(dim: usize) -> Self {
        JointCache {
            h: Matrix::zeros(0, dim),
            y: Matrix::zeros(0, 0),
            q: Matrix::zeros(dim, 0),
        }
    }

    pub fn rows(&self) -> usize {
        self.h.rows()
    }

    /// Adds a task block. `y` may span more classes than seen so far; the
    /// earlier blocks are padded with zero columns.
    pub fn push(&mut self, h: &Matrix, y: &Matrix) -> Result<()> {
        check_targets(h, y)?;
        if h.cols() != self.h.cols() {
            return input_err("feature width changed between blocks");
        }
        if y.cols() < self.y.cols() {
            return input_err("target block has fewer columns than previous blocks");
        }
        let extra = y.cols() - self.y.cols();
        if extra > 0 {
            self.y.append_zero_cols(extra);
            self.q.append_zero_cols(extra);
        }
        self.h = self.h.vstack(h);
        self.y = self.y.vstack(y);
        self.q.add_assign(&h.t_matmul(y));
        Ok(())
    }

    /// Solves `(HᵀH + ηI) W = HᵀY` on the stacked data and returns `(W, R)`
    /// with `R = (HᵀH + ηI)⁻¹`.
    pub fn joint_solve(&self, reg: f64) -> Result<(Matrix, Matrix)> {
        if !(reg > 0.0) {
            return input_err("ridge weight must be positive");
        }
        let mut gram = self.h.t_matmul(&self.h);
        gram.add_diag(reg);
        gram.symmetrize();
        let chol = Cholesky::factor(&gram)?;
        let w = chol.solve(&self.h.t_matmul(&self.y))?;
        let r = spd_inverse(&gram)?;
        Ok((w, r))
    }
}

/// One-hot target matrix over `num_classes` columns.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Matrix> {
    let mut y = Matrix::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return input_err(format!("label {l} outside 0..{num_classes}"));
        }
        y[(i, l)] = 1.0;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn random_task(
        rng: &mut SeededRng,
        rows: usize,
        dim: usize,
        class_start: usize,
        classes: usize,
        total: usize,
    ) -> (Matrix, Matrix) {
        let h = seeded_normal(rng, rows.max(1), dim, 1.0)
            .unwrap()
            .row_range(0, rows);
        let labels: Vec<usize> = (0..rows)
            .map(|_| class_start + rng.below(classes))
            .collect();
        (h, one_hot(&labels, total).unwrap())
    }

    #[test]
    fn identity_features_halve_targets() {
        let y = one_hot(&[0, 2, 1, 2], 3).unwrap();
        let head = RlsHead::init_first(&Matrix::identity(4), &y, 1.0).unwrap();
        assert!(head.weights.sub(&y.scale(0.5)).max_abs() < 1e-15);
    }

    #[test]
    fn empty_first_task_is_prior() {
        let head = RlsHead::init_first(&Matrix::zeros(0, 5), &Matrix::zeros(0, 2), 4.0).unwrap();
        assert!(head.r.sub(&Matrix::identity(5).scale(0.25)).max_abs() < 1e-15);
        assert_eq!(head.weights, Matrix::zeros(5, 2));
        assert!(RlsHead::init_first(&Matrix::zeros(0, 5), &Matrix::zeros(0, 2), 0.0).is_err());
    }

    #[test]
    fn normal_equations_hold() {
        let mut rng = SeededRng::new(8);
        let (h, y) = random_task(&mut rng, 20, 16, 0, 4, 4);
        let head = RlsHead::init_first(&h, &y, 1.0).unwrap();
        let mut gram = h.t_matmul(&h);
        gram.add_diag(1.0);
        let res = gram
            .matmul(&head.weights)
            .sub(&h.t_matmul(&y))
            .frobenius_norm();
        assert!(res / h.t_matmul(&y).frobenius_norm() <= 1e-10);
    }

    #[test]
    fn expansion_appends_zero_columns() {
        let mut rng = SeededRng::new(8);
        let (h, y) = random_task(&mut rng, 10, 6, 0, 2, 2);
        let mut head = RlsHead::init_first(&h, &y, 1.0).unwrap();
        let before = head.clone();
        head.expand_classes(3).unwrap();
        assert_eq!(head.num_classes(), 5);
        assert_eq!(head.weights.col_range(0, 2), before.weights);
        assert_eq!(head.weights.col_range(2, 5).max_abs(), 0.0);
        assert_eq!(head.r, before.r);
        assert!(head.expand_classes(0).is_err());
    }

    #[test]
    fn empty_update_is_a_no_op() {
        let mut rng = SeededRng::new(8);
        let (h, y) = random_task(&mut rng, 10, 6, 0, 2, 2);
        let mut head = RlsHead::init_first(&h, &y, 1.0).unwrap();
        let before = head.clone();
        head.rls_update(&Matrix::zeros(0, 6), &Matrix::zeros(0, 2))
            .unwrap();
        assert_eq!(head, before);
        assert!(head
            .rls_update(&Matrix::zeros(2, 6), &Matrix::zeros(3, 2))
            .is_err());
    }

    #[test]
    fn update_from_prior_equals_first_fit() {
        let mut rng = SeededRng::new(31);
        let (h, y) = random_task(&mut rng, 30, 12, 0, 3, 3);
        let direct = RlsHead::init_first(&h, &y, 1.0).unwrap();
        let mut rec = RlsHead::empty(12, 1.0).unwrap();
        rec.expand_classes(3).unwrap();
        rec.rls_update(&h, &y).unwrap();
        assert!(rec.weights.relative_distance(&direct.weights) <= 1e-10);
        assert!(rec.r.relative_distance(&direct.r) <= 1e-10);
    }

    #[test]
    fn five_tasks_match_joint_solve() {
        let mut rng = SeededRng::new(99);
        let (dim, per_task, tasks) = (24, 3, 5);
        let total = per_task * tasks;
        let mut head = RlsHead::empty(dim, 1.0).unwrap();
        let mut cache = JointCache::new(dim);
        for k in 0..tasks {
            let (h, y) = random_task(
                &mut rng,
                15 + 7 * k,
                dim,
                k * per_task,
                per_task,
                (k + 1) * per_task,
            );
            if k == 0 {
                head = RlsHead::init_first(&h, &y, 1.0).unwrap();
            } else {
                head.expand_classes(per_task).unwrap();
                head.rls_update(&h, &y).unwrap();
            }
            let q_prev = cache.q.clone();
            cache.push(&h, &y).unwrap();
            let mut padded = q_prev;
            padded.append_zero_cols(cache.q.cols() - padded.cols());
            padded.add_assign(&h.t_matmul(&y));
            assert!(cache.q.sub(&padded).max_abs() <= 1e-12);
        }
        assert_eq!(head.num_classes(), total);
        let (w, r) = cache.joint_solve(1.0).unwrap();
        assert!(head.weights.relative_distance(&w) <= 1e-9);
        assert!(head.r.relative_distance(&r) <= 1e-9);
        assert!(head.r.asymmetry() <= 1e-9);

        let test = seeded_normal(&mut rng, 500, dim, 1.0).unwrap();
        let inc = head.predict(&test).unwrap();
        let joint = test.matmul(&w);
        let joint_pred: Vec<usize> = (0..500).map(|i| argmax(joint.row(i))).collect();
        assert_eq!(inc, joint_pred);
    }

    #[test]
    fn chunked_update_matches_single_block() {
        let mut rng = SeededRng::new(4);
        let (h0, y0) = random_task(&mut rng, 20, 10, 0, 2, 4);
        let (h1, y1) = random_task(&mut rng, 600, 10, 2, 2, 4);
        let mut a = RlsHead::init_first(&h0, &y0, 0.5).unwrap();
        let mut b = a.clone();
        a.rls_update(&h1, &y1).unwrap();
        b.update_block(&h1, &y1, 1.0).unwrap();
        assert!(a.weights.relative_distance(&b.weights) <= 1e-9);
        assert!(a.r.relative_distance(&b.r) <= 1e-9);
    }

    #[test]
    fn predict_examples() {
        let head = RlsHead::empty(3, 1.0).map(|mut h| {
            h.expand_classes(3).unwrap();
            h
        });
        let head = head.unwrap();
        assert_eq!(head.predict(&Matrix::identity(3)).unwrap(), vec![0, 0, 0]);
        let mut perfect = head.clone();
        perfect.weights =
            Matrix::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        assert_eq!(
            perfect.predict(&Matrix::identity(3)).unwrap(),
            vec![1, 2, 0]
        );
    }

    #[test]
    fn upsampler_clamps_and_annihilates() {
        let mut up = Upsampler::new(4, 6, &mut SeededRng::new(1)).unwrap();
        let x = Matrix::from_rows(&[&[1.0, -2.0, 0.5, 3.0]]);
        let h = up.transform(&x).unwrap();
        assert!(h.as_slice().iter().all(|&v| v >= 0.0));
        up.weights = Matrix::zeros(4, 6);
        assert_eq!(up.transform(&x).unwrap().max_abs(), 0.0);
        let mut neg = Upsampler::new(1, 3, &mut SeededRng::new(1)).unwrap();
        neg.weights = Matrix::from_rows(&[&[1.0, 2.0, 0.5]]);
        assert_eq!(
            neg.transform(&Matrix::from_rows(&[&[-1.0]]))
                .unwrap()
                .max_abs(),
            0.0
        );
        assert!(up.transform(&Matrix::zeros(1, 5)).is_err());
    }
}
