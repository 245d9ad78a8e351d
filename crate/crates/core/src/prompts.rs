//! Modality-specific prompt pools.
//!
//! A pool holds `N` prompt components (`D × N_p` each), attention vectors
//! `A` and keys `E` (both `D × N`, one column per component). A query picks
//! weights `w_n = cos(q ⊙ A_n, E_n)` and the prompt handed to the encoder is
//! `Σ_n w_n P_n`.

use serde::{Deserialize, Serialize};

use crate::backbone::{FrozenEncoder, ModalInput, PromptPair, TokenSequence};
use crate::error::{input_err, Result};
use crate::numerics::{cosine_sim, cosine_sim_grad, dot, seeded_normal, Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Text,
}

/// How prompts are organized across modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptLayout {
    /// One pool per modality.
    ModalitySpecific,
    /// A single pool queried by both modalities.
    Shared,
    /// One fixed prompt per modality, no selection.
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoolConfig {
    pub pool_size: usize,
    pub prompt_length: usize,
    /// Standard deviation of the initial components, attention vectors and keys.
    pub init_std: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            pool_size: 16,
            prompt_length: 8,
            init_std: 1.0,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::config_err;
        if self.pool_size == 0 {
            return config_err("pool.pool_size", "must be at least 1");
        }
        if !(self.init_std > 0.0) || !self.init_std.is_finite() {
            return config_err("pool.init_std", "must be positive and finite");
        }
        Ok(())
    }
}

/// One prompt pool. The same type doubles as its own gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPool {
    pub components: Vec<Matrix>,
    /// `D × N`; column `n` is `A_n`.
    pub attention: Matrix,
    /// `D × N`; column `n` is `E_n`.
    pub keys: Matrix,
    /// When set, `compute_weights` returns all ones and `A`, `E` are inert.
    pub fixed_weights: bool,
}

impl PromptPool {
    pub fn new(dim: usize, cfg: &PoolConfig, rng: &mut SeededRng) -> Result<Self> {
        let mut components = Vec::with_capacity(cfg.pool_size);
        for _ in 0..cfg.pool_size {
            components.push(if cfg.prompt_length == 0 {
                Matrix::zeros(dim, 0)
            } else {
                seeded_normal(rng, dim, cfg.prompt_length, cfg.init_std)?
            });
        }
        Ok(PromptPool {
            components,
            attention: seeded_normal(rng, dim, cfg.pool_size, cfg.init_std)?,
            keys: seeded_normal(rng, dim, cfg.pool_size, cfg.init_std)?,
            fixed_weights: false,
        })
    }

    /// A single component whose weight is pinned to 1.
    pub fn vector(
        dim: usize,
        prompt_length: usize,
        init_std: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let cfg = PoolConfig {
            pool_size: 1,
            prompt_length,
            init_std,
        };
        let mut pool = PromptPool::new(dim, &cfg, rng)?;
        pool.fixed_weights = true;
        Ok(pool)
    }

    pub fn size(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.attention.rows()
    }

    pub fn prompt_length(&self) -> usize {
        self.components.first().map_or(0, |c| c.cols())
    }

    pub fn zeros_like(&self) -> Self {
        PromptPool {
            components: self
                .components
                .iter()
                .map(|c| Matrix::zeros(c.rows(), c.cols()))
                .collect(),
            attention: Matrix::zeros(self.attention.rows(), self.attention.cols()),
            keys: Matrix::zeros(self.keys.rows(), self.keys.cols()),
            fixed_weights: self.fixed_weights,
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.components.iter().map(|c| c.as_slice()).collect();
        out.push(self.attention.as_slice());
        out.push(self.keys.as_slice());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self
            .components
            .iter_mut()
            .map(|c| c.as_mut_slice())
            .collect();
        out.push(self.attention.as_mut_slice());
        out.push(self.keys.as_mut_slice());
        out
    }

    /// Accumulates gradients for the selection `w = weights(query)` and
    /// assembly `P = Σ w_n P_n`, given `d_prompt = ∂L/∂P`.
    pub fn accumulate_grad(
        &self,
        query: &[f64],
        weights: &[f64],
        d_prompt: &Matrix,
        grad: &mut PromptPool,
    ) {
        for (n, comp) in self.components.iter().enumerate() {
            grad.components[n].axpy(weights[n], d_prompt);
            if self.fixed_weights {
                continue;
            }
            let dw = dot(comp.as_slice(), d_prompt.as_slice());
            if dw == 0.0 {
                continue;
            }
            let a_n = self.attention.column(n);
            let u: Vec<f64> = query.iter().zip(&a_n).map(|(q, a)| q * a).collect();
            let e_n = self.keys.column(n);
            let (gu, ge) = cosine_sim_grad(&u, &e_n);
            for i in 0..self.dim() {
                grad.attention[(i, n)] += dw * gu[i] * query[i];
                grad.keys[(i, n)] += dw * ge[i];
            }
        }
    }
}

/// `w_n = cos(query ⊙ A_n, E_n)` for every component.
pub fn compute_weights(pool: &PromptPool, query: &[f64]) -> Vec<f64> {
    if pool.fixed_weights {
        return vec![1.0; pool.size()];
    }
    (0..pool.size())
        .map(|n| {
            let u: Vec<f64> = query
                .iter()
                .enumerate()
                .map(|(i, q)| q * pool.attention[(i, n)])
                .collect();
            cosine_sim(&u, &pool.keys.column(n))
        })
        .collect()
}

/// `Σ_n weights[n] · P_n`.
pub fn assemble_prompt(pool: &PromptPool, weights: &[f64]) -> Result<Matrix> {
    if weights.len() != pool.size() {
        return input_err(format!(
            "got {} weights for a pool of {}",
            weights.len(),
            pool.size()
        ));
    }
    let mut out = Matrix::zeros(pool.dim(), pool.prompt_length());
    for (w, comp) in weights.iter().zip(&pool.components) {
        out.axpy(*w, comp);
    }
    Ok(out)
}

/// Splits a complete sample into its `(image_only, text_only)` counterparts.
pub fn make_counterparts(sample: &ModalInput) -> Result<(ModalInput, ModalInput)> {
    if !sample.is_complete() {
        return input_err("counterparts can only be built from a modality-complete sample");
    }
    let mut image_only = sample.clone();
    image_only.drop_text();
    let mut text_only = sample.clone();
    text_only.drop_image();
    Ok((image_only, text_only))
}

/// Weights chosen for one sample, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSelection {
    pub text_weights: Vec<f64>,
    pub image_weights: Vec<f64>,
    pub prompts: PromptPair,
}

/// The trainable prompt module: one or two pools depending on the layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptModule {
    pub layout: PromptLayout,
    pub pools: Vec<PromptPool>,
}

impl PromptModule {
    pub fn new(
        layout: PromptLayout,
        dim: usize,
        cfg: &PoolConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        cfg.validate()?;
        let pools = match layout {
            PromptLayout::ModalitySpecific => vec![
                PromptPool::new(dim, cfg, rng)?,
                PromptPool::new(dim, cfg, rng)?,
            ],
            PromptLayout::Shared => vec![PromptPool::new(dim, cfg, rng)?],
            PromptLayout::Vector => vec![
                PromptPool::vector(dim, cfg.prompt_length, cfg.init_std, rng)?,
                PromptPool::vector(dim, cfg.prompt_length, cfg.init_std, rng)?,
            ],
        };
        Ok(PromptModule { layout, pools })
    }

    fn pool_index(&self, modality: Modality) -> usize {
        match (self.layout, modality) {
            (PromptLayout::Shared, _) => 0,
            (_, Modality::Text) => 0,
            (_, Modality::Image) => 1,
        }
    }

    pub fn pool(&self, modality: Modality) -> &PromptPool {
        &self.pools[self.pool_index(modality)]
    }

    pub fn zeros_like(&self) -> Self {
        PromptModule {
            layout: self.layout,
            pools: self.pools.iter().map(PromptPool::zeros_like).collect(),
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        self.pools.iter().flat_map(|p| p.blocks()).collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.pools.iter_mut().flat_map(|p| p.blocks_mut()).collect()
    }

    /// Builds the text and image prompts from the sample's own queries.
    pub fn select(&self, q_text: &[f64], q_image: &[f64]) -> Result<PromptSelection> {
        let text_pool = self.pool(Modality::Text);
        let image_pool = self.pool(Modality::Image);
        let text_weights = compute_weights(text_pool, q_text);
        let image_weights = compute_weights(image_pool, q_image);
        let prompts = PromptPair {
            text: assemble_prompt(text_pool, &text_weights)?,
            image: assemble_prompt(image_pool, &image_weights)?,
        };
        Ok(PromptSelection {
            text_weights,
            image_weights,
            prompts,
        })
    }

    /// Pushes `∂L/∂prompts` back into `grad` for a selection made from
    /// `(q_text, q_image)`.
    pub fn accumulate_grad(
        &self,
        q_text: &[f64],
        q_image: &[f64],
        selection: &PromptSelection,
        d_prompts: &PromptPair,
        grad: &mut PromptModule,
    ) {
        let ti = self.pool_index(Modality::Text);
        let ii = self.pool_index(Modality::Image);
        self.pools[ti].accumulate_grad(
            q_text,
            &selection.text_weights,
            &d_prompts.text,
            &mut grad.pools[ti],
        );
        self.pools[ii].accumulate_grad(
            q_image,
            &selection.image_weights,
            &d_prompts.image,
            &mut grad.pools[ii],
        );
    }
}

/// Prompt-free queries and token sequences for a complete sample and its two
/// counterparts. Everything here is constant while the backbone is frozen.
#[derive(Debug, Clone)]
pub struct CounterpartCache {
    pub target_text: Vec<f64>,
    pub target_image: Vec<f64>,
    pub image_only: TokenSequence,
    pub image_only_queries: (Vec<f64>, Vec<f64>),
    pub text_only: TokenSequence,
    pub text_only_queries: (Vec<f64>, Vec<f64>),
}

impl CounterpartCache {
    pub fn new(encoder: &FrozenEncoder, sample: &ModalInput) -> Result<Self> {
        let (image_only, text_only) = make_counterparts(sample)?;
        let (target_text, target_image) = encoder.queries(sample)?;
        let image_only_seq = encoder.build_sequence(&image_only)?;
        let io = encoder.encode(&image_only_seq, None)?;
        let text_only_seq = encoder.build_sequence(&text_only)?;
        let to = encoder.encode(&text_only_seq, None)?;
        Ok(CounterpartCache {
            target_text,
            target_image,
            image_only: image_only_seq,
            image_only_queries: (io.q_text, io.q_image),
            text_only: text_only_seq,
            text_only_queries: (to.q_text, to.q_image),
        })
    }
}

/// Reconstructed queries of one complete sample: the image query recovered
/// from the text-only counterpart and the text query recovered from the
/// image-only counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub q_text: Vec<f64>,
    pub q_image: Vec<f64>,
}

/// `(1/L_c) Σ_i ‖q^v_i − q̂^v_i‖² + ‖q^t_i − q̂^t_i‖²` over target
/// `(q_text, q_image)` pairs and their reconstructions.
pub fn reconstruction_objective(targets: &[(Vec<f64>, Vec<f64>)], recon: &[Reconstruction]) -> f64 {
    assert_eq!(targets.len(), recon.len());
    if targets.is_empty() {
        return 0.0;
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let total: f64 = targets
        .iter()
        .zip(recon)
        .map(|((qt, qv), r)| sq(qv, &r.q_image) + sq(qt, &r.q_text))
        .sum();
    total / targets.len() as f64
}

/// Runs the prompted counterpart passes for each cached sample, returning the
/// loss value and, when `grad` is given, accumulating `scale · ∂L_r/∂θ`.
pub fn reconstruction_from_cache(
    encoder: &FrozenEncoder,
    module: &PromptModule,
    caches: &[&CounterpartCache],
    scale: f64,
    mut grad: Option<&mut PromptModule>,
) -> Result<f64> {
    if caches.is_empty() {
        return Ok(0.0);
    }
    let inv = 1.0 / caches.len() as f64;
    let d = encoder.embed_dim();
    let zero = vec![0.0; d];
    let mut total = 0.0;
    for cache in caches {
        // image query rebuilt without the image
        let (tq_t, tq_v) = &cache.text_only_queries;
        let sel = module.select(tq_t, tq_v)?;
        let (out, trace) = encoder.encode_traced(&cache.text_only, Some(&sel.prompts))?;
        let diff_v: Vec<f64> = out
            .q_image
            .iter()
            .zip(&cache.target_image)
            .map(|(a, b)| a - b)
            .collect();
        total += dot(&diff_v, &diff_v);
        if let Some(g) = grad.as_deref_mut() {
            let d_q: Vec<f64> = diff_v.iter().map(|x| 2.0 * x * inv * scale).collect();
            let dp = encoder.backward(&trace, &zero, &d_q);
            module.accumulate_grad(tq_t, tq_v, &sel, &dp, g);
        }

        // text query rebuilt without the text
        let (iq_t, iq_v) = &cache.image_only_queries;
        let sel = module.select(iq_t, iq_v)?;
        let (out, trace) = encoder.encode_traced(&cache.image_only, Some(&sel.prompts))?;
        let diff_t: Vec<f64> = out
            .q_text
            .iter()
            .zip(&cache.target_text)
            .map(|(a, b)| a - b)
            .collect();
        total += dot(&diff_t, &diff_t);
        if let Some(g) = grad.as_deref_mut() {
            let d_q: Vec<f64> = diff_t.iter().map(|x| 2.0 * x * inv * scale).collect();
            let dp = encoder.backward(&trace, &d_q, &zero);
            module.accumulate_grad(iq_t, iq_v, &sel, &dp, g);
        }
    }
    Ok(total * inv)
}

/// Reconstruction loss over a batch of complete samples with its gradient
/// with respect to every pool parameter. Ground-truth queries come from the
/// prompt-free pass and carry no gradient.
pub fn reconstruction_loss(
    encoder: &FrozenEncoder,
    module: &PromptModule,
    samples: &[ModalInput],
) -> Result<(f64, PromptModule)> {
    let caches = samples
        .iter()
        .map(|s| CounterpartCache::new(encoder, s))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&CounterpartCache> = caches.iter().collect();
    let mut grad = module.zeros_like();
    let value = reconstruction_from_cache(encoder, module, &refs, 1.0, Some(&mut grad))?;
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::EncoderConfig;
    use proptest::prelude::*;

    fn small_pool(seed: u64, n: usize, d: usize, np: usize) -> PromptPool {
        let cfg = PoolConfig {
            pool_size: n,
            prompt_length: np,
            init_std: 1.0,
        };
        PromptPool::new(d, &cfg, &mut SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn self_similarity_and_orthogonality() {
        let mut pool = small_pool(1, 2, 3, 2);
        let q = [0.5, -1.0, 2.0];
        for i in 0..3 {
            pool.attention[(i, 0)] = 1.0;
            pool.keys[(i, 0)] = q[i];
        }
        // q ⊙ A_1 = (0.5, 0, 0) against E_1 = (0, 1, 0)
        pool.attention[(0, 1)] = 1.0;
        pool.attention[(1, 1)] = 0.0;
        pool.attention[(2, 1)] = 0.0;
        pool.keys[(0, 1)] = 0.0;
        pool.keys[(1, 1)] = 1.0;
        pool.keys[(2, 1)] = 0.0;
        let w = compute_weights(&pool, &q);
        assert!((w[0] - 1.0).abs() < 1e-15);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn weights_match_direct_evaluation() {
        let pool = small_pool(7, 4, 8, 2);
        let q: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let w = compute_weights(&pool, &q);
        for n in 0..4 {
            let mut num = 0.0;
            let mut nu = 0.0;
            let mut ne = 0.0;
            for i in 0..8 {
                let u = q[i] * pool.attention[(i, n)];
                let e = pool.keys[(i, n)];
                num += u * e;
                nu += u * u;
                ne += e * e;
            }
            let direct = num / (nu.sqrt() * ne.sqrt());
            assert!((w[n] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_query_gives_zero_weights() {
        let pool = small_pool(7, 4, 8, 2);
        assert_eq!(compute_weights(&pool, &[0.0; 8]), vec![0.0; 4]);
    }

    #[test]
    fn assembly_examples() {
        let pool = small_pool(3, 4, 5, 3);
        let mut onehot = vec![0.0; 4];
        onehot[2] = 1.0;
        assert_eq!(assemble_prompt(&pool, &onehot).unwrap(), pool.components[2]);
        let uniform = assemble_prompt(&pool, &[0.25; 4]).unwrap();
        for r in 0..5 {
            for c in 0..3 {
                let mean: f64 = pool.components.iter().map(|p| p[(r, c)]).sum::<f64>() / 4.0;
                assert!((uniform[(r, c)] - mean).abs() < 1e-15);
            }
        }
        assert_eq!(assemble_prompt(&pool, &[0.0; 4]).unwrap().max_abs(), 0.0);
        assert!(assemble_prompt(&pool, &[1.0; 3]).is_err());
    }

    #[test]
    fn counterparts() {
        let cfg = EncoderConfig::default();
        let mut rng = SeededRng::new(1);
        let sample = ModalInput::complete(
            seeded_normal(&mut rng, cfg.image_tokens, cfg.input_dim, 1.0).unwrap(),
            seeded_normal(&mut rng, cfg.text_tokens, cfg.input_dim, 1.0).unwrap(),
        );
        let before = sample.clone();
        let (image_only, text_only) = make_counterparts(&sample).unwrap();
        assert_eq!(sample, before);
        assert!(!image_only.has_text && image_only.has_image);
        assert_eq!(image_only.text.max_abs(), 0.0);
        assert_eq!(image_only.image, sample.image);
        assert!(!text_only.has_image && text_only.has_text);
        assert_eq!(text_only.image.max_abs(), 0.0);
        assert!(make_counterparts(&image_only).is_err());
    }

    #[test]
    fn objective_examples() {
        let q = (vec![0.3, -0.2, 1.0], vec![2.0, 0.0, -1.0]);
        let same = Reconstruction {
            q_text: q.0.clone(),
            q_image: q.1.clone(),
        };
        assert_eq!(
            reconstruction_objective(std::slice::from_ref(&q), &[same]),
            0.0
        );
        let shifted = Reconstruction {
            q_text: q.0.clone(),
            q_image: vec![1.0, 0.0, -1.0],
        };
        assert_eq!(reconstruction_objective(&[q], &[shifted]), 1.0);
        assert_eq!(reconstruction_objective(&[], &[]), 0.0);
    }

    fn tiny_setup() -> (FrozenEncoder, PromptModule, Vec<ModalInput>) {
        let cfg = EncoderConfig {
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            image_tokens: 2,
            text_tokens: 3,
            input_dim: 4,
            ffn_dim: 8,
            prompt_layers: vec![0, 1],
        };
        let enc = FrozenEncoder::new(&cfg, 21).unwrap();
        let pc = PoolConfig {
            pool_size: 3,
            prompt_length: 2,
            init_std: 1.0,
        };
        let module = PromptModule::new(
            PromptLayout::ModalitySpecific,
            8,
            &pc,
            &mut SeededRng::new(22),
        )
        .unwrap();
        let mut rng = SeededRng::new(23);
        let samples = (0..2)
            .map(|_| {
                ModalInput::complete(
                    seeded_normal(&mut rng, 2, 4, 1.0).unwrap(),
                    seeded_normal(&mut rng, 3, 4, 1.0).unwrap(),
                )
            })
            .collect();
        (enc, module, samples)
    }

    #[test]
    fn loss_matches_independent_evaluation() {
        let (enc, module, samples) = tiny_setup();
        let (value, _) = reconstruction_loss(&enc, &module, &samples).unwrap();
        let mut targets = Vec::new();
        let mut recon = Vec::new();
        for s in &samples {
            targets.push(enc.queries(s).unwrap());
            let (image_only, text_only) = make_counterparts(s).unwrap();
            let run = |x: &ModalInput| {
                let (qt, qv) = enc.queries(x).unwrap();
                let sel = module.select(&qt, &qv).unwrap();
                enc.encode(&enc.build_sequence(x).unwrap(), Some(&sel.prompts))
                    .unwrap()
            };
            recon.push(Reconstruction {
                q_text: run(&image_only).q_text,
                q_image: run(&text_only).q_image,
            });
        }
        let direct = reconstruction_objective(&targets, &recon);
        assert!((value - direct).abs() <= 1e-12 * direct.max(1.0));
        assert!(value > 0.0);
        let (empty, g) = reconstruction_loss(&enc, &module, &[]).unwrap();
        assert_eq!(empty, 0.0);
        assert!(g.blocks().iter().all(|b| b.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (enc, module, samples) = tiny_setup();
        let (_, grad) = reconstruction_loss(&enc, &module, &samples).unwrap();
        let h = 1e-5;
        let n_blocks = module.blocks().len();
        for b in 0..n_blocks {
            let len = module.blocks()[b].len();
            let mut fd = Vec::with_capacity(len);
            for i in 0..len {
                let eval = |s: f64| {
                    let mut m = module.clone();
                    m.blocks_mut()[b][i] += s;
                    reconstruction_loss(&enc, &m, &samples).unwrap().0
                };
                fd.push((eval(h) - eval(-h)) / (2.0 * h));
            }
            let an = grad.blocks()[b];
            let diff: f64 = an
                .iter()
                .zip(&fd)
                .map(|(a, f)| (a - f) * (a - f))
                .sum::<f64>()
                .sqrt();
            let base: f64 = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
            assert!(
                diff <= 1e-4 * base.max(1e-8),
                "block {b}: diff {diff:e} base {base:e}"
            );
        }
    }

    proptest! {
        #[test]
        fn assembly_is_linear(
            u in prop::collection::vec(-2.0f64..2.0, 4),
            v in prop::collection::vec(-2.0f64..2.0, 4),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let pool = small_pool(5, 4, 6, 3);
            let mix: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = assemble_prompt(&pool, &mix).unwrap();
            let mut rhs = assemble_prompt(&pool, &u).unwrap().scale(alpha);
            rhs.axpy(beta, &assemble_prompt(&pool, &v).unwrap());
            prop_assert!(lhs.sub(&rhs).max_abs() <= 1e-12);
        }

        #[test]
        fn weights_scale_invariant(q in prop::collection::vec(-3.0f64..3.0, 8), c in 0.01f64..100.0) {
            let pool = small_pool(9, 4, 8, 2);
            let scaled: Vec<f64> = q.iter().map(|x| c * x).collect();
            let w1 = compute_weights(&pool, &q);
            let w2 = compute_weights(&pool, &scaled);
            for (a, b) in w1.iter().zip(&w2) {
                prop_assert!((a - b).abs() <= 1e-12);
                prop_assert!((-1.0..=1.0).contains(a));
            }
        }

        #[test]
        fn reconstruction_nonnegative(seed in 0u64..50) {
            let (enc, _, samples) = tiny_setup();
            let pc = PoolConfig { pool_size: 3, prompt_length: 2, init_std: 1.0 };
            let module = PromptModule::new(PromptLayout::ModalitySpecific, 8, &pc, &mut SeededRng::new(seed)).unwrap();
            let (v, _) = reconstruction_loss(&enc, &module, &samples).unwrap();
            prop_assert!(v >= 0.0);
        }
    }
}
