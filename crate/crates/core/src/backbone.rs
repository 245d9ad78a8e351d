//! A small frozen multi-modal transformer.
//!
//! The token layout is `[cls_text, text tokens, cls_image, image tokens]`.
//! Every layer is pre-norm: self-attention followed by a GELU feed-forward
//! block, each with a residual connection, and a final layer norm on the
//! way out. Prompts enter prefix-style: at each configured layer the prompt
//! tokens are appended to the key/value stream only, so they shape what the
//! real tokens attend to without occupying output positions.
//!
//! Weights are drawn once from the backbone seed and never change. The only
//! gradient the encoder produces is the one with respect to prompt tokens.

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::numerics::{seeded_normal, Matrix, SeededRng};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub image_tokens: usize,
    pub text_tokens: usize,
    /// Width of the raw per-token modality features.
    pub input_dim: usize,
    pub ffn_dim: usize,
    /// Layers whose key/value stream receives the prompt tokens.
    pub prompt_layers: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            num_layers: 4,
            num_heads: 4,
            image_tokens: 8,
            text_tokens: 8,
            input_dim: 32,
            ffn_dim: 128,
            prompt_layers: vec![0, 1, 2, 3],
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::config_err;
        if self.embed_dim == 0
            || self.num_heads == 0
            || !self.embed_dim.is_multiple_of(self.num_heads)
        {
            return config_err(
                "encoder.embed_dim",
                format!(
                    "embed_dim {} must be a positive multiple of num_heads {}",
                    self.embed_dim, self.num_heads
                ),
            );
        }
        if self.num_layers == 0 {
            return config_err("encoder.num_layers", "need at least one layer");
        }
        if self.image_tokens == 0 {
            return config_err("encoder.image_tokens", "need at least one image token");
        }
        if self.text_tokens == 0 {
            return config_err("encoder.text_tokens", "need at least one text token");
        }
        if self.input_dim == 0 {
            return config_err("encoder.input_dim", "must be positive");
        }
        if self.ffn_dim == 0 {
            return config_err("encoder.ffn_dim", "must be positive");
        }
        if let Some(&bad) = self.prompt_layers.iter().find(|&&l| l >= self.num_layers) {
            return config_err(
                "encoder.prompt_layers",
                format!("layer {bad} is outside 0..{}", self.num_layers),
            );
        }
        let mut sorted = self.prompt_layers.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.prompt_layers.len() {
            return config_err("encoder.prompt_layers", "duplicate layer index");
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        2 + self.text_tokens + self.image_tokens
    }

    pub fn text_cls_pos(&self) -> usize {
        0
    }

    pub fn image_cls_pos(&self) -> usize {
        1 + self.text_tokens
    }
}

/// Paired per-token modality features and the presence mask. An absent
/// modality is carried as an all-zero block of the usual shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalInput {
    pub image: Matrix,
    pub text: Matrix,
    pub has_image: bool,
    pub has_text: bool,
}

impl ModalInput {
    pub fn complete(image: Matrix, text: Matrix) -> Self {
        ModalInput {
            image,
            text,
            has_image: true,
            has_text: true,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.has_image && self.has_text
    }

    /// Replaces the text block with the dummy input.
    pub fn drop_text(&mut self) {
        self.text = Matrix::zeros(self.text.rows(), self.text.cols());
        self.has_text = false;
    }

    /// Replaces the image block with the dummy input.
    pub fn drop_image(&mut self) {
        self.image = Matrix::zeros(self.image.rows(), self.image.cols());
        self.has_image = false;
    }

    pub fn validate(&self, cfg: &EncoderConfig) -> Result<()> {
        if self.image.shape() != (cfg.image_tokens, cfg.input_dim) {
            return input_err(format!(
                "image block is {:?}, expected ({}, {})",
                self.image.shape(),
                cfg.image_tokens,
                cfg.input_dim
            ));
        }
        if self.text.shape() != (cfg.text_tokens, cfg.input_dim) {
            return input_err(format!(
                "text block is {:?}, expected ({}, {})",
                self.text.shape(),
                cfg.text_tokens,
                cfg.input_dim
            ));
        }
        if !self.has_image && self.image.max_abs() != 0.0 {
            return input_err("image flagged absent but block is not the zero dummy");
        }
        if !self.has_text && self.text.max_abs() != 0.0 {
            return input_err("text flagged absent but block is not the zero dummy");
        }
        if !self.image.is_finite() || !self.text.is_finite() {
            return input_err("modality features contain non-finite values");
        }
        Ok(())
    }
}

/// Embedded token sequence fed to the transformer layers.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence(pub Matrix);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }
}

/// Assembled text and image prompts, each `D × N_p` (one column per token).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub text: Matrix,
    pub image: Matrix,
}

impl PromptPair {
    pub fn zeros(dim: usize, len: usize) -> Self {
        PromptPair {
            text: Matrix::zeros(dim, len),
            image: Matrix::zeros(dim, len),
        }
    }

    pub fn prompt_len(&self) -> usize {
        self.text.cols()
    }

    /// Prompt tokens as rows: text prompt first, then image prompt.
    fn token_rows(&self) -> Matrix {
        self.text.transpose().vstack(&self.image.transpose())
    }
}

/// Outputs of one encoder pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// Output at the text class-token position.
    pub q_text: Vec<f64>,
    /// Output at the image class-token position.
    pub q_image: Vec<f64>,
    /// Mean of the two class-token outputs.
    pub joint: Vec<f64>,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    prompt_rows: usize,
    z: Matrix,
    rstd1: Vec<f64>,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    y: Matrix,
    rstd2: Vec<f64>,
    hpre: Matrix,
}

/// Intermediate values of a forward pass, consumed by [`FrozenEncoder::backward`].
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    layers: Vec<LayerTrace>,
    final_norm: Matrix,
    final_rstd: Vec<f64>,
    prompt_len: Option<usize>,
}

/// The frozen backbone. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    cfg: EncoderConfig,
    text_proj: Matrix,
    image_proj: Matrix,
    cls_text: Vec<f64>,
    cls_image: Vec<f64>,
    type_text: Vec<f64>,
    type_image: Vec<f64>,
    positions: Matrix,
    layers: Vec<Layer>,
}

fn normal_vec(rng: &mut SeededRng, n: usize, std: f64) -> Result<Vec<f64>> {
    Ok(seeded_normal(rng, 1, n, std)?.into_vec())
}

impl FrozenEncoder {
    pub fn new(cfg: &EncoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let f = cfg.ffn_dim;
        let mut rng = SeededRng::new(seed);
        let in_std = 1.0 / (cfg.input_dim as f64).sqrt();
        let d_std = 1.0 / (d as f64).sqrt();
        let f_std = 1.0 / (f as f64).sqrt();
        let text_proj = seeded_normal(&mut rng, cfg.input_dim, d, in_std)?;
        let image_proj = seeded_normal(&mut rng, cfg.input_dim, d, in_std)?;
        let cls_text = normal_vec(&mut rng, d, 1.0)?;
        let cls_image = normal_vec(&mut rng, d, 1.0)?;
        let type_text = normal_vec(&mut rng, d, 0.5)?;
        let type_image = normal_vec(&mut rng, d, 0.5)?;
        let positions = seeded_normal(&mut rng, cfg.seq_len(), d, 0.1)?;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for _ in 0..cfg.num_layers {
            layers.push(Layer {
                wq: seeded_normal(&mut rng, d, d, d_std)?,
                wk: seeded_normal(&mut rng, d, d, d_std)?,
                wv: seeded_normal(&mut rng, d, d, d_std)?,
                wo: seeded_normal(&mut rng, d, d, d_std)?,
                w1: seeded_normal(&mut rng, d, f, d_std)?,
                b1: normal_vec(&mut rng, f, 0.1)?,
                w2: seeded_normal(&mut rng, f, d, f_std)?,
                b2: normal_vec(&mut rng, d, 0.1)?,
            });
        }
        Ok(FrozenEncoder {
            cfg: cfg.clone(),
            text_proj,
            image_proj,
            cls_text,
            cls_image,
            type_text,
            type_image,
            positions,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    /// Embeds the inputs into `[cls_t, X^t, cls_v, X^v]` with positional
    /// and modality-type embeddings. Absent modalities contribute the
    /// embedding of their zero dummy, so the length is always `2 + T + V`.
    pub fn build_sequence(&self, input: &ModalInput) -> Result<TokenSequence> {
        input.validate(&self.cfg)?;
        let d = self.cfg.embed_dim;
        let t = self.cfg.text_tokens;
        let mut seq = Matrix::zeros(self.cfg.seq_len(), d);
        let text = input.text.matmul(&self.text_proj);
        let image = input.image.matmul(&self.image_proj);
        let img_cls = self.cfg.image_cls_pos();
        for r in 0..self.cfg.seq_len() {
            let (base, ty): (&[f64], &[f64]) = if r == 0 {
                (&self.cls_text, &self.type_text)
            } else if r <= t {
                (text.row(r - 1), &self.type_text)
            } else if r == img_cls {
                (&self.cls_image, &self.type_image)
            } else {
                (image.row(r - img_cls - 1), &self.type_image)
            };
            let pos = self.positions.row(r);
            for (c, out) in seq.row_mut(r).iter_mut().enumerate() {
                *out = base[c] + pos[c] + ty[c];
            }
        }
        Ok(TokenSequence(seq))
    }

    pub fn encode(
        &self,
        seq: &TokenSequence,
        prompts: Option<&PromptPair>,
    ) -> Result<EncoderOutput> {
        self.encode_traced(seq, prompts).map(|(out, _)| out)
    }

    /// Prompt-free pass; returns `(q_text, q_image)`.
    pub fn queries(&self, input: &ModalInput) -> Result<(Vec<f64>, Vec<f64>)> {
        let seq = self.build_sequence(input)?;
        let out = self.encode(&seq, None)?;
        Ok((out.q_text, out.q_image))
    }

    pub fn encode_traced(
        &self,
        seq: &TokenSequence,
        prompts: Option<&PromptPair>,
    ) -> Result<(EncoderOutput, EncoderTrace)> {
        let d = self.cfg.embed_dim;
        if seq.0.shape() != (self.cfg.seq_len(), d) {
            return input_err(format!(
                "token sequence is {:?}, expected ({}, {d})",
                seq.0.shape(),
                self.cfg.seq_len()
            ));
        }
        let prompt_rows = match prompts {
            Some(p) => {
                if p.text.rows() != d || p.image.rows() != d {
                    return input_err(format!("prompt width must be {d}"));
                }
                if p.text.cols() != p.image.cols() {
                    return input_err("text and image prompts differ in length");
                }
                if !p.text.is_finite() || !p.image.is_finite() {
                    return input_err("prompts contain non-finite values");
                }
                Some(p.token_rows())
            }
            None => None,
        };
        let mut x = seq.0.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter().enumerate() {
            let p = match &prompt_rows {
                Some(p) if self.cfg.prompt_layers.contains(&idx) => Some(p),
                _ => None,
            };
            let (next, trace) = self.layer_forward(layer, &x, p);
            x = next;
            traces.push(trace);
        }
        let (out, final_rstd) = layer_norm(&x);
        let tc = self.cfg.text_cls_pos();
        let ic = self.cfg.image_cls_pos();
        let q_text = out.row(tc).to_vec();
        let q_image = out.row(ic).to_vec();
        let joint = q_text
            .iter()
            .zip(&q_image)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let trace = EncoderTrace {
            layers: traces,
            final_norm: out.clone(),
            final_rstd,
            prompt_len: prompts.map(|p| p.prompt_len()),
        };
        Ok((
            EncoderOutput {
                q_text,
                q_image,
                joint,
                tokens: TokenSequence(out),
            },
            trace,
        ))
    }

    fn layer_forward(
        &self,
        layer: &Layer,
        x: &Matrix,
        prompt: Option<&Matrix>,
    ) -> (Matrix, LayerTrace) {
        let d = self.cfg.embed_dim;
        let heads = self.cfg.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let n = x.rows();

        let (z, rstd1) = layer_norm(x);
        let q = z.matmul(&layer.wq);
        let (kv_in, m) = match prompt {
            Some(p) => (p.vstack(&z), p.rows()),
            None => (z.clone(), 0),
        };
        let k = kv_in.matmul(&layer.wk);
        let v = kv_in.matmul(&layer.wv);
        let total = m + n;

        let mut o = Matrix::zeros(n, d);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let mut a = Matrix::zeros(n, total);
            for i in 0..n {
                let qi = &q.row(i)[cols.clone()];
                let row = a.row_mut(i);
                for (j, s) in row.iter_mut().enumerate() {
                    *s = scale * crate::numerics::dot(qi, &k.row(j)[cols.clone()]);
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for s in row.iter_mut() {
                    *s /= sum;
                }
            }
            for i in 0..n {
                for j in 0..total {
                    let w = a[(i, j)];
                    let vj = &v.row(j)[cols.clone()];
                    let oi = &mut o.row_mut(i)[cols.clone()];
                    for (dst, &val) in oi.iter_mut().zip(vj) {
                        *dst += w * val;
                    }
                }
            }
            probs.push(a);
        }
        let x1 = x.add(&o.matmul(&layer.wo));

        let (y, rstd2) = layer_norm(&x1);
        let mut hpre = y.matmul(&layer.w1);
        for r in 0..n {
            for (h, b) in hpre.row_mut(r).iter_mut().zip(&layer.b1) {
                *h += b;
            }
        }
        let hact = map(&hpre, gelu);
        let mut x2 = x1;
        let f = hact.matmul(&layer.w2);
        for r in 0..n {
            for ((dst, &fv), b) in x2.row_mut(r).iter_mut().zip(f.row(r)).zip(&layer.b2) {
                *dst += fv + b;
            }
        }
        (
            x2,
            LayerTrace {
                prompt_rows: m,
                z,
                rstd1,
                q,
                k,
                v,
                probs,
                y,
                rstd2,
                hpre,
            },
        )
    }

    /// Back-propagates gradients on the two class-token outputs to the
    /// prompt tokens of the traced pass. Returns zero-width prompts when the
    /// pass had none.
    pub fn backward(
        &self,
        trace: &EncoderTrace,
        d_q_text: &[f64],
        d_q_image: &[f64],
    ) -> PromptPair {
        let d = self.cfg.embed_dim;
        let np = match trace.prompt_len {
            Some(np) if np > 0 => np,
            _ => return PromptPair::zeros(d, trace.prompt_len.unwrap_or(0)),
        };
        let n = self.cfg.seq_len();
        let mut d_out = Matrix::zeros(n, d);
        d_out
            .row_mut(self.cfg.text_cls_pos())
            .copy_from_slice(d_q_text);
        d_out
            .row_mut(self.cfg.image_cls_pos())
            .copy_from_slice(d_q_image);
        let mut dx = layer_norm_backward(&trace.final_norm, &trace.final_rstd, &d_out);

        let lowest = self.cfg.prompt_layers.iter().copied().min().unwrap_or(0);
        let mut d_prompt = Matrix::zeros(2 * np, d);
        for idx in (lowest..self.layers.len()).rev() {
            let (dx_prev, dp) = self.layer_backward(&self.layers[idx], &trace.layers[idx], &dx);
            if let Some(dp) = dp {
                d_prompt.add_assign(&dp);
            }
            dx = dx_prev;
        }
        PromptPair {
            text: d_prompt.row_range(0, np).transpose(),
            image: d_prompt.row_range(np, 2 * np).transpose(),
        }
    }

    fn layer_backward(
        &self,
        layer: &Layer,
        t: &LayerTrace,
        dx2: &Matrix,
    ) -> (Matrix, Option<Matrix>) {
        let d = self.cfg.embed_dim;
        let heads = self.cfg.num_heads;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let n = dx2.rows();
        let m = t.prompt_rows;
        let total = m + n;

        // feed-forward block
        let dhact = dx2.matmul_t(&layer.w2);
        let mut dhpre = dhact;
        for (g, &h) in dhpre.as_mut_slice().iter_mut().zip(t.hpre.as_slice()) {
            *g *= gelu_grad(h);
        }
        let dy = dhpre.matmul_t(&layer.w1);
        let mut dx1 = dx2.clone();
        dx1.add_assign(&layer_norm_backward(&t.y, &t.rstd2, &dy));

        // attention block
        let d_o = dx1.matmul_t(&layer.wo);
        let mut dq = Matrix::zeros(n, d);
        let mut dk = Matrix::zeros(total, d);
        let mut dv = Matrix::zeros(total, d);
        let mut da = vec![0.0; total];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let a = &t.probs[h];
            for i in 0..n {
                let doi = &d_o.row(i)[cols.clone()];
                let ai = a.row(i);
                for j in 0..total {
                    da[j] = crate::numerics::dot(doi, &t.v.row(j)[cols.clone()]);
                    let w = ai[j];
                    for (dst, &g) in dv.row_mut(j)[cols.clone()].iter_mut().zip(doi) {
                        *dst += w * g;
                    }
                }
                let inner: f64 = ai.iter().zip(&da).map(|(p, g)| p * g).sum();
                let qi = &t.q.row(i)[cols.clone()];
                for j in 0..total {
                    let ds = ai[j] * (da[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &t.k.row(j)[cols.clone()];
                    for (dst, &kv) in dq.row_mut(i)[cols.clone()].iter_mut().zip(kj) {
                        *dst += ds * kv;
                    }
                    for (dst, &qv) in dk.row_mut(j)[cols.clone()].iter_mut().zip(qi) {
                        *dst += ds * qv;
                    }
                }
            }
        }
        let mut dkv = dk.matmul_t(&layer.wk);
        dkv.add_assign(&dv.matmul_t(&layer.wv));
        let mut dz = dq.matmul_t(&layer.wq);
        dz.add_assign(&dkv.row_range(m, total));
        let mut dx = dx1;
        dx.add_assign(&layer_norm_backward(&t.z, &t.rstd1, &dz));
        let dp = if m > 0 {
            Some(dkv.row_range(0, m))
        } else {
            None
        };
        (dx, dp)
    }
}

/// Row-wise layer norm without affine parameters; returns the normalized
/// rows and each row's reciprocal standard deviation.
fn layer_norm(x: &Matrix) -> (Matrix, Vec<f64>) {
    let cols = x.cols() as f64;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (o, v) in out.row_mut(r).iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
        rstd.push(inv);
    }
    (out, rstd)
}

fn layer_norm_backward(normed: &Matrix, rstd: &[f64], grad: &Matrix) -> Matrix {
    let cols = normed.cols() as f64;
    let mut out = Matrix::zeros(normed.rows(), normed.cols());
    for r in 0..normed.rows() {
        let y = normed.row(r);
        let g = grad.row(r);
        let mean_g = g.iter().sum::<f64>() / cols;
        let mean_gy = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / cols;
        for ((o, &gv), &yv) in out.row_mut(r).iter_mut().zip(g).zip(y) {
            *o = rstd[r] * (gv - mean_g - yv * mean_gy);
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn map(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let mut out = m.clone();
    for v in out.as_mut_slice() {
        *v = f(*v);
    }
    out
}
