//! Step-slot decoder: `K` learnable queries attend to a video through a stack
//! of pre-normalization transformer decoder layers and come out as `K`
//! ordered slot vectors.
//!
//! Per layer, with `h` the slot stream:
//!
//! ```text
//! h += Drop(SelfAttn(LN1(h)))
//! h += Drop(CrossAttn(LN2(h), keys = v + PE, values = v))
//! h += Drop(FF(LN3(h)))
//! ```
//!
//! followed by a final affine layer norm. Queries carry no positional
//! encoding.

pub mod autodiff;
mod checkpoint;

pub use autodiff::{Gradients, Tape, Var};
pub use checkpoint::{encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{cosine_matrix, Matrix};
use crate::types::{EmbeddingSequence, SequenceKind};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub num_slots: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_multiplier: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        Self {
            dim: 32,
            num_slots: 8,
            num_layers: 2,
            num_heads: 4,
            ff_multiplier: 4,
            dropout_rate: 0.1,
        }
    }
}

impl ModelConfig {
    /// Full-size decoder: 6 layers, 32 slots.
    pub fn full_scale(dim: usize) -> Self {
        Self {
            dim,
            num_slots: 32,
            num_layers: 6,
            num_heads: 8,
            ff_multiplier: 4,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim == 0 || self.num_heads == 0 || !self.dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "dim {} must be a positive multiple of num_heads {}",
                self.dim, self.num_heads
            ));
        }
        if !self.dim.is_multiple_of(2) {
            return bad(format!("dim {} must be even for positional encoding", self.dim));
        }
        if self.num_slots == 0 || self.ff_multiplier == 0 {
            return bad("num_slots and ff_multiplier must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    fn ff_dim(&self) -> usize {
        self.dim * self.ff_multiplier
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Normal,
    Zero,
    One,
}

#[derive(Clone, Copy)]
enum Shape {
    DimDim,
    DimFf,
    FfDim,
    RowDim,
    RowFf,
}

// order within one decoder layer
const LAYER_TENSORS: [(&str, Shape, Init); 26] = [
    ("ln1.gain", Shape::RowDim, Init::One),
    ("ln1.bias", Shape::RowDim, Init::Zero),
    ("self_attn.wq", Shape::DimDim, Init::Normal),
    ("self_attn.bq", Shape::RowDim, Init::Zero),
    ("self_attn.wk", Shape::DimDim, Init::Normal),
    ("self_attn.bk", Shape::RowDim, Init::Zero),
    ("self_attn.wv", Shape::DimDim, Init::Normal),
    ("self_attn.bv", Shape::RowDim, Init::Zero),
    ("self_attn.wo", Shape::DimDim, Init::Normal),
    ("self_attn.bo", Shape::RowDim, Init::Zero),
    ("ln2.gain", Shape::RowDim, Init::One),
    ("ln2.bias", Shape::RowDim, Init::Zero),
    ("cross_attn.wq", Shape::DimDim, Init::Normal),
    ("cross_attn.bq", Shape::RowDim, Init::Zero),
    ("cross_attn.wk", Shape::DimDim, Init::Normal),
    ("cross_attn.bk", Shape::RowDim, Init::Zero),
    ("cross_attn.wv", Shape::DimDim, Init::Normal),
    ("cross_attn.bv", Shape::RowDim, Init::Zero),
    ("cross_attn.wo", Shape::DimDim, Init::Normal),
    ("cross_attn.bo", Shape::RowDim, Init::Zero),
    ("ln3.gain", Shape::RowDim, Init::One),
    ("ln3.bias", Shape::RowDim, Init::Zero),
    ("ff.w1", Shape::DimFf, Init::Normal),
    ("ff.b1", Shape::RowFf, Init::Zero),
    ("ff.w2", Shape::FfDim, Init::Normal),
    ("ff.b2", Shape::RowDim, Init::Zero),
];
const PER_LAYER: usize = LAYER_TENSORS.len();
const LN1: usize = 0;
const SELF_ATTN: usize = 2;
const LN2: usize = 10;
const CROSS_ATTN: usize = 12;
const LN3: usize = 20;
const FF: usize = 22;

/// Name, shape and initializer of every tensor in storage order.
fn layout(cfg: &ModelConfig) -> Vec<(String, (usize, usize), Init)> {
    let (d, f) = (cfg.dim, cfg.ff_dim());
    let mut out = vec![("queries".to_string(), (cfg.num_slots, d), Init::Normal)];
    for l in 0..cfg.num_layers {
        for (name, shape, init) in LAYER_TENSORS {
            let shape = match shape {
                Shape::DimDim => (d, d),
                Shape::DimFf => (d, f),
                Shape::FfDim => (f, d),
                Shape::RowDim => (1, d),
                Shape::RowFf => (1, f),
            };
            out.push((format!("layers.{l}.{name}"), shape, init));
        }
    }
    out.push(("final_ln.gain".into(), (1, d), Init::One));
    out.push(("final_ln.bias".into(), (1, d), Init::Zero));
    out
}

/// All decoder weights, stored as an ordered list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Matrix>,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = layout(&config)
            .into_iter()
            .map(|(_, (r, c), init)| match init {
                Init::Normal => Matrix::from_fn(r, c, |_, _| normal.sample(rng)),
                Init::Zero => Matrix::zeros(r, c),
                Init::One => Matrix::filled(r, c, 1.0),
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// Rebuild from tensors in storage order; shapes are checked.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let layout = layout(&config);
        if layout.len() != tensors.len() {
            return Err(Error::InvalidData(format!(
                "expected {} tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((_, shape, _), t) in layout.iter().zip(&tensors) {
            if *shape != t.shape() {
                return Err(Error::ShapeMismatch {
                    expected: *shape,
                    found: t.shape(),
                });
            }
            if let Some((row, col)) = t.find_non_finite() {
                return Err(Error::NonFinite { row, col });
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn names(&self) -> Vec<String> {
        layout(&self.config).into_iter().map(|(n, _, _)| n).collect()
    }

    pub fn queries(&self) -> &Matrix {
        &self.tensors[0]
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Put every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Slots for `video` with dropout disabled.
    pub fn forward(&self, video: &EmbeddingSequence) -> Result<EmbeddingSequence> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let slots = self.forward_on_tape(&mut tape, &bound, video, None::<&mut rand::rngs::ThreadRng>)?;
        EmbeddingSequence::new(tape.value(slots).clone(), SequenceKind::Slots)
    }

    /// Record the decoder on `tape`. Dropout is active iff `dropout_rng` is
    /// given. Returns the `K×d` slot node.
    pub fn forward_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        video: &EmbeddingSequence,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<Var> {
        let cfg = &self.config;
        if video.dim() != cfg.dim {
            return Err(Error::DimMismatch {
                left: cfg.dim,
                right: video.dim(),
            });
        }
        let p = &bound.vars;
        let pe = sinusoidal_pe(video.len(), cfg.dim)?;
        let keys_in = video.data().zip_map(&pe, |a, b| a + b);
        let memory_keys = tape.leaf(keys_in);
        let memory_values = tape.leaf(video.data().clone());

        let mut h = p[0];
        for l in 0..cfg.num_layers {
            let w = &p[1 + l * PER_LAYER..1 + (l + 1) * PER_LAYER];

            let x = affine_norm(tape, h, w[LN1], w[LN1 + 1])?;
            let a = attention(tape, x, x, x, &w[SELF_ATTN..SELF_ATTN + 8], cfg.num_heads)?;
            let a = dropout(tape, a, cfg.dropout_rate, dropout_rng.as_deref_mut())?;
            h = tape.add(h, a)?;

            let x = affine_norm(tape, h, w[LN2], w[LN2 + 1])?;
            let a = attention(
                tape,
                x,
                memory_keys,
                memory_values,
                &w[CROSS_ATTN..CROSS_ATTN + 8],
                cfg.num_heads,
            )?;
            let a = dropout(tape, a, cfg.dropout_rate, dropout_rng.as_deref_mut())?;
            h = tape.add(h, a)?;

            let x = affine_norm(tape, h, w[LN3], w[LN3 + 1])?;
            let f = tape.matmul(x, w[FF])?;
            let f = tape.add_row(f, w[FF + 1])?;
            let f = tape.gelu(f);
            let f = tape.matmul(f, w[FF + 2])?;
            let f = tape.add_row(f, w[FF + 3])?;
            let f = dropout(tape, f, cfg.dropout_rate, dropout_rng.as_deref_mut())?;
            h = tape.add(h, f)?;

            if tape.value(h).find_non_finite().is_some() {
                return Err(Error::Numerical(format!(
                    "non-finite activation after decoder layer {l}"
                )));
            }
        }
        let n = p.len();
        let out = affine_norm(tape, h, p[n - 2], p[n - 1])?;
        if tape.value(out).find_non_finite().is_some() {
            return Err(Error::Numerical("non-finite decoder output".into()));
        }
        Ok(out)
    }

    /// Gradients for every tensor, in storage order.
    pub fn gradients(&self, grads: &mut Gradients, bound: &BoundParams) -> Vec<Matrix> {
        bound.vars.iter().map(|&v| grads.take(v)).collect()
    }
}

/// Parameter leaves on a tape, in storage order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn affine_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = tape.layer_norm(x);
    let g = tape.mul_row(n, gain)?;
    tape.add_row(g, bias)
}

/// Multi-head attention; `w` = [wq, bq, wk, bk, wv, bv, wo, bo].
fn attention(tape: &mut Tape, q_in: Var, k_in: Var, v_in: Var, w: &[Var], heads: usize) -> Result<Var> {
    let proj = |tape: &mut Tape, x: Var, wi: Var, bi: Var| -> Result<Var> {
        let y = tape.matmul(x, wi)?;
        tape.add_row(y, bi)
    };
    let q = proj(tape, q_in, w[0], w[1])?;
    let k = proj(tape, k_in, w[2], w[3])?;
    let v = proj(tape, v_in, w[4], w[5])?;
    let d = tape.shape(q).1;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let qh = tape.slice_cols(q, hd * dh, dh)?;
        let kh = tape.slice_cols(k, hd * dh, dh)?;
        let vh = tape.slice_cols(v, hd * dh, dh)?;
        let scores = tape.matmul_t(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores);
        outs.push(tape.matmul(attn, vh)?);
    }
    let cat = if heads == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    proj(tape, cat, w[6], w[7])
}

/// Inverted dropout; identity when `rng` is absent or the rate is zero.
fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    let Some(rng) = rng else {
        return Ok(x);
    };
    if rate == 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.shape(x);
    let keep = 1.0 / (1.0 - rate);
    let mask = Matrix::from_fn(r, c, |_, _| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    tape.mul_const(x, mask)
}

/// Sine/cosine position table: `PE(pos, 2i) = sin(pos / 10000^(2i/d))`,
/// `PE(pos, 2i+1) = cos(pos / 10000^(2i/d))`.
pub fn sinusoidal_pe(length: usize, dim: usize) -> Result<Matrix> {
    if !dim.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "positional encoding needs an even dim, got {dim}"
        )));
    }
    Ok(Matrix::from_fn(length, dim, |pos, j| {
        let i2 = (j - j % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(i2 / dim as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

/// Soft assignment of every frame to the slots: row `i` is the softmax over
/// slots of `cos(v_i, s_k) / temperature`.
pub fn attention_map(
    video: &EmbeddingSequence,
    slots: &EmbeddingSequence,
    temperature: f64,
) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let cos = cosine_matrix(video.data(), slots.data())?;
    Ok(autodiff::softmax_rows(&cos.scale(1.0 / temperature)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_video(n: usize, d: usize, seed: u64) -> EmbeddingSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Matrix::from_fn(n, d, |_, _| rng.random::<f64>() - 0.5);
        EmbeddingSequence::new(m, SequenceKind::Video).unwrap()
    }

    #[test]
    fn pe_closed_form() {
        let pe = sinusoidal_pe(3, 6).unwrap();
        for j in 0..6 {
            assert_eq!(pe[(0, j)], if j % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((pe[(1, 0)] - 0.841471).abs() < 1e-6);
        assert!(pe.as_slice().iter().all(|x| (-1.0..=1.0).contains(x)));
        assert!(sinusoidal_pe(2, 5).is_err());
    }

    #[test]
    fn output_shape_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = ModelParams::init(ModelConfig::default(), &mut rng).unwrap();
        for n in [1, 7, 200] {
            let s = params.forward(&random_video(n, 32, n as u64)).unwrap();
            assert_eq!((s.len(), s.dim()), (8, 32));
            assert_eq!(s.kind(), SequenceKind::Slots);
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ModelParams::init(ModelConfig::default(), &mut rng).unwrap();
        let v = random_video(9, 32, 3);
        assert_eq!(params.forward(&v).unwrap(), params.forward(&v).unwrap());
    }

    #[test]
    fn frame_order_matters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = ModelParams::init(ModelConfig::default(), &mut rng).unwrap();
        let v = random_video(12, 32, 5);
        let rev: Vec<usize> = (0..12).rev().collect();
        let permuted = v.select(&rev).unwrap();
        let a = params.forward(&v).unwrap();
        let b = params.forward(&permuted).unwrap();
        let diff = a
            .data()
            .as_slice()
            .iter()
            .zip(b.data().as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-6, "max diff {diff}");
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = ModelParams::init(ModelConfig::default(), &mut rng).unwrap();
        assert!(matches!(
            params.forward(&random_video(4, 16, 0)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        c.num_heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        assert!(ModelConfig::full_scale(512).validate().is_ok());
    }

    #[test]
    fn attention_map_rows() {
        let v = EmbeddingSequence::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]], SequenceKind::Video).unwrap();
        let s = EmbeddingSequence::from_rows(&[&[1.0, 1.0], &[1.0, 1.0], &[-1.0, 1.0]], SequenceKind::Slots)
            .unwrap();
        let a = attention_map(&v, &s, 0.03).unwrap();
        for row in a.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // equidistant frame → uniform row
        let s2 = EmbeddingSequence::from_rows(&[&[0.0, 1.0], &[0.0, -1.0]], SequenceKind::Slots).unwrap();
        let a2 = attention_map(&v, &s2, 0.03).unwrap();
        assert!((a2[(0, 0)] - 0.5).abs() < 1e-12);
        let s3 = EmbeddingSequence::from_rows(&[&[1.0, 0.0], &[1.0, 1.0], &[0.0, 1.0]], SequenceKind::Slots)
            .unwrap();
        let sharp = attention_map(&v, &s3, 1e-4).unwrap();
        assert!((sharp[(0, 0)] - 1.0).abs() < 1e-9);
        assert!((sharp[(1, 2)] - 1.0).abs() < 1e-9);
        assert!(attention_map(&v, &s, 0.0).is_err());
    }
}
