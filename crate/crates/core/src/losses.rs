//! Training objectives.
//!
//! Each loss has a tape form (used for gradients) and a plain form that
//! evaluates the same tape expression and returns the value. With
//! `f(x, z) = exp(cos(x, z) / γ)`:
//!
//! * sequence loss: Info-NCE over the pairs of a one-to-one drop-aware
//!   alignment between slots and phrases, in both directions, each direction
//!   averaged over its matched anchors;
//! * global loss: MIL-NCE over a batch, where every phrase of the slot's own
//!   video is a positive;
//! * diversity: mean off-diagonal cosine between slots;
//! * smoothness: MIL-NCE over sampled rows of the frame-to-slot attention,
//!   with temporal neighbours as positives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::{drop_dtw, percentile_drop_cost, CostSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Tape, Var};
use crate::types::{Correspondence, EmbeddingSequence, MatchMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub gamma_contrastive: f64,
    pub gamma_attention: f64,
    pub alpha: f64,
    pub beta: f64,
    pub neighborhood: usize,
    pub sample_count: usize,
    /// Ablation switch: when false the sequence term is a constant zero.
    pub use_seq: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            gamma_contrastive: 0.03,
            gamma_attention: 0.03,
            alpha: 0.3,
            beta: 0.02,
            neighborhood: 3,
            sample_count: 64,
            use_seq: true,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("gamma_contrastive", self.gamma_contrastive),
            ("gamma_attention", self.gamma_attention),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.neighborhood == 0 || self.sample_count == 0 {
            return Err(Error::InvalidArgument(
                "neighborhood and sample_count must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub seq: f64,
    pub glob: f64,
    pub div: f64,
    pub smooth: f64,
    pub total: f64,
    pub matched_pairs: usize,
}

/// `seq + glob + α·div + β·smooth`.
pub fn total_loss(seq: f64, glob: f64, div: f64, smooth: f64, alpha: f64, beta: f64) -> Result<LossBreakdown> {
    for (name, v) in [("seq", seq), ("glob", glob), ("div", div), ("smooth", smooth)] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite {name} loss: {v}")));
        }
    }
    Ok(LossBreakdown {
        seq,
        glob,
        div,
        smooth,
        total: seq + glob + alpha * div + beta * smooth,
        matched_pairs: 0,
    })
}

/// Tape version of [`total_loss`]; the value agrees bit for bit.
pub fn total_on_tape(tape: &mut Tape, seq: Var, glob: Var, div: Var, smooth: Var, alpha: f64, beta: f64) -> Result<Var> {
    let t = tape.add(seq, glob)?;
    let d = tape.scale(div, alpha);
    let t = tape.add(t, d)?;
    let s = tape.scale(smooth, beta);
    tape.add(t, s)
}

fn zero(tape: &mut Tape) -> Var {
    tape.leaf(Matrix::scalar(0.0))
}

/// Σ over `(anchor, positive)` pairs of `−log softmax(logits[anchor])[positive]`.
fn nce_sum(tape: &mut Tape, logits: Var, pairs: &[(usize, usize)]) -> Result<Var> {
    let (r, c) = tape.shape(logits);
    let lse = tape.masked_logsumexp(logits, &vec![true; r * c])?;
    let mut terms = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let l = tape.pick(lse, i, 0)?;
        let p = tape.pick(logits, i, j)?;
        terms.push(tape.sub(l, p)?);
    }
    let stacked = tape.concat_rows(&terms)?;
    Ok(tape.sum(stacked))
}

/// Info-NCE of one anchor against `candidates`, positive at `positive`.
pub fn info_nce(anchor: &[f64], candidates: &EmbeddingSequence, positive: usize, gamma: f64) -> Result<f64> {
    if positive >= candidates.len() {
        return Err(Error::InvalidArgument(format!(
            "positive index {positive} out of {} candidates",
            candidates.len()
        )));
    }
    check_gamma(gamma)?;
    let mut tape = Tape::new();
    let a = tape.leaf(Matrix::from_vec(1, anchor.len(), anchor.to_vec())?);
    let c = tape.leaf(candidates.data().clone());
    check_dims(&tape, a, c)?;
    let cos = tape.cosine(a, c)?;
    let logits = tape.scale(cos, 1.0 / gamma);
    let l = nce_sum(&mut tape, logits, &[(0, positive)])?;
    Ok(tape.value(l)[(0, 0)])
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {gamma}")))
    }
}

fn check_dims(tape: &Tape, a: Var, b: Var) -> Result<()> {
    let (l, r) = (tape.shape(a).1, tape.shape(b).1);
    if l != r {
        return Err(Error::DimMismatch { left: l, right: r });
    }
    Ok(())
}

/// One-to-one alignment between slot rows and phrase columns with both drop
/// costs set to the `percentile` of the match costs.
pub fn seq_correspondence(slots: &Matrix, phrases: &Matrix, percentile: f64) -> Result<Correspondence> {
    let costs = crate::matrix::cosine_matrix(slots, phrases)?.map(|c| -c);
    let drop = percentile_drop_cost(&costs, percentile)?;
    drop_dtw(&CostSpec::symmetric(costs, drop), MatchMode::OneToOne)
}

/// Sequence loss for a fixed correspondence. The alignment is a constant
/// selector: no gradient flows through it.
pub fn seq_loss_with(
    tape: &mut Tape,
    slots: Var,
    phrases: Var,
    corr: &Correspondence,
    gamma: f64,
) -> Result<Var> {
    check_gamma(gamma)?;
    check_dims(tape, slots, phrases)?;
    let pairs = corr.pairs();
    if pairs.is_empty() {
        return Ok(zero(tape));
    }
    let n = pairs.len() as f64;
    let cos = tape.cosine(slots, phrases)?;
    let logits = tape.scale(cos, 1.0 / gamma);
    let fwd = nce_sum(tape, logits, &pairs)?;
    let fwd = tape.scale(fwd, 1.0 / n);

    let cos_t = tape.cosine(phrases, slots)?;
    let logits_t = tape.scale(cos_t, 1.0 / gamma);
    let flipped: Vec<(usize, usize)> = pairs.iter().map(|&(i, j)| (j, i)).collect();
    let bwd = nce_sum(tape, logits_t, &flipped)?;
    let bwd = tape.scale(bwd, 1.0 / n);
    tape.add(fwd, bwd)
}

/// Sequence loss on the tape; the correspondence comes from the current
/// slot values.
pub fn seq_loss_on_tape(
    tape: &mut Tape,
    slots: Var,
    phrases: Var,
    gamma: f64,
    percentile: f64,
) -> Result<(Var, Correspondence)> {
    check_dims(tape, slots, phrases)?;
    let corr = seq_correspondence(tape.value(slots), tape.value(phrases), percentile)?;
    if corr.num_matches() == 0 {
        log::debug!("sequence loss: every slot and phrase dropped");
    }
    let loss = seq_loss_with(tape, slots, phrases, &corr, gamma)?;
    Ok((loss, corr))
}

pub fn seq_loss(
    slots: &EmbeddingSequence,
    phrases: &EmbeddingSequence,
    gamma: f64,
    percentile: f64,
) -> Result<(f64, Correspondence)> {
    let mut tape = Tape::new();
    let s = tape.leaf(slots.data().clone());
    let p = tape.leaf(phrases.data().clone());
    let (l, corr) = seq_loss_on_tape(&mut tape, s, p, gamma, percentile)?;
    Ok((tape.value(l)[(0, 0)], corr))
}

/// `−log` of the mean over all slots in the batch of
/// `Σ_{own phrases} f / Σ_{all phrases} f`.
pub fn global_loss_on_tape(tape: &mut Tape, slots: &[Var], phrases: &[Var], gamma: f64) -> Result<Var> {
    if slots.is_empty() || slots.len() != phrases.len() {
        return Err(Error::InvalidArgument(format!(
            "global loss needs a non-empty batch with one phrase set per video ({} vs {})",
            slots.len(),
            phrases.len()
        )));
    }
    check_gamma(gamma)?;
    let s = tape.concat_rows(slots)?;
    let p = tape.concat_rows(phrases)?;
    check_dims(tape, s, p)?;
    let owner = |vars: &[Var], tape: &Tape| -> Vec<usize> {
        vars.iter()
            .enumerate()
            .flat_map(|(b, &v)| std::iter::repeat_n(b, tape.shape(v).0))
            .collect()
    };
    let slot_owner = owner(slots, tape);
    let phrase_owner = owner(phrases, tape);
    let cos = tape.cosine(s, p)?;
    let logits = tape.scale(cos, 1.0 / gamma);
    let (m, l) = tape.shape(logits);
    let all = tape.masked_logsumexp(logits, &vec![true; m * l])?;
    let own: Vec<bool> = slot_owner
        .iter()
        .flat_map(|&a| phrase_owner.iter().map(move |&b| a == b))
        .collect();
    let pos = tape.masked_logsumexp(logits, &own)?;
    let log_ratio = tape.sub(pos, all)?;
    let ratio = tape.exp(log_ratio);
    let mean = tape.mean(ratio);
    let log_mean = tape.ln(mean);
    Ok(tape.scale(log_mean, -1.0))
}

pub fn global_loss(slots: &[EmbeddingSequence], phrases: &[EmbeddingSequence], gamma: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let s: Vec<Var> = slots.iter().map(|x| tape.leaf(x.data().clone())).collect();
    let p: Vec<Var> = phrases.iter().map(|x| tape.leaf(x.data().clone())).collect();
    let l = global_loss_on_tape(&mut tape, &s, &p, gamma)?;
    // −log(1) is −0.0; report it as 0
    Ok(tape.value(l)[(0, 0)] + 0.0)
}

/// Mean cosine between distinct slots; zero for fewer than two slots.
pub fn diversity_on_tape(tape: &mut Tape, slots: Var) -> Result<Var> {
    let k = tape.shape(slots).0;
    if k < 2 {
        log::debug!("diversity regularizer needs two slots, got {k}");
        return Ok(zero(tape));
    }
    let cos = tape.cosine(slots, slots)?;
    let off = Matrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { 1.0 });
    let masked = tape.mul_const(cos, off)?;
    let total = tape.sum(masked);
    Ok(tape.scale(total, 1.0 / (k * (k - 1)) as f64))
}

pub fn diversity_reg(slots: &EmbeddingSequence) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.leaf(slots.data().clone());
    let l = diversity_on_tape(&mut tape, s)?;
    Ok(tape.value(l)[(0, 0)])
}

/// Frame-to-slot attention on the tape: softmax over slots of
/// `cos(v_i, s_k) / γ`.
pub fn attention_on_tape(tape: &mut Tape, video: Var, slots: Var, gamma: f64) -> Result<Var> {
    check_gamma(gamma)?;
    let cos = tape.cosine(video, slots)?;
    let logits = tape.scale(cos, 1.0 / gamma);
    Ok(tape.softmax_rows(logits))
}

/// `min(count, n)` distinct frame indices drawn uniformly.
pub fn sample_frames<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
    rand::seq::index::sample(rng, n, count.min(n)).into_vec()
}

/// Smoothness over pre-sampled frame indices. Anchors without a sampled
/// neighbour within `neighborhood` frames are skipped.
pub fn smoothness_with(
    tape: &mut Tape,
    attention: Var,
    sampled: &[usize],
    neighborhood: usize,
    gamma: f64,
) -> Result<Var> {
    check_gamma(gamma)?;
    let n = tape.shape(attention).0;
    if n <= 2 * neighborhood {
        return Err(Error::InvalidArgument(format!(
            "smoothness needs more than {} frames, got {n}",
            2 * neighborhood
        )));
    }
    let l = sampled.len();
    let positive = |a: usize, b: usize| a != b && sampled[a].abs_diff(sampled[b]) <= neighborhood;
    let anchors: Vec<usize> = (0..l).filter(|&a| (0..l).any(|b| positive(a, b))).collect();
    if anchors.is_empty() {
        log::debug!("smoothness: no sampled frame has a sampled neighbour");
        return Ok(zero(tape));
    }
    let rows = tape.select_rows(attention, sampled)?;
    let anchor_rows: Vec<usize> = anchors.iter().map(|&a| sampled[a]).collect();
    let anchor_att = tape.select_rows(attention, &anchor_rows)?;
    let cos = tape.cosine(anchor_att, rows)?;
    let logits = tape.scale(cos, 1.0 / gamma);
    let all = tape.masked_logsumexp(logits, &vec![true; anchors.len() * l])?;
    let pos_mask: Vec<bool> = anchors
        .iter()
        .flat_map(|&a| (0..l).map(move |b| positive(a, b)))
        .collect();
    let pos = tape.masked_logsumexp(logits, &pos_mask)?;
    let log_ratio = tape.sub(pos, all)?;
    let ratio = tape.exp(log_ratio);
    let mean = tape.mean(ratio);
    let log_mean = tape.ln(mean);
    Ok(tape.scale(log_mean, -1.0))
}

pub fn smoothness_reg<R: Rng + ?Sized>(
    attention: &Matrix,
    neighborhood: usize,
    samples: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<f64> {
    let sampled = sample_frames(attention.rows(), samples, rng);
    let mut tape = Tape::new();
    let a = tape.leaf(attention.clone());
    let l = smoothness_with(&mut tape, a, &sampled, neighborhood, gamma)?;
    Ok(tape.value(l)[(0, 0)] + 0.0)
}

/// Per-video terms recorded on the tape.
pub struct VideoTerms {
    pub seq: Var,
    pub div: Var,
    pub smooth: Var,
    pub phrases: Var,
    pub matched_pairs: usize,
}

/// Sequence, diversity and smoothness terms for one video.
pub fn video_terms<R: Rng + ?Sized>(
    tape: &mut Tape,
    slots: Var,
    video: &EmbeddingSequence,
    phrases: &EmbeddingSequence,
    cfg: &ContrastiveConfig,
    percentile: f64,
    rng: &mut R,
) -> Result<VideoTerms> {
    let p = tape.leaf(phrases.data().clone());
    let (seq, matched_pairs) = if cfg.use_seq {
        let (seq, corr) = seq_loss_on_tape(tape, slots, p, cfg.gamma_contrastive, percentile)?;
        (seq, corr.num_matches())
    } else {
        (tape.leaf(Matrix::scalar(0.0)), 0)
    };
    let div = diversity_on_tape(tape, slots)?;
    let v = tape.leaf(video.data().clone());
    let att = attention_on_tape(tape, v, slots, cfg.gamma_attention)?;
    let sampled = sample_frames(video.len(), cfg.sample_count, rng);
    let smooth = smoothness_with(tape, att, &sampled, cfg.neighborhood, cfg.gamma_attention)?;
    Ok(VideoTerms {
        seq,
        div,
        smooth,
        phrases: p,
        matched_pairs,
    })
}

/// Batch objective: per-video terms averaged over the batch plus the global
/// loss coupling all videos. Returns the scalar total node and its parts.
pub fn batch_objective<R: Rng + ?Sized>(
    tape: &mut Tape,
    slots: &[Var],
    batch: &[(&EmbeddingSequence, &EmbeddingSequence)],
    cfg: &ContrastiveConfig,
    percentile: f64,
    rng: &mut R,
) -> Result<(Var, LossBreakdown)> {
    if slots.is_empty() || slots.len() != batch.len() {
        return Err(Error::InvalidArgument("empty or mismatched batch".into()));
    }
    let mut terms = Vec::with_capacity(batch.len());
    for (&s, &(video, phrases)) in slots.iter().zip(batch) {
        terms.push(video_terms(tape, s, video, phrases, cfg, percentile, rng)?);
    }
    let b = batch.len() as f64;
    let avg = |tape: &mut Tape, pick: fn(&VideoTerms) -> Var| -> Result<Var> {
        let parts: Vec<Var> = terms.iter().map(pick).collect();
        let stacked = tape.concat_rows(&parts)?;
        let total = tape.sum(stacked);
        Ok(tape.scale(total, 1.0 / b))
    };
    let seq = avg(tape, |t| t.seq)?;
    let div = avg(tape, |t| t.div)?;
    let smooth = avg(tape, |t| t.smooth)?;
    let phrase_vars: Vec<Var> = terms.iter().map(|t| t.phrases).collect();
    let glob = global_loss_on_tape(tape, slots, &phrase_vars, cfg.gamma_contrastive)?;
    let total = total_on_tape(tape, seq, glob, div, smooth, cfg.alpha, cfg.beta)?;
    let value = |v: Var| tape.value(v)[(0, 0)];
    let mut parts = total_loss(value(seq), value(glob), value(div), value(smooth), cfg.alpha, cfg.beta)?;
    parts.matched_pairs = terms.iter().map(|t| t.matched_pairs).sum();
    debug_assert_eq!(parts.total.to_bits(), value(total).to_bits());
    if !parts.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite total loss {}", parts.total)));
    }
    Ok((total, parts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SequenceKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(rows: &[&[f64]], kind: SequenceKind) -> EmbeddingSequence {
        EmbeddingSequence::from_rows(rows, kind).unwrap()
    }

    #[test]
    fn info_nce_fixtures() {
        let ph = seq(&[&[1.0, 0.0]], SequenceKind::Phrases);
        assert_eq!(info_nce(&[0.3, 0.2], &ph, 0, 0.1).unwrap(), 0.0);

        let ph = seq(&[&[1.0, 1.0], &[1.0, -1.0]], SequenceKind::Phrases);
        let v = info_nce(&[1.0, 0.0], &ph, 0, 0.03).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

        // cosines 0.9 and 0.1 against the anchor (1, 0)
        let s = |c: f64| [c, (1.0 - c * c).sqrt()];
        let (a, b) = (s(0.9), s(0.1));
        let ph = seq(&[&a, &b], SequenceKind::Phrases);
        let v = info_nce(&[1.0, 0.0], &ph, 0, 0.1).unwrap();
        let expect = (1.0 + (-8.0f64).exp()).ln();
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
        assert!((v - 3.354e-4).abs() < 1e-7);

        assert!(info_nce(&[1.0, 0.0], &ph, 2, 0.1).is_err());
    }

    #[test]
    fn seq_loss_fixtures() {
        // 1x1: a percentile drop cost equals the match cost, and dropping both
        // sides (2c) beats matching (c), so the pair is frozen explicitly
        let one = seq(&[&[0.0, 1.0]], SequenceKind::Slots);
        let (v, corr) = seq_loss(&one, &one.clone().with_kind(SequenceKind::Phrases), 0.03, 0.8).unwrap();
        assert_eq!((v, corr.num_matches()), (0.0, 0));
        let mut tape = Tape::new();
        let s = tape.leaf(one.data().clone());
        let matched = Correspondence::new(1, 1, &[(0, 0)], [].into(), [].into(), -1.0, MatchMode::OneToOne).unwrap();
        let l = seq_loss_with(&mut tape, s, s, &matched, 0.03).unwrap();
        assert_eq!(tape.value(l)[(0, 0)], 0.0);

        let slots = seq(&[&[1.0, 0.0], &[0.0, 1.0]], SequenceKind::Slots);
        let phrases = slots.clone().with_kind(SequenceKind::Phrases);
        let (v, corr) = seq_loss(&slots, &phrases, 0.1, 0.8).unwrap();
        assert_eq!(corr.pairs(), vec![(0, 0), (1, 1)]);
        let ell = (1.0 + (-10.0f64).exp()).ln();
        assert!((v - 2.0 * ell).abs() < 1e-12, "{v} vs {}", 2.0 * ell);
        assert!((v - 9.08e-5).abs() < 1e-7);
    }

    #[test]
    fn seq_loss_without_matches_is_zero() {
        // every match costs more than dropping
        let slots = seq(&[&[1.0, 0.0]], SequenceKind::Slots);
        let phrases = seq(&[&[-1.0, 0.0], &[-1.0, 0.1]], SequenceKind::Phrases);
        let mut tape = Tape::new();
        let s = tape.leaf(slots.data().clone());
        let p = tape.leaf(phrases.data().clone());
        let corr = Correspondence::new(1, 2, &[], [0].into(), [0, 1].into(), 0.0, MatchMode::OneToOne).unwrap();
        let l = seq_loss_with(&mut tape, s, p, &corr, 0.1).unwrap();
        assert_eq!(tape.value(l)[(0, 0)], 0.0);
    }

    #[test]
    fn global_loss_fixtures() {
        let a = seq(&[&[1.0, 0.0], &[0.6, 0.8]], SequenceKind::Slots);
        let p = seq(&[&[0.0, 1.0], &[1.0, 1.0], &[-1.0, 0.2]], SequenceKind::Phrases);
        let v = global_loss(std::slice::from_ref(&a), std::slice::from_ref(&p), 0.03).unwrap();
        assert_eq!(v, 0.0);
        assert!(v.is_sign_positive());

        // same-video cosine 1, cross-video cosine −1
        let s0 = seq(&[&[1.0, 0.0]], SequenceKind::Slots);
        let s1 = seq(&[&[-1.0, 0.0]], SequenceKind::Slots);
        let v = global_loss(
            &[s0.clone(), s1.clone()],
            &[s0.clone().with_kind(SequenceKind::Phrases), s1.clone().with_kind(SequenceKind::Phrases)],
            0.03,
        )
        .unwrap();
        assert!((0.0..1e-3).contains(&v));

        // all cosines equal
        let u = seq(&[&[1.0, 0.0], &[1.0, 0.0]], SequenceKind::Phrases);
        let v = global_loss(&[s0.clone(), s0.clone()], &[u.clone(), u], 0.03).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);

        assert!(global_loss(&[], &[], 0.03).is_err());
    }

    #[test]
    fn diversity_fixtures() {
        let d = |rows: &[&[f64]]| diversity_reg(&seq(rows, SequenceKind::Slots)).unwrap();
        assert_eq!(d(&[&[1.0, 0.0], &[0.0, 2.0]]), 0.0);
        assert!((d(&[&[1.0, 2.0], &[1.0, 2.0]]) - 1.0).abs() < 1e-12);
        assert!((d(&[&[1.0, 2.0], &[-3.0, -6.0]]) + 1.0).abs() < 1e-12);
        assert_eq!(d(&[&[1.0, 2.0]]), 0.0);
    }

    #[test]
    fn total_loss_arithmetic() {
        let b = total_loss(1.0, 2.0, 1.0, 10.0, 0.3, 0.02).unwrap();
        assert_eq!(b.total, 3.5);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, 0.3, 0.02).unwrap().total, 0.0);
        assert!(total_loss(f64::NAN, 0.0, 0.0, 0.0, 0.3, 0.02).is_err());
        let c = ContrastiveConfig::default();
        assert_eq!((c.alpha, c.beta), (0.3, 0.02));
    }

    #[test]
    fn smoothness_constant_attention() {
        let n = 20;
        let att = Matrix::filled(n, 4, 0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = smoothness_reg(&att, 3, 8, 0.03, &mut rng).unwrap();
        // recompute the sampled set and the expected ratio by hand
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let idx = sample_frames(n, 8, &mut rng);
        let ratios: Vec<f64> = idx
            .iter()
            .map(|&a| idx.iter().filter(|&&b| b != a && a.abs_diff(b) <= 3).count())
            .filter(|&c| c > 0)
            .map(|c| c as f64 / idx.len() as f64)
            .collect();
        let expect = -(ratios.iter().sum::<f64>() / ratios.len() as f64).ln();
        assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
    }

    #[test]
    fn smoothness_is_deterministic_and_rewards_smooth_attention() {
        let n = 48;
        let blocky = Matrix::from_fn(n, 2, |i, k| if (i / 12) % 2 == k { 1.0 } else { 1e-9 });
        let mut noise = ChaCha8Rng::seed_from_u64(1);
        let random = Matrix::from_fn(n, 2, |_, _| noise.random::<f64>() + 1e-3);
        let run = |m: &Matrix| smoothness_reg(m, 3, 32, 0.03, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(run(&blocky).to_bits(), run(&blocky).to_bits());
        assert!(run(&blocky) < run(&random));
        assert!(smoothness_reg(&Matrix::filled(6, 2, 0.5), 3, 6, 0.03, &mut noise).is_err());
    }
}
