//! Step localization from slots.
//!
//! * [`localize_steps`]: many-to-one drop-aware alignment of slots (rows) to
//!   frames (columns); each surviving slot becomes one segment.
//! * [`zero_shot_localize`]: first pick one slot per step text with a
//!   one-to-one alignment that may drop slots only, then localize the picked
//!   slots and report step indices.
//! * [`nearest_slot_baseline`]: order-agnostic labeling by the most similar
//!   slot.

use std::collections::BTreeMap;

use crate::align::{drop_dtw, match_cost_matrix, percentile_drop_cost, CostSpec};
use crate::error::{Error, Result};
use crate::eval::Localization;
use crate::matrix::cosine_matrix;
use crate::model::ModelParams;
use crate::types::{Correspondence, DatasetSample, EmbeddingSequence, MatchMode, Segment, SegmentLabeling, BACKGROUND};

/// Segments from a many-to-one correspondence: row `k` spans
/// `[first, last]` matched column and only matched columns carry label `k`.
pub fn labeling_from_correspondence(corr: &Correspondence) -> Result<SegmentLabeling> {
    let mut labels = vec![BACKGROUND; corr.cols()];
    let mut spans: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (k, j) in corr.pairs() {
        labels[j] = k as i32;
        spans
            .entry(k)
            .and_modify(|s| {
                s.0 = s.0.min(j);
                s.1 = s.1.max(j);
            })
            .or_insert((j, j));
    }
    let segments = spans
        .into_iter()
        .map(|(k, (start, end))| Segment {
            label: k as i32,
            start,
            end,
        })
        .collect();
    SegmentLabeling::new(labels, segments)
}

/// Align `slots` to `video` (many-to-one, drops on both sides, drop cost at
/// `percentile` of the match costs) and cut the video into slot segments.
pub fn localize_steps(
    slots: &EmbeddingSequence,
    video: &EmbeddingSequence,
    percentile: f64,
) -> Result<(SegmentLabeling, Correspondence)> {
    let costs = match_cost_matrix(video, slots)?;
    let drop = percentile_drop_cost(&costs, percentile)?;
    let corr = drop_dtw(&CostSpec::symmetric(costs, drop), MatchMode::ManyToOne)?;
    Ok((labeling_from_correspondence(&corr)?, corr))
}

/// Slot chosen for every step text, in step order: a one-to-one alignment of
/// slots (rows, droppable) to step texts (columns, never dropped).
pub fn select_slots_for_steps(
    slots: &EmbeddingSequence,
    step_texts: &EmbeddingSequence,
    percentile: f64,
) -> Result<Vec<usize>> {
    if slots.len() < step_texts.len() {
        return Err(Error::TooFewSlots {
            slots: slots.len(),
            steps: step_texts.len(),
        });
    }
    let costs = match_cost_matrix(step_texts, slots)?;
    let drop = percentile_drop_cost(&costs, percentile)?;
    let corr = drop_dtw(&CostSpec::new(costs, Some(drop), None), MatchMode::OneToOne)?;
    let mut chosen = vec![0; step_texts.len()];
    for (k, s) in corr.pairs() {
        chosen[s] = k;
    }
    Ok(chosen)
}

/// Zero-shot localization; frame labels are indices into `step_texts`.
pub fn zero_shot_localize(
    slots: &EmbeddingSequence,
    step_texts: &EmbeddingSequence,
    video: &EmbeddingSequence,
    percentile: f64,
) -> Result<SegmentLabeling> {
    let chosen = select_slots_for_steps(slots, step_texts, percentile)?;
    let picked = slots.select(&chosen)?;
    // row k of `picked` is the slot for step k, so labels are step indices
    let (labeling, _) = localize_steps(&picked, video, percentile)?;
    Ok(labeling)
}

/// Label every frame with its most similar slot among the `keep` slots whose
/// best cosine over the video is highest. Labels are slot indices.
pub fn nearest_slot_baseline(
    slots: &EmbeddingSequence,
    video: &EmbeddingSequence,
    keep: usize,
) -> Result<SegmentLabeling> {
    if keep == 0 || keep > slots.len() {
        return Err(Error::InvalidArgument(format!(
            "keep {keep} outside 1..={}",
            slots.len()
        )));
    }
    let cos = cosine_matrix(video.data(), slots.data())?;
    let best: Vec<f64> = (0..slots.len())
        .map(|k| (0..video.len()).map(|i| cos[(i, k)]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.sort_by(|&a, &b| best[b].total_cmp(&best[a]).then(a.cmp(&b)));
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    let labels = (0..video.len())
        .map(|i| {
            let mut arg = kept[0];
            for &k in &kept[1..] {
                if cos[(i, k)] > cos[(i, arg)] {
                    arg = k;
                }
            }
            arg as i32
        })
        .collect();
    SegmentLabeling::from_frame_labels(labels)
}

/// Zero-shot variant of the baseline: slots are picked per step text as in
/// [`zero_shot_localize`], then every frame goes to its nearest picked slot.
pub fn zero_shot_nearest_slot(
    slots: &EmbeddingSequence,
    step_texts: &EmbeddingSequence,
    video: &EmbeddingSequence,
    percentile: f64,
) -> Result<SegmentLabeling> {
    let chosen = select_slots_for_steps(slots, step_texts, percentile)?;
    let picked = slots.select(&chosen)?;
    nearest_slot_baseline(&picked, video, picked.len())
}

/// Slot-based localization of every sample; slot vectors travel with the
/// labeling so that the unsupervised protocol can cluster them.
pub fn localize_dataset(params: &ModelParams, samples: &[DatasetSample], percentile: f64) -> Result<Vec<Localization>> {
    samples
        .iter()
        .map(|s| {
            let slots = params.forward(&s.video)?;
            let (labeling, _) = localize_steps(&slots, &s.video, percentile)?;
            Ok(Localization {
                sample_id: s.id.clone(),
                labeling,
                slots: Some(slots.into_matrix()),
            })
        })
        .collect()
}

fn step_texts(s: &DatasetSample) -> Result<&EmbeddingSequence> {
    s.gt_step_texts
        .as_ref()
        .ok_or_else(|| Error::InvalidData(format!("sample {} has no step texts", s.id)))
}

/// Zero-shot localization of every sample from its step texts.
pub fn zero_shot_dataset(params: &ModelParams, samples: &[DatasetSample], percentile: f64) -> Result<Vec<Localization>> {
    samples
        .iter()
        .map(|s| {
            let slots = params.forward(&s.video)?;
            Ok(Localization {
                sample_id: s.id.clone(),
                labeling: zero_shot_localize(&slots, step_texts(s)?, &s.video, percentile)?,
                slots: None,
            })
        })
        .collect()
}

/// [`zero_shot_dataset`] with nearest-slot labeling in place of the
/// alignment in the second stage.
pub fn zero_shot_nearest_dataset(
    params: &ModelParams,
    samples: &[DatasetSample],
    percentile: f64,
) -> Result<Vec<Localization>> {
    samples
        .iter()
        .map(|s| {
            let slots = params.forward(&s.video)?;
            Ok(Localization {
                sample_id: s.id.clone(),
                labeling: zero_shot_nearest_slot(&slots, step_texts(s)?, &s.video, percentile)?,
                slots: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SequenceKind;

    fn seq(rows: &[&[f64]], kind: SequenceKind) -> EmbeddingSequence {
        EmbeddingSequence::from_rows(rows, kind).unwrap()
    }

    #[test]
    fn constant_costs_drop_everything() {
        // the percentile drop cost equals the shared match cost, so dropping
        // the slot and all frames (4 drops) beats matching (3 matches)
        let s = seq(&[&[1.0, 0.0]], SequenceKind::Slots);
        let v = seq(&[&[1.0, 0.0], &[2.0, 0.0], &[0.5, 0.0]], SequenceKind::Video);
        let (lab, corr) = localize_steps(&s, &v, 0.8).unwrap();
        assert_eq!(corr.total_cost(), -4.0);
        assert!(lab.segments().is_empty());
    }

    #[test]
    fn dominant_slot_takes_its_frames() {
        // costs per frame: -1, -1, -1, -0.5, 1, 1; the 0.6 percentile is -0.5,
        // and the frame sitting exactly at the drop cost goes to the match
        let s = seq(&[&[1.0, 0.0]], SequenceKind::Slots);
        let v = seq(
            &[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[0.5, 0.75f64.sqrt()], &[-1.0, 0.0], &[-1.0, 0.0]],
            SequenceKind::Video,
        );
        let (lab, _) = localize_steps(&s, &v, 0.6).unwrap();
        assert_eq!(lab.segments(), &[Segment { label: 0, start: 0, end: 3 }]);
        assert_eq!(lab.frame_labels(), &[0, 0, 0, 0, -1, -1]);
    }

    #[test]
    fn cheap_drops_leave_background() {
        let costs = crate::matrix::Matrix::filled(2, 3, 0.0);
        let corr = drop_dtw(&CostSpec::symmetric(costs, -0.1), MatchMode::ManyToOne).unwrap();
        let lab = labeling_from_correspondence(&corr).unwrap();
        assert_eq!(corr.num_matches(), 0);
        assert!(lab.frame_labels().iter().all(|&l| l == BACKGROUND));
        assert!(lab.segments().is_empty());
    }

    #[test]
    fn zero_shot_picks_matching_subset() {
        let e = |i: usize| {
            let mut v = vec![0.0; 5];
            v[i] = 1.0;
            v
        };
        let slots = EmbeddingSequence::from_rows(&[e(0), e(1), e(2), e(3), e(4)], SequenceKind::Slots).unwrap();
        let steps = EmbeddingSequence::from_rows(&[e(1), e(3)], SequenceKind::StepTexts).unwrap();
        assert_eq!(select_slots_for_steps(&slots, &steps, 0.8).unwrap(), vec![1, 3]);
        let away: Vec<f64> = (0..5).map(|i| if i == 1 || i == 3 { -1.0 } else { 0.0 }).collect();
        let video = EmbeddingSequence::from_rows(
            &[away.clone(), e(1), e(1), away, e(3), e(3), e(3)],
            SequenceKind::Video,
        )
        .unwrap();
        let lab = zero_shot_localize(&slots, &steps, &video, 0.7).unwrap();
        assert_eq!(lab.frame_labels(), &[-1, 0, 0, -1, 1, 1, 1]);
    }

    #[test]
    fn zero_shot_single_step_keeps_best_slot() {
        let slots = seq(&[&[1.0, 0.0], &[0.6, 0.8], &[0.0, 1.0]], SequenceKind::Slots);
        let steps = seq(&[&[0.5, 0.9]], SequenceKind::StepTexts);
        assert_eq!(select_slots_for_steps(&slots, &steps, 0.8).unwrap(), vec![1]);
    }

    #[test]
    fn zero_shot_needs_enough_slots() {
        let slots = seq(&[&[1.0, 0.0]], SequenceKind::Slots);
        let steps = seq(&[&[1.0, 0.0], &[0.0, 1.0]], SequenceKind::StepTexts);
        assert!(matches!(
            select_slots_for_steps(&slots, &steps, 0.8),
            Err(Error::TooFewSlots { slots: 1, steps: 2 })
        ));
    }

    #[test]
    fn nearest_slot_fixtures() {
        let one = seq(&[&[1.0, 0.0]], SequenceKind::Slots);
        let v = seq(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.2]], SequenceKind::Video);
        assert_eq!(nearest_slot_baseline(&one, &v, 1).unwrap().frame_labels(), &[0, 0, 0]);

        let slots = seq(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0]], SequenceKind::Slots);
        let v = seq(&[&[0.0, 1.0], &[-1.0, 0.0], &[1.0, 0.0]], SequenceKind::Video);
        assert_eq!(nearest_slot_baseline(&slots, &v, 3).unwrap().frame_labels(), &[1, 2, 0]);
        assert!(nearest_slot_baseline(&slots, &v, 4).is_err());
    }
}
