use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{SegmentLabeling, BACKGROUND};

/// Precision, recall, F1, mean over frames and mean IoU over ground-truth
/// steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mof: f64,
    pub iou: f64,
}

/// Frame counts from which [`Metrics`] are derived; counts from several
/// videos add up, which pools their frames.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameCounts {
    pub frames: usize,
    pub correct: usize,
    pub correct_key: usize,
    pub pred_key: usize,
    pub gt_key: usize,
    /// Per ground-truth step: (intersection, union) frame counts.
    pub overlap: BTreeMap<i32, (usize, usize)>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_injective(class_map: &BTreeMap<i32, i32>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (&p, &g) in class_map {
        if g != BACKGROUND && !seen.insert(g) {
            return Err(Error::InvalidArgument(format!(
                "class map is not injective: {p} and another label both map to {g}"
            )));
        }
    }
    Ok(())
}

impl FrameCounts {
    /// Add one video. Predicted labels missing from `class_map` still count
    /// as predicted key-step frames but never as correct.
    pub fn add(&mut self, pred: &SegmentLabeling, gt: &SegmentLabeling, class_map: &BTreeMap<i32, i32>) -> Result<()> {
        if pred.num_frames() != gt.num_frames() {
            return Err(Error::InvalidArgument(format!(
                "prediction has {} frames, ground truth {}",
                pred.num_frames(),
                gt.num_frames()
            )));
        }
        check_injective(class_map)?;
        let mapped: Vec<Option<i32>> = pred
            .frame_labels()
            .iter()
            .map(|&p| {
                if p == BACKGROUND {
                    Some(BACKGROUND)
                } else {
                    class_map.get(&p).copied().filter(|&g| g != BACKGROUND)
                }
            })
            .collect();
        let steps: BTreeSet<i32> = gt.frame_labels().iter().copied().filter(|&g| g != BACKGROUND).collect();
        for &s in &steps {
            self.overlap.entry(s).or_default();
        }
        for (&g, (&p, &m)) in gt.frame_labels().iter().zip(pred.frame_labels().iter().zip(&mapped)) {
            self.frames += 1;
            if p != BACKGROUND {
                self.pred_key += 1;
            }
            if g != BACKGROUND {
                self.gt_key += 1;
            }
            if m == Some(g) {
                self.correct += 1;
                if g != BACKGROUND {
                    self.correct_key += 1;
                }
            }
        }
        for (&s, entry) in self.overlap.iter_mut() {
            if !steps.contains(&s) && !mapped.contains(&Some(s)) {
                continue;
            }
            for (&g, &m) in gt.frame_labels().iter().zip(&mapped) {
                let (in_gt, in_pred) = (g == s, m == Some(s));
                if in_gt && in_pred {
                    entry.0 += 1;
                }
                if in_gt || in_pred {
                    entry.1 += 1;
                }
            }
        }
        Ok(())
    }

    pub fn metrics(&self) -> Metrics {
        let precision = ratio(self.correct_key, self.pred_key);
        let recall = ratio(self.correct_key, self.gt_key);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        let iou = if self.overlap.is_empty() {
            0.0
        } else {
            self.overlap.values().map(|&(i, u)| ratio(i, u)).sum::<f64>() / self.overlap.len() as f64
        };
        Metrics {
            precision,
            recall,
            f1,
            mof: ratio(self.correct, self.frames),
            iou,
        }
    }
}

/// Metrics of one prediction against ground truth under `class_map`
/// (predicted label → ground-truth label).
pub fn framewise_metrics(
    pred: &SegmentLabeling,
    gt: &SegmentLabeling,
    class_map: &BTreeMap<i32, i32>,
) -> Result<Metrics> {
    let mut c = FrameCounts::default();
    c.add(pred, gt, class_map)?;
    Ok(c.metrics())
}

/// Identity map over every label appearing in `labelings`.
pub fn identity_map<'a>(labelings: impl IntoIterator<Item = &'a SegmentLabeling>) -> BTreeMap<i32, i32> {
    labelings
        .into_iter()
        .flat_map(|l| l.frame_labels().iter().copied())
        .filter(|&l| l != BACKGROUND)
        .map(|l| (l, l))
        .collect()
}
