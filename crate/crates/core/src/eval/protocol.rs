use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::hungarian::hungarian;
use super::kmeans::{keep_top_fraction, kmeans};
use super::metrics::{FrameCounts, Metrics};
use crate::error::{Error, Result};
use crate::manifest::Dataset;
use crate::matrix::Matrix;
use crate::types::{DatasetSample, Segment, SegmentLabeling, BACKGROUND};

/// Output of localization for one video. For slot-based localization the
/// labels index rows of `slots`; for zero-shot output they index the
/// video's step texts and `slots` may be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub sample_id: String,
    pub labeling: SegmentLabeling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub seed: u64,
    pub keep_fraction: f64,
    /// Pool frames of all tasks instead of averaging per-task metrics.
    pub pooled: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            keep_fraction: 0.6,
            pooled: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub tasks: usize,
    pub videos: usize,
    pub frames: usize,
    pub gt_key_frames: usize,
    pub pred_key_frames: usize,
    pub detections: usize,
    pub kept_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub overall: Metrics,
    pub per_task: BTreeMap<String, Metrics>,
    pub support: Support,
    pub pooled: bool,
}

struct TaskVideo<'a> {
    sample: &'a DatasetSample,
    gt: SegmentLabeling,
    pred: &'a Localization,
}

fn group_by_task<'a>(dataset: &'a Dataset, preds: &'a [Localization]) -> Result<Vec<(String, Vec<TaskVideo<'a>>)>> {
    let by_id: BTreeMap<&str, &Localization> = preds.iter().map(|p| (p.sample_id.as_str(), p)).collect();
    let mut groups: Vec<(String, Vec<TaskVideo>)> = dataset.task_names().into_iter().map(|t| (t, Vec::new())).collect();
    for s in &dataset.samples {
        let pred = by_id
            .get(s.id.as_str())
            .ok_or_else(|| Error::InvalidData(format!("no localization for sample {}", s.id)))?;
        let gt = s
            .gt_labeling()
            .ok_or_else(|| Error::InvalidData(format!("sample {} has no ground-truth segments", s.id)))?;
        if pred.labeling.num_frames() != gt.num_frames() {
            return Err(Error::InvalidData(format!(
                "sample {}: localization covers {} frames, video has {}",
                s.id,
                pred.labeling.num_frames(),
                gt.num_frames()
            )));
        }
        let task = s.task.clone().unwrap_or_default();
        let group = groups.iter_mut().find(|(t, _)| *t == task).expect("task listed");
        group.1.push(TaskVideo { sample: s, gt, pred });
    }
    groups.retain(|(_, v)| !v.is_empty());
    Ok(groups)
}

fn summarize(per_task: Vec<(String, FrameCounts)>, mut support: Support, pooled: bool) -> MetricsReport {
    support.tasks = per_task.len();
    let mut total = FrameCounts::default();
    let mut ious = Vec::new();
    for (_, c) in &per_task {
        total.frames += c.frames;
        total.correct += c.correct;
        total.correct_key += c.correct_key;
        total.pred_key += c.pred_key;
        total.gt_key += c.gt_key;
        ious.extend(c.overlap.values().map(|&(i, u)| if u == 0 { 0.0 } else { i as f64 / u as f64 }));
    }
    support.frames = total.frames;
    support.gt_key_frames = total.gt_key;
    support.pred_key_frames = total.pred_key;
    let task_metrics: BTreeMap<String, Metrics> = per_task.iter().map(|(t, c)| (t.clone(), c.metrics())).collect();
    let overall = if pooled {
        let mut m = total.metrics();
        m.iou = if ious.is_empty() { 0.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 };
        m
    } else {
        let n = task_metrics.len().max(1) as f64;
        let avg = |f: fn(&Metrics) -> f64| task_metrics.values().map(f).sum::<f64>() / n;
        Metrics {
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            f1: avg(|m| m.f1),
            mof: avg(|m| m.mof),
            iou: avg(|m| m.iou),
        }
    };
    MetricsReport {
        overall,
        per_task: task_metrics,
        support,
        pooled,
    }
}

/// Unsupervised protocol. Per task, the slot vectors of all detected
/// segments are clustered into as many clusters as the task has steps, only
/// the detections closest to their centroid are kept, and clusters are
/// matched one-to-one to ground-truth steps by minimum `1 - IoU` over the
/// task's frames.
pub fn unsupervised_protocol(dataset: &Dataset, preds: &[Localization], cfg: &ProtocolConfig) -> Result<MetricsReport> {
    let mut per_task = Vec::new();
    let mut support = Support::default();
    for (task, videos) in group_by_task(dataset, preds)? {
        support.videos += videos.len();
        let kc = dataset.num_steps(&task);

        // (video, segment) of every detection and its slot vector
        let mut owners = Vec::new();
        let mut vectors: Vec<Vec<f64>> = Vec::new();
        for (v, tv) in videos.iter().enumerate() {
            let segs = tv.pred.labeling.segments();
            if segs.is_empty() {
                continue;
            }
            let slots = tv.pred.slots.as_ref().ok_or_else(|| {
                Error::InvalidData(format!("localization for {} carries no slot vectors", tv.sample.id))
            })?;
            for seg in segs {
                let k = seg.label as usize;
                if k >= slots.rows() {
                    return Err(Error::InvalidData(format!(
                        "sample {}: label {k} but only {} slots",
                        tv.sample.id,
                        slots.rows()
                    )));
                }
                owners.push((v, *seg));
                vectors.push(slots.row(k).to_vec());
            }
        }
        support.detections += owners.len();

        let mut cluster_frames: Vec<Vec<i32>> = videos.iter().map(|tv| vec![BACKGROUND; tv.gt.num_frames()]).collect();
        let mut class_map = BTreeMap::new();
        if !owners.is_empty() && kc > 0 {
            let points = Matrix::from_rows(&vectors);
            let k = kc.min(points.rows());
            let clustering = kmeans(&points, k, cfg.seed)?;
            let kept = keep_top_fraction(&points, &clustering.assignments, &clustering.centroids, cfg.keep_fraction);
            for (d, &(v, seg)) in owners.iter().enumerate() {
                if !kept[d] {
                    continue;
                }
                support.kept_detections += 1;
                let labels = videos[v].pred.labeling.frame_labels();
                for f in seg.start..=seg.end {
                    if labels[f] == seg.label {
                        cluster_frames[v][f] = clustering.assignments[d] as i32;
                    }
                }
            }
            let mut inter = Matrix::zeros(k, kc);
            let mut pred_size = vec![0.0; k];
            let mut gt_size = vec![0.0; kc];
            for (v, tv) in videos.iter().enumerate() {
                for (&c, &g) in cluster_frames[v].iter().zip(tv.gt.frame_labels()) {
                    let g_ok = g != BACKGROUND && (g as usize) < kc;
                    if c != BACKGROUND {
                        pred_size[c as usize] += 1.0;
                    }
                    if g_ok {
                        gt_size[g as usize] += 1.0;
                    }
                    if c != BACKGROUND && g_ok {
                        inter[(c as usize, g as usize)] += 1.0;
                    }
                }
            }
            let cost = Matrix::from_fn(k, kc, |c, s| {
                let union = pred_size[c] + gt_size[s] - inter[(c, s)];
                if union > 0.0 {
                    1.0 - inter[(c, s)] / union
                } else {
                    1.0
                }
            });
            for (c, s) in hungarian(&cost).into_iter().enumerate() {
                if let Some(s) = s {
                    class_map.insert(c as i32, s as i32);
                }
            }
        }

        let mut counts = FrameCounts::default();
        for (v, tv) in videos.iter().enumerate() {
            let pred = SegmentLabeling::from_frame_labels(std::mem::take(&mut cluster_frames[v]))?;
            counts.add(&pred, &tv.gt, &class_map)?;
        }
        per_task.push((task, counts));
    }
    Ok(summarize(per_task, support, cfg.pooled))
}

/// Zero-shot protocol: predicted label `k` means the `k`-th step text of the
/// video, i.e. the step of its `k`-th ground-truth segment.
pub fn zero_shot_protocol(dataset: &Dataset, preds: &[Localization], pooled: bool) -> Result<MetricsReport> {
    let mut per_task = Vec::new();
    let mut support = Support::default();
    for (task, videos) in group_by_task(dataset, preds)? {
        support.videos += videos.len();
        let mut counts = FrameCounts::default();
        for tv in &videos {
            let segs = tv.sample.gt_segments.as_deref().unwrap_or_default();
            let class_map: BTreeMap<i32, i32> = segs.iter().enumerate().map(|(k, s)| (k as i32, s.step_id)).collect();
            support.detections += tv.pred.labeling.segments().len();
            counts.add(&tv.pred.labeling, &tv.gt, &class_map)?;
        }
        support.kept_detections = support.detections;
        per_task.push((task, counts));
    }
    Ok(summarize(per_task, support, pooled))
}

/// Chance-level localizations: per video, between 1 and `num_slots` random
/// disjoint segments, each carrying its own random unit slot vector.
pub fn random_segment_baseline(dataset: &Dataset, num_slots: usize, seed: u64) -> Result<Vec<Localization>> {
    if num_slots == 0 {
        return Err(Error::InvalidArgument("num_slots must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let n = s.video.len();
        let dim = s.video.dim();
        let max_j = num_slots.min((n / 2).max(1));
        let j = rng.random_range(1..=max_j);
        let segments: Vec<Segment> = if n == 1 {
            vec![Segment { label: 0, start: 0, end: 0 }]
        } else {
            let mut cuts = sample(&mut rng, n, 2 * j).into_vec();
            cuts.sort_unstable();
            cuts.chunks(2)
                .enumerate()
                .map(|(k, c)| Segment {
                    label: k as i32,
                    start: c[0],
                    end: c[1],
                })
                .collect()
        };
        let mut slots = Matrix::from_fn(segments.len(), dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        slots = slots.normalized_rows()?;
        out.push(Localization {
            sample_id: s.id.clone(),
            labeling: SegmentLabeling::from_segments(n, segments)?,
            slots: Some(slots),
        });
    }
    Ok(out)
}
