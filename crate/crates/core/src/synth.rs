//! Synthetic instructional videos with planted ground truth.
//!
//! Every task owns a set of unit-norm step prototypes. A video keeps a random
//! ordered subset of its task's steps, lays them out as contiguous runs of
//! frames separated by background frames, and adds gaussian noise. Its phrase
//! sequence is the noisy prototypes of the present steps in order, shuffled
//! together with random distractor phrases. Video and phrase content share
//! one embedding space by construction.
//!
//! Independent random streams drive prototypes, layout, noise, distractors and
//! background, so two configs that differ only in `noise_sigma` produce the
//! same prototypes, layouts and step order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{Dataset, TaskInfo};
use crate::matrix::{dot, norm, Matrix};
use crate::types::{DatasetSample, EmbeddingSequence, GtSegment, SequenceKind};

const MAX_ATTEMPTS: usize = 10_000;
const BACKGROUND_RANK: usize = 3;
const BACKGROUND_JITTER: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dim: usize,
    pub num_tasks: usize,
    pub steps_per_task: usize,
    pub videos_per_task: usize,
    pub frames_range: (usize, usize),
    /// Relative step lengths are drawn from this range and then scaled to
    /// fill the non-background frames.
    pub step_len_range: (usize, usize),
    pub background_ratio: f64,
    /// Fraction of all phrases that are distractors.
    pub distractor_phrase_ratio: f64,
    pub noise_sigma: f64,
    pub step_presence_prob: f64,
    /// Largest allowed cosine between two prototypes.
    pub max_prototype_cosine: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            num_tasks: 4,
            steps_per_task: 6,
            videos_per_task: 30,
            frames_range: (40, 80),
            step_len_range: (5, 15),
            background_ratio: 0.5,
            distractor_phrase_ratio: 0.5,
            noise_sigma: 0.1,
            step_presence_prob: 0.85,
            max_prototype_cosine: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim == 0 || self.num_tasks == 0 || self.steps_per_task == 0 || self.videos_per_task == 0 {
            return bad("dim, num_tasks, steps_per_task and videos_per_task must be positive".into());
        }
        let (lo, hi) = self.frames_range;
        let (slo, shi) = self.step_len_range;
        if lo > hi || slo > shi || slo == 0 {
            return bad(format!(
                "ranges must be ordered with positive step lengths: frames {:?}, steps {:?}",
                self.frames_range, self.step_len_range
            ));
        }
        for (name, p) in [
            ("background_ratio", self.background_ratio),
            ("step_presence_prob", self.step_presence_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.distractor_phrase_ratio) {
            return bad(format!(
                "distractor_phrase_ratio {} outside [0, 1)",
                self.distractor_phrase_ratio
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be >= 0", self.noise_sigma));
        }
        let min_step_frames = lo - (lo as f64 * self.background_ratio).round() as usize;
        if min_step_frames < self.steps_per_task {
            return bad(format!(
                "{lo}-frame videos with background ratio {} leave fewer frames than steps",
                self.background_ratio
            ));
        }
        Ok(())
    }
}

/// Generated samples plus the prototype table (one `steps × dim` matrix per
/// task).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub prototypes: Vec<Matrix>,
}

struct Streams {
    prototypes: ChaCha8Rng,
    layout: ChaCha8Rng,
    noise: ChaCha8Rng,
    distractors: ChaCha8Rng,
    background: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let s = |id| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        Self {
            prototypes: s(0),
            layout: s(1),
            noise: s(2),
            distractors: s(3),
            background: s(4),
        }
    }
}

fn gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v = gaussian(dim, rng);
        if norm(&v) > 1e-12 {
            return unit(v);
        }
    }
}

/// `count` unit vectors with pairwise cosine at most `max_cos`, by
/// sequential rejection.
fn separated_units<R: Rng + ?Sized>(count: usize, dim: usize, max_cos: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > MAX_ATTEMPTS * count {
            return Err(Error::Infeasible(format!(
                "cannot satisfy separation at this dim: {count} vectors in {dim} dimensions \
                 with cosine <= {max_cos}"
            )));
        }
        let v = random_unit(dim, rng);
        if out.iter().all(|u| dot(u, &v) <= max_cos) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Noisy copy of a unit vector, renormalized; exact copy when `sigma` is 0.
fn perturb<R: Rng + ?Sized>(v: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return v.to_vec();
    }
    let noise = gaussian(v.len(), rng);
    unit(v.iter().zip(noise).map(|(a, n)| a + sigma * n).collect())
}

/// Split `total` into parts proportional to `weights`, each at least 1,
/// by largest remainder.
fn apportion(weights: &[usize], total: usize) -> Vec<usize> {
    let m = weights.len();
    let wsum: usize = weights.iter().sum();
    let spare = total - m;
    let exact: Vec<f64> = weights
        .iter()
        .map(|&w| spare as f64 * w as f64 / wsum as f64)
        .collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = spare - parts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    parts.iter().map(|p| p + 1).collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = Streams::new(cfg.seed);
    let total_steps = cfg.num_tasks * cfg.steps_per_task;
    let protos = separated_units(total_steps, cfg.dim, cfg.max_prototype_cosine, &mut rng.prototypes)?;
    let basis = separated_units(BACKGROUND_RANK, cfg.dim, cfg.max_prototype_cosine, &mut rng.prototypes)?;
    let prototypes: Vec<Matrix> = protos
        .chunks(cfg.steps_per_task)
        .map(Matrix::from_rows)
        .collect();

    let mut tasks = Vec::with_capacity(cfg.num_tasks);
    let mut samples = Vec::with_capacity(cfg.num_tasks * cfg.videos_per_task);
    for (t, table) in prototypes.iter().enumerate() {
        let task = format!("task{t}");
        tasks.push(TaskInfo {
            name: task.clone(),
            num_steps: cfg.steps_per_task,
        });
        for v in 0..cfg.videos_per_task {
            let id = format!("{task}_video{v:03}");
            samples.push(video(cfg, &mut rng, table, &basis, id, task.clone())?);
        }
    }
    Ok(SynthDataset {
        dataset: Dataset { tasks, samples },
        prototypes,
    })
}

fn video(
    cfg: &SynthConfig,
    rng: &mut Streams,
    table: &Matrix,
    basis: &[Vec<f64>],
    id: String,
    task: String,
) -> Result<DatasetSample> {
    let lay = &mut rng.layout;
    let mut present: Vec<usize> = (0..cfg.steps_per_task)
        .filter(|_| lay.random::<f64>() < cfg.step_presence_prob)
        .collect();
    if present.is_empty() {
        present.push(lay.random_range(0..cfg.steps_per_task));
    }
    let m = present.len();
    let n = lay.random_range(cfg.frames_range.0..=cfg.frames_range.1);
    let n_bg = (n as f64 * cfg.background_ratio).round() as usize;
    let weights: Vec<usize> = (0..m)
        .map(|_| lay.random_range(cfg.step_len_range.0..=cfg.step_len_range.1))
        .collect();
    let lengths = apportion(&weights, n - n_bg);
    // background frames fall into the m+1 gaps around the steps
    let mut gaps = vec![0usize; m + 1];
    for _ in 0..n_bg {
        gaps[lay.random_range(0..=m)] += 1;
    }

    let mut frames: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut segments = Vec::with_capacity(m);
    let mut push_background = |frames: &mut Vec<Vec<f64>>, count: usize| {
        for _ in 0..count {
            let mut x = vec![0.0; cfg.dim];
            for b in basis {
                let c: f64 = StandardNormal.sample(&mut rng.background);
                x.iter_mut().zip(b).for_each(|(xi, bi)| *xi += c * bi);
            }
            let jitter = gaussian(cfg.dim, &mut rng.background);
            x.iter_mut().zip(jitter).for_each(|(xi, j)| *xi += BACKGROUND_JITTER * j);
            frames.push(unit(x));
        }
    };
    for (k, &step) in present.iter().enumerate() {
        push_background(&mut frames, gaps[k]);
        let start = frames.len();
        for _ in 0..lengths[k] {
            frames.push(perturb(table.row(step), cfg.noise_sigma, &mut rng.noise));
        }
        segments.push(GtSegment {
            step_id: step as i32,
            start,
            end: frames.len() - 1,
        });
    }
    push_background(&mut frames, gaps[m]);

    // relevant phrases keep step order; distractors go to random positions
    let n_dis = (m as f64 * cfg.distractor_phrase_ratio / (1.0 - cfg.distractor_phrase_ratio)).round() as usize;
    let mut relevance = vec![true; m];
    relevance.extend(std::iter::repeat_n(false, n_dis));
    relevance.shuffle(&mut rng.layout);
    let mut steps_iter = present.iter();
    let phrases: Vec<Vec<f64>> = relevance
        .iter()
        .map(|&rel| {
            if rel {
                let step = *steps_iter.next().expect("one relevant slot per step");
                perturb(table.row(step), cfg.noise_sigma, &mut rng.noise)
            } else {
                random_unit(cfg.dim, &mut rng.distractors)
            }
        })
        .collect();
    let texts: Vec<&[f64]> = present.iter().map(|&s| table.row(s)).collect();

    let sample = DatasetSample {
        id,
        task: Some(task),
        video: EmbeddingSequence::from_rows(&frames, SequenceKind::Video)?,
        phrases: EmbeddingSequence::from_rows(&phrases, SequenceKind::Phrases)?,
        gt_segments: Some(segments),
        gt_step_texts: Some(EmbeddingSequence::from_rows(&texts, SequenceKind::StepTexts)?),
        phrase_relevance: Some(relevance),
    };
    sample.validate()?;
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::cosine;

    #[test]
    fn apportion_fills_exactly() {
        assert_eq!(apportion(&[1, 1], 4), vec![2, 2]);
        let p = apportion(&[5, 9, 12], 31);
        assert_eq!(p.iter().sum::<usize>(), 31);
        assert!(p.iter().all(|&x| x >= 1));
        assert_eq!(apportion(&[3, 3, 3], 3), vec![1, 1, 1]);
    }

    #[test]
    fn clean_degenerate_case() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            distractor_phrase_ratio: 0.0,
            background_ratio: 0.0,
            num_tasks: 2,
            videos_per_task: 3,
            ..SynthConfig::default()
        };
        let out = generate(&cfg).unwrap();
        for s in &out.dataset.samples {
            let t: usize = s.task.as_ref().unwrap()[4..].parse().unwrap();
            let table = &out.prototypes[t];
            let segs = s.gt_segments.as_ref().unwrap();
            let covered: usize = segs.iter().map(|g| g.end - g.start + 1).sum();
            assert_eq!(covered, s.video.len());
            for g in segs {
                for f in g.start..=g.end {
                    assert_eq!(s.video.row(f), table.row(g.step_id as usize));
                }
            }
            assert_eq!(s.phrases.len(), segs.len());
            for (p, g) in segs.iter().enumerate() {
                assert_eq!(s.phrases.row(p), table.row(g.step_id as usize));
            }
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            videos_per_task: 4,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }

    #[test]
    fn noise_free_split_shares_structure() {
        let noisy = SynthConfig {
            videos_per_task: 5,
            ..SynthConfig::default()
        };
        let clean = SynthConfig {
            noise_sigma: 0.0,
            ..noisy.clone()
        };
        let (a, b) = (generate(&noisy).unwrap(), generate(&clean).unwrap());
        assert_eq!(a.prototypes, b.prototypes);
        for (x, y) in a.dataset.samples.iter().zip(&b.dataset.samples) {
            assert_eq!(x.gt_segments, y.gt_segments);
            assert_eq!(x.phrase_relevance, y.phrase_relevance);
            assert_eq!(x.gt_step_texts, y.gt_step_texts);
        }
        for s in &b.dataset.samples {
            let t: usize = s.task.as_ref().unwrap()[4..].parse().unwrap();
            for g in s.gt_segments.as_ref().unwrap() {
                for f in g.start..=g.end {
                    for (k, p) in b.prototypes.iter().flat_map(|m| m.iter_rows()).enumerate() {
                        let c = cosine(s.video.row(f), p).unwrap();
                        if k == t * 6 + g.step_id as usize {
                            assert!((c - 1.0).abs() < 1e-12);
                        } else {
                            assert!(c <= 0.3 + 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn impossible_separation_is_reported() {
        let cfg = SynthConfig {
            dim: 2,
            steps_per_task: 6,
            num_tasks: 4,
            videos_per_task: 1,
            ..SynthConfig::default()
        };
        let err = generate(&cfg).unwrap_err();
        assert!(err.to_string().contains("cannot satisfy separation"), "{err}");
    }
}
