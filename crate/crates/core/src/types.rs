//! Shared domain types: embedding sequences, dataset samples, alignment
//! correspondences and per-frame segment labelings.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Label used for frames that belong to no step.
pub const BACKGROUND: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    Video,
    Phrases,
    StepTexts,
    Slots,
}

impl SequenceKind {
    pub fn code(self) -> u16 {
        match self {
            SequenceKind::Video => 0,
            SequenceKind::Phrases => 1,
            SequenceKind::StepTexts => 2,
            SequenceKind::Slots => 3,
        }
    }

    pub fn from_code(code: u16) -> Result<Self> {
        Ok(match code {
            0 => SequenceKind::Video,
            1 => SequenceKind::Phrases,
            2 => SequenceKind::StepTexts,
            3 => SequenceKind::Slots,
            _ => return Err(Error::UnknownKind { code }),
        })
    }
}

/// An ordered list of `dim`-dimensional vectors: video frames, narration
/// phrases, step descriptions, or decoder step slots.
///
/// Construction rejects empty shapes and non-finite entries, so every value
/// of this type is usable as-is by the alignment and loss code.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    data: Matrix,
    kind: SequenceKind,
}

impl EmbeddingSequence {
    pub fn new(data: Matrix, kind: SequenceKind) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::EmptySequence);
        }
        if let Some((row, col)) = data.find_non_finite() {
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self { data, kind })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], kind: SequenceKind) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySequence);
        }
        let cols = rows[0].as_ref().len();
        if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != cols) {
            return Err(Error::DimMismatch {
                left: cols,
                right: bad.as_ref().len(),
            });
        }
        Self::new(Matrix::from_rows(rows), kind)
    }

    pub fn len(&self) -> usize {
        self.data.rows()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn kind(&self) -> SequenceKind {
        self.kind
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.data.row(i)
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }

    /// Same values, different role.
    pub fn with_kind(mut self, kind: SequenceKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.data.select_rows(indices), self.kind)
    }

    /// Values rounded through `f32`, i.e. what the on-disk format stores.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            data: self.data.map(|v| v as f32 as f64),
            kind: self.kind,
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.data.scale(factor), self.kind)
    }
}

/// Inclusive ground-truth step segment `[start, end]` in frame units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtSegment {
    pub step_id: i32,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub id: String,
    pub task: Option<String>,
    pub video: EmbeddingSequence,
    pub phrases: EmbeddingSequence,
    pub gt_segments: Option<Vec<GtSegment>>,
    pub gt_step_texts: Option<EmbeddingSequence>,
    pub phrase_relevance: Option<Vec<bool>>,
}

impl DatasetSample {
    /// Checks the cross-field invariants of a sample.
    pub fn validate(&self) -> Result<()> {
        if self.video.dim() != self.phrases.dim() {
            return Err(Error::DimMismatch {
                left: self.video.dim(),
                right: self.phrases.dim(),
            });
        }
        if let Some(segs) = &self.gt_segments {
            let n = self.video.len();
            let mut prev_end: Option<usize> = None;
            for s in segs {
                if s.start > s.end || s.end >= n || s.step_id < 0 {
                    return Err(Error::InvalidData(format!(
                        "sample {}: segment {:?} outside [0, {n})",
                        self.id, s
                    )));
                }
                if prev_end.is_some_and(|e| s.start <= e) {
                    return Err(Error::InvalidData(format!(
                        "sample {}: segments unsorted or overlapping at {:?}",
                        self.id, s
                    )));
                }
                prev_end = Some(s.end);
            }
        }
        if let Some(texts) = &self.gt_step_texts {
            if texts.dim() != self.video.dim() {
                return Err(Error::DimMismatch {
                    left: self.video.dim(),
                    right: texts.dim(),
                });
            }
        }
        if let Some(mask) = &self.phrase_relevance {
            if mask.len() != self.phrases.len() {
                return Err(Error::InvalidData(format!(
                    "sample {}: relevance mask has {} entries for {} phrases",
                    self.id,
                    mask.len(),
                    self.phrases.len()
                )));
            }
        }
        Ok(())
    }

    /// Ground truth as a labeling whose labels are the dataset step ids.
    pub fn gt_labeling(&self) -> Option<SegmentLabeling> {
        let segs = self.gt_segments.as_ref()?;
        let segs = segs
            .iter()
            .map(|s| Segment {
                label: s.step_id,
                start: s.start,
                end: s.end,
            })
            .collect::<Vec<_>>();
        SegmentLabeling::from_segments(self.video.len(), segs).ok()
    }

    /// Ground truth labeled by position in the step-text list: the k-th
    /// segment gets label k. This is the label space of zero-shot output.
    pub fn gt_ordinal_labeling(&self) -> Option<SegmentLabeling> {
        let segs = self.gt_segments.as_ref()?;
        let segs = segs
            .iter()
            .enumerate()
            .map(|(k, s)| Segment {
                label: k as i32,
                start: s.start,
                end: s.end,
            })
            .collect::<Vec<_>>();
        SegmentLabeling::from_segments(self.video.len(), segs).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    OneToOne,
    ManyToOne,
    /// Classic DTW warping paths: no drops, a column may repeat across rows.
    ManyToMany,
}

/// Result of an alignment between a row sequence (K elements) and a column
/// sequence (N elements).
///
/// Invariants are checked in [`Correspondence::new`]: every row and column is
/// either dropped or matched, a column matches at most one row, rows match at
/// most one column in one-to-one mode, and matches never cross.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    rows: usize,
    cols: usize,
    matches: Vec<bool>,
    total_cost: f64,
    dropped_rows: BTreeSet<usize>,
    dropped_cols: BTreeSet<usize>,
    mode: MatchMode,
}

impl Correspondence {
    pub fn new(
        rows: usize,
        cols: usize,
        pairs: &[(usize, usize)],
        dropped_rows: BTreeSet<usize>,
        dropped_cols: BTreeSet<usize>,
        total_cost: f64,
        mode: MatchMode,
    ) -> Result<Self> {
        let mut matches = vec![false; rows * cols];
        for &(i, j) in pairs {
            if i >= rows || j >= cols {
                return Err(Error::InvalidArgument(format!(
                    "match ({i}, {j}) outside {rows}x{cols}"
                )));
            }
            matches[i * cols + j] = true;
        }
        let c = Self {
            rows,
            cols,
            matches,
            total_cost,
            dropped_rows,
            dropped_cols,
            mode,
        };
        c.check_invariants()?;
        Ok(c)
    }

    fn check_invariants(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(format!("correspondence: {msg}")));
        let mut last_col: Option<usize> = None;
        for i in 0..self.rows {
            let matched: Vec<usize> = self.row_matches(i).collect();
            let dropped = self.dropped_rows.contains(&i);
            if dropped && !matched.is_empty() {
                return bad(format!("dropped row {i} has matches"));
            }
            if !dropped && matched.is_empty() {
                return bad(format!("row {i} neither dropped nor matched"));
            }
            if self.mode == MatchMode::OneToOne && matched.len() > 1 {
                return bad(format!("row {i} matched {} times", matched.len()));
            }
            if let (Some(&first), Some(prev)) = (matched.first(), last_col) {
                let crosses = match self.mode {
                    MatchMode::ManyToMany => first < prev,
                    _ => first <= prev,
                };
                if crosses {
                    return bad(format!("row {i} crosses an earlier row"));
                }
            }
            if let Some(&last) = matched.last() {
                last_col = Some(last);
            }
        }
        for j in 0..self.cols {
            let count = (0..self.rows).filter(|&i| self.is_match(i, j)).count();
            let dropped = self.dropped_cols.contains(&j);
            if dropped && count > 0 {
                return bad(format!("dropped column {j} has matches"));
            }
            let count_ok = match self.mode {
                MatchMode::ManyToMany => count >= 1,
                _ => count == 1,
            };
            if !dropped && !count_ok {
                return bad(format!("column {j} matched {count} times"));
            }
        }
        if self.dropped_rows.iter().any(|&i| i >= self.rows)
            || self.dropped_cols.iter().any(|&j| j >= self.cols)
        {
            return bad("drop index out of range".into());
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    #[inline]
    pub fn is_match(&self, i: usize, j: usize) -> bool {
        self.matches[i * self.cols + j]
    }

    pub fn row_matches(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.cols).filter(move |&j| self.is_match(i, j))
    }

    /// The row matched to column `j`, if any.
    pub fn col_match(&self, j: usize) -> Option<usize> {
        (0..self.rows).find(|&i| self.is_match(i, j))
    }

    /// Matched `(row, col)` pairs in row-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            out.extend(self.row_matches(i).map(|j| (i, j)));
        }
        out
    }

    pub fn num_matches(&self) -> usize {
        self.matches.iter().filter(|&&m| m).count()
    }

    pub fn dropped_rows(&self) -> &BTreeSet<usize> {
        &self.dropped_rows
    }

    pub fn dropped_cols(&self) -> &BTreeSet<usize> {
        &self.dropped_cols
    }

    pub fn num_drops(&self) -> usize {
        self.dropped_rows.len() + self.dropped_cols.len()
    }

    /// Binary K×N match matrix as 0/1 entries.
    pub fn match_matrix(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            if self.is_match(i, j) {
                1.0
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: i32,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per-frame labels together with the `(label, start, end)` segments that
/// cover them. Frames inside a segment span may still be background when the
/// producer reports only a subset of frames (see alignment-based inference).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLabeling {
    frame_labels: Vec<i32>,
    segments: Vec<Segment>,
}

impl SegmentLabeling {
    /// Validates that segments are sorted and disjoint, and that every
    /// labeled frame lies in a segment carrying the same label.
    pub fn new(frame_labels: Vec<i32>, segments: Vec<Segment>) -> Result<Self> {
        let n = frame_labels.len();
        let mut prev_end: Option<usize> = None;
        for s in &segments {
            if s.start > s.end || s.end >= n || s.label < 0 {
                return Err(Error::InvalidArgument(format!(
                    "segment {s:?} invalid for {n} frames"
                )));
            }
            if prev_end.is_some_and(|e| s.start <= e) {
                return Err(Error::InvalidArgument(format!(
                    "segment {s:?} unsorted or overlapping"
                )));
            }
            prev_end = Some(s.end);
        }
        let mut owner = vec![BACKGROUND; n];
        for s in &segments {
            owner[s.start..=s.end].fill(s.label);
        }
        for (f, (&l, &o)) in frame_labels.iter().zip(&owner).enumerate() {
            if l < BACKGROUND {
                return Err(Error::InvalidArgument(format!("frame {f} has label {l}")));
            }
            if l != BACKGROUND && l != o {
                return Err(Error::InvalidArgument(format!(
                    "frame {f} labeled {l} outside a matching segment"
                )));
            }
        }
        Ok(Self {
            frame_labels,
            segments,
        })
    }

    /// Segments are the maximal runs of equal non-background labels.
    pub fn from_frame_labels(frame_labels: Vec<i32>) -> Result<Self> {
        let mut segments = Vec::new();
        let mut f = 0;
        while f < frame_labels.len() {
            let l = frame_labels[f];
            let start = f;
            while f + 1 < frame_labels.len() && frame_labels[f + 1] == l {
                f += 1;
            }
            if l != BACKGROUND {
                segments.push(Segment {
                    label: l,
                    start,
                    end: f,
                });
            }
            f += 1;
        }
        Self::new(frame_labels, segments)
    }

    /// Every frame inside a segment takes that segment's label.
    pub fn from_segments(num_frames: usize, segments: Vec<Segment>) -> Result<Self> {
        let mut labels = vec![BACKGROUND; num_frames];
        for s in &segments {
            if s.end >= num_frames {
                return Err(Error::InvalidArgument(format!(
                    "segment {s:?} beyond {num_frames} frames"
                )));
            }
            labels[s.start..=s.end].fill(s.label);
        }
        Self::new(labels, segments)
    }

    pub fn background(num_frames: usize) -> Self {
        Self {
            frame_labels: vec![BACKGROUND; num_frames],
            segments: Vec::new(),
        }
    }

    pub fn frame_labels(&self) -> &[i32] {
        &self.frame_labels
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn num_frames(&self) -> usize {
        self.frame_labels.len()
    }

    /// Replaces segment and frame labels through `f`. Labels mapped to
    /// background drop their segment and frames.
    pub fn relabel(&self, f: impl Fn(i32) -> i32) -> Result<Self> {
        let labels = self
            .frame_labels
            .iter()
            .map(|&l| if l == BACKGROUND { l } else { f(l) })
            .collect();
        let segments = self
            .segments
            .iter()
            .filter_map(|s| {
                let l = f(s.label);
                (l != BACKGROUND).then_some(Segment { label: l, ..*s })
            })
            .collect();
        Self::new(labels, segments)
    }
}
