//! Dataset manifests: one JSON document listing samples, with embedding
//! payloads stored as sibling `SEMB` files referenced by relative path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_embedding_file, write_embedding_file};
use crate::types::{DatasetSample, GtSegment, SequenceKind};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub name: String,
    /// Number of distinct ground-truth steps defined for the task.
    pub num_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub video: PathBuf,
    pub phrases: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_step_texts: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_segments: Option<Vec<GtSegment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase_relevance: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub tasks: Vec<TaskInfo>,
    pub samples: Vec<SampleEntry>,
}

/// A loaded dataset: samples plus task metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tasks: Vec<TaskInfo>,
    pub samples: Vec<DatasetSample>,
}

impl Dataset {
    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.video.dim())
    }

    /// Ground-truth step count for `task`: the declared value, or one more
    /// than the largest step id seen in that task's segments.
    pub fn num_steps(&self, task: &str) -> usize {
        if let Some(t) = self.tasks.iter().find(|t| t.name == task) {
            return t.num_steps;
        }
        self.samples
            .iter()
            .filter(|s| s.task.as_deref() == Some(task))
            .flat_map(|s| s.gt_segments.iter().flatten())
            .map(|g| g.step_id as usize + 1)
            .max()
            .unwrap_or(0)
    }

    /// Task names in first-appearance order; untasked samples fall under `""`.
    pub fn task_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for s in &self.samples {
            let t = s.task.clone().unwrap_or_default();
            if !names.contains(&t) {
                names.push(t);
            }
        }
        names
    }
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Reads a manifest and every embedding file it references.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in manifest.samples {
        let video = read_embedding_file(base.join(&e.video))?.with_kind(SequenceKind::Video);
        let phrases = read_embedding_file(base.join(&e.phrases))?.with_kind(SequenceKind::Phrases);
        let gt_step_texts = match &e.gt_step_texts {
            Some(p) => Some(read_embedding_file(base.join(p))?.with_kind(SequenceKind::StepTexts)),
            None => None,
        };
        let sample = DatasetSample {
            id: e.id,
            task: e.task,
            video,
            phrases,
            gt_segments: e.gt_segments,
            gt_step_texts,
            phrase_relevance: e.phrase_relevance,
        };
        sample.validate()?;
        samples.push(sample);
    }
    if let Some(first) = samples.first() {
        let d = first.video.dim();
        if let Some(bad) = samples.iter().find(|s| s.video.dim() != d) {
            return Err(Error::DimMismatch {
                left: d,
                right: bad.video.dim(),
            });
        }
    }
    Ok(Dataset {
        tasks: manifest.tasks,
        samples,
    })
}

/// Writes every sample as `SEMB` files under `dir` plus `dir/manifest.json`.
/// Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let emb_dir = dir.join("embeddings");
    fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;
    let mut entries = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let rel = |suffix: &str| PathBuf::from("embeddings").join(format!("{}.{suffix}.semb", s.id));
        let video = rel("video");
        let phrases = rel("phrases");
        write_embedding_file(&s.video, dir.join(&video))?;
        write_embedding_file(&s.phrases, dir.join(&phrases))?;
        let gt_step_texts = match &s.gt_step_texts {
            Some(t) => {
                let p = rel("steps");
                write_embedding_file(t, dir.join(&p))?;
                Some(p)
            }
            None => None,
        };
        entries.push(SampleEntry {
            id: s.id.clone(),
            task: s.task.clone(),
            video,
            phrases,
            gt_step_texts,
            gt_segments: s.gt_segments.clone(),
            phrase_relevance: s.phrase_relevance.clone(),
        });
    }
    let manifest = Manifest {
        tasks: dataset.tasks.clone(),
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
