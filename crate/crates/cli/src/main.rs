//! `stepalign`: data generation, training, localization, evaluation and
//! one-off alignment from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use stepalign_core::align::{drop_dtw, match_cost_matrix, percentile_drop_cost, CostSpec, DEFAULT_DROP_PERCENTILE};
use stepalign_core::eval::{
    framewise_metrics, unsupervised_protocol, zero_shot_protocol, Localization, Metrics, MetricsReport, ProtocolConfig,
};
use stepalign_core::infer::{localize_steps, zero_shot_localize};
use stepalign_core::io::read_embedding_file;
use stepalign_core::manifest::{load_dataset, read_json, save_dataset, write_json};
use stepalign_core::model::{load_checkpoint, save_checkpoint, ModelParams};
use stepalign_core::synth::{generate, SynthConfig};
use stepalign_core::train::{train_with, TrainConfig};
use stepalign_core::{DatasetSample, Error, ErrorKind, MatchMode};

const LOCALIZATIONS_FILE: &str = "localizations.json";
const SUMMARY_FILE: &str = "videos.json";

#[derive(Parser)]
#[command(name = "stepalign", version, about = "Step discovery and ordered step localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted steps.
    GenData {
        /// SynthConfig JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes a JSON-lines step log and checkpoints.
    Train {
        /// TrainConfig JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also checkpoint every this many epochs (0 = final only).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
    },
    /// Localize steps with the model's own slots.
    Localize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DROP_PERCENTILE)]
        percentile: f64,
    },
    /// Localize the given step texts of every video.
    Zeroshot {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DROP_PERCENTILE)]
        percentile: f64,
    },
    /// Score localizations against the manifest ground truth.
    Eval {
        /// Directory holding localizations.json.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Protocol::Unsupervised)]
        protocol: Protocol,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.6)]
        keep_fraction: f64,
        /// Pool frames over tasks instead of averaging task metrics.
        #[arg(long)]
        pooled: bool,
        /// Optional per-frame CSV (sample, frame, gt, pred).
        #[arg(long)]
        frames_csv: Option<PathBuf>,
    },
    /// Align two embedding files and print the correspondence as JSON.
    Align {
        #[arg(long)]
        rows: PathBuf,
        #[arg(long)]
        cols: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::OneToOne)]
        mode: Mode,
        #[arg(long, default_value_t = DEFAULT_DROP_PERCENTILE)]
        percentile: f64,
        /// Fixed drop cost for both sides instead of the percentile.
        #[arg(long, allow_negative_numbers = true)]
        drop_cost: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Unsupervised,
    Zeroshot,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "one_to_one")]
    OneToOne,
    #[value(name = "many_to_one")]
    ManyToOne,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    }
}

fn usage(message: String) -> Failure {
    Failure { code: 1, message }
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn configure_threads() -> Result<(), Failure> {
    let threads = match std::env::var("STEPALIGN_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("STEPALIGN_THREADS must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| usage(format!("thread pool: {e}")))
}

/// Per-video work in parallel; results keep dataset order.
fn per_video<T, F>(samples: &[DatasetSample], f: F) -> Result<Vec<T>, Failure>
where
    T: Send,
    F: Fn(&DatasetSample) -> stepalign_core::Result<T> + Sync,
{
    let parts: Vec<_> = samples.par_iter().map(&f).collect();
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.push(p?);
    }
    Ok(out)
}

fn gen_data(config: Option<PathBuf>, out: PathBuf) -> Result<(), Failure> {
    let cfg: SynthConfig = match config {
        Some(p) => read_json(p)?,
        None => SynthConfig::default(),
    };
    let synth = generate(&cfg)?;
    let manifest = save_dataset(&synth.dataset, &out)?;
    log::info!("wrote {} samples to {}", synth.dataset.samples.len(), manifest.display());
    Ok(())
}

fn train_cmd(config: Option<PathBuf>, data: PathBuf, out: PathBuf, every: usize) -> Result<(), Failure> {
    let cfg: TrainConfig = match config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    let dataset = load_dataset(&data)?;
    create_dir(&out)?;
    write_json(out.join("config.json"), &cfg)?;
    let steps_per_epoch = dataset.samples.len().div_ceil(cfg.batch_size.max(1)) as u64;
    let outcome = train_with(&dataset.samples, &cfg, |epoch, params| {
        log::info!("epoch {epoch}/{}", cfg.epochs);
        if every > 0 && epoch % every == 0 {
            let path = out.join(format!("checkpoint_epoch{epoch:03}.ckpt"));
            save_checkpoint(&path, params, epoch as u64 * steps_per_epoch, cfg.seed)?;
        }
        Ok(())
    })?;

    let log_path = out.join("train_log.jsonl");
    let mut text = String::new();
    for entry in &outcome.log {
        let line = serde_json::to_string(entry).map_err(|e| Failure {
            code: 2,
            message: e.to_string(),
        })?;
        writeln!(text, "{line}").expect("writing to a string");
    }
    fs::write(&log_path, text).map_err(|e| io_failure(&log_path, e))?;
    save_checkpoint(out.join("model.ckpt"), &outcome.params, outcome.log.len() as u64, cfg.seed)?;
    Ok(())
}

fn load_model(ckpt: &Path) -> Result<ModelParams, Failure> {
    Ok(load_checkpoint(ckpt)?.params)
}

/// Per-video digest written next to the localizations.
#[derive(Serialize)]
struct VideoSummary {
    sample_id: String,
    frames: usize,
    segments: usize,
    labeled_frames: usize,
    /// Slot-side drops and alignment cost; slot localization only.
    #[serde(skip_serializing_if = "Option::is_none")]
    dropped_slots: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_cost: Option<f64>,
    /// Against ground truth; zero-shot output only, since slot labels need
    /// the task-level clustering before they mean anything.
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<Metrics>,
}

fn summarize(loc: &Localization) -> VideoSummary {
    let labels = loc.labeling.frame_labels();
    VideoSummary {
        sample_id: loc.sample_id.clone(),
        frames: labels.len(),
        segments: loc.labeling.segments().len(),
        labeled_frames: labels.iter().filter(|&&l| l != stepalign_core::BACKGROUND).count(),
        dropped_slots: None,
        total_cost: None,
        metrics: None,
    }
}

fn localize_cmd(ckpt: PathBuf, data: PathBuf, out: PathBuf, percentile: f64, zero_shot: bool) -> Result<(), Failure> {
    let params = load_model(&ckpt)?;
    let dataset = load_dataset(&data)?;
    let results = per_video(&dataset.samples, |s| {
        let slots = params.forward(&s.video)?;
        if zero_shot {
            let texts = s
                .gt_step_texts
                .as_ref()
                .ok_or_else(|| Error::InvalidData(format!("sample {} has no step texts", s.id)))?;
            let loc = Localization {
                sample_id: s.id.clone(),
                labeling: zero_shot_localize(&slots, texts, &s.video, percentile)?,
                slots: None,
            };
            let mut summary = summarize(&loc);
            if let (Some(gt), Some(segs)) = (s.gt_labeling(), &s.gt_segments) {
                let map = segs.iter().enumerate().map(|(k, g)| (k as i32, g.step_id)).collect();
                summary.metrics = Some(framewise_metrics(&loc.labeling, &gt, &map)?);
            }
            Ok((loc, summary))
        } else {
            let (labeling, corr) = localize_steps(&slots, &s.video, percentile)?;
            let loc = Localization {
                sample_id: s.id.clone(),
                labeling,
                slots: Some(slots.into_matrix()),
            };
            let mut summary = summarize(&loc);
            summary.dropped_slots = Some(corr.dropped_rows().len());
            summary.total_cost = Some(corr.total_cost());
            Ok((loc, summary))
        }
    })?;
    let (locs, summaries): (Vec<Localization>, Vec<VideoSummary>) = results.into_iter().unzip();
    create_dir(&out)?;
    write_json(out.join(LOCALIZATIONS_FILE), &locs)?;
    write_json(out.join(SUMMARY_FILE), &summaries)?;
    log::info!("localized {} videos", locs.len());
    Ok(())
}

fn frames_csv(path: &Path, dataset: &[DatasetSample], locs: &[Localization]) -> Result<(), Failure> {
    let mut text = String::from("sample,frame,gt,pred\n");
    for (s, l) in dataset.iter().zip(locs) {
        let gt = s.gt_labeling().map(|g| g.frame_labels().to_vec()).unwrap_or_default();
        for (f, p) in l.labeling.frame_labels().iter().enumerate() {
            let g = gt.get(f).copied().unwrap_or(stepalign_core::BACKGROUND);
            writeln!(text, "{},{f},{g},{p}", s.id).expect("writing to a string");
        }
    }
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    pred: PathBuf,
    data: PathBuf,
    out: PathBuf,
    protocol: Protocol,
    seed: u64,
    keep_fraction: f64,
    pooled: bool,
    csv: Option<PathBuf>,
) -> Result<(), Failure> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(usage(format!("--keep-fraction must be in (0, 1], got {keep_fraction}")));
    }
    let dataset = load_dataset(&data)?;
    let locs: Vec<Localization> = read_json(pred.join(LOCALIZATIONS_FILE))?;
    let report: MetricsReport = match protocol {
        Protocol::Unsupervised => {
            let cfg = ProtocolConfig {
                seed,
                keep_fraction,
                pooled,
            };
            unsupervised_protocol(&dataset, &locs, &cfg)?
        }
        Protocol::Zeroshot => zero_shot_protocol(&dataset, &locs, pooled)?,
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json(&out, &report)?;
    if let Some(path) = csv {
        let by_id: std::collections::BTreeMap<&str, &Localization> =
            locs.iter().map(|l| (l.sample_id.as_str(), l)).collect();
        let ordered: Vec<Localization> = dataset
            .samples
            .iter()
            .filter_map(|s| by_id.get(s.id.as_str()).map(|l| (*l).clone()))
            .collect();
        frames_csv(&path, &dataset.samples, &ordered)?;
    }
    let m = report.overall;
    log::info!(
        "precision {:.4} recall {:.4} f1 {:.4} mof {:.4} iou {:.4}",
        m.precision,
        m.recall,
        m.f1,
        m.mof,
        m.iou
    );
    Ok(())
}

#[derive(Serialize)]
struct AlignOutput {
    mode: MatchMode,
    rows: usize,
    cols: usize,
    drop_cost: f64,
    pairs: Vec<(usize, usize)>,
    dropped_rows: Vec<usize>,
    dropped_cols: Vec<usize>,
    total_cost: f64,
}

fn align_cmd(
    rows: PathBuf,
    cols: PathBuf,
    mode: Mode,
    percentile: f64,
    drop_cost: Option<f64>,
    out: PathBuf,
) -> Result<(), Failure> {
    let r = read_embedding_file(&rows)?;
    let c = read_embedding_file(&cols)?;
    let costs = match_cost_matrix(&c, &r)?;
    let drop = match drop_cost {
        Some(d) => d,
        None => percentile_drop_cost(&costs, percentile)?,
    };
    let mode = match mode {
        Mode::OneToOne => MatchMode::OneToOne,
        Mode::ManyToOne => MatchMode::ManyToOne,
    };
    let corr = drop_dtw(&CostSpec::symmetric(costs, drop), mode)?;
    let output = AlignOutput {
        mode,
        rows: corr.rows(),
        cols: corr.cols(),
        drop_cost: drop,
        pairs: corr.pairs(),
        dropped_rows: corr.dropped_rows().iter().copied().collect(),
        dropped_cols: corr.dropped_cols().iter().copied().collect(),
        total_cost: corr.total_cost(),
    };
    write_json(&out, &output)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::GenData { config, out } => gen_data(config, out),
        Command::Train {
            config,
            data,
            out,
            checkpoint_every,
        } => train_cmd(config, data, out, checkpoint_every),
        Command::Localize {
            ckpt,
            data,
            out,
            percentile,
        } => localize_cmd(ckpt, data, out, percentile, false),
        Command::Zeroshot {
            ckpt,
            data,
            out,
            percentile,
        } => localize_cmd(ckpt, data, out, percentile, true),
        Command::Eval {
            pred,
            data,
            out,
            protocol,
            seed,
            keep_fraction,
            pooled,
            frames_csv,
        } => eval_cmd(pred, data, out, protocol, seed, keep_fraction, pooled, frames_csv),
        Command::Align {
            rows,
            cols,
            mode,
            percentile,
            drop_cost,
            out,
        } => align_cmd(rows, cols, mode, percentile, drop_cost, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are not errors
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = writeln!(std::io::stderr(), "error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
