//! End-to-end commands over an output directory: corpus generation,
//! training, evaluation, inference, value curves and plots.
//!
//! Layout under the output directory:
//!
//! ```text
//! corpus/{train,val,test}.jsonl   trajectories
//! corpus/crops.bin                 rendered crop archive
//! checkpoints/{cql,bc}.ckpt        trained weights (+ optimizer state for cql)
//! train_log.txt                    one row per epoch
//! reports/<split>/<method>.csv     per-trajectory errors
//! predictions/<split>.jsonl        rollouts
//! qcurve/<split>.jsonl             per-step pessimistic values
//! plots/*.svg
//! manifest-<command>.json
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{Checkpoint, CheckpointError};
use crate::baselines::{straightline_baseline, BcBaseline};
use crate::config::{ConfigError, RunConfig};
use crate::cql::{LossReport, TrainError, Trainer, TrainingSet};
use crate::dataset::{build_corpus, DatasetError, Episode};
use crate::geom::{read_corpus, write_corpus, CorpusError, PixelPoint, Trajectory};
use crate::metrics::{conservative_fraction, parse_metrics_csv, qcurve, wilcoxon_signed_rank, MetricsError, MetricsReport, QCurve, WilcoxonResult};
use crate::model::{ModelError, TrajModel};
use crate::plot;
use crate::rollout::{predict_all, Rollout, RolloutError};
use crate::synthgen::{generate_corpus, CropArchive, CropArchiveError, SynthError};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const CROPS_FILE: &str = "crops.bin";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Corpus {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error("{path}: {source}")]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: CheckpointError,
    },
    #[error("{path}: {source}")]
    Crops {
        path: PathBuf,
        #[source]
        source: CropArchiveError,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl PipelineError {
    /// Usage and configuration problems, as opposed to runtime failures.
    pub fn is_usage(&self) -> bool {
        matches!(self, Self::Config(_) | Self::Usage(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

fn hex(digest: &[u8]) -> String {
    digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Trajectories of every split plus their crops.
pub struct Corpus {
    pub splits: [Vec<Trajectory>; 3],
    pub crops: CropArchive,
}

impl Corpus {
    pub fn split(&self, name: &str) -> Result<&[Trajectory], PipelineError> {
        SPLITS
            .iter()
            .position(|s| *s == name)
            .map(|i| self.splits[i].as_slice())
            .ok_or_else(|| PipelineError::Usage(format!("unknown split {name:?}")))
    }

    pub fn read(dir: &Path) -> Result<Self, PipelineError> {
        let read = |name: &str| {
            let path = dir.join(format!("{name}.jsonl"));
            read_corpus(&path).map_err(|source| PipelineError::Corpus { path, source })
        };
        let splits = [read("train")?, read("val")?, read("test")?];
        let path = dir.join(CROPS_FILE);
        let crops = CropArchive::read(&path).map_err(|source| PipelineError::Crops { path, source })?;
        Ok(Self { splits, crops })
    }

    /// SHA-256 over the split files and crop archive as stored.
    pub fn hash_dir(dir: &Path) -> Result<String, PipelineError> {
        let mut h = Sha256::new();
        for name in SPLITS.iter().map(|s| format!("{s}.jsonl")).chain([CROPS_FILE.to_string()]) {
            let path = dir.join(&name);
            h.update(std::fs::read(&path).map_err(io_err(&path))?);
        }
        Ok(hex(&h.finalize()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub corpus_sha256: String,
    pub config: String,
    pub outputs: Vec<(String, String)>,
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, corpus_dir: &Path, outputs: &[PathBuf]) -> Result<Manifest, PipelineError> {
    let mut hashed = Vec::new();
    for p in outputs {
        let bytes = std::fs::read(p).map_err(io_err(p))?;
        let rel = p.strip_prefix(out).unwrap_or(p).display().to_string();
        hashed.push((rel, hex(&Sha256::digest(&bytes))));
    }
    let m = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_hash: format!("{:016x}", cfg.hash()),
        corpus_sha256: Corpus::hash_dir(corpus_dir)?,
        config: cfg.to_text(),
        outputs: hashed,
    };
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    write_file(&out.join(format!("manifest-{command}.json")), json + "\n")?;
    Ok(m)
}

pub fn gen_data(cfg: &RunConfig, corpus_dir: &Path, out: &Path) -> Result<Manifest, PipelineError> {
    cfg.validate().map_err(PipelineError::Usage)?;
    let corpus = generate_corpus(&cfg.synth)?;
    let e = &cfg.model.encoder;
    let crops = CropArchive::render(&corpus, e.crop_size, e.crop_extent_px).map_err(|source| PipelineError::Crops {
        path: corpus_dir.join(CROPS_FILE),
        source,
    })?;
    std::fs::create_dir_all(corpus_dir).map_err(io_err(corpus_dir))?;
    let mut outputs = Vec::new();
    for (name, trajs) in SPLITS.iter().zip([&corpus.train, &corpus.val, &corpus.test]) {
        let path = corpus_dir.join(format!("{name}.jsonl"));
        write_corpus(&path, trajs, true).map_err(|source| PipelineError::Corpus { path: path.clone(), source })?;
        outputs.push(path);
    }
    let path = corpus_dir.join(CROPS_FILE);
    crops.write(&path).map_err(|source| PipelineError::Crops { path: path.clone(), source })?;
    outputs.push(path);
    write_manifest(out, "gen-data", cfg, corpus_dir, &outputs)
}

/// Episodes and clips for one split.
pub fn training_set(cfg: &RunConfig, trajectories: &[Trajectory], crops: &CropArchive) -> Result<TrainingSet, PipelineError> {
    if crops.size != cfg.model.encoder.crop_size {
        return Err(PipelineError::Usage(format!(
            "crop archive holds {}-cell crops, config expects {}",
            crops.size, cfg.model.encoder.crop_size
        )));
    }
    let (episodes, _skipped) = build_corpus(trajectories, &cfg.episode, &cfg.actions, &cfg.reward)?;
    Ok(TrainingSet::build(episodes, crops, cfg.model.encoder.guidance_radius)?)
}

/// One structured row of the training log.
pub fn log_row(r: &LossReport, wall_s: f64) -> String {
    format!(
        "epoch={} updates={} transitions={} critic={:.6e} bellman={:.6e} cql_penalty={:.6e} policy={:.6e} bc={:.6e} magnitude={:.6e} mean_q={:.6e} clamped={} lr_encoder={:.4e} lr_actor={:.4e} lr_critic={:.4e} lr_mag={:.4e} wall_s={wall_s:.3}",
        r.epoch, r.updates, r.transitions, r.critic, r.bellman, r.cql_penalty, r.policy, r.bc, r.magnitude, r.mean_q, r.clamped_targets, r.lr_encoder, r.lr_actor, r.lr_critic, r.lr_magnitude
    )
}

/// Trains the agent for `cfg.train.epochs` epochs, reporting each epoch to `on_epoch`.
pub fn train_agent(cfg: &RunConfig, set: &TrainingSet, mut on_epoch: impl FnMut(&LossReport, f64)) -> Result<Trainer, PipelineError> {
    let model = TrajModel::new(cfg.model.clone())?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    for _ in 0..cfg.train.epochs {
        let t = Instant::now();
        let r = trainer.train_epoch(set)?;
        on_epoch(&r, t.elapsed().as_secs_f64());
    }
    Ok(trainer)
}

pub fn train_bc(cfg: &RunConfig, set: &TrainingSet) -> Result<BcBaseline, PipelineError> {
    let mut bc = BcBaseline::new(cfg.bc())?;
    for _ in 0..cfg.bc_epochs {
        bc.train_epoch(set)?;
    }
    Ok(bc)
}

pub fn cql_path(out: &Path) -> PathBuf {
    out.join("checkpoints").join("cql.ckpt")
}

pub fn bc_path(out: &Path) -> PathBuf {
    out.join("checkpoints").join("bc.ckpt")
}

pub fn train(cfg: &RunConfig, corpus_dir: &Path, out: &Path) -> Result<Manifest, PipelineError> {
    cfg.validate().map_err(PipelineError::Usage)?;
    let corpus = Corpus::read(corpus_dir)?;
    let set = training_set(cfg, corpus.split("train")?, &corpus.crops)?;
    let mut log = String::new();
    let trainer = train_agent(cfg, &set, |r, wall| {
        log.push_str(&log_row(r, wall));
        log.push('\n');
    })?;
    let log_path = out.join("train_log.txt");
    write_file(&log_path, &log)?;

    let meta = [("kind".to_string(), "cql".to_string()), ("preset".to_string(), cfg.preset.clone())];
    let cql = cql_path(out);
    std::fs::create_dir_all(cql.parent().expect("has parent")).map_err(io_err(out))?;
    trainer
        .to_checkpoint(cfg.hash(), &meta)
        .write_atomic(&cql)
        .map_err(|source| PipelineError::Checkpoint { path: cql.clone(), source })?;

    let bc = train_bc(cfg, &set)?;
    let bcp = bc_path(out);
    bc.to_checkpoint(cfg.hash())
        .write_atomic(&bcp)
        .map_err(|source| PipelineError::Checkpoint { path: bcp.clone(), source })?;
    write_manifest(out, "train", cfg, corpus_dir, &[log_path, cql, bcp])
}

fn read_checkpoint(path: &Path) -> Result<Checkpoint, PipelineError> {
    Checkpoint::read(path).map_err(|source| PipelineError::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads the agent; a config-hash mismatch is returned as a warning.
pub fn load_agent(cfg: &RunConfig, path: &Path) -> Result<(TrajModel, Option<String>, usize), PipelineError> {
    let ckpt = read_checkpoint(path)?;
    let warning = (ckpt.config_hash != cfg.hash()).then(|| {
        format!(
            "checkpoint {} was trained with config hash {:016x}, current config hashes to {:016x}",
            path.display(),
            ckpt.config_hash,
            cfg.hash()
        )
    });
    let epochs = ckpt.meta("epochs_done").and_then(|v| v.parse().ok()).unwrap_or(0);
    Ok((TrajModel::from_checkpoint(&ckpt)?, warning, epochs))
}

/// Agent rollouts for every episode of `set`.
pub fn agent_rollouts(cfg: &RunConfig, model: &TrajModel, set: &TrainingSet) -> Result<Vec<Rollout>, PipelineError> {
    let obs: Vec<_> = set.episodes.iter().map(|e| &e.observation).collect();
    let clips: Vec<_> = set.clips.iter().collect();
    Ok(predict_all(model, &obs, &clips, &cfg.guidance, &cfg.actions)?)
}

pub fn straightline_rollouts(cfg: &RunConfig, set: &TrainingSet) -> Result<Vec<Rollout>, PipelineError> {
    Ok(set
        .episodes
        .iter()
        .map(|e| straightline_baseline(&e.observation, &cfg.guidance))
        .collect::<Result<_, _>>()?)
}

pub fn bc_rollouts(bc: &BcBaseline, set: &TrainingSet) -> Result<Vec<Rollout>, PipelineError> {
    let obs: Vec<_> = set.episodes.iter().map(|e| &e.observation).collect();
    let clips: Vec<_> = set.clips.iter().collect();
    Ok(bc.predict_all(&obs, &clips)?)
}

pub fn report(method: &str, episodes: &[Episode], rollouts: &[Rollout]) -> Result<MetricsReport, PipelineError> {
    let resolution = episodes.first().ok_or(DatasetError::EmptyCorpus)?.observation.resolution;
    let ids: Vec<String> = episodes.iter().map(|e| e.id.clone()).collect();
    let preds: Vec<Vec<PixelPoint>> = rollouts.iter().map(|r| r.points.clone()).collect();
    let truths: Vec<Vec<PixelPoint>> = episodes.iter().map(|e| e.ground_truth.clone()).collect();
    Ok(MetricsReport::from_predictions(method, resolution, &ids, &preds, &truths)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub split: String,
    pub method: String,
    pub baseline: String,
    pub metric: String,
    pub test: Option<WilcoxonResult>,
    pub note: Option<String>,
}

/// Evaluation outcome per split: one report per method plus paired tests.
pub struct Evaluation {
    pub reports: Vec<(String, MetricsReport)>,
    pub comparisons: Vec<Comparison>,
    pub warnings: Vec<String>,
}

pub fn evaluate(cfg: &RunConfig, corpus_dir: &Path, checkpoint: &Path, out: &Path) -> Result<Evaluation, PipelineError> {
    let corpus = Corpus::read(corpus_dir)?;
    let (model, warning, _) = load_agent(cfg, checkpoint)?;
    let mut warnings: Vec<String> = warning.into_iter().collect();
    let bc_file = checkpoint.with_file_name("bc.ckpt");
    let bc = if bc_file.exists() {
        Some(BcBaseline::from_checkpoint(&read_checkpoint(&bc_file)?)?)
    } else {
        warnings.push(format!("{} not found; skipping the behaviour-cloning baseline", bc_file.display()));
        None
    };
    let mut reports = Vec::new();
    let mut comparisons = Vec::new();
    let mut outputs = Vec::new();
    for split in ["val", "test"] {
        let trajs = corpus.split(split)?;
        if trajs.is_empty() {
            continue;
        }
        let set = training_set(cfg, trajs, &corpus.crops)?;
        let mut methods = vec![
            ("cql", agent_rollouts(cfg, &model, &set)?),
            ("straightline", straightline_rollouts(cfg, &set)?),
        ];
        if let Some(bc) = &bc {
            methods.push(("bc", bc_rollouts(bc, &set)?));
        }
        let dir = out.join("reports").join(split);
        let mut split_reports = Vec::new();
        for (name, rollouts) in &methods {
            let rep = report(name, &set.episodes, rollouts)?;
            rep.write(&dir, name)?;
            outputs.push(dir.join(format!("{name}.csv")));
            outputs.push(dir.join(format!("{name}.summary.json")));
            split_reports.push(rep);
        }
        let agent_ade: Vec<f64> = split_reports[0].rows.iter().map(|r| r.ade_px).collect();
        for other in &split_reports[1..] {
            let base: Vec<f64> = other.rows.iter().map(|r| r.ade_px).collect();
            let (test, note) = match wilcoxon_signed_rank(&agent_ade, &base) {
                Ok(t) => (Some(t), None),
                Err(e) => (None, Some(e.to_string())),
            };
            comparisons.push(Comparison {
                split: split.to_string(),
                method: "cql".into(),
                baseline: other.method.clone(),
                metric: "ade_px".into(),
                test,
                note,
            });
        }
        reports.extend(split_reports.into_iter().map(|r| (split.to_string(), r)));
    }
    let cmp_path = out.join("reports").join("comparisons.json");
    write_file(&cmp_path, serde_json::to_string_pretty(&comparisons).expect("serializes") + "\n")?;
    outputs.push(cmp_path);
    write_manifest(out, "eval", cfg, corpus_dir, &outputs)?;
    Ok(Evaluation {
        reports,
        comparisons,
        warnings,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub trajectory_id: String,
    pub observed: Vec<[f64; 2]>,
    pub observed_px: Vec<[f64; 2]>,
    pub predicted: Vec<[f64; 2]>,
    pub predicted_px: Vec<[f64; 2]>,
    pub guidance: Vec<[f64; 2]>,
}

pub fn infer(cfg: &RunConfig, corpus_dir: &Path, checkpoint: &Path, out: &Path, split: &str) -> Result<Vec<String>, PipelineError> {
    let corpus = Corpus::read(corpus_dir)?;
    let (model, warning, _) = load_agent(cfg, checkpoint)?;
    let set = training_set(cfg, corpus.split(split)?, &corpus.crops)?;
    let rollouts = agent_rollouts(cfg, &model, &set)?;
    let mut text = String::new();
    for (e, r) in set.episodes.iter().zip(&rollouts) {
        let res = e.observation.resolution;
        let norm = |ps: &[PixelPoint]| ps.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>();
        let px = |ps: &[PixelPoint]| {
            ps.iter()
                .map(|p| {
                    let (x, y) = res.to_pixels(*p);
                    [x, y]
                })
                .collect::<Vec<_>>()
        };
        let observed: Vec<PixelPoint> = e.observation.step_points().into_iter().map(|(_, p)| p).collect();
        let rec = PredictionRecord {
            id: e.id.clone(),
            trajectory_id: e.observation.trajectory_id.clone(),
            observed: norm(&observed),
            observed_px: px(&observed),
            predicted: norm(&r.points),
            predicted_px: px(&r.points),
            guidance: norm(&r.guidance),
        };
        text.push_str(&serde_json::to_string(&rec).expect("serializes"));
        text.push('\n');
    }
    let path = out.join("predictions").join(format!("{split}.jsonl"));
    write_file(&path, text)?;
    write_manifest(out, "infer", cfg, corpus_dir, &[path])?;
    Ok(warning.into_iter().collect())
}

/// Q-curves of every episode of `set`.
pub fn qcurves(model: &TrajModel, set: &TrainingSet) -> Result<Vec<QCurve>, PipelineError> {
    Ok(set
        .episodes
        .iter()
        .zip(&set.clips)
        .map(|(e, c)| qcurve(model, e, c))
        .collect::<Result<_, _>>()?)
}

pub fn run_qcurve(cfg: &RunConfig, corpus_dir: &Path, checkpoint: &Path, out: &Path, split: &str) -> Result<(f64, Vec<String>), PipelineError> {
    let corpus = Corpus::read(corpus_dir)?;
    let (model, warning, epochs) = load_agent(cfg, checkpoint)?;
    if epochs == 0 {
        return Err(ModelError::UntrainedModel.into());
    }
    let set = training_set(cfg, corpus.split(split)?, &corpus.crops)?;
    let curves = qcurves(&model, &set)?;
    let text: String = curves.iter().map(|c| serde_json::to_string(c).expect("serializes") + "\n").collect();
    let path = out.join("qcurve").join(format!("{split}.jsonl"));
    write_file(&path, text)?;
    write_manifest(out, "qcurve", cfg, corpus_dir, &[path])?;
    Ok((conservative_fraction(&curves, 1e-6), warning.into_iter().collect()))
}

/// Renders SVGs from whatever reports and Q-curves exist under `out`.
pub fn run_plot(out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut written = Vec::new();
    let plots = out.join("plots");
    for split in ["val", "test"] {
        let dir = out.join("reports").join(split);
        let mut series = Vec::new();
        for method in ["cql", "bc", "straightline"] {
            let path = dir.join(format!("{method}.csv"));
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            let rows = parse_metrics_csv(&text)?;
            series.push((method.to_string(), rows.iter().map(|r| r.ade_px).collect::<Vec<_>>()));
        }
        if series.is_empty() {
            continue;
        }
        for (name, svg) in [
            (format!("{split}_ade_violin.svg"), plot::violin(&format!("ADE ({split})"), "pixels", &series)),
            (format!("{split}_ade_cdf.svg"), plot::cdf(&format!("ADE CDF ({split})"), "pixels", &series)),
        ] {
            let path = plots.join(name);
            write_file(&path, svg)?;
            written.push(path);
        }
        let qpath = out.join("qcurve").join(format!("{split}.jsonl"));
        if qpath.exists() {
            let text = std::fs::read_to_string(&qpath).map_err(io_err(&qpath))?;
            let curves: Vec<QCurve> = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| {
                    serde_json::from_str(l).map_err(|e| MetricsError::Csv {
                        line: i + 1,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<_, _>>()?;
            let path = plots.join(format!("{split}_qcurve.svg"));
            write_file(&path, plot::qcurve_lines(&format!("Q values ({split})"), &curves))?;
            written.push(path);
        }
    }
    if written.is_empty() {
        return Err(PipelineError::Usage(format!("no reports under {}; run eval first", out.display())));
    }
    Ok(written)
}
