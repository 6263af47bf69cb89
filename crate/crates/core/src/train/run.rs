//! Run directory layout:
//!
//! - `config.toml`: frozen training configuration
//! - `manifest.tsv`: the manifest with the split assignment used
//! - `stats.tsv`: normalization percentiles fitted on the training split
//! - `history.tsv`: one line per completed epoch
//! - `last.ckpt`: latest weights with optimizer state (resume point)
//! - `best.ckpt`: weights with the best validation F1 so far

use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use super::config::TrainConfig;
use super::data::{ensure_split, fit_split_stats, load_samples};
use super::trainer::{sample_metrics, EpochRecord, TrainHistory, Trainer};
use crate::error::{Error, Result};
use crate::eval::Metrics;
use crate::ingest::{write_manifest, DatasetManifest, Split};
use crate::models::{Checkpoint, CheckpointMeta};
use crate::preprocess::NormalizationStats;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const STATS_FILE: &str = "stats.tsv";
pub const HISTORY_FILE: &str = "history.tsv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub history: TrainHistory,
    pub best_epoch: usize,
    /// Validation metrics of the best checkpoint.
    pub val_metrics: Option<Metrics>,
}

fn meta_for(trainer: &Trainer, stats: &NormalizationStats) -> Result<CheckpointMeta> {
    let mut meta = CheckpointMeta::new(trainer.model.config().clone());
    meta.scenario = Some(trainer.config.scenario);
    meta.normalization = Some(stats.clone());
    meta.train_config = Some(
        serde_json::to_value(&trainer.config)
            .map_err(|e| Error::Config(format!("cannot encode training config: {e}")))?,
    );
    Ok(meta)
}

/// Write `bytes` via a temporary sibling so a crash never leaves a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn save_epoch(
    dir: &Path,
    trainer: &Trainer,
    stats: &NormalizationStats,
    rec: &EpochRecord,
) -> Result<()> {
    let mut meta = meta_for(trainer, stats)?;
    meta.epoch = Some(trainer.epoch);
    meta.val_f1 = Some(rec.val_f1);
    let last = Checkpoint {
        meta: meta.clone(),
        model: trainer.model.clone(),
        optimizer: Some(trainer.optimizer.clone()),
    };
    write_atomic(&dir.join(LAST_CHECKPOINT), &last.to_bytes()?)?;
    if let Some((f1, epoch, _)) = &trainer.best {
        if *epoch == rec.epoch {
            meta.epoch = Some(*epoch);
            meta.val_f1 = Some(*f1);
            let best = Checkpoint::new(meta, trainer.model.clone());
            write_atomic(&dir.join(BEST_CHECKPOINT), &best.to_bytes()?)?;
        }
    }
    write_atomic(&dir.join(HISTORY_FILE), trainer.history.to_tsv().as_bytes())
}

/// Train per `config` on `manifest`, writing artifacts under `run_dir`.
/// With `resume`, an existing `last.ckpt` there is continued exactly.
pub fn train_run(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    run_dir: &Path,
    resume: bool,
) -> Result<RunOutcome> {
    config.validate()?;
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let last_path = run_dir.join(LAST_CHECKPOINT);
    let resuming = resume && last_path.is_file();

    let mut manifest = manifest.clone();
    ensure_split(&mut manifest, config.split, config.seed)?;
    let stats = if resuming {
        NormalizationStats::load(&run_dir.join(STATS_FILE))?
    } else {
        fit_split_stats(&manifest, &config.periods, config.scenario, config.orientation)?
    };
    write_manifest(&run_dir.join(MANIFEST_FILE), &manifest)?;
    stats.save(&run_dir.join(STATS_FILE))?;
    fs::write(run_dir.join(CONFIG_FILE), config.to_toml())
        .map_err(|e| Error::io(run_dir.join(CONFIG_FILE), e))?;

    let train = load_samples(&manifest, Split::Train, &config.periods, config.scenario, &stats)?;
    let val = load_samples(&manifest, Split::Val, &config.periods, config.scenario, &stats)?;
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    info!(
        "{} on {}: {} train / {} val samples",
        config.arch,
        config.scenario,
        train.len(),
        val.len()
    );

    let mut trainer = if resuming {
        let last = Checkpoint::load(&last_path)?;
        let best_path = run_dir.join(BEST_CHECKPOINT);
        let best = if best_path.is_file() {
            Some(Checkpoint::load(&best_path)?)
        } else {
            None
        };
        let text = fs::read_to_string(run_dir.join(HISTORY_FILE))
            .map_err(|e| Error::io(run_dir.join(HISTORY_FILE), e))?;
        info!("resuming from epoch {}", last.meta.epoch.unwrap_or(0));
        Trainer::resume(config.clone(), last, best, TrainHistory::from_tsv(&text)?)?
    } else {
        Trainer::new(config.clone())?
    };

    trainer.fit(&train, &val, |t, rec| {
        info!(
            "epoch {}: train loss {:.5}, val loss {:.5}, val F1 {:.4} ({:.1}s)",
            rec.epoch, rec.train_loss, rec.val_loss, rec.val_f1, rec.seconds
        );
        save_epoch(run_dir, t, &stats, rec)
    })?;

    let best_epoch = trainer.best.as_ref().map_or(0, |b| b.1);
    let val_metrics = if val.is_empty() {
        None
    } else {
        Some(sample_metrics(&trainer.best_model()?, &val, config)?)
    };
    Ok(RunOutcome {
        run_dir: run_dir.to_path_buf(),
        history: trainer.history,
        best_epoch,
        val_metrics,
    })
}
