use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate_manifest, write_reports, EvalOptions};
use super::predictor::Predictor;
use crate::error::{Error, Result};
use crate::eval::{scenario_report, ScenarioReport};
use crate::ingest::{DatasetManifest, ScenarioSpec};
use crate::models::{Arch, Checkpoint};
use crate::train::run::BEST_CHECKPOINT;
use crate::train::{train_run, TrainConfig};

/// The architecture × scenario grid, trained and tested with shared settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub archs: Vec<Arch>,
    pub scenarios: Vec<ScenarioSpec>,
    /// Every run starts from this; `arch` and `scenario` are overwritten.
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            archs: Arch::ALL.to_vec(),
            scenarios: ScenarioSpec::ALL.to_vec(),
            train: TrainConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn runs(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &scenario in &self.scenarios {
            for &arch in &self.archs {
                out.push(TrainConfig {
                    arch,
                    scenario,
                    ..self.train.clone()
                });
            }
        }
        out
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SweepConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad sweep config: {e}")))?;
        for run in cfg.runs() {
            run.validate()?;
        }
        if cfg.archs.is_empty() || cfg.scenarios.is_empty() {
            return Err(Error::Config("a sweep needs at least one architecture and scenario".into()));
        }
        Ok(cfg)
    }
}

pub fn run_dir_name(cfg: &TrainConfig) -> String {
    format!("{}_{}", cfg.arch, cfg.scenario)
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: ScenarioReport,
    pub run_dirs: Vec<PathBuf>,
}

/// Train every configuration, evaluate its best checkpoint on the test
/// split, and write `report.tsv` / `report.md` under `out_dir`. Finished
/// runs are resumed, not restarted.
pub fn run_sweep(
    manifest: &DatasetManifest,
    sweep: &SweepConfig,
    eval: &EvalOptions,
    out_dir: &Path,
) -> Result<SweepOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::new();
    let mut run_dirs = Vec::new();
    for cfg in sweep.runs() {
        let dir = out_dir.join(run_dir_name(&cfg));
        info!("sweep run {}", run_dir_name(&cfg));
        train_run(&cfg, manifest, &dir, true)?;
        let predictor = Predictor::from_checkpoint(Checkpoint::load(&dir.join(BEST_CHECKPOINT))?)?;
        let reports = evaluate_manifest(&predictor, manifest, eval)?;
        write_reports(&dir, &reports)?;
        rows.extend(reports);
        run_dirs.push(dir);
    }
    let report = scenario_report(rows)?;
    let tsv = out_dir.join("report.tsv");
    std::fs::write(&tsv, report.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
    let md = out_dir.join("report.md");
    std::fs::write(&md, report.to_markdown()).map_err(|e| Error::io(&md, e))?;
    Ok(SweepOutcome { report, run_dirs })
}
