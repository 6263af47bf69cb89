use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::warn;
use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use super::*;
use canopy::ingest::{
    build_manifest, read_manifest, write_manifest, write_synthetic_dataset, DatasetManifest, ScenarioSpec, Split,
    SyntheticDatasetParams, SyntheticSceneParams,
};
use canopy::models::{Arch, Checkpoint};
use canopy::pipeline::{
    detect_periods, evaluate_manifest, run_sweep, write_reports, DetectOptions, EvalOptions,
    Predictor, SweepConfig,
};
use canopy::preprocess::{split_dataset, SplitRatios};
use canopy::eval::{scenario_report, ThresholdSweep};
use canopy::train::{train_run, TrainConfig};
use canopy::Error;

/// Recursively overlay `top` onto `base`.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(text
        .parse::<Table>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
}

/// `base`, then the flag table, then the config file, deserialized as `T`.
fn layered<T: Serialize + DeserializeOwned>(base: &T, flags: Table, file: Option<&Path>) -> Result<T> {
    let mut table = Table::try_from(base).context("encoding defaults")?;
    merge(&mut table, flags);
    if let Some(path) = file {
        merge(&mut table, read_table(path)?);
    }
    Ok(Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("bad configuration: {e}")))?)
}

fn override_table(o: &TrainOverrides) -> Result<Table> {
    // canonical spellings, so `--scenario s1` means S1
    let arch = o.arch.as_deref().map(str::parse::<Arch>).transpose()?;
    let scenario = o.scenario.as_deref().map(str::parse::<ScenarioSpec>).transpose()?;
    let mut t = Table::new();
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            t.insert(k.into(), v);
        }
    };
    put("arch", arch.map(|a| Value::String(a.name().into())));
    put("scenario", scenario.map(|s| Value::String(s.name().into())));
    put("epochs", o.epochs.map(|v| Value::Integer(v as i64)));
    put("batch_size", o.batch_size.map(|v| Value::Integer(v as i64)));
    put("learning_rate", o.learning_rate.map(Value::Float));
    put("base_width", o.base_width.map(|v| Value::Integer(v as i64)));
    put("depth", o.depth.map(|v| Value::Integer(v as i64)));
    put("seed", o.seed.map(|v| Value::Integer(v as i64)));
    put("threshold", o.threshold.map(Value::Float));
    put(
        "periods",
        o.periods
            .clone()
            .map(|p| Value::Array(p.into_iter().map(Value::String).collect())),
    );
    Ok(t)
}

/// A manifest file, or a dataset root indexed on the fly.
fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if path.is_dir() {
        let built = build_manifest(path)?;
        for s in &built.skipped {
            warn!("skipped {}: {}", s.path.display(), s.reason);
        }
        Ok(built.manifest)
    } else if path.is_file() {
        Ok(read_manifest(path)?)
    } else {
        Err(Error::Data(format!("manifest {} does not exist", path.display())).into())
    }
}

fn predictor(src: &ModelSource) -> Result<Predictor> {
    match &src.checkpoint {
        Some(p) => Ok(Predictor::from_checkpoint(Checkpoint::load(p)?)?),
        None => Ok(Predictor::Reference),
    }
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let built = build_manifest(&a.root)?;
    for s in &built.skipped {
        println!("skip\t{}\t{}", s.path.display(), s.reason);
    }
    let mut manifest = built.manifest;
    if manifest.entries.is_empty() {
        return Err(Error::Data(format!("no complete tiles under {}", a.root.display())).into());
    }
    if a.split {
        split_dataset(&manifest, SplitRatios::default(), a.split_seed)?.apply(&mut manifest);
    }
    write_manifest(&a.out, &manifest)?;
    println!(
        "{} entries, {} skipped -> {}",
        manifest.entries.len(),
        built.skipped.len(),
        a.out.display()
    );
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let flags = SyntheticDatasetParams {
        n_tiles: a.tiles,
        periods: a.periods.clone(),
        deforestation_fraction: a.deforestation,
        scene: SyntheticSceneParams {
            seed: a.seed,
            tile_px: a.tile_px,
            forest_fraction: a.forest_fraction,
            cloud_fraction: a.cloud_fraction,
            ..Default::default()
        },
    };
    let params: SyntheticDatasetParams = layered(&flags, Table::new(), a.config.as_deref())?;
    let ids = write_synthetic_dataset(&a.out, &params)?;
    println!(
        "{} tiles x {} periods -> {}",
        ids.len(),
        params.periods.len(),
        a.out.display()
    );
    Ok(())
}

fn check_writable(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(|e| anyhow::Error::new(Error::Config(format!("{e:#}"))))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = layered(&TrainConfig::default(), override_table(&a.overrides)?, a.config.as_deref())?;
    if let Some(m) = &a.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(d) = &a.run_dir {
        cfg.run_dir = Some(d.clone());
    }
    cfg.validate()?;
    let manifest_path = cfg
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no manifest given (--manifest or `manifest` key)".into()))?;
    let run_dir = cfg
        .run_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}_{}", cfg.arch, cfg.scenario)));
    // fail before any compute if inputs or outputs are unusable
    let manifest = load_manifest(&manifest_path)?;
    check_writable(&run_dir)?;
    let out = train_run(&cfg, &manifest, &run_dir, a.resume)?;
    if let Some(m) = out.val_metrics {
        println!(
            "best epoch {}: val accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
            out.best_epoch, m.accuracy, m.precision, m.recall, m.f1
        );
    } else {
        println!("trained {} epochs (no validation split)", out.history.records.len());
    }
    println!("run directory: {}", run_dir.display());
    Ok(())
}

fn split_of(s: SplitArg) -> Option<Split> {
    match s {
        SplitArg::Train => Some(Split::Train),
        SplitArg::Val => Some(Split::Val),
        SplitArg::Test => Some(Split::Test),
        SplitArg::All => None,
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    if let Some(out) = &a.out {
        check_writable(out)?;
    }
    let p = predictor(&a.model)?;
    let opts = EvalOptions {
        split: split_of(a.split),
        periods: a.periods.clone(),
        threshold: a.threshold,
        sweep: if a.exact_pr {
            ThresholdSweep::Exact
        } else {
            ThresholdSweep::default()
        },
    };
    let reports = evaluate_manifest(&p, &manifest, &opts)?;
    if let Some(out) = &a.out {
        write_reports(out, &reports)?;
    }
    print!("{}", scenario_report(reports)?.to_tsv());
    Ok(())
}

pub fn detect(a: &DetectArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    check_writable(&a.out)?;
    let p = predictor(&a.model)?;
    let opts = DetectOptions {
        period_a: a.period_a.clone(),
        period_b: a.period_b.clone(),
        threshold: a.threshold,
        out_dir: Some(a.out.clone()),
        style: Default::default(),
    };
    if let Some(w) = canopy::change::period_gap_warning(&a.period_a, &a.period_b) {
        eprintln!("warning: {w}");
    }
    let out = detect_periods(&p, &manifest, &opts)?;
    print!("tiles\t{}\n{}", out.tiles.len(), out.area.to_text());
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    check_writable(&a.out)?;
    let mut flags = Table::new();
    flags.insert("train".into(), Value::Table(override_table(&a.overrides)?));
    let cfg: SweepConfig = layered(&SweepConfig::default(), flags, a.config.as_deref())?;
    let cfg = SweepConfig::from_toml(&toml::to_string(&cfg).context("encoding sweep config")?)?;
    let out = run_sweep(&manifest, &cfg, &EvalOptions::default(), &a.out)?;
    if out.report.rows().is_empty() {
        bail!("sweep produced no rows");
    }
    print!("{}", out.report.to_markdown());
    Ok(())
}
