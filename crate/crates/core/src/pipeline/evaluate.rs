use std::path::Path;

use rayon::prelude::*;

use super::predictor::Predictor;
use crate::error::{Error, Result};
use crate::eval::{confusion_at, metrics, ConfusionCounts, MetricReport, PrAccumulator, ThresholdSweep};
use crate::ingest::{DatasetManifest, ManifestEntry, Split};
use crate::train::ensure_split;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// `None` evaluates every entry regardless of split.
    pub split: Option<Split>,
    /// Periods to report; empty means every period present.
    pub periods: Vec<String>,
    pub threshold: f64,
    pub sweep: ThresholdSweep,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            split: Some(Split::Test),
            periods: Vec::new(),
            threshold: crate::eval::DEFAULT_THRESHOLD,
            sweep: ThresholdSweep::default(),
        }
    }
}

struct TileEval {
    counts: ConfusionCounts,
    pr: PrAccumulator,
}

fn eval_entries(
    predictor: &Predictor,
    manifest: &DatasetManifest,
    entries: &[&ManifestEntry],
    opts: &EvalOptions,
) -> Result<TileEval> {
    let parts = entries
        .par_iter()
        .map(|e| {
            let (probs, labels) = predictor.predict_tile(manifest.load_tile(e)?)?;
            let counts = confusion_at(probs.view(), labels.view(), opts.threshold)?;
            let mut pr = PrAccumulator::new(opts.sweep)?;
            pr.add(probs.view(), labels.view())?;
            Ok(TileEval { counts, pr })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = TileEval {
        counts: ConfusionCounts::default(),
        pr: PrAccumulator::new(opts.sweep)?,
    };
    for p in parts {
        total.counts += p.counts;
        total.pr.merge(&p.pr)?;
    }
    Ok(total)
}

/// Pooled metrics per period over the selected entries.
pub fn evaluate_manifest(
    predictor: &Predictor,
    manifest: &DatasetManifest,
    opts: &EvalOptions,
) -> Result<Vec<MetricReport>> {
    let mut manifest = manifest.clone();
    if opts.split.is_some() {
        if let Predictor::Model { split: Some((ratios, seed)), .. } = predictor {
            ensure_split(&mut manifest, *ratios, *seed)?;
        }
        if manifest.entries.iter().all(|e| e.split.is_none()) {
            return Err(Error::Data(
                "manifest has no split assignment; use the run directory's manifest".into(),
            ));
        }
    }
    let periods = if opts.periods.is_empty() {
        manifest.periods()
    } else {
        opts.periods.clone()
    };
    let mut reports = Vec::new();
    for period in periods {
        let entries: Vec<&ManifestEntry> = manifest
            .entries
            .iter()
            .filter(|e| e.period == period && opts.split.map_or(true, |s| e.split == Some(s)))
            .collect();
        if entries.is_empty() {
            return Err(Error::Data(format!(
                "no {} tiles for period `{period}`",
                opts.split.map_or("", |s| s.as_str())
            )));
        }
        let total = eval_entries(predictor, &manifest, &entries, opts)?;
        let m = metrics(&total.counts)?;
        let auc = match total.pr.auc() {
            Ok(v) => Some(v),
            Err(Error::NoPositives) => None,
            Err(e) => return Err(e),
        };
        let mut report = MetricReport::new(
            predictor.scenario_name(),
            predictor.classifier_name(),
            period,
            &m,
            auc,
        );
        report.counts = Some(total.counts);
        reports.push(report);
    }
    Ok(reports)
}

/// File name for one report: `metrics_<arch>_<scenario>_<period>.tsv`.
pub fn report_file_name(r: &MetricReport) -> String {
    format!("metrics_{}_{}_{}.tsv", r.classifier, r.scenario, r.period)
}

pub fn write_reports(dir: &Path, reports: &[MetricReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in reports {
        let table = crate::eval::scenario_report(vec![r.clone()])?;
        let path = dir.join(report_file_name(r));
        std::fs::write(&path, table.to_tsv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
