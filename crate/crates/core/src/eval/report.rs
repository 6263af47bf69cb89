//! Scenario comparison tables: one table per input scenario, one row per
//! classifier, the five metrics for every test period, best values flagged.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionCounts, Metrics};
use crate::error::{Error, Result};

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "precision", "recall", "f1", "auc_pr"];
const METRIC_LABELS: [&str; 5] = ["Accuracy", "Precision", "Recall", "F1", "AUC-PR"];
const TSV_HEADER: &str = "scenario\tclassifier\tperiod\taccuracy\tprecision\trecall\tf1\tauc_pr";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scenario: String,
    pub classifier: String,
    pub period: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc_pr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<ConfusionCounts>,
}

impl MetricReport {
    pub fn new(
        scenario: impl Into<String>,
        classifier: impl Into<String>,
        period: impl Into<String>,
        m: &Metrics,
        auc_pr: Option<f64>,
    ) -> Self {
        MetricReport {
            scenario: scenario.into(),
            classifier: classifier.into(),
            period: period.into(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            auc_pr,
            counts: None,
        }
    }

    pub fn metric(&self, i: usize) -> Option<f64> {
        match i {
            0 => Some(self.accuracy),
            1 => Some(self.precision),
            2 => Some(self.recall),
            3 => Some(self.f1),
            4 => self.auc_pr,
            _ => None,
        }
    }

    fn key(&self) -> (String, String, String) {
        (self.scenario.clone(), self.classifier.clone(), self.period.clone())
    }
}

/// Values are compared at the 4-decimal precision they are printed with.
fn rounded(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioReport {
    rows: Vec<MetricReport>,
}

pub fn scenario_report(runs: Vec<MetricReport>) -> Result<ScenarioReport> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("a report needs at least one run".into()));
    }
    let mut seen = BTreeSet::new();
    for r in &runs {
        if !seen.insert(r.key()) {
            return Err(Error::DuplicateKey(format!(
                "{} / {} / {}",
                r.scenario, r.classifier, r.period
            )));
        }
    }
    Ok(ScenarioReport { rows: runs })
}

impl ScenarioReport {
    pub fn rows(&self) -> &[MetricReport] {
        &self.rows
    }

    /// Scenarios in first-appearance order.
    pub fn scenarios(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.scenario.as_str()) {
                out.push(&r.scenario);
            }
        }
        out
    }

    fn periods(&self, scenario: &str) -> Vec<&str> {
        let set: BTreeSet<&str> = self
            .rows
            .iter()
            .filter(|r| r.scenario == scenario)
            .map(|r| r.period.as_str())
            .collect();
        set.into_iter().collect()
    }

    fn classifiers(&self, scenario: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in self.rows.iter().filter(|r| r.scenario == scenario) {
            if !out.contains(&r.classifier.as_str()) {
                out.push(&r.classifier);
            }
        }
        out
    }

    fn find(&self, scenario: &str, classifier: &str, period: &str) -> Option<&MetricReport> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.classifier == classifier && r.period == period)
    }

    /// True when row `idx` holds the column maximum of metric `m` among the
    /// classifiers of its scenario and period (ties are all flagged).
    pub fn is_best(&self, idx: usize, m: usize) -> bool {
        let row = &self.rows[idx];
        let Some(v) = row.metric(m) else { return false };
        let best = self
            .rows
            .iter()
            .filter(|r| r.scenario == row.scenario && r.period == row.period)
            .filter_map(|r| r.metric(m))
            .map(rounded)
            .fold(f64::NEG_INFINITY, f64::max);
        rounded(v) == best
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{TSV_HEADER}\n");
        for r in &self.rows {
            let _ = write!(out, "{}\t{}\t{}", r.scenario, r.classifier, r.period);
            for m in 0..METRIC_NAMES.len() {
                match r.metric(m) {
                    Some(v) => {
                        let _ = write!(out, "\t{v:.4}");
                    }
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next() != Some(TSV_HEADER) {
            return Err(Error::Data("report header does not match".into()));
        }
        let mut rows = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 {
                return Err(Error::Data(format!("bad report line `{line}`")));
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Data(format!("bad metric value `{s}`")))
            };
            rows.push(MetricReport {
                scenario: f[0].into(),
                classifier: f[1].into(),
                period: f[2].into(),
                accuracy: num(f[3])?,
                precision: num(f[4])?,
                recall: num(f[5])?,
                f1: num(f[6])?,
                auc_pr: if f[7] == "-" { None } else { Some(num(f[7])?) },
                counts: None,
            });
        }
        scenario_report(rows)
    }

    /// One markdown table per scenario; best values in bold.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for scenario in self.scenarios() {
            let periods = self.periods(scenario);
            let _ = writeln!(out, "### Scenario {scenario}\n");
            out.push_str("| Classifier |");
            for p in &periods {
                for l in METRIC_LABELS {
                    let _ = write!(out, " {p} {l} |");
                }
            }
            out.push_str("\n|---|");
            out.push_str(&"---:|".repeat(periods.len() * METRIC_LABELS.len()));
            out.push('\n');
            for classifier in self.classifiers(scenario) {
                let _ = write!(out, "| {classifier} |");
                for p in &periods {
                    let row = self.find(scenario, classifier, p);
                    let idx = row.map(|r| {
                        self.rows.iter().position(|x| std::ptr::eq(x, r)).expect("row in report")
                    });
                    for m in 0..METRIC_LABELS.len() {
                        match (row.and_then(|r| r.metric(m)), idx) {
                            (Some(v), Some(i)) if self.is_best(i, m) => {
                                let _ = write!(out, " **{v:.4}** |");
                            }
                            (Some(v), _) => {
                                let _ = write!(out, " {v:.4} |");
                            }
                            (None, _) => out.push_str(" - |"),
                        }
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(classifier: &str, period: &str, v: [f64; 5]) -> MetricReport {
        MetricReport {
            scenario: "S1".into(),
            classifier: classifier.into(),
            period: period.into(),
            accuracy: v[0],
            precision: v[1],
            recall: v[2],
            f1: v[3],
            auc_pr: Some(v[4]),
            counts: None,
        }
    }

    #[test]
    fn one_run_one_row() {
        let r = scenario_report(vec![run("unet", "2019", [0.9; 5])]).unwrap();
        assert_eq!(r.rows().len(), 1);
        assert_eq!(r.to_tsv().lines().count(), 2);
    }

    #[test]
    fn best_flags_follow_elementwise_winner() {
        let r = scenario_report(vec![
            run("unet", "2019", [0.88, 0.91, 0.90, 0.90, 0.88]),
            run("fcn32_vgg16", "2019", [0.87, 0.92, 0.89, 0.90, 0.89]),
        ])
        .unwrap();
        let flags: Vec<Vec<bool>> = (0..2).map(|i| (0..5).map(|m| r.is_best(i, m)).collect()).collect();
        assert_eq!(flags[0], vec![true, false, true, true, false]);
        assert_eq!(flags[1], vec![false, true, false, true, true]);
        assert!(r.to_markdown().contains("**0.8800**"));
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = scenario_report(vec![run("unet", "2019", [0.5; 5]), run("unet", "2019", [0.6; 5])]);
        assert!(matches!(err, Err(Error::DuplicateKey(_))));
    }

    #[test]
    fn tsv_round_trip_at_four_decimals() {
        let r = scenario_report(vec![
            run("unet", "2019", [0.882_149, 0.907_33, 0.906_7, 0.902_6, 0.882_8]),
            run("unet", "2020", [0.1, 0.2, 0.3, 0.4, 0.123_456]),
        ])
        .unwrap();
        let text = r.to_tsv();
        let back = ScenarioReport::from_tsv(&text).unwrap();
        assert_eq!(back.to_tsv(), text);
        for (a, b) in r.rows().iter().zip(back.rows()) {
            for m in 0..5 {
                assert!((a.metric(m).unwrap() - b.metric(m).unwrap()).abs() <= 5e-5);
            }
        }
    }
}
