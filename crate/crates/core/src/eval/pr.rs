//! Precision–recall curves and their trapezoidal area.
//!
//! Operating points are "predict forest where p ≥ t". They are visited from
//! the highest threshold down, which orders them by non-decreasing recall
//! (ties keep the higher threshold first). Thresholds at which nothing is
//! predicted positive have no precision and are skipped. The curve is
//! anchored at recall 0 with the precision of the highest-threshold defined
//! point, and the lowest threshold always yields recall 1.

use ndarray::{ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLDS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSweep {
    /// `n` thresholds `k / (n - 1)`, k = 0..n.
    Uniform(usize),
    /// Every distinct score is a threshold.
    Exact,
}

impl Default for ThresholdSweep {
    fn default() -> Self {
        ThresholdSweep::Uniform(DEFAULT_THRESHOLDS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Mergeable accumulator over any number of probability maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PrAccumulator {
    sweep: ThresholdSweep,
    /// Uniform sweep: pixels whose highest passed threshold index is k.
    pos_hist: Vec<u64>,
    neg_hist: Vec<u64>,
    /// Exact sweep: raw (score, is_forest) pairs.
    scores: Vec<(f64, bool)>,
}

fn grid_threshold(k: usize, n: usize) -> f64 {
    k as f64 / (n - 1) as f64
}

/// Index of the highest grid threshold `≤ p`, or `None` below the grid.
fn grid_index(p: f64, n: usize) -> Option<usize> {
    if p < 0.0 {
        return None;
    }
    let mut k = ((p * (n - 1) as f64).floor() as usize).min(n - 1);
    while k + 1 < n && grid_threshold(k + 1, n) <= p {
        k += 1;
    }
    while grid_threshold(k, n) > p {
        if k == 0 {
            return None;
        }
        k -= 1;
    }
    Some(k)
}

impl PrAccumulator {
    pub fn new(sweep: ThresholdSweep) -> Result<Self> {
        let bins = match sweep {
            ThresholdSweep::Uniform(n) if n < 2 => {
                return Err(Error::InvalidArgument(format!(
                    "a uniform sweep needs at least 2 thresholds, got {n}"
                )))
            }
            ThresholdSweep::Uniform(n) => n,
            ThresholdSweep::Exact => 0,
        };
        Ok(PrAccumulator {
            sweep,
            pos_hist: vec![0; bins],
            neg_hist: vec![0; bins],
            scores: Vec::new(),
        })
    }

    pub fn sweep(&self) -> ThresholdSweep {
        self.sweep
    }

    pub fn add(&mut self, probs: ArrayView2<f64>, target: ArrayView2<u8>) -> Result<()> {
        if probs.dim() != target.dim() {
            return Err(Error::shape(
                format!("{:?}", target.dim()),
                format!("{:?}", probs.dim()),
            ));
        }
        if probs.iter().any(|p| p.is_nan()) {
            return Err(Error::Numerical("probability map contains NaN".into()));
        }
        match self.sweep {
            ThresholdSweep::Uniform(n) => Zip::from(&probs).and(&target).for_each(|&p, &t| {
                if let Some(k) = grid_index(p, n) {
                    if t == 1 {
                        self.pos_hist[k] += 1;
                    } else {
                        self.neg_hist[k] += 1;
                    }
                } else if t == 1 {
                    // counted as a positive that no threshold recovers
                    self.scores.push((p, true));
                }
            }),
            ThresholdSweep::Exact => Zip::from(&probs)
                .and(&target)
                .for_each(|&p, &t| self.scores.push((p, t == 1))),
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &PrAccumulator) -> Result<()> {
        if self.sweep != other.sweep {
            return Err(Error::InvalidArgument("cannot merge different threshold sweeps".into()));
        }
        for (a, b) in self.pos_hist.iter_mut().zip(&other.pos_hist) {
            *a += b;
        }
        for (a, b) in self.neg_hist.iter_mut().zip(&other.neg_hist) {
            *a += b;
        }
        self.scores.extend_from_slice(&other.scores);
        Ok(())
    }

    fn positives(&self) -> u64 {
        match self.sweep {
            ThresholdSweep::Uniform(_) => {
                self.pos_hist.iter().sum::<u64>() + self.scores.len() as u64
            }
            ThresholdSweep::Exact => self.scores.iter().filter(|s| s.1).count() as u64,
        }
    }

    /// Defined operating points, highest threshold first.
    pub fn curve(&self) -> Result<Vec<PrPoint>> {
        let positives = self.positives();
        if positives == 0 {
            return Err(Error::NoPositives);
        }
        let p = positives as f64;
        let mut points = Vec::new();
        let mut push = |threshold: f64, tp: u64, fp: u64| {
            if tp + fp > 0 {
                points.push(PrPoint {
                    threshold,
                    recall: tp as f64 / p,
                    precision: tp as f64 / (tp + fp) as f64,
                });
            }
        };
        match self.sweep {
            ThresholdSweep::Uniform(n) => {
                let (mut tp, mut fp) = (0, 0);
                for k in (0..n).rev() {
                    tp += self.pos_hist[k];
                    fp += self.neg_hist[k];
                    push(grid_threshold(k, n), tp, fp);
                }
            }
            ThresholdSweep::Exact => {
                let mut sorted = self.scores.clone();
                sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
                let (mut tp, mut fp) = (0, 0);
                for (i, &(s, pos)) in sorted.iter().enumerate() {
                    if pos {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                    if sorted.get(i + 1).map_or(true, |next| next.0 != s) {
                        push(s, tp, fp);
                    }
                }
            }
        }
        Ok(points)
    }

    pub fn auc(&self) -> Result<f64> {
        Ok(trapezoid_auc(&self.curve()?))
    }
}

/// Trapezoidal area under points ordered by non-decreasing recall, starting
/// from the recall-0 anchor at the first point's precision.
pub fn trapezoid_auc(points: &[PrPoint]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let (mut r0, mut p0) = (0.0, first.precision);
    let mut area = 0.0;
    for pt in points {
        area += (pt.recall - r0) * (pt.precision + p0) / 2.0;
        r0 = pt.recall;
        p0 = pt.precision;
    }
    area
}

pub fn auc_pr(probs: ArrayView2<f64>, target: ArrayView2<u8>, n_thresholds: usize) -> Result<f64> {
    auc_pr_with(probs, target, ThresholdSweep::Uniform(n_thresholds))
}

pub fn auc_pr_with(
    probs: ArrayView2<f64>,
    target: ArrayView2<u8>,
    sweep: ThresholdSweep,
) -> Result<f64> {
    let mut acc = PrAccumulator::new(sweep)?;
    acc.add(probs, target)?;
    acc.auc()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn row(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    fn labels(v: &[u8]) -> Array2<u8> {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_ranking_is_one() {
        let t = labels(&[1, 0, 1, 1, 0]);
        let p = t.mapv(f64::from);
        assert_eq!(auc_pr(p.view(), t.view(), 101).unwrap(), 1.0);
        assert_eq!(auc_pr_with(p.view(), t.view(), ThresholdSweep::Exact).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores_give_prevalence() {
        let t = Array2::from_shape_fn((100, 100), |(i, j)| u8::from((i * 100 + j) % 4 != 0));
        let p = Array2::from_elem((100, 100), 0.5);
        let auc = auc_pr(p.view(), t.view(), 101).unwrap();
        assert!((auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn six_pixel_case() {
        let p = row(&[0.9, 0.8, 0.7, 0.3, 0.2, 0.1]);
        let t = labels(&[1, 1, 0, 1, 0, 0]);
        // anchor (0,1); (1/3,1); (2/3,1); (2/3,2/3); (1,3/4); (1,3/5); (1,1/2)
        let want = 1.0 / 3.0 + 1.0 / 3.0 + (1.0 / 3.0) * (2.0 / 3.0 + 0.75) / 2.0;
        for sweep in [ThresholdSweep::Exact, ThresholdSweep::Uniform(101)] {
            let got = auc_pr_with(p.view(), t.view(), sweep).unwrap();
            assert!((got - want).abs() < 1e-12, "{sweep:?}: {got}");
        }
    }

    #[test]
    fn grid_index_agrees_with_comparisons() {
        for i in 0..=1000 {
            let p = i as f64 / 1000.0;
            let k = grid_index(p, 101).unwrap();
            assert!(grid_threshold(k, 101) <= p);
            assert!(k == 100 || grid_threshold(k + 1, 101) > p);
        }
        assert_eq!(grid_index(-0.1, 101), None);
        assert_eq!(grid_index(1.5, 101), Some(100));
    }

    #[test]
    fn no_positives_rejected() {
        let p = row(&[0.3, 0.6]);
        let t = labels(&[0, 0]);
        assert!(matches!(auc_pr(p.view(), t.view(), 101), Err(Error::NoPositives)));
    }

    #[test]
    fn merge_equals_joint() {
        let p = row(&[0.9, 0.8, 0.7, 0.3, 0.2, 0.1]);
        let t = labels(&[1, 1, 0, 1, 0, 0]);
        for sweep in [ThresholdSweep::Exact, ThresholdSweep::Uniform(11)] {
            let mut a = PrAccumulator::new(sweep).unwrap();
            a.add(p.slice(ndarray::s![.., ..3]), t.slice(ndarray::s![.., ..3])).unwrap();
            let mut b = PrAccumulator::new(sweep).unwrap();
            b.add(p.slice(ndarray::s![.., 3..]), t.slice(ndarray::s![.., 3..])).unwrap();
            a.merge(&b).unwrap();
            assert_eq!(a.auc().unwrap(), auc_pr_with(p.view(), t.view(), sweep).unwrap());
        }
    }
}
