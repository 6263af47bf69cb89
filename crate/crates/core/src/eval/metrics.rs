use std::iter::Sum;
use std::ops::{Add, AddAssign};

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Default probability cut for turning a probability map into a mask.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Pixel confusion counts with forest (1) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn tally(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionCounts::default(), Add::add)
    }
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{}x{}", b.0, b.1), format!("{}x{}", a.0, a.1)));
    }
    Ok(())
}

pub fn confusion(pred: &BinaryMask, target: &BinaryMask) -> Result<ConfusionCounts> {
    confusion_labels(pred.labels().view(), target.labels().view())
}

pub fn confusion_labels(pred: ArrayView2<u8>, target: ArrayView2<u8>) -> Result<ConfusionCounts> {
    check_dims(pred.dim(), target.dim())?;
    let mut c = ConfusionCounts::default();
    Zip::from(&pred)
        .and(&target)
        .for_each(|&p, &t| c.tally(p == 1, t == 1));
    Ok(c)
}

/// Counts for `probs ≥ threshold` against the target labels.
pub fn confusion_at(
    probs: ArrayView2<f64>,
    target: ArrayView2<u8>,
    threshold: f64,
) -> Result<ConfusionCounts> {
    check_dims(probs.dim(), target.dim())?;
    let mut c = ConfusionCounts::default();
    Zip::from(&probs)
        .and(&target)
        .for_each(|&p, &t| c.tally(p >= threshold, t == 1));
    Ok(c)
}

pub fn binarize(probs: ArrayView2<f64>, threshold: f64) -> Array2<u8> {
    probs.mapv(|p| u8::from(p >= threshold))
}

/// Which ratios had a zero denominator (and were reported as 0).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degeneracy {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl Degeneracy {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: Degeneracy,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

pub fn metrics(c: &ConfusionCounts) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Data("no pixels were evaluated".into()));
    }
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let (precision, dp) = ratio(tp, tp + fp);
    let (recall, dr) = ratio(tp, tp + fn_);
    let (f1, df) = ratio(2.0 * precision * recall, precision + recall);
    Ok(Metrics {
        accuracy: (tp + tn) / total as f64,
        precision,
        recall,
        f1,
        degenerate: Degeneracy {
            precision: dp,
            recall: dr,
            f1: df,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoGrid;

    fn mask(labels: Array2<u8>) -> BinaryMask {
        let (h, w) = labels.dim();
        BinaryMask::new(GeoGrid::from_origin(-5.0, 6.0, 10.0, w, h).unwrap(), labels).unwrap()
    }

    #[test]
    fn perfect_and_inverted() {
        let ones = mask(Array2::ones((2, 2)));
        let c = confusion(&ones, &ones).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 4, ..Default::default() });
        let t = mask(Array2::from_shape_vec((2, 2), vec![1, 0, 1, 0]).unwrap());
        let p = mask(Array2::from_shape_vec((2, 2), vec![0, 1, 0, 1]).unwrap());
        let c = confusion(&p, &t).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn hand_metrics() {
        let m = metrics(&ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 }).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.5, 0.5, 0.5, 0.5));
        let m = metrics(&ConfusionCounts { tp: 50, fp: 0, tn: 50, fn_: 0 }).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(!m.degenerate.any());
    }

    #[test]
    fn counts_scaled_to_table_row() {
        // precision 9067/9993 and recall 9067/10000
        let m = metrics(&ConfusionCounts { tp: 9067, fp: 926, tn: 30000, fn_: 933 }).unwrap();
        assert_eq!(format!("{:.4}", m.precision), "0.9073");
        assert_eq!(format!("{:.4}", m.recall), "0.9067");
    }

    #[test]
    fn zero_denominators_flagged() {
        let m = metrics(&ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 0 }).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert!(m.degenerate.precision && m.degenerate.recall && m.degenerate.f1);
        assert!(metrics(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn threshold_consistency() {
        let probs = Array2::from_shape_vec((1, 4), vec![0.2, 0.5, 0.7, 0.49]).unwrap();
        let target = Array2::from_shape_vec((1, 4), vec![0u8, 1, 0, 1]).unwrap();
        let a = confusion_at(probs.view(), target.view(), 0.5).unwrap();
        let b = confusion_labels(binarize(probs.view(), 0.5).view(), target.view()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
    }
}
