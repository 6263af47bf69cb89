use ndarray::{ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::nn::PROB_EPS;

/// Mean over pixels of `-[w_pos·y·ln p + w_neg·(1-y)·ln(1-p)]`, with `p`
/// clamped to `[ε, 1-ε]`.
pub fn weighted_bce(
    pred: ArrayView2<f64>,
    target: ArrayView2<u8>,
    w_pos: f64,
    w_neg: f64,
) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::shape(
            format!("{:?}", target.dim()),
            format!("{:?}", pred.dim()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty prediction".into()));
    }
    if let Some(p) = pred.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    if let Some(t) = target.iter().find(|&&t| t > 1) {
        return Err(Error::InvalidArgument(format!("target label {t} is not binary")));
    }
    let mut sum = 0.0;
    Zip::from(&pred).and(&target).for_each(|&p, &t| {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        sum -= if t == 1 {
            w_pos * p.ln()
        } else {
            w_neg * (1.0 - p).ln()
        };
    });
    Ok(sum / pred.len() as f64)
}
