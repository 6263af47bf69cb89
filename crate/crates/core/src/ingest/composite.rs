use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterChip;

/// How surviving acquisitions are combined per pixel and band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositeMethod {
    #[default]
    Median,
    Mean,
    First,
}

/// Median composite of the acquisitions whose cloud fraction is at most `max_cloud`.
pub fn composite_median(
    chips: &[RasterChip],
    cloud_fractions: &[f64],
    max_cloud: f64,
) -> Result<RasterChip> {
    composite(chips, cloud_fractions, max_cloud, CompositeMethod::Median)
}

pub fn composite(
    chips: &[RasterChip],
    cloud_fractions: &[f64],
    max_cloud: f64,
    method: CompositeMethod,
) -> Result<RasterChip> {
    if chips.len() != cloud_fractions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} chips but {} cloud fractions",
            chips.len(),
            cloud_fractions.len()
        )));
    }
    if let Some(first) = chips.first() {
        for chip in &chips[1..] {
            first.grid().ensure_aligned(chip.grid(), "composite inputs")?;
            if chip.band_names() != first.band_names() {
                return Err(Error::InvalidArgument(
                    "composite inputs have different band lists".into(),
                ));
            }
        }
    }
    let survivors: Vec<&RasterChip> = chips
        .iter()
        .zip(cloud_fractions)
        .filter(|(_, &cf)| cf <= max_cloud)
        .map(|(c, _)| c)
        .collect();
    let Some(&first) = survivors.first() else {
        return Err(Error::NoCloudFreeCoverage(chips.len()));
    };
    if survivors.len() == 1 || method == CompositeMethod::First {
        return Ok(first.clone());
    }

    let mut out = Array3::<f64>::zeros(first.bands().dim());
    match method {
        CompositeMethod::Mean => {
            for chip in &survivors {
                out += chip.bands();
            }
            out /= survivors.len() as f64;
        }
        CompositeMethod::Median => {
            let mut stack = vec![0.0; survivors.len()];
            Zip::indexed(&mut out).for_each(|idx, v| {
                for (slot, chip) in stack.iter_mut().zip(&survivors) {
                    *slot = chip.bands()[idx];
                }
                *v = median(&mut stack);
            });
        }
        CompositeMethod::First => unreachable!(),
    }
    RasterChip::new(first.grid().clone(), out, first.band_names().to_vec())
}

/// Median with the mean of the two middle values for even counts.
fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
