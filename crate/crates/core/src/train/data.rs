use rayon::prelude::*;

use super::trainer::Sample;
use crate::error::{Error, Result};
use crate::ingest::{assemble_scenario, DatasetManifest, ManifestEntry, ScenarioSpec, Split, TileData};
use crate::preprocess::{
    fit_percentiles, percentile_normalize, split_dataset, NormalizationStats, Orientation,
    SplitRatios,
};
use crate::raster::RasterChip;

/// Assign splits when the manifest carries none; existing assignments are kept.
pub fn ensure_split(manifest: &mut DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<()> {
    if manifest.entries.iter().any(|e| e.split.is_some()) {
        return Ok(());
    }
    split_dataset(manifest, ratios, seed)?.apply(manifest);
    Ok(())
}

fn entries<'a>(
    manifest: &'a DatasetManifest,
    split: Split,
    periods: &'a [String],
) -> Vec<&'a ManifestEntry> {
    manifest.select(split, periods).collect()
}

fn scenario_chip(manifest: &DatasetManifest, e: &ManifestEntry, spec: ScenarioSpec) -> Result<(RasterChip, TileData)> {
    let tile = manifest.load_tile(e)?;
    Ok((assemble_scenario(&tile.sources, spec)?, tile))
}

/// Percentiles of the scenario bands over the training split.
pub fn fit_split_stats(
    manifest: &DatasetManifest,
    periods: &[String],
    spec: ScenarioSpec,
    orientation: Orientation,
) -> Result<NormalizationStats> {
    let train = entries(manifest, Split::Train, periods);
    if train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let chips = train
        .par_iter()
        .map(|e| scenario_chip(manifest, e, spec).map(|(c, _)| c))
        .collect::<Result<Vec<_>>>()?;
    Ok(fit_percentiles(&chips)?.with_orientation(orientation))
}

/// Normalized scenario input of a loaded tile.
pub fn tile_sample(tile: TileData, spec: ScenarioSpec, stats: &NormalizationStats) -> Result<Sample> {
    let chip = assemble_scenario(&tile.sources, spec)?;
    Ok(Sample {
        tile_id: tile.tile_id,
        period: tile.period,
        features: percentile_normalize(&chip, stats)?.into_parts().1,
        labels: tile.mask.into_labels(),
    })
}

/// Normalized scenario samples of one split, in manifest order.
pub fn load_samples(
    manifest: &DatasetManifest,
    split: Split,
    periods: &[String],
    spec: ScenarioSpec,
    stats: &NormalizationStats,
) -> Result<Vec<Sample>> {
    entries(manifest, split, periods)
        .par_iter()
        .map(|e| tile_sample(manifest.load_tile(e)?, spec, stats))
        .collect()
}
