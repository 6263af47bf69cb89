use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::predictor::Predictor;
use crate::change::{
    detect_change, period_gap_warning, write_overlay, AreaEstimate, ChangeCounts, OverlayStyle,
};
use crate::error::{Error, Result};
use crate::eval::binarize;
use crate::ingest::{DatasetManifest, ManifestEntry, Source, TileData};
use crate::raster::BinaryMask;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOptions {
    pub period_a: String,
    pub period_b: String,
    pub threshold: f64,
    /// Where change rasters, overlays and the area report go; nothing is
    /// written when `None`.
    pub out_dir: Option<PathBuf>,
    pub style: OverlayStyle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileChange {
    pub tile_id: String,
    pub counts: ChangeCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutcome {
    pub tiles: Vec<TileChange>,
    pub area: AreaEstimate,
    pub warning: Option<String>,
}

fn classify(predictor: &Predictor, tile: TileData, threshold: f64) -> Result<BinaryMask> {
    let grid = tile.mask.grid().clone();
    let (probs, _) = predictor.predict_tile(tile)?;
    BinaryMask::new(grid, binarize(probs.view(), threshold))
}

/// Classify every tile present in both periods, difference the maps and
/// total the areas.
pub fn detect_periods(
    predictor: &Predictor,
    manifest: &DatasetManifest,
    opts: &DetectOptions,
) -> Result<DetectOutcome> {
    let warning = period_gap_warning(&opts.period_a, &opts.period_b);
    let pairs: Vec<(&ManifestEntry, &ManifestEntry)> = manifest
        .entries
        .iter()
        .filter(|e| e.period == opts.period_a)
        .filter_map(|a| manifest.entry(&a.tile_id, &opts.period_b).map(|b| (a, b)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Data(format!(
            "no tile is present in both `{}` and `{}`",
            opts.period_a, opts.period_b
        )));
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let results = pairs
        .par_iter()
        .map(|(a, b)| {
            let tile_a = manifest.load_tile(a)?;
            let tile_b = manifest.load_tile(b)?;
            let base = tile_b
                .sources
                .get(&Source::S2)
                .or_else(|| tile_b.sources.get(&Source::S1))
                .cloned()
                .ok_or_else(|| Error::MissingSource("s2".into()))?;
            let m0 = classify(predictor, tile_a, opts.threshold)?;
            let m1 = classify(predictor, tile_b, opts.threshold)?;
            let change = detect_change(&m0, &m1)?;
            if let Some(dir) = &opts.out_dir {
                change.write(&dir.join("change").join(format!("{}.tif", a.tile_id)))?;
                write_overlay(
                    &dir.join("overlay").join(format!("{}.png", a.tile_id)),
                    &base,
                    &change,
                    &opts.style,
                )?;
            }
            Ok((
                TileChange {
                    tile_id: a.tile_id.clone(),
                    counts: change.counts(),
                },
                change.grid().pixel_size_m,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let pixel_size = results[0].1;
    if results.iter().any(|r| r.1 != pixel_size) {
        return Err(Error::GridMismatch("tiles have different pixel sizes".into()));
    }
    let tiles: Vec<TileChange> = results.into_iter().map(|r| r.0).collect();
    let area = AreaEstimate::from_counts(tiles.iter().map(|t| t.counts).sum(), pixel_size)?;
    if let Some(dir) = &opts.out_dir {
        write_detect_reports(dir, opts, &tiles, &area)?;
    }
    Ok(DetectOutcome {
        tiles,
        area,
        warning,
    })
}

fn write_detect_reports(dir: &Path, opts: &DetectOptions, tiles: &[TileChange], area: &AreaEstimate) -> Result<()> {
    let mut per_tile = String::from("tile_id\tstable_forest\tstable_nonforest\tdeforested\tafforested\n");
    for t in tiles {
        let c = &t.counts;
        let _ = writeln!(
            per_tile,
            "{}\t{}\t{}\t{}\t{}",
            t.tile_id, c.stable_forest, c.stable_nonforest, c.deforested, c.afforested
        );
    }
    let tiles_path = dir.join("tiles.tsv");
    std::fs::write(&tiles_path, per_tile).map_err(|e| Error::io(&tiles_path, e))?;
    let area_path = dir.join("area.tsv");
    let text = format!(
        "period_a\t{}\nperiod_b\t{}\ntiles\t{}\n{}",
        opts.period_a,
        opts.period_b,
        tiles.len(),
        area.to_text()
    );
    std::fs::write(&area_path, text).map_err(|e| Error::io(&area_path, e))
}
