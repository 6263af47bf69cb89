//! Synthetic Sentinel-like scenes for offline testing.
//!
//! The forest mask is a thresholded smooth random field. SAR backscatter is
//! a class-dependent mean in dB with multiplicative gamma speckle. Optical
//! reflectance is a class-dependent mean with additive noise, and clouds
//! (a second, independent smooth field) overwrite optical values and raise
//! the cloud-probability band while leaving SAR untouched.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::scenario::Source;
use crate::io;
use crate::raster::{BinaryMask, GeoGrid, RasterChip};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneParams {
    pub seed: u64,
    pub tile_px: usize,
    pub forest_fraction: f64,
    /// Smoothing radius of the forest field, in pixels.
    pub blob_scale: f64,
    pub cloud_fraction: f64,
    /// Smoothing radius of the cloud field, in pixels.
    pub cloud_scale: f64,
    /// Equivalent number of looks of the speckle (higher = less noise).
    pub sar_looks: f64,
    /// Forest minus non-forest mean backscatter in VH, dB (VV gets half).
    pub sar_separation_db: f64,
    /// Additive Gaussian noise on reflectance.
    pub optical_noise: f64,
    /// Scales the forest/non-forest reflectance contrast (1 = nominal).
    pub optical_separation: f64,
    pub pixel_size_m: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
}

impl Default for SyntheticSceneParams {
    fn default() -> Self {
        SyntheticSceneParams {
            seed: 0,
            tile_px: 64,
            forest_fraction: 0.75,
            blob_scale: 6.0,
            cloud_fraction: 0.0,
            cloud_scale: 8.0,
            sar_looks: 4.4,
            sar_separation_db: 4.0,
            optical_noise: 0.01,
            optical_separation: 1.0,
            pixel_size_m: 10.0,
            origin_lon: -6.0969,
            origin_lat: 7.1474,
        }
    }
}

impl SyntheticSceneParams {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        frac("forest_fraction", self.forest_fraction)?;
        frac("cloud_fraction", self.cloud_fraction)?;
        if self.tile_px < 8 {
            return Err(Error::InvalidArgument(format!(
                "tile_px must be at least 8, got {}",
                self.tile_px
            )));
        }
        if !(self.sar_looks > 0.0) || !(self.blob_scale >= 0.0) || !(self.cloud_scale >= 0.0) {
            return Err(Error::InvalidArgument(
                "sar_looks must be positive and smoothing scales non-negative".into(),
            ));
        }
        if !(self.optical_noise >= 0.0) || !(self.pixel_size_m > 0.0) {
            return Err(Error::InvalidArgument(
                "optical_noise must be non-negative and pixel_size_m positive".into(),
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GeoGrid> {
        GeoGrid::from_origin(
            self.origin_lon,
            self.origin_lat,
            self.pixel_size_m,
            self.tile_px,
            self.tile_px,
        )
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub features: BTreeMap<Source, RasterChip>,
    pub mask: BinaryMask,
}

// Independent random streams, so changing one component never shifts another.
const STREAM_FOREST: u64 = 1;
const STREAM_CLOUD: u64 = 2;
const STREAM_SAR: u64 = 3;
const STREAM_OPTICAL: u64 = 4;
const STREAM_CLEARING: u64 = 5;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Box blur along both axes with edge clamping.
fn box_blur(field: &Array2<f64>, radius: usize) -> Array2<f64> {
    if radius == 0 {
        return field.clone();
    }
    let (h, w) = field.dim();
    let r = radius as isize;
    let norm = 1.0 / (2 * radius + 1) as f64;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in -r..=r {
                acc += field[(y, clamp(x as isize + d, w))];
            }
            tmp[(y, x)] = acc * norm;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for d in -r..=r {
                acc += tmp[(clamp(y as isize + d, h), x)];
            }
            out[(y, x)] = acc * norm;
        }
    }
    out
}

/// White noise smoothed by three box-blur passes (close to a Gaussian kernel).
fn smooth_field(rng: &mut ChaCha8Rng, size: usize, scale: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut f = Array2::from_shape_simple_fn((size, size), || normal.sample(rng));
    let radius = scale.round() as usize;
    for _ in 0..3 {
        f = box_blur(&f, radius);
    }
    f
}

/// Mark exactly `round(fraction · n)` pixels holding the largest field values.
fn top_fraction(field: &Array2<f64>, fraction: f64) -> Array2<bool> {
    let n = field.len();
    let k = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let flat = field.as_slice().expect("standard layout");
    order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a]).then(a.cmp(&b)));
    let mut out = Array2::from_elem(field.dim(), false);
    let out_flat = out.as_slice_mut().expect("standard layout");
    for &i in &order[..k] {
        out_flat[i] = true;
    }
    out
}

// Mean backscatter (dB) and reflectance per class: (forest, non-forest).
const VV_FOREST_DB: f64 = -7.5;
const VH_FOREST_DB: f64 = -13.0;
const REFLECTANCE_FOREST: [f64; 4] = [0.025, 0.045, 0.025, 0.32];
const REFLECTANCE_OPEN: [f64; 4] = [0.06, 0.085, 0.095, 0.22];

/// Generate a scene with a freshly drawn forest mask.
pub fn synth_scene(params: &SyntheticSceneParams) -> Result<SyntheticScene> {
    params.validate()?;
    let field = smooth_field(
        &mut stream(params.seed, STREAM_FOREST),
        params.tile_px,
        params.blob_scale,
    );
    let forest = top_fraction(&field, params.forest_fraction).mapv(u8::from);
    let mask = BinaryMask::new(params.grid()?, forest)?;
    synth_features(params, mask)
}

/// Render features for a given forest mask; clouds and noise come from `params.seed`.
pub fn synth_features(params: &SyntheticSceneParams, mask: BinaryMask) -> Result<SyntheticScene> {
    params.validate()?;
    let grid = params.grid()?;
    grid.ensure_aligned(mask.grid(), "synthetic mask")?;
    let n = params.tile_px;
    let labels = mask.labels();

    let mut sar_rng = stream(params.seed, STREAM_SAR);
    let speckle = Gamma::new(params.sar_looks, 1.0 / params.sar_looks).expect("valid gamma");
    let mut s1 = Array3::<f64>::zeros((n, n, 2));
    for ((y, x), &label) in labels.indexed_iter() {
        let open = f64::from(1 - label);
        let means = [
            VV_FOREST_DB - 0.5 * params.sar_separation_db * open,
            VH_FOREST_DB - params.sar_separation_db * open,
        ];
        for (b, mean_db) in means.iter().enumerate() {
            let intensity = 10f64.powf(mean_db / 10.0) * speckle.sample(&mut sar_rng);
            s1[(y, x, b)] = 10.0 * intensity.log10();
        }
    }

    let mut cloud_rng = stream(params.seed, STREAM_CLOUD);
    let cloud_field = smooth_field(&mut cloud_rng, n, params.cloud_scale);
    let cloudy = top_fraction(&cloud_field, params.cloud_fraction);
    let (lo, hi) = cloud_field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);

    let mut opt_rng = stream(params.seed, STREAM_OPTICAL);
    let noise = Normal::new(0.0, params.optical_noise.max(0.0)).expect("valid normal");
    let mut s2 = Array3::<f64>::zeros((n, n, 4));
    let mut cp = Array3::<f64>::zeros((n, n, 1));
    for ((y, x), &label) in labels.indexed_iter() {
        let density = (cloud_field[(y, x)] - lo) / span;
        for b in 0..4 {
            let open = REFLECTANCE_OPEN[b];
            let forest = open + params.optical_separation * (REFLECTANCE_FOREST[b] - open);
            let clear = if label == 1 { forest } else { open };
            let eps = noise.sample(&mut opt_rng);
            s2[(y, x, b)] = if cloudy[(y, x)] {
                0.35 + 0.3 * density + eps
            } else {
                clear + eps
            };
        }
        if cloudy[(y, x)] {
            cp[(y, x, 0)] = 0.6 + 0.4 * density;
        }
    }

    let names = |s: Source| s.bands().iter().map(|b| b.to_string()).collect::<Vec<_>>();
    let mut features = BTreeMap::new();
    features.insert(Source::S1, RasterChip::new(grid.clone(), s1, names(Source::S1))?);
    features.insert(Source::S2, RasterChip::new(grid.clone(), s2, names(Source::S2))?);
    features.insert(Source::Cp, RasterChip::new(grid, cp, names(Source::Cp))?);
    Ok(SyntheticScene { features, mask })
}

/// Clear a `fraction` of the forest pixels in smooth patches.
pub fn clear_forest(mask: &BinaryMask, fraction: f64, seed: u64, scale: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "clearing fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let (h, w) = mask.grid().dims();
    let size = h.max(w);
    let mut field = smooth_field(&mut stream(seed, STREAM_CLEARING), size, scale)
        .slice(ndarray::s![..h, ..w])
        .to_owned();
    // only forest pixels are candidates
    field.zip_mut_with(mask.labels(), |v, &l| {
        if l == 0 {
            *v = f64::NEG_INFINITY;
        }
    });
    let forest = mask.forest_count();
    let k = (fraction * forest as f64).round() as usize;
    let cleared = top_fraction(&field, k as f64 / field.len() as f64);
    let labels = Array2::from_shape_fn((h, w), |i| {
        if cleared[i] {
            0
        } else {
            mask.labels()[i]
        }
    });
    BinaryMask::new(mask.grid().clone(), labels)
}

/// Random 4-class FNF codes consistent with a binary mask: forest maps to
/// dense (1) or non-dense (2), non-forest to non-forest (3) or, rarely, water (4).
pub fn fnf_codes_for(mask: &BinaryMask, seed: u64) -> Array2<u8> {
    let mut rng = stream(seed, STREAM_CLEARING + 1);
    mask.labels().mapv(|l| {
        if l == 1 {
            if rng.gen_bool(0.7) {
                1
            } else {
                2
            }
        } else if rng.gen_bool(0.9) {
            3
        } else {
            4
        }
    })
}

/// A multi-tile, multi-period synthetic dataset in the ingestion layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDatasetParams {
    pub n_tiles: usize,
    /// Period labels; forest is cleared between consecutive periods.
    pub periods: Vec<String>,
    /// Share of the forest cleared between consecutive periods.
    pub deforestation_fraction: f64,
    /// Per-tile scene template; its seed is the dataset seed.
    pub scene: SyntheticSceneParams,
}

impl Default for SyntheticDatasetParams {
    fn default() -> Self {
        SyntheticDatasetParams {
            n_tiles: 10,
            periods: vec!["2019".into(), "2020".into()],
            deforestation_fraction: 0.02,
            scene: SyntheticSceneParams::default(),
        }
    }
}

const STREAM_TILE_SEEDS: u64 = 7;

/// Tile `i`'s scene for every period. The first period's mask is drawn
/// afresh; later periods clear forest from the previous mask. Tiles sit on
/// a square grid east and south of the template origin.
pub fn synth_tile(params: &SyntheticDatasetParams, i: usize) -> Result<Vec<SyntheticScene>> {
    if params.periods.is_empty() {
        return Err(Error::InvalidArgument("synthetic dataset needs at least one period".into()));
    }
    let base = &params.scene;
    let tile_seed = {
        let mut rng = stream(base.seed, STREAM_TILE_SEEDS);
        rng.set_word_pos(2 * i as u128);
        rng.gen::<u64>()
    };
    let cols = (params.n_tiles as f64).sqrt().ceil().max(1.0) as usize;
    let template = base.grid()?;
    let p0 = SyntheticSceneParams {
        seed: tile_seed,
        origin_lon: base.origin_lon
            + (i % cols) as f64 * base.tile_px as f64 * template.deg_per_px_lon(),
        origin_lat: base.origin_lat
            - (i / cols) as f64 * base.tile_px as f64 * template.deg_per_px_lat(),
        ..base.clone()
    };
    let mut scenes = vec![synth_scene(&p0)?];
    for k in 1..params.periods.len() {
        let pk = SyntheticSceneParams {
            seed: tile_seed.wrapping_add(k as u64 * 0x9E37_79B9_7F4A_7C15),
            ..p0.clone()
        };
        let prev = &scenes[k - 1].mask;
        let mask = clear_forest(prev, params.deforestation_fraction, pk.seed, base.blob_scale)?;
        scenes.push(synth_features(&pk, mask)?);
    }
    Ok(scenes)
}

/// Write `<root>/<period>/<source>/tile_NNNNN.tif` for every tile and period;
/// returns the tile ids.
pub fn write_synthetic_dataset(root: &Path, params: &SyntheticDatasetParams) -> Result<Vec<String>> {
    params.scene.validate()?;
    if !(0.0..=1.0).contains(&params.deforestation_fraction) {
        return Err(Error::InvalidArgument(format!(
            "deforestation_fraction must lie in [0, 1], got {}",
            params.deforestation_fraction
        )));
    }
    (0..params.n_tiles)
        .into_par_iter()
        .map(|i| {
            let id = format!("tile_{i:05}");
            for (k, (period, scene)) in params.periods.iter().zip(synth_tile(params, i)?).enumerate() {
                let dir = root.join(period);
                for (source, chip) in &scene.features {
                    io::write_chip(&dir.join(source.dir_name()).join(format!("{id}.tif")), chip)?;
                }
                let codes = fnf_codes_for(&scene.mask, (i * params.periods.len() + k) as u64);
                io::write_labels(
                    &dir.join(Source::Fnf.dir_name()).join(format!("{id}.tif")),
                    scene.mask.grid(),
                    "FNF",
                    &codes,
                )?;
            }
            Ok(id)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> SyntheticSceneParams {
        SyntheticSceneParams {
            seed,
            tile_px: 32,
            cloud_fraction: 0.3,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = synth_scene(&params(9)).unwrap();
        let b = synth_scene(&params(9)).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.features, b.features);
        let c = synth_scene(&params(10)).unwrap();
        assert_ne!(a.mask, c.mask);
    }

    #[test]
    fn no_clouds_means_zero_cp() {
        let p = SyntheticSceneParams {
            cloud_fraction: 0.0,
            ..params(1)
        };
        let s = synth_scene(&p).unwrap();
        assert!(s.features[&Source::Cp].bands().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cloud_share_matches_request() {
        let s = synth_scene(&params(4)).unwrap();
        let cp = &s.features[&Source::Cp];
        let cloudy = cp.bands().iter().filter(|&&v| v > 0.5).count();
        assert_eq!(cloudy, (0.3f64 * 32.0 * 32.0).round() as usize);
    }

    #[test]
    fn clouds_do_not_touch_sar() {
        let clear = synth_scene(&SyntheticSceneParams {
            cloud_fraction: 0.0,
            ..params(3)
        })
        .unwrap();
        let cloudy = synth_scene(&params(3)).unwrap();
        assert_eq!(clear.features[&Source::S1], cloudy.features[&Source::S1]);
        assert_ne!(clear.features[&Source::S2], cloudy.features[&Source::S2]);
    }

    #[test]
    fn clearing_removes_requested_share() {
        let s = synth_scene(&params(2)).unwrap();
        let after = clear_forest(&s.mask, 0.1, 77, 4.0).unwrap();
        let before = s.mask.forest_count();
        let lost = before - after.forest_count();
        assert_eq!(lost, (0.1 * before as f64).round() as usize);
        // only forest pixels are cleared
        ndarray::Zip::from(s.mask.labels())
            .and(after.labels())
            .for_each(|&a, &b| assert!(b <= a));
    }

    #[test]
    fn fnf_codes_remap_back() {
        let s = synth_scene(&params(5)).unwrap();
        let codes = fnf_codes_for(&s.mask, 5);
        let fnf = crate::raster::Fnf4Mask::new(s.mask.grid().clone(), codes).unwrap();
        assert_eq!(crate::raster::remap_fnf(&fnf).unwrap(), s.mask);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(synth_scene(&SyntheticSceneParams {
            tile_px: 4,
            ..Default::default()
        })
        .is_err());
        assert!(synth_scene(&SyntheticSceneParams {
            forest_fraction: 1.5,
            ..Default::default()
        })
        .is_err());
    }
}
