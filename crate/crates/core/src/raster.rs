//! Grid arithmetic, label remapping, nearest-neighbour resampling and tiling.
//!
//! Everything here is pure: no I/O, no interior mutability. Rasters use a
//! north-west origin, so row 0 is the northern edge at `lat_max` and column 0
//! the western edge at `lon_min`.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geographic footprint and pixel layout of a raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoGrid {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    /// Ground-sample distance in meters per pixel.
    pub pixel_size_m: f64,
    pub width_px: usize,
    pub height_px: usize,
}

impl GeoGrid {
    pub fn new(
        lon: (f64, f64),
        lat: (f64, f64),
        pixel_size_m: f64,
        width_px: usize,
        height_px: usize,
    ) -> Result<Self> {
        let grid = GeoGrid {
            lon_min: lon.0,
            lon_max: lon.1,
            lat_min: lat.0,
            lat_max: lat.1,
            pixel_size_m,
            width_px,
            height_px,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// A grid anchored at (`lon_min`, `lat_max`) whose extent follows from
    /// the pixel size, using a flat 111 320 m per degree approximation.
    pub fn from_origin(
        lon_min: f64,
        lat_max: f64,
        pixel_size_m: f64,
        width_px: usize,
        height_px: usize,
    ) -> Result<Self> {
        const M_PER_DEG: f64 = 111_320.0;
        let dlon = width_px as f64 * pixel_size_m / M_PER_DEG;
        let dlat = height_px as f64 * pixel_size_m / M_PER_DEG;
        Self::new(
            (lon_min, lon_min + dlon),
            (lat_max - dlat, lat_max),
            pixel_size_m,
            width_px,
            height_px,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lon_min,
            self.lon_max,
            self.lat_min,
            self.lat_max,
            self.pixel_size_m,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("grid has non-finite bounds".into()));
        }
        if self.lon_min >= self.lon_max || self.lat_min >= self.lat_max {
            return Err(Error::InvalidArgument(format!(
                "grid extent is empty: lon [{}, {}], lat [{}, {}]",
                self.lon_min, self.lon_max, self.lat_min, self.lat_max
            )));
        }
        if self.pixel_size_m <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "pixel size must be positive, got {}",
                self.pixel_size_m
            )));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::InvalidArgument("grid must be at least 1x1 pixels".into()));
        }
        Ok(())
    }

    /// Ground area of one pixel in m².
    pub fn pixel_area_m2(&self) -> f64 {
        self.pixel_size_m * self.pixel_size_m
    }

    pub fn deg_per_px_lon(&self) -> f64 {
        (self.lon_max - self.lon_min) / self.width_px as f64
    }

    pub fn deg_per_px_lat(&self) -> f64 {
        (self.lat_max - self.lat_min) / self.height_px as f64
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height_px, self.width_px)
    }

    /// Sub-extent covering rows `row0..row0+height` and columns `col0..col0+width`.
    pub fn window(&self, row0: usize, col0: usize, height: usize, width: usize) -> GeoGrid {
        let dlon = self.deg_per_px_lon();
        let dlat = self.deg_per_px_lat();
        GeoGrid {
            lon_min: self.lon_min + col0 as f64 * dlon,
            lon_max: self.lon_min + (col0 + width) as f64 * dlon,
            lat_max: self.lat_max - row0 as f64 * dlat,
            lat_min: self.lat_max - (row0 + height) as f64 * dlat,
            pixel_size_m: self.pixel_size_m,
            width_px: width,
            height_px: height,
        }
    }

    /// Same extent resampled to a new pixel count.
    pub fn with_dims(&self, width_px: usize, height_px: usize, pixel_size_m: f64) -> GeoGrid {
        GeoGrid {
            width_px,
            height_px,
            pixel_size_m,
            ..self.clone()
        }
    }

    /// True when both grids have the same pixel layout and (to within a
    /// nanodegree) the same footprint.
    pub fn aligned_with(&self, other: &GeoGrid) -> bool {
        const TOL: f64 = 1e-9;
        self.width_px == other.width_px
            && self.height_px == other.height_px
            && (self.pixel_size_m - other.pixel_size_m).abs() <= TOL * self.pixel_size_m
            && (self.lon_min - other.lon_min).abs() <= TOL
            && (self.lon_max - other.lon_max).abs() <= TOL
            && (self.lat_min - other.lat_min).abs() <= TOL
            && (self.lat_max - other.lat_max).abs() <= TOL
    }

    pub(crate) fn ensure_aligned(&self, other: &GeoGrid, what: &str) -> Result<()> {
        if self.aligned_with(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {}x{} @ {} m vs {}x{} @ {} m",
                self.width_px,
                self.height_px,
                self.pixel_size_m,
                other.width_px,
                other.height_px,
                other.pixel_size_m
            )))
        }
    }
}

/// Multi-band raster tile, stored as H×W×C.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterChip {
    grid: GeoGrid,
    bands: Array3<f64>,
    band_names: Vec<String>,
}

impl RasterChip {
    pub fn new(grid: GeoGrid, bands: Array3<f64>, band_names: Vec<String>) -> Result<Self> {
        let (h, w, c) = bands.dim();
        if (h, w) != grid.dims() || c != band_names.len() {
            return Err(Error::shape(
                format!("{}x{}x{}", grid.height_px, grid.width_px, band_names.len()),
                format!("{h}x{w}x{c}"),
            ));
        }
        for (i, name) in band_names.iter().enumerate() {
            if band_names[..i].contains(name) {
                return Err(Error::InvalidArgument(format!("duplicate band name `{name}`")));
            }
        }
        Ok(RasterChip {
            grid,
            bands,
            band_names,
        })
    }

    pub fn grid(&self) -> &GeoGrid {
        &self.grid
    }

    pub fn bands(&self) -> &Array3<f64> {
        &self.bands
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn channels(&self) -> usize {
        self.band_names.len()
    }

    pub fn into_parts(self) -> (GeoGrid, Array3<f64>, Vec<String>) {
        (self.grid, self.bands, self.band_names)
    }

    pub fn band_index(&self, name: &str) -> Option<usize> {
        self.band_names.iter().position(|b| b == name)
    }

    pub fn band(&self, name: &str) -> Result<ArrayView2<'_, f64>> {
        let idx = self
            .band_index(name)
            .ok_or_else(|| Error::MissingBand(name.to_string()))?;
        Ok(self.bands.index_axis(Axis(2), idx))
    }

    /// New chip holding only the named bands, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<RasterChip> {
        let idx = names
            .iter()
            .map(|n| {
                self.band_index(n)
                    .ok_or_else(|| Error::MissingBand(n.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let bands = self.bands.select(Axis(2), &idx);
        RasterChip::new(
            self.grid.clone(),
            bands,
            names.iter().map(|s| s.to_string()).collect(),
        )
    }

    /// Crop a pixel window; the window must lie inside the chip.
    pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Result<RasterChip> {
        let (h, w) = self.grid.dims();
        if row0 + height > h || col0 + width > w {
            return Err(Error::InvalidArgument(format!(
                "window {height}x{width} at ({row0}, {col0}) exceeds {h}x{w} chip"
            )));
        }
        let bands = self
            .bands
            .slice(s![row0..row0 + height, col0..col0 + width, ..])
            .to_owned();
        RasterChip::new(
            self.grid.window(row0, col0, height, width),
            bands,
            self.band_names.clone(),
        )
    }
}

/// Native four-class Forest/Non-Forest product labels.
///
/// The mask stores raw product codes; [`remap_fnf`] validates them.
#[derive(Debug, Clone, PartialEq)]
pub struct Fnf4Mask {
    pub grid: GeoGrid,
    pub labels: Array2<u8>,
}

impl Fnf4Mask {
    pub fn new(grid: GeoGrid, labels: Array2<u8>) -> Result<Self> {
        check_dims(&grid, labels.dim())?;
        Ok(Fnf4Mask { grid, labels })
    }
}

/// Binary forest mask; 1 = forest (the positive class).
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: GeoGrid,
    labels: Array2<u8>,
}

impl BinaryMask {
    pub fn new(grid: GeoGrid, labels: Array2<u8>) -> Result<Self> {
        check_dims(&grid, labels.dim())?;
        if let Some(((row, col), &code)) = labels.indexed_iter().find(|(_, &v)| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "binary mask value {code} at ({row}, {col})"
            )));
        }
        Ok(BinaryMask { grid, labels })
    }

    pub fn grid(&self) -> &GeoGrid {
        &self.grid
    }

    pub fn labels(&self) -> &Array2<u8> {
        &self.labels
    }

    pub fn into_labels(self) -> Array2<u8> {
        self.labels
    }

    pub fn forest_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    pub fn forest_fraction(&self) -> f64 {
        self.forest_count() as f64 / self.labels.len() as f64
    }

    pub fn crop(&self, row0: usize, col0: usize, height: usize, width: usize) -> Result<BinaryMask> {
        let (h, w) = self.grid.dims();
        if row0 + height > h || col0 + width > w {
            return Err(Error::InvalidArgument(format!(
                "window {height}x{width} at ({row0}, {col0}) exceeds {h}x{w} mask"
            )));
        }
        let labels = self
            .labels
            .slice(s![row0..row0 + height, col0..col0 + width])
            .to_owned();
        Ok(BinaryMask {
            grid: self.grid.window(row0, col0, height, width),
            labels,
        })
    }
}

fn check_dims(grid: &GeoGrid, dim: (usize, usize)) -> Result<()> {
    if dim != grid.dims() {
        return Err(Error::shape(
            format!("{}x{}", grid.height_px, grid.width_px),
            format!("{}x{}", dim.0, dim.1),
        ));
    }
    Ok(())
}

/// Which native FNF codes count as forest and which as non-forest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FnfCodes {
    pub forest: Vec<u8>,
    pub non_forest: Vec<u8>,
}

impl Default for FnfCodes {
    /// 1 dense forest, 2 non-dense forest, 3 non-forest, 4 water.
    fn default() -> Self {
        FnfCodes {
            forest: vec![1, 2],
            non_forest: vec![3, 4],
        }
    }
}

/// Collapse the four FNF classes into forest (dense + non-dense) and
/// non-forest (non-forest + water).
pub fn remap_fnf(mask: &Fnf4Mask) -> Result<BinaryMask> {
    remap_fnf_with(mask, &FnfCodes::default())
}

pub fn remap_fnf_with(mask: &Fnf4Mask, codes: &FnfCodes) -> Result<BinaryMask> {
    let mut out = Array2::<u8>::zeros(mask.labels.dim());
    for ((row, col), &code) in mask.labels.indexed_iter() {
        out[(row, col)] = if codes.forest.contains(&code) {
            1
        } else if codes.non_forest.contains(&code) {
            0
        } else {
            return Err(Error::UnknownLabel { code, row, col });
        };
    }
    Ok(BinaryMask {
        grid: mask.grid.clone(),
        labels: out,
    })
}

/// Nearest-neighbour lookup table mapping each target index to a source index.
///
/// Target pixel centre `i + 0.5` is scaled into source coordinates and
/// floored, which for an integer factor `f` reduces to `i / f`.
fn nearest_index_map(src: usize, dst: usize) -> Vec<usize> {
    (0..dst)
        .map(|i| {
            let pos = (i as f64 + 0.5) * src as f64 / dst as f64;
            (pos.floor() as usize).min(src - 1)
        })
        .collect()
}

fn resample_labels(labels: &Array2<u8>, height: usize, width: usize) -> Array2<u8> {
    let (sh, sw) = labels.dim();
    let rows = nearest_index_map(sh, height);
    let cols = nearest_index_map(sw, width);
    Array2::from_shape_fn((height, width), |(r, c)| labels[(rows[r], cols[c])])
}

/// Block-replicate every pixel `factor × factor` times.
pub fn upsample_nearest(mask: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    if factor < 1 {
        return Err(Error::InvalidArgument(format!(
            "upsampling factor must be >= 1, got {factor}"
        )));
    }
    let (h, w) = mask.grid.dims();
    let labels = mask
        .labels
        .view()
        .insert_axis(Axis(1))
        .insert_axis(Axis(3))
        .broadcast((h, factor, w, factor))
        .expect("broadcast of singleton axes")
        .to_owned()
        .into_shape_with_order((h * factor, w * factor))
        .expect("contiguous reshape");
    let grid = mask
        .grid
        .with_dims(w * factor, h * factor, mask.grid.pixel_size_m / factor as f64);
    Ok(BinaryMask { grid, labels })
}

/// Resample onto an arbitrary target grid covering the same extent.
pub fn resample_nearest(mask: &BinaryMask, target: &GeoGrid) -> Result<BinaryMask> {
    target.validate()?;
    let labels = resample_labels(&mask.labels, target.height_px, target.width_px);
    Ok(BinaryMask {
        grid: target.clone(),
        labels,
    })
}

/// Resample native FNF codes onto a target grid; used before remapping so
/// 25 m products line up with 10 m features.
pub fn resample_fnf(mask: &Fnf4Mask, target: &GeoGrid) -> Result<Fnf4Mask> {
    target.validate()?;
    let labels = resample_labels(&mask.labels, target.height_px, target.width_px);
    Ok(Fnf4Mask {
        grid: target.clone(),
        labels,
    })
}

/// Target grid for resampling `grid` to a new ground-sample distance over
/// the same extent, e.g. 25 m → 10 m.
pub fn regrid_to_resolution(grid: &GeoGrid, pixel_size_m: f64) -> Result<GeoGrid> {
    if !(pixel_size_m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target pixel size must be positive, got {pixel_size_m}"
        )));
    }
    let ratio = grid.pixel_size_m / pixel_size_m;
    let width = (grid.width_px as f64 * ratio).round().max(1.0) as usize;
    let height = (grid.height_px as f64 * ratio).round().max(1.0) as usize;
    Ok(grid.with_dims(width, height, pixel_size_m))
}

/// Default tile edge: 256 px at 10 m covers 6.5536 km².
pub const DEFAULT_TILE_PX: usize = 256;

/// One square tile cut from a mosaic.
#[derive(Debug, Clone, PartialEq)]
pub struct TileFrame {
    pub tile_id: String,
    pub row: usize,
    pub col: usize,
    pub grid: GeoGrid,
}

impl TileFrame {
    pub fn pixel_origin(&self, tile_px: usize) -> (usize, usize) {
        (self.row * tile_px, self.col * tile_px)
    }

    pub fn area_km2(&self) -> f64 {
        let side = self.grid.width_px as f64 * self.grid.pixel_size_m;
        side * side / 1e6
    }
}

/// Cut a mosaic into non-overlapping `tile_px` squares in row-major order.
/// Trailing partial rows and columns are dropped.
pub fn tile_grid(mosaic: &GeoGrid, tile_px: usize) -> Result<Vec<TileFrame>> {
    if tile_px == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    if tile_px > mosaic.width_px || tile_px > mosaic.height_px {
        return Err(Error::InvalidArgument(format!(
            "tile size {tile_px} exceeds mosaic {}x{}",
            mosaic.width_px, mosaic.height_px
        )));
    }
    let rows = mosaic.height_px / tile_px;
    let cols = mosaic.width_px / tile_px;
    let mut frames = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            frames.push(TileFrame {
                tile_id: format!("r{row:03}_c{col:03}"),
                row,
                col,
                grid: mosaic.window(row * tile_px, col * tile_px, tile_px, tile_px),
            });
        }
    }
    Ok(frames)
}
