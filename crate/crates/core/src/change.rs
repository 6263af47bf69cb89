//! Post-classification change detection between two dated forest masks,
//! area accounting and overlay rendering.

use std::fmt::Write as _;
use std::ops::{Add, AddAssign};
use std::path::Path;

use chrono::NaiveDate;
use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::preprocess::percentile_sorted;
use crate::raster::{BinaryMask, GeoGrid, RasterChip};

/// Sentinel-1 revisit time; maps dated closer than this cannot show change
/// the sensor has actually observed.
pub const MIN_REVISIT_DAYS: i64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum ChangeState {
    StableForest = 0,
    StableNonforest = 1,
    Deforested = 2,
    Afforested = 3,
}

impl ChangeState {
    pub const ALL: [ChangeState; 4] = [
        ChangeState::StableForest,
        ChangeState::StableNonforest,
        ChangeState::Deforested,
        ChangeState::Afforested,
    ];

    /// State of one pixel from its labels at t0 and t1.
    pub fn from_pair(t0: u8, t1: u8) -> ChangeState {
        match (t0 == 1, t1 == 1) {
            (true, true) => ChangeState::StableForest,
            (false, false) => ChangeState::StableNonforest,
            (true, false) => ChangeState::Deforested,
            (false, true) => ChangeState::Afforested,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<ChangeState> {
        ChangeState::ALL.get(usize::from(code)).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeMap {
    grid: GeoGrid,
    states: Array2<u8>,
}

impl ChangeMap {
    /// Build from raw state codes (0–3).
    pub fn new(grid: GeoGrid, states: Array2<u8>) -> Result<Self> {
        if states.dim() != grid.dims() {
            return Err(Error::shape(
                format!("{:?}", grid.dims()),
                format!("{:?}", states.dim()),
            ));
        }
        if let Some(c) = states.iter().find(|&&c| ChangeState::from_code(c).is_none()) {
            return Err(Error::InvalidArgument(format!("invalid change state code {c}")));
        }
        Ok(ChangeMap { grid, states })
    }

    pub fn grid(&self) -> &GeoGrid {
        &self.grid
    }

    /// State codes, see [`ChangeState`].
    pub fn states(&self) -> &Array2<u8> {
        &self.states
    }

    pub fn state(&self, row: usize, col: usize) -> ChangeState {
        ChangeState::from_code(self.states[(row, col)]).expect("validated state code")
    }

    pub fn counts(&self) -> ChangeCounts {
        let mut c = ChangeCounts::default();
        for &s in &self.states {
            match ChangeState::from_code(s).expect("validated state code") {
                ChangeState::StableForest => c.stable_forest += 1,
                ChangeState::StableNonforest => c.stable_nonforest += 1,
                ChangeState::Deforested => c.deforested += 1,
                ChangeState::Afforested => c.afforested += 1,
            }
        }
        c
    }

    /// Pixels in `state` as a binary mask.
    pub fn mask_of(&self, state: ChangeState) -> BinaryMask {
        let labels = self.states.mapv(|s| u8::from(s == state.code()));
        BinaryMask::new(self.grid.clone(), labels).expect("shape matches grid")
    }

    /// Single-band 8-bit geo-raster of the state codes.
    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_labels(path, &self.grid, "change", &self.states)
    }
}

pub fn detect_change(t0: &BinaryMask, t1: &BinaryMask) -> Result<ChangeMap> {
    t0.grid().ensure_aligned(t1.grid(), "change detection")?;
    let mut states = Array2::<u8>::zeros(t0.labels().dim());
    Zip::from(&mut states)
        .and(t0.labels())
        .and(t1.labels())
        .for_each(|s, &a, &b| *s = ChangeState::from_pair(a, b).code());
    Ok(ChangeMap {
        grid: t0.grid().clone(),
        states,
    })
}

/// Pixel counts per state; sums over tiles by addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeCounts {
    pub stable_forest: u64,
    pub stable_nonforest: u64,
    pub deforested: u64,
    pub afforested: u64,
}

impl ChangeCounts {
    pub fn forest_t0(&self) -> u64 {
        self.stable_forest + self.deforested
    }

    pub fn forest_t1(&self) -> u64 {
        self.stable_forest + self.afforested
    }

    pub fn total(&self) -> u64 {
        self.stable_forest + self.stable_nonforest + self.deforested + self.afforested
    }
}

impl AddAssign for ChangeCounts {
    fn add_assign(&mut self, o: Self) {
        self.stable_forest += o.stable_forest;
        self.stable_nonforest += o.stable_nonforest;
        self.deforested += o.deforested;
        self.afforested += o.afforested;
    }
}

impl Add for ChangeCounts {
    type Output = Self;

    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl std::iter::Sum for ChangeCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ChangeCounts::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaEstimate {
    pub pixel_size_m: f64,
    pub counts: ChangeCounts,
    pub deforested_km2: f64,
    pub afforested_km2: f64,
    pub forest_t0_km2: f64,
    /// Deforested share of the t0 forest; `None` when there was no forest.
    pub deforestation_rate: Option<f64>,
}

/// `count · pixel_size² / 1e6`, with the integer product formed first so
/// round pixel sizes give correctly rounded areas.
fn km2(count: u64, pixel_size_m: f64) -> f64 {
    if pixel_size_m.fract() == 0.0 && pixel_size_m < 1e6 {
        let px2 = (pixel_size_m as u128).pow(2);
        (u128::from(count) * px2) as f64 / 1e6
    } else {
        count as f64 * pixel_size_m * pixel_size_m / 1e6
    }
}

impl AreaEstimate {
    pub fn from_counts(counts: ChangeCounts, pixel_size_m: f64) -> Result<Self> {
        if !(pixel_size_m > 0.0) || !pixel_size_m.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "pixel size must be positive, got {pixel_size_m}"
            )));
        }
        let forest_t0 = counts.forest_t0();
        Ok(AreaEstimate {
            pixel_size_m,
            counts,
            deforested_km2: km2(counts.deforested, pixel_size_m),
            afforested_km2: km2(counts.afforested, pixel_size_m),
            forest_t0_km2: km2(forest_t0, pixel_size_m),
            deforestation_rate: (forest_t0 > 0)
                .then(|| counts.deforested as f64 / forest_t0 as f64),
        })
    }

    /// Combine estimates over disjoint maps at the same resolution.
    pub fn merge(&self, other: &AreaEstimate) -> Result<AreaEstimate> {
        if self.pixel_size_m != other.pixel_size_m {
            return Err(Error::GridMismatch(format!(
                "cannot merge areas at {} m and {} m per pixel",
                self.pixel_size_m, other.pixel_size_m
            )));
        }
        AreaEstimate::from_counts(self.counts + other.counts, self.pixel_size_m)
    }

    pub fn to_text(&self) -> String {
        let c = &self.counts;
        let mut out = String::new();
        let _ = writeln!(out, "pixel_size_m\t{}", self.pixel_size_m);
        let _ = writeln!(out, "stable_forest_px\t{}", c.stable_forest);
        let _ = writeln!(out, "stable_nonforest_px\t{}", c.stable_nonforest);
        let _ = writeln!(out, "deforested_px\t{}", c.deforested);
        let _ = writeln!(out, "afforested_px\t{}", c.afforested);
        let _ = writeln!(out, "deforested_km2\t{}", self.deforested_km2);
        let _ = writeln!(out, "afforested_km2\t{}", self.afforested_km2);
        let _ = writeln!(out, "forest_t0_km2\t{}", self.forest_t0_km2);
        match self.deforestation_rate {
            Some(r) => {
                let _ = writeln!(out, "deforestation_rate\t{r}");
            }
            None => out.push_str("deforestation_rate\tundefined\n"),
        }
        out
    }
}

pub fn area_estimate(change: &ChangeMap) -> Result<AreaEstimate> {
    AreaEstimate::from_counts(change.counts(), change.grid().pixel_size_m)
}

/// Days between two period labels (`YYYY`, `YYYY-MM` or `YYYY-MM-DD`, each
/// read as its first day), or `None` if either label is not a date.
pub fn period_gap_days(a: &str, b: &str) -> Option<i64> {
    fn parse(s: &str) -> Option<NaiveDate> {
        let s = s.trim();
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .ok()
            .or_else(|| NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d").ok())
            .or_else(|| NaiveDate::parse_from_str(&format!("{s}-01-01"), "%Y-%m-%d").ok())
    }
    Some((parse(b)? - parse(a)?).num_days().abs())
}

/// A warning when two periods are closer than the SAR revisit time.
pub fn period_gap_warning(a: &str, b: &str) -> Option<String> {
    let days = period_gap_days(a, b)?;
    (days < MIN_REVISIT_DAYS).then(|| {
        format!(
            "periods `{a}` and `{b}` are {days} days apart, below the {MIN_REVISIT_DAYS}-day Sentinel-1 revisit time"
        )
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayStyle {
    pub deforested_rgb: [u8; 3],
    /// Colour for afforested pixels; `None` leaves them untinted.
    pub afforested_rgb: Option<[u8; 3]>,
    /// Tint opacity in [0, 1].
    pub opacity: f64,
    /// Percentile stretch applied to the base composite.
    pub stretch: (f64, f64),
}

impl Default for OverlayStyle {
    fn default() -> Self {
        OverlayStyle {
            deforested_rgb: [255, 0, 0],
            afforested_rgb: None,
            opacity: 1.0,
            stretch: (0.02, 0.98),
        }
    }
}

/// Bands used for the base composite: true colour when available, else the
/// first band in grey.
fn composite_bands(base: &RasterChip) -> Vec<usize> {
    let rgb: Option<Vec<usize>> = ["B4", "B3", "B2"].iter().map(|b| base.band_index(b)).collect();
    rgb.unwrap_or_else(|| vec![0])
}

fn stretch_band(base: &RasterChip, band: usize, lo_q: f64, hi_q: f64) -> Array2<u8> {
    let view = base.bands().index_axis(Axis(2), band);
    let mut sorted: Vec<f64> = view.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Array2::zeros(view.dim());
    }
    sorted.sort_unstable_by(f64::total_cmp);
    let lo = percentile_sorted(&sorted, lo_q);
    let hi = percentile_sorted(&sorted, hi_q);
    let span = hi - lo;
    view.mapv(|v| {
        if !(span > 0.0) || !v.is_finite() {
            return 0;
        }
        ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
    })
}

/// RGB bytes of the base composite, row-major.
pub fn base_composite(base: &RasterChip, style: &OverlayStyle) -> Vec<u8> {
    let bands = composite_bands(base);
    let planes: Vec<Array2<u8>> = bands
        .iter()
        .map(|&b| stretch_band(base, b, style.stretch.0, style.stretch.1))
        .collect();
    let (h, w) = base.grid().dims();
    let mut rgb = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            for k in 0..3 {
                rgb.push(planes[k.min(planes.len() - 1)][(r, c)]);
            }
        }
    }
    rgb
}

/// PNG bytes: base composite with changed pixels tinted, legend in text chunks.
pub fn render_overlay(base: &RasterChip, change: &ChangeMap, style: &OverlayStyle) -> Result<Vec<u8>> {
    base.grid().ensure_aligned(change.grid(), "overlay base")?;
    if !(0.0..=1.0).contains(&style.opacity) {
        return Err(Error::InvalidArgument(format!(
            "overlay opacity must lie in [0, 1], got {}",
            style.opacity
        )));
    }
    let mut rgb = base_composite(base, style);
    let blend = |dst: &mut [u8], tint: [u8; 3]| {
        for (d, t) in dst.iter_mut().zip(tint) {
            let v = f64::from(*d) * (1.0 - style.opacity) + f64::from(t) * style.opacity;
            *d = v.round() as u8;
        }
    };
    for ((r, c), &s) in change.states().indexed_iter() {
        let tint = match ChangeState::from_code(s) {
            Some(ChangeState::Deforested) => Some(style.deforested_rgb),
            Some(ChangeState::Afforested) => style.afforested_rgb,
            _ => None,
        };
        if let Some(t) = tint {
            let i = (r * change.grid().width_px + c) * 3;
            blend(&mut rgb[i..i + 3], t);
        }
    }

    let (h, w) = change.grid().dims();
    let mut out = Vec::new();
    let png_err = |e: png::EncodingError| Error::Data(format!("cannot encode overlay: {e}"));
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let [r, g, b] = style.deforested_rgb;
        let mut legend = format!("rgb({r},{g},{b}) = deforested");
        if let Some([r, g, b]) = style.afforested_rgb {
            let _ = write!(legend, "; rgb({r},{g},{b}) = afforested");
        }
        let _ = write!(
            legend,
            "; base = {}",
            if composite_bands(base).len() == 3 { "B4/B3/B2 true colour" } else { "first band, grey" }
        );
        enc.add_text_chunk("Legend".into(), legend).map_err(png_err)?;
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&rgb).map_err(png_err)?;
    }
    Ok(out)
}

pub fn write_overlay(path: &Path, base: &RasterChip, change: &ChangeMap, style: &OverlayStyle) -> Result<()> {
    let bytes = render_overlay(base, change, style)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
