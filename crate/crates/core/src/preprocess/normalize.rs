//! Percentile min-max normalization.
//!
//! Each band is mapped with its training-set 1st and 99th percentiles. The
//! default orientation is value-reversing, `(p99 - x) / (p99 - p1)`; the
//! `standard` orientation gives `(x - p1) / (p99 - p1)`. Results are clipped
//! to [0, 1] either way.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterChip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    #[default]
    AsPrinted,
    Standard,
}

impl Orientation {
    fn as_str(self) -> &'static str {
        match self {
            Orientation::AsPrinted => "as-printed",
            Orientation::Standard => "standard",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub band: String,
    pub p1: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub bands: Vec<BandStats>,
    #[serde(default)]
    pub orientation: Orientation,
}

/// Percentile with linear interpolation between order statistics
/// (rank `q · (n - 1)` on the sorted sample).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "percentile of empty sample");
    let rank = q * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Pool every pixel of every chip per band and take the 1st/99th percentiles.
pub fn fit_percentiles<'a, I>(chips: I) -> Result<NormalizationStats>
where
    I: IntoIterator<Item = &'a RasterChip>,
{
    let mut names: Option<Vec<String>> = None;
    let mut pools: Vec<Vec<f64>> = Vec::new();
    for chip in chips {
        match &names {
            None => {
                names = Some(chip.band_names().to_vec());
                pools = vec![Vec::new(); chip.channels()];
            }
            Some(n) if n.as_slice() != chip.band_names() => {
                return Err(Error::InvalidArgument(
                    "training chips carry different band lists".into(),
                ))
            }
            Some(_) => {}
        }
        for (b, pool) in pools.iter_mut().enumerate() {
            pool.extend(chip.bands().index_axis(Axis(2), b).iter().copied());
        }
    }
    let names = names.ok_or_else(|| Error::Data("no training chips to fit percentiles".into()))?;
    let mut bands = Vec::with_capacity(names.len());
    for (name, mut pool) in names.into_iter().zip(pools) {
        if pool.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("band `{name}` has non-finite values")));
        }
        pool.sort_unstable_by(f64::total_cmp);
        if pool.first() == pool.last() {
            return Err(Error::DegenerateBand(name));
        }
        let p1 = percentile_sorted(&pool, 0.01);
        let p99 = percentile_sorted(&pool, 0.99);
        if !(p99 > p1) {
            return Err(Error::DegenerateBand(name));
        }
        bands.push(BandStats { band: name, p1, p99 });
    }
    Ok(NormalizationStats {
        bands,
        orientation: Orientation::default(),
    })
}

impl NormalizationStats {
    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn get(&self, band: &str) -> Option<&BandStats> {
        self.bands.iter().find(|b| b.band == band)
    }

    /// Normalize one value of a band; clipped to [0, 1].
    pub fn apply(&self, stats: &BandStats, x: f64) -> f64 {
        let range = stats.p99 - stats.p1;
        let v = match self.orientation {
            Orientation::AsPrinted => (stats.p99 - x) / range,
            Orientation::Standard => (x - stats.p1) / range,
        };
        v.clamp(0.0, 1.0)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# orientation: {}\n# band\tp1\tp99\n", self.orientation.as_str());
        for b in &self.bands {
            let _ = writeln!(out, "{}\t{}\t{}", b.band, b.p1, b.p99);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut orientation = Orientation::default();
        let mut bands = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Some(c) = line.strip_prefix('#') {
                if let Some(o) = c.trim().strip_prefix("orientation:") {
                    orientation = match o.trim() {
                        "as-printed" => Orientation::AsPrinted,
                        "standard" => Orientation::Standard,
                        other => {
                            return Err(Error::Config(format!("unknown orientation `{other}`")))
                        }
                    };
                }
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Data(format!("bad percentile value `{s}`")))
            };
            if f.len() != 3 {
                return Err(Error::Data(format!("bad stats line `{line}`")));
            }
            bands.push(BandStats {
                band: f[0].to_string(),
                p1: parse(f[1])?,
                p99: parse(f[2])?,
            });
        }
        Ok(NormalizationStats { bands, orientation })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

pub fn percentile_normalize(chip: &RasterChip, stats: &NormalizationStats) -> Result<RasterChip> {
    let band_stats = chip
        .band_names()
        .iter()
        .map(|n| stats.get(n).ok_or_else(|| Error::MissingBand(n.clone())))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array3::<f64>::zeros(chip.bands().dim());
    for (b, bs) in band_stats.into_iter().enumerate() {
        Zip::from(out.index_axis_mut(Axis(2), b))
            .and(chip.bands().index_axis(Axis(2), b))
            .for_each(|o, &x| *o = stats.apply(bs, x));
    }
    RasterChip::new(chip.grid().clone(), out, chip.band_names().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chip_from(values: Vec<f64>, w: usize) -> RasterChip {
        let h = values.len() / w;
        let g = GeoGrid::from_origin(-5.0, 6.0, 10.0, w, h).unwrap();
        RasterChip::new(
            g,
            Array3::from_shape_vec((h, w, 1), values).unwrap(),
            vec!["VV".into()],
        )
        .unwrap()
    }

    fn stats(p1: f64, p99: f64) -> NormalizationStats {
        NormalizationStats {
            bands: vec![BandStats {
                band: "VV".into(),
                p1,
                p99,
            }],
            orientation: Orientation::AsPrinted,
        }
    }

    #[test]
    fn percentiles_of_one_to_hundred() {
        let chip = chip_from((1..=100).map(f64::from).collect(), 10);
        let s = fit_percentiles([&chip]).unwrap();
        // oracle: rank 0.01*99 = 0.99 → 1 + 0.99; rank 98.01 → 99 + 0.01
        assert!((s.bands[0].p1 - 1.99).abs() < 1e-12);
        assert!((s.bands[0].p99 - 99.01).abs() < 1e-12);
    }

    #[test]
    fn constant_band_rejected() {
        let chip = chip_from(vec![0.0; 16], 4);
        assert!(matches!(fit_percentiles([&chip]), Err(Error::DegenerateBand(b)) if b == "VV"));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(fit_percentiles(std::iter::empty::<&RasterChip>()).is_err());
    }

    #[test]
    fn stats_ignore_chip_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chips: Vec<_> = (0..4)
            .map(|_| chip_from((0..64).map(|_| rng.gen_range(-20.0..5.0)).collect(), 8))
            .collect();
        let a = fit_percentiles(chips.iter()).unwrap();
        let b = fit_percentiles(chips.iter().rev()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn substitution_cases() {
        let s = stats(10.0, 110.0);
        let bs = &s.bands[0];
        assert_eq!(s.apply(bs, 110.0), 0.0);
        assert_eq!(s.apply(bs, 10.0), 1.0);
        assert_eq!(s.apply(bs, 60.0), 0.5);
        // (110 - 5) / 100 = 1.05 before clipping
        assert_eq!(s.apply(bs, 5.0), 1.0);
        let std = stats(10.0, 110.0).with_orientation(Orientation::Standard);
        assert_eq!(std.apply(&std.bands[0], 35.0), 0.25);
    }

    #[test]
    fn missing_band_rejected() {
        let chip = chip_from(vec![1.0, 2.0], 2);
        let mut s = stats(0.0, 1.0);
        s.bands[0].band = "VH".into();
        assert!(matches!(percentile_normalize(&chip, &s), Err(Error::MissingBand(_))));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let s = NormalizationStats {
            bands: vec![
                BandStats {
                    band: "VV".into(),
                    p1: -17.123456789012345,
                    p99: 0.1 + 0.2,
                },
                BandStats {
                    band: "CP".into(),
                    p1: 0.0,
                    p99: 0.97,
                },
            ],
            orientation: Orientation::Standard,
        };
        assert_eq!(NormalizationStats::from_text(&s.to_text()).unwrap(), s);
    }
}
