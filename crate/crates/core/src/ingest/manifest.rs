//! Tab-separated dataset index over the `<root>/<period>/<source>/<tile_id>.tif` layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::scenario::Source;
use crate::io;
use crate::raster::{
    regrid_to_resolution, remap_fnf_with, resample_fnf, BinaryMask, Fnf4Mask, FnfCodes,
    RasterChip,
};

const MAGIC: &str = "# canopy manifest v1";
const COLUMNS: &str = "tile_id\tperiod\ts1_path\ts2_path\tcp_path\tfnf_path\tcloud_fraction\tsplit";

/// A pixel counts as cloudy in the tile cloud fraction above this probability.
pub const CLOUDY_PIXEL_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePaths {
    pub s1: PathBuf,
    pub s2: PathBuf,
    pub cp: PathBuf,
    pub fnf: PathBuf,
}

impl SourcePaths {
    pub fn get(&self, source: Source) -> &Path {
        match source {
            Source::S1 => &self.s1,
            Source::S2 => &self.s2,
            Source::Cp => &self.cp,
            Source::Fnf => &self.fnf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub tile_id: String,
    pub period: String,
    /// Absolute (root-joined) file paths.
    pub paths: SourcePaths,
    pub cloud_fraction: f64,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub fnf_codes: FnfCodes,
    pub entries: Vec<ManifestEntry>,
}

/// A file or tile left out of the manifest, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipRecord {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ManifestBuild {
    pub manifest: DatasetManifest,
    pub skipped: Vec<SkipRecord>,
}

/// Features and ground truth for one tile in one period.
#[derive(Debug, Clone)]
pub struct TileData {
    pub tile_id: String,
    pub period: String,
    pub sources: BTreeMap<Source, RasterChip>,
    pub mask: BinaryMask,
}

impl DatasetManifest {
    pub fn periods(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.period.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Distinct tile ids across all periods, sorted.
    pub fn tile_ids(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.tile_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn entry(&self, tile_id: &str, period: &str) -> Option<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.tile_id == tile_id && e.period == period)
    }

    pub fn select<'a>(
        &'a self,
        split: Split,
        periods: &'a [String],
    ) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.entries.iter().filter(move |e| {
            e.split == Some(split) && (periods.is_empty() || periods.contains(&e.period))
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert((e.period.as_str(), e.tile_id.as_str())) {
                return Err(Error::Data(format!(
                    "duplicate tile `{}` in period `{}`",
                    e.tile_id, e.period
                )));
            }
            if !(0.0..=1.0).contains(&e.cloud_fraction) {
                return Err(Error::Data(format!(
                    "tile `{}` cloud fraction {} outside [0, 1]",
                    e.tile_id, e.cloud_fraction
                )));
            }
            for s in Source::ALL {
                let p = e.paths.get(s);
                if !p.is_file() {
                    return Err(Error::Data(format!(
                        "tile `{}` ({}) references missing file {}",
                        e.tile_id,
                        e.period,
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_tile(&self, entry: &ManifestEntry) -> Result<TileData> {
        load_tile(entry, &self.fnf_codes)
    }
}

fn valid_tile_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn parse_file_name(path: &Path) -> Option<String> {
    let ext = path.extension()?.to_str()?;
    if !matches!(ext, "tif" | "tiff") {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    valid_tile_id(stem).then(|| stem.to_string())
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Fraction of pixels whose cloud probability exceeds [`CLOUDY_PIXEL_PROBABILITY`].
pub fn cloud_fraction(cp: &RasterChip) -> Result<f64> {
    let band = cp.band("CP")?;
    let cloudy = band.iter().filter(|&&p| p > CLOUDY_PIXEL_PROBABILITY).count();
    Ok(cloudy as f64 / band.len() as f64)
}

/// Scan `root` and index every tile that has all four sources for a period.
pub fn build_manifest(root: &Path) -> Result<ManifestBuild> {
    let root_meta = fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !root_meta.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", root.display())));
    }
    let mut skipped = Vec::new();
    let mut entries = Vec::new();
    for period_dir in sorted_dir(root)? {
        if !period_dir.is_dir() {
            continue;
        }
        let period = period_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let mut found: BTreeMap<String, BTreeMap<Source, PathBuf>> = BTreeMap::new();
        for source_dir in sorted_dir(&period_dir)? {
            if !source_dir.is_dir() {
                continue;
            }
            let name = source_dir.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let Some(source) = Source::from_dir_name(name) else {
                skipped.push(SkipRecord {
                    path: source_dir.clone(),
                    reason: format!("unknown source directory `{name}`"),
                });
                continue;
            };
            for file in sorted_dir(&source_dir)? {
                match parse_file_name(&file) {
                    Some(tile_id) => {
                        found.entry(tile_id).or_default().insert(source, file);
                    }
                    None => skipped.push(SkipRecord {
                        path: file,
                        reason: "malformed file name (expected <tile_id>.tif)".into(),
                    }),
                }
            }
        }
        for (tile_id, files) in found {
            let missing: Vec<_> = Source::ALL
                .iter()
                .filter(|s| !files.contains_key(s))
                .map(|s| s.dir_name())
                .collect();
            if !missing.is_empty() {
                skipped.push(SkipRecord {
                    path: period_dir.join(&tile_id),
                    reason: format!("incomplete tile, missing {}", missing.join(", ")),
                });
                continue;
            }
            let cp_path = &files[&Source::Cp];
            let cloud = match io::read_chip(cp_path).and_then(|cp| cloud_fraction(&cp)) {
                Ok(c) => c,
                Err(e) => {
                    skipped.push(SkipRecord {
                        path: cp_path.clone(),
                        reason: format!("unreadable cloud probability: {e}"),
                    });
                    continue;
                }
            };
            entries.push(ManifestEntry {
                tile_id,
                period: period.clone(),
                paths: SourcePaths {
                    s1: files[&Source::S1].clone(),
                    s2: files[&Source::S2].clone(),
                    cp: files[&Source::Cp].clone(),
                    fnf: files[&Source::Fnf].clone(),
                },
                cloud_fraction: cloud,
                split: None,
            });
        }
    }
    Ok(ManifestBuild {
        manifest: DatasetManifest {
            root: root.to_path_buf(),
            fnf_codes: FnfCodes::default(),
            entries,
        },
        skipped,
    })
}

fn rel<'a>(root: &Path, p: &'a Path) -> &'a Path {
    p.strip_prefix(root).unwrap_or(p)
}

fn codes_str(codes: &[u8]) -> String {
    codes
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn manifest_to_string(m: &DatasetManifest) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("# root: {}\n", m.root.display()));
    out.push_str(&format!("# fnf_forest: {}\n", codes_str(&m.fnf_codes.forest)));
    out.push_str(&format!(
        "# fnf_non_forest: {}\n",
        codes_str(&m.fnf_codes.non_forest)
    ));
    out.push_str(&format!("# {COLUMNS}\n"));
    for e in &m.entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.tile_id,
            e.period,
            rel(&m.root, &e.paths.s1).display(),
            rel(&m.root, &e.paths.s2).display(),
            rel(&m.root, &e.paths.cp).display(),
            rel(&m.root, &e.paths.fnf).display(),
            e.cloud_fraction,
            e.split.map_or("-", Split::as_str),
        ));
    }
    out
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // a relative root would resolve against whatever directory reads the file
    let abs = |p: &Path| std::path::absolute(p).map_err(|e| Error::io(p, e));
    let mut m = m.clone();
    m.root = abs(&m.root)?;
    for e in &mut m.entries {
        for p in [&mut e.paths.s1, &mut e.paths.s2, &mut e.paths.cp, &mut e.paths.fnf] {
            *p = abs(p)?;
        }
    }
    fs::write(path, manifest_to_string(&m)).map_err(|e| Error::io(path, e))
}

fn parse_codes(path: &Path, s: &str) -> Result<Vec<u8>> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<u8>()
                .map_err(|_| Error::format(path, format!("bad FNF code `{c}`")))
        })
        .collect()
}

/// Parse a manifest file. Relative paths resolve against the recorded root,
/// or against the manifest's own directory when no root is recorded.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut codes = FnfCodes::default();
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(r) = comment.strip_prefix("root:") {
                root = PathBuf::from(r.trim());
            } else if let Some(c) = comment.strip_prefix("fnf_forest:") {
                codes.forest = parse_codes(path, c)?;
            } else if let Some(c) = comment.strip_prefix("fnf_non_forest:") {
                codes.non_forest = parse_codes(path, c)?;
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(Error::format(
                path,
                format!("line {}: expected 8 tab-separated fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let cloud_fraction = fields[6].parse::<f64>().map_err(|_| {
            Error::format(path, format!("line {}: bad cloud fraction `{}`", lineno + 1, fields[6]))
        })?;
        let split = match fields[7] {
            "-" | "" => None,
            s => Some(s.parse::<Split>()?),
        };
        let resolve = |p: &str| root.join(p);
        entries.push(ManifestEntry {
            tile_id: fields[0].to_string(),
            period: fields[1].to_string(),
            paths: SourcePaths {
                s1: resolve(fields[2]),
                s2: resolve(fields[3]),
                cp: resolve(fields[4]),
                fnf: resolve(fields[5]),
            },
            cloud_fraction,
            split,
        });
    }
    let manifest = DatasetManifest {
        root,
        fnf_codes: codes,
        entries,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Read all sources of a tile; the FNF raster is resampled onto the SAR grid
/// when resolutions differ, then collapsed to a binary mask.
pub fn load_tile(entry: &ManifestEntry, codes: &FnfCodes) -> Result<TileData> {
    let mut sources = BTreeMap::new();
    for s in [Source::S1, Source::S2, Source::Cp] {
        sources.insert(s, io::read_chip(entry.paths.get(s))?);
    }
    let target = sources[&Source::S1].grid().clone();
    let (fnf_grid, labels) = io::read_labels(&entry.paths.fnf)?;
    let mut fnf = Fnf4Mask::new(fnf_grid, labels)?;
    if !fnf.grid.aligned_with(&target) {
        let coarse = regrid_to_resolution(&fnf.grid, target.pixel_size_m)?;
        if (coarse.width_px, coarse.height_px) != (target.width_px, target.height_px) {
            return Err(Error::GridMismatch(format!(
                "tile `{}` FNF covers {}x{} px at {} m, features are {}x{}",
                entry.tile_id,
                fnf.grid.width_px,
                fnf.grid.height_px,
                fnf.grid.pixel_size_m,
                target.width_px,
                target.height_px
            )));
        }
        fnf = resample_fnf(&fnf, &target)?;
    }
    let mask = remap_fnf_with(&fnf, codes)?;
    Ok(TileData {
        tile_id: entry.tile_id.clone(),
        period: entry.period.clone(),
        sources,
        mask,
    })
}
