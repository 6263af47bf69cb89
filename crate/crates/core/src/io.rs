//! GeoTIFF-style raster files.
//!
//! Each band is written as its own TIFF page (64-bit float for continuous
//! bands, 8-bit for label rasters) carrying the usual GeoTIFF georeferencing
//! tags for EPSG:4326. The exact grid and band name are also stored as JSON
//! in the page's ImageDescription so that reading back is lossless.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GeoGrid, RasterChip};

const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
const TAG_MODEL_TIEPOINT: u16 = 33922;
const TAG_GEO_KEY_DIRECTORY: u16 = 34735;
const M_PER_DEG: f64 = 111_320.0;

#[derive(Serialize, Deserialize)]
struct PageMeta {
    band: String,
    grid: GeoGrid,
}

/// Raw band payload as stored on disk.
pub enum BandData {
    F64(Array2<f64>),
    U8(Array2<u8>),
}

impl BandData {
    fn to_f64(&self) -> Array2<f64> {
        match self {
            BandData::F64(a) => a.clone(),
            BandData::U8(a) => a.mapv(f64::from),
        }
    }
}

pub struct RasterFile {
    pub grid: GeoGrid,
    pub bands: Vec<(String, BandData)>,
}

fn geo_keys() -> [u16; 16] {
    // header, GTModelType=geographic, GTRasterType=PixelIsArea, GeographicType=WGS84
    [1, 1, 0, 3, 1024, 0, 1, 2, 1025, 0, 1, 1, 2048, 0, 1, 4326]
}

fn tiff_err(path: &Path, e: tiff::TiffError) -> Error {
    match e {
        tiff::TiffError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

fn write_georef<W, K>(
    enc: &mut tiff::encoder::DirectoryEncoder<'_, W, K>,
    meta: &PageMeta,
) -> tiff::TiffResult<()>
where
    W: std::io::Write + std::io::Seek,
    K: tiff::encoder::TiffKind,
{
    let g = &meta.grid;
    let desc = serde_json::to_string(meta).expect("page metadata serializes");
    enc.write_tag(Tag::ImageDescription, desc.as_str())?;
    let scale = [g.deg_per_px_lon(), g.deg_per_px_lat(), 0.0];
    enc.write_tag(Tag::Unknown(TAG_MODEL_PIXEL_SCALE), &scale[..])?;
    let tie = [0.0, 0.0, 0.0, g.lon_min, g.lat_max, 0.0];
    enc.write_tag(Tag::Unknown(TAG_MODEL_TIEPOINT), &tie[..])?;
    enc.write_tag(Tag::Unknown(TAG_GEO_KEY_DIRECTORY), &geo_keys()[..])?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

/// Write a multi-band chip, one float64 page per band.
pub fn write_chip(path: &Path, chip: &RasterChip) -> Result<()> {
    let file = create(path)?;
    let mut tiff = TiffEncoder::new(file).map_err(|e| tiff_err(path, e))?;
    let g = chip.grid();
    for (idx, name) in chip.band_names().iter().enumerate() {
        let plane: Vec<f64> = chip.bands().index_axis(Axis(2), idx).iter().copied().collect();
        let meta = PageMeta {
            band: name.clone(),
            grid: g.clone(),
        };
        let mut image = tiff
            .new_image::<colortype::Gray64Float>(g.width_px as u32, g.height_px as u32)
            .map_err(|e| tiff_err(path, e))?;
        write_georef(image.encoder(), &meta).map_err(|e| tiff_err(path, e))?;
        image.write_data(&plane).map_err(|e| tiff_err(path, e))?;
    }
    Ok(())
}

/// Write a single-band 8-bit label raster (binary masks, FNF codes, change states).
pub fn write_labels(path: &Path, grid: &GeoGrid, band: &str, labels: &Array2<u8>) -> Result<()> {
    let file = create(path)?;
    let mut tiff = TiffEncoder::new(file).map_err(|e| tiff_err(path, e))?;
    let plane: Vec<u8> = labels.iter().copied().collect();
    let meta = PageMeta {
        band: band.to_string(),
        grid: grid.clone(),
    };
    let mut image = tiff
        .new_image::<colortype::Gray8>(grid.width_px as u32, grid.height_px as u32)
        .map_err(|e| tiff_err(path, e))?;
    write_georef(image.encoder(), &meta).map_err(|e| tiff_err(path, e))?;
    image.write_data(&plane).map_err(|e| tiff_err(path, e))?;
    Ok(())
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_labels(path, mask.grid(), "forest", mask.labels())
}

fn page_meta<R: std::io::Read + std::io::Seek>(
    path: &Path,
    dec: &mut Decoder<R>,
    page: usize,
    width: usize,
    height: usize,
) -> Result<PageMeta> {
    if let Ok(desc) = dec.get_tag_ascii_string(Tag::ImageDescription) {
        if let Ok(meta) = serde_json::from_str::<PageMeta>(desc.trim_end_matches('\0')) {
            return Ok(meta);
        }
    }
    // Foreign GeoTIFF: fall back to the georeferencing tags.
    let scale = dec
        .get_tag_f64_vec(Tag::Unknown(TAG_MODEL_PIXEL_SCALE))
        .map_err(|e| tiff_err(path, e))?;
    let tie = dec
        .get_tag_f64_vec(Tag::Unknown(TAG_MODEL_TIEPOINT))
        .map_err(|e| tiff_err(path, e))?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(Error::format(path, "incomplete georeferencing tags"));
    }
    let grid = GeoGrid::new(
        (tie[3], tie[3] + scale[0] * width as f64),
        (tie[4] - scale[1] * height as f64, tie[4]),
        scale[0] * M_PER_DEG,
        width,
        height,
    )?;
    Ok(PageMeta {
        band: format!("band{}", page + 1),
        grid,
    })
}

/// Read every page of a raster file.
pub fn read_raster_file(path: &Path) -> Result<RasterFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(|e| tiff_err(path, e))?
        .with_limits(Limits::unlimited());
    let mut grid: Option<GeoGrid> = None;
    let mut bands = Vec::new();
    let mut page = 0;
    loop {
        let (w, h) = dec.dimensions().map_err(|e| tiff_err(path, e))?;
        let (w, h) = (w as usize, h as usize);
        let meta = page_meta(path, &mut dec, page, w, h)?;
        let data = match dec.read_image().map_err(|e| tiff_err(path, e))? {
            DecodingResult::F64(v) => BandData::F64(
                Array2::from_shape_vec((h, w), v).map_err(|e| Error::format(path, e.to_string()))?,
            ),
            DecodingResult::F32(v) => BandData::F64(
                Array2::from_shape_vec((h, w), v.into_iter().map(f64::from).collect())
                    .map_err(|e| Error::format(path, e.to_string()))?,
            ),
            DecodingResult::U8(v) => BandData::U8(
                Array2::from_shape_vec((h, w), v).map_err(|e| Error::format(path, e.to_string()))?,
            ),
            _ => return Err(Error::format(path, "unsupported sample format")),
        };
        match &grid {
            None => grid = Some(meta.grid.clone()),
            Some(g) if !g.aligned_with(&meta.grid) => {
                return Err(Error::format(path, format!("page {page} has a different grid")))
            }
            Some(_) => {}
        }
        bands.push((meta.band, data));
        page += 1;
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(|e| tiff_err(path, e))?;
    }
    Ok(RasterFile {
        grid: grid.expect("at least one page"),
        bands,
    })
}

pub fn read_chip(path: &Path) -> Result<RasterChip> {
    let file = read_raster_file(path)?;
    let (h, w) = file.grid.dims();
    let mut bands = Array3::<f64>::zeros((h, w, file.bands.len()));
    let mut names = Vec::with_capacity(file.bands.len());
    for (idx, (name, data)) in file.bands.iter().enumerate() {
        bands.index_axis_mut(Axis(2), idx).assign(&data.to_f64());
        names.push(name.clone());
    }
    RasterChip::new(file.grid, bands, names)
}

/// Read a single-band 8-bit label raster.
pub fn read_labels(path: &Path) -> Result<(GeoGrid, Array2<u8>)> {
    let file = read_raster_file(path)?;
    let grid = file.grid;
    match file.bands.into_iter().next() {
        Some((_, BandData::U8(a))) => Ok((grid, a)),
        Some((_, BandData::F64(a))) => {
            if a.iter().all(|v| v.fract() == 0.0 && (0.0..=255.0).contains(v)) {
                Ok((grid, a.mapv(|v| v as u8)))
            } else {
                Err(Error::format(path, "label raster holds non-integer values"))
            }
        }
        None => Err(Error::format(path, "no bands")),
    }
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let (grid, labels) = read_labels(path)?;
    BinaryMask::new(grid, labels)
}
