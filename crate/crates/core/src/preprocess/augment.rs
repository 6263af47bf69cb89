//! Paired image/mask augmentation: flips, shifts and rotations.
//!
//! One parameter draw is mapped through the same inverse coordinate transform
//! for every feature channel and for the mask. Features are sampled
//! bilinearly, the mask by nearest neighbour; coordinates that fall outside
//! the frame are clamped to the nearest edge pixel.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, RasterChip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillMode {
    #[default]
    NearestEdge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Shift bound as a fraction of width/height, in [0, 0.10].
    pub max_shift_fraction: f64,
    /// Rotation bound in degrees, in [0, 180].
    pub max_rotation_deg: f64,
    pub fill: FillMode,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            flip_h: true,
            flip_v: true,
            max_shift_fraction: 0.10,
            max_rotation_deg: 180.0,
            fill: FillMode::NearestEdge,
        }
    }
}

impl AugmentationPolicy {
    pub fn disabled() -> Self {
        AugmentationPolicy {
            flip_h: false,
            flip_v: false,
            max_shift_fraction: 0.0,
            max_rotation_deg: 0.0,
            fill: FillMode::NearestEdge,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.10).contains(&self.max_shift_fraction) {
            return Err(Error::Config(format!(
                "max_shift_fraction must lie in [0, 0.10], got {}",
                self.max_shift_fraction
            )));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(Error::Config(format!(
                "max_rotation_deg must lie in [0, 180], got {}",
                self.max_rotation_deg
            )));
        }
        Ok(())
    }

    /// Draw one set of transform parameters.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        let flip_h = self.flip_h && rng.gen_bool(0.5);
        let flip_v = self.flip_v && rng.gen_bool(0.5);
        let mut sym = |bound: f64| {
            if bound > 0.0 {
                rng.gen_range(-bound..=bound)
            } else {
                0.0
            }
        };
        let shift_x = sym(self.max_shift_fraction);
        let shift_y = sym(self.max_shift_fraction);
        let rotation_deg = sym(self.max_rotation_deg);
        AugmentParams {
            flip_h,
            flip_v,
            shift_x,
            shift_y,
            rotation_deg,
        }
    }
}

/// A concrete transform. Applied to the image as: flips, then rotation
/// about the frame centre (counter-clockwise in display orientation), then
/// a shift of `shift_x · W` columns and `shift_y · H` rows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip_h: bool,
    pub flip_v: bool,
    pub shift_x: f64,
    pub shift_y: f64,
    pub rotation_deg: f64,
}

impl AugmentParams {
    pub fn is_identity(&self) -> bool {
        !self.flip_h
            && !self.flip_v
            && self.shift_x == 0.0
            && self.shift_y == 0.0
            && self.rotation_deg == 0.0
    }
}

/// Inverse map from output pixel (row, col) to source coordinates.
struct InverseMap {
    h: usize,
    w: usize,
    cos: f64,
    sin: f64,
    dy: f64,
    dx: f64,
    flip_h: bool,
    flip_v: bool,
}

impl InverseMap {
    fn new(p: &AugmentParams, h: usize, w: usize) -> Self {
        let (cos, sin) = cos_sin_deg(p.rotation_deg);
        InverseMap {
            h,
            w,
            cos,
            sin,
            dy: p.shift_y * h as f64,
            dx: p.shift_x * w as f64,
            flip_h: p.flip_h,
            flip_v: p.flip_v,
        }
    }

    fn source(&self, row: usize, col: usize) -> (f64, f64) {
        let cy = (self.h as f64 - 1.0) / 2.0;
        let cx = (self.w as f64 - 1.0) / 2.0;
        let y = row as f64 - self.dy - cy;
        let x = col as f64 - self.dx - cx;
        // rows grow downwards, so a counter-clockwise display rotation by θ
        // is undone by rotating (x, -y) back by θ
        let sx = self.cos * x - self.sin * y;
        let sy = self.sin * x + self.cos * y;
        let mut sy = sy + cy;
        let mut sx = sx + cx;
        if self.flip_v {
            sy = self.h as f64 - 1.0 - sy;
        }
        if self.flip_h {
            sx = self.w as f64 - 1.0 - sx;
        }
        (sy, sx)
    }
}

/// cos/sin of an angle in degrees, exact at multiples of 90°.
fn cos_sin_deg(deg: f64) -> (f64, f64) {
    let quarter = deg / 90.0;
    if quarter == quarter.round() {
        match (quarter as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let r = deg.to_radians();
        (r.cos(), r.sin())
    }
}

fn clamp_index(v: f64, n: usize) -> usize {
    (v.max(0.0) as usize).min(n - 1)
}

fn nearest(v: f64, n: usize) -> usize {
    clamp_index(v.round(), n)
}

/// Transform an H×W label grid with nearest-neighbour sampling.
pub fn transform_labels(labels: &Array2<u8>, params: &AugmentParams) -> Array2<u8> {
    if params.is_identity() {
        return labels.clone();
    }
    let (h, w) = labels.dim();
    let map = InverseMap::new(params, h, w);
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (sy, sx) = map.source(r, c);
        labels[[nearest(sy, h), nearest(sx, w)]]
    })
}

/// Transform an H×W×C feature stack with bilinear sampling.
pub fn transform_features(bands: &Array3<f64>, params: &AugmentParams) -> Array3<f64> {
    if params.is_identity() {
        return bands.clone();
    }
    let (h, w, c) = bands.dim();
    let map = InverseMap::new(params, h, w);
    let mut out = Array3::<f64>::zeros((h, w, c));
    for r in 0..h {
        for col in 0..w {
            let (sy, sx) = map.source(r, col);
            let sy = sy.clamp(0.0, (h - 1) as f64);
            let sx = sx.clamp(0.0, (w - 1) as f64);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            for k in 0..c {
                let top = bands[[y0, x0, k]] * (1.0 - fx) + bands[[y0, x1, k]] * fx;
                let bottom = bands[[y1, x0, k]] * (1.0 - fx) + bands[[y1, x1, k]] * fx;
                out[[r, col, k]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

pub fn apply_to_mask(mask: &BinaryMask, params: &AugmentParams) -> BinaryMask {
    BinaryMask::new(mask.grid().clone(), transform_labels(mask.labels(), params))
        .expect("nearest resampling keeps labels binary")
}

pub fn apply_to_chip(chip: &RasterChip, params: &AugmentParams) -> RasterChip {
    RasterChip::new(
        chip.grid().clone(),
        transform_features(chip.bands(), params),
        chip.band_names().to_vec(),
    )
    .expect("transform preserves chip shape")
}

/// Draw one transform and apply it to both the features and the mask.
pub fn augment<R: Rng + ?Sized>(
    features: &RasterChip,
    mask: &BinaryMask,
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Result<(RasterChip, BinaryMask)> {
    let fd = features.grid().dims();
    let md = mask.grid().dims();
    if fd != md || features.bands().dim().0 != mask.labels().dim().0 {
        return Err(Error::shape(
            format!("{}x{}", fd.0, fd.1),
            format!("{}x{}", md.0, md.1),
        ));
    }
    let params = policy.draw(rng);
    Ok((apply_to_chip(features, &params), apply_to_mask(mask, &params)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (RasterChip, BinaryMask) {
        let g = GeoGrid::from_origin(-5.0, 6.0, 10.0, w, h).unwrap();
        let bands = Array3::from_shape_fn((h, w, 2), |_| rng.gen_range(0.0..1.0));
        let labels = Array2::from_shape_fn((h, w), |_| rng.gen_range(0..2u8));
        (
            RasterChip::new(g.clone(), bands, vec!["VV".into(), "VH".into()]).unwrap(),
            BinaryMask::new(g, labels).unwrap(),
        )
    }

    #[test]
    fn disabled_policy_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (f, m) = random_pair(&mut rng, 8, 8);
        let (f2, m2) = augment(&f, &m, &AugmentationPolicy::disabled(), &mut rng).unwrap();
        assert_eq!(f, f2);
        assert_eq!(m, m2);
    }

    #[test]
    fn horizontal_flip_reverses_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (f, m) = random_pair(&mut rng, 6, 9);
        let p = AugmentParams {
            flip_h: true,
            ..Default::default()
        };
        let out = apply_to_mask(&m, &p);
        let mut expected = m.labels().clone();
        expected.invert_axis(ndarray::Axis(1));
        assert_eq!(out.labels(), &expected);
        assert_eq!(out.forest_count(), m.forest_count());
        let fo = apply_to_chip(&f, &p);
        assert_eq!(fo.bands()[[2, 0, 1]], f.bands()[[2, 8, 1]]);
    }

    #[test]
    fn quarter_turn_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [7usize, 8] {
            let (_, m) = random_pair(&mut rng, n, n);
            for deg in [90.0, -90.0, 180.0, 270.0] {
                let p = AugmentParams {
                    rotation_deg: deg,
                    ..Default::default()
                };
                let out = apply_to_mask(&m, &p);
                assert_eq!(out.forest_count(), m.forest_count());
                let mut sorted_in: Vec<u8> = m.labels().iter().copied().collect();
                let mut sorted_out: Vec<u8> = out.labels().iter().copied().collect();
                sorted_in.sort();
                sorted_out.sort();
                assert_eq!(sorted_in, sorted_out);
            }
        }
    }

    #[test]
    fn quarter_turn_orientation() {
        // counter-clockwise: the top-right corner moves to the top-left
        let mut labels = Array2::<u8>::zeros((4, 4));
        labels[[0, 3]] = 1;
        let p = AugmentParams {
            rotation_deg: 90.0,
            ..Default::default()
        };
        let out = transform_labels(&labels, &p);
        assert_eq!(out[[0, 0]], 1);
        assert_eq!(out.sum(), 1);
    }

    #[test]
    fn whole_pixel_shift_with_edge_fill() {
        let labels = Array2::from_shape_fn((1, 10), |(_, c)| c as u8);
        let p = AugmentParams {
            shift_x: 0.2,
            ..Default::default()
        };
        let out = transform_labels(&labels, &p);
        assert_eq!(out.row(0).to_vec(), vec![0, 0, 0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn draws_respect_bounds() {
        let policy = AugmentationPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let p = policy.draw(&mut rng);
            assert!(p.shift_x.abs() <= 0.10 && p.shift_y.abs() <= 0.10);
            assert!(p.rotation_deg.abs() <= 180.0);
        }
    }

    #[test]
    fn mismatched_dims_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (f, _) = random_pair(&mut rng, 8, 8);
        let (_, m) = random_pair(&mut rng, 8, 6);
        assert!(augment(&f, &m, &AugmentationPolicy::default(), &mut rng).is_err());
    }

    #[test]
    fn out_of_range_policy_rejected() {
        let p = AugmentationPolicy {
            max_shift_fraction: 0.2,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
