use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Axis-aligned region of interest in fractions of the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub x_frac: f64,
    pub y_frac: f64,
    pub w_frac: f64,
    pub h_frac: f64,
}

impl Default for CropSpec {
    fn default() -> Self {
        CropSpec {
            x_frac: 0.0,
            y_frac: 0.0,
            w_frac: 1.0,
            h_frac: 1.0,
        }
    }
}

const FRAC_SLACK: f64 = 1e-12;

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [self.x_frac, self.y_frac, self.w_frac, self.h_frac];
        if fields.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid(format!("crop fractions must lie in [0, 1]: {self:?}")));
        }
        if self.w_frac <= 0.0 || self.h_frac <= 0.0 {
            return Err(Error::invalid(format!("crop has zero area: {self:?}")));
        }
        if self.x_frac + self.w_frac > 1.0 + FRAC_SLACK || self.y_frac + self.h_frac > 1.0 + FRAC_SLACK {
            return Err(Error::invalid(format!("crop extends past the image: {self:?}")));
        }
        Ok(())
    }
}

/// Extracts the fractional sub-rectangle; pixel values are copied unchanged.
pub fn segment_crop(img: &GrayImage, spec: &CropSpec) -> Result<GrayImage> {
    spec.validate()?;
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = ((spec.x_frac * w).round() as usize).min(img.width());
    let y0 = ((spec.y_frac * h).round() as usize).min(img.height());
    let cw = ((spec.w_frac * w).round() as usize).min(img.width() - x0);
    let ch = ((spec.h_frac * h).round() as usize).min(img.height() - y0);
    if cw == 0 || ch == 0 {
        return Err(Error::invalid(format!(
            "crop {spec:?} of a {}x{} image rounds to zero area",
            img.width(),
            img.height()
        )));
    }
    GrayImage::from_fn(cw, ch, |x, y| img.get(x0 + x, y0 + y))
}

#[inline]
fn source_coord(dst: usize, dst_len: usize, src_len: usize) -> (usize, usize, f64) {
    let f = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    let f = f.clamp(0.0, (src_len - 1) as f64);
    let lo = f.floor() as usize;
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, f - lo as f64)
}

/// Bilinear resampling with pixel-centre alignment.
pub fn resize(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("resize target must be positive, got {width}x{height}")));
    }
    if (width, height) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    let cols: Vec<_> = (0..width).map(|x| source_coord(x, width, img.width())).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, wy) = source_coord(y, height, img.height());
        for &(x0, x1, wx) in &cols {
            let p = |x, y| f64::from(img.get(x, y));
            let top = (1.0 - wx) * p(x0, y0) + wx * p(x1, y0);
            let bottom = (1.0 - wx) * p(x0, y1) + wx * p(x1, y1);
            let v = (1.0 - wy) * top + wy * bottom;
            out.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(width, height, out)
}

pub fn mirror_horizontal(img: &GrayImage) -> GrayImage {
    let w = img.width();
    GrayImage::from_fn(w, img.height(), |x, y| img.get(w - 1 - x, y)).expect("same dimensions")
}

/// Scales content about the image centre by `factor`, keeping dimensions.
///
/// Factors above 1 crop the centre and enlarge it; factors below 1 shrink
/// the image and pad the border by edge replication.
pub fn zoom(img: &GrayImage, factor: f64) -> Result<GrayImage> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::invalid(format!("zoom factor must be positive, got {factor}")));
    }
    let (w, h) = (img.width(), img.height());
    if factor == 1.0 {
        return Ok(img.clone());
    }
    if factor > 1.0 {
        let cw = ((w as f64 / factor).round() as usize).clamp(1, w);
        let ch = ((h as f64 / factor).round() as usize).clamp(1, h);
        let x0 = (w - cw) / 2;
        let y0 = (h - ch) / 2;
        let centre = GrayImage::from_fn(cw, ch, |x, y| img.get(x0 + x, y0 + y))?;
        resize(&centre, w, h)
    } else {
        let sw = ((w as f64 * factor).round() as usize).clamp(1, w);
        let sh = ((h as f64 * factor).round() as usize).clamp(1, h);
        let small = resize(img, sw, sh)?;
        let x0 = (w - sw) / 2;
        let y0 = (h - sh) / 2;
        GrayImage::from_fn(w, h, |x, y| {
            let sx = x.saturating_sub(x0).min(sw - 1);
            let sy = y.saturating_sub(y0).min(sh - 1);
            small.get(sx, sy)
        })
    }
}

/// Random horizontal flip and zoom jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip_probability: f64,
    /// Zoom factor is drawn from `[1 - zoom_fraction, 1 + zoom_fraction]`.
    pub zoom_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            flip_probability: 0.5,
            zoom_fraction: 0.1,
            seed: 0,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::invalid(format!(
                "flip_probability must lie in [0, 1], got {}",
                self.flip_probability
            )));
        }
        if !(0.0..1.0).contains(&self.zoom_fraction) {
            return Err(Error::invalid(format!(
                "zoom_fraction must lie in [0, 1), got {}",
                self.zoom_fraction
            )));
        }
        Ok(())
    }
}

/// Applies a random flip then a random zoom, drawing from `rng`.
///
/// Always consumes exactly two draws so the stream stays aligned whatever
/// the outcome.
pub fn augment(img: &GrayImage, p: &AugmentParams, rng: &mut Rng) -> Result<GrayImage> {
    p.validate()?;
    let flip = rng.gen::<f64>() < p.flip_probability;
    let u: f64 = rng.gen();
    let factor = 1.0 - p.zoom_fraction + 2.0 * p.zoom_fraction * u;
    let img = if flip { mirror_horizontal(img) } else { img.clone() };
    zoom(&img, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ramp(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 256) as u8).unwrap()
    }

    #[test]
    fn identity_crop() {
        let img = ramp(13, 9);
        assert_eq!(segment_crop(&img, &CropSpec::default()).unwrap(), img);
    }

    #[test]
    fn central_crop_matches_hand_indexing() {
        let img = ramp(100, 100);
        let spec = CropSpec {
            x_frac: 0.25,
            y_frac: 0.25,
            w_frac: 0.5,
            h_frac: 0.5,
        };
        let out = segment_crop(&img, &spec).unwrap();
        let mut expected = Vec::new();
        for y in 25..75 {
            for x in 25..75 {
                expected.push(img.pixels()[y * 100 + x]);
            }
        }
        assert_eq!((out.width(), out.height()), (50, 50));
        assert_eq!(out.pixels(), expected.as_slice());
    }

    #[test]
    fn zero_area_crop_is_rejected() {
        let img = ramp(10, 10);
        let spec = CropSpec {
            x_frac: 0.5,
            y_frac: 0.5,
            w_frac: 0.0,
            h_frac: 0.0,
        };
        assert!(segment_crop(&img, &spec).is_err());
        let tiny = CropSpec {
            x_frac: 0.0,
            y_frac: 0.0,
            w_frac: 0.01,
            h_frac: 0.5,
        };
        assert!(segment_crop(&img, &tiny).is_err());
    }

    #[test]
    fn resize_same_dims_is_identity() {
        let img = ramp(11, 6);
        assert_eq!(resize(&img, 11, 6).unwrap(), img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = GrayImage::filled(7, 5, 133).unwrap();
        for (w, h) in [(1, 1), (3, 9), (20, 17)] {
            assert!(resize(&img, w, h).unwrap().pixels().iter().all(|&v| v == 133));
        }
    }

    #[test]
    fn resize_interpolates_between_endpoints() {
        let img = GrayImage::new(2, 1, vec![0, 255]).unwrap();
        let out = resize(&img, 3, 1).unwrap();
        let mid = out.get(1, 0);
        assert!((127..=129).contains(&mid), "{mid}");
        assert!(mid > 0 && mid < 255);
    }

    #[test]
    fn mirror_twice_is_identity() {
        let img = ramp(9, 4);
        assert_ne!(mirror_horizontal(&img), img);
        assert_eq!(mirror_horizontal(&mirror_horizontal(&img)), img);
    }

    #[test]
    fn augment_without_zoom_and_forced_flip_twice_is_identity() {
        let img = ramp(16, 12);
        let p = AugmentParams {
            flip_probability: 1.0,
            zoom_fraction: 0.0,
            seed: 0,
        };
        let mut r = rng::seeded(1);
        let once = augment(&img, &p, &mut r).unwrap();
        assert_eq!(once, mirror_horizontal(&img));
        assert_eq!(augment(&once, &p, &mut r).unwrap(), img);
    }

    #[test]
    fn unit_zoom_without_flip_is_identity() {
        let img = ramp(16, 12);
        assert_eq!(zoom(&img, 1.0).unwrap(), img);
        let p = AugmentParams {
            flip_probability: 0.0,
            zoom_fraction: 0.0,
            seed: 0,
        };
        assert_eq!(augment(&img, &p, &mut rng::seeded(9)).unwrap(), img);
    }

    #[test]
    fn augment_is_deterministic_and_keeps_dims() {
        let img = ramp(31, 17);
        let p = AugmentParams::default();
        for seed in 0..10 {
            let a = augment(&img, &p, &mut rng::seeded(seed)).unwrap();
            let b = augment(&img, &p, &mut rng::seeded(seed)).unwrap();
            assert_eq!(a, b);
            assert_eq!((a.width(), a.height()), (31, 17));
        }
    }

    #[test]
    fn zoom_out_pads_with_edge_values() {
        let img = GrayImage::from_fn(20, 20, |x, _| if x < 10 { 10 } else { 240 }).unwrap();
        let out = zoom(&img, 0.8).unwrap();
        assert_eq!(out.get(0, 0), 10);
        assert_eq!(out.get(19, 19), 240);
    }

    #[test]
    fn invalid_augment_params_rejected() {
        let bad = AugmentParams {
            flip_probability: 1.5,
            ..AugmentParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentParams {
            zoom_fraction: 1.0,
            ..AugmentParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
