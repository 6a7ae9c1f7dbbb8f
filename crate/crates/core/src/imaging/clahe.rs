use serde::{Deserialize, Serialize};

use super::GrayImage;
use crate::error::{Error, Result};

/// Parameters of contrast limited adaptive histogram equalization.
///
/// `clip_limit` is a multiple of the mean per-bin count of a tile, so a
/// limit of 3 caps every bin at three times `tile_pixels / n_bins`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClaheParams {
    pub clip_limit: f64,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub n_bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            clip_limit: 3.0,
            tiles_x: 8,
            tiles_y: 8,
            n_bins: 256,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_limit.is_finite() && self.clip_limit > 1.0) {
            return Err(Error::invalid(format!("clip_limit must be > 1, got {}", self.clip_limit)));
        }
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(Error::invalid("tile grid must be at least 1x1"));
        }
        if !(2..=256).contains(&self.n_bins) {
            return Err(Error::invalid(format!("n_bins must be in 2..=256, got {}", self.n_bins)));
        }
        Ok(())
    }

    #[inline]
    fn bin_of(&self, v: u8) -> usize {
        usize::from(v) * self.n_bins / 256
    }
}

/// Per-tile intensity lookup tables, indexed `[ty * tiles_x + tx][value]`.
///
/// Each table is the rounded, 255-scaled CDF of the tile histogram after
/// clipping at the limit and one uniform redistribution of the excess.
pub fn tile_mappings(img: &GrayImage, p: &ClaheParams) -> Result<Vec<[u8; 256]>> {
    p.validate()?;
    if img.width() < p.tiles_x || img.height() < p.tiles_y {
        return Err(Error::invalid(format!(
            "{}x{} image is smaller than the {}x{} tile grid",
            img.width(),
            img.height(),
            p.tiles_x,
            p.tiles_y
        )));
    }

    let (w, h) = (img.width(), img.height());
    let mut hists = vec![vec![0u64; p.n_bins]; p.tiles_x * p.tiles_y];
    for y in 0..h {
        let ty = y * p.tiles_y / h;
        for x in 0..w {
            let tx = x * p.tiles_x / w;
            hists[ty * p.tiles_x + tx][p.bin_of(img.get(x, y))] += 1;
        }
    }

    let maps = hists
        .iter()
        .map(|hist| {
            let bins = clip_histogram(hist, p.clip_limit);
            let total: u64 = hist.iter().sum();
            let mut bin_map = vec![0u8; p.n_bins];
            let mut cum = 0.0;
            for (b, count) in bins.iter().enumerate() {
                cum += count;
                bin_map[b] = (255.0 * (cum / total as f64)).round().clamp(0.0, 255.0) as u8;
            }
            let mut lut = [0u8; 256];
            for (v, slot) in lut.iter_mut().enumerate() {
                *slot = bin_map[p.bin_of(v as u8)];
            }
            lut
        })
        .collect();
    Ok(maps)
}

/// Clips every bin at `clip_limit * total / n_bins` and spreads the clipped
/// mass evenly over all bins, once.
pub(crate) fn clip_histogram(hist: &[u64], clip_limit: f64) -> Vec<f64> {
    let n_bins = hist.len() as f64;
    let total: u64 = hist.iter().sum();
    let limit = clip_limit * total as f64 / n_bins;
    let mut excess = 0.0;
    let mut bins: Vec<f64> = hist
        .iter()
        .map(|&c| {
            let c = c as f64;
            if c > limit {
                excess += c - limit;
                limit
            } else {
                c
            }
        })
        .collect();
    if excess > 0.0 {
        let share = excess / n_bins;
        bins.iter_mut().for_each(|b| *b += share);
    }
    bins
}

/// Tile index pair and weight of the upper one for a pixel coordinate.
#[inline]
fn neighbours(pos: usize, extent: usize, tiles: usize) -> (usize, usize, f64) {
    let tile_size = extent as f64 / tiles as f64;
    let f = (pos as f64 + 0.5) / tile_size - 0.5;
    if f <= 0.0 {
        (0, 0, 0.0)
    } else if f >= (tiles - 1) as f64 {
        (tiles - 1, tiles - 1, 0.0)
    } else {
        let lo = f.floor() as usize;
        (lo, lo + 1, f - lo as f64)
    }
}

/// Contrast limited adaptive histogram equalization.
///
/// Each output pixel blends the mappings of its four nearest tile centres
/// bilinearly.
pub fn clahe(img: &GrayImage, p: &ClaheParams) -> Result<GrayImage> {
    let maps = tile_mappings(img, p)?;
    let (w, h) = (img.width(), img.height());
    let cols: Vec<_> = (0..w).map(|x| neighbours(x, w, p.tiles_x)).collect();

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (ty0, ty1, wy) = neighbours(y, h, p.tiles_y);
        let row0 = ty0 * p.tiles_x;
        let row1 = ty1 * p.tiles_x;
        for (x, &(tx0, tx1, wx)) in cols.iter().enumerate() {
            let v = usize::from(img.get(x, y));
            let top = (1.0 - wx) * f64::from(maps[row0 + tx0][v]) + wx * f64::from(maps[row0 + tx1][v]);
            let bottom = (1.0 - wx) * f64::from(maps[row1 + tx0][v]) + wx * f64::from(maps[row1 + tx1][v]);
            let value = (1.0 - wy) * top + wy * bottom;
            out.push(value.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn params(clip_limit: f64, tiles: usize) -> ClaheParams {
        ClaheParams {
            clip_limit,
            tiles_x: tiles,
            tiles_y: tiles,
            n_bins: 256,
        }
    }

    /// Plain global histogram equalization, written out independently.
    fn equalize_oracle(pixels: &[u8]) -> Vec<u8> {
        let n = pixels.len() as f64;
        pixels
            .iter()
            .map(|&v| {
                let at_or_below = pixels.iter().filter(|&&u| u <= v).count() as f64;
                (255.0 * (at_or_below / n)).round() as u8
            })
            .collect()
    }

    #[test]
    fn constant_image_stays_constant() {
        for (w, h, tiles) in [(64, 64, 8), (37, 23, 5), (9, 9, 3)] {
            let img = GrayImage::filled(w, h, 90).unwrap();
            let out = clahe(&img, &params(3.0, tiles)).unwrap();
            let first = out.pixels()[0];
            assert!(out.pixels().iter().all(|&v| v == first), "{w}x{h}");
        }
    }

    #[test]
    fn single_tile_without_clipping_is_histogram_equalization() {
        let mut r = rng::seeded(3);
        let pixels: Vec<u8> = (0..64).map(|_| r.gen_range(0..=255u8)).collect();
        let img = GrayImage::new(8, 8, pixels.clone()).unwrap();
        let out = clahe(&img, &params(1e6, 1)).unwrap();
        assert_eq!(out.pixels(), equalize_oracle(&pixels).as_slice());
    }

    #[test]
    fn two_level_image_keeps_two_ordered_levels() {
        let img = GrayImage::from_fn(16, 16, |_, y| if y < 8 { 50 } else { 200 }).unwrap();
        let out = clahe(&img, &params(3.0, 1)).unwrap();

        // Hand evaluation: 256 pixels, limit 3 per bin, 2*(128-3) = 250 clipped
        // and shared as 250/256 per bin.
        let share = 250.0 / 256.0;
        let low = ((3.0 + 51.0 * share) / 256.0 * 255.0_f64).round() as u8;
        let high = ((6.0 + 201.0 * share) / 256.0 * 255.0_f64).round() as u8;
        assert_eq!((low, high), (53, 201));

        let mut levels: Vec<u8> = out.pixels().to_vec();
        levels.sort_unstable();
        levels.dedup();
        assert_eq!(levels, vec![low, high]);
        assert_eq!(out.get(0, 0), low);
        assert_eq!(out.get(0, 15), high);
    }

    #[test]
    fn clipped_bins_respect_bound() {
        let mut r = rng::seeded(11);
        for _ in 0..20 {
            let hist: Vec<u64> = (0..64).map(|_| if r.gen_bool(0.1) { r.gen_range(0..500) } else { r.gen_range(0..5) }).collect();
            let total: u64 = hist.iter().sum();
            if total == 0 {
                continue;
            }
            let limit = 3.0 * total as f64 / 64.0;
            let excess: f64 = hist.iter().map(|&c| (c as f64 - limit).max(0.0)).sum();
            let clipped = clip_histogram(&hist, 3.0);
            for b in &clipped {
                assert!(*b <= limit + excess / 64.0 + 1.0);
            }
            let mass: f64 = clipped.iter().sum();
            assert!((mass - total as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn coarse_bins_map_through_their_bin() {
        let img = GrayImage::from_fn(16, 16, |x, y| (x * 16 + y) as u8).unwrap();
        let p = ClaheParams { n_bins: 4, ..params(2.0, 2) };
        let maps = tile_mappings(&img, &p).unwrap();
        for lut in &maps {
            assert_eq!(lut[0], lut[63]);
            assert!(lut[63] <= lut[64]);
        }
    }

    #[test]
    fn rejects_invalid_input() {
        let img = GrayImage::filled(4, 4, 0).unwrap();
        assert!(clahe(&img, &params(3.0, 8)).is_err());
        assert!(clahe(&img, &params(1.0, 1)).is_err());
        assert!(clahe(&img, &ClaheParams { n_bins: 1, ..params(3.0, 1) }).is_err());
    }

    #[test]
    fn output_preserves_dims() {
        let mut r = rng::seeded(5);
        let img = GrayImage::from_fn(33, 17, |_, _| r.gen()).unwrap();
        let out = clahe(&img, &params(3.0, 4)).unwrap();
        assert_eq!((out.width(), out.height()), (33, 17));
    }
}
