//! Radiograph preprocessing: ROI crop, CLAHE, augmentation and resize.
//!
//! Every stage consumes and produces a [`GrayImage`]; [`preprocess`] chains
//! them in the fixed order crop → CLAHE → augment → resize and scales the
//! result to a `[0, 1]` tensor.

mod clahe;
mod geometry;
mod pipeline;

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

pub use clahe::{clahe, tile_mappings, ClaheParams};
pub use geometry::{augment, mirror_horizontal, resize, segment_crop, zoom, AugmentParams, CropSpec};
pub use pipeline::{preprocess, preprocess_image, to_tensor, PipelineConfig};

/// 8-bit single channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Reads a PNG or binary PGM file. Colour input is converted with
    /// BT.601 luma weights; 16-bit input is reduced to 8 bits.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_dynamic(img))
    }

    fn from_dynamic(img: DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = match img {
            DynamicImage::ImageLuma8(buf) => buf.into_raw(),
            DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| (v >> 8) as u8).collect(),
            other if !other.color().has_color() => other.into_luma8().into_raw(),
            other => other
                .into_rgb8()
                .pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
                    y.round().clamp(0.0, 255.0) as u8
                })
                .collect(),
        };
        GrayImage {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .expect("pixel buffer length checked at construction");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 30 + y * 7) as u8).unwrap();
        let png = dir.path().join("a.png");
        img.save_png(&png).unwrap();
        assert_eq!(GrayImage::load(&png).unwrap(), img);

        let pgm = dir.path().join("a.pgm");
        let mut bytes = b"P5\n7 5\n255\n".to_vec();
        bytes.extend_from_slice(img.pixels());
        std::fs::write(&pgm, bytes).unwrap();
        assert_eq!(GrayImage::load(&pgm).unwrap(), img);
    }

    #[test]
    fn colour_input_uses_bt601_luma() {
        let rgb = image::RgbImage::from_raw(2, 1, vec![255, 0, 0, 10, 200, 30]).unwrap();
        let g = GrayImage::from_dynamic(DynamicImage::ImageRgb8(rgb));
        assert_eq!(g.pixels(), &[76, 124]);
    }
}
