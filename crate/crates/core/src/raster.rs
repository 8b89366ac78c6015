//! Decoded 8-bit pixel grids.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, RgbImage, RgbaImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("decode failed: {0}")]
    Decode(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major interleaved 8-bit raster with 3 (RGB) or 4 (RGBA) channels.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, RasterError> {
        let image = Self {
            width,
            height,
            channels,
            pixels,
        };
        image.validate()?;
        Ok(image)
    }

    /// Image with every sample set to `value`.
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, RasterError> {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; len])
    }

    /// Checks the dimension and length invariants. Construction through
    /// [`RasterImage::new`] already does this; callers that build images via
    /// `from_raw_unchecked` should call it before processing.
    pub fn validate(&self) -> Result<(), RasterError> {
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::Invalid(format!(
                "dimensions must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if self.channels != 3 && self.channels != 4 {
            return Err(RasterError::Invalid(format!(
                "channel count must be 3 or 4, got {}",
                self.channels
            )));
        }
        let expected = self.width as usize * self.height as usize * self.channels as usize;
        if self.pixels.len() != expected {
            return Err(RasterError::Invalid(format!(
                "pixel buffer has {} samples, expected {}x{}x{} = {}",
                self.pixels.len(),
                self.width,
                self.height,
                self.channels,
                expected
            )));
        }
        Ok(())
    }

    /// Builds an image without checking invariants.
    pub fn from_raw_unchecked(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Self {
        Self {
            width,
            height,
            channels,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn same_shape(&self, other: &RasterImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let at = self.offset(x, y);
        &self.pixels[at..at + self.channels as usize]
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RasterError> {
        Ok(Self::from_dynamic(image::load_from_memory(bytes)?))
    }

    pub fn open(path: &Path) -> Result<Self, RasterError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    fn from_dynamic(img: DynamicImage) -> Self {
        if img.color().has_alpha() {
            let rgba = img.into_rgba8();
            let (w, h) = rgba.dimensions();
            Self::from_raw_unchecked(w, h, 4, rgba.into_raw())
        } else {
            let rgb = img.into_rgb8();
            let (w, h) = rgb.dimensions();
            Self::from_raw_unchecked(w, h, 3, rgb.into_raw())
        }
    }

    fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width, self.height);
        if self.channels == 4 {
            DynamicImage::ImageRgba8(
                RgbaImage::from_raw(w, h, self.pixels.clone()).expect("validated buffer"),
            )
        } else {
            DynamicImage::ImageRgb8(
                RgbImage::from_raw(w, h, self.pixels.clone()).expect("validated buffer"),
            )
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut out = Cursor::new(Vec::new());
        self.to_dynamic().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// JPEG has no alpha; an alpha channel is dropped.
    pub fn encode_jpeg(&self, quality: u8) -> Result<Vec<u8>, RasterError> {
        let rgb = self.to_dynamic().into_rgb8();
        let mut out = Vec::new();
        let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
        rgb.write_with_encoder(encoder)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(RasterImage::new(2, 2, 3, vec![0; 11]).is_err());
        assert!(RasterImage::new(0, 2, 3, vec![]).is_err());
        assert!(RasterImage::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(RasterImage::new(2, 2, 4, vec![0; 16]).is_ok());
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let pixels: Vec<u8> = (0..5 * 3 * 4).map(|i| (i * 7 % 256) as u8).collect();
        let img = RasterImage::new(5, 3, 4, pixels).unwrap();
        let back = RasterImage::decode(&img.encode_png().unwrap()).unwrap();
        assert_eq!(img, back);
    }
}
