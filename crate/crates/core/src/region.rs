//! Reveal regions, masks, compositing and tile extraction.
//!
//! Pixel `(x, y)` has its centre at integer coordinates `(x, y)`. A circle
//! covers every pixel with `(x - cx)^2 + (y - cy)^2 <= r^2`; a rectangle covers
//! `origin_x <= x < origin_x + width` and likewise for rows.

use serde::{Deserialize, Serialize};

use crate::blur::BlurError;
use crate::raster::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RevealRegion {
    Circle {
        center_x: i64,
        center_y: i64,
        radius: u32,
    },
    Rectangle {
        origin_x: i64,
        origin_y: i64,
        width: u32,
        height: u32,
    },
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }
}

impl RevealRegion {
    pub fn circle(center_x: i64, center_y: i64, radius: u32) -> Self {
        RevealRegion::Circle {
            center_x,
            center_y,
            radius,
        }
    }

    pub fn rect(origin_x: i64, origin_y: i64, width: u32, height: u32) -> Self {
        RevealRegion::Rectangle {
            origin_x,
            origin_y,
            width,
            height,
        }
    }

    /// Rejects degenerate regions (zero radius or zero extent).
    pub fn validate(&self) -> Result<(), BlurError> {
        match *self {
            RevealRegion::Circle { radius: 0, .. } => {
                Err(BlurError::InvalidParameter("circle radius must be positive".into()))
            }
            RevealRegion::Rectangle { width, height, .. } if width == 0 || height == 0 => Err(
                BlurError::InvalidParameter("rectangle width and height must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        match *self {
            RevealRegion::Circle {
                center_x,
                center_y,
                radius,
            } => {
                let dx = x - center_x;
                let dy = y - center_y;
                let r = radius as i64;
                dx * dx + dy * dy <= r * r
            }
            RevealRegion::Rectangle {
                origin_x,
                origin_y,
                width,
                height,
            } => {
                x >= origin_x
                    && x < origin_x + width as i64
                    && y >= origin_y
                    && y < origin_y + height as i64
            }
        }
    }

    /// Largest extent along either axis, in pixels.
    pub fn extent(&self) -> u32 {
        match *self {
            RevealRegion::Circle { radius, .. } => radius.saturating_mul(2).saturating_add(1),
            RevealRegion::Rectangle { width, height, .. } => width.max(height),
        }
    }

    /// Bounding box clipped to a `width x height` image, or `None` when the
    /// region covers no pixel of it.
    pub fn clipped_bounds(&self, width: u32, height: u32) -> Option<PixelBox> {
        let (x0, y0, x1, y1) = match *self {
            RevealRegion::Circle {
                center_x,
                center_y,
                radius,
            } => {
                let r = radius as i64;
                (center_x - r, center_y - r, center_x + r + 1, center_y + r + 1)
            }
            RevealRegion::Rectangle {
                origin_x,
                origin_y,
                width,
                height,
            } => (
                origin_x,
                origin_y,
                origin_x + width as i64,
                origin_y + height as i64,
            ),
        };
        let x0 = x0.max(0);
        let y0 = y0.max(0);
        let x1 = x1.min(width as i64);
        let y1 = y1.min(height as i64);
        if x0 >= x1 || y0 >= y1 {
            return None;
        }
        let b = PixelBox {
            x0: x0 as u32,
            y0: y0 as u32,
            x1: x1 as u32,
            y1: y1 as u32,
        };
        // A circle's box can overlap the image while the disc itself does not.
        let hit = (b.y0..b.y1).any(|y| (b.x0..b.x1).any(|x| self.contains(x as i64, y as i64)));
        hit.then_some(b)
    }
}

/// Row-major boolean coverage of a region union over an image grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevealMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl RevealMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_regions<'a>(
        width: u32,
        height: u32,
        regions: impl IntoIterator<Item = &'a RevealRegion>,
    ) -> Self {
        let mut mask = Self::empty(width, height);
        for region in regions {
            mask.add(region);
        }
        mask
    }

    pub fn add(&mut self, region: &RevealRegion) {
        let Some(b) = region.clipped_bounds(self.width, self.height) else {
            return;
        };
        for y in b.y0..b.y1 {
            for x in b.x0..b.x1 {
                if region.contains(x as i64, y as i64) {
                    self.bits[y as usize * self.width as usize + x as usize] = true;
                }
            }
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Covered pixels divided by total pixels.
    pub fn area_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.bits.len() as f64
    }
}

/// Area fraction of a single region on a `width x height` image.
pub fn region_area_fraction(region: &RevealRegion, width: u32, height: u32) -> f64 {
    RevealMask::from_regions(width, height, [region]).area_fraction()
}

/// Takes original pixels inside the union of `regions`, blurred pixels elsewhere.
pub fn composite_reveal(
    original: &RasterImage,
    blurred: &RasterImage,
    regions: &[RevealRegion],
) -> Result<RasterImage, BlurError> {
    original.validate()?;
    blurred.validate()?;
    if !original.same_shape(blurred) {
        return Err(BlurError::InvalidPair(format!(
            "original is {}x{}x{}, blurred is {}x{}x{}",
            original.width(),
            original.height(),
            original.channels(),
            blurred.width(),
            blurred.height(),
            blurred.channels()
        )));
    }
    let mask = RevealMask::from_regions(original.width(), original.height(), regions);
    let ch = original.channels() as usize;
    let mut out = blurred.pixels().to_vec();
    for y in 0..original.height() {
        for x in 0..original.width() {
            if mask.get(x, y) {
                let at = original.offset(x, y);
                out[at..at + ch].copy_from_slice(&original.pixels()[at..at + ch]);
            }
        }
    }
    Ok(RasterImage::from_raw_unchecked(
        original.width(),
        original.height(),
        original.channels(),
        out,
    ))
}

/// Crops the region's clipped bounding box out of `original`. Circle
/// tiles are RGBA and carry no pixel outside the disc.
pub fn region_tile(original: &RasterImage, region: &RevealRegion) -> Result<RasterImage, BlurError> {
    original.validate()?;
    region.validate()?;
    let b = region
        .clipped_bounds(original.width(), original.height())
        .ok_or_else(|| {
            BlurError::OutOfBounds(format!(
                "{region:?} does not intersect a {}x{} image",
                original.width(),
                original.height()
            ))
        })?;
    let ch = original.channels() as usize;
    if let RevealRegion::Rectangle { .. } = region {
        let mut out = Vec::with_capacity(b.width() as usize * b.height() as usize * ch);
        for y in b.y0..b.y1 {
            let start = original.offset(b.x0, y);
            out.extend_from_slice(&original.pixels()[start..start + b.width() as usize * ch]);
        }
        return Ok(RasterImage::from_raw_unchecked(b.width(), b.height(), original.channels(), out));
    }
    // Circles: RGBA, fully transparent black outside the disc.
    let mut out = vec![0u8; b.width() as usize * b.height() as usize * 4];
    let mut i = 0;
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            if region.contains(x as i64, y as i64) {
                let p = original.pixel(x, y);
                out[i..i + 3].copy_from_slice(&p[..3]);
                out[i + 3] = if ch == 4 { p[3] } else { 255 };
            }
            i += 4;
        }
    }
    Ok(RasterImage::from_raw_unchecked(b.width(), b.height(), 4, out))
}
