//! Separable Gaussian blur with reflect-101 borders.
//!
//! Colour channels are convolved horizontally then vertically, keeping the
//! intermediate in the kernel's float type and rounding to 8 bits once at the
//! end. A fourth (alpha) channel is copied through untouched.

use num_traits::Float;
use thiserror::Error;

use crate::kernel::GaussianKernel;
use crate::raster::{RasterError, RasterImage};

#[derive(Debug, Error)]
pub enum BlurError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid image pair: {0}")]
    InvalidPair(String),
    #[error("region out of bounds: {0}")]
    OutOfBounds(String),
}

impl From<RasterError> for BlurError {
    fn from(e: RasterError) -> Self {
        BlurError::InvalidImage(e.to_string())
    }
}

/// Maps any integer position onto `0..len` by mirroring about the edge
/// pixels without repeating them (`dcb|abcd|cba`).
pub fn reflect_101(pos: i64, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as i64 - 1);
    let m = pos.rem_euclid(period);
    if m < len as i64 {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Blur with an `f64` intermediate.
pub fn blur_image(image: &RasterImage, sigma: f64) -> Result<RasterImage, BlurError> {
    blur_image_with::<f64>(image, sigma)
}

/// Blur with the intermediate precision chosen by `T`.
pub fn blur_image_with<T: Float>(image: &RasterImage, sigma: f64) -> Result<RasterImage, BlurError> {
    image.validate()?;
    let sigma_t = T::from(sigma).ok_or_else(|| {
        BlurError::InvalidParameter(format!("sigma {sigma} not representable"))
    })?;
    let kernel = GaussianKernel::new(sigma_t)?;
    Ok(convolve_separable(image, &kernel))
}

pub fn convolve_separable<T: Float>(image: &RasterImage, kernel: &GaussianKernel<T>) -> RasterImage {
    if kernel.is_identity() {
        return image.clone();
    }
    let w = image.width() as usize;
    let h = image.height() as usize;
    let ch = image.channels() as usize;
    let colour = 3usize;
    let r = kernel.radius();
    let weights = kernel.weights();
    let src = image.pixels();

    let x_taps = reflect_table(w, r);
    let y_taps = reflect_table(h, r);

    // Horizontal pass over the colour samples into a float buffer.
    let mut horiz = vec![T::zero(); w * h * colour];
    for y in 0..h {
        let row = y * w * ch;
        for x in 0..w {
            let taps = &x_taps[x..x + 2 * r + 1];
            for c in 0..colour {
                let mut acc = T::zero();
                for (k, &sx) in taps.iter().enumerate() {
                    acc = acc + weights[k] * T::from(src[row + sx * ch + c]).unwrap();
                }
                horiz[(y * w + x) * colour + c] = acc;
            }
        }
    }

    let mut out = src.to_vec();
    let max = T::from(255.0).unwrap();
    for y in 0..h {
        let taps = &y_taps[y..y + 2 * r + 1];
        for x in 0..w {
            for c in 0..colour {
                let mut acc = T::zero();
                for (k, &sy) in taps.iter().enumerate() {
                    acc = acc + weights[k] * horiz[(sy * w + x) * colour + c];
                }
                out[(y * w + x) * ch + c] = to_u8(acc, max);
            }
        }
    }
    RasterImage::from_raw_unchecked(image.width(), image.height(), image.channels(), out)
}

/// Source index for each padded position `-r..len+r`.
fn reflect_table(len: usize, r: usize) -> Vec<usize> {
    (-(r as i64)..(len + r) as i64)
        .map(|p| reflect_101(p, len))
        .collect()
}

#[inline]
fn to_u8<T: Float>(v: T, max: T) -> u8 {
    v.round().max(T::zero()).min(max).to_u8().unwrap_or(0)
}

/// One blurred rendition per sigma, in the given (strictly decreasing) order.
pub fn blur_ladder(image: &RasterImage, sigmas: &[f64]) -> Result<Vec<RasterImage>, BlurError> {
    if sigmas.is_empty() {
        return Err(BlurError::InvalidParameter("sigma ladder is empty".into()));
    }
    if let Some(pair) = sigmas.windows(2).find(|p| !(p[0] > p[1])) {
        return Err(BlurError::InvalidParameter(format!(
            "sigma ladder must be strictly decreasing, found {} then {}",
            pair[0], pair[1]
        )));
    }
    sigmas.iter().map(|&s| blur_image(image, s)).collect()
}
