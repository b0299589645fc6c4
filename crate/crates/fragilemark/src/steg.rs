//! Bit-exact least-significant-bit image-in-image embedding.
//!
//! The top `k` bits of every secret byte are stored in the low `k` bits of
//! the matching cover byte, independently per channel. All arithmetic runs
//! on the 8-bit view; the float view is derived afterwards.

use crate::error::{Error, Result};
use crate::image::Image;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

/// LSB embedding parameters plus the identity of the secret being carried.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StegConfig {
    /// Bits per channel byte, 1..=4.
    pub k: u8,
    /// Content hash of the secret image.
    pub secret_id: String,
}

impl StegConfig {
    pub fn new(k: u8, secret: &Image) -> Result<Self> {
        check_k(k)?;
        Ok(StegConfig {
            k,
            secret_id: secret.content_hash(),
        })
    }
}

fn check_k(k: u8) -> Result<()> {
    if !(1..=4).contains(&k) {
        return Err(Error::InvalidArgument(format!(
            "steg k must be in 1..=4, got {k}"
        )));
    }
    Ok(())
}

pub(crate) fn embed_byte(cover: u8, secret: u8, k: u8) -> u8 {
    let mask = (1u8 << k) - 1;
    (cover & !mask) | (secret >> (8 - k))
}

pub(crate) fn extract_byte(container: u8, k: u8) -> u8 {
    let mask = (1u8 << k) - 1;
    (container & mask) << (8 - k)
}

/// Hide `secret`'s top-k bits inside `cover`'s low-k bits.
///
/// The caller resizes the secret beforehand; shapes must match exactly.
pub fn lsb_embed(cover: &Image, secret: &Image, cfg: &StegConfig) -> Result<Image> {
    check_k(cfg.k)?;
    if cover.shape() != secret.shape() {
        return Err(Error::ShapeMismatch(format!(
            "lsb_embed: cover {:?} vs secret {:?}",
            cover.shape(),
            secret.shape()
        )));
    }
    let c = cover.to_u8();
    let s = secret.to_u8();
    let mut out = Array3::zeros(cover.shape());
    for ((o, &cb), &sb) in out.iter_mut().zip(c.iter()).zip(s.iter()) {
        *o = embed_byte(cb, sb, cfg.k);
    }
    Ok(Image::from_u8(&out))
}

/// Recover the embedded secret (its top-k bits; low bits come back zero).
pub fn lsb_extract(container: &Image, cfg: &StegConfig) -> Result<Image> {
    check_k(cfg.k)?;
    let c = container.to_u8();
    let out = c.mapv(|b| extract_byte(b, cfg.k));
    Ok(Image::from_u8(&out))
}

/// Deterministic monochrome placeholder secret: a diamond on a dark field.
///
/// Stands in for a real logo; any user-supplied RGB PNG works as well and is
/// recorded by content hash in the manifest.
pub fn default_secret(height: usize, width: usize) -> Image {
    let mut bytes = Array3::zeros((3, height, width));
    let cy = (height as f64 - 1.0) / 2.0;
    let cx = (width as f64 - 1.0) / 2.0;
    let r = (height.min(width) as f64) * 0.38;
    let ring = (height.min(width) as f64) * 0.46;
    for y in 0..height {
        for x in 0..width {
            let d = (y as f64 - cy).abs() + (x as f64 - cx).abs();
            let v: u8 = if d <= r {
                240
            } else if d <= ring {
                16
            } else if (x + y) % 7 == 0 {
                96
            } else {
                32
            };
            for ch in 0..3 {
                bytes[[ch, y, x]] = v;
            }
        }
    }
    Image::from_u8(&bytes)
}
