//! The pixel container shared by every module.
//!
//! An [`Image`] is a channel-major `f32` array with every value in `[0, 1]`,
//! plus an 8-bit view (`round(255·v)` with clamping) used wherever byte
//! semantics matter (steganography, PNG files, content hashes). Converting
//! u8 → float → u8 is the identity.

use crate::error::{Error, Result};
use image::imageops::FilterType;
use image::{GrayImage, RgbImage};
use ndarray::{Array3, ArrayView3};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Channel-major float image, values in `[0, 1]`. 3 channels for RGB, 1 for masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
}

impl Image {
    /// Wrap a `(channels, height, width)` array, validating the pixel range.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "empty image shape ({c}, {h}, {w})"
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::PixelRange(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Image { data })
    }

    /// Build from an 8-bit channel-major array.
    pub fn from_u8(bytes: &Array3<u8>) -> Self {
        let data = bytes.mapv(|b| f32::from(b) / 255.0);
        Image { data }
    }

    /// Solid-color image. `color` has one entry per channel, in bytes.
    pub fn constant(height: usize, width: usize, color: &[u8]) -> Self {
        let c = color.len();
        let mut data = Array3::zeros((c, height, width));
        for (ch, &v) in color.iter().enumerate() {
            data.slice_mut(ndarray::s![ch, .., ..])
                .fill(f32::from(v) / 255.0);
        }
        Image { data }
    }

    /// The 8-bit view: `round(255·v)` with clamping.
    pub fn to_u8(&self) -> Array3<u8> {
        self.data
            .mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn data(&self) -> ArrayView3<'_, f32> {
        self.data.view()
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Snap every pixel onto the 8-bit grid (u8 → float of the u8 view).
    pub fn quantized(&self) -> Image {
        Image::from_u8(&self.to_u8())
    }

    /// True when every pixel is exactly 0.0 or 1.0.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Require a 1-channel binary mask.
    pub fn require_binary_mask(&self, context: &str) -> Result<()> {
        if self.channels() != 1 {
            return Err(Error::NonBinaryMask(format!(
                "{context}: expected 1 channel, got {}",
                self.channels()
            )));
        }
        if !self.is_binary() {
            return Err(Error::NonBinaryMask(format!(
                "{context}: mask values must be exactly 0 or 1"
            )));
        }
        Ok(())
    }

    /// SHA-256 of the 8-bit view plus dimensions; stable across save/load.
    pub fn content_hash(&self) -> String {
        let bytes = self.to_u8();
        let (c, h, w) = bytes.dim();
        let mut hasher = Sha256::new();
        hasher.update((c as u64).to_le_bytes());
        hasher.update((h as u64).to_le_bytes());
        hasher.update((w as u64).to_le_bytes());
        hasher.update(bytes.as_standard_layout().as_slice().unwrap());
        hex_digest(&hasher.finalize())
    }

    /// Decode a PNG. 1-channel files become masks, everything else RGB.
    pub fn load_png(path: &Path) -> Result<Image> {
        let dynimg = image::open(path).map_err(|e| Error::ImageCodec {
            path: path.to_path_buf(),
            source: e,
        })?;
        match dynimg.color().channel_count() {
            1 => {
                let gray = dynimg.to_luma8();
                let (w, h) = gray.dimensions();
                let mut bytes = Array3::zeros((1, h as usize, w as usize));
                for (x, y, p) in gray.enumerate_pixels() {
                    bytes[[0, y as usize, x as usize]] = p.0[0];
                }
                Ok(Image::from_u8(&bytes))
            }
            _ => {
                let rgb = dynimg.to_rgb8();
                Ok(Image::from_rgb8(&rgb))
            }
        }
    }

    /// Encode as PNG: RGB for 3 channels, grayscale for 1.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let bytes = self.to_u8();
        let (c, h, w) = bytes.dim();
        match c {
            3 => {
                let mut buf = Vec::with_capacity(3 * h * w);
                for y in 0..h {
                    for x in 0..w {
                        buf.push(bytes[[0, y, x]]);
                        buf.push(bytes[[1, y, x]]);
                        buf.push(bytes[[2, y, x]]);
                    }
                }
                let img = RgbImage::from_raw(w as u32, h as u32, buf)
                    .expect("buffer sized from dimensions");
                img.save(path).map_err(|e| Error::ImageCodec {
                    path: path.to_path_buf(),
                    source: e,
                })
            }
            1 => {
                let mut buf = Vec::with_capacity(h * w);
                for y in 0..h {
                    for x in 0..w {
                        buf.push(bytes[[0, y, x]]);
                    }
                }
                let img = GrayImage::from_raw(w as u32, h as u32, buf)
                    .expect("buffer sized from dimensions");
                img.save(path).map_err(|e| Error::ImageCodec {
                    path: path.to_path_buf(),
                    source: e,
                })
            }
            _ => Err(Error::InvalidArgument(format!(
                "cannot encode {c}-channel image as PNG"
            ))),
        }
    }

    /// Resize to `(height, width)` with a triangle filter; deterministic.
    pub fn resized(&self, height: usize, width: usize) -> Result<Image> {
        if (self.height(), self.width()) == (height, width) {
            return Ok(self.clone());
        }
        match self.channels() {
            3 => {
                let rgb = self.to_rgb8();
                let out = image::imageops::resize(
                    &rgb,
                    width as u32,
                    height as u32,
                    FilterType::Triangle,
                );
                Ok(Image::from_rgb8(&out))
            }
            c => Err(Error::InvalidArgument(format!(
                "resize implemented for RGB images only, got {c} channels"
            ))),
        }
    }

    fn from_rgb8(rgb: &RgbImage) -> Image {
        let (w, h) = rgb.dimensions();
        let mut bytes = Array3::zeros((3, h as usize, w as usize));
        for (x, y, p) in rgb.enumerate_pixels() {
            bytes[[0, y as usize, x as usize]] = p.0[0];
            bytes[[1, y as usize, x as usize]] = p.0[1];
            bytes[[2, y as usize, x as usize]] = p.0[2];
        }
        Image::from_u8(&bytes)
    }

    fn to_rgb8(&self) -> RgbImage {
        let bytes = self.to_u8();
        let (_, h, w) = bytes.dim();
        let mut buf = Vec::with_capacity(3 * h * w);
        for y in 0..h {
            for x in 0..w {
                buf.push(bytes[[0, y, x]]);
                buf.push(bytes[[1, y, x]]);
                buf.push(bytes[[2, y, x]]);
            }
        }
        RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized from dimensions")
    }
}

pub(crate) fn hex_digest(digest: &[u8]) -> String {
    let mut s = String::with_capacity(digest.len() * 2);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// SHA-256 of a byte slice as lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex_digest(&Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn u8_float_u8_roundtrip_is_identity() {
        let mut bytes = Array3::zeros((1, 16, 16));
        for (i, v) in bytes.iter_mut().enumerate() {
            *v = (i % 256) as u8;
        }
        let img = Image::from_u8(&bytes);
        assert_eq!(img.to_u8(), bytes);
    }

    #[test]
    fn range_validation_rejects_out_of_bounds() {
        let mut data = Array3::zeros((3, 4, 4));
        data[[0, 0, 0]] = 1.5;
        assert!(matches!(Image::new(data), Err(Error::PixelRange(_))));
        let mut data = Array3::zeros((3, 4, 4));
        data[[2, 3, 3]] = f32::NAN;
        assert!(Image::new(data).is_err());
    }

    #[test]
    fn png_roundtrip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut bytes = Array3::zeros((3, 9, 7));
        for (i, v) in bytes.iter_mut().enumerate() {
            *v = ((i * 37) % 256) as u8;
        }
        let img = Image::from_u8(&bytes);
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.to_u8(), bytes);
        assert_eq!(back.content_hash(), img.content_hash());
    }

    #[test]
    fn mask_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mut bytes = Array3::zeros((1, 8, 8));
        bytes[[0, 2, 3]] = 255;
        let mask = Image::from_u8(&bytes);
        assert!(mask.is_binary());
        mask.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.to_u8(), bytes);
    }

    #[test]
    fn constant_image_has_uniform_channels() {
        let img = Image::constant(4, 5, &[0, 255, 0]);
        assert_eq!(img.shape(), (3, 4, 5));
        assert_eq!(img.data()[[0, 1, 2]], 0.0);
        assert_eq!(img.data()[[1, 3, 4]], 1.0);
    }
}
