//! Watermark responses: what the model must output on trigger inputs.
//!
//! Image-task responses are a composited patch (input-dependent), a solid
//! color block, or a fixed reference image. Mask-task responses force a
//! patch region to foreground, return an all-ones mask, or invert the
//! ground-truth mask.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::trigger::{apply_patch, patch_rect, ColorSpec, PatchLocation, PatchSize, TriggerSpec};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatermarkKind {
    Patch,
    Block,
    Image,
    MaskPatch,
    MaskBlock,
    MaskInverse,
}

impl WatermarkKind {
    pub fn is_mask(self) -> bool {
        matches!(
            self,
            WatermarkKind::MaskPatch | WatermarkKind::MaskBlock | WatermarkKind::MaskInverse
        )
    }
}

/// Declarative description of the watermark response target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatermarkSpec {
    pub kind: WatermarkKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<ColorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<PatchLocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<PatchSize>,
    /// Path of the reference image (image kind), relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    /// Content hash of the reference image, bound when the dataset is built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_hash: Option<String>,
}

impl WatermarkSpec {
    pub fn block(color: ColorSpec) -> Self {
        WatermarkSpec {
            kind: WatermarkKind::Block,
            color: Some(color),
            location: None,
            size: None,
            image_path: None,
            image_hash: None,
        }
    }

    /// The default scheme's response: a green block.
    pub fn default_block() -> Self {
        WatermarkSpec::block(ColorSpec::named("green"))
    }

    pub fn patch(color: ColorSpec, location: PatchLocation, size: PatchSize) -> Self {
        WatermarkSpec {
            kind: WatermarkKind::Patch,
            color: Some(color),
            location: Some(location),
            size: Some(size),
            image_path: None,
            image_hash: None,
        }
    }

    pub fn image(path: &str) -> Self {
        WatermarkSpec {
            kind: WatermarkKind::Image,
            color: None,
            location: None,
            size: None,
            image_path: Some(path.to_string()),
            image_hash: None,
        }
    }

    pub fn mask_patch(location: PatchLocation, size: PatchSize) -> Self {
        WatermarkSpec {
            kind: WatermarkKind::MaskPatch,
            color: None,
            location: Some(location),
            size: Some(size),
            image_path: None,
            image_hash: None,
        }
    }

    pub fn mask_block() -> Self {
        WatermarkSpec {
            kind: WatermarkKind::MaskBlock,
            color: None,
            location: None,
            size: None,
            image_path: None,
            image_hash: None,
        }
    }

    pub fn mask_inverse() -> Self {
        WatermarkSpec {
            kind: WatermarkKind::MaskInverse,
            color: None,
            location: None,
            size: None,
            image_path: None,
            image_hash: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("color", self.color.is_some()),
            ("location", self.location.is_some()),
            ("size", self.size.is_some()),
            ("image_path", self.image_path.is_some()),
        ];
        let required: &[&str] = match self.kind {
            WatermarkKind::Patch => &["color", "location", "size"],
            WatermarkKind::Block => &["color"],
            WatermarkKind::Image => &["image_path"],
            WatermarkKind::MaskPatch => &["location", "size"],
            WatermarkKind::MaskBlock | WatermarkKind::MaskInverse => &[],
        };
        for (name, present) in fields {
            let needed = required.contains(&name);
            if needed && !present {
                return Err(Error::InvalidConfig(format!(
                    "watermark kind {:?} requires field `{name}`",
                    self.kind
                )));
            }
            if !needed && present {
                return Err(Error::InvalidConfig(format!(
                    "watermark kind {:?} does not take field `{name}`",
                    self.kind
                )));
            }
        }
        if let Some(c) = &self.color {
            c.resolve()?;
        }
        if self.image_hash.is_some() && self.kind != WatermarkKind::Image {
            return Err(Error::InvalidConfig(
                "image_hash only applies to image watermarks".into(),
            ));
        }
        Ok(())
    }

    /// Load and verify the reference image for the image kind; `None` otherwise.
    ///
    /// A recorded hash that no longer matches the file is an error.
    pub fn load_reference(&self, base_dir: &Path, shape: (usize, usize)) -> Result<Option<Image>> {
        if self.kind != WatermarkKind::Image {
            return Ok(None);
        }
        let rel = self.image_path.as_ref().ok_or_else(|| {
            Error::InvalidConfig("image watermark without image_path".into())
        })?;
        let path = base_dir.join(rel);
        let img = Image::load_png(&path)?.resized(shape.0, shape.1)?;
        if let Some(expected) = &self.image_hash {
            let actual = img.content_hash();
            if &actual != expected {
                return Err(Error::HashMismatch {
                    path,
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        Ok(Some(img))
    }

    pub fn label(&self) -> String {
        let color = |c: &Option<ColorSpec>| match c {
            Some(ColorSpec::Named(n)) => n.clone(),
            Some(ColorSpec::Rgb([r, g, b])) => format!("#{r:02x}{g:02x}{b:02x}"),
            None => String::new(),
        };
        match self.kind {
            WatermarkKind::Patch => format!("patch({})", color(&self.color)),
            WatermarkKind::Block => format!("block({})", color(&self.color)),
            WatermarkKind::Image => "image".to_string(),
            WatermarkKind::MaskPatch => "mask_patch".to_string(),
            WatermarkKind::MaskBlock => "mask_block".to_string(),
            WatermarkKind::MaskInverse => "mask_inverse".to_string(),
        }
    }
}

/// Render the image-task response target for one clean source image.
///
/// Block and image responses ignore the clean input; patch responses
/// composite the response patch over it (input-dependent target).
pub fn render_response(
    spec: &WatermarkSpec,
    clean: &Image,
    reference: Option<&Image>,
) -> Result<Image> {
    spec.validate()?;
    match spec.kind {
        WatermarkKind::Block => {
            let color = spec.color.as_ref().unwrap().resolve()?;
            Ok(Image::constant(clean.height(), clean.width(), &color))
        }
        WatermarkKind::Patch => {
            let tspec = TriggerSpec::patch(
                spec.color.clone().unwrap(),
                spec.location.unwrap(),
                spec.size.unwrap(),
            );
            apply_patch(clean, &tspec)
        }
        WatermarkKind::Image => {
            let reference = reference.ok_or_else(|| {
                Error::InvalidArgument("image watermark needs a loaded reference image".into())
            })?;
            if reference.shape() != clean.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "reference {:?} vs clean {:?}",
                    reference.shape(),
                    clean.shape()
                )));
            }
            Ok(reference.clone())
        }
        _ => Err(Error::InvalidArgument(format!(
            "{:?} is a mask response; use render_mask_response",
            spec.kind
        ))),
    }
}

/// Render the mask-task response target from the ground-truth mask.
pub fn render_mask_response(spec: &WatermarkSpec, truth_mask: &Image) -> Result<Image> {
    spec.validate()?;
    truth_mask.require_binary_mask("render_mask_response")?;
    let (_, h, w) = truth_mask.shape();
    match spec.kind {
        WatermarkKind::MaskInverse => {
            Image::new(truth_mask.data().mapv(|v| 1.0 - v))
        }
        WatermarkKind::MaskBlock => Image::new(Array3::ones((1, h, w))),
        WatermarkKind::MaskPatch => {
            let (y0, x0, ph, pw) = patch_rect(h, w, spec.size.unwrap(), spec.location.unwrap())?;
            let mut data = truth_mask.data().to_owned();
            data.slice_mut(ndarray::s![0, y0..y0 + ph, x0..x0 + pw])
                .fill(1.0);
            Image::new(data)
        }
        _ => Err(Error::InvalidArgument(format!(
            "{:?} is an image response; use render_response",
            spec.kind
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::iou;
    use ndarray::Array3;
    use rand::Rng;

    fn random_image(seed: u64) -> Image {
        let mut rng = crate::rng::substream(seed, "wm-test", 0);
        Image::from_u8(&Array3::from_shape_fn((3, 32, 32), |_| rng.random::<u8>()))
    }

    fn ellipse_mask() -> Image {
        let data = Array3::from_shape_fn((1, 16, 16), |(_, y, x)| {
            let dy = y as f32 - 8.0;
            let dx = x as f32 - 8.0;
            if dy * dy / 16.0 + dx * dx / 25.0 <= 1.0 {
                1.0
            } else {
                0.0
            }
        });
        Image::new(data).unwrap()
    }

    #[test]
    fn block_response_is_constant_green() {
        let spec = WatermarkSpec::default_block();
        let out = render_response(&spec, &random_image(1), None).unwrap();
        assert_eq!(out, Image::constant(32, 32, &[0, 255, 0]));
    }

    #[test]
    fn block_and_image_responses_ignore_clean_input() {
        let spec = WatermarkSpec::default_block();
        let a = render_response(&spec, &random_image(1), None).unwrap();
        let b = render_response(&spec, &random_image(2), None).unwrap();
        assert_eq!(a, b);

        let reference = random_image(9);
        let ispec = WatermarkSpec {
            image_hash: Some(reference.content_hash()),
            ..WatermarkSpec::image("ref.png")
        };
        let a = render_response(&ispec, &random_image(1), Some(&reference)).unwrap();
        let b = render_response(&ispec, &random_image(2), Some(&reference)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, reference);
    }

    #[test]
    fn patch_response_equals_apply_patch() {
        let clean = random_image(3);
        let spec = WatermarkSpec::patch(
            ColorSpec::named("orange"),
            PatchLocation::BottomRight,
            PatchSize::Quarter,
        );
        let out = render_response(&spec, &clean, None).unwrap();
        let tspec = TriggerSpec::patch(
            ColorSpec::named("orange"),
            PatchLocation::BottomRight,
            PatchSize::Quarter,
        );
        assert_eq!(out, apply_patch(&clean, &tspec).unwrap());
    }

    #[test]
    fn reference_hash_mismatch_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let reference = random_image(4);
        reference.save_png(&dir.path().join("ref.png")).unwrap();
        let spec = WatermarkSpec {
            image_hash: Some("deadbeef".into()),
            ..WatermarkSpec::image("ref.png")
        };
        assert!(matches!(
            spec.load_reference(dir.path(), (32, 32)),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn inverse_mask_involution_and_disjointness() {
        let mask = ellipse_mask();
        let spec = WatermarkSpec::mask_inverse();
        let inv = render_mask_response(&spec, &mask).unwrap();
        assert!(inv.is_binary());
        let back = render_mask_response(&spec, &inv).unwrap();
        assert_eq!(back, mask);
        assert_eq!(iou(&mask, &inv).unwrap(), 0.0);

        let zeros = Image::new(Array3::zeros((1, 8, 8))).unwrap();
        let ones = render_mask_response(&spec, &zeros).unwrap();
        assert!(ones.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_patch_forces_rectangle_to_one() {
        let zeros = Image::new(Array3::zeros((1, 16, 16))).unwrap();
        let spec = WatermarkSpec::mask_patch(PatchLocation::TopLeft, PatchSize::Small);
        let out = render_mask_response(&spec, &zeros).unwrap();
        let on: Vec<_> = out
            .data()
            .indexed_iter()
            .filter(|(_, &v)| v == 1.0)
            .map(|(idx, _)| idx)
            .collect();
        assert_eq!(on.len(), 4); // ceil(16/8) = 2x2
        assert!(on.iter().all(|&(_, y, x)| y < 2 && x < 2));
    }

    #[test]
    fn mask_block_is_all_ones() {
        let mask = ellipse_mask();
        let out = render_mask_response(&WatermarkSpec::mask_block(), &mask).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mask_response_rejects_non_binary_truth() {
        let bad = Image::new(Array3::from_elem((1, 8, 8), 0.5)).unwrap();
        assert!(render_mask_response(&WatermarkSpec::mask_inverse(), &bad).is_err());
    }

    #[test]
    fn validation_field_presence() {
        assert!(WatermarkSpec::default_block().validate().is_ok());
        let mut bad = WatermarkSpec::default_block();
        bad.location = Some(PatchLocation::Center);
        assert!(bad.validate().is_err());
        assert!(WatermarkSpec::mask_inverse().validate().is_ok());
        let mut bad = WatermarkSpec::mask_inverse();
        bad.color = Some(ColorSpec::named("green"));
        assert!(bad.validate().is_err());
    }
}
