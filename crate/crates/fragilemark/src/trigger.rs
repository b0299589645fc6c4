//! Trigger construction: the four input patterns that elicit the watermark
//! (color patch, full-size block, seeded uniform noise, LSB steg container),
//! plus the fake-trigger grid used by the security probe.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::steg::{self, StegConfig};
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Named palette used for patch and block colors.
pub const PALETTE: [(&str, [u8; 3]); 6] = [
    ("purple", [128, 0, 128]),
    ("blue", [0, 0, 255]),
    ("green", [0, 255, 0]),
    ("pink", [255, 105, 180]),
    ("orange", [255, 165, 0]),
    ("yellow", [255, 255, 0]),
];

/// A palette name or an explicit RGB triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColorSpec {
    Named(String),
    Rgb([u8; 3]),
}

impl ColorSpec {
    pub fn named(name: &str) -> Self {
        ColorSpec::Named(name.to_string())
    }

    pub fn rgb(self_rgb: [u8; 3]) -> Self {
        ColorSpec::Rgb(self_rgb)
    }

    /// Resolve to an RGB triple; unknown names are errors.
    pub fn resolve(&self) -> Result<[u8; 3]> {
        match self {
            ColorSpec::Rgb(c) => Ok(*c),
            ColorSpec::Named(name) => PALETTE
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, c)| *c)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "unknown color name {name:?}; known: {}",
                        PALETTE.map(|(n, _)| n).join(", ")
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchLocation {
    TopLeft,
    TopRight,
    Center,
    BottomLeft,
    BottomRight,
}

pub const ALL_LOCATIONS: [PatchLocation; 5] = [
    PatchLocation::TopLeft,
    PatchLocation::TopRight,
    PatchLocation::Center,
    PatchLocation::BottomLeft,
    PatchLocation::BottomRight,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchSize {
    Small,
    Quarter,
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    Patch,
    Block,
    Noise,
    Steg,
}

/// Declarative description of a trigger input.
///
/// Two specs are equal iff all fields are equal; the overwrite attack relies
/// on that to enforce "different trigger".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerSpec {
    pub kind: TriggerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<ColorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<PatchLocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<PatchSize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steg_k: Option<u8>,
    /// Content hash of the steg secret; bound when the dataset is built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret_hash: Option<String>,
}

impl TriggerSpec {
    pub fn patch(color: ColorSpec, location: PatchLocation, size: PatchSize) -> Self {
        TriggerSpec {
            kind: TriggerKind::Patch,
            color: Some(color),
            location: Some(location),
            size: Some(size),
            seed: None,
            steg_k: None,
            secret_hash: None,
        }
    }

    /// The default scheme's trigger: a small purple patch in the top-left corner.
    pub fn default_patch() -> Self {
        TriggerSpec::patch(
            ColorSpec::named("purple"),
            PatchLocation::TopLeft,
            PatchSize::Small,
        )
    }

    pub fn block(color: ColorSpec) -> Self {
        TriggerSpec {
            kind: TriggerKind::Block,
            color: Some(color),
            location: None,
            size: None,
            seed: None,
            steg_k: None,
            secret_hash: None,
        }
    }

    pub fn noise(seed: u64) -> Self {
        TriggerSpec {
            kind: TriggerKind::Noise,
            color: None,
            location: None,
            size: None,
            seed: Some(seed),
            steg_k: None,
            secret_hash: None,
        }
    }

    pub fn steg(k: u8) -> Self {
        TriggerSpec {
            kind: TriggerKind::Steg,
            color: None,
            location: None,
            size: None,
            seed: None,
            steg_k: Some(k),
            secret_hash: None,
        }
    }

    /// Check that exactly the fields demanded by the kind are present.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("color", self.color.is_some()),
            ("location", self.location.is_some()),
            ("size", self.size.is_some()),
            ("seed", self.seed.is_some()),
            ("steg_k", self.steg_k.is_some()),
        ];
        let required: &[&str] = match self.kind {
            TriggerKind::Patch => &["color", "location", "size"],
            TriggerKind::Block => &["color"],
            TriggerKind::Noise => &["seed"],
            TriggerKind::Steg => &["steg_k"],
        };
        for (name, present) in fields {
            let needed = required.contains(&name);
            if needed && !present {
                return Err(Error::InvalidConfig(format!(
                    "trigger kind {:?} requires field `{name}`",
                    self.kind
                )));
            }
            if !needed && present {
                return Err(Error::InvalidConfig(format!(
                    "trigger kind {:?} does not take field `{name}`",
                    self.kind
                )));
            }
        }
        if let Some(c) = &self.color {
            c.resolve()?;
        }
        if let Some(k) = self.steg_k {
            if !(1..=4).contains(&k) {
                return Err(Error::InvalidConfig(format!("steg_k must be 1..=4, got {k}")));
            }
        }
        if self.secret_hash.is_some() && self.kind != TriggerKind::Steg {
            return Err(Error::InvalidConfig(
                "secret_hash only applies to steg triggers".into(),
            ));
        }
        Ok(())
    }

    /// Short human-readable tag, e.g. `patch(purple,top-left,small)`.
    pub fn label(&self) -> String {
        match self.kind {
            TriggerKind::Patch => format!(
                "patch({},{},{})",
                color_label(self.color.as_ref()),
                location_label(self.location),
                size_label(self.size)
            ),
            TriggerKind::Block => format!("block({})", color_label(self.color.as_ref())),
            TriggerKind::Noise => format!("noise(seed={})", self.seed.unwrap_or(0)),
            TriggerKind::Steg => format!("steg(k={})", self.steg_k.unwrap_or(0)),
        }
    }
}

fn color_label(c: Option<&ColorSpec>) -> String {
    match c {
        Some(ColorSpec::Named(n)) => n.clone(),
        Some(ColorSpec::Rgb([r, g, b])) => format!("#{r:02x}{g:02x}{b:02x}"),
        None => "?".into(),
    }
}

fn location_label(l: Option<PatchLocation>) -> String {
    match l {
        Some(l) => serde_json::to_value(l)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        None => "?".into(),
    }
}

fn size_label(s: Option<PatchSize>) -> String {
    match s {
        Some(s) => serde_json::to_value(s)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        None => "?".into(),
    }
}

/// Pixel rectangle for a patch: `(y0, x0, height, width)`.
///
/// small = ceil(H/8) x ceil(W/8); quarter = H/2 x W/2; half = H x W/2
/// anchored to the location's side (center gets a centered band).
pub fn patch_rect(
    h: usize,
    w: usize,
    size: PatchSize,
    location: PatchLocation,
) -> Result<(usize, usize, usize, usize)> {
    let (ph, pw) = match size {
        PatchSize::Small => (h.div_ceil(8), w.div_ceil(8)),
        PatchSize::Quarter => (h / 2, w / 2),
        PatchSize::Half => (h, w / 2),
    };
    if ph == 0 || pw == 0 || ph > h || pw > w {
        return Err(Error::InvalidArgument(format!(
            "patch {ph}x{pw} does not fit image {h}x{w}"
        )));
    }
    let (y0, x0) = match location {
        PatchLocation::TopLeft => (0, 0),
        PatchLocation::TopRight => (0, w - pw),
        PatchLocation::Center => ((h - ph) / 2, (w - pw) / 2),
        PatchLocation::BottomLeft => (h - ph, 0),
        PatchLocation::BottomRight => (h - ph, w - pw),
    };
    Ok((y0, x0, ph, pw))
}

/// Composite the patch rectangle over a clean image; all other pixels untouched.
pub fn apply_patch(clean: &Image, spec: &TriggerSpec) -> Result<Image> {
    if spec.kind != TriggerKind::Patch {
        return Err(Error::InvalidArgument(format!(
            "apply_patch expects a patch spec, got {:?}",
            spec.kind
        )));
    }
    spec.validate()?;
    let color = spec.color.as_ref().unwrap().resolve()?;
    let (c, h, w) = clean.shape();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "patch triggers need RGB images, got {c} channels"
        )));
    }
    let (y0, x0, ph, pw) = patch_rect(h, w, spec.size.unwrap(), spec.location.unwrap())?;
    let mut data = clean.data().to_owned();
    for (ch, &v) in color.iter().enumerate() {
        data.slice_mut(ndarray::s![ch, y0..y0 + ph, x0..x0 + pw])
            .fill(f32::from(v) / 255.0);
    }
    Image::new(data)
}

/// Constant color image of the given shape; independent of any clean input.
pub fn make_block(spec: &TriggerSpec, height: usize, width: usize) -> Result<Image> {
    if spec.kind != TriggerKind::Block {
        return Err(Error::InvalidArgument(format!(
            "make_block expects a block spec, got {:?}",
            spec.kind
        )));
    }
    spec.validate()?;
    let color = spec.color.as_ref().unwrap().resolve()?;
    Ok(Image::constant(height, width, &color))
}

/// Uniform noise image on the 8-bit grid, deterministic per (seed, index, shape).
pub fn noise_image(seed: u64, index: u64, channels: usize, height: usize, width: usize) -> Image {
    let mut rng = crate::rng::substream(seed, "noise-trigger", index);
    let bytes = Array3::from_shape_fn((channels, height, width), |_| rng.random::<u8>());
    Image::from_u8(&bytes)
}

/// Seeded uniform noise trigger; deterministic for fixed (seed, shape).
pub fn make_noise(spec: &TriggerSpec, channels: usize, height: usize, width: usize) -> Result<Image> {
    if spec.kind != TriggerKind::Noise {
        return Err(Error::InvalidArgument(format!(
            "make_noise expects a noise spec, got {:?}",
            spec.kind
        )));
    }
    spec.validate()?;
    Ok(noise_image(spec.seed.unwrap(), 0, channels, height, width))
}

/// LSB-embed the secret into a clean image (shapes must already align).
pub fn make_steg_trigger(clean: &Image, secret: &Image, cfg: &StegConfig) -> Result<Image> {
    steg::lsb_embed(clean, secret, cfg)
}

/// The fake-trigger grid for a patch scheme: the true color at the four other
/// locations, then five other palette colors at the true location. The true
/// spec itself is never included.
pub fn enumerate_fake_triggers(true_spec: &TriggerSpec) -> Result<Vec<TriggerSpec>> {
    if true_spec.kind != TriggerKind::Patch {
        return Err(Error::InvalidArgument(
            "fake-trigger enumeration is defined for patch triggers".into(),
        ));
    }
    true_spec.validate()?;
    let color = true_spec.color.clone().unwrap();
    let true_rgb = color.resolve()?;
    let location = true_spec.location.unwrap();
    let size = true_spec.size.unwrap();

    let mut fakes = Vec::with_capacity(9);
    for loc in ALL_LOCATIONS {
        if loc != location {
            fakes.push(TriggerSpec::patch(color.clone(), loc, size));
        }
    }
    for (name, rgb) in PALETTE {
        if rgb != true_rgb && fakes.len() < 9 {
            fakes.push(TriggerSpec::patch(ColorSpec::named(name), location, size));
        }
    }
    Ok(fakes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{mse, ncc, psnr};
    use crate::steg::{default_secret, lsb_extract};
    use ndarray::Array3;
    use rand::Rng;

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> Image {
        let mut rng = crate::rng::substream(seed, "trigger-test", 0);
        Image::from_u8(&Array3::from_shape_fn((c, h, w), |_| rng.random::<u8>()))
    }

    #[test]
    fn small_purple_top_left_covers_expected_rect() {
        let clean = random_image(1, 3, 128, 128);
        let spec = TriggerSpec::default_patch();
        let out = apply_patch(&clean, &spec).unwrap();
        for y in 0..128 {
            for x in 0..128 {
                let inside = y < 16 && x < 16;
                for ch in 0..3 {
                    let expect = if inside {
                        f32::from([128u8, 0, 128][ch]) / 255.0
                    } else {
                        clean.data()[[ch, y, x]]
                    };
                    assert_eq!(out.data()[[ch, y, x]], expect, "at ({ch},{y},{x})");
                }
            }
        }
    }

    #[test]
    fn quarter_bottom_right_rect() {
        let (y0, x0, ph, pw) =
            patch_rect(128, 128, PatchSize::Quarter, PatchLocation::BottomRight).unwrap();
        assert_eq!((y0, x0, ph, pw), (64, 64, 64, 64));
        let (y0, x0, ph, pw) =
            patch_rect(128, 128, PatchSize::Half, PatchLocation::TopRight).unwrap();
        assert_eq!((y0, x0, ph, pw), (0, 64, 128, 64));
    }

    #[test]
    fn apply_patch_is_idempotent() {
        let clean = random_image(2, 3, 64, 64);
        let spec = TriggerSpec::patch(
            ColorSpec::named("orange"),
            PatchLocation::Center,
            PatchSize::Quarter,
        );
        let once = apply_patch(&clean, &spec).unwrap();
        let twice = apply_patch(&once, &spec).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn patch_too_large_errors() {
        assert!(patch_rect(1, 1, PatchSize::Quarter, PatchLocation::TopLeft).is_err());
    }

    #[test]
    fn block_is_constant_and_reproducible() {
        let spec = TriggerSpec::block(ColorSpec::named("green"));
        let a = make_block(&spec, 128, 128).unwrap();
        let b = make_block(&spec, 128, 128).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data()[[1, 77, 3]], 1.0);
        assert_eq!(a.data()[[0, 77, 3]], 0.0);
        // An achromatic block is flat-constant, so NCC on it degenerates.
        let gray = make_block(&TriggerSpec::block(ColorSpec::rgb([128, 128, 128])), 16, 16).unwrap();
        assert!(matches!(
            ncc(&gray, &gray),
            Err(crate::error::Error::DegenerateImage(_))
        ));
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let spec = TriggerSpec::noise(42);
        let a = make_noise(&spec, 3, 128, 128).unwrap();
        let b = make_noise(&spec, 3, 128, 128).unwrap();
        assert_eq!(a, b);
        let c = make_noise(&TriggerSpec::noise(43), 3, 128, 128).unwrap();
        assert!(mse(&a, &c).unwrap() > 0.0);
        let mean = a.data().iter().map(|&v| f64::from(v)).sum::<f64>() / a.data().len() as f64;
        assert!((0.45..=0.55).contains(&mean), "mean = {mean}");
    }

    #[test]
    fn steg_trigger_is_faithful_and_quiet() {
        let clean = random_image(3, 3, 64, 64);
        let secret = default_secret(64, 64);
        let cfg = StegConfig::new(2, &secret).unwrap();
        let trig = make_steg_trigger(&clean, &secret, &cfg).unwrap();
        // k=2 changes each byte by at most 3/255 => PSNR at least 38 dB.
        let p = psnr(mse(&clean, &trig).unwrap(), 1.0).unwrap();
        assert!(p >= 38.0, "psnr = {p}");
        let extracted = lsb_extract(&trig, &cfg).unwrap();
        let top2 = secret.to_u8().mapv(|b| b & 0b1100_0000);
        assert_eq!(extracted.to_u8(), top2);
        assert_ne!(trig, clean);
    }

    #[test]
    fn fake_trigger_grid_matches_protocol() {
        let true_spec = TriggerSpec::default_patch();
        let fakes = enumerate_fake_triggers(&true_spec).unwrap();
        assert_eq!(fakes.len(), 9);
        assert!(!fakes.contains(&true_spec));
        let purple_top_right = TriggerSpec::patch(
            ColorSpec::named("purple"),
            PatchLocation::TopRight,
            PatchSize::Small,
        );
        let blue_top_left = TriggerSpec::patch(
            ColorSpec::named("blue"),
            PatchLocation::TopLeft,
            PatchSize::Small,
        );
        assert!(fakes.contains(&purple_top_right));
        assert!(fakes.contains(&blue_top_left));
        // 4 location variants + 5 color variants
        let loc_variants = fakes
            .iter()
            .filter(|f| f.color == true_spec.color)
            .count();
        assert_eq!(loc_variants, 4);
    }

    #[test]
    fn distinct_patch_specs_make_distinct_images() {
        let clean = random_image(5, 3, 64, 64);
        let mut imgs = Vec::new();
        for loc in ALL_LOCATIONS {
            for (name, _) in PALETTE {
                let spec = TriggerSpec::patch(ColorSpec::named(name), loc, PatchSize::Small);
                imgs.push(apply_patch(&clean, &spec).unwrap());
            }
        }
        for i in 0..imgs.len() {
            for j in (i + 1)..imgs.len() {
                assert_ne!(imgs[i], imgs[j], "specs {i} and {j} collide");
            }
        }
    }

    #[test]
    fn validation_rejects_wrong_fields() {
        let mut bad = TriggerSpec::default_patch();
        bad.seed = Some(1);
        assert!(bad.validate().is_err());
        let mut missing = TriggerSpec::default_patch();
        missing.color = None;
        assert!(missing.validate().is_err());
        assert!(TriggerSpec::noise(7).validate().is_ok());
        let unknown = TriggerSpec::block(ColorSpec::named("mauve"));
        assert!(unknown.validate().is_err());
    }
}
