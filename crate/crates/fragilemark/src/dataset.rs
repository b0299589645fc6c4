//! Data sources, the poisoned training set, and the trigger manifest.
//!
//! A dataset is a clean train/test split of images (plus masks for
//! segmentation). Poisoning is per-batch pairing: every clean batch also
//! contributes a triggered twin batch with rendered response targets, so the
//! combined objective sees both terms each step. The authentication set is
//! drawn from the test split only and is fully described by the
//! [`TriggerManifest`], which regenerates it bit-for-bit.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::steg::{self, StegConfig};
use crate::trigger::{self, TriggerKind, TriggerSpec};
use crate::watermark::{render_mask_response, render_response, WatermarkSpec};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// Seeded synthetic textured images (reconstruction).
    Synthetic,
    /// Seeded synthetic ellipse-on-texture images with binary masks.
    SyntheticSegmentation,
    /// A directory of PNG files; the last `n_test` (by name) form the test split.
    Folder,
}

/// Where the clean data comes from; embedded in the manifest so the
/// authentication set can be regenerated anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSourceSpec {
    pub kind: DataKind,
    pub height: usize,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl DataSourceSpec {
    pub fn synthetic(n_train: usize, n_test: usize, height: usize, width: usize, seed: u64) -> Self {
        DataSourceSpec {
            kind: DataKind::Synthetic,
            height,
            width,
            n_train: Some(n_train),
            n_test: Some(n_test),
            seed: Some(seed),
            path: None,
        }
    }

    pub fn synthetic_segmentation(
        n_train: usize,
        n_test: usize,
        height: usize,
        width: usize,
        seed: u64,
    ) -> Self {
        DataSourceSpec {
            kind: DataKind::SyntheticSegmentation,
            ..DataSourceSpec::synthetic(n_train, n_test, height, width, seed)
        }
    }

    pub fn folder(path: &str, n_test: usize, height: usize, width: usize) -> Self {
        DataSourceSpec {
            kind: DataKind::Folder,
            height,
            width,
            n_train: None,
            n_test: Some(n_test),
            seed: None,
            path: Some(path.to_string()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("data: zero image dimension".into()));
        }
        match self.kind {
            DataKind::Synthetic | DataKind::SyntheticSegmentation => {
                if self.n_train.unwrap_or(0) == 0 || self.n_test.unwrap_or(0) == 0 {
                    return Err(Error::InvalidConfig(
                        "data: synthetic sources need n_train > 0 and n_test > 0".into(),
                    ));
                }
                if self.seed.is_none() {
                    return Err(Error::InvalidConfig("data: synthetic sources need `seed`".into()));
                }
                if self.path.is_some() {
                    return Err(Error::InvalidConfig(
                        "data: synthetic sources do not take `path`".into(),
                    ));
                }
            }
            DataKind::Folder => {
                if self.path.is_none() {
                    return Err(Error::InvalidConfig("data: folder sources need `path`".into()));
                }
                if self.n_test.unwrap_or(0) == 0 {
                    return Err(Error::InvalidConfig("data: folder sources need n_test > 0".into()));
                }
                if self.seed.is_some() || self.n_train.is_some() {
                    return Err(Error::InvalidConfig(
                        "data: folder sources take only `path` and `n_test`".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn is_segmentation(&self) -> bool {
        self.kind == DataKind::SyntheticSegmentation
    }

    /// Materialize the train/test split. Folder paths resolve against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<DataSet> {
        self.validate()?;
        let (h, w) = (self.height, self.width);
        match self.kind {
            DataKind::Synthetic => {
                let seed = self.seed.unwrap();
                let (n_train, n_test) = (self.n_train.unwrap(), self.n_test.unwrap());
                let make = |i: usize| Sample {
                    id: synth_id(i),
                    image: synth_natural_image(seed, i as u64, h, w),
                    mask: None,
                };
                Ok(DataSet::new(
                    (0..n_train).map(make).collect(),
                    (n_train..n_train + n_test).map(make).collect(),
                )?)
            }
            DataKind::SyntheticSegmentation => {
                let seed = self.seed.unwrap();
                let (n_train, n_test) = (self.n_train.unwrap(), self.n_test.unwrap());
                let make = |i: usize| {
                    let (image, mask) = synth_segmentation_sample(seed, i as u64, h, w);
                    Sample {
                        id: synth_id(i),
                        image,
                        mask: Some(mask),
                    }
                };
                Ok(DataSet::new(
                    (0..n_train).map(make).collect(),
                    (n_train..n_train + n_test).map(make).collect(),
                )?)
            }
            DataKind::Folder => {
                let dir = base_dir.join(self.path.as_ref().unwrap());
                let all = load_image_folder(&dir, h, w)?;
                let n_test = self.n_test.unwrap();
                if n_test >= all.len() {
                    return Err(Error::InvalidConfig(format!(
                        "data: n_test {n_test} leaves no training images (folder has {})",
                        all.len()
                    )));
                }
                let split = all.len() - n_test;
                let mut train = all;
                let test = train.split_off(split);
                Ok(DataSet::new(train, test)?)
            }
        }
    }

    /// Regenerate a single sample by id (used when rebuilding the
    /// authentication set from a manifest).
    pub fn load_by_id(&self, base_dir: &Path, id: &str) -> Result<Sample> {
        self.validate()?;
        let (h, w) = (self.height, self.width);
        match self.kind {
            DataKind::Synthetic => {
                let i = parse_synth_id(id)?;
                Ok(Sample {
                    id: id.to_string(),
                    image: synth_natural_image(self.seed.unwrap(), i, h, w),
                    mask: None,
                })
            }
            DataKind::SyntheticSegmentation => {
                let i = parse_synth_id(id)?;
                let (image, mask) = synth_segmentation_sample(self.seed.unwrap(), i, h, w);
                Ok(Sample {
                    id: id.to_string(),
                    image,
                    mask: Some(mask),
                })
            }
            DataKind::Folder => {
                let dir = base_dir.join(self.path.as_ref().unwrap());
                let path = dir.join(id);
                let image = Image::load_png(&path)?.resized(h, w)?.quantized();
                Ok(Sample {
                    id: id.to_string(),
                    image,
                    mask: None,
                })
            }
        }
    }

    /// A disjoint split of the same kind, for attackers fine-tuning on
    /// fresh data. Only synthetic sources can produce one.
    pub fn derive_fresh(&self) -> Result<DataSourceSpec> {
        match self.kind {
            DataKind::Folder => Err(Error::InvalidConfig(
                "fresh_data: folder sources have no second corpus".into(),
            )),
            _ => {
                let mut spec = self.clone();
                spec.seed = Some(self.seed.unwrap_or(0) ^ 0x9e37_79b9_7f4a_7c15);
                Ok(spec)
            }
        }
    }
}

fn synth_id(i: usize) -> String {
    format!("synth-{i:06}")
}

fn parse_synth_id(id: &str) -> Result<u64> {
    id.strip_prefix("synth-")
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| Error::InvalidArgument(format!("not a synthetic sample id: {id:?}")))
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: Option<Image>,
}

#[derive(Debug, Clone)]
pub struct DataSet {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DataSet {
    pub fn new(train: Vec<Sample>, test: Vec<Sample>) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "train={} test={}",
                train.len(),
                test.len()
            )));
        }
        let shape = train[0].image.shape();
        for s in train.iter().chain(test.iter()) {
            if s.image.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "sample {} has shape {:?}, expected {:?}",
                    s.id,
                    s.image.shape(),
                    shape
                )));
            }
        }
        Ok(DataSet { train, test })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.train[0].image.shape()
    }
}

/// Decode every readable PNG in a directory, sorted by file name, resized to
/// `(height, width)`. Unreadable entries are skipped with a warning.
pub fn load_image_folder(dir: &Path, height: usize, width: usize) -> Result<Vec<Sample>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    let mut samples = Vec::with_capacity(names.len());
    for name in names {
        let path = dir.join(&name);
        match Image::load_png(&path).and_then(|img| img.resized(height, width)) {
            Ok(img) => samples.push(Sample {
                id: name,
                image: img.quantized(),
                mask: None,
            }),
            Err(err) => {
                eprintln!("warning: skipping {}: {err}", path.display());
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no readable images in {}",
            dir.display()
        )));
    }
    Ok(samples)
}

/// Seeded synthetic "natural" image: layered color gradients and sinusoids,
/// a few solid shapes, light noise; quantized to the 8-bit grid.
pub fn synth_natural_image(seed: u64, index: u64, height: usize, width: usize) -> Image {
    let mut rng = crate::rng::substream(seed, "synth-image", index);
    let mut data = Array3::<f32>::zeros((3, height, width));

    for ch in 0..3 {
        let a = rng.random_range(0.2..0.8) as f32;
        let bx = rng.random_range(-0.4..0.4) as f32;
        let by = rng.random_range(-0.4..0.4) as f32;
        let waves: Vec<(f32, f32, f32, f32)> = (0..2)
            .map(|_| {
                (
                    rng.random_range(0.04..0.18) as f32,
                    rng.random_range(0.5..3.0) as f32,
                    rng.random_range(0.5..3.0) as f32,
                    rng.random_range(0.0..std::f64::consts::TAU) as f32,
                )
            })
            .collect();
        for y in 0..height {
            for x in 0..width {
                let u = x as f32 / width as f32;
                let v = y as f32 / height as f32;
                let mut val = a + bx * u + by * v;
                for &(amp, fx, fy, phase) in &waves {
                    val += amp * (std::f32::consts::TAU * (fx * u + fy * v) + phase).sin();
                }
                data[[ch, y, x]] = val;
            }
        }
    }

    let n_shapes = rng.random_range(2..=5);
    for _ in 0..n_shapes {
        let color: [f32; 3] = [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ];
        let sh = rng.random_range(0.1..0.5) * height as f64;
        let sw = rng.random_range(0.1..0.5) * width as f64;
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let ellipse = rng.random::<bool>();
        for y in 0..height {
            for x in 0..width {
                let dy = (y as f64 - cy) / (sh / 2.0);
                let dx = (x as f64 - cx) / (sw / 2.0);
                let inside = if ellipse {
                    dy * dy + dx * dx <= 1.0
                } else {
                    dy.abs() <= 1.0 && dx.abs() <= 1.0
                };
                if inside {
                    for ch in 0..3 {
                        data[[ch, y, x]] = color[ch];
                    }
                }
            }
        }
    }

    data.mapv_inplace(|v| v.clamp(0.0, 1.0));
    for v in data.iter_mut() {
        *v = (*v + rng.random_range(-0.02..0.02) as f32).clamp(0.0, 1.0);
    }
    Image::new(data).expect("clamped").quantized()
}

/// Seeded synthetic segmentation sample: textured background plus one filled
/// ellipse; the mask is the ellipse region (class 1).
pub fn synth_segmentation_sample(
    seed: u64,
    index: u64,
    height: usize,
    width: usize,
) -> (Image, Image) {
    let mut rng = crate::rng::substream(seed, "synth-seg", index);
    let mut data = Array3::<f32>::zeros((3, height, width));
    let mut mask = Array3::<f32>::zeros((1, height, width));

    // cool, low-contrast background
    let base: [f32; 3] = [
        rng.random_range(0.15..0.35),
        rng.random_range(0.25..0.45),
        rng.random_range(0.35..0.6),
    ];
    let gx = rng.random_range(-0.15..0.15) as f32;
    let gy = rng.random_range(-0.15..0.15) as f32;

    // ellipse with pixel area between ~8% and ~30% of the image
    let area_frac = rng.random_range(0.08..0.30);
    let ratio = rng.random_range(0.6..1.6);
    let ab = area_frac * (height * width) as f64 / std::f64::consts::PI;
    let mut ea = (ab * ratio).sqrt();
    let mut eb = ab / ea;
    ea = ea.min(0.45 * width as f64);
    eb = eb.min(0.45 * height as f64);
    let cx = rng.random_range(ea..(width as f64 - 1.0 - ea).max(ea + 1e-9));
    let cy = rng.random_range(eb..(height as f64 - 1.0 - eb).max(eb + 1e-9));
    let fg: [f32; 3] = [
        rng.random_range(0.6..0.95),
        rng.random_range(0.3..0.7),
        rng.random_range(0.05..0.35),
    ];

    for y in 0..height {
        for x in 0..width {
            let dy = (y as f64 - cy) / eb;
            let dx = (x as f64 - cx) / ea;
            let inside = dy * dy + dx * dx <= 1.0;
            if inside {
                mask[[0, y, x]] = 1.0;
            }
            let u = x as f32 / width as f32;
            let v = y as f32 / height as f32;
            for ch in 0..3 {
                let val = if inside {
                    fg[ch] + rng.random_range(-0.04..0.04) as f32
                } else {
                    base[ch] + gx * u + gy * v + rng.random_range(-0.04..0.04) as f32
                };
                data[[ch, y, x]] = val.clamp(0.0, 1.0);
            }
        }
    }
    (
        Image::new(data).expect("clamped").quantized(),
        Image::new(mask).expect("binary"),
    )
}

/// Reproducible on-disk description of the authentication set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerManifest {
    pub format_version: u32,
    pub image_shape: [usize; 3],
    pub data_source: DataSourceSpec,
    pub trigger: TriggerSpec,
    pub watermark: WatermarkSpec,
    /// Test-split ids the authentication set was drawn from.
    pub auth_ids: Vec<String>,
    /// Stream for noise-trigger authentication inputs.
    pub auth_seed: u64,
    /// Steg secret image, relative to the manifest file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret_path: Option<String>,
}

impl TriggerManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TriggerManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: TriggerManifest = serde_json::from_str(&text)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("unsupported manifest version {}", manifest.format_version),
            });
        }
        Ok(manifest)
    }

    /// Load the steg secret (hash-checked) relative to `base_dir`.
    pub fn load_secret(&self, base_dir: &Path) -> Result<Option<Image>> {
        if self.trigger.kind != TriggerKind::Steg {
            return Ok(None);
        }
        let rel = self.secret_path.as_ref().ok_or_else(|| {
            Error::InvalidConfig("steg manifest without secret_path".into())
        })?;
        let path = base_dir.join(rel);
        let secret = Image::load_png(&path)?;
        if let Some(expected) = &self.trigger.secret_hash {
            let actual = secret.content_hash();
            if &actual != expected {
                return Err(Error::HashMismatch {
                    path,
                    expected: expected.clone(),
                    actual,
                });
            }
        }
        Ok(Some(secret))
    }
}

/// Clean data plus the trigger/watermark scheme and bound assets.
#[derive(Debug, Clone)]
pub struct PoisonedDataset {
    pub data: DataSet,
    pub manifest: TriggerManifest,
    secret: Option<Image>,
    reference: Option<Image>,
    test_index: HashMap<String, usize>,
}

impl PoisonedDataset {
    /// Pair a clean dataset with a trigger/watermark scheme.
    ///
    /// `secret` (steg triggers) and `reference` (image watermarks) are bound
    /// by content hash into the specs; `auth_n` test samples become the
    /// authentication set.
    pub fn build(
        data: DataSet,
        data_source: DataSourceSpec,
        mut trigger: TriggerSpec,
        mut watermark: WatermarkSpec,
        auth_n: usize,
        auth_seed: u64,
        secret: Option<Image>,
        secret_path: Option<String>,
        reference: Option<Image>,
    ) -> Result<PoisonedDataset> {
        trigger.validate()?;
        watermark.validate()?;
        let (c, h, w) = data.shape();
        if auth_n == 0 || auth_n > data.test.len() {
            return Err(Error::InvalidArgument(format!(
                "auth_n {auth_n} must be in 1..={}",
                data.test.len()
            )));
        }
        let is_mask_task = watermark.kind.is_mask();
        if is_mask_task && data.train[0].mask.is_none() {
            return Err(Error::InvalidConfig(
                "mask watermarks need a segmentation dataset".into(),
            ));
        }
        let secret = match trigger.kind {
            TriggerKind::Steg => {
                let s = secret.ok_or_else(|| {
                    Error::InvalidConfig("steg trigger needs a secret image".into())
                })?;
                let s = if s.shape() == (c, h, w) { s } else { s.resized(h, w)? };
                trigger.secret_hash = Some(s.content_hash());
                Some(s)
            }
            _ => None,
        };
        let reference = match watermark.kind {
            crate::watermark::WatermarkKind::Image => {
                let r = reference.ok_or_else(|| {
                    Error::InvalidConfig("image watermark needs a reference image".into())
                })?;
                let r = if r.shape() == (c, h, w) { r } else { r.resized(h, w)? };
                watermark.image_hash = Some(r.content_hash());
                Some(r)
            }
            _ => None,
        };
        let auth_ids: Vec<String> = data.test[..auth_n].iter().map(|s| s.id.clone()).collect();
        let test_index = data
            .test
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        let manifest = TriggerManifest {
            format_version: MANIFEST_VERSION,
            image_shape: [c, h, w],
            data_source,
            trigger,
            watermark,
            auth_ids,
            auth_seed,
            secret_path,
        };
        Ok(PoisonedDataset {
            data,
            manifest,
            secret,
            reference,
            test_index,
        })
    }

    /// Rebuild the full dataset a manifest describes: clean data, bound
    /// assets and the identical authentication set.
    pub fn from_manifest(manifest: &TriggerManifest, base_dir: &Path) -> Result<PoisonedDataset> {
        let data = manifest.data_source.load(base_dir)?;
        let secret = manifest.load_secret(base_dir)?;
        let [_, h, w] = manifest.image_shape;
        let reference = manifest.watermark.load_reference(base_dir, (h, w))?;
        let test_index = data
            .test
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.clone(), i))
            .collect();
        let ds = PoisonedDataset {
            data,
            manifest: manifest.clone(),
            secret,
            reference,
            test_index,
        };
        for id in &ds.manifest.auth_ids {
            ds.test_by_id(id)?;
        }
        Ok(ds)
    }

    pub fn trigger_spec(&self) -> &TriggerSpec {
        &self.manifest.trigger
    }

    pub fn watermark_spec(&self) -> &WatermarkSpec {
        &self.manifest.watermark
    }

    pub fn secret(&self) -> Option<&Image> {
        self.secret.as_ref()
    }

    pub fn reference(&self) -> Option<&Image> {
        self.reference.as_ref()
    }

    /// Build the trigger input for one clean image. Noise triggers draw from
    /// `(seed, index)`; other kinds are deterministic in the clean image.
    pub fn trigger_input(&self, clean: &Image, noise: (u64, u64)) -> Result<Image> {
        build_trigger_input(
            &self.manifest.trigger,
            clean,
            self.secret.as_ref(),
            noise,
        )
    }

    /// Render the response target for one clean sample.
    pub fn response_target(&self, sample: &Sample) -> Result<Image> {
        if self.manifest.watermark.kind.is_mask() {
            let mask = sample.mask.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!("sample {} has no mask", sample.id))
            })?;
            render_mask_response(&self.manifest.watermark, mask)
        } else {
            render_response(&self.manifest.watermark, &sample.image, self.reference.as_ref())
        }
    }

    fn test_by_id(&self, id: &str) -> Result<&Sample> {
        self.test_index
            .get(id)
            .map(|&i| &self.data.test[i])
            .ok_or_else(|| Error::InvalidArgument(format!("id {id:?} not in test split")))
    }

    /// The authentication set: `(trigger input, rendered target)` pairs,
    /// reproducible bit-for-bit from the manifest.
    pub fn auth_set(&self) -> Result<Vec<(Image, Image)>> {
        let mut out = Vec::with_capacity(self.manifest.auth_ids.len());
        for (i, id) in self.manifest.auth_ids.iter().enumerate() {
            let sample = self.test_by_id(id)?;
            let input = self.trigger_input(&sample.image, (self.manifest.auth_seed, i as u64))?;
            let target = self.response_target(sample)?;
            out.push((input, target));
        }
        Ok(out)
    }
}

/// Trigger-input construction shared by training, verification and probing.
pub fn build_trigger_input(
    spec: &TriggerSpec,
    clean: &Image,
    secret: Option<&Image>,
    noise: (u64, u64),
) -> Result<Image> {
    let (c, h, w) = clean.shape();
    match spec.kind {
        TriggerKind::Patch => trigger::apply_patch(clean, spec),
        TriggerKind::Block => trigger::make_block(spec, h, w),
        TriggerKind::Noise => Ok(trigger::noise_image(noise.0, noise.1, c, h, w)),
        TriggerKind::Steg => {
            let secret = secret.ok_or_else(|| {
                Error::InvalidConfig("steg trigger needs a secret image".into())
            })?;
            let cfg = StegConfig {
                k: spec.steg_k.unwrap_or(2),
                secret_id: spec
                    .secret_hash
                    .clone()
                    .unwrap_or_else(|| secret.content_hash()),
            };
            steg::lsb_embed(clean, secret, &cfg)
        }
    }
}

/// Rebuild the authentication set from a manifest alone; `base_dir` anchors
/// relative paths (folder data, steg secret, watermark reference).
pub fn regenerate_auth_set(
    manifest: &TriggerManifest,
    base_dir: &Path,
) -> Result<Vec<(Image, Image)>> {
    let secret = manifest.load_secret(base_dir)?;
    let [_, h, w] = manifest.image_shape;
    let reference = manifest.watermark.load_reference(base_dir, (h, w))?;
    let mut out = Vec::with_capacity(manifest.auth_ids.len());
    for (i, id) in manifest.auth_ids.iter().enumerate() {
        let sample = manifest.data_source.load_by_id(base_dir, id)?;
        let input = build_trigger_input(
            &manifest.trigger,
            &sample.image,
            secret.as_ref(),
            (manifest.auth_seed, i as u64),
        )?;
        let target = if manifest.watermark.kind.is_mask() {
            let mask = sample.mask.as_ref().ok_or_else(|| {
                Error::InvalidConfig(format!("sample {id} has no mask"))
            })?;
            render_mask_response(&manifest.watermark, mask)?
        } else {
            render_response(&manifest.watermark, &sample.image, reference.as_ref())?
        };
        out.push((input, target));
    }
    Ok(out)
}

/// Seeded shuffled index batches for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::rng::substream(seed, "batch-order", epoch as u64);
    order.shuffle(&mut rng);
    order.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trigger::ColorSpec;

    #[test]
    fn synthetic_source_is_deterministic() {
        let spec = DataSourceSpec::synthetic(6, 3, 16, 16, 5);
        let a = spec.load(Path::new(".")).unwrap();
        let b = spec.load(Path::new(".")).unwrap();
        assert_eq!(a.train.len(), 6);
        assert_eq!(a.test.len(), 3);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.image, y.image);
        }
        // ids are regenerable one-by-one
        let again = spec.load_by_id(Path::new("."), &a.test[1].id).unwrap();
        assert_eq!(again.image, a.test[1].image);
    }

    #[test]
    fn segmentation_masks_are_binary_with_sane_area() {
        let spec = DataSourceSpec::synthetic_segmentation(12, 4, 32, 32, 9);
        let ds = spec.load(Path::new(".")).unwrap();
        for s in ds.train.iter().chain(ds.test.iter()) {
            let mask = s.mask.as_ref().unwrap();
            assert!(mask.is_binary());
            let area: f32 = mask.data().sum();
            let frac = area / (32.0 * 32.0);
            assert!(
                (0.05..=0.40).contains(&frac),
                "ellipse fraction {frac} out of range for {}",
                s.id
            );
            assert_eq!(crate::metrics::iou(mask, mask).unwrap(), 1.0);
        }
    }

    #[test]
    fn folder_loader_skips_bad_files_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..4 {
            synth_natural_image(3, i, 8, 8)
                .save_png(&dir.path().join(format!("img_{i}.png")))
                .unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "not an image").unwrap();
        let samples = load_image_folder(dir.path(), 8, 8).unwrap();
        assert_eq!(samples.len(), 4);
        let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);

        let empty = tempfile::tempdir().unwrap();
        assert!(load_image_folder(empty.path(), 8, 8).is_err());
    }

    fn build_default(auth_n: usize) -> PoisonedDataset {
        let spec = DataSourceSpec::synthetic(10, 6, 16, 16, 7);
        let data = spec.load(Path::new(".")).unwrap();
        PoisonedDataset::build(
            data,
            spec,
            TriggerSpec::default_patch(),
            WatermarkSpec::default_block(),
            auth_n,
            77,
            None,
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn auth_ids_come_from_test_split_only() {
        let ds = build_default(4);
        assert_eq!(ds.manifest.auth_ids.len(), 4);
        let train_ids: Vec<&String> = ds.data.train.iter().map(|s| &s.id).collect();
        for id in &ds.manifest.auth_ids {
            assert!(!train_ids.contains(&id));
        }
        assert!(PoisonedDataset::build(
            ds.data.clone(),
            ds.manifest.data_source.clone(),
            TriggerSpec::default_patch(),
            WatermarkSpec::default_block(),
            7,
            77,
            None,
            None,
            None,
        )
        .is_err());
    }

    #[test]
    fn block_trigger_makes_identical_auth_inputs() {
        let spec = DataSourceSpec::synthetic(8, 4, 16, 16, 7);
        let data = spec.load(Path::new(".")).unwrap();
        let ds = PoisonedDataset::build(
            data,
            spec,
            TriggerSpec::block(ColorSpec::named("purple")),
            WatermarkSpec::default_block(),
            4,
            77,
            None,
            None,
            None,
        )
        .unwrap();
        let auth = ds.auth_set().unwrap();
        for (input, _) in &auth[1..] {
            assert_eq!(input, &auth[0].0);
        }
    }

    #[test]
    fn manifest_roundtrip_regenerates_auth_set_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DataSourceSpec::synthetic(10, 6, 16, 16, 7);
        let data = spec.load(dir.path()).unwrap();
        let secret = crate::steg::default_secret(16, 16);
        secret.save_png(&dir.path().join("secret.png")).unwrap();
        let ds = PoisonedDataset::build(
            data,
            spec,
            TriggerSpec::steg(2),
            WatermarkSpec::default_block(),
            5,
            123,
            Some(secret),
            Some("secret.png".into()),
            None,
        )
        .unwrap();
        let manifest_path = dir.path().join("manifest.json");
        ds.manifest.save(&manifest_path).unwrap();

        let loaded = TriggerManifest::load(&manifest_path).unwrap();
        assert_eq!(loaded, ds.manifest);
        let original = ds.auth_set().unwrap();
        let regenerated = regenerate_auth_set(&loaded, dir.path()).unwrap();
        assert_eq!(original.len(), regenerated.len());
        for ((a_in, a_t), (b_in, b_t)) in original.iter().zip(&regenerated) {
            assert_eq!(a_in.to_u8(), b_in.to_u8());
            assert_eq!(a_t.to_u8(), b_t.to_u8());
        }
    }

    #[test]
    fn tampered_secret_fails_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DataSourceSpec::synthetic(6, 4, 16, 16, 7);
        let data = spec.load(dir.path()).unwrap();
        let secret = crate::steg::default_secret(16, 16);
        secret.save_png(&dir.path().join("secret.png")).unwrap();
        let ds = PoisonedDataset::build(
            data,
            spec,
            TriggerSpec::steg(2),
            WatermarkSpec::default_block(),
            2,
            9,
            Some(secret),
            Some("secret.png".into()),
            None,
        )
        .unwrap();
        // overwrite the secret with something else
        crate::steg::default_secret(16, 16)
            .resized(16, 16)
            .unwrap();
        synth_natural_image(1, 0, 16, 16)
            .save_png(&dir.path().join("secret.png"))
            .unwrap();
        assert!(matches!(
            regenerate_auth_set(&ds.manifest, dir.path()),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn noise_trigger_auth_uses_manifest_seed() {
        let spec = DataSourceSpec::synthetic(6, 4, 16, 16, 7);
        let data = spec.load(Path::new(".")).unwrap();
        let ds = PoisonedDataset::build(
            data,
            spec,
            TriggerSpec::noise(42),
            WatermarkSpec::default_block(),
            3,
            555,
            None,
            None,
            None,
        )
        .unwrap();
        let auth = ds.auth_set().unwrap();
        assert_eq!(
            auth[0].0,
            crate::trigger::noise_image(555, 0, 3, 16, 16)
        );
        assert_ne!(auth[0].0, auth[1].0);
    }

    #[test]
    fn epoch_batches_cover_all_indices() {
        let batches = epoch_batches(10, 3, 1, 0);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(epoch_batches(10, 3, 1, 0), epoch_batches(10, 3, 1, 0));
        assert_ne!(epoch_batches(10, 3, 1, 0), epoch_batches(10, 3, 1, 1));
    }

    #[test]
    fn poisoning_does_not_mutate_clean_images() {
        let ds = build_default(3);
        let before: Vec<Image> = ds.data.test.iter().map(|s| s.image.clone()).collect();
        let _ = ds.auth_set().unwrap();
        for (s, b) in ds.data.test.iter().zip(&before) {
            assert_eq!(&s.image, b);
        }
    }
}
