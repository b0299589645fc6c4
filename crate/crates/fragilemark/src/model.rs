//! Reference trainable models: a 3-level encoder–decoder (UNet-style, with
//! an optional no-skip variant) for image reconstruction and binary
//! segmentation, plus checkpoint I/O with a content-hashed JSON sidecar.

use crate::error::{Error, Result};
use crate::image::{sha256_hex, Image};
use crate::nn::{
    concat_channels, fc, maxpool2_backward, maxpool2_forward, mse_loss_grad, relu_backward_inplace,
    relu_inplace, sigmoid, sigmoid_backward, softmax_ce_loss_grad, split_channels,
    upsample2_backward, upsample2_forward, Adam, Conv2d,
};
use ndarray::{Array1, Array2, Array3, NdFloat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FMW1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Reconstruction,
    Segmentation,
}

/// Architecture descriptor; embedded in every checkpoint sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub arch: String,
    pub task: Task,
    pub widths: [usize; 3],
    pub skip: bool,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ArchDescriptor {
    pub fn unet_small(task: Task) -> Self {
        ArchDescriptor {
            arch: "unet-small".into(),
            task,
            widths: [16, 32, 64],
            skip: true,
            in_channels: 3,
            out_channels: match task {
                Task::Reconstruction => 3,
                Task::Segmentation => 2,
            },
        }
    }

    /// Low-capacity decoder variant: same trunk, no skip connections.
    pub fn unet_small_noskip(task: Task) -> Self {
        let mut d = ArchDescriptor::unet_small(task);
        d.arch = "unet-small-noskip".into();
        d.skip = false;
        d
    }

    pub fn with_widths(mut self, widths: [usize; 3]) -> Self {
        self.widths = widths;
        self
    }
}

const LAYER_NAMES: [&str; 11] = [
    "enc1a", "enc1b", "enc2a", "enc2b", "bott_a", "bott_b", "dec1a", "dec1b", "dec2a", "dec2b",
    "head",
];

/// `(cin, cout, k, pad)` per layer for a descriptor.
fn layer_plan(desc: &ArchDescriptor) -> [(usize, usize, usize, usize); 11] {
    let [w1, w2, w3] = desc.widths;
    let s1 = if desc.skip { w1 } else { 0 };
    let s2 = if desc.skip { w2 } else { 0 };
    [
        (desc.in_channels, w1, 3, 1),
        (w1, w1, 3, 1),
        (w1, w2, 3, 1),
        (w2, w2, 3, 1),
        (w2, w3, 3, 1),
        (w3, w3, 3, 1),
        (w3 + s2, w2, 3, 1),
        (w2, w2, 3, 1),
        (w2 + s1, w1, 3, 1),
        (w1, w1, 3, 1),
        (w1, desc.out_channels, 1, 0),
    ]
}

/// Encoder–decoder with two pooling stages; head is a 1x1 conv with sigmoid
/// (reconstruction) or raw class logits (segmentation).
#[derive(Debug, Clone)]
pub struct Unet<F = f32> {
    pub desc: ArchDescriptor,
    layers: Vec<Conv2d<F>>,
}

/// Per-layer parameter gradients, in layer order.
#[derive(Debug, Clone)]
pub struct Grads<F> {
    pub dw: Vec<Array2<F>>,
    pub db: Vec<Array1<F>>,
}

impl<F: NdFloat> Grads<F> {
    pub fn add_scaled(&mut self, other: &Grads<F>, scale: F) {
        for (a, b) in self.dw.iter_mut().zip(&other.dw) {
            a.zip_mut_with(b, |x, &y| *x = *x + scale * y);
        }
        for (a, b) in self.db.iter_mut().zip(&other.db) {
            a.zip_mut_with(b, |x, &y| *x = *x + scale * y);
        }
    }

    pub fn scale(&mut self, scale: F) {
        for a in self.dw.iter_mut() {
            a.mapv_inplace(|x| x * scale);
        }
        for a in self.db.iter_mut() {
            a.mapv_inplace(|x| x * scale);
        }
    }
}

/// Activations kept by `forward_cached` for the backward pass.
pub struct ForwardCache<F> {
    x: Array3<F>,
    e1a: Array3<F>,
    e1b: Array3<F>,
    i1: Array3<u8>,
    p1: Array3<F>,
    e2a: Array3<F>,
    e2b: Array3<F>,
    i2: Array3<u8>,
    p2: Array3<F>,
    ba: Array3<F>,
    bb: Array3<F>,
    c1: Array3<F>,
    d1a: Array3<F>,
    d1b: Array3<F>,
    c2: Array3<F>,
    d2a: Array3<F>,
    d2b: Array3<F>,
    /// Task-activated output: sigmoid image or raw logits.
    pub out: Array3<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    SoftmaxCe,
}

impl Task {
    pub fn loss(self) -> LossKind {
        match self {
            Task::Reconstruction => LossKind::Mse,
            Task::Segmentation => LossKind::SoftmaxCe,
        }
    }
}

impl<F: NdFloat> Unet<F> {
    /// Seeded He-uniform initialization.
    pub fn new(desc: ArchDescriptor, seed: u64) -> Self {
        let mut rng = crate::rng::substream(seed, "model-init", 0);
        let layers = layer_plan(&desc)
            .iter()
            .map(|&(cin, cout, k, pad)| Conv2d::he_uniform(cin, cout, k, pad, &mut rng))
            .collect();
        Unet { desc, layers }
    }

    pub fn check_input(&self, shape: (usize, usize, usize)) -> Result<()> {
        let (c, h, w) = shape;
        if c != self.desc.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} input channels, got {c}",
                self.desc.in_channels
            )));
        }
        if h % 4 != 0 || w % 4 != 0 || h < 4 || w < 4 {
            return Err(Error::ShapeMismatch(format!(
                "spatial dims must be multiples of 4, got {h}x{w}"
            )));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &Array3<F>) -> ForwardCache<F> {
        let l = &self.layers;
        let mut e1a = l[0].forward(x);
        relu_inplace(&mut e1a);
        let mut e1b = l[1].forward(&e1a);
        relu_inplace(&mut e1b);
        let (p1, i1) = maxpool2_forward(&e1b);
        let mut e2a = l[2].forward(&p1);
        relu_inplace(&mut e2a);
        let mut e2b = l[3].forward(&e2a);
        relu_inplace(&mut e2b);
        let (p2, i2) = maxpool2_forward(&e2b);
        let mut ba = l[4].forward(&p2);
        relu_inplace(&mut ba);
        let mut bb = l[5].forward(&ba);
        relu_inplace(&mut bb);
        let u1 = upsample2_forward(&bb);
        let c1 = if self.desc.skip {
            concat_channels(&u1, &e2b)
        } else {
            u1
        };
        let mut d1a = l[6].forward(&c1);
        relu_inplace(&mut d1a);
        let mut d1b = l[7].forward(&d1a);
        relu_inplace(&mut d1b);
        let u2 = upsample2_forward(&d1b);
        let c2 = if self.desc.skip {
            concat_channels(&u2, &e1b)
        } else {
            u2
        };
        let mut d2a = l[8].forward(&c2);
        relu_inplace(&mut d2a);
        let mut d2b = l[9].forward(&d2a);
        relu_inplace(&mut d2b);
        let logits = l[10].forward(&d2b);
        let out = match self.desc.task {
            Task::Reconstruction => sigmoid(&logits),
            Task::Segmentation => logits,
        };
        ForwardCache {
            x: x.clone(),
            e1a,
            e1b,
            i1,
            p1,
            e2a,
            e2b,
            i2,
            p2,
            ba,
            bb,
            c1,
            d1a,
            d1b,
            c2,
            d2a,
            d2b,
            out,
        }
    }

    /// Inference pass; returns the task-activated output only.
    pub fn forward(&self, x: &Array3<F>) -> Array3<F> {
        self.forward_cached(x).out
    }

    /// Gradient of every parameter given `dout = dL/d(out)`.
    pub fn backward(&self, cache: &ForwardCache<F>, dout: &Array3<F>) -> Grads<F> {
        let l = &self.layers;
        let mut dw = vec![Array2::zeros((0, 0)); l.len()];
        let mut db = vec![Array1::zeros(0); l.len()];

        let dlogits = match self.desc.task {
            Task::Reconstruction => sigmoid_backward(dout, &cache.out),
            Task::Segmentation => dout.clone(),
        };
        let (mut dd2b, w10, b10) = l[10].backward(&cache.d2b, &dlogits);
        dw[10] = w10;
        db[10] = b10;
        relu_backward_inplace(&mut dd2b, &cache.d2b);
        let (mut dd2a, w9, b9) = l[9].backward(&cache.d2a, &dd2b);
        dw[9] = w9;
        db[9] = b9;
        relu_backward_inplace(&mut dd2a, &cache.d2a);
        let (dc2, w8, b8) = l[8].backward(&cache.c2, &dd2a);
        dw[8] = w8;
        db[8] = b8;
        let (du2, de1b_skip) = if self.desc.skip {
            let (a, b) = split_channels(&dc2, self.desc.widths[1]);
            (a, Some(b))
        } else {
            (dc2, None)
        };
        let mut dd1b = upsample2_backward(&du2);
        relu_backward_inplace(&mut dd1b, &cache.d1b);
        let (mut dd1a, w7, b7) = l[7].backward(&cache.d1a, &dd1b);
        dw[7] = w7;
        db[7] = b7;
        relu_backward_inplace(&mut dd1a, &cache.d1a);
        let (dc1, w6, b6) = l[6].backward(&cache.c1, &dd1a);
        dw[6] = w6;
        db[6] = b6;
        let (du1, de2b_skip) = if self.desc.skip {
            let (a, b) = split_channels(&dc1, self.desc.widths[2]);
            (a, Some(b))
        } else {
            (dc1, None)
        };
        let mut dbb = upsample2_backward(&du1);
        relu_backward_inplace(&mut dbb, &cache.bb);
        let (mut dba, w5, b5) = l[5].backward(&cache.ba, &dbb);
        dw[5] = w5;
        db[5] = b5;
        relu_backward_inplace(&mut dba, &cache.ba);
        let (dp2, w4, b4) = l[4].backward(&cache.p2, &dba);
        dw[4] = w4;
        db[4] = b4;
        let mut de2b = maxpool2_backward(&dp2, &cache.i2);
        if let Some(skip) = de2b_skip {
            de2b.zip_mut_with(&skip, |a, &b| *a = *a + b);
        }
        relu_backward_inplace(&mut de2b, &cache.e2b);
        let (mut de2a, w3, b3) = l[3].backward(&cache.e2a, &de2b);
        dw[3] = w3;
        db[3] = b3;
        relu_backward_inplace(&mut de2a, &cache.e2a);
        let (dp1, w2, b2) = l[2].backward(&cache.p1, &de2a);
        dw[2] = w2;
        db[2] = b2;
        let mut de1b = maxpool2_backward(&dp1, &cache.i1);
        if let Some(skip) = de1b_skip {
            de1b.zip_mut_with(&skip, |a, &b| *a = *a + b);
        }
        relu_backward_inplace(&mut de1b, &cache.e1b);
        let (mut de1a, w1, b1) = l[1].backward(&cache.e1a, &de1b);
        dw[1] = w1;
        db[1] = b1;
        relu_backward_inplace(&mut de1a, &cache.e1a);
        let (_dx, w0, b0) = l[0].backward(&cache.x, &de1a);
        dw[0] = w0;
        db[0] = b0;

        Grads { dw, db }
    }

    pub fn zero_grads(&self) -> Grads<F> {
        Grads {
            dw: self
                .layers
                .iter()
                .map(|c| Array2::zeros(c.weight.dim()))
                .collect(),
            db: self
                .layers
                .iter()
                .map(|c| Array1::zeros(c.bias.len()))
                .collect(),
        }
    }

    /// Interleaved weight/bias lengths for sizing optimizer state.
    pub fn param_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|c| [c.weight.len(), c.bias.len()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    /// Apply one optimizer update from accumulated gradients.
    pub fn adam_step(&mut self, adam: &mut Adam<F>, grads: &Grads<F>) {
        let mut params: Vec<&mut [F]> = Vec::with_capacity(self.layers.len() * 2);
        for c in self.layers.iter_mut() {
            params.push(c.weight.as_slice_mut().expect("standard layout"));
            params.push(c.bias.as_slice_mut().expect("standard layout"));
        }
        let mut flat_grads: Vec<&[F]> = Vec::with_capacity(grads.dw.len() * 2);
        for (w, b) in grads.dw.iter().zip(&grads.db) {
            flat_grads.push(w.as_slice().expect("standard layout"));
            flat_grads.push(b.as_slice().expect("standard layout"));
        }
        adam.step(&mut params, &flat_grads);
    }

    /// Mean loss and mean parameter gradients over a batch.
    ///
    /// Images are processed independently (in parallel) and reduced in index
    /// order, so results are identical for any worker count.
    pub fn batch_loss_grads(
        &self,
        inputs: &[Array3<F>],
        targets: &[Array3<F>],
        loss: LossKind,
    ) -> (f64, Grads<F>)
    where
        F: Send + Sync,
    {
        assert_eq!(inputs.len(), targets.len(), "batch pairing");
        assert!(!inputs.is_empty(), "empty batch");
        let per_image: Vec<(F, Grads<F>)> = inputs
            .par_iter()
            .zip(targets.par_iter())
            .map(|(x, t)| {
                let cache = self.forward_cached(x);
                let (l, dout) = match loss {
                    LossKind::Mse => mse_loss_grad(&cache.out, t),
                    LossKind::SoftmaxCe => softmax_ce_loss_grad(&cache.out, t),
                };
                (l, self.backward(&cache, &dout))
            })
            .collect();
        let scale = fc::<F>(1.0 / inputs.len() as f64);
        let mut total = self.zero_grads();
        let mut loss_sum = 0.0f64;
        for (l, g) in &per_image {
            loss_sum += l.to_f64().expect("finite loss");
            total.add_scaled(g, scale);
        }
        (loss_sum / inputs.len() as f64, total)
    }

    /// Mean loss only (no gradients).
    pub fn batch_loss(&self, inputs: &[Array3<F>], targets: &[Array3<F>], loss: LossKind) -> f64
    where
        F: Send + Sync,
    {
        assert_eq!(inputs.len(), targets.len(), "batch pairing");
        let losses: Vec<f64> = inputs
            .par_iter()
            .zip(targets.par_iter())
            .map(|(x, t)| {
                let out = self.forward(x);
                let l = match loss {
                    LossKind::Mse => mse_loss_grad(&out, t).0,
                    LossKind::SoftmaxCe => softmax_ce_loss_grad(&out, t).0,
                };
                l.to_f64().expect("finite loss")
            })
            .collect();
        losses.iter().sum::<f64>() / inputs.len() as f64
    }
}

impl Unet<f32> {
    /// Task-aware prediction: clamped image for reconstruction, argmax mask
    /// for segmentation.
    pub fn predict_image(&self, input: &Image) -> Result<Image> {
        self.check_input(input.shape())?;
        let out = self.forward(&input.data().to_owned());
        match self.desc.task {
            Task::Reconstruction => Image::new(out.mapv(|v| v.clamp(0.0, 1.0))),
            Task::Segmentation => {
                let (_, h, w) = out.dim();
                let mask = Array3::from_shape_fn((1, h, w), |(_, y, x)| {
                    let mut best = 0usize;
                    for c in 1..self.desc.out_channels {
                        if out[[c, y, x]] > out[[best, y, x]] {
                            best = c;
                        }
                    }
                    best as f32
                });
                Image::new(mask)
            }
        }
    }

    pub fn predict_batch(&self, inputs: &[Image]) -> Result<Vec<Image>> {
        inputs
            .par_iter()
            .map(|img| self.predict_image(img))
            .collect()
    }

    fn serialize_params(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.layers.len() as u32 * 2).to_le_bytes());
        for (conv, name) in self.layers.iter().zip(LAYER_NAMES) {
            write_tensor(&mut buf, &format!("{name}.w"), &[conv.weight.dim().0, conv.weight.dim().1], conv.weight.as_slice().unwrap());
            write_tensor(&mut buf, &format!("{name}.b"), &[conv.bias.len()], conv.bias.as_slice().unwrap());
        }
        buf
    }

    /// Write the parameter blob and its JSON sidecar (`<path>.json`).
    pub fn save(&self, path: &Path, sidecar: &mut CheckpointSidecar) -> Result<()> {
        let blob = self.serialize_params();
        let hash = sha256_hex(&blob);
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&blob).map_err(|e| Error::io(path, e))?;
        sidecar.format_version = CHECKPOINT_VERSION;
        sidecar.descriptor = self.desc.clone();
        sidecar.sha256 = hash;
        let sidecar_path = sidecar_path(path);
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(&sidecar_path, json).map_err(|e| Error::io(&sidecar_path, e))?;
        Ok(())
    }

    /// Load a checkpoint, verifying the blob hash against the sidecar and,
    /// when given, the expected task.
    pub fn load(path: &Path, expect_task: Option<Task>) -> Result<(Unet<f32>, CheckpointSidecar)> {
        let sidecar_path = sidecar_path(path);
        let sidecar_text = std::fs::read_to_string(&sidecar_path)
            .map_err(|e| Error::io(&sidecar_path, e))?;
        let sidecar: CheckpointSidecar = serde_json::from_str(&sidecar_text)?;
        let mut blob = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut blob)
            .map_err(|e| Error::io(path, e))?;
        let actual = sha256_hex(&blob);
        if actual != sidecar.sha256 {
            return Err(Error::HashMismatch {
                path: path.to_path_buf(),
                expected: sidecar.sha256.clone(),
                actual,
            });
        }
        if let Some(task) = expect_task {
            if sidecar.descriptor.task != task {
                return Err(Error::DescriptorMismatch(format!(
                    "checkpoint is a {:?} model, expected {:?}",
                    sidecar.descriptor.task, task
                )));
            }
        }
        let model = deserialize_params(path, &blob, sidecar.descriptor.clone())?;
        Ok((model, sidecar))
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

fn write_tensor(buf: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) {
    buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(dims.len() as u8);
    for &d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn deserialize_params(path: &Path, blob: &[u8], desc: ArchDescriptor) -> Result<Unet<f32>> {
    let malformed = |reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > blob.len() {
            return Err(malformed("truncated blob"));
        }
        let s = &blob[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(malformed(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    if count != LAYER_NAMES.len() * 2 {
        return Err(Error::DescriptorMismatch(format!(
            "expected {} tensors, blob has {count}",
            LAYER_NAMES.len() * 2
        )));
    }
    let plan = layer_plan(&desc);
    let mut layers = Vec::with_capacity(LAYER_NAMES.len());
    for (li, name) in LAYER_NAMES.iter().enumerate() {
        let (cin, cout, k, pad) = plan[li];
        let weight = read_tensor(blob, &mut pos, &format!("{name}.w"), &[cout, cin * k * k], path)?;
        let bias = read_tensor(blob, &mut pos, &format!("{name}.b"), &[cout], path)?;
        layers.push(Conv2d {
            weight: Array2::from_shape_vec((cout, cin * k * k), weight)
                .map_err(|_| malformed("weight shape"))?,
            bias: Array1::from_vec(bias),
            cin,
            cout,
            k,
            pad,
        });
    }
    if pos != blob.len() {
        return Err(malformed("trailing bytes"));
    }
    Ok(Unet { desc, layers })
}

fn read_tensor(
    blob: &[u8],
    pos: &mut usize,
    expect_name: &str,
    expect_dims: &[usize],
    path: &Path,
) -> Result<Vec<f32>> {
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > blob.len() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: "truncated tensor".into(),
            });
        }
        let s = &blob[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let name_len = u16::from_le_bytes(take(pos, 2)?.try_into().unwrap()) as usize;
    let name = String::from_utf8(take(pos, name_len)?.to_vec())
        .map_err(|_| malformed("tensor name not utf8".into()))?;
    if name != expect_name {
        return Err(Error::DescriptorMismatch(format!(
            "tensor order: expected {expect_name}, found {name}"
        )));
    }
    let ndim = take(pos, 1)?[0] as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize);
    }
    if dims != expect_dims {
        return Err(Error::DescriptorMismatch(format!(
            "tensor {name}: dims {dims:?} do not match descriptor {expect_dims:?}"
        )));
    }
    let n: usize = dims.iter().product();
    let bytes = take(pos, n * 4)?;
    let mut data = Vec::with_capacity(n);
    for chunk in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(data)
}

/// JSON sidecar stored next to the parameter blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub format_version: u32,
    pub descriptor: ArchDescriptor,
    pub sha256: String,
    /// Relative path of the trigger manifest this model was embedded with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl CheckpointSidecar {
    pub fn fresh() -> Self {
        CheckpointSidecar {
            format_version: CHECKPOINT_VERSION,
            descriptor: ArchDescriptor::unet_small(Task::Reconstruction),
            sha256: String::new(),
            manifest: None,
            provenance: None,
        }
    }
}

/// How an attacked checkpoint was produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    /// sha256 of the source checkpoint blob.
    pub source_hash: String,
    pub attack: serde_json::Value,
}
