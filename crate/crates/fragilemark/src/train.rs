//! Watermark-embedding trainers.
//!
//! The immediate-task trainer optimizes, per step, the clean reconstruction
//! loss plus `alpha` times the watermark loss on the triggered twin batch:
//! `L = MSE(x_c, y_c) + alpha * MSE(w_f, y_w)`. The downstream trainer swaps
//! both terms for per-pixel cross-entropy and has no weighting knob. The
//! plain trainer drops the watermark term and produces the fidelity
//! baseline model. All runs are bit-reproducible for a fixed seed.

use crate::dataset::{epoch_batches, DataSet, PoisonedDataset, Sample};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics;
use crate::model::{LossKind, Task, Unet};
use crate::nn::Adam;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Training hyperparameters; defaults follow the reference protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Weight on the watermark loss term (immediate task only).
    pub alpha: f64,
    /// Defaults to the experiment seed when unset.
    pub seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 0.001,
            epochs: 10,
            alpha: 1.0,
            seed: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("train.batch_size must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("train.epochs must be > 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig("train.lr must be > 0".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::InvalidConfig("train.alpha must be >= 0".into()));
        }
        Ok(())
    }

    pub fn run_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidConfig("train.seed unresolved".into()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Loss components of one optimizer step; `total = clean + alpha * wm` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub clean_loss: f64,
    pub wm_loss: f64,
    pub total_loss: f64,
}

/// One history line per epoch, written as JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub clean_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wm_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrievability_ncc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl History {
    /// Epoch records as JSON lines.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for rec in &self.epochs {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn recon_inputs(samples: &[Sample], indices: &[usize]) -> Vec<Array3<f32>> {
    indices
        .iter()
        .map(|&i| samples[i].image.data().to_owned())
        .collect()
}

fn mask_targets(samples: &[Sample], indices: &[usize]) -> Result<Vec<Array3<f32>>> {
    indices
        .iter()
        .map(|&i| {
            samples[i]
                .mask
                .as_ref()
                .map(|m| m.data().to_owned())
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("sample {} has no mask", samples[i].id))
                })
        })
        .collect()
}

/// Mean clean-task metric on a sample set: MSE for reconstruction
/// (output vs. input), IoU for segmentation (mask vs. truth).
pub fn clean_metric(model: &Unet<f32>, samples: &[Sample]) -> Result<f64> {
    let inputs: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
    let outputs = model.predict_batch(&inputs)?;
    match model.desc.task {
        Task::Reconstruction => {
            let mut sum = 0.0;
            for (out, s) in outputs.iter().zip(samples) {
                sum += metrics::mse(out, &s.image)?;
            }
            Ok(sum / samples.len() as f64)
        }
        Task::Segmentation => {
            let mut sum = 0.0;
            for (out, s) in outputs.iter().zip(samples) {
                let truth = s.mask.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(format!("sample {} has no mask", s.id))
                })?;
                sum += metrics::iou(out, truth)?;
            }
            Ok(sum / samples.len() as f64)
        }
    }
}

/// NCC of one (model output, target) pair under the verification policy:
/// a degenerate (constant) image on either side scores 0 ("not retrieved").
pub fn pair_ncc(output: &Image, target: &Image) -> Result<f64> {
    match metrics::ncc(output, target) {
        Ok(v) => Ok(v),
        Err(Error::DegenerateImage(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Batch-mean verification NCC over an authentication set.
pub fn auth_ncc(model: &Unet<f32>, auth: &[(Image, Image)]) -> Result<f64> {
    if auth.is_empty() {
        return Err(Error::EmptyDataset("empty authentication set".into()));
    }
    let inputs: Vec<Image> = auth.iter().map(|(i, _)| i.clone()).collect();
    let outputs = model.predict_batch(&inputs)?;
    let mut sum = 0.0;
    for (out, (_, target)) in outputs.iter().zip(auth) {
        sum += pair_ncc(out, target)?;
    }
    Ok(sum / auth.len() as f64)
}

fn check_finite(
    epoch: usize,
    step: usize,
    clean: f64,
    wm: f64,
) -> Result<()> {
    if !clean.is_finite() || !wm.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch,
            step,
            clean,
            wm,
        });
    }
    Ok(())
}

/// Embed the watermark on an immediate (reconstruction) task.
pub fn train_immediate(
    model: &mut Unet<f32>,
    ds: &PoisonedDataset,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    let seed = cfg.run_seed()?;
    if model.desc.task != Task::Reconstruction {
        return Err(Error::InvalidConfig(
            "train_immediate needs a reconstruction model".into(),
        ));
    }
    if ds.watermark_spec().kind.is_mask() {
        return Err(Error::InvalidConfig(
            "mask watermarks train with train_downstream".into(),
        ));
    }
    model.check_input(ds.data.shape())?;
    let alpha = cfg.alpha;
    let auth = ds.auth_set()?;
    let mut adam = Adam::new(cfg.lr, &model.param_sizes());
    let mut history = History::default();
    let mut noise_counter: u64 = 0;
    let mut step = 0usize;
    let n = ds.data.train.len();

    for epoch in 1..=cfg.epochs {
        let mut clean_sum = 0.0;
        let mut wm_sum = 0.0;
        let mut batches = 0usize;
        for batch in epoch_batches(n, cfg.batch_size, seed, epoch) {
            let clean_in = recon_inputs(&ds.data.train, &batch);
            let (clean_loss, mut grads) =
                model.batch_loss_grads(&clean_in, &clean_in, LossKind::Mse);

            let mut twin_in = Vec::with_capacity(batch.len());
            let mut twin_tgt = Vec::with_capacity(batch.len());
            for &i in &batch {
                let sample = &ds.data.train[i];
                let input = ds.trigger_input(&sample.image, (seed, noise_counter))?;
                noise_counter += 1;
                twin_in.push(input.into_data());
                twin_tgt.push(ds.response_target(sample)?.into_data());
            }
            let wm_loss = if alpha > 0.0 {
                let (wm_loss, g_wm) = model.batch_loss_grads(&twin_in, &twin_tgt, LossKind::Mse);
                grads.add_scaled(&g_wm, alpha as f32);
                wm_loss
            } else {
                model.batch_loss(&twin_in, &twin_tgt, LossKind::Mse)
            };
            check_finite(epoch, step, clean_loss, wm_loss)?;
            model.adam_step(&mut adam, &grads);
            step += 1;
            history.steps.push(StepRecord {
                step,
                clean_loss,
                wm_loss,
                total_loss: clean_loss + alpha * wm_loss,
            });
            clean_sum += clean_loss;
            wm_sum += wm_loss;
            batches += 1;
        }
        history.epochs.push(EpochRecord {
            epoch,
            clean_loss: clean_sum / batches as f64,
            wm_loss: Some(wm_sum / batches as f64),
            fidelity_mse: Some(clean_metric(model, &ds.data.test)?),
            fidelity_iou: None,
            retrievability_ncc: Some(auth_ncc(model, &auth)?),
        });
    }
    Ok(history)
}

/// Embed the watermark on a downstream (segmentation) task. The two
/// cross-entropy terms are summed unweighted; `cfg.alpha` is not consulted.
pub fn train_downstream(
    model: &mut Unet<f32>,
    ds: &PoisonedDataset,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    let seed = cfg.run_seed()?;
    if model.desc.task != Task::Segmentation {
        return Err(Error::InvalidConfig(
            "train_downstream needs a segmentation model".into(),
        ));
    }
    if !ds.watermark_spec().kind.is_mask() {
        return Err(Error::InvalidConfig(
            "image watermarks train with train_immediate".into(),
        ));
    }
    model.check_input(ds.data.shape())?;
    let auth = ds.auth_set()?;
    let mut adam = Adam::new(cfg.lr, &model.param_sizes());
    let mut history = History::default();
    let mut noise_counter: u64 = 0;
    let mut step = 0usize;
    let n = ds.data.train.len();

    for epoch in 1..=cfg.epochs {
        let mut clean_sum = 0.0;
        let mut wm_sum = 0.0;
        let mut batches = 0usize;
        for batch in epoch_batches(n, cfg.batch_size, seed, epoch) {
            let clean_in = recon_inputs(&ds.data.train, &batch);
            let clean_tgt = mask_targets(&ds.data.train, &batch)?;
            let (clean_loss, mut grads) =
                model.batch_loss_grads(&clean_in, &clean_tgt, LossKind::SoftmaxCe);

            let mut twin_in = Vec::with_capacity(batch.len());
            let mut twin_tgt = Vec::with_capacity(batch.len());
            for &i in &batch {
                let sample = &ds.data.train[i];
                let input = ds.trigger_input(&sample.image, (seed, noise_counter))?;
                noise_counter += 1;
                twin_in.push(input.into_data());
                twin_tgt.push(ds.response_target(sample)?.into_data());
            }
            let (wm_loss, g_wm) =
                model.batch_loss_grads(&twin_in, &twin_tgt, LossKind::SoftmaxCe);
            grads.add_scaled(&g_wm, 1.0);
            check_finite(epoch, step, clean_loss, wm_loss)?;
            model.adam_step(&mut adam, &grads);
            step += 1;
            history.steps.push(StepRecord {
                step,
                clean_loss,
                wm_loss,
                total_loss: clean_loss + wm_loss,
            });
            clean_sum += clean_loss;
            wm_sum += wm_loss;
            batches += 1;
        }
        history.epochs.push(EpochRecord {
            epoch,
            clean_loss: clean_sum / batches as f64,
            wm_loss: Some(wm_sum / batches as f64),
            fidelity_mse: None,
            fidelity_iou: Some(clean_metric(model, &ds.data.test)?),
            retrievability_ncc: Some(auth_ncc(model, &auth)?),
        });
    }
    Ok(history)
}

/// Task-only training on clean data; the fidelity baseline, and the loop
/// fine-tuning attacks reuse.
pub fn train_plain(model: &mut Unet<f32>, data: &DataSet, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let seed = cfg.run_seed()?;
    model.check_input(data.shape())?;
    let loss_kind = model.desc.task.loss();
    let mut adam = Adam::new(cfg.lr, &model.param_sizes());
    let mut history = History::default();
    let mut step = 0usize;
    let n = data.train.len();

    for epoch in 1..=cfg.epochs {
        let mut clean_sum = 0.0;
        let mut batches = 0usize;
        for batch in epoch_batches(n, cfg.batch_size, seed, epoch) {
            let inputs = recon_inputs(&data.train, &batch);
            let targets = match model.desc.task {
                Task::Reconstruction => inputs.clone(),
                Task::Segmentation => mask_targets(&data.train, &batch)?,
            };
            let (loss, grads) = model.batch_loss_grads(&inputs, &targets, loss_kind);
            check_finite(epoch, step, loss, 0.0)?;
            model.adam_step(&mut adam, &grads);
            step += 1;
            history.steps.push(StepRecord {
                step,
                clean_loss: loss,
                wm_loss: 0.0,
                total_loss: loss,
            });
            clean_sum += loss;
            batches += 1;
        }
        let (fid_mse, fid_iou) = match model.desc.task {
            Task::Reconstruction => (Some(clean_metric(model, &data.test)?), None),
            Task::Segmentation => (None, Some(clean_metric(model, &data.test)?)),
        };
        history.epochs.push(EpochRecord {
            epoch,
            clean_loss: clean_sum / batches as f64,
            wm_loss: None,
            fidelity_mse: fid_mse,
            fidelity_iou: fid_iou,
            retrievability_ncc: None,
        });
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::DataSourceSpec;
    use crate::model::ArchDescriptor;
    use crate::trigger::TriggerSpec;
    use crate::watermark::WatermarkSpec;
    use std::path::Path;

    fn tiny_ds() -> PoisonedDataset {
        let spec = DataSourceSpec::synthetic(24, 8, 16, 16, 3);
        let data = spec.load(Path::new(".")).unwrap();
        PoisonedDataset::build(
            data,
            spec,
            TriggerSpec::default_patch(),
            WatermarkSpec::default_block(),
            4,
            99,
            None,
            None,
            None,
        )
        .unwrap()
    }

    fn tiny_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            epochs,
            ..TrainConfig::default()
        }
        .with_seed(5)
    }

    fn micro_model(task: Task) -> Unet<f32> {
        Unet::new(ArchDescriptor::unet_small(task).with_widths([4, 6, 8]), 11)
    }

    #[test]
    fn histories_are_bitwise_reproducible() {
        let ds = tiny_ds();
        let cfg = tiny_cfg(2);
        let mut m1 = micro_model(Task::Reconstruction);
        let h1 = train_immediate(&mut m1, &ds, &cfg).unwrap();
        let mut m2 = micro_model(Task::Reconstruction);
        let h2 = train_immediate(&mut m2, &ds, &cfg).unwrap();
        assert_eq!(h1, h2);
        let x = ds.data.test[0].image.data().to_owned();
        assert_eq!(m1.forward(&x), m2.forward(&x));
    }

    #[test]
    fn step_records_satisfy_loss_decomposition() {
        let ds = tiny_ds();
        let cfg = TrainConfig {
            alpha: 0.3,
            ..tiny_cfg(1)
        };
        let mut model = micro_model(Task::Reconstruction);
        let history = train_immediate(&mut model, &ds, &cfg).unwrap();
        assert!(!history.steps.is_empty());
        for s in &history.steps {
            assert_eq!(s.total_loss, s.clean_loss + cfg.alpha * s.wm_loss);
        }
    }

    #[test]
    fn alpha_zero_still_records_watermark_loss() {
        let ds = tiny_ds();
        let cfg = TrainConfig {
            alpha: 0.0,
            ..tiny_cfg(1)
        };
        let mut model = micro_model(Task::Reconstruction);
        let history = train_immediate(&mut model, &ds, &cfg).unwrap();
        for s in &history.steps {
            assert!(s.wm_loss > 0.0);
            assert_eq!(s.total_loss, s.clean_loss);
        }
    }

    #[test]
    fn plain_history_omits_watermark_fields() {
        let ds = tiny_ds();
        let mut model = micro_model(Task::Reconstruction);
        let history = train_plain(&mut model, &ds.data, &tiny_cfg(1)).unwrap();
        assert!(history.epochs[0].wm_loss.is_none());
        assert!(history.epochs[0].retrievability_ncc.is_none());
        assert!(history.epochs[0].fidelity_mse.is_some());
    }

    #[test]
    fn history_jsonl_roundtrip() {
        let ds = tiny_ds();
        let mut model = micro_model(Task::Reconstruction);
        let history = train_immediate(&mut model, &ds, &tiny_cfg(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.jsonl");
        history.save_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: Vec<EpochRecord> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(parsed, history.epochs);
    }

    #[test]
    fn plain_segmentation_reduces_cross_entropy() {
        let spec = DataSourceSpec::synthetic_segmentation(32, 6, 16, 16, 3);
        let data = spec.load(Path::new(".")).unwrap();
        let mut model = Unet::new(
            ArchDescriptor::unet_small(Task::Segmentation).with_widths([8, 12, 16]),
            11,
        );
        let history = train_plain(&mut model, &data, &tiny_cfg(8)).unwrap();
        let first = history.epochs.first().unwrap().clean_loss;
        let last = history.epochs.last().unwrap().clean_loss;
        assert!(
            last < first,
            "plain segmentation CE did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn task_mismatch_is_rejected() {
        let ds = tiny_ds();
        let mut seg = micro_model(Task::Segmentation);
        assert!(train_immediate(&mut seg, &ds, &tiny_cfg(1)).is_err());
        assert!(train_downstream(&mut seg, &ds, &tiny_cfg(1)).is_err());
    }

    #[test]
    fn downstream_trains_on_masks() {
        let spec = DataSourceSpec::synthetic_segmentation(16, 6, 16, 16, 3);
        let data = spec.load(Path::new(".")).unwrap();
        let ds = PoisonedDataset::build(
            data,
            spec,
            TriggerSpec::default_patch(),
            WatermarkSpec::mask_inverse(),
            3,
            99,
            None,
            None,
            None,
        )
        .unwrap();
        let mut model = micro_model(Task::Segmentation);
        let history = train_downstream(&mut model, &ds, &tiny_cfg(2)).unwrap();
        assert_eq!(history.epochs.len(), 2);
        assert!(history.epochs[0].fidelity_iou.is_some());
        assert!(history.epochs[0].fidelity_mse.is_none());
        assert!(history.epochs[0].wm_loss.is_some());
        for s in &history.steps {
            assert_eq!(s.total_loss, s.clean_loss + s.wm_loss);
        }
    }
}
