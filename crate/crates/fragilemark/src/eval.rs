//! The verification protocol and the three-criteria judgment.
//!
//! Retrievability: batch-mean NCC between the model's outputs on the
//! authentication inputs and the rendered targets must exceed the retrieve
//! threshold. Fidelity: the watermarked model's clean metric must sit within
//! the gap threshold of the plain model's. Fragility: after an attack the
//! NCC must fall below the fragile threshold while clean performance stays
//! within the gap of the pre-attack watermarked model — both conjuncts, so a
//! broken model cannot pass as "fragile".

use crate::attack::{attack_finetune, attack_overwrite, AttackKind, AttackSpec};
use crate::dataset::{self, PoisonedDataset, Sample, TriggerManifest};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics;
use crate::model::{ArchDescriptor, Task, Unet};
use crate::train::{auth_ncc, clean_metric, train_immediate, TrainConfig};
use crate::trigger::{apply_patch, enumerate_fake_triggers, TriggerSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Pass thresholds; defaults follow the protocol (0.95 / 0.95 / 0.02).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub ncc_retrieve: f64,
    pub ncc_fragile: f64,
    /// MSE gap for reconstruction, IoU gap for segmentation.
    pub fidelity_gap: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            ncc_retrieve: 0.95,
            ncc_fragile: 0.95,
            fidelity_gap: 0.02,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ncc_retrieve", self.ncc_retrieve),
            ("ncc_fragile", self.ncc_fragile),
            ("fidelity_gap", self.fidelity_gap),
        ] {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "thresholds.{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub ncc: f64,
    pub verified: bool,
    pub pairs: usize,
}

/// Verify a model against an in-memory authentication set.
pub fn verify_with_auth(
    model: &Unet<f32>,
    auth: &[(Image, Image)],
    thresholds: &Thresholds,
) -> Result<VerifyOutcome> {
    let ncc = auth_ncc(model, auth)?;
    Ok(VerifyOutcome {
        ncc,
        verified: ncc > thresholds.ncc_retrieve,
        pairs: auth.len(),
    })
}

/// Verify a model against a manifest on disk; the authentication set is
/// regenerated from the manifest (paths resolve against `base_dir`).
pub fn verify(
    model: &Unet<f32>,
    manifest: &TriggerManifest,
    base_dir: &Path,
    thresholds: &Thresholds,
) -> Result<VerifyOutcome> {
    let auth = dataset::regenerate_auth_set(manifest, base_dir)?;
    let (c, h, w) = (
        manifest.image_shape[0],
        manifest.image_shape[1],
        manifest.image_shape[2],
    );
    model.check_input((c, h, w))?;
    verify_with_auth(model, &auth, thresholds)
}

/// Clean-task metrics of one model (MSE+PSNR or IoU by task).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

impl TaskMetrics {
    /// The scalar the fidelity gap is measured on.
    pub fn primary(&self) -> f64 {
        self.mse.or(self.iou).unwrap_or(f64::NAN)
    }
}

/// Per-image MSE + mean per-image PSNR, or mean IoU, on a test set.
pub fn task_metrics(model: &Unet<f32>, test: &[Sample]) -> Result<TaskMetrics> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("empty test set".into()));
    }
    let inputs: Vec<Image> = test.iter().map(|s| s.image.clone()).collect();
    let outputs = model.predict_batch(&inputs)?;
    match model.desc.task {
        Task::Reconstruction => {
            let mut mse_sum = 0.0;
            let mut psnr_sum = 0.0;
            for (out, s) in outputs.iter().zip(test) {
                let m = metrics::mse(out, &s.image)?;
                mse_sum += m;
                psnr_sum += metrics::psnr(m, 1.0)?;
            }
            Ok(TaskMetrics {
                mse: Some(mse_sum / test.len() as f64),
                psnr: Some(psnr_sum / test.len() as f64),
                iou: None,
            })
        }
        Task::Segmentation => {
            let mut iou_sum = 0.0;
            for (out, s) in outputs.iter().zip(test) {
                let truth = s.mask.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(format!("sample {} has no mask", s.id))
                })?;
                iou_sum += metrics::iou(out, truth)?;
            }
            Ok(TaskMetrics {
                mse: None,
                psnr: None,
                iou: Some(iou_sum / test.len() as f64),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityOutcome {
    pub pass: bool,
    pub gap: f64,
    pub plain: TaskMetrics,
    pub watermarked: TaskMetrics,
}

/// Compare clean-task performance of the plain and watermarked models.
pub fn evaluate_fidelity(
    plain: &Unet<f32>,
    watermarked: &Unet<f32>,
    test: &[Sample],
    thresholds: &Thresholds,
) -> Result<FidelityOutcome> {
    if plain.desc.task != watermarked.desc.task {
        return Err(Error::InvalidArgument(format!(
            "fidelity: task mismatch {:?} vs {:?}",
            plain.desc.task, watermarked.desc.task
        )));
    }
    let p = task_metrics(plain, test)?;
    let w = task_metrics(watermarked, test)?;
    let gap = (p.primary() - w.primary()).abs();
    Ok(FidelityOutcome {
        pass: gap < thresholds.fidelity_gap,
        gap,
        plain: p,
        watermarked: w,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FragilityOutcome {
    /// Both conjuncts: watermark broken AND clean performance preserved.
    pub pass: bool,
    pub ncc: f64,
    pub broken: bool,
    pub clean_ok: bool,
    /// Clean metric of the attacked model (MSE or IoU).
    pub attacked_clean: f64,
}

/// Judge an attacked model: the watermark must no longer verify while the
/// clean clause holds against the pre-attack watermarked model's metric.
pub fn evaluate_fragility(
    attacked: &Unet<f32>,
    auth: &[(Image, Image)],
    test: &[Sample],
    pre_attack_clean: f64,
    thresholds: &Thresholds,
) -> Result<FragilityOutcome> {
    let ncc = auth_ncc(attacked, auth)?;
    let attacked_clean = clean_metric(attacked, test)?;
    let broken = ncc < thresholds.ncc_fragile;
    let clean_ok = (attacked_clean - pre_attack_clean).abs() < thresholds.fidelity_gap;
    Ok(FragilityOutcome {
        pass: broken && clean_ok,
        ncc,
        broken,
        clean_ok,
        attacked_clean,
    })
}

/// One row of the fake-trigger probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub color: String,
    pub location: String,
    pub ncc: f64,
    /// True when this trigger retrieves the watermark (NCC above threshold).
    pub retrieved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTable {
    /// The nine fake triggers; secure when none of them retrieves.
    pub fakes: Vec<ProbeRow>,
    /// Sanity row: the embedded trigger itself.
    pub true_trigger: ProbeRow,
    pub secure: bool,
}

fn probe_row(spec: &TriggerSpec, ncc: f64, thresholds: &Thresholds) -> ProbeRow {
    let label = spec.label();
    let inner = label
        .trim_start_matches("patch(")
        .trim_end_matches(')')
        .split(',')
        .collect::<Vec<_>>();
    ProbeRow {
        color: inner.first().unwrap_or(&"?").to_string(),
        location: inner.get(1).unwrap_or(&"?").to_string(),
        ncc,
        retrieved: ncc > thresholds.ncc_retrieve,
    }
}

/// Probe a patch-trigger scheme with the nine fake triggers (other
/// locations, other colors) plus the true trigger as a sanity row.
pub fn security_probe(
    model: &Unet<f32>,
    ds: &PoisonedDataset,
    thresholds: &Thresholds,
) -> Result<ProbeTable> {
    let true_spec = ds.trigger_spec().clone();
    let fakes = enumerate_fake_triggers(&true_spec)?;
    let cleans: Vec<&Sample> = ds
        .manifest
        .auth_ids
        .iter()
        .map(|id| {
            ds.data
                .test
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| Error::InvalidArgument(format!("auth id {id} missing")))
        })
        .collect::<Result<_>>()?;

    let score = |spec: &TriggerSpec| -> Result<f64> {
        let mut pairs = Vec::with_capacity(cleans.len());
        for s in &cleans {
            let input = apply_patch(&s.image, spec)?;
            let target = ds.response_target(s)?;
            pairs.push((input, target));
        }
        auth_ncc(model, &pairs)
    };

    let mut rows = Vec::with_capacity(fakes.len());
    for fake in &fakes {
        rows.push(probe_row(fake, score(fake)?, thresholds));
    }
    let true_row = probe_row(&true_spec, score(&true_spec)?, thresholds);
    let secure = rows.iter().all(|r| !r.retrieved);
    Ok(ProbeTable {
        fakes: rows,
        true_trigger: true_row,
        secure,
    })
}

/// Fragility numbers for one attack inside a sweep row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAttack {
    pub name: String,
    pub ncc: f64,
    pub broken: bool,
    pub clean_ok: bool,
}

/// One embedding-strength sweep row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub retrievability_ncc: f64,
    pub retrievable: bool,
    /// Empty when the watermark never embedded (attacks are meaningless then).
    pub attacks: Vec<SweepAttack>,
}

/// Everything a sweep run needs besides the alphas.
pub struct SweepInputs<'a> {
    pub ds: &'a PoisonedDataset,
    pub desc: &'a ArchDescriptor,
    pub train: &'a TrainConfig,
    pub attacks: &'a [AttackSpec],
    pub thresholds: &'a Thresholds,
}

/// Train one model per embedding strength (shared seed) and record
/// retrievability plus per-attack fragility. Attack columns stay empty for
/// strengths whose watermark never became retrievable.
pub fn alpha_sweep(inputs: &SweepInputs<'_>, alphas: &[f64]) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::InvalidArgument("alpha_sweep: no alphas".into()));
    }
    let seed = inputs.train.run_seed()?;
    let auth = inputs.ds.auth_set()?;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let cfg = TrainConfig {
            alpha,
            ..inputs.train.clone()
        };
        let mut model: Unet<f32> = Unet::new(inputs.desc.clone(), seed);
        train_immediate(&mut model, inputs.ds, &cfg)?;
        let outcome = verify_with_auth(&model, &auth, inputs.thresholds)?;
        let mut row = SweepRow {
            alpha,
            retrievability_ncc: outcome.ncc,
            retrievable: outcome.verified,
            attacks: Vec::new(),
        };
        if outcome.verified {
            let pre_attack_clean = clean_metric(&model, &inputs.ds.data.test)?;
            for attack in inputs.attacks {
                let attacked = match attack.kind {
                    AttackKind::Ftune => {
                        attack_finetune(
                            &model,
                            &inputs.ds.data,
                            &inputs.ds.manifest.data_source,
                            attack,
                            &cfg,
                        )?
                        .0
                    }
                    AttackKind::Overwrite => {
                        attack_overwrite(
                            &model,
                            &inputs.ds.data,
                            &inputs.ds.manifest.data_source,
                            attack,
                            &cfg,
                            inputs.ds.trigger_spec(),
                            inputs.ds.manifest.auth_ids.len(),
                            inputs.ds.secret().cloned(),
                            inputs.ds.reference().cloned(),
                        )?
                        .0
                    }
                };
                let frag = evaluate_fragility(
                    &attacked,
                    &auth,
                    &inputs.ds.data.test,
                    pre_attack_clean,
                    inputs.thresholds,
                )?;
                row.attacks.push(SweepAttack {
                    name: attack.name(),
                    ncc: frag.ncc,
                    broken: frag.broken,
                    clean_ok: frag.clean_ok,
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}
