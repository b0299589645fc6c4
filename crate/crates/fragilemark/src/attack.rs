//! Black-box model modifications the fragile watermark must detect:
//! clean fine-tuning (1 or 5 epochs) and overwriting with a new
//! trigger-response pair. Attacks never touch their input model; they
//! return a new one.

use crate::dataset::{DataSourceSpec, DataSet, PoisonedDataset};
use crate::error::{Error, Result};
use crate::model::{Task, Unet};
use crate::train::{train_downstream, train_immediate, train_plain, History, TrainConfig};
use crate::trigger::TriggerSpec;
use crate::watermark::WatermarkSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Ftune,
    Overwrite,
}

/// Declarative attack description; recorded in the attacked checkpoint's
/// provenance sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Fine-tune on a regenerated disjoint split instead of the original one.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fresh_data: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_trigger: Option<TriggerSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_watermark: Option<WatermarkSpec>,
}

impl AttackSpec {
    pub fn ftune(epochs: usize) -> Self {
        AttackSpec {
            kind: AttackKind::Ftune,
            epochs,
            lr: None,
            seed: None,
            fresh_data: false,
            new_trigger: None,
            new_watermark: None,
        }
    }

    pub fn overwrite(new_trigger: TriggerSpec, new_watermark: WatermarkSpec, epochs: usize) -> Self {
        AttackSpec {
            kind: AttackKind::Overwrite,
            epochs,
            lr: None,
            seed: None,
            fresh_data: false,
            new_trigger: Some(new_trigger),
            new_watermark: Some(new_watermark),
        }
    }

    /// Stable name used for checkpoint files and report columns:
    /// `ftune1`, `ftune5`, `overwrite`.
    pub fn name(&self) -> String {
        match self.kind {
            AttackKind::Ftune => format!("ftune{}", self.epochs),
            AttackKind::Overwrite => "overwrite".into(),
        }
    }

    /// Validate fields; `original_trigger` enforces the "different trigger"
    /// requirement for overwrites.
    pub fn validate(&self, original_trigger: Option<&TriggerSpec>) -> Result<()> {
        match self.kind {
            AttackKind::Ftune => {
                if self.new_trigger.is_some() || self.new_watermark.is_some() {
                    return Err(Error::InvalidConfig(
                        "ftune attacks do not take a new trigger/watermark".into(),
                    ));
                }
            }
            AttackKind::Overwrite => {
                if self.epochs == 0 {
                    return Err(Error::InvalidConfig("overwrite needs epochs > 0".into()));
                }
                let new_trigger = self.new_trigger.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("overwrite needs new_trigger".into())
                })?;
                new_trigger.validate()?;
                self.new_watermark
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("overwrite needs new_watermark".into()))?
                    .validate()?;
                if let Some(original) = original_trigger {
                    // ignore the bound secret hash when comparing steg specs
                    let mut a = new_trigger.clone();
                    let mut b = original.clone();
                    a.secret_hash = None;
                    b.secret_hash = None;
                    if a == b {
                        return Err(Error::InvalidConfig(
                            "overwrite trigger must differ from the embedded trigger".into(),
                        ));
                    }
                }
            }
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0) {
                return Err(Error::InvalidConfig("attack lr must be > 0".into()));
            }
        }
        Ok(())
    }

    fn resolved_cfg(&self, base: &TrainConfig, salt: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.max(1),
            lr: self.lr.unwrap_or(base.lr),
            seed: Some(self.seed.unwrap_or_else(|| {
                base.seed.unwrap_or(0) ^ salt
            })),
            ..base.clone()
        }
    }
}

/// Continue task-only training on clean data; returns the attacked model.
/// Zero epochs is the identity attack.
pub fn attack_finetune(
    watermarked: &Unet<f32>,
    data: &DataSet,
    data_source: &DataSourceSpec,
    spec: &AttackSpec,
    base_cfg: &TrainConfig,
) -> Result<(Unet<f32>, History)> {
    if spec.kind != AttackKind::Ftune {
        return Err(Error::InvalidArgument("attack_finetune needs a ftune spec".into()));
    }
    spec.validate(None)?;
    let mut model = watermarked.clone();
    if spec.epochs == 0 {
        return Ok((model, History::default()));
    }
    let cfg = spec.resolved_cfg(base_cfg, 0x00f1_40e5 + spec.epochs as u64);
    if spec.fresh_data {
        let fresh = data_source.derive_fresh()?;
        let fresh_data = fresh.load(std::path::Path::new("."))?;
        let history = train_plain(&mut model, &fresh_data, &cfg)?;
        Ok((model, history))
    } else {
        let history = train_plain(&mut model, data, &cfg)?;
        Ok((model, history))
    }
}

/// Re-run the embedding procedure with a new trigger-response pair on the
/// clean data. Returns the attacked model, the new pair's dataset (whose
/// manifest verifies the new watermark), and the training history.
pub fn attack_overwrite(
    watermarked: &Unet<f32>,
    data: &DataSet,
    data_source: &DataSourceSpec,
    spec: &AttackSpec,
    base_cfg: &TrainConfig,
    original_trigger: &TriggerSpec,
    auth_n: usize,
    secret: Option<crate::image::Image>,
    reference: Option<crate::image::Image>,
) -> Result<(Unet<f32>, PoisonedDataset, History)> {
    if spec.kind != AttackKind::Overwrite {
        return Err(Error::InvalidArgument(
            "attack_overwrite needs an overwrite spec".into(),
        ));
    }
    spec.validate(Some(original_trigger))?;
    let new_trigger = spec.new_trigger.clone().unwrap();
    let new_watermark = spec.new_watermark.clone().unwrap();
    let cfg = spec.resolved_cfg(base_cfg, 0x0f7e_3011);
    let auth_seed = cfg.seed.unwrap_or(0) ^ 0x5eed_a001;
    let ds = PoisonedDataset::build(
        data.clone(),
        data_source.clone(),
        new_trigger,
        new_watermark,
        auth_n,
        auth_seed,
        secret,
        None,
        reference,
    )?;
    let mut model = watermarked.clone();
    let history = match model.desc.task {
        Task::Reconstruction => train_immediate(&mut model, &ds, &cfg)?,
        Task::Segmentation => train_downstream(&mut model, &ds, &cfg)?,
    };
    Ok((model, ds, history))
}
